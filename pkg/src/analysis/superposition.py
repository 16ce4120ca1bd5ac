import logging
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import attrs
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import ttest_1samp

from ..calibration.rules import AdaptationRuleSet
from ..catalog import UNGROUPED, Catalog
from ..errors import ScenarioException, ValidationException
from ..parameters import ParameterSet
from ..pubsub import ProgressEvent, Publisher
from ..simulator import ShockSpec, SimulationConfig, Trajectory, run_baseline, run_scenario
from .losses import PER_CAPITA_FACTOR, LossReport, aggregate_loss, loss_per_capita

log = logging.getLogger(__name__)

NEUTRAL_TOLERANCE = 1e-9
NEUTRAL_FLOOR = 1e-12
DEFAULT_POOL_SIZE = 100


class Additivity(Enum):
    SUPER = "super-additive"
    SUB = "sub-additive"
    NEUTRAL = "neutral"


def superposition_impact(combined: LossReport, first: LossReport, second: LossReport,
                         areas: Optional[Sequence[int]] = None, items: Optional[Sequence[int]] = None) -> float:
    """
    Loss of the combined shock minus the summed losses of the two single shocks, on the scope (areas, items).
    Positive values are super-additive.
    """
    for report in (first, second):
        if report.shape != combined.shape or not np.array_equal(report.populations, combined.populations):
            raise ValidationException("loss reports cover different scopes")
    return aggregate_loss(combined, areas, items) - (
            aggregate_loss(first, areas, items) + aggregate_loss(second, areas, items))


def classify(combined_loss: float, summed_loss: float) -> Additivity:
    impact = combined_loss - summed_loss
    tolerance = max(NEUTRAL_TOLERANCE * max(abs(combined_loss), abs(summed_loss)), NEUTRAL_FLOOR)
    if abs(impact) <= tolerance:
        return Additivity.NEUTRAL
    return Additivity.SUPER if impact > 0 else Additivity.SUB


@attrs.frozen
class SuperpositionSample:
    index: int
    first: int
    second: int
    si_items: float
    si_all: float
    class_items: str = Additivity.NEUTRAL.value
    class_all: str = Additivity.NEUTRAL.value


def _one_sided_p(values: np.ndarray) -> float:
    values = values[np.isfinite(values)]
    if len(values) < 2 or np.ptp(values) == 0:
        return float("nan")
    return float(ttest_1samp(values, 0.0, alternative="greater").pvalue)


@attrs.frozen(eq=False)
class SuperpositionReport:
    samples: tuple[SuperpositionSample, ...]
    denominator: float

    @property
    def si_items(self) -> np.ndarray:
        return np.array([sample.si_items for sample in self.samples], dtype=float)

    @property
    def si_all(self) -> np.ndarray:
        return np.array([sample.si_all for sample in self.samples], dtype=float)

    def summary(self) -> dict:
        mean_all = float(self.si_all.mean()) if self.samples else float("nan")
        return {
            "samples": len(self.samples),
            "mean_si_items": float(self.si_items.mean()) if self.samples else float("nan"),
            "mean_si_all": mean_all,
            "p_value_items": _one_sided_p(self.si_items),
            "p_value_all": _one_sided_p(self.si_all),
            "denominator_per_capita": self.denominator,
            "relative_mean_si_all": mean_all / self.denominator if self.denominator > 0 else float("nan"),
        }

    def frame(self, catalog: Catalog) -> pd.DataFrame:
        records = []
        for sample in self.samples:
            first_area, first_item = catalog.sector(sample.first)
            second_area, second_item = catalog.sector(sample.second)
            records.append({
                "sample": sample.index,
                "area_1": catalog.areas.codes[first_area],
                "item_1": catalog.items.codes[first_item],
                "area_2": catalog.areas.codes[second_area],
                "item_2": catalog.items.codes[second_item],
                "SI_items": sample.si_items,
                "SI_all": sample.si_all,
                "SI_items_relative": sample.si_items / self.denominator if self.denominator > 0 else np.nan,
                "SI_all_relative": sample.si_all / self.denominator if self.denominator > 0 else np.nan,
                "class_items": sample.class_items,
                "class_all": sample.class_all,
            })
        columns = ["sample", "area_1", "item_1", "area_2", "item_2", "SI_items", "SI_all", "SI_items_relative",
                   "SI_all_relative", "class_items", "class_all"]
        return pd.DataFrame(records, columns=columns)


def primary_pool(params: ParameterSet, size: int = DEFAULT_POOL_SIZE) -> np.ndarray:
    """
    Exporting sectors with inputless output, largest output first.
    """
    production = np.asarray(params.beta.sum(axis=1)).ravel()
    exports = params.eta_exp * params.x0
    eligible = np.flatnonzero((production > 0) & (exports > 0))
    order = np.argsort(-production[eligible], kind="stable")
    return eligible[order][:size]


def draw_pairs(pool: np.ndarray, catalog: Catalog, n_samples: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """
    Draws ``n_samples`` pairs of distinct pool sectors whose items share a commodity group (or are the same item).
    Pairs may repeat across samples.
    """
    if len(pool) < 2:
        raise ScenarioException(f"the shock pool holds {len(pool)} sectors, at least 2 are needed")
    items = pool % catalog.n_items
    groups = np.array([catalog.group_of(int(item)) for item in items], dtype=object)
    partners = []
    for index, item in enumerate(items):
        same = (items == item) | ((groups == groups[index]) & (groups != UNGROUPED))
        same[index] = False
        partners.append(np.flatnonzero(same))
    eligible = np.array([index for index, found in enumerate(partners) if found.size], dtype=np.int64)
    if not eligible.size:
        raise ScenarioException("no two pool sectors share a commodity group")

    pairs = []
    for _ in range(n_samples):
        first = eligible[rng.integers(eligible.size)]
        second = partners[first][rng.integers(partners[first].size)]
        pairs.append((int(pool[first]), int(pool[second])))
    return pairs


def simulate_pair(params: ParameterSet, rules: Optional[AdaptationRuleSet], baseline: Trajectory,
                  config: SimulationConfig, catalog: Catalog, first: int, second: int) -> tuple[LossReport, ...]:
    """
    Runs both single shocks and their combination with ``phi = 1``.
    :return: loss reports of the combined, first and second run
    """
    first_shock = ShockSpec.single(*catalog.sector(first))
    second_shock = ShockSpec.single(*catalog.sector(second))
    reports = []
    for shock in (first_shock.combine(second_shock), first_shock, second_shock):
        trajectory = run_scenario(params, shock, rules, baseline, config)
        reports.append(loss_per_capita(baseline, trajectory, catalog, shock=shock, adaptive=config.adaptive))
    return tuple(reports)


def _evaluate_pair(params: ParameterSet, rules: Optional[AdaptationRuleSet], baseline: Trajectory,
                   config: SimulationConfig, catalog: Catalog, index: int, first: int,
                   second: int) -> SuperpositionSample:
    combined, single_first, single_second = simulate_pair(params, rules, baseline, config, catalog, first, second)
    shocked_items = sorted({first % catalog.n_items, second % catalog.n_items})
    values = {}
    for scope, items in (("items", shocked_items), ("all", None)):
        combined_loss = aggregate_loss(combined, None, items)
        summed_loss = aggregate_loss(single_first, None, items) + aggregate_loss(single_second, None, items)
        values[scope] = (combined_loss - summed_loss, classify(combined_loss, summed_loss).value)
    return SuperpositionSample(index, first, second, values["items"][0], values["all"][0], values["items"][1],
                               values["all"][1])


def sample_combined_shocks(
        params: ParameterSet,
        rules: Optional[AdaptationRuleSet],
        catalog: Catalog,
        config: SimulationConfig,
        n_samples: int,
        seed: Optional[int],
        pool_size: int = DEFAULT_POOL_SIZE,
        threads: int = 1,
        pairs: Optional[Sequence[tuple[int, int]]] = None,
        known: Optional[Mapping[int, SuperpositionSample]] = None,
        publisher: Optional[Publisher] = None,
        on_sample: Optional[Callable[[SuperpositionSample], None]] = None,
) -> SuperpositionReport:
    """
    Superposition impacts of randomly drawn same-group pairs of large exporting primary sectors.

    Pairs are drawn up front from ``seed``, so results do not depend on ``threads``; samples listed in ``known``
    are reused instead of simulated again.
    :param params:
    :param rules: adaptation rules, unused for static configurations
    :param catalog:
    :param config:
    :param n_samples:
    :param seed:
    :param pool_size: number of largest primary sectors eligible for shocks
    :param threads: joblib worker count
    :param pairs: explicit (first sector, second sector) pairs, bypasses sampling
    :param known: previously computed samples by index
    :param publisher: receives a ProgressEvent per finished pair
    :param on_sample: called with every newly computed sample
    :return:
    """
    if pairs is None:
        pool = primary_pool(params, pool_size)
        pairs = draw_pairs(pool, catalog, n_samples, np.random.default_rng(seed))
    pairs = list(pairs)
    for first, second in pairs:
        if first == second:
            raise ScenarioException("a shock pair must name two different sectors")

    baseline = run_baseline(params, config.static())
    results = dict(known or {})
    pending = [(index, pair) for index, pair in enumerate(pairs) if index not in results]
    if len(pending) < len(pairs):
        log.info(f"Reusing {len(pairs) - len(pending)} stored superposition samples")

    tasks = (delayed(_evaluate_pair)(params, rules, baseline, config, catalog, index, first, second)
             for index, (first, second) in pending)
    done = len(pairs) - len(pending)
    for sample in Parallel(n_jobs=threads, return_as="generator")(tasks):
        results[sample.index] = sample
        done += 1
        if on_sample is not None:
            on_sample(sample)
        if publisher is not None:
            publisher.publish(ProgressEvent("superposition", done, len(pairs)))

    populations = catalog.population_vector()
    denominator = float(baseline.final().sum() * PER_CAPITA_FACTOR / np.nansum(populations))
    samples = tuple(results[index] for index in range(len(pairs)))
    return SuperpositionReport(samples, denominator)
