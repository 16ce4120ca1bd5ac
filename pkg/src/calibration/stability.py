import logging
from typing import Iterable, Sequence

import attrs
import numpy as np
import pandas as pd

from ..catalog import Catalog
from ..errors import DataException
from ..parameters import ParameterSet
from .events import CalibrationConfig
from .fit import CalibrationResult, fit_rules
from .rules import RuleFamily

log = logging.getLogger(__name__)

DEFAULT_SWEEP = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
SUBSTITUTION = "substitution"


def matthews_correlation(first: np.ndarray, second: np.ndarray) -> float:
    """
    Matthews correlation between two presence vectors. Identical vectors score 1, a degenerate confusion table that
    is not identical scores 0.
    """
    first = np.asarray(first, dtype=bool).ravel()
    second = np.asarray(second, dtype=bool).ravel()
    if np.array_equal(first, second):
        return 1.0
    tp = float(np.count_nonzero(first & second))
    tn = float(np.count_nonzero(~first & ~second))
    fp = float(np.count_nonzero(~first & second))
    fn = float(np.count_nonzero(first & ~second))
    denominator = np.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if denominator == 0:
        return 0.0
    return float((tp * tn - fp * fn) / denominator)


@attrs.frozen(eq=False)
class StabilityReport:
    split_year: int
    mcc: dict[str, float]
    events_first: int
    events_second: int
    delta_rel: float
    delta_dev: float

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "family": list(self.mcc),
            "mcc": list(self.mcc.values()),
            "events_first": self.events_first,
            "events_second": self.events_second,
            "split_year": self.split_year,
            "delta_rel": self.delta_rel,
            "delta_dev": self.delta_dev,
        })


def split_halves(yearly: Sequence[ParameterSet], config: CalibrationConfig) -> tuple[list[ParameterSet], list[ParameterSet]]:
    split = config.stability_split_year
    minimum = 2 * config.stability_edge_years + 1
    first = [params for params in yearly if params.year <= split]
    second = [params for params in yearly if params.year >= split]
    if len(first) < minimum or len(second) < minimum:
        raise DataException(
            f"stability analysis needs at least {minimum} years up to and from {split}, "
            f"got {len(first)} and {len(second)}"
        )
    return first, second


def _fit_half(half: list[ParameterSet], catalog: Catalog, config: CalibrationConfig) -> CalibrationResult:
    edge = config.stability_edge_years
    half_config = config.evolve(
        first_event_year=half[0].year + edge,
        last_event_year=half[-1].year - edge,
        min_window_years=edge,
    )
    return fit_rules(half, catalog, half_config)


def stability_analysis(normalized: Sequence[ParameterSet], catalog: Catalog,
                       config: CalibrationConfig) -> StabilityReport:
    """
    Fits rules independently on the two halves of the series and compares which rules exist in both.
    :param normalized: growth-normalized yearly parameters
    :param catalog:
    :param config:
    :return:
    """
    first_half, second_half = split_halves(normalized, config)
    first = _fit_half(first_half, catalog, config)
    second = _fit_half(second_half, catalog, config)

    mcc = {
        family.value: matthews_correlation(first.rules.presence(family), second.rules.presence(family))
        for family in RuleFamily
    }
    pairs = catalog.group_matrix()
    mcc[SUBSTITUTION] = matthews_correlation(
        first.rules.substitution[pairs] > 0, second.rules.substitution[pairs] > 0)
    log.info(
        f"Stability at delta_rel={config.delta_rel:g}, delta_dev={config.delta_dev:g}: "
        + ", ".join(f"{family} {value:.3f}" for family, value in mcc.items())
    )
    return StabilityReport(
        split_year=config.stability_split_year,
        mcc=mcc,
        events_first=len(first.events),
        events_second=len(second.events),
        delta_rel=config.delta_rel,
        delta_dev=config.delta_dev,
    )


def stability_sweep(normalized: Sequence[ParameterSet], catalog: Catalog, config: CalibrationConfig,
                    grid: Iterable[float] = DEFAULT_SWEEP) -> pd.DataFrame:
    """
    Repeats the stability analysis while varying one event threshold at a time, the other held at its configured
    value.
    :return: one row per (varied threshold, value, family)
    """
    grid = list(grid)
    split_halves(normalized, config)
    frames = []
    for varied in ("delta_rel", "delta_dev"):
        for value in grid:
            report = stability_analysis(normalized, catalog, config.evolve(**{varied: value}))
            frame = report.frame()
            frame.insert(0, "varied", varied)
            frames.append(frame)
    return pd.concat(frames, ignore_index=True)
