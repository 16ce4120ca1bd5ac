import logging
import warnings
from typing import Sequence

import attrs
import numpy as np
import pandas as pd

from ..calibration.events import CalibrationConfig, Event, availability_series, detect_events
from ..calibration.growth import normalize_growth, normalize_to_year
from ..calibration.rules import AdaptationRuleSet
from ..catalog import Catalog
from ..errors import MissingYearsException, ValidationException
from ..parameters import ParameterSet
from ..simulator import ShockSpec, ShockTarget, SimulationConfig, run_baseline, run_scenario
from .losses import PER_CAPITA_FACTOR

log = logging.getLogger(__name__)

SERIES = ("benchmark", "baseline", "static", "adaptive")
STAT_COLUMNS = ["series", "area", "item", "share_mean", "share_std", "per_capita_mean", "per_capita_std"]


@attrs.frozen(eq=False)
class ReconciliationResult:
    first_year: int
    last_year: int
    events: list[Event]
    series: dict[str, np.ndarray]
    statistics: pd.DataFrame

    def summary(self) -> pd.DataFrame:
        """
        Distribution-level comparison: mean and median of the per-sector statistics of every series.
        """
        grouped = self.statistics.groupby("series", sort=False)[["share_std", "per_capita_std"]]
        summary = grouped.agg(["mean", "median"])
        summary.columns = [f"{column}_{stat}" for column, stat in summary.columns]
        return summary.reindex(list(SERIES)).reset_index()


def market_share(series: np.ndarray, n_areas: int, n_items: int) -> np.ndarray:
    """
    Share of every area in the global amount of each item, per step. NaN where an item has no amount at all.
    """
    cube = series.reshape(series.shape[0], n_areas, n_items)
    totals = cube.sum(axis=1, keepdims=True)
    shares = np.full(cube.shape, np.nan)
    np.divide(cube, totals, out=shares, where=np.broadcast_to(totals > 0, cube.shape))
    return shares.reshape(series.shape)


def sector_statistics(name: str, series: np.ndarray, catalog: Catalog) -> pd.DataFrame:
    shares = market_share(series, catalog.n_areas, catalog.n_items)
    populations = np.repeat(catalog.population_vector(), catalog.n_items)
    per_capita = series * PER_CAPITA_FACTOR / populations[None, :]
    # items absent for a whole series have no share
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        share_mean = np.nanmean(shares, axis=0)
        share_std = np.nanstd(shares, axis=0)
    sectors = np.arange(series.shape[1])
    areas, items = np.divmod(sectors, catalog.n_items)
    return pd.DataFrame({
        "series": name,
        "area": np.asarray(catalog.areas.codes, dtype=object)[areas],
        "item": np.asarray(catalog.items.codes, dtype=object)[items],
        "share_mean": share_mean,
        "share_std": share_std,
        "per_capita_mean": per_capita.mean(axis=0),
        "per_capita_std": per_capita.std(axis=0),
    }, columns=STAT_COLUMNS)


def reconciliation_harness(
        yearly: Sequence[ParameterSet],
        rules: AdaptationRuleSet,
        catalog: Catalog,
        calibration: CalibrationConfig,
        simulation: SimulationConfig,
        first_year: int = 2011,
        last_year: int = 2020,
) -> ReconciliationResult:
    """
    Replays the events of ``first_year`` as fractional shocks on that year's parameters and compares the simulated
    distributions with the observed years up to ``last_year``.

    Events are detected on the growth-normalized series; each event sector loses the observed fraction of its
    output at every step. The horizon is ``last_year - first_year`` so each step lines up with one observed year.
    :param yearly: thresholded yearly parameters covering the base year and the benchmark years
    :param rules: rules fitted on years before ``first_year``
    :param catalog:
    :param calibration: event thresholds and base year
    :param simulation: trigger thresholds; ``tau`` and the adaptation switches are set here
    :param first_year:
    :param last_year:
    :return:
    """
    if last_year <= first_year:
        raise ValidationException(f"benchmark range {first_year}-{last_year} is empty")
    by_year = {params.year: params for params in yearly}
    missing = [year for year in range(first_year, last_year + 1) if year not in by_year]
    if missing:
        raise MissingYearsException(missing)

    normalized = normalize_growth(yearly, calibration.base_year)
    years, availability = availability_series(normalized)
    events = detect_events(availability, years, calibration.evolve(first_event_year=first_year,
                                                                   last_event_year=first_year),
                           n_items=catalog.n_items)
    log.info(f"Replaying {len(events)} events of {first_year}")
    shock = ShockSpec([ShockTarget(event.area, event.item, event.loss) for event in events])

    params = by_year[first_year]
    tau = last_year - first_year
    static_config = simulation.evolve(tau=tau, adaptation_enabled=False, substitution_enabled=False)
    adaptive_config = simulation.evolve(tau=tau, adaptation_enabled=True, substitution_enabled=True)
    baseline = run_baseline(params, static_config)
    static = run_scenario(params, shock, None, baseline, static_config)
    adaptive = run_scenario(params, shock, rules, baseline, adaptive_config)

    observed = np.vstack([by_year[year].x0 for year in range(first_year, last_year + 1)])
    series = {
        "benchmark": normalize_to_year(observed, 0),
        "baseline": baseline.x,
        "static": static.x,
        "adaptive": adaptive.x,
    }
    statistics = pd.concat([sector_statistics(name, values, catalog) for name, values in series.items()],
                           ignore_index=True)
    return ReconciliationResult(first_year, last_year, events, series, statistics)
