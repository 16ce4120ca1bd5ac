import logging
from typing import Optional, Sequence

import attrs
import numpy as np
import pandas as pd

from ..catalog import Catalog
from ..errors import ValidationException
from ..parameters import ParameterSet

log = logging.getLogger(__name__)


def positive(instance, attribute, value):
    if not value > 0:
        raise ValidationException(f"{attribute.name} must be positive, got {value}")


def at_least(minimum):
    def check(instance, attribute, value):
        if value < minimum:
            raise ValidationException(f"{attribute.name} must be at least {minimum}, got {value}")
    return check


def share(instance, attribute, value):
    if not 0 <= value <= 1:
        raise ValidationException(f"{attribute.name} must lie in [0, 1], got {value}")


@attrs.frozen
class CalibrationConfig:
    delta_rel: float = attrs.field(default=0.26, converter=float, validator=positive)
    delta_abs: float = attrs.field(default=1000.0, converter=float, validator=positive)
    delta_dev: float = attrs.field(default=0.32, converter=float, validator=positive)
    min_window_years: int = attrs.field(default=5, converter=int, validator=at_least(1))
    first_event_year: int = attrs.field(default=1997, converter=int)
    last_event_year: int = attrs.field(default=2015, converter=int)
    base_year: int = attrs.field(default=1992, converter=int)
    n_permutations: int = attrs.field(default=1000, converter=int, validator=at_least(100))
    alpha_sig: float = attrs.field(default=0.05, converter=float, validator=positive)
    rng_seed: Optional[int] = None
    share_floor: float = attrs.field(default=1e-3, converter=float, validator=at_least(0))
    import_floor: float = attrs.field(default=1e-3, converter=float, validator=share)
    stability_split_year: int = attrs.field(default=2006, converter=int)
    stability_edge_years: int = attrs.field(default=3, converter=int, validator=at_least(1))

    def __attrs_post_init__(self):
        if self.first_event_year > self.last_event_year:
            raise ValidationException(
                f"first_event_year {self.first_event_year} is after last_event_year {self.last_event_year}")
        if self.alpha_sig >= 1:
            raise ValidationException(f"alpha_sig must be below 1, got {self.alpha_sig}")

    def evolve(self, **changes) -> "CalibrationConfig":
        return attrs.evolve(self, **changes)


@attrs.frozen
class Event:
    area: int
    item: int
    year: int
    loss: float
    drop: float = 0.0

    def label(self, catalog: Catalog) -> str:
        return f"{catalog.areas.codes[self.area]}:{catalog.items.codes[self.item]}@{self.year}"


def availability_series(yearly: Sequence[ParameterSet]) -> tuple[list[int], np.ndarray]:
    """
    Stacks the available amounts of a yearly series.
    :return: the years and a (year x sector) array
    """
    years = [params.year for params in yearly]
    if years != sorted(years) or len(set(years)) != len(years):
        raise ValidationException(f"yearly parameters must be strictly ordered by year, got {years}")
    return years, np.vstack([params.x0 for params in yearly])


def _window_cv(series: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Population coefficient of variation per column over the rows selected by ``mask``.
    :return: (cv, count); cv is inf where the window mean is not positive
    """
    count = mask.sum(axis=0)
    safe = np.where(count > 0, count, 1)
    mean = np.where(mask, series, 0.0).sum(axis=0) / safe
    spread = np.where(mask, series - mean, 0.0)
    std = np.sqrt((spread ** 2).sum(axis=0) / safe)
    valid = (count > 0) & (mean > 0)
    cv = np.where(valid, std / np.where(valid, mean, 1.0), np.inf)
    return cv, count


def detect_events(availability: np.ndarray, years: Sequence[int], config: CalibrationConfig,
                  n_items: Optional[int] = None) -> list[Event]:
    """
    Finds at most one loss event per sector.

    The candidate year is the largest relative year-on-year decrease inside the configured event window (earliest
    year on ties). A candidate becomes an event when the relative and absolute drops exceed their thresholds and the
    series is stable (coefficient of variation below ``delta_dev``) both strictly before and strictly after it.
    :param availability: (year x sector) available amounts after growth normalization
    :param years: calendar years of the rows
    :param config:
    :param n_items: items per area, used to split sector indices; defaults to treating every column as an area
    :return: events ordered by sector
    """
    series = np.asarray(availability, dtype=float)
    years = np.asarray(years)
    n_years, n_sectors = series.shape
    if n_years != len(years):
        raise ValidationException(f"{len(years)} years given for {n_years} availability rows")
    if n_items is None:
        n_items = 1
    if n_years < 2:
        return []

    previous = series[:-1]
    current = series[1:]
    in_window = (years[1:] >= config.first_event_year) & (years[1:] <= config.last_event_year)
    defined = previous > 0
    undefined = in_window[:, None] & ~defined & (current != previous)
    if undefined.any():
        log.debug(f"skipped {np.count_nonzero(undefined)} year-on-year changes with a zero predecessor")

    relative = np.full(previous.shape, -np.inf)
    np.divide(previous - current, previous, out=relative, where=defined)
    relative[~in_window, :] = -np.inf
    candidate = np.argmax(relative, axis=0)
    columns = np.arange(n_sectors)
    best = relative[candidate, columns]
    event_row = candidate + 1

    drop = series[candidate, columns] - series[event_row, columns]
    rows = np.arange(n_years)[:, None]
    before, before_count = _window_cv(series, rows < event_row[None, :])
    after, after_count = _window_cv(series, rows > event_row[None, :])

    accepted = (
            np.isfinite(best)
            & (best > 0)
            & (best > config.delta_rel)
            & (drop > config.delta_abs)
            & (before_count >= config.min_window_years)
            & (after_count >= config.min_window_years)
            & (before < config.delta_dev)
            & (after < config.delta_dev)
    )

    events = []
    for sector in np.flatnonzero(accepted):
        area, item = divmod(int(sector), n_items)
        events.append(Event(area, item, int(years[event_row[sector]]), float(best[sector]), float(drop[sector])))
    log.info(f"Detected {len(events)} events in {n_sectors} sectors")
    return events


def events_frame(events: Sequence[Event], catalog: Catalog) -> pd.DataFrame:
    return pd.DataFrame({
        "area": [catalog.areas.codes[event.area] for event in events],
        "item": [catalog.items.codes[event.item] for event in events],
        "year": [event.year for event in events],
        "loss": [event.loss for event in events],
    }, columns=["area", "item", "year", "loss"])
