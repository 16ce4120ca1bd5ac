import logging
from typing import Optional, Sequence

import attrs
import numpy as np
import pandas as pd

from ..catalog import Catalog
from ..errors import DataException, ValidationException
from ..simulator import ShockSpec, Trajectory

log = logging.getLogger(__name__)

# tonnes -> kg and 1000 heads -> heads
PER_CAPITA_FACTOR = 1000.0


@attrs.frozen(eq=False)
class LossReport:
    """
    Final-step shortfall against the baseline per (area, item). ``absolute`` is in data units, ``per_capita`` in
    kg (or heads) per person; negative values are net gains.
    """
    absolute: np.ndarray
    per_capita: np.ndarray
    populations: np.ndarray
    name: str = ""
    shock: Optional[ShockSpec] = None
    adaptive: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.absolute.shape

    def origins(self) -> np.ndarray:
        """
        Boolean (area x item) mask of the shocked sectors.
        """
        mask = np.zeros(self.shape, dtype=bool)
        if self.shock is not None:
            for target in self.shock.targets:
                mask[target.area, target.item] = True
        return mask

    def frame(self, catalog: Catalog, column: str = "L") -> pd.DataFrame:
        areas, items = np.indices(self.shape)
        return pd.DataFrame({
            "area": np.asarray(catalog.areas.codes, dtype=object)[areas.ravel()],
            "item": np.asarray(catalog.items.codes, dtype=object)[items.ravel()],
            "unit": [catalog.unit_of(item).per_capita_label for item in items.ravel()],
            column: self.per_capita.ravel(),
        })


def loss_per_capita(baseline: Trajectory, shocked: Trajectory, catalog: Catalog, name: str = "",
                    shock: Optional[ShockSpec] = None, adaptive: bool = False) -> LossReport:
    """
    Per-capita loss of every sector at the final step.
    :param baseline:
    :param shocked:
    :param catalog: supplies the recipient populations
    :return:
    """
    if baseline.x.shape != shocked.x.shape:
        raise ValidationException(f"trajectory shapes differ: {baseline.x.shape} and {shocked.x.shape}")
    populations = catalog.population_vector()
    missing = np.flatnonzero(np.isnan(populations))
    if missing.size:
        raise DataException(f"no population for area {catalog.areas.codes[missing[0]]!r}")
    absolute = (baseline.final() - shocked.final()).reshape(catalog.n_areas, catalog.n_items)
    per_capita = absolute * PER_CAPITA_FACTOR / populations[:, None]
    return LossReport(absolute, per_capita, populations, name, shock, adaptive)


def _scope(values: Optional[Sequence[int]], size: int, kind: str) -> np.ndarray:
    if values is None:
        return np.arange(size)
    values = np.asarray(list(values), dtype=np.int64)
    if not values.size:
        raise ValidationException(f"{kind} scope is empty")
    if np.any((values < 0) | (values >= size)):
        raise ValidationException(f"{kind} scope is outside the catalog")
    return values


def aggregate_loss(report: LossReport, areas: Optional[Sequence[int]] = None,
                   items: Optional[Sequence[int]] = None) -> float:
    """
    Per-capita loss of a region on a set of items: the summed shortfall divided by the region's population.
    :param report:
    :param areas: area indices, all areas when None
    :param items: item indices, all items when None
    :return:
    """
    n_areas, n_items = report.shape
    areas = _scope(areas, n_areas, "area")
    items = _scope(items, n_items, "item")
    shortfall = report.absolute[np.ix_(areas, items)].sum()
    return float(shortfall * PER_CAPITA_FACTOR / report.populations[areas].sum())


def combined_losses(static: LossReport, adaptive: LossReport, catalog: Catalog) -> pd.DataFrame:
    frame = static.frame(catalog, "L_static")
    frame["L_adaptive"] = adaptive.per_capita.ravel()
    return frame[["area", "item", "unit", "L_static", "L_adaptive"]]
