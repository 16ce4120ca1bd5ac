import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from ..catalog import Catalog
from ..errors import ValidationException
from .losses import LossReport, _scope

log = logging.getLogger(__name__)

LOW_THRESHOLD = 0.6
HIGH_THRESHOLD = 0.8
NO_VALUE = "no value"
BANDS = (f"< {LOW_THRESHOLD}", f"{LOW_THRESHOLD} - {HIGH_THRESHOLD}", f"> {HIGH_THRESHOLD}", NO_VALUE)

GROUP_COLUMNS = ["grouping", "group", "areas", "mean_change"]


def hdi_band(value: Optional[float]) -> str:
    if value is None or np.isnan(value):
        return NO_VALUE
    if value < LOW_THRESHOLD:
        return BANDS[0]
    if value <= HIGH_THRESHOLD:
        return BANDS[1]
    return BANDS[2]


def area_changes(static: LossReport, adaptive: LossReport, catalog: Catalog,
                 items: Optional[Sequence[int]] = None, exclude_origins: bool = True) -> pd.DataFrame:
    """
    Relative change of each area's loss on the item scope when adaptation is enabled, (adaptive - static) / static.
    Areas with no static loss are left out, as are the shocked areas when ``exclude_origins`` is set.
    """
    if static.shape != adaptive.shape:
        raise ValidationException("static and adaptive loss reports differ in shape")
    items = _scope(items, static.shape[1], "item")
    static_loss = static.absolute[:, items].sum(axis=1)
    adaptive_loss = adaptive.absolute[:, items].sum(axis=1)

    keep = np.isfinite(static_loss) & (static_loss != 0)
    if exclude_origins:
        origins = static.origins().any(axis=1) | adaptive.origins().any(axis=1)
        keep &= ~origins
    dropped = int(np.count_nonzero(static_loss == 0))
    if dropped:
        log.debug(f"{dropped} areas without static loss left out of HDI comparison")

    records = []
    for area in np.flatnonzero(keep):
        code = catalog.areas.codes[area]
        entry = catalog.hdi[code]
        records.append({
            "area": code,
            "category": entry.category,
            "hdi": entry.value,
            "band": hdi_band(entry.value),
            "L_static": static_loss[area],
            "L_adaptive": adaptive_loss[area],
            "change": (adaptive_loss[area] - static_loss[area]) / static_loss[area],
        })
    columns = ["area", "category", "hdi", "band", "L_static", "L_adaptive", "change"]
    return pd.DataFrame(records, columns=columns)


def hdi_group_losses(static: LossReport, adaptive: LossReport, catalog: Catalog,
                     items: Optional[Sequence[int]] = None, exclude_origins: bool = True) -> pd.DataFrame:
    """
    Mean relative loss change per HDI band and per HDI category.
    :param static: losses without adaptation
    :param adaptive: losses of the same shock with adaptation
    :param catalog:
    :param items: item scope, all items when None
    :param exclude_origins: leave the shocked areas out
    :return: one row per (grouping, group); bands are always listed, empty ones with a NaN mean
    """
    changes = area_changes(static, adaptive, catalog, items, exclude_origins)
    records = []
    for band in BANDS:
        selected = changes.loc[changes["band"] == band, "change"]
        records.append({
            "grouping": "band",
            "group": band,
            "areas": len(selected),
            "mean_change": float(selected.mean()) if len(selected) else np.nan,
        })
    for category, selected in changes.groupby("category", sort=True)["change"]:
        records.append({
            "grouping": "category",
            "group": category,
            "areas": len(selected),
            "mean_change": float(selected.mean()),
        })
    return pd.DataFrame(records, columns=GROUP_COLUMNS)
