import logging
import os
from enum import Enum
from typing import Optional, Sequence

import attrs
import numpy as np
import pandas as pd

from ..catalog import Catalog
from ..errors import DataException, MissingYearsException, ValidationException
from ..parameters import FLOAT_FORMAT, ParameterSet
from ..utils import write_frame
from .events import Event

log = logging.getLogger(__name__)


class RuleFamily(Enum):
    ALPHA = "alpha"
    BETA = "beta"
    NU = "nu"
    ETA_EXP = "eta_exp"
    ETA_PROD = "eta_prod"
    TRADE_IMPORT = "trade_import"
    TRADE_EXPORT = "trade_export"

    @property
    def is_process(self) -> bool:
        return self in (RuleFamily.ALPHA, RuleFamily.BETA, RuleFamily.NU)

    @property
    def is_allocation(self) -> bool:
        return self in (RuleFamily.ETA_EXP, RuleFamily.ETA_PROD)

    @property
    def is_trade(self) -> bool:
        return self in (RuleFamily.TRADE_IMPORT, RuleFamily.TRADE_EXPORT)


COMPONENT_COLUMNS = ["family", "event", "area", "item", "year", "loss", "row", "col", "v_before", "v_after", "w", "r"]
RULE_COLUMNS = ["family", "row", "col", "W", "R", "n_w", "n_r"]


def _components(family: RuleFamily, index: int, event: Event, rows, cols, before, after) -> Optional[pd.DataFrame]:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    before = np.asarray(before, dtype=float)
    after = np.asarray(after, dtype=float)
    keep = (before > 0) | (after > 0)
    if not keep.any():
        return None
    rows, cols, before, after = rows[keep], cols[keep], before[keep], after[keep]
    weighted = before > 0
    w = np.where(weighted, after / np.where(weighted, before, 1.0) / event.loss, 0.0)
    r = np.where(weighted, 0.0, after / event.loss)
    return pd.DataFrame({
        "family": family.value,
        "event": index,
        "area": event.area,
        "item": event.item,
        "year": event.year,
        "loss": event.loss,
        "row": rows,
        "col": cols,
        "v_before": before,
        "v_after": after,
        "w": w,
        "r": r,
    })


def derive_rule_components(events: Sequence[Event], yearly: Sequence[ParameterSet]) -> pd.DataFrame:
    """
    Splits the change of every event-linked parameter entry between the event year and the following year into a
    weight component ``w`` (entry existed) and a rewiring component ``r`` (entry was zero).

    Keys: process families use (item, process), allocation families (item, 0), trade imports (event area,
    exporter) and trade exports (importer, event area).
    :param events:
    :param yearly: parameter sets covering every event year and the year after it
    :return: one row per component
    """
    by_year = {params.year: params for params in yearly}
    missing = sorted({year for event in events for year in (event.year, event.year + 1) if year not in by_year})
    if missing:
        raise MissingYearsException(missing)

    columns = {}
    frames = []
    for index, event in enumerate(events):
        before, after = by_year[event.year], by_year[event.year + 1]
        n_items, n_areas = before.n_items, before.n_areas
        sector = event.area * n_items + event.item
        processes = np.arange(before.n_processes)

        for family, name in ((RuleFamily.ALPHA, "alpha"), (RuleFamily.BETA, "beta"), (RuleFamily.NU, "nu")):
            frames.append(_components(
                family, index, event,
                np.full(before.n_processes, event.item), processes,
                getattr(before, name)[sector].toarray().ravel(),
                getattr(after, name)[sector].toarray().ravel(),
            ))
        frames.append(_components(RuleFamily.ETA_EXP, index, event, [event.item], [0],
                                  [before.eta_exp[sector]], [after.eta_exp[sector]]))
        frames.append(_components(RuleFamily.ETA_PROD, index, event, [event.item], [0],
                                  [before.eta_prod[sector]], [after.eta_prod[sector]]))

        partners = np.arange(n_areas)
        frames.append(_components(
            RuleFamily.TRADE_IMPORT, index, event,
            np.full(n_areas, event.area), partners,
            before.trade.matrix[sector, event.item::n_items].toarray().ravel(),
            after.trade.matrix[sector, event.item::n_items].toarray().ravel(),
        ))
        for params in (before, after):
            if params.year not in columns:
                columns[params.year] = params.trade.matrix.tocsc()
        frames.append(_components(
            RuleFamily.TRADE_EXPORT, index, event,
            partners, np.full(n_areas, event.area),
            columns[before.year][event.item::n_items, sector].toarray().ravel(),
            columns[after.year][event.item::n_items, sector].toarray().ravel(),
        ))

    frames = [frame for frame in frames if frame is not None]
    if not frames:
        return pd.DataFrame(columns=COMPONENT_COLUMNS)
    components = pd.concat(frames, ignore_index=True)
    log.info(f"Derived {len(components)} rule components from {len(events)} events")
    return components


@attrs.frozen(eq=False)
class AdaptationRuleSet:
    """
    Aggregated adaptation rules. ``weights`` and ``rewirings`` map every family to a dense array that is NaN where
    no rule was observed: (item x process) for process families, (item x 1) for allocation families and
    (importer x exporter) for trade families. ``substitution`` is the item x item substitutability matrix.
    """
    n_areas: int
    n_items: int
    n_processes: int
    weights: dict[RuleFamily, np.ndarray]
    rewirings: dict[RuleFamily, np.ndarray]
    substitution: np.ndarray
    table: pd.DataFrame = attrs.field(factory=lambda: pd.DataFrame(columns=RULE_COLUMNS))

    @staticmethod
    def family_shape(family: RuleFamily, n_areas: int, n_items: int, n_processes: int) -> tuple[int, int]:
        if family.is_process:
            return n_items, n_processes
        if family.is_allocation:
            return n_items, 1
        return n_areas, n_areas

    @classmethod
    def empty(cls, n_areas: int, n_items: int, n_processes: int) -> "AdaptationRuleSet":
        return cls.from_table(pd.DataFrame(columns=RULE_COLUMNS), n_areas, n_items, n_processes)

    @classmethod
    def from_table(cls, table: pd.DataFrame, n_areas: int, n_items: int, n_processes: int,
                   substitution: Optional[np.ndarray] = None) -> "AdaptationRuleSet":
        weights = {}
        rewirings = {}
        for family in RuleFamily:
            shape = cls.family_shape(family, n_areas, n_items, n_processes)
            weights[family] = np.full(shape, np.nan)
            rewirings[family] = np.full(shape, np.nan)
            rows = table[table["family"] == family.value]
            if rows.empty:
                continue
            row = rows["row"].to_numpy(dtype=np.int64)
            col = rows["col"].to_numpy(dtype=np.int64)
            weights[family][row, col] = rows["W"].to_numpy(dtype=float)
            rewirings[family][row, col] = rows["R"].to_numpy(dtype=float)
        if substitution is None:
            substitution = np.zeros((n_items, n_items))
        return cls(n_areas, n_items, n_processes, weights, rewirings, substitution, table.reset_index(drop=True))

    def with_substitution(self, substitution: np.ndarray) -> "AdaptationRuleSet":
        if substitution.shape != (self.n_items, self.n_items):
            raise ValidationException(f"substitution matrix has shape {substitution.shape}")
        return attrs.evolve(self, substitution=substitution)

    @property
    def is_empty(self) -> bool:
        no_rules = all(np.isnan(array).all() for array in (*self.weights.values(), *self.rewirings.values()))
        return no_rules and not np.any(self.substitution > 0)

    def presence(self, family: RuleFamily) -> np.ndarray:
        return ~np.isnan(self.weights[family]) | ~np.isnan(self.rewirings[family])

    def coverage(self) -> pd.DataFrame:
        """
        Number of multipliers and rewirers per family.
        """
        records = [{
            "family": family.value,
            "multipliers": int(np.count_nonzero(~np.isnan(self.weights[family]))),
            "rewirers": int(np.count_nonzero(~np.isnan(self.rewirings[family]))),
        } for family in RuleFamily]
        records.append({
            "family": "substitution",
            "multipliers": int(np.count_nonzero(self.substitution > 0)),
            "rewirers": 0,
        })
        return pd.DataFrame(records, columns=["family", "multipliers", "rewirers"])


def aggregate_rules(components: pd.DataFrame, n_areas: int, n_items: int, n_processes: int) -> AdaptationRuleSet:
    """
    Averages components into rules. Weights average only components that took the weight branch, rewirings only
    those that took the rewiring branch; both are keyed as in derive_rule_components and so broadcast over areas
    (process and allocation families) or over items (trade families).
    :param components: output of derive_rule_components
    :return:
    """
    if components.empty:
        return AdaptationRuleSet.empty(n_areas, n_items, n_processes)

    weighted = components["v_before"] > 0
    keys = ["family", "row", "col"]
    weights = components[weighted].groupby(keys).agg(W=("w", "mean"), n_w=("w", "size"))
    rewirings = components[~weighted].groupby(keys).agg(R=("r", "mean"), n_r=("r", "size"))
    table = weights.join(rewirings, how="outer").reset_index()
    table["n_w"] = table["n_w"].fillna(0).astype(int)
    table["n_r"] = table["n_r"].fillna(0).astype(int)
    table = table.sort_values(keys, kind="mergesort")[RULE_COLUMNS].reset_index(drop=True)
    log.info(f"Aggregated {len(table)} rule entries")
    return AdaptationRuleSet.from_table(table, n_areas, n_items, n_processes)


def _row_labels(family: RuleFamily, catalog: Catalog) -> list[str]:
    return catalog.areas.codes if family.is_trade else catalog.items.codes


def _col_labels(family: RuleFamily, catalog: Catalog) -> list[str]:
    if family.is_trade:
        return catalog.areas.codes
    if family.is_process:
        return catalog.processes.codes
    return [""]


def write_rules(rules: AdaptationRuleSet, directory: str, catalog: Catalog) -> list[str]:
    """
    Writes ``rules.csv`` (family, row_key, col_key, W, R, n_events, n_w, n_r) and ``substitution.csv``.
    :return: written paths
    """
    os.makedirs(directory, exist_ok=True)
    records = []
    for record in rules.table.itertuples(index=False):
        family = RuleFamily(record.family)
        records.append({
            "family": family.value,
            "row_key": _row_labels(family, catalog)[record.row],
            "col_key": _col_labels(family, catalog)[record.col],
            "W": record.W,
            "R": record.R,
            "n_events": record.n_w + record.n_r,
            "n_w": record.n_w,
            "n_r": record.n_r,
        })
    rules_path = os.path.join(directory, "rules.csv")
    write_frame(pd.DataFrame(records, columns=["family", "row_key", "col_key", "W", "R", "n_events", "n_w", "n_r"]),
                rules_path, FLOAT_FORMAT)

    items, substitutes = np.nonzero(rules.substitution > 0)
    substitution_path = os.path.join(directory, "substitution.csv")
    write_frame(pd.DataFrame({
        "item": np.asarray(catalog.items.codes, dtype=object)[items],
        "substitute": np.asarray(catalog.items.codes, dtype=object)[substitutes],
        "S": rules.substitution[items, substitutes],
    }, columns=["item", "substitute", "S"]), substitution_path, FLOAT_FORMAT)
    return [rules_path, substitution_path]


def read_rules(directory: str, catalog: Catalog) -> AdaptationRuleSet:
    rules_path = os.path.join(directory, "rules.csv")
    substitution_path = os.path.join(directory, "substitution.csv")
    for path in (rules_path, substitution_path):
        if not os.path.isfile(path):
            raise DataException("missing rule file, run calibrate first", path=path)

    frame = pd.read_csv(rules_path, keep_default_na=False, na_values=[""], dtype={"row_key": str, "col_key": str})
    rows, cols = [], []
    for line, record in enumerate(frame.itertuples(index=False)):
        family = RuleFamily(record.family)
        row_registry = catalog.areas if family.is_trade else catalog.items
        row = row_registry.find(record.row_key)
        if family.is_trade:
            col = catalog.areas.find(record.col_key)
        elif family.is_process:
            col = catalog.processes.find(record.col_key)
        else:
            col = 0
        if row is None or col is None:
            raise DataException(f"rule key {record.row_key!r}/{record.col_key!r} not in catalog", path=rules_path,
                                line=line + 2)
        rows.append(row)
        cols.append(col)
    table = pd.DataFrame({
        "family": frame["family"].astype(str),
        "row": np.asarray(rows, dtype=np.int64),
        "col": np.asarray(cols, dtype=np.int64),
        "W": frame["W"].astype(float),
        "R": frame["R"].astype(float),
        "n_w": frame["n_w"].astype(int),
        "n_r": frame["n_r"].astype(int),
    }, columns=RULE_COLUMNS)

    substitution = np.zeros((catalog.n_items, catalog.n_items))
    pairs = pd.read_csv(substitution_path, dtype={"item": str, "substitute": str})
    for line, record in enumerate(pairs.itertuples(index=False)):
        item = catalog.items.find(record.item)
        substitute = catalog.items.find(record.substitute)
        if item is None or substitute is None:
            raise DataException(f"unknown item in substitution pair {record.item!r}/{record.substitute!r}",
                                path=substitution_path, line=line + 2)
        substitution[item, substitute] = record.S

    return AdaptationRuleSet.from_table(table, catalog.n_areas, catalog.n_items, catalog.n_processes, substitution)
