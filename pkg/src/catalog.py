import logging
import os
from enum import Enum
from typing import Optional

import attrs
import numpy as np
import pandas as pd

from .errors import DataException, ValidationException

log = logging.getLogger(__name__)

UNGROUPED = "ungrouped"
NOT_CATEGORIZED = "not categorized"

CATALOG_FILES = {
    "areas": ("code", "name"),
    "items": ("code", "name", "group"),
    "processes": ("code", "name"),
    "population": ("area", "persons"),
    "hdi": ("area", "category", "value"),
}


class Unit(Enum):
    TONNES = "t"
    HEADS = "head"

    @property
    def per_capita_label(self) -> str:
        # both units carry a factor of 1000 (tonnes -> kg, 1000 heads -> heads)
        match self:
            case Unit.HEADS:
                return "head/person"
        return "kg/person"


@attrs.frozen
class HdiEntry:
    category: str = NOT_CATEGORIZED
    value: Optional[float] = None


class Registry:
    """
    Ordered code/name table with dense indices. Lookups accept either the code or the display name.
    """
    kind: str
    codes: list[str]
    names: list[str]

    def __init__(self, kind: str, codes: list[str], names: list[str]):
        self.kind = kind
        self.codes = list(codes)
        self.names = list(names)
        self._index: dict[str, int] = {}
        for index, (code, name) in enumerate(zip(self.codes, self.names)):
            if code in self._index and self._index[code] != index:
                raise ValidationException(f"duplicate {kind} code {code!r}")
            self._index[code] = index
        self._aliases = {name.lower(): index for index, name in enumerate(self.names)}

    def __len__(self):
        return len(self.codes)

    def __contains__(self, key: str):
        return self.find(key) is not None

    def find(self, key: str) -> Optional[int]:
        key = str(key).strip()
        if (index := self._index.get(key)) is not None:
            return index
        return self._aliases.get(key.lower())

    def index(self, key: str) -> int:
        index = self.find(key)
        if index is None:
            raise DataException(f"unknown {self.kind} {key!r}")
        return index


class Catalog:
    areas: Registry
    items: Registry
    processes: Registry
    commodity_groups: dict[str, str]
    units: dict[str, Unit]
    populations: dict[str, float]
    hdi: dict[str, HdiEntry]

    def __init__(
            self,
            areas: Registry,
            items: Registry,
            processes: Registry,
            commodity_groups: dict[str, str],
            populations: dict[str, float],
            hdi: Optional[dict[str, HdiEntry]] = None,
            units: Optional[dict[str, Unit]] = None,
    ):
        self.areas = areas
        self.items = items
        self.processes = processes
        self.commodity_groups = dict(commodity_groups)
        self.populations = dict(populations)
        self.hdi = {code: (hdi or {}).get(code, HdiEntry()) for code in areas.codes}
        self.units = {code: (units or {}).get(code, Unit.TONNES) for code in items.codes}

        for code in items.codes:
            if not self.commodity_groups.get(code):
                raise ValidationException(f"item {code!r} has no commodity group")
        for area, persons in self.populations.items():
            if not persons > 0:
                raise ValidationException(f"population of area {area!r} must be positive, got {persons}")

    @property
    def n_areas(self) -> int:
        return len(self.areas)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_processes(self) -> int:
        return len(self.processes)

    @property
    def n_sectors(self) -> int:
        return self.n_areas * self.n_items

    def sector_index(self, area: int, item: int) -> int:
        return area * self.n_items + item

    def sector(self, index: int) -> tuple[int, int]:
        return divmod(index, self.n_items)

    def sector_label(self, index: int) -> str:
        area, item = self.sector(index)
        return f"{self.areas.codes[area]}:{self.items.codes[item]}"

    def resolve_sector(self, text: str) -> tuple[int, int]:
        """
        Parses an ``AREA:ITEM`` reference, where each part is a code or a display name.
        :param text:
        :return: (area index, item index)
        """
        if ":" not in text:
            raise DataException(f"sector reference {text!r} must look like AREA:ITEM")
        area, item = text.split(":", 1)
        return self.areas.index(area), self.items.index(item)

    def group_of(self, item: int) -> str:
        return self.commodity_groups[self.items.codes[item]]

    def same_group(self, item_a: int, item_b: int) -> bool:
        group = self.group_of(item_a)
        return group != UNGROUPED and group == self.group_of(item_b)

    def group_matrix(self) -> np.ndarray:
        """
        Boolean item x item matrix, true where both items share a commodity group (diagonal excluded).
        """
        groups = np.array([self.commodity_groups[code] for code in self.items.codes], dtype=object)
        same = (groups[:, None] == groups[None, :]) & (groups[:, None] != UNGROUPED)
        np.fill_diagonal(same, False)
        return same

    def items_in_group(self, group: str) -> list[int]:
        return [index for index, code in enumerate(self.items.codes) if self.commodity_groups[code] == group]

    def unit_of(self, item: int) -> Unit:
        return self.units[self.items.codes[item]]

    def population_vector(self) -> np.ndarray:
        """
        Populations by area index; areas without a population row are NaN.
        """
        return np.array([self.populations.get(code, np.nan) for code in self.areas.codes], dtype=float)

    def require_population(self, area: int) -> float:
        code = self.areas.codes[area]
        if code not in self.populations:
            raise DataException(f"no population for area {code!r}")
        return self.populations[code]


def _read_table(directory: str, name: str) -> pd.DataFrame:
    path = os.path.join(directory, f"{name}.csv")
    if not os.path.isfile(path):
        raise DataException(f"missing catalog file {name}.csv", path=path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    frame.columns = [column.strip() for column in frame.columns]
    required = [column for column in CATALOG_FILES[name] if column not in ("value",)]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise DataException(f"{name}.csv lacks columns {missing}", path=path, line=1)
    return frame


def _registry(directory: str, name: str, kind: str) -> tuple[Registry, pd.DataFrame]:
    frame = _read_table(directory, name)
    codes = [code.strip() for code in frame["code"]]
    seen = set()
    for row, code in enumerate(codes):
        if code in seen:
            raise ValidationException(f"duplicate {kind} code {code!r} in {name}.csv line {row + 2}")
        seen.add(code)
    names = [label.strip() or code for label, code in zip(frame["name"], codes)]
    return Registry(kind, codes, names), frame


def load_catalog(path: str) -> Catalog:
    """
    Reads areas, items, processes, populations and HDI categories from a catalog directory.
    :param path: directory holding the catalog CSV files
    :return:
    """
    areas, _ = _registry(path, "areas", "area")
    items, item_frame = _registry(path, "items", "item")
    processes, _ = _registry(path, "processes", "process")

    groups = {}
    units = {}
    for row, record in enumerate(item_frame.itertuples(index=False)):
        code = record.code.strip()
        group = record.group.strip()
        if not group:
            raise ValidationException(f"item {code!r} has no commodity group (items.csv line {row + 2})")
        groups[code] = group
        unit = getattr(record, "unit", "").strip()
        try:
            units[code] = Unit(unit) if unit else Unit.TONNES
        except ValueError:
            raise DataException(f"unknown unit {unit!r} for item {code!r}", path=os.path.join(path, "items.csv"), line=row + 2)

    population_path = os.path.join(path, "population.csv")
    populations = {}
    for row, record in enumerate(_read_table(path, "population").itertuples(index=False)):
        area = areas.find(record.area)
        if area is None:
            raise DataException(f"unknown area {record.area!r}", path=population_path, line=row + 2)
        try:
            persons = float(record.persons)
        except ValueError:
            raise DataException(f"population {record.persons!r} is not a number", path=population_path, line=row + 2)
        if not persons > 0:
            raise ValidationException(f"population of area {areas.codes[area]!r} must be positive, got {persons:g}")
        populations[areas.codes[area]] = persons

    hdi_path = os.path.join(path, "hdi.csv")
    hdi = {}
    for row, record in enumerate(_read_table(path, "hdi").itertuples(index=False)):
        area = areas.find(record.area)
        if area is None:
            raise DataException(f"unknown area {record.area!r}", path=hdi_path, line=row + 2)
        raw_value = getattr(record, "value", "").strip()
        category = record.category.strip() or NOT_CATEGORIZED
        hdi[areas.codes[area]] = HdiEntry(category, float(raw_value) if raw_value else None)

    uncategorized = len(areas) - len(hdi)
    if uncategorized:
        log.info(f"{uncategorized} areas have no HDI category")

    catalog = Catalog(areas, items, processes, groups, populations, hdi=hdi, units=units)
    log.info(f"Loaded catalog with {catalog.n_areas} areas, {catalog.n_items} items and {catalog.n_processes} processes")
    return catalog


def write_catalog(catalog: Catalog, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    pd.DataFrame({"code": catalog.areas.codes, "name": catalog.areas.names}).to_csv(
        os.path.join(path, "areas.csv"), index=False)
    pd.DataFrame({
        "code": catalog.items.codes,
        "name": catalog.items.names,
        "group": [catalog.commodity_groups[code] for code in catalog.items.codes],
        "unit": [catalog.units[code].value for code in catalog.items.codes],
    }).to_csv(os.path.join(path, "items.csv"), index=False)
    pd.DataFrame({"code": catalog.processes.codes, "name": catalog.processes.names}).to_csv(
        os.path.join(path, "processes.csv"), index=False)
    pd.DataFrame({"area": list(catalog.populations), "persons": list(catalog.populations.values())}).to_csv(
        os.path.join(path, "population.csv"), index=False)
    categorized = {code: entry for code, entry in catalog.hdi.items() if entry.category != NOT_CATEGORIZED}
    pd.DataFrame({
        "area": list(categorized),
        "category": [entry.category for entry in categorized.values()],
        "value": ["" if entry.value is None else entry.value for entry in categorized.values()],
    }).to_csv(os.path.join(path, "hdi.csv"), index=False)
