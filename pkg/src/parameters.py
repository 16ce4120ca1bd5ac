import logging
import os
import re
from typing import Iterable, Optional

import attrs
import numpy as np
import pandas as pd
from scipy import sparse

from .catalog import Catalog, Registry
from .errors import DataException, MissingYearsException, ValidationException

log = logging.getLogger(__name__)

SHARE_TOLERANCE = 1e-9
REPAIR_TOLERANCE = 1e-6
DEFAULT_SHARE_FLOOR = 1e-3
FLOAT_FORMAT = "%.17g"

PROCESS_FAMILIES = ("alpha", "beta", "nu")
TRADE_FILE_PATTERN = re.compile(r"^trade_(.+)\.csv$")


def assign_entries(matrix: sparse.spmatrix, rows, cols, values) -> sparse.csr_matrix:
    """
    Returns a copy of ``matrix`` with the given entries overwritten. Later duplicates win; zeros are dropped.
    :param matrix:
    :param rows:
    :param cols:
    :param values:
    :return:
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    coo = matrix.tocoo()
    width = matrix.shape[1]

    new_keys = rows * width + cols
    _, last = np.unique(new_keys[::-1], return_index=True)
    pick = len(new_keys) - 1 - last
    rows, cols, values, new_keys = rows[pick], cols[pick], values[pick], new_keys[pick]

    old_keys = coo.row.astype(np.int64) * width + coo.col
    keep = ~np.isin(old_keys, new_keys)
    result = sparse.csr_matrix(
        (
            np.concatenate([coo.data[keep], values]),
            (np.concatenate([coo.row[keep], rows]), np.concatenate([coo.col[keep], cols])),
        ),
        shape=matrix.shape,
    )
    result.eliminate_zeros()
    result.sort_indices()
    return result


def scale_columns(matrix: sparse.spmatrix, factors: np.ndarray) -> sparse.csr_matrix:
    result = sparse.csr_matrix(matrix @ sparse.diags(factors))
    result.eliminate_zeros()
    return result


def scale_rows(matrix: sparse.spmatrix, factors: np.ndarray) -> sparse.csr_matrix:
    result = sparse.csr_matrix(sparse.diags(factors) @ matrix)
    result.eliminate_zeros()
    return result


class SparseItemMatrix:
    """
    Trade shares stored as one sector x sector CSR matrix. Row ``a*I + i`` is the importing sector, column
    ``b*I + i`` the exporting sector; entries never connect two different items.
    """
    n_areas: int
    n_items: int
    matrix: sparse.csr_matrix

    def __init__(self, matrix: sparse.spmatrix, n_areas: int, n_items: int, check: bool = True):
        self.n_areas = n_areas
        self.n_items = n_items
        matrix = sparse.csr_matrix(matrix, dtype=float)
        matrix.eliminate_zeros()
        matrix.sort_indices()
        size = n_areas * n_items
        if matrix.shape != (size, size):
            raise ValidationException(f"trade matrix has shape {matrix.shape}, expected {(size, size)}")
        if check:
            coo = matrix.tocoo()
            if np.any(coo.row % n_items != coo.col % n_items):
                raise ValidationException("trade matrix holds an entry between two different items")
            if not np.all(np.isfinite(coo.data)) or np.any(coo.data < 0):
                raise ValidationException("trade shares must be finite and non-negative")
        self.matrix = matrix

    @classmethod
    def empty(cls, n_areas: int, n_items: int) -> "SparseItemMatrix":
        size = n_areas * n_items
        return cls(sparse.csr_matrix((size, size)), n_areas, n_items, check=False)

    @classmethod
    def from_entries(cls, item, importer, exporter, share, n_areas: int, n_items: int) -> "SparseItemMatrix":
        item = np.asarray(item, dtype=np.int64)
        rows = np.asarray(importer, dtype=np.int64) * n_items + item
        cols = np.asarray(exporter, dtype=np.int64) * n_items + item
        size = n_areas * n_items
        matrix = sparse.csr_matrix((np.asarray(share, dtype=float), (rows, cols)), shape=(size, size))
        return cls(matrix, n_areas, n_items)

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def with_matrix(self, matrix: sparse.spmatrix) -> "SparseItemMatrix":
        return SparseItemMatrix(matrix, self.n_areas, self.n_items, check=False)

    def block(self, item: int) -> sparse.csr_matrix:
        """
        Importer x exporter shares of a single item.
        """
        return self.matrix[item::self.n_items, item::self.n_items]

    def exporter_totals(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        :return: item, importer area, exporter area and share of every stored entry
        """
        coo = self.matrix.tocoo()
        return coo.row % self.n_items, coo.row // self.n_items, coo.col // self.n_items, coo.data

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@attrs.frozen(eq=False)
class LoadReport:
    trade_columns: int = 0
    nu_rows: int = 0
    eta_sectors: int = 0
    max_deviation: float = 0.0
    thresholded: int = 0

    def as_dict(self) -> dict:
        return attrs.asdict(self)


@attrs.frozen(eq=False)
class ParameterSet:
    """
    One year of model parameters. ``alpha``, ``beta`` and ``nu`` are sector x process CSR matrices (for ``nu`` the
    row is the input sector), the allocation shares and ``x0`` are dense per-sector vectors.
    """
    year: int
    n_areas: int
    n_items: int
    n_processes: int
    alpha: sparse.csr_matrix
    beta: sparse.csr_matrix
    nu: sparse.csr_matrix
    trade: SparseItemMatrix
    eta_exp: np.ndarray
    eta_prod: np.ndarray
    x0: np.ndarray
    report: LoadReport = attrs.field(factory=LoadReport)

    @property
    def n_sectors(self) -> int:
        return self.n_areas * self.n_items

    def evolve(self, **changes) -> "ParameterSet":
        return attrs.evolve(self, **changes)

    def sector_areas(self) -> np.ndarray:
        return np.arange(self.n_sectors) // self.n_items

    def area_aggregator(self) -> sparse.csr_matrix:
        """
        Area x sector indicator matrix; multiplying a sector x process matrix by it yields per-(area, process) sums.
        """
        sectors = np.arange(self.n_sectors)
        return sparse.csr_matrix(
            (np.ones(self.n_sectors), (sectors // self.n_items, sectors)),
            shape=(self.n_areas, self.n_sectors),
        )

    def process_totals(self, matrix: sparse.spmatrix) -> np.ndarray:
        return np.asarray((self.area_aggregator() @ matrix).todense())

    def eta_residual(self) -> np.ndarray:
        return np.clip(1.0 - self.eta_exp - self.eta_prod, 0.0, None)

    def validate(self, tolerance: float = SHARE_TOLERANCE) -> None:
        """
        Raises ValidationException on the first broken structural rule.
        :param tolerance: allowed slack on share sums
        :return:
        """
        expected = (self.n_sectors, self.n_processes)
        for name in PROCESS_FAMILIES:
            matrix = getattr(self, name)
            if matrix.shape != expected:
                raise ValidationException(f"{name} has shape {matrix.shape}, expected {expected}")
            if np.any(matrix.data < 0) or not np.all(np.isfinite(matrix.data)):
                raise ValidationException(f"{name} holds negative or non-finite values")
        for name in ("eta_exp", "eta_prod", "x0"):
            vector = getattr(self, name)
            if vector.shape != (self.n_sectors,):
                raise ValidationException(f"{name} has shape {vector.shape}, expected {(self.n_sectors,)}")
            if np.any(vector < 0) or not np.all(np.isfinite(vector)):
                raise ValidationException(f"{name} holds negative or non-finite values")

        overlap = self.alpha.multiply(self.beta)
        if overlap.nnz and np.any(overlap.data > 0):
            raise ValidationException("alpha and beta are both positive for the same area, item and process")

        totals = self.trade.exporter_totals()
        active = totals > 0
        if np.any(np.abs(totals[active] - 1.0) > tolerance):
            raise ValidationException("trade shares of an exporter do not sum to one")
        if np.any(np.asarray(self.nu.sum(axis=1)).ravel() > 1.0 + tolerance):
            raise ValidationException("input shares of a sector exceed one")
        if np.any(self.eta_exp + self.eta_prod > 1.0 + tolerance):
            raise ValidationException("allocation shares of a sector exceed one")


def year_directory(path: str, year: int) -> str:
    return os.path.join(path, str(year))


def available_years(path: str) -> list[int]:
    if not os.path.isdir(path):
        return []
    return sorted(int(name) for name in os.listdir(path) if name.isdigit() and os.path.isdir(os.path.join(path, name)))


def _read_table(path: str, columns: Iterable[str]) -> pd.DataFrame:
    if not os.path.isfile(path):
        raise DataException(f"missing parameter file {os.path.basename(path)}", path=path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    frame.columns = [column.strip() for column in frame.columns]
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise DataException(f"{os.path.basename(path)} lacks columns {missing}", path=path, line=1)
    return frame


def _resolve(frame: pd.DataFrame, column: str, registry: Registry, path: str) -> np.ndarray:
    values = frame[column].str.strip()
    mapping = {value: registry.find(value) for value in values.unique()}
    mapped = values.map(mapping)
    unresolved = mapped.isna().to_numpy()
    if unresolved.any():
        row = int(np.flatnonzero(unresolved)[0])
        raise DataException(f"unknown {registry.kind} {values.iloc[row]!r}", path=path, line=row + 2)
    return mapped.to_numpy(dtype=np.int64)


def _numbers(frame: pd.DataFrame, column: str, path: str) -> np.ndarray:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce").to_numpy(dtype=float)
    invalid = ~np.isfinite(values)
    if invalid.any():
        row = int(np.flatnonzero(invalid)[0])
        raise DataException(f"{column} {frame[column].iloc[row]!r} is not a number", path=path, line=row + 2)
    negative = values < 0
    if negative.any():
        row = int(np.flatnonzero(negative)[0])
        raise ValidationException(f"negative {column} {values[row]:g}", path=path, line=row + 2)
    return values


def _check_unique(keys: np.ndarray, path: str) -> None:
    duplicated = pd.Series(keys).duplicated().to_numpy()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated)[0])
        raise ValidationException("duplicate entry", path=path, line=row + 2)


def _load_process_table(directory: str, name: str, catalog: Catalog) -> sparse.csr_matrix:
    path = os.path.join(directory, f"{name}.csv")
    frame = _read_table(path, ("area", "item", "process", "value"))
    areas = _resolve(frame, "area", catalog.areas, path)
    items = _resolve(frame, "item", catalog.items, path)
    processes = _resolve(frame, "process", catalog.processes, path)
    values = _numbers(frame, "value", path)
    rows = areas * catalog.n_items + items
    _check_unique(rows * catalog.n_processes + processes, path)
    matrix = sparse.csr_matrix((values, (rows, processes)), shape=(catalog.n_sectors, catalog.n_processes))
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return matrix


def _load_sector_vector(frame: pd.DataFrame, columns: tuple[str, ...], catalog: Catalog, path: str) -> list[np.ndarray]:
    areas = _resolve(frame, "area", catalog.areas, path)
    items = _resolve(frame, "item", catalog.items, path)
    sectors = areas * catalog.n_items + items
    _check_unique(sectors, path)
    vectors = []
    for column in columns:
        vector = np.zeros(catalog.n_sectors)
        vector[sectors] = _numbers(frame, column, path)
        vectors.append(vector)
    return vectors


def _load_trade(directory: str, catalog: Catalog) -> SparseItemMatrix:
    path = os.path.join(directory, "trade.csv")
    if os.path.isfile(path):
        frame = _read_table(path, ("item", "importer", "exporter", "share"))
        items = _resolve(frame, "item", catalog.items, path)
        importers = _resolve(frame, "importer", catalog.areas, path)
        exporters = _resolve(frame, "exporter", catalog.areas, path)
        shares = _numbers(frame, "share", path)
        _check_unique((items * catalog.n_areas + importers) * catalog.n_areas + exporters, path)
        return SparseItemMatrix.from_entries(items, importers, exporters, shares, catalog.n_areas, catalog.n_items)

    parts = []
    for name in sorted(os.listdir(directory)):
        if not (match := TRADE_FILE_PATTERN.match(name)):
            continue
        item_path = os.path.join(directory, name)
        item = catalog.items.find(match.group(1))
        if item is None:
            raise DataException(f"trade file names unknown item {match.group(1)!r}", path=item_path)
        frame = _read_table(item_path, ("importer", "exporter", "share"))
        importers = _resolve(frame, "importer", catalog.areas, item_path)
        exporters = _resolve(frame, "exporter", catalog.areas, item_path)
        shares = _numbers(frame, "share", item_path)
        _check_unique(importers * catalog.n_areas + exporters, item_path)
        parts.append((np.full(len(frame), item), importers, exporters, shares))
    if not parts:
        raise DataException("missing trade.csv or trade_<item>.csv files", path=path)
    item, importer, exporter, share = (np.concatenate(column) for column in zip(*parts))
    return SparseItemMatrix.from_entries(item, importer, exporter, share, catalog.n_areas, catalog.n_items)


def _repair_shares(
        trade: SparseItemMatrix,
        nu: sparse.csr_matrix,
        eta_exp: np.ndarray,
        eta_prod: np.ndarray,
) -> tuple[SparseItemMatrix, sparse.csr_matrix, np.ndarray, np.ndarray, LoadReport]:
    max_deviation = 0.0

    totals = trade.exporter_totals()
    deviation = np.where(totals > 0, np.abs(totals - 1.0), 0.0)
    fix = deviation > SHARE_TOLERANCE
    if fix.any():
        trade = trade.with_matrix(scale_columns(trade.matrix, np.where(fix, 1.0 / np.where(fix, totals, 1.0), 1.0)))
        max_deviation = max(max_deviation, float(deviation.max()))
    trade_columns = int(np.count_nonzero(deviation > REPAIR_TOLERANCE))

    sums = np.asarray(nu.sum(axis=1)).ravel()
    excess = np.clip(sums - 1.0, 0.0, None)
    fix = excess > SHARE_TOLERANCE
    if fix.any():
        nu = scale_rows(nu, np.where(fix, 1.0 / np.where(fix, sums, 1.0), 1.0))
        max_deviation = max(max_deviation, float(excess.max()))
    nu_rows = int(np.count_nonzero(excess > REPAIR_TOLERANCE))

    totals = eta_exp + eta_prod
    excess = np.clip(totals - 1.0, 0.0, None)
    fix = excess > SHARE_TOLERANCE
    if fix.any():
        factor = np.where(fix, 1.0 / np.where(fix, totals, 1.0), 1.0)
        eta_exp = eta_exp * factor
        eta_prod = eta_prod * factor
        max_deviation = max(max_deviation, float(excess.max()))
    eta_sectors = int(np.count_nonzero(excess > REPAIR_TOLERANCE))

    report = LoadReport(trade_columns=trade_columns, nu_rows=nu_rows, eta_sectors=eta_sectors,
                        max_deviation=max_deviation)
    return trade, nu, eta_exp, eta_prod, report


def load_parameter_set(path: str, year: int, catalog: Catalog) -> ParameterSet:
    """
    Reads one year of parameters from ``<path>/<year>/``.

    Share groups off by more than the load tolerance are renormalized and counted in the attached LoadReport.
    :param path: directory holding one sub-directory per year
    :param year:
    :param catalog:
    :return:
    """
    directory = year_directory(path, year)
    if not os.path.isdir(directory):
        raise MissingYearsException([year], path=path)

    alpha = _load_process_table(directory, "alpha", catalog)
    beta = _load_process_table(directory, "beta", catalog)
    nu = _load_process_table(directory, "nu", catalog)

    overlap = alpha.multiply(beta).tocoo()
    if overlap.nnz:
        area, item = catalog.sector(int(overlap.row[0]))
        process = catalog.processes.codes[overlap.col[0]]
        raise ValidationException(
            f"alpha and beta both positive for {catalog.areas.codes[area]}, {catalog.items.codes[item]}, {process}",
            path=directory,
        )

    eta_path = os.path.join(directory, "eta.csv")
    eta_exp, eta_prod = _load_sector_vector(
        _read_table(eta_path, ("area", "item", "eta_exp", "eta_prod")), ("eta_exp", "eta_prod"), catalog, eta_path)
    x0_path = os.path.join(directory, "x0.csv")
    (x0,) = _load_sector_vector(_read_table(x0_path, ("area", "item", "value")), ("value",), catalog, x0_path)

    trade = _load_trade(directory, catalog)
    trade, nu, eta_exp, eta_prod, report = _repair_shares(trade, nu, eta_exp, eta_prod)
    repaired = report.trade_columns + report.nu_rows + report.eta_sectors
    if repaired:
        log.warning(
            f"{year}: renormalized {report.trade_columns} exporter columns, {report.nu_rows} input rows and "
            f"{report.eta_sectors} allocation pairs (largest deviation {report.max_deviation:.3g})"
        )

    params = ParameterSet(
        year=year,
        n_areas=catalog.n_areas,
        n_items=catalog.n_items,
        n_processes=catalog.n_processes,
        alpha=alpha,
        beta=beta,
        nu=nu,
        trade=trade,
        eta_exp=eta_exp,
        eta_prod=eta_prod,
        x0=x0,
        report=report,
    )
    params.validate()
    log.debug(f"Loaded parameters for {year}: {trade.nnz} trade links, {alpha.nnz + beta.nnz} output rates")
    return params


def load_years(path: str, years: Iterable[int], catalog: Catalog) -> list[ParameterSet]:
    years = list(years)
    missing = [year for year in years if not os.path.isdir(year_directory(path, year))]
    if missing:
        raise MissingYearsException(missing, path=path)
    return [load_parameter_set(path, year, catalog) for year in years]


def _process_frame(matrix: sparse.csr_matrix, catalog: Catalog) -> pd.DataFrame:
    coo = matrix.tocoo()
    areas, items = np.divmod(coo.row, catalog.n_items)
    return pd.DataFrame({
        "area": np.asarray(catalog.areas.codes, dtype=object)[areas],
        "item": np.asarray(catalog.items.codes, dtype=object)[items],
        "process": np.asarray(catalog.processes.codes, dtype=object)[coo.col],
        "value": coo.data,
    })


def write_parameter_set(params: ParameterSet, path: str, catalog: Catalog) -> str:
    """
    Writes ``params`` in the layout read by load_parameter_set.
    :return: the year directory written to
    """
    directory = year_directory(path, params.year)
    os.makedirs(directory, exist_ok=True)
    area_codes = np.asarray(catalog.areas.codes, dtype=object)
    item_codes = np.asarray(catalog.items.codes, dtype=object)

    for name in PROCESS_FAMILIES:
        _process_frame(getattr(params, name), catalog).to_csv(
            os.path.join(directory, f"{name}.csv"), index=False, float_format=FLOAT_FORMAT)

    sectors = np.arange(params.n_sectors)
    areas, items = np.divmod(sectors, params.n_items)
    allocated = (params.eta_exp > 0) | (params.eta_prod > 0)
    pd.DataFrame({
        "area": area_codes[areas[allocated]],
        "item": item_codes[items[allocated]],
        "eta_exp": params.eta_exp[allocated],
        "eta_prod": params.eta_prod[allocated],
    }).to_csv(os.path.join(directory, "eta.csv"), index=False, float_format=FLOAT_FORMAT)

    available = params.x0 > 0
    pd.DataFrame({
        "area": area_codes[areas[available]],
        "item": item_codes[items[available]],
        "value": params.x0[available],
    }).to_csv(os.path.join(directory, "x0.csv"), index=False, float_format=FLOAT_FORMAT)

    item, importer, exporter, share = params.trade.entries()
    pd.DataFrame({
        "item": item_codes[item],
        "importer": area_codes[importer],
        "exporter": area_codes[exporter],
        "share": share,
    }).to_csv(os.path.join(directory, "trade.csv"), index=False, float_format=FLOAT_FORMAT)
    return directory


def threshold_small_shares(params: ParameterSet, floor: float = DEFAULT_SHARE_FLOOR) -> ParameterSet:
    """
    Zeroes share entries (trade, input and allocation shares) strictly below ``floor`` and scales the surviving
    entries of every touched group back to the group's previous total.
    :param params:
    :param floor:
    :return:
    """
    if floor < 0:
        raise ValidationException(f"share floor must be non-negative, got {floor}")
    zeroed = 0

    trade = params.trade.matrix.copy()
    before = np.asarray(trade.sum(axis=0)).ravel()
    small = trade.data < floor
    zeroed += int(np.count_nonzero(small))
    trade.data[small] = 0.0
    trade.eliminate_zeros()
    after = np.asarray(trade.sum(axis=0)).ravel()
    touched = (after != before) & (after > 0)
    if np.any((after == 0) & (before > 0)):
        log.warning(f"{params.year}: {np.count_nonzero((after == 0) & (before > 0))} exporters lost every trade link")
    trade = scale_columns(trade, np.where(touched, before / np.where(touched, after, 1.0), 1.0))

    nu = params.nu.copy()
    before = np.asarray(nu.sum(axis=1)).ravel()
    small = nu.data < floor
    zeroed += int(np.count_nonzero(small))
    nu.data[small] = 0.0
    nu.eliminate_zeros()
    after = np.asarray(nu.sum(axis=1)).ravel()
    touched = (after != before) & (after > 0)
    nu = scale_rows(nu, np.where(touched, before / np.where(touched, after, 1.0), 1.0))

    residual = params.eta_residual()
    exp_small = (params.eta_exp > 0) & (params.eta_exp < floor)
    prod_small = (params.eta_prod > 0) & (params.eta_prod < floor)
    zeroed += int(np.count_nonzero(exp_small) + np.count_nonzero(prod_small))
    eta_exp = np.where(exp_small, 0.0, params.eta_exp)
    eta_prod = np.where(prod_small, 0.0, params.eta_prod)
    survivors = eta_exp + eta_prod + residual
    factor = np.where((exp_small | prod_small) & (survivors > 0), 1.0 / np.where(survivors > 0, survivors, 1.0), 1.0)
    eta_exp = eta_exp * factor
    eta_prod = eta_prod * factor

    log.info(f"{params.year}: zeroed {zeroed} share entries below {floor:g}")
    report = attrs.evolve(params.report, thresholded=params.report.thresholded + zeroed)
    return params.evolve(
        trade=params.trade.with_matrix(trade),
        nu=nu,
        eta_exp=eta_exp,
        eta_prod=eta_prod,
        report=report,
    )
