import logging
from typing import Sequence

import numpy as np
from scipy import sparse

from ..errors import DataException, MissingYearsException
from ..parameters import ParameterSet

log = logging.getLogger(__name__)


def _scale_by_process(params: ParameterSet, matrix: sparse.csr_matrix, factors: np.ndarray) -> sparse.csr_matrix:
    coo = matrix.tocoo()
    data = coo.data * factors[coo.row // params.n_items, coo.col]
    scaled = sparse.csr_matrix((data, (coo.row, coo.col)), shape=matrix.shape)
    scaled.eliminate_zeros()
    scaled.sort_indices()
    return scaled


def _process_factors(params: ParameterSet, matrix: sparse.csr_matrix, reference: np.ndarray, name: str) -> np.ndarray:
    totals = params.process_totals(matrix)
    active = totals > 0
    factors = np.where(active, reference / np.where(active, totals, 1.0), 0.0)
    vanished = np.count_nonzero(active & (reference == 0))
    inactive = np.count_nonzero(~active & (reference > 0))
    if vanished:
        log.info(f"{params.year}: {vanished} {name} processes have no base-year output and were zeroed")
    if inactive:
        log.debug(f"{params.year}: {inactive} {name} processes active in the base year are idle")
    return factors


def normalize_growth(yearly: Sequence[ParameterSet], base_year: int) -> list[ParameterSet]:
    """
    Removes economic growth from a yearly series: per (area, process) the output rates of every year are scaled to
    the base-year totals, and ``x0`` is scaled to the base-year global total. Share parameters pass through.
    :param yearly: parameter sets ordered by year
    :param base_year:
    :return:
    """
    if len(yearly) < 2:
        raise DataException(f"growth normalization needs at least two years, got {len(yearly)}")
    by_year = {params.year: params for params in yearly}
    if base_year not in by_year:
        raise MissingYearsException([base_year])
    base = by_year[base_year]

    alpha_reference = base.process_totals(base.alpha)
    beta_reference = base.process_totals(base.beta)
    x0_reference = float(base.x0.sum())

    normalized = []
    for params in yearly:
        alpha = _scale_by_process(params, params.alpha, _process_factors(params, params.alpha, alpha_reference, "alpha"))
        beta = _scale_by_process(params, params.beta, _process_factors(params, params.beta, beta_reference, "beta"))
        total = float(params.x0.sum())
        if total > 0:
            x0 = params.x0 * (x0_reference / total)
        else:
            log.warning(f"{params.year}: no available amounts, x0 left at zero")
            x0 = np.zeros_like(params.x0)
        normalized.append(params.evolve(alpha=alpha, beta=beta, x0=x0))
    return normalized


def normalize_to_year(vectors: np.ndarray, reference_row: int = 0) -> np.ndarray:
    """
    Rescales every row of a (year x sector) array so its total equals the total of ``reference_row``.
    """
    totals = vectors.sum(axis=1)
    reference = totals[reference_row]
    factors = np.where(totals > 0, reference / np.where(totals > 0, totals, 1.0), 0.0)
    return vectors * factors[:, None]
