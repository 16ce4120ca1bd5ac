import logging
from typing import Sequence

import attrs
import numpy as np
import pandas as pd
from scipy import sparse
from scipy.stats import ttest_1samp
from statsmodels.stats.multitest import multipletests

from ..catalog import Catalog
from ..errors import MissingYearsException
from ..parameters import ParameterSet
from .events import CalibrationConfig, Event

log = logging.getLogger(__name__)

TEST_COLUMNS = ["item", "substitute", "s", "n_events", "p_mean", "p_permutation", "p_permutation_adjusted",
                "admitted"]


@attrs.frozen(eq=False)
class SubstitutionResult:
    matrix: np.ndarray
    tests: pd.DataFrame
    changes: np.ndarray
    event_items: np.ndarray


def import_changes(events: Sequence[Event], yearly: Sequence[ParameterSet], import_floor: float) -> np.ndarray:
    """
    Relative change of every item's import index of the event area between the event year and the year after.

    The import index sums the importer's shares over exporters that send it at least ``import_floor`` of their
    exports in the event year; the same exporters are summed in the following year.
    :return: (event x item) array, NaN where the event-year index is zero
    """
    by_year = {params.year: params for params in yearly}
    missing = sorted({year for event in events for year in (event.year, event.year + 1) if year not in by_year})
    if missing:
        raise MissingYearsException(missing)
    if not events:
        return np.zeros((0, yearly[0].n_items if yearly else 0))

    n_items = yearly[0].n_items
    changes = np.full((len(events), n_items), np.nan)
    excluded = 0
    for index, event in enumerate(events):
        rows = slice(event.area * n_items, (event.area + 1) * n_items)
        before = by_year[event.year].trade.matrix[rows]
        after = by_year[event.year + 1].trade.matrix[rows]
        relevant = sparse.csr_matrix(before >= import_floor, dtype=float)
        start = np.asarray(before.multiply(relevant).sum(axis=1)).ravel()
        end = np.asarray(after.multiply(relevant).sum(axis=1)).ravel()
        defined = start > 0
        changes[index, defined] = (end[defined] - start[defined]) / start[defined]
        excluded += int(np.count_nonzero(~defined))
    log.debug(f"{excluded} event/item combinations have no relevant imports and were excluded")
    return changes


def _pair_means(labels: np.ndarray, changes: np.ndarray, n_items: int) -> tuple[np.ndarray, np.ndarray]:
    one_hot = sparse.csr_matrix(
        (np.ones(len(labels)), (labels, np.arange(len(labels)))), shape=(n_items, len(labels)))
    valid = ~np.isnan(changes)
    totals = np.asarray(one_hot @ np.where(valid, changes, 0.0))
    counts = np.asarray(one_hot @ valid.astype(float))
    means = np.where(counts > 0, totals / np.where(counts > 0, counts, 1.0), np.nan)
    return means, counts


def derive_substitutability(events: Sequence[Event], yearly: Sequence[ParameterSet], catalog: Catalog,
                            config: CalibrationConfig) -> SubstitutionResult:
    """
    Estimates the substitutability index of every same-group item pair and keeps the pairs whose mean import surge
    is significantly positive under both a one-sided t-test and a label permutation test (the latter corrected with
    Benjamini-Hochberg).
    :param events:
    :param yearly:
    :param catalog:
    :param config: significance level, permutation count, relevance floor and seed
    :return:
    """
    n_items = catalog.n_items
    same_group = catalog.group_matrix()
    matrix = np.zeros((n_items, n_items))
    if not events:
        return SubstitutionResult(matrix, pd.DataFrame(columns=TEST_COLUMNS), np.zeros((0, n_items)),
                                  np.zeros(0, dtype=np.int64))

    changes = import_changes(events, yearly, config.import_floor)
    labels = np.array([event.item for event in events], dtype=np.int64)

    observed, counts = _pair_means(labels, changes, n_items)
    tested = same_group & (counts > 0)
    items, substitutes = np.nonzero(tested)

    p_mean = np.full(len(items), np.nan)
    for index, (item, substitute) in enumerate(zip(items, substitutes)):
        values = changes[labels == item, substitute]
        values = values[~np.isnan(values)]
        if len(values) >= 2 and np.ptp(values) > 0:
            p_mean[index] = ttest_1samp(values, 0.0, alternative="greater").pvalue
        elif len(values) >= 2 and values[0] > 0:
            p_mean[index] = 0.0

    rng = np.random.default_rng(config.rng_seed)
    exceed = np.zeros(len(items))
    for _ in range(config.n_permutations):
        permuted, _ = _pair_means(rng.permutation(labels), changes, n_items)
        sample = permuted[items, substitutes]
        exceed += np.where(np.isnan(sample), 0.0, sample >= observed[items, substitutes])
    p_permutation = exceed / config.n_permutations

    if len(items):
        rejected, p_adjusted, _, _ = multipletests(p_permutation, alpha=config.alpha_sig, method="fdr_bh")
    else:
        rejected, p_adjusted = np.zeros(0, dtype=bool), np.zeros(0)
    mean_rejected = np.where(np.isnan(p_mean), False, p_mean < config.alpha_sig)
    admitted = rejected & mean_rejected & (observed[items, substitutes] > 0) & (items != substitutes)
    matrix[items[admitted], substitutes[admitted]] = observed[items[admitted], substitutes[admitted]]

    tests = pd.DataFrame({
        "item": items,
        "substitute": substitutes,
        "s": observed[items, substitutes],
        "n_events": counts[items, substitutes].astype(int),
        "p_mean": p_mean,
        "p_permutation": p_permutation,
        "p_permutation_adjusted": p_adjusted,
        "admitted": admitted,
    }, columns=TEST_COLUMNS)
    log.info(f"Admitted {int(admitted.sum())} of {len(items)} substitution pairs")
    return SubstitutionResult(matrix, tests, changes, labels)


def tests_frame(result: SubstitutionResult, catalog: Catalog) -> pd.DataFrame:
    frame = result.tests.copy()
    codes = np.asarray(catalog.items.codes, dtype=object)
    frame["item"] = codes[frame["item"].to_numpy(dtype=np.int64)]
    frame["substitute"] = codes[frame["substitute"].to_numpy(dtype=np.int64)]
    return frame
