import logging

import attrs
import numpy as np
import pandas as pd
from scipy import sparse

from ..calibration.rules import AdaptationRuleSet, RuleFamily
from ..catalog import Catalog
from ..errors import ValidationException
from ..parameters import ParameterSet

log = logging.getLogger(__name__)

TRADE_COLUMNS = ["importer", "exporter", "W", "flows", "impact"]
SUBSTITUTION_COLUMNS = ["item", "substitute", "S", "importers", "impact"]
PRODUCTION_COLUMNS = ["family", "item", "process", "W", "areas", "impact"]


@attrs.frozen(eq=False)
class ImpactReport:
    """
    Estimated volume gained by applying each multiplier rule once to the base-year flows it scales.
    """
    trade: pd.DataFrame
    substitution: pd.DataFrame
    production: pd.DataFrame

    def top(self, n: int = 10) -> dict[str, pd.DataFrame]:
        """
        The ``n`` largest impacts of every table, production ranked per family.
        """
        production = (self.production.sort_values("impact", ascending=False, kind="mergesort")
                      .groupby("family", sort=False).head(n))
        return {
            "trade": self.trade.nlargest(n, "impact", keep="first"),
            "substitution": self.substitution.nlargest(n, "impact", keep="first"),
            "production": production.reset_index(drop=True),
        }

    def frame(self) -> pd.DataFrame:
        """
        All impacts in one long table.
        """
        trade = self.trade.rename(columns={"importer": "row", "exporter": "col", "W": "multiplier",
                                           "flows": "support"})
        trade.insert(0, "family", RuleFamily.TRADE_IMPORT.value)
        substitution = self.substitution.rename(columns={"item": "row", "substitute": "col", "S": "multiplier",
                                                         "importers": "support"})
        substitution["multiplier"] = 1.0 + substitution["multiplier"]
        substitution.insert(0, "family", "substitution")
        production = self.production.rename(columns={"item": "row", "process": "col", "W": "multiplier",
                                                     "areas": "support"})
        frames = [frame for frame in (trade, substitution, production) if not frame.empty]
        columns = ["family", "row", "col", "multiplier", "support", "impact"]
        if not frames:
            return pd.DataFrame(columns=columns)
        return pd.concat(frames, ignore_index=True)[columns]


def _group_means(rows: np.ndarray, cols: np.ndarray, values: np.ndarray, shape: tuple[int, int]):
    """
    :return: dense sums, counts and means of ``values`` per (row, col); means are NaN where nothing was counted
    """
    sums = sparse.coo_matrix((values, (rows, cols)), shape=shape).toarray()
    counts = sparse.coo_matrix((np.ones(len(values)), (rows, cols)), shape=shape).toarray()
    means = np.full(shape, np.nan)
    np.divide(sums, counts, out=means, where=counts > 0)
    return sums, counts, means


def trade_impacts(params: ParameterSet, rules: AdaptationRuleSet, catalog: Catalog) -> pd.DataFrame:
    """
    Import multiplier of every (importer, exporter) pair times the mean over their traded items of the trade share
    weighted by the importer's own base-year export volume.
    """
    exports = params.eta_exp * params.x0
    trade = params.trade.matrix.tocoo()
    existing = trade.data > 0
    rows, cols = trade.row[existing], trade.col[existing]
    flows = trade.data[existing] * exports[rows]
    shape = (params.n_areas, params.n_areas)
    _, counts, means = _group_means(rows // params.n_items, cols // params.n_items, flows, shape)

    weights = rules.weights[RuleFamily.TRADE_IMPORT]
    importer, exporter = np.nonzero(~np.isnan(weights) & (counts > 0))
    return pd.DataFrame({
        "importer": np.asarray(catalog.areas.codes, dtype=object)[importer],
        "exporter": np.asarray(catalog.areas.codes, dtype=object)[exporter],
        "W": weights[importer, exporter],
        "flows": counts[importer, exporter].astype(int),
        "impact": weights[importer, exporter] * means[importer, exporter],
    }, columns=TRADE_COLUMNS)


def substitution_impacts(params: ParameterSet, rules: AdaptationRuleSet, catalog: Catalog) -> pd.DataFrame:
    """
    ``1 + S`` of every admitted substitute pair times the mean, over the areas importing the substitute, of their
    import shares of it weighted by their own base-year export volume.
    """
    shares = np.asarray(params.trade.matrix.sum(axis=1)).ravel()
    imports = (shares * params.eta_exp * params.x0).reshape(params.n_areas, params.n_items)
    linked = (np.diff(params.trade.matrix.indptr) > 0).reshape(params.n_areas, params.n_items)
    importers = linked.sum(axis=0)
    totals = np.where(linked, imports, 0.0).sum(axis=0)
    means = np.full(params.n_items, np.nan)
    np.divide(totals, importers, out=means, where=importers > 0)

    item, substitute = np.nonzero((rules.substitution > 0) & (importers > 0)[None, :])
    factors = 1.0 + rules.substitution[item, substitute]
    return pd.DataFrame({
        "item": np.asarray(catalog.items.codes, dtype=object)[item],
        "substitute": np.asarray(catalog.items.codes, dtype=object)[substitute],
        "S": rules.substitution[item, substitute],
        "importers": importers[substitute].astype(int),
        "impact": factors * means[substitute],
    }, columns=SUBSTITUTION_COLUMNS)


def production_impacts(params: ParameterSet, rules: AdaptationRuleSet, catalog: Catalog) -> pd.DataFrame:
    """
    Multiplier of every (item, process) production rule times the mean base-year flow it scales, averaged over the
    areas where the link exists: input-driven output for alpha, the fixed rate for beta and the input volume for nu.
    """
    production = params.eta_prod * params.x0
    process_inputs = np.asarray((params.area_aggregator() @ sparse.diags(production) @ params.nu).todense())
    shape = (params.n_items, params.n_processes)

    frames = []
    for family, matrix in ((RuleFamily.ALPHA, params.alpha), (RuleFamily.BETA, params.beta),
                           (RuleFamily.NU, params.nu)):
        entries = matrix.tocoo()
        existing = entries.data > 0
        rows, cols, values = entries.row[existing], entries.col[existing], entries.data[existing]
        if family is RuleFamily.ALPHA:
            values = values * process_inputs[rows // params.n_items, cols]
        elif family is RuleFamily.NU:
            values = values * production[rows]
        _, counts, means = _group_means(rows % params.n_items, cols, values, shape)

        weights = rules.weights[family]
        item, process = np.nonzero(~np.isnan(weights) & (counts > 0))
        frames.append(pd.DataFrame({
            "family": family.value,
            "item": np.asarray(catalog.items.codes, dtype=object)[item],
            "process": np.asarray(catalog.processes.codes, dtype=object)[process],
            "W": weights[item, process],
            "areas": counts[item, process].astype(int),
            "impact": weights[item, process] * means[item, process],
        }, columns=PRODUCTION_COLUMNS))
    return pd.concat(frames, ignore_index=True)


def impact_estimators(params: ParameterSet, rules: AdaptationRuleSet, catalog: Catalog) -> ImpactReport:
    """
    Estimated impacts of the trade, substitution and production multiplier rules on the given base-year parameters.
    :param params:
    :param rules:
    :param catalog:
    :return:
    """
    if (rules.n_areas, rules.n_items, rules.n_processes) != (params.n_areas, params.n_items, params.n_processes):
        raise ValidationException("rule set and parameters cover different catalogs")
    report = ImpactReport(
        trade=trade_impacts(params, rules, catalog),
        substitution=substitution_impacts(params, rules, catalog),
        production=production_impacts(params, rules, catalog),
    )
    log.info(
        f"Estimated impacts of {len(report.trade)} trade, {len(report.substitution)} substitution "
        f"and {len(report.production)} production rules"
    )
    return report
