import logging
from enum import Enum
from typing import Optional, Sequence

import attrs
import numpy as np
import pandas as pd
from scipy import sparse

from .calibration.events import at_least, positive
from .calibration.rules import AdaptationRuleSet, RuleFamily
from .catalog import Catalog
from .errors import DataException, ScenarioException, ValidationException
from .parameters import ParameterSet, assign_entries, scale_columns, scale_rows

log = logging.getLogger(__name__)


@attrs.frozen
class SimulationConfig:
    tau: int = attrs.field(default=10, converter=int, validator=at_least(1))
    adaptation_enabled: bool = attrs.field(default=False, converter=bool)
    substitution_enabled: bool = attrs.field(default=False, converter=bool)
    trigger_delta_rel: float = attrs.field(default=0.26, converter=float, validator=positive)
    trigger_delta_abs: float = attrs.field(default=1000.0, converter=float, validator=positive)

    def __attrs_post_init__(self):
        if (self.adaptation_enabled or self.substitution_enabled) and self.tau < 2:
            raise ValidationException(f"tau must be at least 2 when adaptation is enabled, got {self.tau}")

    @property
    def adaptive(self) -> bool:
        return self.adaptation_enabled or self.substitution_enabled

    def evolve(self, **changes) -> "SimulationConfig":
        return attrs.evolve(self, **changes)

    def static(self) -> "SimulationConfig":
        return self.evolve(adaptation_enabled=False, substitution_enabled=False)


def _fraction(instance, attribute, value):
    if not 0 <= value <= 1:
        raise ValidationException(f"shock fraction must lie in [0, 1], got {value}")


@attrs.frozen
class ShockTarget:
    area: int
    item: int
    phi: float = attrs.field(default=1.0, converter=float, validator=_fraction)


@attrs.frozen
class ShockSpec:
    targets: tuple[ShockTarget, ...] = attrs.field(converter=tuple)

    def __attrs_post_init__(self):
        sectors = [(target.area, target.item) for target in self.targets]
        if len(set(sectors)) != len(sectors):
            raise ScenarioException("a sector is shocked more than once")

    @classmethod
    def single(cls, area: int, item: int, phi: float = 1.0) -> "ShockSpec":
        return cls((ShockTarget(area, item, phi),))

    @classmethod
    def parse(cls, entries: Sequence[dict], catalog: Catalog, scenario: Optional[str] = None) -> "ShockSpec":
        """
        Builds a shock from ``{"sector": "AREA:ITEM", "phi": 1.0}`` or ``{"area": ..., "item": ..., "phi": ...}``
        entries.
        """
        targets = []
        for entry in entries:
            try:
                if "sector" in entry:
                    area, item = catalog.resolve_sector(entry["sector"])
                else:
                    area, item = catalog.areas.index(entry["area"]), catalog.items.index(entry["item"])
            except KeyError as exception:
                raise ScenarioException(f"invalid shock target {entry!r}", scenario) from exception
            except DataException as exception:
                raise ScenarioException(f"shock target {entry!r} is not in the catalog", scenario) from exception
            targets.append(ShockTarget(area, item, entry.get("phi", 1.0)))
        return cls(targets)

    def combine(self, other: "ShockSpec") -> "ShockSpec":
        return ShockSpec(self.targets + other.targets)

    def sectors(self, n_items: int) -> np.ndarray:
        return np.array([target.area * n_items + target.item for target in self.targets], dtype=np.int64)

    def factors(self, n_areas: int, n_items: int) -> np.ndarray:
        """
        Per-sector output multipliers ``1 - phi``.
        """
        factors = np.ones(n_areas * n_items)
        for target in self.targets:
            if not (0 <= target.area < n_areas and 0 <= target.item < n_items):
                raise ScenarioException(f"shock target ({target.area}, {target.item}) is outside the catalog")
            factors[target.area * n_items + target.item] = 1.0 - target.phi
        return factors

    def describe(self, catalog: Catalog) -> list[dict]:
        return [{
            "sector": f"{catalog.areas.codes[target.area]}:{catalog.items.codes[target.item]}",
            "phi": target.phi,
        } for target in self.targets]


class AdaptationKind(Enum):
    ADAPTATION = "adaptation"
    SUBSTITUTION = "substitution"


@attrs.frozen
class AdaptationRecord:
    t: int
    sector: int
    loss: float
    shortfall: float
    kind: AdaptationKind


@attrs.frozen(eq=False)
class Trajectory:
    x: np.ndarray
    o: np.ndarray
    h: np.ndarray
    p_alloc: np.ndarray
    e_alloc: np.ndarray
    params: ParameterSet
    adaptations: tuple[AdaptationRecord, ...] = ()

    @property
    def tau(self) -> int:
        return self.x.shape[0] - 1

    def final(self) -> np.ndarray:
        return self.x[-1]

    def frame(self, catalog: Catalog) -> pd.DataFrame:
        steps, n_sectors = self.x.shape
        sectors = np.tile(np.arange(n_sectors), steps)
        areas, items = np.divmod(sectors, catalog.n_items)
        return pd.DataFrame({
            "t": np.repeat(np.arange(steps), n_sectors),
            "area": np.asarray(catalog.areas.codes, dtype=object)[areas],
            "item": np.asarray(catalog.items.codes, dtype=object)[items],
            "x": self.x.ravel(),
            "o": self.o.ravel(),
            "h": self.h.ravel(),
        })

    def adaptation_frame(self, catalog: Catalog) -> pd.DataFrame:
        return pd.DataFrame({
            "t": [record.t for record in self.adaptations],
            "kind": [record.kind.value for record in self.adaptations],
            "area": [catalog.areas.codes[record.sector // catalog.n_items] for record in self.adaptations],
            "item": [catalog.items.codes[record.sector % catalog.n_items] for record in self.adaptations],
            "loss": [record.loss for record in self.adaptations],
            "shortfall": [record.shortfall for record in self.adaptations],
        }, columns=["t", "kind", "area", "item", "loss", "shortfall"])


class Engine:
    """
    Production, trade and allocation operators of one parameter set.
    """

    def __init__(self, params: ParameterSet):
        self.params = params
        n_items = params.n_items
        n_processes = params.n_processes
        width = params.n_areas * n_processes

        alpha = params.alpha.tocoo()
        self.alpha_op = sparse.csr_matrix(
            (alpha.data, (alpha.row, (alpha.row // n_items) * n_processes + alpha.col)),
            shape=(params.n_sectors, width),
        )
        nu = params.nu.tocoo()
        self.nu_op = sparse.csr_matrix(
            (nu.data, ((nu.row // n_items) * n_processes + nu.col, nu.row)),
            shape=(width, params.n_sectors),
        )
        self.beta_out = np.asarray(params.beta.sum(axis=1)).ravel()
        self.trade = params.trade.matrix

    def step(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        :param x: availability of the previous step
        :return: output and trade inflow of the next step
        """
        production = self.params.eta_prod * x
        exports = self.params.eta_exp * x
        output = self.alpha_op @ (self.nu_op @ production) + self.beta_out
        inflow = self.trade @ exports
        return output, inflow


def _simulate(params: ParameterSet, config: SimulationConfig, factors: np.ndarray,
              rules: Optional[AdaptationRuleSet] = None, baseline: Optional["Trajectory"] = None) -> Trajectory:
    steps = config.tau + 1
    n_sectors = params.n_sectors
    x = np.zeros((steps, n_sectors))
    o = np.zeros((steps, n_sectors))
    h = np.zeros((steps, n_sectors))
    p_alloc = np.zeros((steps, n_sectors))
    e_alloc = np.zeros((steps, n_sectors))
    records = []

    engine = Engine(params)
    o[0] = params.x0 * factors
    x[0] = o[0]
    p_alloc[0] = engine.params.eta_prod * x[0]
    e_alloc[0] = engine.params.eta_exp * x[0]

    for t in range(1, steps):
        output, inflow = engine.step(x[t - 1])
        o[t] = output * factors
        h[t] = inflow
        x[t] = o[t] + h[t]

        if rules is not None and baseline is not None:
            if t == 1 and config.adaptation_enabled:
                triggered, losses, shortfalls = detect_triggers(baseline.x[t], x[t], config)
                if triggered.size:
                    adapted = apply_adaptation(engine.params, rules, triggered, losses)
                    if adapted is not engine.params:
                        engine = Engine(renormalize_constraints(adapted, engine.params))
                    records.extend(AdaptationRecord(t, int(sector), float(loss), float(shortfall),
                                                    AdaptationKind.ADAPTATION)
                                   for sector, loss, shortfall in zip(triggered, losses, shortfalls))
                    log.debug(f"{triggered.size} sectors adapted at t={t}")
            if t == 2 and config.substitution_enabled:
                triggered, losses, shortfalls = detect_triggers(baseline.x[t], x[t], config)
                if triggered.size:
                    substituted = apply_substitution(engine.params, rules, triggered)
                    if substituted is not engine.params:
                        engine = Engine(renormalize_trade(substituted, engine.params))
                    records.extend(AdaptationRecord(t, int(sector), float(loss), float(shortfall),
                                                    AdaptationKind.SUBSTITUTION)
                                   for sector, loss, shortfall in zip(triggered, losses, shortfalls))
                    log.debug(f"{triggered.size} sectors substituted at t={t}")

        p_alloc[t] = engine.params.eta_prod * x[t]
        e_alloc[t] = engine.params.eta_exp * x[t]

    return Trajectory(x, o, h, p_alloc, e_alloc, engine.params, tuple(records))


def run_baseline(params: ParameterSet, config: SimulationConfig) -> Trajectory:
    """
    Iterates the unshocked model for ``tau`` steps with fixed parameters.
    """
    return _simulate(params, config, np.ones(params.n_sectors))


def run_scenario(params: ParameterSet, shock: ShockSpec, rules: Optional[AdaptationRuleSet], baseline: Trajectory,
                 config: SimulationConfig) -> Trajectory:
    """
    Iterates the model with the shocked sectors' output reduced by ``phi`` at every step. With adaptation enabled,
    sectors short of the baseline at t=1 adapt their parameters; with substitution enabled, sectors still short at
    t=2 raise imports of their substitutes.
    :param params:
    :param shock:
    :param rules: may be None for static runs
    :param baseline: run_baseline output for the same parameters and horizon
    :param config:
    :return:
    """
    factors = shock.factors(params.n_areas, params.n_items)
    if baseline.x.shape != (config.tau + 1, params.n_sectors):
        raise ValidationException(f"baseline has shape {baseline.x.shape}, expected {(config.tau + 1, params.n_sectors)}")
    if config.adaptive and rules is None:
        raise ScenarioException("adaptive runs need a rule set")
    return _simulate(params, config, factors, rules, baseline)


def detect_triggers(baseline: np.ndarray, current: np.ndarray,
                    config: SimulationConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Sectors whose availability falls short of the baseline by more than both trigger thresholds.
    :return: sector indices, relative losses and absolute shortfalls
    """
    shortfall = baseline - current
    positive_baseline = baseline > 0
    loss = np.zeros_like(baseline)
    np.divide(shortfall, baseline, out=loss, where=positive_baseline)
    triggered = np.flatnonzero(
        positive_baseline & (loss > config.trigger_delta_rel) & (shortfall > config.trigger_delta_abs))
    return triggered, loss[triggered], shortfall[triggered]


def _adapted_values(values: np.ndarray, weights: np.ndarray, rewirings: np.ndarray, losses: np.ndarray,
                    blocked: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """
    :return: mask of adapted entries and their new values
    """
    losses = np.broadcast_to(losses, values.shape)
    weighted = (values > 0) & ~np.isnan(weights)
    rewired = (values == 0) & ~np.isnan(rewirings) & (np.nan_to_num(rewirings) > 0)
    if blocked is not None:
        rewired &= ~blocked
    new = np.where(weighted, losses * np.nan_to_num(weights) * values, 0.0)
    new = np.where(rewired, losses * np.nan_to_num(rewirings), new)
    return weighted | rewired, new


def _adapt_process(matrix: sparse.csr_matrix, family: RuleFamily, rules: AdaptationRuleSet, sectors: np.ndarray,
                   items: np.ndarray, losses: np.ndarray, blocked: Optional[np.ndarray] = None) -> sparse.csr_matrix:
    values = matrix[sectors].toarray()
    mask, new = _adapted_values(values, rules.weights[family][items], rules.rewirings[family][items],
                                losses[:, None], blocked)
    rows, cols = np.nonzero(mask)
    if not rows.size:
        return matrix
    return assign_entries(matrix, sectors[rows], cols, new[rows, cols])


def _adapt_vector(vector: np.ndarray, family: RuleFamily, rules: AdaptationRuleSet, sectors: np.ndarray,
                  items: np.ndarray, losses: np.ndarray) -> np.ndarray:
    mask, new = _adapted_values(vector[sectors], rules.weights[family][items, 0], rules.rewirings[family][items, 0],
                                losses)
    if not mask.any():
        return vector
    adapted = vector.copy()
    adapted[sectors[mask]] = new[mask]
    return adapted


def apply_adaptation(params: ParameterSet, rules: AdaptationRuleSet, sectors: np.ndarray,
                     losses: np.ndarray) -> ParameterSet:
    """
    Applies ``v = l * W * v`` to existing and ``v = l * R`` to absent entries linked to each triggered sector.
    Entries without a rule are left untouched; rewiring never opens an output rate where the other output family
    is already positive.
    :param params: current parameters
    :param rules:
    :param sectors: triggered sector indices
    :param losses: relative loss per triggered sector
    :return: adapted parameters, not yet renormalized
    """
    sectors = np.asarray(sectors, dtype=np.int64)
    losses = np.asarray(losses, dtype=float)
    n_items, n_areas = params.n_items, params.n_areas
    areas, items = np.divmod(sectors, n_items)

    alpha_rows = params.alpha[sectors].toarray()
    beta_rows = params.beta[sectors].toarray()
    alpha = _adapt_process(params.alpha, RuleFamily.ALPHA, rules, sectors, items, losses, blocked=beta_rows > 0)
    alpha_opened = (alpha_rows == 0) & (alpha[sectors].toarray() > 0)
    beta = _adapt_process(params.beta, RuleFamily.BETA, rules, sectors, items, losses,
                          blocked=(alpha_rows > 0) | alpha_opened)
    nu = _adapt_process(params.nu, RuleFamily.NU, rules, sectors, items, losses)
    eta_exp = _adapt_vector(params.eta_exp, RuleFamily.ETA_EXP, rules, sectors, items, losses)
    eta_prod = _adapt_vector(params.eta_prod, RuleFamily.ETA_PROD, rules, sectors, items, losses)

    # import row (a, i) spans columns (b, i); export column (a, i) spans rows (b, i)
    partners = np.tile(np.arange(n_areas), sectors.size)
    trigger_areas = np.repeat(areas, n_areas)
    trigger_sectors = np.repeat(sectors, n_areas)
    trigger_losses = np.repeat(losses, n_areas)
    partner_sectors = partners * n_items + np.repeat(items, n_areas)
    matrix = params.trade.matrix

    rows_all, cols_all, values_all = [], [], []
    for family, rows, cols, keys in (
            (RuleFamily.TRADE_IMPORT, trigger_sectors, partner_sectors, (trigger_areas, partners)),
            (RuleFamily.TRADE_EXPORT, partner_sectors, trigger_sectors, (partners, trigger_areas)),
    ):
        values = np.asarray(matrix[rows, cols]).ravel()
        mask, new = _adapted_values(values, rules.weights[family][keys], rules.rewirings[family][keys],
                                    trigger_losses)
        rows_all.append(rows[mask])
        cols_all.append(cols[mask])
        values_all.append(new[mask])
    rows = np.concatenate(rows_all)
    trade = params.trade
    if rows.size:
        trade = trade.with_matrix(assign_entries(matrix, rows, np.concatenate(cols_all), np.concatenate(values_all)))

    unchanged = (alpha is params.alpha and beta is params.beta and nu is params.nu and trade is params.trade
                 and eta_exp is params.eta_exp and eta_prod is params.eta_prod)
    if unchanged:
        return params
    return params.evolve(alpha=alpha, beta=beta, nu=nu, eta_exp=eta_exp, eta_prod=eta_prod, trade=trade)


def apply_substitution(params: ParameterSet, rules: AdaptationRuleSet, sectors: np.ndarray) -> ParameterSet:
    """
    Scales the existing import links of every substitute ``j`` of a triggered sector ``(a, i)`` by ``1 + S[i, j]``;
    several triggered items of one area compound.
    """
    n_items = params.n_items
    factors = np.ones((params.n_areas, n_items))
    for sector in np.asarray(sectors, dtype=np.int64):
        area, item = divmod(int(sector), n_items)
        substitutes = rules.substitution[item] > 0
        factors[area, substitutes] *= 1.0 + rules.substitution[item, substitutes]
    if np.all(factors == 1.0):
        return params
    return params.evolve(trade=params.trade.with_matrix(scale_rows(params.trade.matrix, factors.ravel())))


def _restore_totals(new: np.ndarray, original: np.ndarray, cap: Optional[float] = None) -> np.ndarray:
    """
    Factors that bring ``new`` group totals back to ``original``. Groups without an original total keep their new
    total (capped at ``cap``), groups that lost every entry stay empty.
    """
    changed = new != original
    target = np.where(original > 0, original, new if cap is None else np.minimum(new, cap))
    factors = np.where(changed & (new > 0), target / np.where(new > 0, new, 1.0), 1.0)
    return factors


def renormalize_trade(params: ParameterSet, originals: ParameterSet) -> ParameterSet:
    """
    Rescales every exporter's shares to its original total; exporters that had no partners are normalized to one.
    """
    new = params.trade.exporter_totals()
    original = originals.trade.exporter_totals()
    emptied = np.count_nonzero((new == 0) & (original > 0))
    if emptied:
        log.warning(f"{emptied} exporters lost every trade link during adaptation")
    factors = _restore_totals(new, np.where(original > 0, original, np.where(new > 0, 1.0, 0.0)))
    return params.evolve(trade=params.trade.with_matrix(scale_columns(params.trade.matrix, factors)))


def renormalize_constraints(params: ParameterSet, originals: ParameterSet) -> ParameterSet:
    """
    Restores the share and conservation constraints after adaptation, relative to the parameters before it:

    - each exporter's trade shares sum to their original total,
    - each sector's input shares sum to their original total (at most one for newly opened rows),
    - export, production and residual allocation shares sum to one, the residual taken from the originals,
    - each (area, process) keeps its original total output rate for alpha and for beta.
    :param params: adapted parameters
    :param originals: parameters before adaptation
    :return:
    """
    params = renormalize_trade(params, originals)

    new = np.asarray(params.nu.sum(axis=1)).ravel()
    original = np.asarray(originals.nu.sum(axis=1)).ravel()
    if np.any((new == 0) & (original > 0)):
        log.warning(f"{np.count_nonzero((new == 0) & (original > 0))} sectors lost every production input share")
    nu = scale_rows(params.nu, _restore_totals(new, original, cap=1.0))

    residual = originals.eta_residual()
    changed = (params.eta_exp != originals.eta_exp) | (params.eta_prod != originals.eta_prod)
    total = params.eta_exp + params.eta_prod + residual
    factors = np.where(changed & (total > 0), 1.0 / np.where(total > 0, total, 1.0), 1.0)
    eta_exp = params.eta_exp * factors
    eta_prod = params.eta_prod * factors

    alpha = _restore_process_totals(params, params.alpha, originals.alpha)
    beta = _restore_process_totals(params, params.beta, originals.beta)
    return params.evolve(nu=nu, eta_exp=eta_exp, eta_prod=eta_prod, alpha=alpha, beta=beta)


def _restore_process_totals(params: ParameterSet, matrix: sparse.csr_matrix,
                            original: sparse.csr_matrix) -> sparse.csr_matrix:
    new_totals = params.process_totals(matrix)
    original_totals = params.process_totals(original)
    emptied = np.count_nonzero((new_totals == 0) & (original_totals > 0))
    if emptied:
        log.warning(f"{emptied} processes lost every output during adaptation")
    factors = _restore_totals(new_totals, original_totals)
    coo = matrix.tocoo()
    scaled = sparse.csr_matrix(
        (coo.data * factors[coo.row // params.n_items, coo.col], (coo.row, coo.col)), shape=matrix.shape)
    scaled.eliminate_zeros()
    scaled.sort_indices()
    return scaled
