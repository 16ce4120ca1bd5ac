import numpy as np
import pandas as pd
import pytest

from src.calibration.rules import RULE_COLUMNS, AdaptationRuleSet
from src.errors import ScenarioException, ValidationException
from src.parameters import assign_entries
from src.simulator import (
    AdaptationKind,
    ShockSpec,
    ShockTarget,
    SimulationConfig,
    apply_adaptation,
    apply_substitution,
    detect_triggers,
    renormalize_constraints,
    run_baseline,
    run_scenario,
)
from tests.factory import A, B, BEEF, C, CROP, MAIZE, WHEAT
from tests.oracle import dense_trajectory


def rule_set(records, substitution=None):
    table = pd.DataFrame(
        [{"n_w": 1, "n_r": 1, "W": np.nan, "R": np.nan, **record} for record in records], columns=RULE_COLUMNS)
    return AdaptationRuleSet.from_table(table, 3, 3, 2, substitution)


def sector(area, item):
    return area * 3 + item


def test_baseline_matches_dense_iteration(params, static_config):
    trajectory = run_baseline(params, static_config)
    expected = dense_trajectory(params, static_config.tau, np.ones(params.n_sectors))
    np.testing.assert_allclose(trajectory.x, expected)
    np.testing.assert_allclose(trajectory.x, trajectory.o + trajectory.h)
    assert trajectory.tau == 6
    assert trajectory.x[1, sector(B, WHEAT)] == pytest.approx(5600.0)


def test_static_shock_matches_dense_iteration(params, static_config):
    shock = ShockSpec([ShockTarget(B, WHEAT, 1.0), ShockTarget(A, MAIZE, 0.25)])
    baseline = run_baseline(params, static_config)
    trajectory = run_scenario(params, shock, None, baseline, static_config)

    factors = shock.factors(params.n_areas, params.n_items)
    np.testing.assert_allclose(trajectory.x, dense_trajectory(params, static_config.tau, factors))
    assert (trajectory.o[:, sector(B, WHEAT)] == 0).all()
    assert trajectory.x[1, sector(B, WHEAT)] == pytest.approx(1600.0)
    assert trajectory.adaptations == ()


def test_zero_shock_is_the_baseline(params, static_config):
    baseline = run_baseline(params, static_config)
    trajectory = run_scenario(params, ShockSpec.single(C, MAIZE, 0.0), None, baseline, static_config)
    np.testing.assert_allclose(trajectory.x, baseline.x)


def test_empty_rules_reproduce_static_run(params):
    static_config = SimulationConfig(tau=5)
    adaptive_config = static_config.evolve(adaptation_enabled=True, substitution_enabled=True)
    baseline = run_baseline(params, static_config)
    shock = ShockSpec.single(B, WHEAT)

    static = run_scenario(params, shock, None, baseline, static_config)
    adaptive = run_scenario(params, shock, AdaptationRuleSet.empty(3, 3, 2), baseline, adaptive_config)
    np.testing.assert_allclose(adaptive.x, static.x)
    assert adaptive.params is params
    assert {record.kind for record in adaptive.adaptations} == {AdaptationKind.ADAPTATION,
                                                               AdaptationKind.SUBSTITUTION}


def test_adaptive_run_needs_rules(params):
    config = SimulationConfig(tau=3, adaptation_enabled=True)
    baseline = run_baseline(params, config.static())
    with pytest.raises(ScenarioException):
        run_scenario(params, ShockSpec.single(B, WHEAT), None, baseline, config)


def test_baseline_horizon_must_match(params):
    baseline = run_baseline(params, SimulationConfig(tau=3))
    with pytest.raises(ValidationException):
        run_scenario(params, ShockSpec.single(B, WHEAT), None, baseline, SimulationConfig(tau=4))


def test_import_rule_rewires_trade(params):
    rules = rule_set([{"family": "trade_import", "row": B, "col": A, "W": 2.0}])
    config = SimulationConfig(tau=4, adaptation_enabled=True)
    baseline = run_baseline(params, config.static())
    static = run_scenario(params, ShockSpec.single(B, WHEAT), None, baseline, config.static())
    adaptive = run_scenario(params, ShockSpec.single(B, WHEAT), rules, baseline, config)

    [record] = adaptive.adaptations
    assert (record.t, record.sector, record.kind) == (1, sector(B, WHEAT), AdaptationKind.ADAPTATION)
    assert record.loss == pytest.approx(5 / 7)
    assert record.shortfall == pytest.approx(4000.0)

    shares = adaptive.params.trade.toarray()
    assert shares[sector(B, WHEAT), sector(A, WHEAT)] == pytest.approx(10 / 17)
    assert shares[sector(C, WHEAT), sector(A, WHEAT)] == pytest.approx(7 / 17)
    np.testing.assert_allclose(adaptive.x[:2], static.x[:2])
    assert adaptive.x[2, sector(B, WHEAT)] > static.x[2, sector(B, WHEAT)]


def test_identity_multiplier_scales_link_by_loss(params):
    rules = rule_set([{"family": "trade_import", "row": B, "col": A, "W": 1.0}])
    config = SimulationConfig(tau=4, adaptation_enabled=True)
    baseline = run_baseline(params, config.static())
    static = run_scenario(params, ShockSpec.single(B, WHEAT), None, baseline, config.static())
    adaptive = run_scenario(params, ShockSpec.single(B, WHEAT), rules, baseline, config)

    # 0.5 * 5/7 against the untouched 0.5 to C
    shares = adaptive.params.trade.toarray()
    assert shares[sector(B, WHEAT), sector(A, WHEAT)] == pytest.approx(5 / 12)
    assert shares[sector(C, WHEAT), sector(A, WHEAT)] == pytest.approx(7 / 12)
    np.testing.assert_allclose(adaptive.x[:2], static.x[:2])
    assert adaptive.x[2, sector(B, WHEAT)] < static.x[2, sector(B, WHEAT)]


def test_substitution_raises_imports_of_substitutes(params):
    substitution = np.zeros((3, 3))
    substitution[WHEAT, MAIZE] = 0.5
    rules = rule_set([], substitution)
    config = SimulationConfig(tau=4, substitution_enabled=True)
    baseline = run_baseline(params, config.static())
    adaptive = run_scenario(params, ShockSpec.single(B, WHEAT), rules, baseline, config)

    [record] = adaptive.adaptations
    assert (record.t, record.sector, record.kind) == (2, sector(B, WHEAT), AdaptationKind.SUBSTITUTION)
    shares = adaptive.params.trade.toarray()
    assert shares[sector(B, MAIZE), sector(A, MAIZE)] == pytest.approx(0.6)
    assert shares[sector(C, MAIZE), sector(A, MAIZE)] == pytest.approx(0.4)
    np.testing.assert_allclose(adaptive.params.trade.exporter_totals()[[1, 4, 7]], 1.0)


def test_apply_substitution_scales_rows(params):
    substitution = np.zeros((3, 3))
    substitution[WHEAT, MAIZE] = 0.5
    substituted = apply_substitution(params, rule_set([], substitution), np.array([sector(B, WHEAT)]))
    shares = substituted.trade.toarray()
    assert shares[sector(B, MAIZE), sector(A, MAIZE)] == pytest.approx(0.75)
    assert shares[sector(A, MAIZE), sector(B, MAIZE)] == pytest.approx(0.5)


def test_rewiring_and_renormalization(params):
    rules = rule_set([
        {"family": "eta_prod", "row": WHEAT, "col": 0, "R": 0.4},
        {"family": "alpha", "row": WHEAT, "col": CROP, "R": 1.0},
        {"family": "beta", "row": WHEAT, "col": CROP, "W": 3.0},
    ])
    triggered = np.array([sector(B, WHEAT)])
    adapted = apply_adaptation(params, rules, triggered, np.array([0.5]))

    assert adapted.eta_prod[sector(B, WHEAT)] == pytest.approx(0.2)
    assert adapted.alpha[sector(B, WHEAT), CROP] == 0.0
    assert adapted.beta[sector(B, WHEAT), CROP] == pytest.approx(6000.0)
    assert adapted.beta[sector(A, WHEAT), CROP] == pytest.approx(6000.0)

    restored = renormalize_constraints(adapted, params)
    total = restored.eta_exp + restored.eta_prod + params.eta_residual()
    assert total[sector(B, WHEAT)] == pytest.approx(1.0)
    assert restored.eta_prod[sector(B, WHEAT)] == pytest.approx(0.2 / 1.2)
    np.testing.assert_allclose(restored.process_totals(restored.beta), params.process_totals(params.beta))
    assert restored.beta[sector(B, WHEAT), CROP] == pytest.approx(6000.0 * 9 / 11)
    restored.validate()


def test_renormalizing_unmodified_parameters(params):
    restored = renormalize_constraints(params, params)
    np.testing.assert_allclose(restored.trade.toarray(), params.trade.toarray(), rtol=1e-12)
    np.testing.assert_allclose(restored.nu.toarray(), params.nu.toarray(), rtol=1e-12)
    np.testing.assert_allclose(restored.alpha.toarray(), params.alpha.toarray(), rtol=1e-12)
    np.testing.assert_allclose(restored.beta.toarray(), params.beta.toarray(), rtol=1e-12)
    np.testing.assert_array_equal(restored.eta_exp, params.eta_exp)
    np.testing.assert_array_equal(restored.eta_prod, params.eta_prod)


def test_renormalizing_restores_doubled_alpha(params):
    restored = renormalize_constraints(params.evolve(alpha=params.alpha * 2.0), params)
    np.testing.assert_allclose(restored.alpha.toarray(), params.alpha.toarray(), rtol=1e-12)


def test_renormalizing_tripled_import_share(params):
    trade = assign_entries(params.trade.matrix, [sector(B, WHEAT)], [sector(A, WHEAT)], [1.5])
    restored = renormalize_constraints(params.evolve(trade=params.trade.with_matrix(trade)), params)
    shares = restored.trade.toarray()
    assert shares[sector(B, WHEAT), sector(A, WHEAT)] == pytest.approx(0.75)
    assert shares[sector(C, WHEAT), sector(A, WHEAT)] == pytest.approx(0.25)
    assert shares[sector(A, WHEAT), sector(B, WHEAT)] == pytest.approx(0.5)


def test_apply_adaptation_without_rules_is_a_no_op(params):
    assert apply_adaptation(params, AdaptationRuleSet.empty(3, 3, 2), np.array([sector(B, WHEAT)]),
                            np.array([0.5])) is params


def test_detect_triggers():
    config = SimulationConfig(tau=2)
    triggered, losses, shortfalls = detect_triggers(np.array([100.0, 5000.0, 0.0]), np.array([10.0, 2000.0, 0.0]),
                                                    config)
    np.testing.assert_array_equal(triggered, [1])
    np.testing.assert_allclose(losses, [0.6])
    np.testing.assert_allclose(shortfalls, [3000.0])


def test_shock_parsing(catalog):
    shock = ShockSpec.parse([{"sector": "B:wheat"}, {"area": "Gamma", "item": "maize", "phi": 0.5}], catalog)
    assert shock.targets == (ShockTarget(B, WHEAT, 1.0), ShockTarget(C, MAIZE, 0.5))
    assert shock.describe(catalog) == [{"sector": "B:wheat", "phi": 1.0}, {"sector": "C:maize", "phi": 0.5}]

    with pytest.raises(ScenarioException) as info:
        ShockSpec.parse([{"sector": "B:rice"}], catalog, "rice")
    assert info.value.scenario == "rice"
    with pytest.raises(ScenarioException):
        ShockSpec.parse([{"phi": 1.0}], catalog)
    with pytest.raises(ScenarioException):
        ShockSpec.parse([{"sector": "B:wheat"}, {"sector": "Beta:Wheat"}], catalog)
    with pytest.raises(ValidationException):
        ShockTarget(B, BEEF, 1.5)


def test_adaptation_needs_two_steps():
    with pytest.raises(ValidationException):
        SimulationConfig(tau=1, adaptation_enabled=True)
    assert not SimulationConfig(tau=1).adaptive


def test_trajectory_frames(params, catalog, static_config):
    trajectory = run_baseline(params, static_config)
    frame = trajectory.frame(catalog)
    assert list(frame.columns) == ["t", "area", "item", "x", "o", "h"]
    assert len(frame) == 7 * 9
    assert trajectory.adaptation_frame(catalog).empty
