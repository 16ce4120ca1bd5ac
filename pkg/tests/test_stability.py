import math

import numpy as np
import pytest

from src.calibration.events import CalibrationConfig
from src.calibration.growth import normalize_growth
from src.calibration.stability import matthews_correlation, split_halves, stability_analysis, stability_sweep
from src.errors import DataException
from tests.factory import stepped_series


@pytest.fixture
def normalized(catalog):
    return normalize_growth(stepped_series(catalog=catalog), 1992)


@pytest.fixture
def config():
    return CalibrationConfig(stability_split_year=2002, n_permutations=100, rng_seed=3)


def test_matthews_correlation():
    assert matthews_correlation([True, False, True], [True, False, True]) == 1.0
    assert matthews_correlation([True, False], [False, True]) == -1.0
    assert matthews_correlation([1, 1, 0, 0], [1, 0, 0, 0]) == pytest.approx(2 / math.sqrt(12))
    assert matthews_correlation([False, False], [False, True]) == 0.0
    assert matthews_correlation(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


def test_halves_need_enough_years(normalized, config):
    with pytest.raises(DataException):
        split_halves(normalized, config.evolve(stability_split_year=1995))
    first, second = split_halves(normalized, config)
    assert first[-1].year == second[0].year == 2002


def test_recurring_event_gives_stable_rules(normalized, catalog, config):
    report = stability_analysis(normalized, catalog, config)
    assert report.events_first == 1
    assert report.events_second == 1
    assert set(report.mcc.values()) == {1.0}
    assert "substitution" in report.mcc

    frame = report.frame()
    assert len(frame) == 8
    assert (frame["split_year"] == 2002).all()


def test_sweep_varies_one_threshold_at_a_time(normalized, catalog, config):
    sweep = stability_sweep(normalized, catalog, config, grid=[0.3, 0.35])
    assert len(sweep) == 2 * 2 * 8
    assert set(sweep["varied"]) == {"delta_rel", "delta_dev"}
    relative = sweep[sweep["varied"] == "delta_rel"]
    assert set(relative["delta_rel"]) == {0.3, 0.35}
    assert set(relative["delta_dev"]) == {config.delta_dev}
