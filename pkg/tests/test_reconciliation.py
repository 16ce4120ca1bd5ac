import numpy as np
import pytest

from src.analysis.reconciliation import SERIES, market_share, reconciliation_harness, sector_statistics
from src.calibration.events import CalibrationConfig
from src.calibration.rules import AdaptationRuleSet
from src.errors import MissingYearsException, ValidationException
from src.simulator import SimulationConfig
from tests.factory import A, WHEAT, stepped_series


@pytest.fixture
def yearly(catalog):
    return stepped_series(catalog=catalog)


def test_market_share():
    series = np.array([[1.0, 0.0, 3.0, 0.0]])
    shares = market_share(series, 2, 2)
    np.testing.assert_allclose(shares[0, [0, 2]], [0.25, 0.75])
    assert np.isnan(shares[0, [1, 3]]).all()


def test_sector_statistics(catalog):
    series = np.tile(np.arange(1.0, 10.0), (3, 1))
    frame = sector_statistics("baseline", series, catalog)
    assert len(frame) == 9
    assert (frame["share_std"] == 0).all()
    assert frame.loc[0, "per_capita_mean"] == pytest.approx(1.0 * 1000 / 1e6)


def test_replays_benchmark_events(yearly, catalog):
    result = reconciliation_harness(yearly, AdaptationRuleSet.empty(3, 3, 2), catalog,
                                    CalibrationConfig(), SimulationConfig(), first_year=2007, last_year=2010)
    [event] = result.events
    assert (event.area, event.item, event.year) == (A, WHEAT, 2007)

    assert set(result.series) == set(SERIES)
    for values in result.series.values():
        assert values.shape == (4, 9)
    benchmark = result.series["benchmark"]
    np.testing.assert_allclose(benchmark.sum(axis=1), benchmark[0].sum())
    assert result.series["static"][-1, A * 3 + WHEAT] < result.series["baseline"][-1, A * 3 + WHEAT]

    assert len(result.statistics) == 4 * 9
    summary = result.summary()
    assert list(summary["series"]) == list(SERIES)
    assert "share_std_mean" in summary.columns


def test_benchmark_years_must_exist(yearly, catalog):
    with pytest.raises(MissingYearsException) as info:
        reconciliation_harness(yearly, AdaptationRuleSet.empty(3, 3, 2), catalog, CalibrationConfig(),
                               SimulationConfig(), first_year=2011, last_year=2014)
    assert info.value.years == [2013, 2014]


def test_benchmark_range(yearly, catalog):
    with pytest.raises(ValidationException):
        reconciliation_harness(yearly, AdaptationRuleSet.empty(3, 3, 2), catalog, CalibrationConfig(),
                               SimulationConfig(), first_year=2010, last_year=2010)
