import os

import numpy as np
import pandas as pd
import pytest
from scipy import sparse

from src.errors import DataException, MissingYearsException, ValidationException
from src.parameters import (
    SparseItemMatrix,
    assign_entries,
    available_years,
    load_parameter_set,
    load_years,
    threshold_small_shares,
    write_parameter_set,
)
from tests.factory import A, B, C, MAIZE, WHEAT, make_params, uniform_trade


@pytest.fixture
def years_dir(tmp_path, params, catalog):
    path = str(tmp_path / "years")
    write_parameter_set(params, path, catalog)
    return path


def test_parameter_round_trip(years_dir, params, catalog):
    loaded = load_parameter_set(years_dir, 2000, catalog)
    np.testing.assert_allclose(loaded.alpha.toarray(), params.alpha.toarray())
    np.testing.assert_allclose(loaded.beta.toarray(), params.beta.toarray())
    np.testing.assert_allclose(loaded.nu.toarray(), params.nu.toarray())
    np.testing.assert_allclose(loaded.trade.toarray(), params.trade.toarray())
    np.testing.assert_allclose(loaded.eta_exp, params.eta_exp)
    np.testing.assert_allclose(loaded.eta_prod, params.eta_prod)
    np.testing.assert_allclose(loaded.x0, params.x0)
    assert loaded.report.trade_columns == 0
    assert available_years(years_dir) == [2000]


def test_exporter_shares_are_repaired(years_dir, catalog):
    path = os.path.join(years_dir, "2000", "trade.csv")
    frame = pd.read_csv(path)
    selected = (frame["item"] == "wheat") & (frame["exporter"] == "B")
    frame.loc[selected, "share"] = 0.45
    frame.to_csv(path, index=False)

    loaded = load_parameter_set(years_dir, 2000, catalog)
    totals = loaded.trade.exporter_totals()
    assert totals[B * 3 + WHEAT] == pytest.approx(1.0)
    assert loaded.report.trade_columns == 1
    assert loaded.report.max_deviation == pytest.approx(0.1)


def test_duplicate_entry(years_dir, catalog):
    path = os.path.join(years_dir, "2000", "alpha.csv")
    frame = pd.read_csv(path)
    pd.concat([frame, frame.iloc[:1]]).to_csv(path, index=False)
    with pytest.raises(ValidationException) as info:
        load_parameter_set(years_dir, 2000, catalog)
    assert info.value.line == len(frame) + 2


def test_alpha_and_beta_overlap(years_dir, catalog):
    path = os.path.join(years_dir, "2000", "beta.csv")
    frame = pd.read_csv(path)
    extra = pd.DataFrame({"area": ["A"], "item": ["beef"], "process": ["feedlot"], "value": [1.0]})
    pd.concat([frame, extra]).to_csv(path, index=False)
    with pytest.raises(ValidationException):
        load_parameter_set(years_dir, 2000, catalog)


def test_unknown_area_reports_line(years_dir, catalog):
    path = os.path.join(years_dir, "2000", "x0.csv")
    frame = pd.read_csv(path)
    frame.loc[2, "area"] = "Z"
    frame.to_csv(path, index=False)
    with pytest.raises(DataException) as info:
        load_parameter_set(years_dir, 2000, catalog)
    assert info.value.line == 4
    assert info.value.exit_code == 2


def test_trade_split_per_item(years_dir, params, catalog):
    directory = os.path.join(years_dir, "2000")
    frame = pd.read_csv(os.path.join(directory, "trade.csv"))
    os.remove(os.path.join(directory, "trade.csv"))
    for item, rows in frame.groupby("item"):
        rows.drop(columns="item").to_csv(os.path.join(directory, f"trade_{item}.csv"), index=False)

    loaded = load_parameter_set(years_dir, 2000, catalog)
    np.testing.assert_allclose(loaded.trade.toarray(), params.trade.toarray())


def test_missing_years(years_dir, catalog):
    with pytest.raises(MissingYearsException) as info:
        load_years(years_dir, [2000, 2001, 2002], catalog)
    assert info.value.years == [2001, 2002]
    assert info.value.as_dict()["years"] == [2001, 2002]


def test_threshold_small_shares(catalog):
    trade = uniform_trade()
    trade[WHEAT][B] = {A: 0.9995, C: 0.0005}
    params = make_params(2000, catalog, trade=trade, eta_exp={(B, MAIZE): 0.0005})

    thresholded = threshold_small_shares(params, 1e-3)
    shares = thresholded.trade.toarray()
    assert shares[C * 3 + WHEAT, B * 3 + WHEAT] == 0.0
    assert shares[A * 3 + WHEAT, B * 3 + WHEAT] == pytest.approx(1.0)
    assert thresholded.eta_exp[B * 3 + MAIZE] == 0.0
    assert thresholded.eta_prod[B * 3 + MAIZE] == pytest.approx(0.5 / 0.9995)
    assert thresholded.report.thresholded == 2
    thresholded.validate()


def test_threshold_keeps_shares_at_the_floor(catalog):
    trade = uniform_trade()
    trade[WHEAT][B] = {A: 0.999, C: 0.001}
    params = make_params(2000, catalog, trade=trade, eta_exp={(B, MAIZE): 0.001})

    thresholded = threshold_small_shares(params, 1e-3)
    shares = thresholded.trade.toarray()
    assert shares[C * 3 + WHEAT, B * 3 + WHEAT] == 0.001
    assert shares[A * 3 + WHEAT, B * 3 + WHEAT] == 0.999
    assert thresholded.eta_exp[B * 3 + MAIZE] == 0.001
    assert thresholded.report.thresholded == 0


def test_threshold_is_idempotent(catalog):
    trade = uniform_trade()
    trade[WHEAT][B] = {A: 0.9995, C: 0.0005}
    params = make_params(2000, catalog, trade=trade, eta_exp={(B, MAIZE): 0.0005})

    once = threshold_small_shares(params, 1e-3)
    twice = threshold_small_shares(once, 1e-3)
    np.testing.assert_array_equal(twice.trade.toarray(), once.trade.toarray())
    np.testing.assert_array_equal(twice.nu.toarray(), once.nu.toarray())
    np.testing.assert_array_equal(twice.eta_exp, once.eta_exp)
    np.testing.assert_array_equal(twice.eta_prod, once.eta_prod)
    assert twice.report.thresholded == once.report.thresholded


def test_validate_rejects_partial_exporter(catalog):
    trade = uniform_trade()
    trade[MAIZE][A] = {B: 0.5, C: 0.3}
    with pytest.raises(ValidationException):
        make_params(2000, catalog, trade=trade).validate()


def test_cross_item_trade_entry():
    matrix = sparse.csr_matrix(([0.5], ([0], [1])), shape=(6, 6))
    with pytest.raises(ValidationException):
        SparseItemMatrix(matrix, 2, 3)


def test_assign_entries_last_write_wins():
    matrix = sparse.csr_matrix(np.array([[1.0, 0.0], [0.0, 2.0]]))
    result = assign_entries(matrix, [0, 0, 1], [1, 1, 1], [3.0, 4.0, 0.0])
    np.testing.assert_array_equal(result.toarray(), [[1.0, 4.0], [0.0, 0.0]])
    assert result.nnz == 2
