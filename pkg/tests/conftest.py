import pytest

from src.simulator import SimulationConfig
from tests.factory import make_catalog, make_params, stepped_series, write_world


@pytest.fixture
def catalog():
    return make_catalog()


@pytest.fixture
def params(catalog):
    return make_params(2000, catalog)


@pytest.fixture
def static_config():
    return SimulationConfig(tau=6)


@pytest.fixture
def data_dir(tmp_path, catalog):
    return write_world(str(tmp_path / "data"), stepped_series(catalog=catalog), catalog)
