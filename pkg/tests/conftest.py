import logging

import numpy as np
import pytest

from gridedge.feeder import build_admittance, stock_feeder
from gridedge.feeder.builder import NOMINAL_VOLTAGE
from gridedge.synth import ScenarioConfig


@pytest.fixture(autouse=True)
def reset_gridedge_logger():
    yield
    # the shell disables propagation; put it back for caplog in later tests
    target = logging.getLogger("gridedge")
    for handler in list(target.handlers):
        target.removeHandler(handler)
    target.setLevel(logging.NOTSET)
    target.propagate = True


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def stock():
    return stock_feeder()


@pytest.fixture(scope="session")
def stock_adm(stock):
    return build_admittance(stock)


@pytest.fixture(scope="session")
def lossless_adm():
    return build_admittance(stock_feeder(lossless=True))


@pytest.fixture(scope="session")
def lv_stock():
    """The stock feeder at 230 V, where losses are large enough to see."""
    return stock_feeder(voltage=NOMINAL_VOLTAGE)


@pytest.fixture(scope="session")
def lv_stock_adm(lv_stock):
    return build_admittance(lv_stock)


@pytest.fixture
def quiet_scenario():
    """Four houses, one hour, no events, no PV, no noise."""
    return ScenarioConfig(
        n_houses=4,
        horizon=60,
        appliances={"rate": 0},
        smart_meter_accuracy=0.0,
        dpmu_accuracy=0.0,
        seed=3,
    )
