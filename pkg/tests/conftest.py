import pytest

from daeobs.model import builtin_wind_turbine, parse_model


@pytest.fixture(scope="session")
def wind_smooth():
    return builtin_wind_turbine("smooth")


@pytest.fixture(scope="session")
def wind_min():
    return builtin_wind_turbine("min_threshold")


LINEAR_DAE_DOC = """\
name: linear_test
diff_states: [x]
alg_states: [w]
outputs: [y]
f: ["-x"]
g: ["w - x"]
h: ["x"]
x0: [1.0]
w0_guess: [1.0]
"""


@pytest.fixture(scope="session")
def linear_dae():
    """ẋ = -x, w = x, y = x: everything is e^{-t}."""
    return parse_model(LINEAR_DAE_DOC)
