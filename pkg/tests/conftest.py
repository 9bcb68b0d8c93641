"""Shared fixtures: reference parameter sets, flows, and the bundled weights."""

import os

import numpy as np
import pytest

from gntsflow import (
    ConditionVector,
    FitResult,
    FlowModel,
    GNTSParams,
    GStdNTSParams,
    load_model,
)

ARTIFACT_PATH = os.path.join(os.path.dirname(__file__), "..", "artifacts", "flow_desk.json")

# Three standardized parameter sets used across the distributional tests.
EXAMPLE_1 = GStdNTSParams(
    alpha=(1.25, 1.25), theta=(3.0, 3.0), beta=(0.0, 0.0),
    R=((1.0, 0.0), (0.0, 1.0)),
)
EXAMPLE_2 = GStdNTSParams(
    alpha=(1.25, 1.75), theta=(3.0, 5.0), beta=(2.64, -4.49),
    R=((1.0, -0.7), (-0.7, 1.0)),
)
EXAMPLE_3 = GStdNTSParams(
    alpha=(0.75, 1.25), theta=(1.0, 3.0), beta=(1.24, -2.64),
    R=((1.0, 0.5), (0.5, 1.0)),
)
EXAMPLES = (EXAMPLE_1, EXAMPLE_2, EXAMPLE_3)


def std_condition(std: GStdNTSParams) -> np.ndarray:
    return ConditionVector.from_std_params(std).to_array()


# Daily-scale market fit used by calibration and pricing tests: JPY/USD FX
# forward and Nikkei-in-dollars legs, 2012-2017 window.
FIT_REF = FitResult(
    m=np.array([-2.766e-4, 9.847e-5]),
    s=np.array([5.812e-3, 1.357e-2]),
    std_params=GStdNTSParams(
        alpha=(1.0171, 1.2300),
        theta=(1.365, 0.6147),
        beta=(0.1978, -0.2188),
        R=((1.0, 0.3134), (0.3134, 1.0)),
    ),
    loglik=float("nan"),
    ks_stat=float("nan"),
    ks_p=float("nan"),
    dt=1.0 / 252.0,
    diagnostics={"source": "reference"},
)


@pytest.fixture(scope="session")
def fit_ref() -> FitResult:
    return FIT_REF


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20260817)


@pytest.fixture(scope="session")
def zero_flow() -> FlowModel:
    """Fresh model: zero-initialized couplings make it an exact identity map."""
    return FlowModel(np.random.default_rng(0))


@pytest.fixture(scope="session")
def bumped_flow() -> FlowModel:
    """Model with small random output-layer weights: a nontrivial invertible map."""
    model = FlowModel(np.random.default_rng(1))
    prng = np.random.default_rng(42)
    for net in model.scale_nets + model.translate_nets:
        net.weights[-1] = 0.05 * prng.standard_normal(net.weights[-1].shape)
        net.biases[-1] = 0.05 * prng.standard_normal(net.biases[-1].shape)
    return model


@pytest.fixture(scope="session")
def trained_flow() -> FlowModel:
    """Bundled production weights; unit tests skip when absent, acceptance fails."""
    if not os.path.exists(ARTIFACT_PATH):
        pytest.skip("trained weights not bundled (artifacts/flow_desk.json missing)")
    return load_model(ARTIFACT_PATH)


def mc_se(x: np.ndarray) -> float:
    """Standard error of the sample mean."""
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / np.sqrt(x.size))


def var_se(x: np.ndarray) -> float:
    """Delta-method standard error of the sample variance."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = x - x.mean()
    m2 = np.mean(c ** 2)
    m4 = np.mean(c ** 4)
    return float(np.sqrt(max(m4 - m2 ** 2, 0.0) / n))
