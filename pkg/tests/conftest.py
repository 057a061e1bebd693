import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mfglq import LqCoefficients, PopulationModel  # noqa: E402

COUPLED = dict(A=0.1, Abar=0.5, Q=1.0, Qbar=1.0, S=0.8, Q_T=0.5, Qbar_T=0.5, S_T=0.5, sigma=0.5, x0_mean=1.0, x0_std=0.5)
DECOUPLED = dict(A=0.1, Q=1.0, Q_T=0.5, sigma=0.5, x0_mean=1.0, x0_std=0.5)
# pure tracking of the population mean: finite-N self-influence is large
TRACKING = dict(Qbar=8.0, S=1.0, sigma=0.2, x0_mean=2.0, x0_std=1.0)


@pytest.fixture
def coupled_model():
    return PopulationModel.single(LqCoefficients(**COUPLED))


@pytest.fixture
def decoupled_model():
    return PopulationModel.single(LqCoefficients(**DECOUPLED))


@pytest.fixture
def two_pop_model():
    cs = (
        LqCoefficients(A=0.1, Abar=0.5, Qbar=1.0, S=0.5, x0_mean=1.0),
        LqCoefficients(A=-0.2, Abar=0.3, Qbar=2.0, S=0.5, x0_mean=-1.0),
    )
    return PopulationModel(cs, np.array([[1.0, 0.5], [0.5, 2.0]]))
