from pathlib import Path

import numpy as np
import pytest

from lowrank_lab.kron_operator import build_model
from lowrank_lab.tensor_core import Tensor

FIXTURES = Path(__file__).parent / "fixtures"

# Lyapunov fixture A = diag(1, 2, 3, 4), B = (1/4) ones(4, 4), u0 = 0.
# Frozen from tests/oracles.py (eigenbasis Lyapunov solve, Jacobi SVD,
# eigenbasis Richardson propagation with alpha = 0.2).
LYAP_NORM = 0.2448847792950503
LYAP_SIGMA = [0.24438907028782572, 0.01556695587306599, 0.00045531385936672594, 5.326646408258001e-06]
LYAP_TAILS = [0.2448847792950503, 0.015573614039062258, 0.0004553450161068871, 5.326646408258001e-06, 0.0]
LYAP_ERRORS = [
    0.2448847792950503, 0.09635367829440492, 0.05098536565856784, 0.029034181610888547,
    0.017019397530178594, 0.010104894000752302, 0.006034390875857345, 0.0036130055353985908,
    0.002165766433162019, 0.0012989163616375819, 0.0007792048430405767, 0.00046748424109351445,
    0.0002804802334574585,
]

LNN_CONSTS = {"gamma_A": 1.0, "Gamma_A": 2.0, "Gamma_B": 1.0, "Gamma_C": 1.0}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def lyapunov():
    A = build_model("lyapunov", {"A": [1, 2, 3, 4]})
    b = Tensor.rank_one([np.full(4, 0.5), np.full(4, 0.5)])
    return A, b


@pytest.fixture
def laplace_nn():
    A = build_model("laplace_plus_nn", {"d": 4, "n": 2, "seed": 3, **LNN_CONSTS})
    b = Tensor.rank_one([np.full(2, 2**-0.5)] * 4)
    return A, b
