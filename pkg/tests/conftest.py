import numpy as np
import pytest

from varcs.model import Var1CsParams, VarLCsParams
from varcs.simulator import random_orthonormal

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_var1_params(rng, p=6, r=3, d=1, scale=1.0):
    q = random_orthonormal(p, 2 * r - d, rng)
    return Var1CsParams(
        c=q[:, :d] + 0.1 * rng.standard_normal((p, d)),
        r=q[:, d:r] + 0.1 * rng.standard_normal((p, r - d)),
        p_=q[:, r:] + 0.1 * rng.standard_normal((p, r - d)),
        d_core=scale * rng.standard_normal((r, r)),
    )


def random_varl_params(rng, p=5, lag=3, r=2, r3=2, d=1):
    q = random_orthonormal(p, 2 * r - d, rng)
    return VarLCsParams(
        c=q[:, :d] + 0.1 * rng.standard_normal((p, d)),
        r=q[:, d:r] + 0.1 * rng.standard_normal((p, r - d)),
        p_=q[:, r:] + 0.1 * rng.standard_normal((p, r - d)),
        l=random_orthonormal(lag, r3, rng),
        g=rng.standard_normal((r, r, r3)),
    )
