import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def inner_gap(op_apply, op_adjoint, x, y):
    lhs = float(np.vdot(op_apply(x), y))
    rhs = float(np.vdot(x, op_adjoint(y)))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
