import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlcsc.conv import ShapeError, conv_synthesis
from mlcsc.linop import make_inpainting_mask
from mlcsc.solver import (
    ModelParams,
    NumericalError,
    SolverState,
    block_gradient,
    infer,
    initial_state,
    kkt_residuals,
    lipschitz_bounds,
    objective_value,
    predict,
    sweep_update,
)


def synthesis_matrix(filters, length):
    """Dense ``D`` for 1-D 'same' convolution, built entry by entry."""
    c_out, c_in, size = filters.shape
    r = size // 2
    a = np.zeros((c_out * length, c_in * length))
    for c in range(c_out):
        for k in range(c_in):
            for n in range(length):
                for j in range(size):
                    m = n - j + r
                    if 0 <= m < length:
                        a[c * length + n, k * length + m] += filters[c, k, j]
    return a


def random_params(rng, channels=(2, 3, 2), sizes=(3, 3), length=12, op=None, w=0.0,
                  bias=0.05, alphas=None):
    ds = [rng.standard_normal((channels[i], channels[i + 1], sizes[i])) / 3
          for i in range(len(sizes))]
    bs = [np.full(k, bias) for k in channels[1:]]
    p = ModelParams(ds, bs, np.ones(len(ds)), np.full(len(ds), w), alphas)
    p.lipschitz = lipschitz_bounds(p, (channels[0], length), op, iters=500)
    return p


def state_with(codes):
    return SolverState(codes, [c.copy() for c in codes], [c.copy() for c in codes], 0)


def scalar_params(d, b, lip=1.0, w=0.0):
    return ModelParams([np.array([[[d]]])], [np.array([b])], [lip], [w])


# -- objective ---------------------------------------------------------------

def test_objective_zero_codes(rng):
    p = random_params(rng, alphas=[2.5, 1.0])
    y = rng.standard_normal((2, 12))
    assert np.isclose(objective_value(p, initial_state(p, y.shape), y), 1.25 * np.sum(y ** 2))


def test_objective_scalar_example():
    p = scalar_params(1.0, 0.5)
    s = state_with([np.array([[1.5]])])
    assert objective_value(p, s, np.array([[2.0]])) == pytest.approx(0.875, abs=1e-15)


def test_objective_dense_oracle(rng):
    op = make_inpainting_mask((2, 12), 0.3, seed=4)
    p = random_params(rng, op=op, alphas=[1.0, 0.7])
    codes = [np.abs(rng.standard_normal((3, 12))), np.abs(rng.standard_normal((2, 12)))]
    y = rng.standard_normal((2, 12))
    md1 = np.diag(op.mask.ravel()) @ synthesis_matrix(p.dictionaries[0], 12)
    d2 = synthesis_matrix(p.dictionaries[1], 12)
    x1, x2 = codes[0].ravel(), codes[1].ravel()
    ref = (0.5 * np.sum((y.ravel() - md1 @ x1) ** 2) + 0.05 * x1.sum()
           + 0.35 * np.sum((x1 - d2 @ x2) ** 2) + 0.05 * x2.sum())
    assert objective_value(p, state_with(codes), y, op) == pytest.approx(ref, rel=1e-12)


def test_objective_rejects_negative_codes_and_shape(rng):
    p = scalar_params(1.0, 0.1)
    with pytest.raises(ValueError):
        objective_value(p, state_with([np.array([[-1.0]])]), np.zeros((1, 1)))
    with pytest.raises(ShapeError):
        objective_value(p, state_with([np.zeros((1, 1))]), np.zeros((1, 1)),
                        make_inpainting_mask((1, 2), 0.1))


# -- block gradient ----------------------------------------------------------

def test_block_gradient_vanishes_at_consistent_point(rng):
    p = random_params(rng)
    x2 = np.abs(rng.standard_normal((2, 12)))
    x1 = conv_synthesis(p.dictionaries[1], x2)
    y = conv_synthesis(p.dictionaries[0], x1)
    s = state_with([x1, x2])
    for layer in (1, 2):
        assert np.max(np.abs(block_gradient(p, s, layer, y))) < 1e-12


def smooth_part(p, codes, y, op):
    return objective_value(p, state_with(codes), y, op) - sum(
        float(np.sum(b[:, None] * x)) for b, x in zip(p.biases, codes))


def test_block_gradient_finite_differences(rng):
    op = make_inpainting_mask((2, 12), 0.3, seed=1)
    p = random_params(rng, op=op, alphas=[1.0, 0.6])
    y = rng.standard_normal((2, 12))
    codes = [np.abs(rng.standard_normal((3, 12))) + 0.5, np.abs(rng.standard_normal((2, 12))) + 0.5]
    s = state_with(codes)
    h = 1e-6
    for layer in (1, 2):
        g = block_gradient(p, s, layer, y, op)
        fd = np.zeros_like(g)
        for idx in np.ndindex(g.shape):
            plus = [c.copy() for c in codes]
            minus = [c.copy() for c in codes]
            plus[layer - 1][idx] += h
            minus[layer - 1][idx] -= h
            fd[idx] = (smooth_part(p, plus, y, op) - smooth_part(p, minus, y, op)) / (2 * h)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_block_gradient_scalar_chain():
    # f = a1/2 (y - d1 x1)^2 + a2/2 (x1 - d2 x2)^2
    d1, d2, a1, a2, y, x1, x2 = 2.0, 0.5, 1.5, 0.8, 3.0, 1.2, 0.4
    p = ModelParams([np.array([[[d1]]]), np.array([[[d2]]])], [np.zeros(1), np.zeros(1)],
                    [1.0, 1.0], [0.0, 0.0], [a1, a2])
    s = state_with([np.array([[x1]]), np.array([[x2]])])
    yy = np.array([[y]])
    g1 = a1 * d1 * (d1 * x1 - y) + a2 * (x1 - d2 * x2)
    g2 = a2 * d2 * (d2 * x2 - x1)
    assert block_gradient(p, s, 1, yy)[0, 0] == pytest.approx(g1, abs=1e-14)
    assert block_gradient(p, s, 2, yy)[0, 0] == pytest.approx(g2, abs=1e-14)
    with pytest.raises(IndexError):
        block_gradient(p, s, 3, yy)


# -- sweeps ------------------------------------------------------------------

def test_sweep_passes_nonnegative_input_when_gradient_and_bias_vanish():
    p = scalar_params(1.0, 0.0)
    x = np.array([[0.7]])
    s = sweep_update(p, state_with([x]), np.array([[0.7]]))
    assert s.codes[0][0, 0] == 0.7


@pytest.mark.parametrize("d,b,lip,y,x0", [(1.0, 0.5, 2.0, 2.0, 0.3), (0.7, 0.1, 1.0, -1.0, 0.9),
                                          (1.3, 0.05, 3.0, 0.4, 0.0)])
def test_sweep_matches_grid_search(d, b, lip, y, x0):
    p = scalar_params(d, b, lip)
    g = d * (d * x0 - y)
    grid = np.linspace(0.0, 5.0, 1_000_001)
    surrogate = g * (grid - x0) + 0.5 * lip * (grid - x0) ** 2 + b * grid
    best = grid[np.argmin(surrogate)]
    got = sweep_update(p, state_with([np.array([[x0]])]), np.array([[y]])).codes[0][0, 0]
    assert abs(got - best) <= 5.0 / 1e6


def test_sweep_fixed_point_matches_coordinate_descent(rng):
    from mlcsc.checks import nn_lasso_cd

    f = rng.standard_normal((1, 2, 5)) / 2
    x = np.zeros((2, 20))
    x[0, 4], x[1, 13] = 1.5, 0.8
    y = conv_synthesis(f, x) + 0.05 * rng.standard_normal((1, 20))
    p = ModelParams([f], [np.full(2, 0.2)], [1.0], [0.0], n_sweeps=500)
    p.lipschitz = lipschitz_bounds(p, y.shape, iters=500)
    a = synthesis_matrix(f, 20)
    ref = nn_lasso_cd(a, y.ravel(), np.full(40, 0.2))
    obj = lambda v: 0.5 * np.sum((y.ravel() - a @ v) ** 2) + 0.2 * v.sum()  # noqa: E731
    got = infer(p, y).codes[0].ravel()
    assert abs(obj(got) - obj(ref)) < 1e-6


def test_sweep_raises_on_non_finite():
    p = scalar_params(1.0, 0.0)
    with pytest.raises(NumericalError):
        sweep_update(p, state_with([np.array([[0.0]])]), np.array([[np.inf]]))


def test_monotone_descent_on_random_instances():
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng(1000 + k)
        op = make_inpainting_mask((2, 16), 0.3, seed=k)
        p = random_params(rng, length=16, op=op, w=0.0, bias=0.02,
                          alphas=rng.uniform(0.5, 2.0, 2))
        p.lipschitz = p.lipschitz * (1 + 1e-9)
        y = rng.standard_normal((2, 16))
        s = initial_state(p, (2, 16))
        prev = objective_value(p, s, y, op)
        for _ in range(40):
            s = sweep_update(p, s, y, op)
            assert all(np.all(c >= 0) for c in s.codes)
            cur = objective_value(p, s, y, op)
            worst = max(worst, (cur - prev) / max(abs(prev), 1e-300))
            prev = cur
    assert worst <= 1e-12


# -- inference and prediction ------------------------------------------------

def test_zero_measurement_keeps_codes_zero(rng):
    p = random_params(rng, w=0.5)
    s = infer(p, np.zeros((2, 12)), n_sweeps=20)
    assert all(not np.any(c) for c in s.codes)
    assert not np.any(predict(p, s))


def test_t1_matches_relu_cascade(rng):
    op = make_inpainting_mask((2, 12), 0.4, seed=2)
    p = random_params(rng, op=op, w=0.7, alphas=[1.3, 0.6])
    y = op.apply(rng.standard_normal((2, 12)))
    s = infer(p, y, op, n_sweeps=1)
    h = op.adjoint(y)
    for i, d in enumerate(p.dictionaries):
        a = synthesis_matrix(d, 12)
        pre = (p.alphas[i] * (a.T @ h.ravel()) - p.biases[i].repeat(12)) / p.lipschitz[i]
        h = np.maximum(pre, 0).reshape(d.shape[1], 12)
        assert np.allclose(s.codes[i], h, atol=1e-13)


def test_planted_codes_recovered():
    rng = np.random.default_rng(3)
    f = 0.3 * rng.standard_normal((1, 1, 5)) / np.sqrt(5)
    f[0, 0, 2] += 1.0
    x = np.zeros((1, 60))
    support = rng.choice(60, 8, replace=False)
    x[0, support] = rng.uniform(1.0, 2.0, 8)
    y = conv_synthesis(f, x)
    p = ModelParams([f], [np.full(1, 1e-6)], [1.0], [0.5], n_sweeps=200)
    p.lipschitz = lipschitz_bounds(p, y.shape, iters=500)
    s = infer(p, y)
    assert np.sqrt(np.mean((s.codes[0] - x) ** 2)) < 1e-3
    assert np.array_equal(s.codes[0] > 1e-2, x > 0)
    z = predict(p, s)
    assert np.linalg.norm(z - y) / np.linalg.norm(y) < 1e-3


def test_predict_examples(rng):
    ident = ModelParams([np.array([[[0.0, 1.0, 0.0]]])], [np.zeros(1)], [1.0], [0.0])
    x = np.abs(rng.standard_normal((1, 9)))
    assert np.array_equal(predict(ident, x), x)
    p = random_params(rng)
    assert not np.any(predict(p, np.zeros((2, 12))))


def test_infer_is_deterministic_and_validates(rng):
    p = random_params(rng, w=0.8)
    y = rng.standard_normal((2, 12))
    a, b = infer(p, y, n_sweeps=15), infer(p, y, n_sweeps=15)
    assert all(np.array_equal(u, v) for u, v in zip(a.codes, b.codes))
    with pytest.raises(ValueError):
        infer(p, y, n_sweeps=0)


def test_guard_restarts_with_smaller_steps(rng):
    p = random_params(rng, w=0.0)
    p.lipschitz = p.lipschitz * 0.2
    y = rng.standard_normal((2, 12))
    s = infer(p, y, n_sweeps=60)
    assert s.step_scale < 1.0
    assert all(np.all(np.isfinite(c)) for c in s.codes)


def test_kkt_residual_small_after_convergence(rng):
    from mlcsc.checks import planted_kkt_instance

    p, y = planted_kkt_instance(rng)
    s = infer(p, y, guard=False)
    assert max(kkt_residuals(p, s, y)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.95))
def test_codes_stay_nonnegative(seed, w):
    rng = np.random.default_rng(seed)
    p = random_params(rng, w=w)
    s = initial_state(p, (2, 12))
    y = rng.standard_normal((2, 12))
    for _ in range(5):
        s = sweep_update(p, s, y)
        assert all(np.all(c >= 0) for c in s.codes)


def test_params_validation():
    with pytest.raises(ValueError):
        scalar_params(1.0, -0.1)
    with pytest.raises(ValueError):
        scalar_params(1.0, 0.1, lip=0.0)
    with pytest.raises(ValueError):
        scalar_params(1.0, 0.1, w=1.0)
    with pytest.raises(ShapeError):
        ModelParams([np.zeros((1, 2, 3)), np.zeros((3, 1, 3))], [np.zeros(2), np.zeros(1)],
                    [1, 1], [0, 0])
