"""Invariant and oracle checks shared by ``mlcsc selftest`` and the test suite.

Every check is seeded and returns a :class:`CheckResult` with the worst
observed value and the threshold it is compared against. The oracles here
are coded independently of the solver: dense matrices assembled by
explicit loops, coordinate descent, finite differences and a plain ReLU
cascade.
"""

from __future__ import annotations

from dataclasses import dataclass
import time

import numpy as np

from .conv import conv_analysis, conv_synthesis, soft_threshold_nonneg
from .experiments import load_fixture
from .jpeg import build_jpeg_operator
from .linop import make_alpha_blend, make_block_transform, make_inpainting_mask
from .solver import (
    ModelParams,
    infer,
    kkt_residuals,
    lipschitz_bounds,
    objective_value,
)
from .trajectory import build_traj_operator, make_orbit_cameras
from .unroll import (
    loss_mse,
    param_gradients_unrolled,
    param_vector,
    unrolled_forward,
    with_param_vector,
)

__all__ = [
    "CheckResult",
    "check_gradients",
    "check_lasso_fixed_point",
    "check_kkt",
    "check_feedforward",
    "check_adjoints",
    "run_all",
    "SELFTEST_HEADER",
]

SELFTEST_HEADER = ("check", "value", "threshold", "passed")


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""

    def as_row(self):
        return (self.name, self.value, self.threshold, int(self.passed))

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: {self.value:.3e} (threshold {self.threshold:.1e}) {self.detail}"


def _timed(name, threshold, fn, below=True):
    t0 = time.perf_counter()
    value, detail = fn()
    ok = value < threshold if below else value >= threshold
    return CheckResult(name, float(value), float(threshold), bool(ok),
                       time.perf_counter() - t0, detail)


# -- gradients ----------------------------------------------------------------

def _gradient_instance(rng, length=24, channels=1, filters=4, n_sweeps=3, margin=1e-4):
    """Random two-layer instance whose ReLU inputs all stay ``margin`` away from 0."""
    while True:
        ch = [channels, filters, filters]
        dicts = [0.5 * rng.standard_normal((ch[i], ch[i + 1], 3)) for i in range(2)]
        biases = [rng.uniform(0.01, 0.1, ch[i + 1]) for i in range(2)]
        params = ModelParams(dicts, biases, rng.uniform(2.0, 4.0, 2), rng.uniform(0.1, 0.5, 2),
                             n_sweeps=n_sweeps)
        op = make_inpainting_mask((channels, length), 0.3, seed=rng.integers(2 ** 31))
        y = op.apply(rng.standard_normal((channels, length)))
        z = rng.standard_normal((channels, length))
        tape = unrolled_forward(params, y, op)
        if min(np.min(np.abs(a)) for a in tape.preactivations()) > margin:
            return params, y, z, op


def gradient_errors(params, y, z, op, h=1e-5):
    """Per-group relative errors of the unrolled gradient against central differences."""
    grads = param_gradients_unrolled(params, y, z, op)
    analytic = [np.ravel(a) for a in grads.arrays()]
    v = param_vector(params)

    def f(vec):
        return loss_mse(unrolled_forward(with_param_vector(params, vec), y, op).prediction, z)

    fd = np.empty_like(v)
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = h
        fd[k] = (f(v + e) - f(v - e)) / (2 * h)
    errors, start = [], 0
    for a in analytic:
        ref = fd[start:start + a.size]
        start += a.size
        scale = max(np.linalg.norm(ref), np.linalg.norm(a), 1e-12)
        errors.append(float(np.linalg.norm(a - ref) / scale))
    return errors


def check_gradients(n_instances=20, seed=0, threshold=1e-4) -> CheckResult:
    """Unrolled gradients (N=2, T=3, 4 filters per layer) vs central differences."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_instances):
            worst = max(worst, max(gradient_errors(*_gradient_instance(rng))))
        return worst, f"over {n_instances} instances"
    return _timed("gradient-check", threshold, run)


# -- single-layer fixed point vs coordinate descent ---------------------------

def dense_conv_matrix(filters, length):
    """Dense 1-D 'same' synthesis matrix built entry by entry."""
    n_out, n_in, size = filters.shape
    c = size // 2
    a = np.zeros((n_out * length, n_in * length))
    for o in range(n_out):
        for k in range(n_in):
            for p in range(length):
                for j in range(size):
                    q = p + j - c
                    if 0 <= q < length:
                        a[o * length + q, k * length + p] += filters[o, k, j]
    return a


def nn_lasso_cd(a, y, b, tol=1e-15, max_iter=100000):
    """Projected coordinate descent for ``min 0.5||y - a x||^2 + b.x, x >= 0``."""
    x = np.zeros(a.shape[1])
    r = -np.asarray(y, dtype=float).copy()
    col_sq = np.sum(a * a, axis=0)
    for _ in range(max_iter):
        biggest = 0.0
        for j in range(a.shape[1]):
            if col_sq[j] == 0.0:
                continue
            new = max(0.0, x[j] - (a[:, j] @ r + b[j]) / col_sq[j])
            if new != x[j]:
                r += a[:, j] * (new - x[j])
                biggest = max(biggest, abs(new - x[j]))
                x[j] = new
        if biggest < tol:
            break
    return x


def planted_lasso_instance(rng, length=24, atoms=2, size=5, active=4, noise=0.05, bias=0.3):
    g = rng.standard_normal((1, atoms, size))
    g /= np.linalg.norm(g)
    x = np.zeros((atoms, length))
    x.flat[rng.choice(x.size, active, replace=False)] = rng.uniform(1.0, 2.0, active)
    y = conv_synthesis(g, x) + noise * rng.standard_normal((1, length))
    return g, y, np.full(atoms, bias)


def check_lasso_fixed_point(n_instances=20, seed=0, threshold=1e-6) -> CheckResult:
    """Single layer, identity M, w=0, L at the bound, 500 sweeps vs coordinate descent."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_instances):
            g, y, b = planted_lasso_instance(rng)
            length = y.shape[-1]
            p = ModelParams([g], [b], [1.0], [0.0], n_sweeps=500)
            p.lipschitz = lipschitz_bounds(p, y.shape, iters=500)
            state = infer(p, y, guard=False)
            a = dense_conv_matrix(g, length)
            bb = np.repeat(b, length)
            xo = nn_lasso_cd(a, y.ravel(), bb)
            f_oracle = 0.5 * np.sum((y.ravel() - a @ xo) ** 2) + bb @ xo
            worst = max(worst, abs(objective_value(p, state, y) - f_oracle))
        return worst, "max objective gap"
    return _timed("lasso-fixed-point", threshold, run)


# -- KKT at convergence -------------------------------------------------------

def planted_kkt_instance(rng, channels=4, atoms=(4, 4), length=32, eps=0.5, active=4,
                         bias=0.02, extrapolation=0.5, n_sweeps=200):
    """Two-layer planted instance with near-identity filters (well conditioned)."""
    def filt(n_out, n_in, size):
        f = eps * rng.standard_normal((n_out, n_in, size)) / np.sqrt(n_in * size)
        for k in range(min(n_out, n_in)):
            f[k, k, size // 2] += 1.0
        return f

    d1 = filt(channels, atoms[0], 5)
    d2 = np.abs(filt(atoms[0], atoms[1], 3))
    x2 = np.zeros((atoms[1], length))
    x2.flat[rng.choice(x2.size, active, replace=False)] = rng.uniform(1.0, 2.0, active)
    y = conv_synthesis(d1, conv_synthesis(d2, x2))
    p = ModelParams([d1, d2], [np.full(atoms[0], bias), np.full(atoms[1], bias)], [1.0, 1.0],
                    [extrapolation] * 2, n_sweeps=n_sweeps)
    p.lipschitz = lipschitz_bounds(p, y.shape, iters=300)
    return p, y


def check_kkt(n_instances=20, seed=0, threshold=1e-6) -> CheckResult:
    """Relative KKT residual per layer after 200 sweeps on planted 2-layer instances."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_instances):
            p, y = planted_kkt_instance(rng)
            state = infer(p, y, guard=False)
            if any(not np.any(x > 0) for x in state.codes):
                return float("inf"), "a layer collapsed to zero codes"
            worst = max(worst, max(kkt_residuals(p, state, y)))
        return worst, "max over layers and instances"
    return _timed("kkt-residual", threshold, run)


# -- T=1 versus a ReLU network ------------------------------------------------

def relu_cascade(params, y, op):
    """Feed-forward pass: ``h <- relu((alpha_i D_i^T h - b_i) / L_i)`` from ``h = M^T y``."""
    h = op.adjoint(y)
    for d, b, a, l in zip(params.dictionaries, params.biases, params.alphas, params.lipschitz):
        b = b.reshape((-1,) + (1,) * params.spatial_ndim)
        h = soft_threshold_nonneg((a * conv_analysis(d, h) - b) / l, 0.0)
    return h


def check_feedforward(n_instances=100, seed=0) -> CheckResult:
    """One sweep from zero equals the ReLU cascade bit for bit."""
    def run():
        rng = np.random.default_rng(seed)
        mismatches = 0
        for _ in range(n_instances):
            n = int(rng.integers(1, 4))
            sd = int(rng.integers(1, 3))
            ch = [int(c) for c in rng.integers(1, 5, n + 1)]
            spatial = tuple(int(s) for s in rng.integers(6, 12, sd))
            dicts = [rng.standard_normal((ch[i], ch[i + 1]) + (3,) * sd) for i in range(n)]
            p = ModelParams(dicts, [rng.uniform(0, 0.5, ch[i + 1]) for i in range(n)],
                            rng.uniform(0.5, 5, n), rng.uniform(0, 0.99, n),
                            rng.uniform(0.5, 2, n), n_sweeps=1)
            op = make_inpainting_mask((ch[0],) + spatial, 0.3, seed=rng.integers(2 ** 31))
            y = op.apply(rng.standard_normal((ch[0],) + spatial))
            state = infer(p, y, op)
            ref = relu_cascade(p, y, op)
            if not np.array_equal(state.codes[-1], ref):
                mismatches += 1
        return mismatches, f"mismatching instances out of {n_instances}"
    return _timed("feedforward-equivalence", 1, run)


# -- adjoint identities -------------------------------------------------------

def _adjoint_gap(op, rng, n_pairs):
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(op.in_shape)
        y = rng.standard_normal(op.out_shape)
        lhs = float(np.vdot(op.apply(x), y))
        rhs = float(np.vdot(x, op.adjoint(y)))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst


def adjoint_families(seed=0):
    """``(name, operator)`` for every operator family the measurement models use."""
    shape = (3, 16, 16)
    mask = make_inpainting_mask(shape, 0.5, seed=seed + 1)
    block = make_block_transform(shape, 4, seed=seed + 2)
    out = [("mask", mask), ("block", block), ("blend", make_alpha_blend(mask, block, 0.3))]
    image = load_fixture("astronaut_0")
    for qf in (5, 10, 20, 50, 90):
        out.append((f"jpeg-qf{qf}", build_jpeg_operator(image, qf)[0]))
    out.append(("camera-stack", build_traj_operator(make_orbit_cameras(150))))
    return out


def check_adjoints(n_pairs=100, seed=0, threshold=1e-10) -> list:
    results = []
    for name, op in adjoint_families(seed):
        rng = np.random.default_rng(seed)
        results.append(_timed(f"adjoint-{name}", threshold,
                              lambda: (_adjoint_gap(op, rng, n_pairs), f"{n_pairs} pairs")))
    return results


def run_all(seed=0) -> list:
    """Every check, in a fixed order."""
    return [
        check_gradients(seed=seed),
        check_lasso_fixed_point(seed=seed),
        check_kkt(seed=seed),
        check_feedforward(seed=seed),
        *check_adjoints(seed=seed),
    ]
