"""Inference for the weighted multi-layer convolutional sparse coding model.

The model for a clean signal ``z`` observed through ``y = M z`` is

    min_{x_i >= 0}  sum_i (alpha_i / 2) ||x_{i-1} - D_i x_i||^2 + ||b_i * x_i||_1

with ``x_0 = y`` and ``M D_1`` in place of ``D_1`` in the first term.
It is solved by block proximal-gradient sweeps over the layers, each block
evaluated at an extrapolated point, and the signal is predicted by the
cascade ``D_1 relu(D_2 relu(... D_N relu(x_N)))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .conv import (
    ShapeError,
    conv_analysis,
    conv_synthesis,
    per_channel,
    soft_threshold_nonneg,
)
from .linop import Identity, LinearOperator

__all__ = [
    "NumericalError",
    "ModelParams",
    "SolverState",
    "code_shapes",
    "initial_state",
    "objective_value",
    "block_gradient",
    "sweep_update",
    "infer",
    "predict",
    "kkt_residuals",
    "lipschitz_bounds",
]


class NumericalError(ArithmeticError):
    """A non-finite value appeared during inference or training."""


@dataclass
class ModelParams:
    """Learnable and fixed quantities of an N-layer model.

    ``dictionaries[i]`` holds filters of shape ``(K_{i-1}, K_i, *kernel)``
    with ``K_0`` the signal channel count. ``biases[i]`` has shape
    ``(K_i,)``. ``lipschitz``, ``extrapolation`` and ``alphas`` hold one
    scalar per layer.
    """

    dictionaries: list
    biases: list
    lipschitz: np.ndarray
    extrapolation: np.ndarray
    alphas: np.ndarray = None
    n_sweeps: int = 10

    def __post_init__(self):
        self.dictionaries = [np.asarray(d, dtype=float) for d in self.dictionaries]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        n = len(self.dictionaries)
        self.lipschitz = np.asarray(self.lipschitz, dtype=float).reshape(n)
        self.extrapolation = np.asarray(self.extrapolation, dtype=float).reshape(n)
        if self.alphas is None:
            self.alphas = np.ones(n)
        self.alphas = np.asarray(self.alphas, dtype=float).reshape(n)
        self.n_sweeps = int(self.n_sweeps)
        self.validate()

    @property
    def n_layers(self) -> int:
        return len(self.dictionaries)

    @property
    def spatial_ndim(self) -> int:
        return self.dictionaries[0].ndim - 2

    @property
    def channels(self) -> list:
        """``[K_0, K_1, ..., K_N]``."""
        return [self.dictionaries[0].shape[0]] + [d.shape[1] for d in self.dictionaries]

    def validate(self):
        if not self.dictionaries:
            raise ValueError("a model needs at least one layer")
        if len(self.biases) != self.n_layers:
            raise ValueError("need one bias vector per layer")
        sd = self.spatial_ndim
        for i, d in enumerate(self.dictionaries):
            if d.ndim != sd + 2:
                raise ShapeError(f"layer {i + 1} filters have {d.ndim - 2} spatial dims, "
                                 f"layer 1 has {sd}")
            if any(k % 2 == 0 for k in d.shape[2:]):
                raise ShapeError(f"layer {i + 1} kernel {d.shape[2:]} has an even extent")
            if i and d.shape[0] != self.dictionaries[i - 1].shape[1]:
                raise ShapeError(f"layer {i + 1} expects {d.shape[0]} input channels, "
                                 f"layer {i} produces {self.dictionaries[i - 1].shape[1]}")
            if self.biases[i].shape != (d.shape[1],):
                raise ShapeError(f"layer {i + 1} bias must have shape ({d.shape[1]},)")
        if any(np.any(b < 0) for b in self.biases):
            raise ValueError("biases must be non-negative")
        if np.any(self.lipschitz <= 0):
            raise ValueError("step-size parameters L must be positive")
        if np.any(self.extrapolation < 0) or np.any(self.extrapolation >= 1):
            raise ValueError("extrapolation weights must lie in [0, 1)")
        if np.any(self.alphas <= 0):
            raise ValueError("layer weights alpha must be positive")
        if self.n_sweeps < 1:
            raise ValueError("n_sweeps must be >= 1")

    def copy(self) -> "ModelParams":
        return ModelParams(
            [d.copy() for d in self.dictionaries],
            [b.copy() for b in self.biases],
            self.lipschitz.copy(),
            self.extrapolation.copy(),
            self.alphas.copy(),
            self.n_sweeps,
        )


@dataclass
class SolverState:
    """Codes of the current and previous sweep, and the extrapolated point used last."""

    codes: list
    previous: list
    extrapolated: list = field(default_factory=list)
    sweep: int = 0
    step_scale: float = 1.0


def code_shapes(params: ModelParams, signal_shape) -> list:
    """Shapes of ``x_1 .. x_N`` for a signal of shape ``(..., K_0, *spatial)``."""
    signal_shape = tuple(signal_shape)
    sd = params.spatial_ndim
    if len(signal_shape) < sd + 1 or signal_shape[-sd - 1] != params.channels[0]:
        raise ShapeError(f"signal shape {signal_shape} does not match a model with "
                         f"{params.channels[0]} channels and {sd} spatial dims")
    lead, spatial = signal_shape[:-sd - 1], signal_shape[-sd:]
    return [lead + (k,) + spatial for k in params.channels[1:]]


def _resolve(y, operator, params):
    y = np.asarray(y, dtype=float)
    if operator is None:
        operator = Identity(y.shape)
    elif y.shape != operator.out_shape:
        raise ShapeError(f"measurement shape {y.shape} != operator output {operator.out_shape}")
    return y, operator


def initial_state(params: ModelParams, signal_shape) -> SolverState:
    zeros = [np.zeros(s) for s in code_shapes(params, signal_shape)]
    return SolverState(zeros, [z.copy() for z in zeros], [z.copy() for z in zeros], 0)


def _smooth_gradient(params, i, point, below, above, y, op):
    """Block gradient for layer ``i`` (0-based) at ``point``.

    Returns ``(gradient, residual)`` where ``residual`` is the vector the
    layer's analysis operator was applied to (kept for differentiation).
    """
    d = params.dictionaries[i]
    if i == 0:
        residual = op.adjoint(op.apply(conv_synthesis(d, point)) - y)
    else:
        residual = conv_synthesis(d, point) - below
    g = params.alphas[i] * conv_analysis(d, residual)
    if i < params.n_layers - 1:
        g = g + params.alphas[i + 1] * (point - conv_synthesis(params.dictionaries[i + 1], above))
    return g, residual


def _layer_step(params, i, x_hat, below, above, y, op, step_scale=1.0):
    g, residual = _smooth_gradient(params, i, x_hat, below, above, y, op)
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient at layer {i + 1}; step size too large?")
    b = per_channel(params.biases[i], params.spatial_ndim)
    pre = x_hat - (g + b) / (params.lipschitz[i] / step_scale)
    return soft_threshold_nonneg(pre, 0.0), pre, g, residual


def objective_value(params: ModelParams, state: SolverState, y, operator=None) -> float:
    """Value of the weighted multi-layer objective at ``state.codes``."""
    y, op = _resolve(y, operator, params)
    codes = state.codes
    if any(np.any(x < 0) for x in codes):
        raise ValueError("codes must be non-negative")
    total = 0.0
    for i, (d, x) in enumerate(zip(params.dictionaries, codes)):
        if i == 0:
            r = y - op.apply(conv_synthesis(d, x))
        else:
            r = codes[i - 1] - conv_synthesis(d, x)
        b = per_channel(params.biases[i], params.spatial_ndim)
        total += 0.5 * params.alphas[i] * float(np.sum(r * r)) + float(np.sum(b * x))
    return total


def block_gradient(params: ModelParams, state: SolverState, layer_index: int, y,
                   operator=None) -> np.ndarray:
    """Gradient of the smooth part w.r.t. layer ``layer_index`` (1-based).

    Evaluated at ``state.extrapolated[i]`` with the lower neighbour taken
    from ``state.codes`` and the upper neighbour from ``state.previous``,
    which is how a sweep sees them.
    """
    n = params.n_layers
    if not 1 <= layer_index <= n:
        raise IndexError(f"layer index {layer_index} outside 1..{n}")
    y, op = _resolve(y, operator, params)
    i = layer_index - 1
    below = state.codes[i - 1] if i > 0 else None
    above = state.previous[i + 1] if i < n - 1 else None
    g, _ = _smooth_gradient(params, i, state.extrapolated[i], below, above, y, op)
    return g


def sweep_update(params: ModelParams, state: SolverState, y, operator=None,
                 step_scale: float = 1.0) -> SolverState:
    """One ascending sweep over the layers; returns the new state."""
    y, op = _resolve(y, operator, params)
    n = params.n_layers
    new, hats = [], []
    for i in range(n):
        cur, prev = state.codes[i], state.previous[i]
        w = params.extrapolation[i]
        x_hat = cur + w * (cur - prev)
        below = new[i - 1] if i > 0 else None
        above = state.codes[i + 1] if i < n - 1 else None
        x, _, _, _ = _layer_step(params, i, x_hat, below, above, y, op, step_scale)
        new.append(x)
        hats.append(x_hat)
    return SolverState(new, list(state.codes), hats, state.sweep + 1, step_scale)


def _diverging(history) -> bool:
    if len(history) < 6:
        return False
    last = history[-6:]
    rising = all(b > a for a, b in zip(last, last[1:]))
    return rising and last[-1] > 10.0 * last[0]


def infer(params: ModelParams, y, operator=None, n_sweeps=None, guard: bool = True,
          max_restarts: int = 30) -> SolverState:
    """Run ``n_sweeps`` (default ``params.n_sweeps``) sweeps from zero codes.

    With ``guard`` on, the objective is tracked; if it rises more than
    tenfold over five consecutive sweeps, all effective steps are halved
    and the solve restarts from zero.
    """
    y, op = _resolve(y, operator, params)
    t_max = params.n_sweeps if n_sweeps is None else int(n_sweeps)
    if t_max < 1:
        raise ValueError("n_sweeps must be >= 1")
    scale, restarts = 1.0, 0
    state = initial_state(params, op.in_shape)
    history = []
    while state.sweep < t_max:
        state = sweep_update(params, state, y, op, step_scale=scale)
        if guard:
            history.append(objective_value(params, state, y, op))
            if _diverging(history):
                restarts += 1
                if restarts > max_restarts:
                    raise NumericalError("inference keeps diverging after step halving")
                scale *= 0.5
                state = initial_state(params, op.in_shape)
                history = []
    state.step_scale = scale
    return state


def predict(params: ModelParams, state_or_code) -> np.ndarray:
    """Signal estimate ``D_1 relu(D_2 relu(... D_N relu(x_N)))``."""
    top = state_or_code.codes[-1] if isinstance(state_or_code, SolverState) else state_or_code
    h = soft_threshold_nonneg(top, 0.0)
    for d in params.dictionaries[:0:-1]:
        h = soft_threshold_nonneg(conv_synthesis(d, h), 0.0)
    return conv_synthesis(params.dictionaries[0], h)


def kkt_residuals(params: ModelParams, state: SolverState, y, operator=None) -> list:
    """Per-layer ``||min(x_i, g_i + b_i)|| / ||x_i||`` at the current codes.

    ``g_i`` is the block gradient with every layer at ``state.codes``; a
    zero value certifies optimality of the non-negative l1 subproblems.
    """
    y, op = _resolve(y, operator, params)
    n = params.n_layers
    out = []
    for i in range(n):
        below = state.codes[i - 1] if i > 0 else None
        above = state.codes[i + 1] if i < n - 1 else None
        g, _ = _smooth_gradient(params, i, state.codes[i], below, above, y, op)
        b = per_channel(params.biases[i], params.spatial_ndim)
        r = np.minimum(state.codes[i], g + b)
        out.append(float(np.linalg.norm(r) / max(np.linalg.norm(state.codes[i]), 1e-300)))
    return out


def lipschitz_bounds(params: ModelParams, signal_shape, operator=None,
                     iters: int = 100, seed: int = 0) -> np.ndarray:
    """Block Lipschitz constants of the smooth part for the given operator.

    Layer 1 uses ``alpha_1 ||M D_1||^2``; every layer but the last adds the
    ``alpha_{i+1}`` coupling term.
    """
    from .conv import spectral_norm_sq
    from .linop import Composition, ConvolutionOperator

    shapes = code_shapes(params, signal_shape)
    out = np.empty(params.n_layers)
    for i, (d, shape) in enumerate(zip(params.dictionaries, shapes)):
        op = ConvolutionOperator(d, shape)
        if i == 0 and operator is not None:
            op = Composition(operator, op)
        out[i] = params.alphas[i] * spectral_norm_sq(op, iters=iters, seed=seed)
        if i < params.n_layers - 1:
            out[i] += params.alphas[i + 1]
    return out


def with_sweeps(params: ModelParams, n_sweeps: int) -> ModelParams:
    """Copy of ``params`` with a different sweep count."""
    return replace(params.copy(), n_sweeps=int(n_sweeps))
