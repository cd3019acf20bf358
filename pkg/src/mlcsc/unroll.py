"""Learning by exact differentiation through the truncated solver.

The forward pass runs ``n_sweeps`` sweeps from zero codes and the prediction
cascade, recording every intermediate; the backward pass walks the record
in reverse and accumulates gradients for dictionaries, biases, step sizes
and extrapolation weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

from .conv import conv_analysis, conv_synthesis, filter_gradient, per_channel, soft_threshold_nonneg
from .linop import Identity, Stacked, project_consistent
from .solver import ModelParams, NumericalError, _layer_step, code_shapes, lipschitz_bounds

__all__ = [
    "ParamGradients",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "Tape",
    "loss_mse",
    "unrolled_forward",
    "param_gradients_unrolled",
    "Optimizer",
    "optimizer_step",
    "train",
    "param_vector",
    "with_param_vector",
    "init_params",
]

logger = logging.getLogger(__name__)

L_FLOOR = 1e-6
W_CEIL = 0.99


class TrainingError(NumericalError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class ParamGradients:
    dictionaries: list
    biases: list
    lipschitz: np.ndarray
    extrapolation: np.ndarray
    loss: float = float("nan")

    def arrays(self):
        return [*self.dictionaries, *self.biases, self.lipschitz, self.extrapolation]

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def scaled(self, factor: float) -> "ParamGradients":
        return ParamGradients([d * factor for d in self.dictionaries],
                              [b * factor for b in self.biases],
                              self.lipschitz * factor, self.extrapolation * factor,
                              self.loss * factor)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def param_vector(params) -> np.ndarray:
    """All learnable entries (dictionaries, biases, L, w) as one flat vector."""
    parts = [*params.dictionaries, *params.biases, params.lipschitz, params.extrapolation]
    return np.concatenate([np.ravel(p) for p in parts])


def with_param_vector(params: ModelParams, vec) -> ModelParams:
    """Inverse of :func:`param_vector`; skips validation so probes may leave the box."""
    vec = np.asarray(vec, dtype=float)
    out = object.__new__(ModelParams)
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        chunk = vec[pos:pos + size].reshape(shape)
        pos += size
        return chunk.copy()

    out.dictionaries = [take(d.shape) for d in params.dictionaries]
    out.biases = [take(b.shape) for b in params.biases]
    out.lipschitz = take(params.lipschitz.shape)
    out.extrapolation = take(params.extrapolation.shape)
    out.alphas = params.alphas.copy()
    out.n_sweeps = params.n_sweeps
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size} entries, expected {pos}")
    return out


def loss_mse(prediction, target) -> float:
    prediction = np.asarray(prediction, dtype=float)
    target = np.asarray(target, dtype=float)
    if prediction.shape != target.shape:
        raise ValueError(f"prediction shape {prediction.shape} != target shape {target.shape}")
    return float(np.mean((prediction - target) ** 2))


@dataclass
class Tape:
    """Everything the backward pass needs from one unrolled forward pass."""

    codes: list            # codes[i][t + 1] is x_i at sweep t, t = -1 .. T
    steps: list            # steps[t - 1][i] = (x_hat, pre, g, residual)
    hidden: list           # cascade activations h_N .. h_1 and their pre-activations
    prediction: np.ndarray
    y: np.ndarray
    op: object

    def preactivations(self):
        """Arrays fed into a ReLU whose kinks a perturbation could cross.

        The cascade's first ReLU is skipped: it sees non-negative codes whose
        zeros stay exactly zero under small parameter changes.
        """
        for sweep in self.steps:
            for _, pre, _, _ in sweep:
                yield pre
        for pre, _ in self.hidden[1:]:
            yield pre


def unrolled_forward(params: ModelParams, y, operator=None) -> Tape:
    y = np.asarray(y, dtype=float)
    op = Identity(y.shape) if operator is None else operator
    n = params.n_layers
    zeros = [np.zeros(s) for s in code_shapes(params, op.in_shape)]
    codes = [[z, z] for z in zeros]
    steps = []
    for t in range(1, params.n_sweeps + 1):
        sweep = []
        for i in range(n):
            cur, prev = codes[i][t], codes[i][t - 1]
            x_hat = cur + params.extrapolation[i] * (cur - prev)
            below = codes[i - 1][t + 1] if i > 0 else None
            above = codes[i + 1][t] if i < n - 1 else None
            try:
                x, pre, g, residual = _layer_step(params, i, x_hat, below, above, y, op)
            except NumericalError as exc:
                raise NumericalError(f"sweep {t}, layer {i + 1}: {exc}") from None
            sweep.append((x_hat, pre, g, residual))
            codes[i].append(x)
        steps.append(sweep)
    top = codes[-1][-1]
    hidden = [(top, soft_threshold_nonneg(top, 0.0))]
    for d in params.dictionaries[:0:-1]:
        pre = conv_synthesis(d, hidden[-1][1])
        hidden.append((pre, soft_threshold_nonneg(pre, 0.0)))
    prediction = conv_synthesis(params.dictionaries[0], hidden[-1][1])
    if not np.all(np.isfinite(prediction)):
        raise NumericalError("non-finite prediction")
    return Tape(codes, steps, hidden, prediction, y, op)


def _backward(params: ModelParams, tape: Tape, pred_bar) -> ParamGradients:
    n, t_max = params.n_layers, params.n_sweeps
    sd = params.spatial_ndim
    dicts = params.dictionaries
    alphas, lips, ws = params.alphas, params.lipschitz, params.extrapolation
    d_bar = [np.zeros_like(d) for d in dicts]
    b_bar = [np.zeros_like(b) for b in params.biases]
    l_bar = np.zeros(n)
    w_bar = np.zeros(n)
    lead_axes = None

    # prediction cascade
    h = tape.hidden
    d_bar[0] += filter_gradient(h[-1][1], pred_bar, dicts[0].shape[2:])
    h_bar = conv_analysis(dicts[0], pred_bar)
    for k in range(n - 1, 0, -1):
        # h[k] = relu(D_j h[k-1]) with j the (n - k)-th dictionary
        j = n - k
        pre_bar = h_bar * (h[k][0] > 0)
        d_bar[j] += filter_gradient(h[k - 1][1], pre_bar, dicts[j].shape[2:])
        h_bar = conv_analysis(dicts[j], pre_bar)
    top_pre = h[0][0]
    h_bar = h_bar * (top_pre > 0)

    # x_bar[i][t + 1] accumulates the adjoint of x_i at sweep t
    x_bar = [[None] * (t_max + 2) for _ in range(n)]

    def add(i, idx, v):
        x_bar[i][idx] = v if x_bar[i][idx] is None else x_bar[i][idx] + v

    add(n - 1, t_max + 1, h_bar)
    for t in range(t_max, 0, -1):
        for i in range(n - 1, -1, -1):
            xb = x_bar[i][t + 1]
            if xb is None:
                continue
            x_hat, pre, g, residual = tape.steps[t - 1][i]
            a_bar = xb * (pre > 0)
            if lead_axes is None:
                lead_axes = tuple(range(a_bar.ndim - sd - 1)) + tuple(range(a_bar.ndim - sd, a_bar.ndim))
            b = per_channel(params.biases[i], sd)
            b_bar[i] -= a_bar.sum(axis=lead_axes) / lips[i]
            l_bar[i] += float(np.sum(a_bar * (g + b))) / lips[i] ** 2
            g_bar = -a_bar / lips[i]
            x_hat_bar = a_bar.copy()

            if i < n - 1:
                above = tape.codes[i + 1][t]
                x_hat_bar += alphas[i + 1] * g_bar
                add(i + 1, t, -alphas[i + 1] * conv_analysis(dicts[i + 1], g_bar))
                d_bar[i + 1] -= alphas[i + 1] * filter_gradient(above, g_bar, dicts[i + 1].shape[2:])

            # g = alpha_i D_i^T residual
            d_bar[i] += alphas[i] * filter_gradient(g_bar, residual, dicts[i].shape[2:])
            r_bar = alphas[i] * conv_synthesis(dicts[i], g_bar)
            if i == 0:
                # residual = M^T (M D x_hat - y)
                v_bar = tape.op.adjoint(tape.op.apply(r_bar))
            else:
                # residual = D x_hat - x_{i-1}^t
                v_bar = r_bar
                add(i - 1, t + 1, -r_bar)
            x_hat_bar += conv_analysis(dicts[i], v_bar)
            d_bar[i] += filter_gradient(x_hat, v_bar, dicts[i].shape[2:])

            # x_hat = x^{t-1} + w (x^{t-1} - x^{t-2})
            cur, prev = tape.codes[i][t], tape.codes[i][t - 1]
            w_bar[i] += float(np.sum(x_hat_bar * (cur - prev)))
            if t > 1:
                add(i, t, (1.0 + ws[i]) * x_hat_bar)
            if t > 2:
                add(i, t - 1, -ws[i] * x_hat_bar)
    return ParamGradients(d_bar, b_bar, l_bar, w_bar)


def param_gradients_unrolled(params: ModelParams, y, target, operator=None,
                             consistent: bool = False) -> ParamGradients:
    """Mean-squared-error loss of the unrolled prediction and its exact gradient.

    With ``consistent`` the loss is taken after projecting the prediction
    onto ``{z : M z = y}`` (see :func:`mlcsc.linop.project_consistent`).
    The loss value is carried on the returned object as ``.loss``.
    """
    target = np.asarray(target, dtype=float)
    tape = unrolled_forward(params, y, operator)
    if tape.prediction.shape != target.shape:
        raise ValueError(f"prediction shape {tape.prediction.shape} != target {target.shape}")
    if consistent:
        if operator is None:
            raise ValueError("a consistent loss needs a measurement operator")
        diff = project_consistent(operator, tape.prediction, y) - target
        # the projection's Jacobian I - M^+ M is symmetric
        bar = diff - operator.pseudo_inverse(operator.apply(diff))
    else:
        diff = tape.prediction - target
        bar = diff
    grads = _backward(params, tape, (2.0 / diff.size) * bar)
    grads.loss = float(np.mean(diff ** 2))
    if not grads.is_finite():
        raise NumericalError("non-finite parameter gradient")
    return grads


def init_params(channels, kernel_shapes, signal_shape, operator=None, n_sweeps: int = 10,
                bias: float = 0.01, seed=0, delta_gains=None, noise: float = 1.0,
                alphas=None) -> ModelParams:
    """Seeded starting point for training.

    ``channels`` is ``[K_0, ..., K_N]`` and ``kernel_shapes`` one odd kernel
    shape per layer. Filters are Gaussian, scaled to unit spectral norm per
    layer; biases start at ``bias``, extrapolation at 0 and step sizes at the
    Lipschitz bound for ``operator``.

    With ``delta_gains`` (one gain per signal channel) the random filters are
    scaled by ``noise`` and a signed centre tap pair ``+g, -g`` is added for
    every signal channel in layer 1, with identity centre taps in deeper
    layers. The untrained model then passes ``M^T y`` through almost
    unchanged, which is a far better start for restoration tasks.
    """
    from .conv import spectral_norm_sq
    from .linop import ConvolutionOperator

    channels = [int(c) for c in channels]
    if len(kernel_shapes) != len(channels) - 1:
        raise ValueError("need one kernel shape per layer")
    signal_shape = tuple(signal_shape)
    rng = np.random.default_rng(seed)
    dicts = []
    for i, ks in enumerate(kernel_shapes):
        ks = tuple(int(k) for k in np.atleast_1d(ks))
        d = rng.standard_normal((channels[i], channels[i + 1]) + ks)
        norm = spectral_norm_sq(ConvolutionOperator(d, (channels[i + 1],) + signal_shape[1:]),
                                seed=seed)
        dicts.append(d / np.sqrt(norm))
    if delta_gains is not None:
        gains = np.asarray(delta_gains, dtype=float).reshape(-1)
        if gains.size != channels[0] or channels[1] < 2 * channels[0]:
            raise ValueError("delta init needs one gain per signal channel and "
                             "K_1 >= 2 * K_0")
        for i, d in enumerate(dicts):
            d *= noise
            centre = tuple(k // 2 for k in d.shape[2:])
            if i == 0:
                for c, g in enumerate(gains):
                    d[(c, 2 * c) + centre] += g
                    d[(c, 2 * c + 1) + centre] -= g
            else:
                for k in range(min(d.shape[:2])):
                    d[(k, k) + centre] += 1.0
    n = len(dicts)
    draft = ModelParams(dicts, [np.full(c, float(bias)) for c in channels[1:]], np.ones(n),
                        np.zeros(n), alphas, n_sweeps)
    draft.lipschitz = lipschitz_bounds(draft, signal_shape, operator, seed=seed)
    draft.validate()
    return draft


@dataclass
class TrainConfig:
    """Optimizer and schedule settings. ``clip <= 0`` disables gradient clipping."""

    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    loss: str = "mse"
    clip: float = 1.0
    optimizer: str = "sgd"
    momentum: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 0
    checkpoint_dir: str = None
    consistent: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def _project(params: ModelParams):
    params.biases = [np.maximum(b, 0.0) for b in params.biases]
    params.lipschitz = np.maximum(params.lipschitz, L_FLOOR)
    params.extrapolation = np.clip(params.extrapolation, 0.0, W_CEIL)
    return params


class Optimizer:
    """SGD with momentum (default) or Adam, with norm clipping and constraint projection."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.velocity = None
        self.second = None
        self.steps = 0

    def step(self, params: ModelParams, grads: ParamGradients) -> ModelParams:
        cfg = self.config
        if not grads.is_finite():
            raise TrainingError("non-finite gradient passed to optimizer")
        gnorm = grads.norm()
        if cfg.clip and cfg.clip > 0 and gnorm > cfg.clip:
            grads = grads.scaled(cfg.clip / gnorm)
        g = np.concatenate([np.ravel(a) for a in grads.arrays()])
        self.steps += 1
        if cfg.optimizer == "sgd":
            if self.velocity is None:
                self.velocity = np.zeros_like(g)
            self.velocity = cfg.momentum * self.velocity + g
            update = self.velocity
        else:
            if self.velocity is None:
                self.velocity = np.zeros_like(g)
                self.second = np.zeros_like(g)
            self.velocity = cfg.momentum * self.velocity + (1 - cfg.momentum) * g
            self.second = cfg.beta2 * self.second + (1 - cfg.beta2) * g * g
            m_hat = self.velocity / (1 - cfg.momentum ** self.steps)
            v_hat = self.second / (1 - cfg.beta2 ** self.steps)
            update = m_hat / (np.sqrt(v_hat) + cfg.eps)
        vec = param_vector(params) - cfg.learning_rate * update
        return _finish(with_param_vector(params, vec))


def _finish(new) -> ModelParams:
    _project(new)
    return ModelParams(new.dictionaries, new.biases, new.lipschitz, new.extrapolation,
                       new.alphas, new.n_sweeps)


def optimizer_step(params: ModelParams, grads: ParamGradients, config: TrainConfig,
                   optimizer: Optimizer = None) -> ModelParams:
    """One update; pass the same ``optimizer`` across calls to keep momentum."""
    return (optimizer or Optimizer(config)).step(params, grads)


@dataclass
class TrainResult:
    params: ModelParams
    epoch_loss: list = field(default_factory=list)
    log: list = field(default_factory=list)   # (epoch, batch, loss, grad_norm)


def _batch(examples):
    ys = np.stack([np.asarray(e[0], dtype=float) for e in examples])
    zs = np.stack([np.asarray(e[2], dtype=float) for e in examples])
    ops = [e[1] for e in examples]
    if all(op is None for op in ops):
        op = None
    else:
        op = Stacked([Identity(np.shape(e[2])) if o is None else o
                      for o, e in zip(ops, examples)])
    return ys, op, zs


def train(dataset, init: ModelParams, config: TrainConfig) -> TrainResult:
    """Minimize the mean prediction loss over ``dataset`` of ``(y, M, z)`` triples.

    ``M`` may be ``None`` for the identity. Runs are deterministic given
    ``config.seed``.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    opt = Optimizer(config)
    params = init.copy()
    result = TrainResult(params)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size), start=1):
            chunk = [dataset[k] for k in order[start:start + config.batch_size]]
            ys, op, zs = _batch(chunk)
            try:
                grads = param_gradients_unrolled(params, ys, zs, op, config.consistent)
            except NumericalError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
            if not np.isfinite(grads.loss):
                raise TrainingError(f"epoch {epoch}, batch {b}: loss is not finite")
            gnorm = grads.norm()
            result.log.append((epoch, b, grads.loss, gnorm))
            params = opt.step(params, grads)
            total += grads.loss * len(chunk)
            count += len(chunk)
        result.epoch_loss.append(total / count)
        logger.debug("epoch %d loss %.6g", epoch, total / count)
        if config.checkpoint_every and config.checkpoint_dir and epoch % config.checkpoint_every == 0:
            from .io import save_params
            save_params(params, f"{config.checkpoint_dir}/epoch{epoch:04d}")
    result.params = params
    return result
