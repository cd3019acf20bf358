"""Multi-channel convolutional dictionaries and the dense kernels built on them.

Arrays follow a channels-first layout ``(..., channels, *spatial)``. Any
leading axes are treated as a batch. Convolutions are direct, stride 1,
zero padded and "same" sized, so every layer code keeps the spatial size of
the signal.
"""

from __future__ import annotations

from dataclasses import dataclass
import itertools

import numpy as np

__all__ = [
    "ConvDictionary",
    "ShapeError",
    "conv_synthesis",
    "conv_analysis",
    "filter_gradient",
    "soft_threshold_nonneg",
    "spectral_norm_sq",
    "per_channel",
]


class ShapeError(ValueError):
    """Raised when array shapes do not fit an operation."""


@dataclass(frozen=True)
class ConvDictionary:
    """Filter bank of shape ``(n_out, n_in, *kernel)``.

    ``n_out`` is the channel count of the layer below (the synthesized
    signal), ``n_in`` the channel count of the code. Every kernel extent
    must be odd so that "same" padding is symmetric.
    """

    filters: np.ndarray

    def __post_init__(self):
        filters = np.asarray(self.filters)
        if filters.ndim < 3:
            raise ShapeError(
                f"filters need shape (n_out, n_in, *kernel), got {filters.shape}")
        if any(k % 2 == 0 for k in filters.shape[2:]):
            raise ShapeError(f"kernel extents must be odd, got {filters.shape[2:]}")
        object.__setattr__(self, "filters", filters)

    @property
    def n_out(self) -> int:
        return self.filters.shape[0]

    @property
    def n_in(self) -> int:
        return self.filters.shape[1]

    @property
    def kernel_shape(self) -> tuple:
        return self.filters.shape[2:]

    @property
    def spatial_ndim(self) -> int:
        return self.filters.ndim - 2

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.filters, dtype=dtype)


def _as_filters(dictionary) -> np.ndarray:
    if isinstance(dictionary, ConvDictionary):
        return dictionary.filters
    return ConvDictionary(dictionary).filters


def _split(x: np.ndarray, channels: int, sd: int, what: str):
    if x.ndim < sd + 1:
        raise ShapeError(f"{what} of shape {x.shape} has too few axes for a "
                         f"{sd}-d convolution")
    if x.shape[-sd - 1] != channels:
        raise ShapeError(f"{what} has {x.shape[-sd - 1]} channels, "
                         f"dictionary expects {channels}")
    return x.shape[:-sd - 1], x.shape[-sd:]


def _padded_channels_first(x, lead, spatial, pad):
    """Zero-pad the spatial axes by ``pad`` and move channels to axis 0."""
    c = x.shape[-len(spatial) - 1]
    flat = x.reshape((-1, c) + tuple(spatial))
    out = np.zeros((c, flat.shape[0]) + tuple(s + 2 * p for s, p in zip(spatial, pad)),
                   dtype=np.result_type(x, np.float64) if x.dtype.kind != "f" else x.dtype)
    inner = tuple(slice(p, p + s) for p, s in zip(pad, spatial))
    out[(slice(None), slice(None)) + inner] = np.moveaxis(flat, 1, 0)
    return out


def _window(start, spatial):
    return (slice(None), slice(None)) + tuple(
        slice(s, s + n) for s, n in zip(start, spatial))


def conv_synthesis(dictionary, code) -> np.ndarray:
    """Synthesize ``D x``: sum over input channels of filter-code convolutions.

    ``code`` has shape ``(..., n_in, *spatial)``; the result has shape
    ``(..., n_out, *spatial)``.
    """
    g = _as_filters(dictionary)
    code = np.asarray(code)
    sd = g.ndim - 2
    lead, spatial = _split(code, g.shape[1], sd, "code")
    centre = tuple(k // 2 for k in g.shape[2:])
    xp = _padded_channels_first(code, lead, spatial, centre)
    out = np.zeros((g.shape[0], xp.shape[1]) + tuple(spatial),
                   dtype=np.result_type(g, xp))
    for k in itertools.product(*(range(n) for n in g.shape[2:])):
        start = tuple(2 * c - kk for c, kk in zip(centre, k))
        out += np.tensordot(g[(slice(None), slice(None)) + k],
                            xp[_window(start, spatial)], axes=(1, 0))
    return np.moveaxis(out, 0, 1).reshape(lead + (g.shape[0],) + tuple(spatial))


def conv_analysis(dictionary, signal) -> np.ndarray:
    """Apply ``D^T``, the exact adjoint of :func:`conv_synthesis`.

    This is a multi-channel correlation; ``signal`` has shape
    ``(..., n_out, *spatial)`` and the result ``(..., n_in, *spatial)``.
    """
    g = _as_filters(dictionary)
    signal = np.asarray(signal)
    sd = g.ndim - 2
    lead, spatial = _split(signal, g.shape[0], sd, "signal")
    centre = tuple(k // 2 for k in g.shape[2:])
    sp = _padded_channels_first(signal, lead, spatial, centre)
    out = np.zeros((g.shape[1], sp.shape[1]) + tuple(spatial),
                   dtype=np.result_type(g, sp))
    for k in itertools.product(*(range(n) for n in g.shape[2:])):
        out += np.tensordot(g[(slice(None), slice(None)) + k].T,
                            sp[_window(k, spatial)], axes=(1, 0))
    return np.moveaxis(out, 0, 1).reshape(lead + (g.shape[1],) + tuple(spatial))


def filter_gradient(code, signal, kernel_shape) -> np.ndarray:
    """Gradient of ``<conv_synthesis(D, code), signal>`` with respect to ``D``.

    Leading (batch) axes are summed over. Returns an array of shape
    ``(n_out, n_in, *kernel_shape)``.
    """
    code = np.asarray(code)
    signal = np.asarray(signal)
    kernel_shape = tuple(kernel_shape)
    sd = len(kernel_shape)
    n_in = code.shape[-sd - 1]
    n_out = signal.shape[-sd - 1]
    lead, spatial = _split(code, n_in, sd, "code")
    if signal.shape[:-sd - 1] != lead or signal.shape[-sd:] != spatial:
        raise ShapeError(f"code {code.shape} and signal {signal.shape} disagree")
    centre = tuple(k // 2 for k in kernel_shape)
    xp = _padded_channels_first(code, lead, spatial, centre)
    s = np.moveaxis(signal.reshape((-1, n_out) + tuple(spatial)), 1, 0)
    grad = np.empty((n_out, n_in) + kernel_shape, dtype=np.result_type(xp, s))
    axes = list(range(1, s.ndim))
    for k in itertools.product(*(range(n) for n in kernel_shape)):
        start = tuple(2 * c - kk for c, kk in zip(centre, k))
        grad[(slice(None), slice(None)) + k] = np.tensordot(
            s, xp[_window(start, spatial)], axes=(axes, axes))
    return grad


def per_channel(values, spatial_ndim: int) -> np.ndarray:
    """Reshape a per-channel vector so it broadcasts over ``spatial_ndim`` axes."""
    values = np.asarray(values)
    return values.reshape(values.shape + (1,) * spatial_ndim)


def soft_threshold_nonneg(x, b) -> np.ndarray:
    """Non-negative soft threshold ``max(x - b, 0)``, i.e. ``ReLU(x - b)``.

    ``b`` must be non-negative and broadcastable against ``x`` (use
    :func:`per_channel` for per-channel thresholds).
    """
    b = np.asarray(b)
    if np.any(b < 0):
        raise ValueError("soft threshold must be non-negative")
    # + 0.0 folds -0.0 into +0.0 so results are bitwise reproducible
    return np.maximum(np.asarray(x) - b, 0.0) + 0.0


def spectral_norm_sq(op, iters: int = 100, seed: int = 0) -> float:
    """Estimate ``||op||^2`` by power iteration on ``op^T op``.

    ``op`` is anything with ``in_shape``, ``apply`` and ``adjoint``
    (see :class:`mlcsc.linop.LinearOperator`).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.in_shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = op.adjoint(op.apply(v))
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
    est = float(np.sum(op.apply(v) ** 2))
    return est
