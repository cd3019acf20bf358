"""Measurement operators with exact adjoints.

Every operator maps arrays of ``in_shape`` to ``out_shape`` and its
``adjoint`` is the exact transpose. Operators are immutable once built.
"""

from __future__ import annotations

import numpy as np

from .conv import ShapeError, conv_analysis, conv_synthesis, ConvDictionary

__all__ = [
    "LinearOperator",
    "Identity",
    "DiagonalMask",
    "BlockwiseDense",
    "Composition",
    "LinearCombination",
    "Blend",
    "Stacked",
    "ConvolutionOperator",
    "compose",
    "stack",
    "make_inpainting_mask",
    "make_block_transform",
    "make_alpha_blend",
    "assemble",
    "project_consistent",
]


def _shape(shape):
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"shape extents must be positive, got {shape}")
    return shape


class LinearOperator:
    """Base class: subclasses implement ``_apply`` and ``_adjoint``.

    ``kind`` names the operator family; it is what the serializer keys on.
    """

    kind = "abstract"

    def __init__(self, in_shape, out_shape):
        self.in_shape = _shape(in_shape)
        self.out_shape = _shape(out_shape)

    def apply(self, x):
        x = np.asarray(x)
        if x.shape != self.in_shape:
            raise ShapeError(f"{self.kind}: input shape {x.shape} != {self.in_shape}")
        return self._apply(x)

    def adjoint(self, y):
        y = np.asarray(y)
        if y.shape != self.out_shape:
            raise ShapeError(f"{self.kind}: adjoint input shape {y.shape} != {self.out_shape}")
        return self._adjoint(y)

    def _apply(self, x):
        raise NotImplementedError

    def pseudo_inverse(self, y):
        """Moore-Penrose pseudo-inverse ``M^+ y``, for families with a closed form."""
        y = np.asarray(y)
        if y.shape != self.out_shape:
            raise ShapeError(f"{self.kind}: pseudo-inverse input shape {y.shape} "
                             f"!= {self.out_shape}")
        return self._pinv(y)

    def _adjoint(self, y):
        raise NotImplementedError

    def _pinv(self, y):
        raise NotImplementedError(f"operator kind {self.kind!r} has no closed-form "
                                  "pseudo-inverse")

    @property
    def T(self) -> "LinearOperator":
        return _Adjoint(self)

    def __repr__(self):
        return f"{type(self).__name__}(in_shape={self.in_shape}, out_shape={self.out_shape})"


class _Adjoint(LinearOperator):
    kind = "adjoint"

    def __init__(self, op):
        super().__init__(op.out_shape, op.in_shape)
        self.op = op

    def _apply(self, x):
        return self.op._adjoint(x)

    def _adjoint(self, y):
        return self.op._apply(y)


class Identity(LinearOperator):
    kind = "identity"

    def __init__(self, shape):
        super().__init__(shape, shape)

    def _apply(self, x):
        return x.copy()

    _adjoint = _apply
    _pinv = _apply


class DiagonalMask(LinearOperator):
    """Elementwise multiplication by a fixed array (symmetric)."""

    kind = "diagonal-mask"

    def __init__(self, mask):
        mask = np.array(mask, dtype=np.float64)
        super().__init__(mask.shape, mask.shape)
        mask.setflags(write=False)
        self.mask = mask

    def _apply(self, x):
        return x * self.mask

    _adjoint = _apply

    def _pinv(self, y):
        nz = self.mask != 0
        return np.where(nz, y / np.where(nz, self.mask, 1.0), 0.0)


class BlockwiseDense(LinearOperator):
    """Independent dense maps on non-overlapping square patches.

    ``matrices`` has shape ``(C, H/e, W/e, e*e, e*e)``: one matrix per
    channel and patch, acting on the row-major flattened ``e x e`` patch.
    """

    kind = "blockwise-dense"

    def __init__(self, matrices, block_edge: int):
        matrices = np.array(matrices, dtype=np.float64)
        e = int(block_edge)
        if matrices.ndim != 5 or matrices.shape[3:] != (e * e, e * e):
            raise ShapeError(f"matrices must have shape (C, H/e, W/e, {e*e}, {e*e}), "
                             f"got {matrices.shape}")
        c, nh, nw = matrices.shape[:3]
        shape = (c, nh * e, nw * e)
        super().__init__(shape, shape)
        matrices.setflags(write=False)
        self.matrices = matrices
        self.block_edge = e

    def _to_blocks(self, x):
        c, h, w = x.shape
        e = self.block_edge
        return x.reshape(c, h // e, e, w // e, e).transpose(0, 1, 3, 2, 4).reshape(
            c, h // e, w // e, e * e)

    def _from_blocks(self, blocks):
        c, nh, nw, _ = blocks.shape
        e = self.block_edge
        return blocks.reshape(c, nh, nw, e, e).transpose(0, 1, 3, 2, 4).reshape(
            c, nh * e, nw * e)

    def _apply(self, x):
        return self._from_blocks(np.einsum("cijmn,cijn->cijm", self.matrices,
                                           self._to_blocks(x)))

    def _adjoint(self, y):
        return self._from_blocks(np.einsum("cijmn,cijm->cijn", self.matrices,
                                           self._to_blocks(y)))


class Composition(LinearOperator):
    """``outer`` after ``inner``."""

    kind = "composition"

    def __init__(self, outer: LinearOperator, inner: LinearOperator):
        if inner.out_shape != outer.in_shape:
            raise ShapeError(f"cannot compose: inner output {inner.out_shape} "
                             f"!= outer input {outer.in_shape}")
        super().__init__(inner.in_shape, outer.out_shape)
        self.outer = outer
        self.inner = inner

    def _apply(self, x):
        return self.outer._apply(self.inner._apply(x))

    def _adjoint(self, y):
        return self.inner._adjoint(self.outer._adjoint(y))


def compose(outer: LinearOperator, inner: LinearOperator) -> Composition:
    return Composition(outer, inner)


class LinearCombination(LinearOperator):
    """``sum_k weights[k] * ops[k]`` for operators of equal shapes."""

    kind = "linear-combination"

    def __init__(self, weights, ops):
        ops = list(ops)
        weights = [float(w) for w in weights]
        if not ops or len(ops) != len(weights):
            raise ValueError("need one weight per operator")
        for op in ops[1:]:
            if op.in_shape != ops[0].in_shape or op.out_shape != ops[0].out_shape:
                raise ShapeError("combined operators must share shapes")
        super().__init__(ops[0].in_shape, ops[0].out_shape)
        self.weights = weights
        self.ops = ops

    def _apply(self, x):
        out = self.weights[0] * self.ops[0]._apply(x)
        for w, op in zip(self.weights[1:], self.ops[1:]):
            out = out + w * op._apply(x)
        return out

    def _adjoint(self, y):
        out = self.weights[0] * self.ops[0]._adjoint(y)
        for w, op in zip(self.weights[1:], self.ops[1:]):
            out = out + w * op._adjoint(y)
        return out


class Blend(LinearCombination):
    """``(1 - alpha) * first + alpha * second``."""

    kind = "blend"

    def __init__(self, first, second, alpha: float):
        alpha = float(alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        super().__init__([1.0 - alpha, alpha], [first, second])
        self.alpha = alpha


class Stacked(LinearOperator):
    """Block-diagonal stack acting on a leading batch axis, one child per row."""

    kind = "stacked"

    def __init__(self, ops):
        ops = list(ops)
        if not ops:
            raise ValueError("need at least one operator to stack")
        for op in ops[1:]:
            if op.in_shape != ops[0].in_shape or op.out_shape != ops[0].out_shape:
                raise ShapeError("stacked operators must share shapes")
        super().__init__((len(ops),) + ops[0].in_shape, (len(ops),) + ops[0].out_shape)
        self.ops = ops

    def _apply(self, x):
        return np.stack([op._apply(xi) for op, xi in zip(self.ops, x)])

    def _adjoint(self, y):
        return np.stack([op._adjoint(yi) for op, yi in zip(self.ops, y)])

    def _pinv(self, y):
        return np.stack([op._pinv(yi) for op, yi in zip(self.ops, y)])


def stack(ops) -> LinearOperator:
    """Stack per-example operators along a new batch axis."""
    return Stacked(ops)


class ConvolutionOperator(LinearOperator):
    """Convolutional synthesis ``x -> D x`` on codes of a fixed shape."""

    kind = "convolution"

    def __init__(self, dictionary, code_shape):
        d = dictionary if isinstance(dictionary, ConvDictionary) else ConvDictionary(dictionary)
        code_shape = tuple(code_shape)
        sd = d.spatial_ndim
        out = code_shape[:-sd - 1] + (d.n_out,) + code_shape[-sd:]
        super().__init__(code_shape, out)
        self.dictionary = d

    def _apply(self, x):
        return conv_synthesis(self.dictionary, x)

    def _adjoint(self, y):
        return conv_analysis(self.dictionary, y)


def make_inpainting_mask(shape, drop_probability: float, seed=None) -> DiagonalMask:
    """Diagonal 0/1 mask dropping each entry independently with the given probability."""
    p = float(drop_probability)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"drop_probability must lie in [0, 1), got {p}")
    rng = np.random.default_rng(seed)
    keep = rng.random(_shape(shape)) >= p
    return DiagonalMask(keep.astype(np.float64))


def make_block_transform(shape, block_edge: int = 4, seed=None) -> BlockwiseDense:
    """Random well-posed dense map on every ``block_edge`` square patch.

    Each patch matrix is Gaussian, rescaled to unit spectral norm, plus
    ``0.1 * I``. Matrices are drawn independently per channel and patch.
    """
    shape = _shape(shape)
    if len(shape) != 3:
        raise ShapeError(f"block transform expects (C, H, W), got {shape}")
    e = int(block_edge)
    c, h, w = shape
    if e < 1 or h % e or w % e:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by block edge {e}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((c, h // e, w // e, e * e, e * e))
    norms = np.linalg.norm(g, ord=2, axis=(-2, -1))
    g = g / norms[..., None, None] + 0.1 * np.eye(e * e)
    return BlockwiseDense(g, e)


def make_alpha_blend(mask_op: LinearOperator, block_op: LinearOperator, alpha: float) -> Blend:
    """Interpolate between inpainting (``alpha=0``) and block recovery (``alpha=1``)."""
    if mask_op.in_shape != block_op.in_shape or mask_op.out_shape != block_op.out_shape:
        raise ShapeError("blend operands must share shapes")
    return Blend(mask_op, block_op, alpha)


def project_consistent(op: LinearOperator, z, y) -> np.ndarray:
    """Closest signal to ``z`` that reproduces the measurement: ``z + M^+ (y - M z)``."""
    z = np.asarray(z, dtype=np.float64)
    return z + op.pseudo_inverse(np.asarray(y, dtype=np.float64) - op.apply(z))


def assemble(op: LinearOperator) -> np.ndarray:
    """Dense matrix of ``op`` built column by column from unit vectors."""
    n = int(np.prod(op.in_shape))
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(op.apply(e.reshape(op.in_shape)).ravel())
    return np.stack(cols, axis=1)
