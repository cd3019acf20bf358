"""Locally linear JPEG degradation.

The lossy part of baseline JPEG is modelled as ``zeroing @ dct @ downsample``
acting on a level-shifted YCbCr image: coefficients that quantize to zero
are dropped, every surviving coefficient is passed through unrounded.

The signal domain is ``(3, H, W)`` with channels ``(Y - 128/255, Cb, Cr)``
in [0, 1] units, so a dropped DC coefficient means "mid grey" exactly as in
a real decoder. Measurements are a flat vector packing the luma plane's
coefficients followed by the two half-resolution chroma planes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import ShapeError
from .linop import Composition, DiagonalMask, LinearOperator

__all__ = [
    "LUMINANCE_BASE",
    "CHROMINANCE_BASE",
    "QuantTable",
    "quant_table",
    "color_transform",
    "chroma_resample",
    "dct_matrix",
    "dct8",
    "ChromaDownsample",
    "BlockDCT",
    "JPEGOperator",
    "jpeg_signal",
    "signal_to_rgb",
    "build_jpeg_operator",
    "decompress",
]

LEVEL_SHIFT = 128.0 / 255.0

LUMINANCE_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
])

CHROMINANCE_BASE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
])

# full-range BT.601 (JFIF), chroma centred on zero
_RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


@dataclass(frozen=True)
class QuantTable:
    luminance: np.ndarray
    chrominance: np.ndarray
    quality_factor: int


def _check_quality(quality_factor) -> int:
    qf = int(quality_factor)
    if qf != quality_factor or not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be an integer in [1, 100], got {quality_factor}")
    return qf


def quant_table(quality_factor: int) -> QuantTable:
    """Baseline-JPEG quantization tables scaled to a quality factor."""
    qf = _check_quality(quality_factor)
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf

    def scaled(base):
        return np.clip((base * scale + 50) // 100, 1, 255)

    return QuantTable(scaled(LUMINANCE_BASE), scaled(CHROMINANCE_BASE), qf)


def color_transform(image, direction: str = "forward") -> np.ndarray:
    """RGB <-> YCbCr on ``(3, H, W)`` arrays in [0, 1] units."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 1 or image.shape[0] != 3:
        raise ShapeError(f"color transform needs 3 channels first, got {image.shape}")
    if direction == "forward":
        m = _RGB_TO_YCC
    elif direction == "inverse":
        m = _YCC_TO_RGB
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return np.tensordot(m, image, axes=(1, 0))


def chroma_resample(plane, direction: str = "down") -> np.ndarray:
    """2x2 block average (``down``) or its exact adjoint (``up``).

    The adjoint replicates each sample into a 2x2 block scaled by 1/4.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim < 2:
        raise ShapeError(f"plane needs two spatial axes, got {plane.shape}")
    *lead, h, w = plane.shape
    if direction == "down":
        if h % 2 or w % 2:
            raise ShapeError(f"cannot downsample odd plane {(h, w)}")
        return plane.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))
    if direction == "up":
        return 0.25 * np.repeat(np.repeat(plane, 2, axis=-2), 2, axis=-1)
    raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")


def dct_matrix(n: int = 8) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``coeffs = C @ samples``."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    c = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * j + 1) * k / (2 * n))
    c[0] /= np.sqrt(2.0)
    return c


_C8 = dct_matrix(8)


def dct8(block, direction: str = "forward") -> np.ndarray:
    """Orthonormal 2-D DCT-II of 8x8 blocks (leading axes are batched)."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape[-2:] != (8, 8):
        raise ShapeError(f"dct8 needs 8x8 blocks, got {block.shape}")
    c = _C8 if direction == "forward" else _C8.T
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return c @ block @ c.T


def _plane_shapes(h, w):
    return [(h, w), (h // 2, w // 2), (h // 2, w // 2)]


def _split_planes(vec, h, w):
    out, start = [], 0
    for ph, pw in _plane_shapes(h, w):
        out.append(vec[start:start + ph * pw].reshape(ph, pw))
        start += ph * pw
    return out


def _pack(planes):
    return np.concatenate([p.ravel() for p in planes])


class ChromaDownsample(LinearOperator):
    """``(3, H, W)`` -> packed ``[Y, down(Cb), down(Cr)]`` vector."""

    kind = "chroma-downsample"

    def __init__(self, height: int, width: int):
        if height % 2 or width % 2:
            raise ShapeError(f"image dims {(height, width)} must be even")
        n = height * width + 2 * (height // 2) * (width // 2)
        super().__init__((3, height, width), (n,))
        self.height, self.width = height, width

    def _apply(self, x):
        return _pack([x[0], chroma_resample(x[1], "down"), chroma_resample(x[2], "down")])

    def _adjoint(self, y):
        yy, cb, cr = _split_planes(y, self.height, self.width)
        return np.stack([yy, chroma_resample(cb, "up"), chroma_resample(cr, "up")])


def _blockwise(plane, c):
    h, w = plane.shape
    b = plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    return (c @ b @ c.T).transpose(0, 2, 1, 3).reshape(h, w)


class BlockDCT(LinearOperator):
    """8x8 blockwise orthonormal DCT of each plane in the packed layout."""

    kind = "block-dct"

    def __init__(self, height: int, width: int):
        if height % 16 or width % 16:
            raise ShapeError(f"image dims {(height, width)} must be divisible by 16")
        n = height * width + 2 * (height // 2) * (width // 2)
        super().__init__((n,), (n,))
        self.height, self.width = height, width

    def _apply(self, x):
        return _pack([_blockwise(p, _C8) for p in _split_planes(x, self.height, self.width)])

    def _adjoint(self, y):
        return _pack([_blockwise(p, _C8.T) for p in _split_planes(y, self.height, self.width)])


class JPEGOperator(Composition):
    """``zeroing @ dct @ downsample`` for one image."""

    kind = "jpeg-pipeline"

    def __init__(self, height: int, width: int, mask):
        self.height, self.width = height, width
        dct = BlockDCT(height, width)
        self.zeroing = DiagonalMask(mask)
        if self.zeroing.in_shape != dct.out_shape:
            raise ShapeError(f"zeroing mask shape {self.zeroing.in_shape} "
                             f"!= coefficient shape {dct.out_shape}")
        super().__init__(self.zeroing, Composition(dct, ChromaDownsample(height, width)))

    @property
    def mask(self) -> np.ndarray:
        return self.zeroing.mask

    def _pinv(self, y):
        # M M^T is diagonal: 1 on kept luma and 1/4 on kept chroma coefficients
        n = self.height * self.width
        weights = np.full(self.out_shape, 4.0)
        weights[:n] = 1.0
        return self._adjoint(y * weights)

    def planes(self, y):
        """Split a packed coefficient vector into its three planes."""
        return _split_planes(np.asarray(y), self.height, self.width)


def jpeg_signal(image) -> np.ndarray:
    """RGB image in [0, 1] -> level-shifted YCbCr signal."""
    ycc = color_transform(image, "forward")
    ycc[0] -= LEVEL_SHIFT
    return ycc


def signal_to_rgb(signal) -> np.ndarray:
    """Inverse of :func:`jpeg_signal`."""
    ycc = np.array(signal, dtype=np.float64)
    ycc[0] += LEVEL_SHIFT
    return color_transform(ycc, "inverse")


def _zeroing_mask(coeffs, height, width, table: QuantTable):
    planes = _split_planes(255.0 * coeffs, height, width)
    masks = []
    for p, q in zip(planes, (table.luminance, table.chrominance, table.chrominance)):
        ph, pw = p.shape
        tiled = np.tile(q, (ph // 8, pw // 8))
        quantized = np.sign(p) * np.floor(np.abs(p) / tiled + 0.5)
        masks.append(quantized != 0)
    return _pack(masks).astype(np.float64)


def build_jpeg_operator(image, quality_factor: int):
    """Per-image JPEG operator and its measurement.

    ``image`` is RGB ``(3, H, W)`` in [0, 1] with ``H, W`` divisible by 16.
    Returns ``(operator, y)`` where ``y = operator.apply(jpeg_signal(image))``.
    """
    table = quant_table(quality_factor)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected an RGB image of shape (3, H, W), got {image.shape}")
    _, h, w = image.shape
    if h % 16 or w % 16:
        raise ShapeError(f"image dims {(h, w)} must be divisible by 16")
    z = jpeg_signal(image)
    lossless = Composition(BlockDCT(h, w), ChromaDownsample(h, w))
    mask = _zeroing_mask(lossless.apply(z), h, w, table)
    op = JPEGOperator(h, w, mask)
    return op, op.apply(z)


def decompress(y, height: int, width: int) -> np.ndarray:
    """Undo the lossless steps: inverse DCT, chroma replication, back to RGB."""
    planes = _split_planes(np.asarray(y, dtype=np.float64), height, width)
    yy, cb, cr = (_blockwise(p, _C8.T) for p in planes)
    up = lambda p: np.repeat(np.repeat(p, 2, axis=0), 2, axis=1)  # noqa: E731
    return signal_to_rgb(np.stack([yy, up(cb), up(cr)]))
