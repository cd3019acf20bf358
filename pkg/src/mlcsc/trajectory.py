"""Orbiting orthographic cameras and 3-D point trajectories.

Trajectories are ``(3, F)`` arrays (x, y, z over F frames) in a frame
centred on the orbit centre; batches stack points as ``(P, 3, F)``.
Cameras rotate about the vertical (+y) axis, right-handed, so a quarter
turn maps +z onto the image x axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import ShapeError, conv_synthesis
from .linop import LinearOperator

__all__ = [
    "CameraSequence",
    "CameraStack",
    "make_orbit_cameras",
    "build_traj_operator",
    "backproject_input",
    "synth_trajectories",
    "rotation_y",
]

_AXIS_PROJECTION = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def rotation_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class CameraSequence:
    """Per-frame ``2 x 3`` orthographic projections, shape ``(F, 2, 3)``."""

    matrices: np.ndarray
    fps: float = 30.0
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=np.float64)
        if m.ndim != 3 or m.shape[1:] != (2, 3) or m.shape[0] < 1:
            raise ShapeError(f"camera matrices need shape (F, 2, 3), got {m.shape}")
        object.__setattr__(self, "matrices", m)

    @property
    def n_frames(self) -> int:
        return self.matrices.shape[0]


def make_orbit_cameras(frames: int, rate_rad_per_s: float = np.pi, fps: float = 30.0,
                       center=(0.0, 0.0, 0.0), phase: float = 0.0) -> CameraSequence:
    """Cameras orbiting ``center``; frame f sits at angle ``phase + f * rate / fps``."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    if fps <= 0:
        raise ValueError("fps must be positive")
    thetas = phase + np.arange(frames) * rate_rad_per_s / fps
    mats = np.stack([_AXIS_PROJECTION @ rotation_y(t) for t in thetas])
    return CameraSequence(mats, float(fps), tuple(float(c) for c in center))


class CameraStack(LinearOperator):
    """Block-diagonal projection: frame f of a ``(3, F)`` signal goes through ``M_f``."""

    kind = "camera-stack"

    def __init__(self, cams: CameraSequence):
        f = cams.n_frames
        super().__init__((3, f), (2, f))
        self.cameras = cams

    def _apply(self, x):
        return np.einsum("fij,jf->if", self.cameras.matrices, x)

    def _adjoint(self, y):
        return np.einsum("fij,if->jf", self.cameras.matrices, y)


def build_traj_operator(cams: CameraSequence) -> CameraStack:
    return CameraStack(cams)


def backproject_input(cams: CameraSequence, y) -> np.ndarray:
    """``M^T y``: 2-D observations lifted back to a ``(3, F)`` signal."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (2, cams.n_frames):
        raise ShapeError(f"observations need shape (2, {cams.n_frames}), got {y.shape}")
    return CameraStack(cams).adjoint(y)


def synth_trajectories(dictionary, codes) -> np.ndarray:
    """Planted trajectories ``D x`` from temporal filters with 3 output channels."""
    z = conv_synthesis(dictionary, codes)
    if z.shape[-2] != 3:
        raise ShapeError(f"trajectory dictionary must have 3 output channels, got {z.shape[-2]}")
    return z
