"""Planted two-layer generators for 1-D multichannel signals.

A planted model has smooth three-channel layer-1 filters, non-negative
bump-shaped layer-2 filters and a handful of well separated positive
spikes in the top code. Signals ``z = D_1 D_2 x_2`` are exactly
representable, so injecting the generating parameters into the solver
gives an oracle for recovery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import conv_synthesis
from .solver import ModelParams, lipschitz_bounds

__all__ = ["PlantedModel", "make_planted_model"]


@dataclass(frozen=True)
class PlantedModel:
    dictionaries: tuple
    length: int
    n_active: int = 3
    spacing: int = 20
    margin: int = 10
    amplitude: tuple = (1.0, 3.0)

    @property
    def channels(self) -> int:
        return self.dictionaries[0].shape[0]

    def sample_codes(self, rng) -> np.ndarray:
        """Top-layer code with ``n_active`` spikes on a coarse grid."""
        k = self.dictionaries[-1].shape[1]
        x = np.zeros((k, self.length))
        slots = np.arange(self.margin, self.length - self.margin, self.spacing)
        pos = rng.choice(slots, self.n_active, replace=False)
        x[rng.integers(0, k, self.n_active), pos] = rng.uniform(*self.amplitude, self.n_active)
        return x

    def synthesize(self, codes) -> np.ndarray:
        out = codes
        for d in reversed(self.dictionaries):
            out = conv_synthesis(d, out)
        return out

    def sample(self, rng) -> np.ndarray:
        return self.synthesize(self.sample_codes(rng))

    def solver_params(self, operator=None, bias: float = 1e-5, extrapolation: float = 0.99,
                      n_sweeps: int = 6000) -> ModelParams:
        """The generating dictionaries with a tiny bias and step sizes at the bound."""
        n = len(self.dictionaries)
        p = ModelParams(list(self.dictionaries),
                        [np.full(d.shape[1], float(bias)) for d in self.dictionaries],
                        np.ones(n), np.full(n, float(extrapolation)), n_sweeps=n_sweeps)
        p.lipschitz = lipschitz_bounds(p, (self.channels, self.length), operator, iters=300)
        p.validate()
        return p


def _smooth_filters(rng, n_out, n_in, size):
    t = np.arange(size) - size // 2
    envelope = np.exp(-t ** 2 / (2 * (size / 5) ** 2))
    basis = np.stack([np.ones(size), t / (size / 2), (t / (size / 2)) ** 2])
    f = np.einsum("oik,kf->oif", rng.standard_normal((n_out, n_in, 3)), basis) * envelope
    return f / np.linalg.norm(f, axis=(0, 2), keepdims=True)


def _bump_filters(rng, n_out, n_in, size):
    t = np.arange(size) - size // 2
    f = np.abs(rng.standard_normal((n_out, n_in, size))) * np.exp(-t ** 2 / (2 * (size / 4) ** 2))
    return f / np.linalg.norm(f, axis=(0, 2), keepdims=True)


def make_planted_model(seed=0, length: int = 150, channels: int = 3, atoms=(3, 1),
                       sizes=(15, 5), n_active: int = 3) -> PlantedModel:
    """Seeded planted generator; defaults give 3-D trajectories of ``length`` frames."""
    rng = np.random.default_rng(seed)
    d1 = _smooth_filters(rng, channels, atoms[0], sizes[0])
    d2 = _bump_filters(rng, atoms[0], atoms[1], sizes[1])
    return PlantedModel((d1, d2), int(length), int(n_active))
