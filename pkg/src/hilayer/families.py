"""Seeded random test families: Gaussian bump sums and band-limited noise.

Every generator takes an explicit seed and spawns independent per-instance
generators, so scans are reproducible and parallel-safe.
"""

from __future__ import annotations

import numpy as np

from .fieldstacks import GaussianBumps

__all__ = ["random_bumps", "band_limited", "boundary_bumps"]


def random_bumps(seed, d: int, count: int = 3, center_box=1.0, width_range=(0.2, 0.35),
                 amp_range=(0.5, 1.0), complex_amps: bool = False,
                 center_offset=None) -> GaussianBumps:
    """Sum of ``count`` Gaussian bumps with centers in [-box, box]^d."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_box, center_box, size=(count, d))
    if center_offset is not None:
        centers = centers + np.asarray(center_offset, dtype=float)
    widths = rng.uniform(*width_range, size=count)
    amps = rng.uniform(*amp_range, size=count) * rng.choice([-1.0, 1.0], size=count)
    if complex_amps:
        amps = amps * np.exp(1j * rng.uniform(0, 2 * np.pi, size=count))
    return GaussianBumps(centers, widths, amps)


def boundary_bumps(seed, n: int, count: int = 3, **kw) -> GaussianBumps:
    """Bump sum over the boundary R^n (for scalar boundary densities)."""
    return random_bumps(seed, n, count, **kw)


def band_limited(seed, shape, spacing, kmin: int = 1, kmax: int = 6,
                 modes: int = 8) -> np.ndarray:
    """Random band-limited complex field on a periodic grid."""
    rng = np.random.default_rng(seed)
    hat = np.zeros(shape, dtype=complex)
    n = len(shape)
    for _ in range(modes):
        k = tuple(int(rng.integers(kmin, kmax + 1)) * int(rng.choice([-1, 1]))
                  for _ in range(n))
        hat[k] = rng.normal() + 1j * rng.normal()
    return np.fft.ifftn(hat) * np.prod(shape) ** 0.5
