"""Sampled fields: periodic grids over n-tori and (n+1)-dimensional slabs.

GridField carries uniformly sampled complex values over a box that is
treated as periodic for spectral work; boundary data is expected to decay
inside the box.  SlabField adds a distinguished vertical axis with uniform
spacing and a boundary-plane accessor at t = 0.

Discrete derivatives follow the module policy: spectral differentiation on
periodic grids, 4th-order centered differences in the slab's vertical
direction with one-sided stencils at the edges.
"""

from __future__ import annotations

import numpy as np

from .mindex import MIArray, enumerate_mi

__all__ = ["GridField", "SlabField", "gradient_k", "div_k", "GridTooCoarse"]


class GridTooCoarse(ValueError):
    """Requested derivative order is not meaningful on this grid."""


# 4th-order first-derivative stencils (uniform spacing), rows = offset sets.
_FD1_CENTRAL = (np.array([-2, -1, 0, 1, 2]), np.array([1, -8, 0, 8, -1]) / 12.0)
_FD1_FWD = (np.array([0, 1, 2, 3, 4]), np.array([-25, 48, -36, 16, -3]) / 12.0)
_FD1_FWD1 = (np.array([-1, 0, 1, 2, 3]), np.array([-3, -10, 18, -6, 1]) / 12.0)


class GridField:
    """Complex samples on a uniform grid over a (periodic) box in R^n."""

    def __init__(self, values, spacing, origin=None):
        self.values = np.asarray(values, dtype=complex)
        n = self.values.ndim
        if np.isscalar(spacing):
            spacing = (float(spacing),) * n
        self.spacing = tuple(float(h) for h in spacing)
        if len(self.spacing) != n:
            raise ValueError("spacing length must match grid rank")
        self.origin = tuple(float(o) for o in (origin if origin is not None else (0.0,) * n))

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def box_lengths(self):
        return tuple(N * h for N, h in zip(self.shape, self.spacing))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self):
        return [self.origin[i] + self.spacing[i] * np.arange(self.shape[i])
                for i in range(self.dim)]

    def meshgrid(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def copy(self) -> "GridField":
        return GridField(self.values.copy(), self.spacing, self.origin)

    def like(self, values) -> "GridField":
        values = np.asarray(values, dtype=complex)
        if values.shape != self.shape:
            raise ValueError("shape mismatch")
        return GridField(values, self.spacing, self.origin)

    def freqs(self):
        """Frequency grids (cycles per unit length), fft layout."""
        return [np.fft.fftfreq(N, d=h) for N, h in zip(self.shape, self.spacing)]

    def fft(self):
        return np.fft.fftn(self.values)

    def derivative(self, zeta) -> "GridField":
        """Spectral d^zeta, exact on band-limited samples."""
        zeta = tuple(zeta)
        if len(zeta) != self.dim:
            raise ValueError("multiindex length must match grid rank")
        for N, k in zip(self.shape, zeta):
            if k > 0 and N < 2 * k + 2:
                raise GridTooCoarse(f"grid with {N} points cannot resolve order {k}")
        hat = self.fft()
        for ax, k in enumerate(zeta):
            if k == 0:
                continue
            om = np.fft.fftfreq(self.shape[ax], d=self.spacing[ax])
            mult = (2j * np.pi * om) ** k
            if k % 2 == 1 and self.shape[ax] % 2 == 0:
                mult[self.shape[ax] // 2] = 0.0  # odd derivative kills the Nyquist mode
            shape = [1] * self.dim
            shape[ax] = self.shape[ax]
            hat = hat * mult.reshape(shape)
        return self.like(np.fft.ifftn(hat))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.cell_volume))

    def mean(self) -> complex:
        return complex(self.values.mean())

    def __repr__(self):
        return f"GridField(shape={self.shape}, spacing={self.spacing})"


def _fd_axis(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """4th-order first derivative along one axis, one-sided at edges."""
    N = values.shape[axis]
    if N < 5:
        raise GridTooCoarse("need at least 5 planes for 4th-order stencils")
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    off, w = _FD1_CENTRAL
    for i in range(2, N - 2):
        out[i] = sum(w[j] * v[i + off[j]] for j in range(len(off)))
    for i, (off, w) in ((0, _FD1_FWD), (1, _FD1_FWD1)):
        out[i] = sum(w[j] * v[i + off[j]] for j in range(len(off)))
        out[N - 1 - i] = -sum(w[j] * v[N - 1 - i - off[j]] for j in range(len(off)))
    return np.moveaxis(out, 0, axis) / h


class SlabField:
    """Samples over [box in R^n] x [t_lo, t_hi] with uniform spacings.

    The last axis is the vertical one.  ``boundary_plane`` returns the
    sampled plane at t = 0 when the slab touches the boundary.
    """

    def __init__(self, values, x_spacing, t_values, x_origin=None):
        self.values = np.asarray(values, dtype=complex)
        self.n = self.values.ndim - 1
        if np.isscalar(x_spacing):
            x_spacing = (float(x_spacing),) * self.n
        self.x_spacing = tuple(float(h) for h in x_spacing)
        self.t_values = np.asarray(t_values, dtype=float)
        if self.t_values.ndim != 1 or len(self.t_values) != self.values.shape[-1]:
            raise ValueError("t_values must match the last axis")
        dt = np.diff(self.t_values)
        if len(dt) and not np.allclose(dt, dt[0], rtol=1e-12, atol=1e-14):
            raise ValueError("slab requires uniform vertical spacing")
        self.t_spacing = float(dt[0]) if len(dt) else 0.0
        self.x_origin = tuple(float(o) for o in (x_origin if x_origin is not None else (0.0,) * self.n))

    @property
    def shape(self):
        return self.values.shape

    def x_axes(self):
        return [self.x_origin[i] + self.x_spacing[i] * np.arange(self.values.shape[i])
                for i in range(self.n)]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.x_spacing)) * self.t_spacing

    def boundary_plane(self) -> np.ndarray:
        i = np.argmin(np.abs(self.t_values))
        if abs(self.t_values[i]) > 1e-12 * max(1.0, abs(self.t_spacing)):
            raise ValueError("slab does not touch t = 0")
        return self.values[..., i]

    def like(self, values) -> "SlabField":
        return SlabField(values, self.x_spacing, self.t_values, self.x_origin)

    def derivative(self, zeta) -> "SlabField":
        """d^zeta with zeta in N^{n+1}; spectral in x, FD4 in t."""
        zeta = tuple(zeta)
        if len(zeta) != self.n + 1:
            raise ValueError("multiindex length must be n+1")
        vals = self.values
        if any(zeta[:self.n]):
            hat = np.fft.fftn(vals, axes=tuple(range(self.n)))
            for ax in range(self.n):
                k = zeta[ax]
                if k == 0:
                    continue
                om = np.fft.fftfreq(vals.shape[ax], d=self.x_spacing[ax])
                mult = (2j * np.pi * om) ** k
                if k % 2 == 1 and vals.shape[ax] % 2 == 0:
                    mult[vals.shape[ax] // 2] = 0.0
                shape = [1] * (self.n + 1)
                shape[ax] = vals.shape[ax]
                hat = hat * mult.reshape(shape)
            vals = np.fft.ifftn(hat, axes=tuple(range(self.n)))
        for _ in range(zeta[-1]):
            vals = _fd_axis(vals, self.t_spacing, self.n)
        return self.like(vals)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.cell_volume))

    def __repr__(self):
        return (f"SlabField(shape={self.shape}, x_spacing={self.x_spacing}, "
                f"t=[{self.t_values[0]:g},{self.t_values[-1]:g}])")


def gradient_k(f, k: int) -> MIArray:
    """grad^k f as an array over |zeta| = k, one entry per multiindex.

    No multiplicity weights are stored; multinomial weights belong to
    coefficient tensors.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if isinstance(f, GridField):
        d = f.dim
    elif isinstance(f, SlabField):
        d = f.n + 1
    else:
        raise TypeError("expected GridField or SlabField")
    return MIArray(d, k, {z: f.derivative(z) for z in enumerate_mi(d, k)})


def div_k(G: MIArray, k: int):
    """Div_k G = sum_{|a|=k} d^a G_a.

    Discretely <phi, Div_k G> = (-1)^k <grad^k phi, G> for compactly
    supported phi; see the ledger note on the paper's sign.
    """
    if G.order != k:
        raise ValueError(f"array has order {G.order}, requested Div_{k}")
    out = None
    for z in G.indices:
        term = G[z].derivative(z)
        out = term if out is None else out.like(out.values + term.values)
    return out
