"""Quadrature machinery: Gauss panels, graded/annular meshes, mollifier
weights with exact discrete moments, and FFT-based convolution application.

The annular meshes implement the Calderon-Zygmund style used throughout:
panel size proportional to distance from the singular region, so smooth
homogeneous kernels are resolved with a fixed node count per dyadic ring.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.signal import fftconvolve

__all__ = [
    "gauss_panel",
    "panel_line",
    "graded_panels",
    "annulus_nodes_1d",
    "annulus_nodes_2d",
    "radial_nodes",
    "MomentBump",
    "conv_same",
    "parallel_map",
]


def gauss_panel(a: float, b: float, order: int):
    """Gauss-Legendre nodes/weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def panel_line(edges, order: int):
    """Composite Gauss rule over consecutive [edges[i], edges[i+1]] panels."""
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gauss_panel(a, b, order)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def graded_panels(a: float, b: float, scale: float, ratio: float = 2.0,
                  max_width: float = np.inf):
    """Panel edges on [a, b] graded geometrically away from the endpoint a.

    First panel has length ~scale, then panels grow by ``ratio`` (capped at
    ``max_width``) until b is reached; used to resolve kernels whose
    smoothness scale grows linearly with distance from a.
    """
    if b <= a:
        raise ValueError("need b > a")
    edges = [a]
    step = float(scale)
    while edges[-1] + step < b:
        edges.append(edges[-1] + step)
        step = min(step * ratio, max_width)
    edges.append(b)
    return np.array(edges)


def uniform_panels(a: float, b: float, max_width: float):
    """Equal panels covering [a, b] with width <= max_width."""
    count = max(int(np.ceil((b - a) / max_width)), 1)
    return np.linspace(a, b, count + 1)


def annulus_nodes_1d(center: float, r_in: float, r_out: float, order: int = 8,
                     panels_per_side: int = 2):
    """Nodes/weights covering {r_in <= |y-center| <= r_out} on the line."""
    xs, ws = [], []
    for sign in (-1.0, 1.0):
        edges = np.linspace(r_in, r_out, panels_per_side + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            lo, hi = (center + sign * a, center + sign * b)
            if sign < 0:
                lo, hi = hi, lo
            x, w = gauss_panel(lo, hi, order)
            xs.append(x)
            ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def annulus_nodes_2d(center, r_in: float, r_out: float, order: int = 6):
    """Nodes/weights covering the square annulus [..]^2 \\ [..]^2 around center.

    The annulus is split into 8 rectangles (4 sides + 4 corners), each with
    a tensor Gauss rule.
    """
    cx, cy = center
    rects = [
        (-r_out, -r_in, -r_out, -r_in), (-r_in, r_in, -r_out, -r_in), (r_in, r_out, -r_out, -r_in),
        (-r_out, -r_in, -r_in, r_in), (r_in, r_out, -r_in, r_in),
        (-r_out, -r_in, r_in, r_out), (-r_in, r_in, r_in, r_out), (r_in, r_out, r_in, r_out),
    ]
    xs, ys, ws = [], [], []
    for (x0, x1, y0, y1) in rects:
        gx, wx = gauss_panel(cx + x0, cx + x1, order)
        gy, wy = gauss_panel(cy + y0, cy + y1, order)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        W = np.outer(wx, wy)
        xs.append(X.ravel())
        ys.append(Y.ravel())
        ws.append(W.ravel())
    pts = np.column_stack([np.concatenate(xs), np.concatenate(ys)])
    return pts, np.concatenate(ws)


def radial_nodes(n: int, center, r0: float, r_max: float, order: int = 8,
                 ratio: float = 2.0, inner: bool = True):
    """Graded covering of {|y - center| <= r_max} (or the annulus from r0).

    Returns (points (N, n), weights).  Rings double in radius; node count
    per ring is fixed, which suits kernels smooth at scale |y - center|.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    rings = []
    r = float(r0)
    radii = []
    while r < r_max:
        radii.append((r, min(r * ratio, r_max)))
        r *= ratio
    pts, ws = [], []
    if inner:
        if n == 1:
            x, w = gauss_panel(center[0] - r0, center[0] + r0, order)
            pts.append(x[:, None])
            ws.append(w)
        else:
            gx, wx = gauss_panel(center[0] - r0, center[0] + r0, order)
            gy, wy = gauss_panel(center[1] - r0, center[1] + r0, order)
            X, Y = np.meshgrid(gx, gy, indexing="ij")
            pts.append(np.column_stack([X.ravel(), Y.ravel()]))
            ws.append(np.outer(wx, wy).ravel())
    for (ri, ro) in radii:
        if n == 1:
            x, w = annulus_nodes_1d(center[0], ri, ro, order=order)
            pts.append(x[:, None])
            ws.append(w)
        else:
            p, w = annulus_nodes_2d(center, ri, ro, order=order)
            pts.append(p)
            ws.append(w)
    return np.vstack(pts), np.concatenate(ws)


class MomentBump:
    """Smooth radial bump with prescribed vanishing moments and unit mass.

    Profile: (sum_q c_q |x|^{2q}) * exp(-1/(1 - |x/radius|^2)) on the open
    ball, zero outside.  The coefficients are solved so the continuous
    moments int x^zeta = 0 for 1 <= |zeta| <= vanish_through and int = 1;
    odd moments vanish by symmetry, so only radial equations are needed.

    ``nodes()`` returns a tensor Gauss discretization whose weights are
    post-corrected (minimum-norm update) so the *discrete* moments match
    exactly; extension operators rely on that exactness.
    """

    def __init__(self, n: int, vanish_through: int = 0, radius: float = 1.0,
                 order: int = 24):
        self.n = int(n)
        self.radius = float(radius)
        self.vanish_through = int(vanish_through)
        # even moments int |x|^{2p} |x|^{2q} * bump are radial integrals;
        # odd moments vanish by symmetry, so the system is square
        n_coeffs = vanish_through // 2 + 1
        powers = list(range(n_coeffs))

        def radial_moment(p_extra):
            # int_0^R r^{n-1+2p_extra} e^{-1/(1-(r/R)^2)} dr via Gauss
            r, w = gauss_panel(0.0, self.radius * (1 - 1e-12), 160)
            u = (r / self.radius) ** 2
            prof = np.exp(-1.0 / (1.0 - u))
            return float(np.sum(w * r ** (self.n - 1 + 2 * p_extra) * prof))

        # sphere area factor for each even moment row
        from math import gamma, pi
        sphere = 2 * pi ** (self.n / 2) / gamma(self.n / 2)

        rows = []
        rhs = []
        # mass row: sum_q c_q * sphere * radial_moment(q + 0) = 1
        rows.append([sphere * radial_moment(q) for q in powers])
        rhs.append(1.0)
        for p in range(1, (vanish_through // 2) + 1):
            # all |zeta| = 2p moments are multiples of int |x|^{2p} by symmetry
            rows.append([sphere * radial_moment(q + p) for q in powers])
            rhs.append(0.0)
        A = np.array(rows)
        b = np.array(rhs)
        self.coeffs, *_ = np.linalg.lstsq(A, b, rcond=None)
        self._nodes_cache = {}
        self._order = order

    def profile(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        r2 = np.sum(pts ** 2, axis=1) / self.radius ** 2
        out = np.zeros(len(pts))
        mask = r2 < 1.0 - 1e-14
        poly = sum(c * (r2[mask] * self.radius ** 2) ** q for q, c in enumerate(self.coeffs))
        out[mask] = poly * np.exp(-1.0 / (1.0 - r2[mask]))
        return out

    def nodes(self):
        """(points (N, n), weights) with exact discrete moments through order.

        Weight correction solves the underdetermined system V dw = r with
        minimum norm, where V is the monomial Vandermonde through the
        vanishing order (plus mass).
        """
        key = self._order
        if key in self._nodes_cache:
            return self._nodes_cache[key]
        R = self.radius
        # uniform interior panels (to resolve sharp data under the kernel)
        # plus panels graded toward the flat edges, where the profile's
        # derivatives pile up and a single Gauss rule converges poorly
        ticks = R * np.array([0.0, 0.15, 0.3, 0.45, 0.6, 0.75, 0.9, 0.97, 1.0])
        edges_1d = np.concatenate([-ticks[::-1], ticks[1:]])
        if self.n == 1:
            x, w = panel_line(edges_1d, self._order // 2)
            pts = x[:, None]
        else:
            gx, wx = panel_line(edges_1d, max(self._order // 3, 6))
            X, Y = np.meshgrid(gx, gx, indexing="ij")
            pts = np.column_stack([X.ravel(), Y.ravel()])
            w = np.outer(wx, wx).ravel()
        vals = self.profile(pts)
        keep = vals != 0.0
        pts, w, vals = pts[keep], w[keep], vals[keep]
        weights = w * vals
        # build moment constraints through vanish_through (plus mass)
        from .mindex import enumerate_mi
        rows, rhs = [], []
        for k in range(0, self.vanish_through + 1):
            for z in enumerate_mi(self.n, k):
                mono = np.prod(pts ** np.array(z), axis=1)
                rows.append(mono)
                rhs.append(1.0 if k == 0 else 0.0)
        V = np.array(rows)
        r = np.array(rhs) - V @ weights
        dw, *_ = np.linalg.lstsq(V, r, rcond=None)
        weights = weights + dw
        resid = np.max(np.abs(V @ weights - np.array(rhs)))
        self._nodes_cache[key] = (pts, weights, resid)
        return self._nodes_cache[key]

    def moment_residual(self) -> float:
        return self.nodes()[2]


def conv_same(kernel_diff: np.ndarray, data: np.ndarray, cell: float) -> np.ndarray:
    """sum_y K(x - y) f(y) * cell on matching uniform grids.

    ``kernel_diff`` must be sampled on the difference grid: per axis of
    length N, a length 2N-1 array over differences (i-j)h, index 0 being
    the most negative.  fftconvolve(kernel, data, 'valid') then returns
    out[i] = sum_j kernel_diff[i - j + N - 1] data[j], i.e. the targets on
    the data grid.  Works for any rank.
    """
    return fftconvolve(kernel_diff, data, mode="valid") * cell


def parallel_map(fn, items, workers: int | None = None):
    """Order-preserving map; threads when workers > 1 (numpy releases the GIL)."""
    items = list(items)
    if not workers or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
