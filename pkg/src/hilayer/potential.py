"""Boundary data, extensions, layer potentials, and the Theta_t family.

Conventions (constant-coefficient kernels are translation invariant):

  d^a S g (x,t)   = sum_{|c|=m-1} int K_{a,c}((x-y, t)) g_c(y) dy
  d^a D~ f (x,t)  = -sum_{|b|=|x|=m} int_{s<0} K_{a,b}((x-y, t-s))
                                       A_{bx} d^x F(y,s) dy ds      (t > 0)
  Theta_t^S g     = t^k d_t^{m+k} S g,   Theta_t^D f = t^k d_t^{m+k} D~ f

with K_{z,x}(z) = d_X^z d_Y^x E at X - Y = z.  Vertical derivatives of the
potentials act analytically on the kernel stacks, never by differencing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .elliptic import OperatorSpec
from .fields import SlabField
from .fieldstacks import MollifierExtension, Piecewise1D, VerticalCutoff
from .kernel import KernelEvaluator
from .mindex import enumerate_mi, unit_mi
from .quadrature import conv_same, gauss_panel, graded_panels, panel_line

__all__ = [
    "WhitneyArray", "ThetaConfig", "dirichlet_indices", "semih_indices",
    "trace_dirichlet", "trace_semih", "semih_to_dirichlet",
    "extend_whitney", "spectral_callables", "whitney_from_field",
    "single_layer", "single_layer_slab", "double_layer", "ThetaFamily",
    "theta_family", "save_whitney", "load_whitney", "save_slab", "load_slab",
]


def dirichlet_indices(m: int, n: int):
    return enumerate_mi(n + 1, m - 1)


def semih_indices(m: int, n: int):
    return tuple(b for b in enumerate_mi(n + 1, m) if b[-1] < m)


class WhitneyArray:
    """Boundary array over an R^n grid: Dirichlet (|c| = m-1) or
    semi-horizontal (|b| = m, b_d < m) components."""

    def __init__(self, kind: str, m: int, n: int, components: dict,
                 spacing, origin=None):
        if kind not in ("dirichlet", "semih"):
            raise ValueError("kind must be 'dirichlet' or 'semih'")
        self.kind = kind
        self.m = int(m)
        self.n = int(n)
        want = dirichlet_indices(m, n) if kind == "dirichlet" else semih_indices(m, n)
        if set(components) != set(want):
            raise ValueError(f"component keys must be exactly {want}")
        self.indices = want
        self.components = {z: np.asarray(components[z], dtype=complex) for z in want}
        if np.isscalar(spacing):
            spacing = (float(spacing),) * n
        self.spacing = tuple(float(h) for h in spacing)
        self.origin = tuple(float(o) for o in (origin if origin is not None else (0.0,) * n))

    @property
    def cell(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self):
        shape = next(iter(self.components.values())).shape
        return [self.origin[i] + self.spacing[i] * np.arange(shape[i])
                for i in range(self.n)]

    def norm_l2(self) -> float:
        s = sum(np.sum(np.abs(v) ** 2) for v in self.components.values())
        return float(np.sqrt(s * self.cell))

    def map(self, fn) -> "WhitneyArray":
        return WhitneyArray(self.kind, self.m, self.n,
                            {z: fn(v) for z, v in self.components.items()},
                            self.spacing, self.origin)

    def __sub__(self, other):
        return WhitneyArray(self.kind, self.m, self.n,
                            {z: self.components[z] - other.components[z]
                             for z in self.indices}, self.spacing, self.origin)


@dataclass
class ThetaConfig:
    """k = extra vertical derivatives (>= 1; default m+2 chosen at build
    sites), the evaluation t-grid, and the horizontal evaluation window."""
    k: int
    t_grid: np.ndarray
    region: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("Theta families need k >= 1")
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if np.any(self.t_grid <= 0):
            raise ValueError("t-grid must be positive")


# -- traces -----------------------------------------------------------------

def _extrapolate_planes(vals: np.ndarray, ts: np.ndarray, order: int) -> np.ndarray:
    """Polynomial-in-t extrapolation of plane samples to t = 0."""
    V = np.vander(ts, order + 1, increasing=True)      # (P, order+1)
    coef, *_ = np.linalg.lstsq(V, vals.reshape(len(ts), -1), rcond=None)
    return coef[0].reshape(vals.shape[1:])


def trace_dirichlet(F: SlabField, side: str, m: int, return_err: bool = False):
    """One-sided boundary values of d^c F, |c| = m-1, extrapolated to t = 0."""
    n = F.n
    ts = F.t_values
    if side == "upper":
        sel = np.nonzero(ts >= -1e-14)[0]
        if len(sel) < 4 or ts[sel[0]] > 1e-12 + 4 * F.t_spacing:
            raise ValueError("slab does not touch t = 0 from above")
        picks = sel[np.argsort(ts[sel])[:4]]
    elif side == "lower":
        sel = np.nonzero(ts <= 1e-14)[0]
        if len(sel) < 4 or ts[sel[-1]] < -1e-12 - 4 * F.t_spacing:
            raise ValueError("slab does not touch t = 0 from below")
        picks = sel[np.argsort(-ts[sel])[:4]]
    else:
        raise ValueError("side must be 'upper' or 'lower'")
    comps = {}
    err = 0.0
    for c in dirichlet_indices(m, n):
        der = F.derivative(c)
        planes = np.moveaxis(der.values[..., picks], -1, 0)
        t_sel = ts[picks]
        v3 = _extrapolate_planes(planes, t_sel, 3)
        v2 = _extrapolate_planes(planes[:3], t_sel[:3], 2)
        comps[c] = v3
        scale = max(np.max(np.abs(v3)), 1e-300)
        err = max(err, float(np.max(np.abs(v3 - v2)) / scale))
    arr = WhitneyArray("dirichlet", m, n, comps, F.x_spacing, F.x_origin)
    return (arr, err) if return_err else arr


def _spectral_dx(values: np.ndarray, spacing, axis: int, k: int = 1) -> np.ndarray:
    hat = np.fft.fftn(values, axes=tuple(range(values.ndim)))
    om = np.fft.fftfreq(values.shape[axis], d=spacing[axis])
    mult = (2j * np.pi * om) ** k
    if k % 2 == 1 and values.shape[axis] % 2 == 0:
        mult[values.shape[axis] // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = values.shape[axis]
    return np.fft.ifftn(hat * mult.reshape(shape), axes=tuple(range(values.ndim)))


def trace_semih(F: SlabField, m: int, tol: float = 1e-8, side: str = "upper"):
    """Semi-horizontal trace: d_{x_j} (trace of d^{b - e_j} F), slot-checked.

    Every admissible slot j is evaluated; disagreement beyond ``tol``
    (relative) means the data is not a semi-horizontal trace.
    """
    n = F.n
    dir_arr = trace_dirichlet(F, side, m)
    comps = {}
    worst = 0.0
    for b in semih_indices(m, n):
        cands = []
        for j in range(n):
            if b[j] > 0:
                gamma = tuple(v - (1 if i == j else 0) for i, v in enumerate(b))
                cands.append(_spectral_dx(dir_arr.components[gamma], dir_arr.spacing, j))
        ref = cands[0]
        scale = max(np.max(np.abs(ref)), 1e-300)
        for other in cands[1:]:
            worst = max(worst, float(np.max(np.abs(other - ref)) / scale))
        comps[b] = ref
    if worst > tol:
        raise ValueError(f"slot-independence violated: {worst:.2e} > {tol:.1e}")
    return WhitneyArray("semih", m, n, comps, F.x_spacing, F.x_origin)


def semih_to_dirichlet(f: WhitneyArray) -> WhitneyArray:
    """Spectral antidifferentiation: the Dirichlet array whose semi-horizontal
    derivative is f (zero-frequency modes normalized to zero)."""
    if f.kind != "semih":
        raise ValueError("expected a semi-horizontal array")
    m, n = f.m, f.n
    shape = next(iter(f.components.values())).shape
    freqs = [np.fft.fftfreq(N, d=h) for N, h in zip(shape, f.spacing)]
    oms = np.meshgrid(*freqs, indexing="ij")
    mags = np.stack([np.abs(om) for om in oms])
    jstar = np.argmax(mags, axis=0)
    comps = {}
    for c in dirichlet_indices(m, n):
        out_hat = np.zeros(shape, dtype=complex)
        for j in range(n):
            b = tuple(v + (1 if i == j else 0) for i, v in enumerate(c))
            if b[-1] >= m:
                continue
            hat = np.fft.fftn(f.components[b])
            denom = 2j * np.pi * oms[j]
            sel = (jstar == j) & (np.abs(oms[j]) > 0)
            out_hat[sel] = hat[sel] / denom[sel]
        comps[c] = np.fft.ifftn(out_hat)
    return WhitneyArray("dirichlet", m, n, comps, f.spacing, f.origin)


# -- extension ---------------------------------------------------------------

def spectral_callables(f: WhitneyArray):
    """f_j(x) = d_t^j F(x, 0) reconstructed from a Dirichlet array.

    Returns callables(j, zeta_par, pts) evaluating d^{zeta_par} f_j by the
    grid's trigonometric interpolant (exact on band-limited data); the
    zero-frequency ambiguity of the antidifferentiation is normalized to
    zero, which changes f_j by a polynomial only.
    """
    m, n = f.m, f.n
    shape = next(iter(f.components.values())).shape
    freqs = [np.fft.fftfreq(N, d=h) for N, h in zip(shape, f.spacing)]
    oms = np.meshgrid(*freqs, indexing="ij")
    mags = np.stack([np.abs(om) for om in oms])
    jstar = np.argmax(mags, axis=0)
    N_total = int(np.prod(shape))
    hats = {}
    for j in range(m):
        out_hat = np.zeros(shape, dtype=complex)
        filled = np.zeros(shape, dtype=bool)
        for i in range(n):
            gamma = unit_mi(n + 1, i, m - 1 - j)
            gamma = tuple(gamma[k] if k < n else j for k in range(n + 1))
            hat = np.fft.fftn(f.components[gamma]) / N_total
            if m - 1 - j == 0:
                out_hat = hat
                filled[:] = True
                break
            denom = (2j * np.pi * oms[i]) ** (m - 1 - j)
            sel = (jstar == i) & (np.abs(oms[i]) > 0)
            out_hat[sel] = hat[sel] / denom[sel]
            filled |= sel
        hats[j] = out_hat

    modes = np.stack([om.ravel() for om in oms], axis=-1)  # (N, n)
    origin = np.asarray(f.origin, dtype=float)

    def f_call(j, zeta_par, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float)) - origin
        hat = hats[j].ravel().copy()
        for ax, k in enumerate(zeta_par):
            if k:
                hat = hat * (2j * np.pi * modes[:, ax]) ** k
        live = np.abs(hat) > 1e-300
        mlive, hlive = modes[live], hat[live]
        out = np.zeros(len(pts), dtype=complex)
        chunk = 8192
        for i0 in range(0, len(pts), chunk):
            ph = np.exp(2j * np.pi * (pts[i0:i0 + chunk] @ mlive.T))
            out[i0:i0 + chunk] = ph @ hlive
        return out

    return f_call


def extend_whitney(f, m: int, n: int | None = None, support_radius: float = 1.0,
                   mollifier=None) -> MollifierExtension:
    """Lemma-3.3 extension H with Tr_{m-1} H = f.

    ``f`` may be a Dirichlet WhitneyArray (generating functions are
    reconstructed spectrally) or callables(j, zeta_par, pts) directly.
    """
    if isinstance(f, WhitneyArray):
        if f.kind != "dirichlet":
            raise ValueError("extension acts on Dirichlet arrays")
        n = f.n
        calls = spectral_callables(f)
    else:
        if n is None:
            raise ValueError("n required when passing raw callables")
        calls = f
    return MollifierExtension(m, n, calls, mollifier=mollifier,
                              support_radius=support_radius)


def whitney_from_field(field, m: int, n: int, x_axes):
    """Sample Tr_{m-1} and Tr_{m,par} of an analytic field on a grid.

    Returns (dirichlet array, semih array, f_callables) where the
    callables evaluate d^{zeta_par} d_t^j field at t = 0 exactly.
    """
    mesh = np.meshgrid(*x_axes, indexing="ij") if n > 1 else [x_axes[0]]
    shape = mesh[0].shape
    pts = np.stack([mm.ravel() for mm in mesh] + [np.zeros(int(np.prod(shape)))],
                   axis=-1)
    spacing = tuple(float(ax[1] - ax[0]) for ax in x_axes)
    origin = tuple(float(ax[0]) for ax in x_axes)
    dir_comps = {c: field.eval_stack(c, pts).reshape(shape)
                 for c in dirichlet_indices(m, n)}
    sh_comps = {b: field.eval_stack(b, pts).reshape(shape)
                for b in semih_indices(m, n)}
    fdir = WhitneyArray("dirichlet", m, n, dir_comps, spacing, origin)
    fsh = WhitneyArray("semih", m, n, sh_comps, spacing, origin)

    def calls(j, zeta_par, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        p = np.concatenate([xy, np.zeros((len(xy), 1))], axis=1)
        return field.eval_stack(tuple(zeta_par) + (j,), p)

    return fdir, fsh, calls


# -- layer potentials ---------------------------------------------------------

def _kernel_diff_array(stack, axes, tau: float):
    """Kernel stack sampled on the difference grid at vertical offset tau."""
    diffs = []
    for ax in axes:
        N = len(ax)
        h = ax[1] - ax[0]
        diffs.append(h * np.arange(-(N - 1), N))
    mesh = np.meshgrid(*diffs, indexing="ij") if len(diffs) > 1 else [diffs[0]]
    pts = np.stack([mm.ravel() for mm in mesh] + [np.full(mesh[0].size, tau)], axis=-1)
    return stack(pts).reshape(mesh[0].shape)


def _upsample_fft(values: np.ndarray, r: int) -> np.ndarray:
    """Trigonometric interpolation onto an r-times finer grid (same origin).

    Frequencies are re-binned by signed value; the Nyquist bin of even-size
    axes is split half-and-half between +/- N/2 so real data stays real.
    """
    if r == 1:
        return np.asarray(values, dtype=complex)
    hat = np.fft.fftn(values)
    nd = hat.ndim
    for ax in range(nd):
        N = hat.shape[ax]
        M = r * N
        shape = list(hat.shape)
        shape[ax] = M
        big = np.zeros(shape, dtype=complex)
        half = (N + 1) // 2
        sl_b = [slice(None)] * nd
        sl_h = [slice(None)] * nd
        sl_b[ax], sl_h[ax] = slice(0, half), slice(0, half)
        big[tuple(sl_b)] = hat[tuple(sl_h)]
        neg = N - half - (1 if N % 2 == 0 else 0)
        if neg > 0:
            sl_b[ax], sl_h[ax] = slice(M - neg, M), slice(N - neg, N)
            big[tuple(sl_b)] = hat[tuple(sl_h)]
        if N % 2 == 0:
            sl_h[ax] = half
            nyq = hat[tuple(sl_h)] * 0.5
            sl_b[ax] = half
            big[tuple(sl_b)] = nyq
            sl_b[ax] = M - half
            big[tuple(sl_b)] = nyq
        hat = big
    return np.fft.ifftn(hat) * float(r) ** nd


def _oversample_factor(t: float, h: float, pts_per_scale: float = 6.0,
                       cap: int = 64) -> int:
    """Refinement so the kernel's smoothness scale t is resolved."""
    if t >= pts_per_scale * h:
        return 1
    r = int(2 ** np.ceil(np.log2(pts_per_scale * h / max(t, 1e-12))))
    return int(min(max(r, 1), cap))


def _conv_layer(stack, comps_vals, axes, cell: float, t: float,
                oversample: bool = True) -> np.ndarray:
    """conv of a kernel stack at height t against grid data, with automatic
    spectral oversampling when t is under-resolved by the grid."""
    h = axes[0][1] - axes[0][0]
    r = _oversample_factor(abs(t), h) if oversample else 1
    if r == 1:
        kd = _kernel_diff_array(stack, axes, float(t))
        return conv_same(kd, comps_vals, cell)
    fine_axes = [ax[0] + (h / r) * np.arange(r * len(ax)) for ax in axes]
    fine_vals = _upsample_fft(comps_vals, r)
    kd = _kernel_diff_array(stack, fine_axes, float(t))
    full = conv_same(kd, fine_vals, cell / r ** len(axes))
    sl = tuple(slice(None, None, r) for _ in axes)
    return full[sl]


def single_layer(K: KernelEvaluator, g: WhitneyArray, alpha, points,
                 tail_check: bool = False):
    """d^alpha S g at arbitrary points (quadrature over the g grid).

    With ``tail_check`` the integral is recomputed with the data outside
    the half-sized window zeroed; a relative change above 1e-3 flags
    non-convergent tails.
    """
    if sum(alpha) < K.m:
        raise ValueError("single layer exposes derivatives of order >= m")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = g.n
    axes = g.axes()
    mesh = np.meshgrid(*axes, indexing="ij") if n > 1 else [axes[0]]
    ypts = np.stack([mm.ravel() for mm in mesh], axis=-1)
    out = np.zeros(len(pts), dtype=complex)
    for c in g.indices:
        st = K.stack(tuple(alpha), c)
        dz = np.empty((len(pts), len(ypts), n + 1))
        dz[..., :n] = pts[:, None, :n] - ypts[None, :, :]
        dz[..., n] = pts[:, None, n]
        out += (st(dz) * g.components[c].ravel()[None, :]).sum(axis=1) * g.cell
    if tail_check:
        gin = g.map(lambda v: _window_half(v))
        inner = single_layer(K, gin, alpha, points, tail_check=False)
        rel = np.max(np.abs(out - inner)) / max(np.max(np.abs(out)), 1e-300)
        return out, rel
    return out


def _window_half(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    sl = tuple(slice(N // 4, 3 * N // 4) for N in v.shape)
    out[sl] = v[sl]
    return out


def single_layer_slab(K: KernelEvaluator, g: WhitneyArray, alpha, t_list,
                      oversample: bool = True):
    """d^alpha S g on (g's grid) x t_list via FFT convolution.

    Heights below ~4 grid spacings are evaluated on a spectrally
    oversampled copy of the data so the kernel's scale-t features are
    resolved.
    """
    if sum(alpha) < K.m:
        raise ValueError("single layer exposes derivatives of order >= m")
    axes = g.axes()
    out = np.zeros((len(t_list),) + next(iter(g.components.values())).shape,
                   dtype=complex)
    for c in g.indices:
        st = K.stack(tuple(alpha), c)
        for it, t in enumerate(t_list):
            out[it] += _conv_layer(st, g.components[c], axes, g.cell, float(t),
                                   oversample)
    return out


class _SourcePlanes:
    """(A grad^m F)_b evaluated on y-planes, cached per (s, stack)."""

    def __init__(self, spec: OperatorSpec, F_field, n: int):
        self.spec = spec
        self.F = F_field
        self.n = n
        self.mis = enumerate_mi(n + 1, spec.m)
        self._cache = {}

    def plane(self, y_pts: np.ndarray, s: float) -> dict:
        key = (float(s), y_pts.shape[0])
        if key not in self._cache:
            P = np.concatenate([y_pts, np.full((len(y_pts), 1), s)], axis=1)
            grads = {x: self.F.eval_stack(x, P) for x in self.mis}
            self._cache[key] = self.spec.apply_tensor(grads)
        return self._cache[key]


def double_layer(K: KernelEvaluator, spec: OperatorSpec, F_field, alpha, points,
                 s_depth: float, y_window, y_width: float | None = None,
                 s_scale: float | None = None, order: int = 8,
                 y_edges=None, s_edges=None):
    """d^alpha D~ f at points in the upper half-space.

    ``F_field`` is an extension of f (any admissible one: the result is
    extension-independent up to quadrature error), evaluated over the
    lower slab y in ``y_window``, s in [-s_depth, 0] with panels graded
    toward s = 0; y-panels are uniform at the data's feature scale.
    """
    from .quadrature import uniform_panels
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(pts[:, -1] <= 0):
        raise ValueError("double_layer targets must sit in the upper half-space")
    n = K.d - 1
    tmin = float(np.min(pts[:, -1]))
    s_scale = s_scale or min(tmin, s_depth / 8)
    if s_edges is None:
        s_edges = -graded_panels(0.0, s_depth, scale=s_scale, max_width=0.75)[::-1]
    s_nodes, s_w = panel_line(s_edges, order)
    ylo, yhi = y_window
    if y_edges is None:
        y_edges = uniform_panels(ylo, yhi, y_width or min(0.5, (yhi - ylo) / 16))
    y_nodes1, y_w1 = panel_line(y_edges, order)
    if n == 1:
        y_pts = y_nodes1[:, None]
        y_w = y_w1
    else:
        Y1, Y2 = np.meshgrid(y_nodes1, y_nodes1, indexing="ij")
        y_pts = np.column_stack([Y1.ravel(), Y2.ravel()])
        y_w = np.outer(y_w1, y_w1).ravel()
    source = _SourcePlanes(spec, F_field, n)
    stacks = {b: K.stack(tuple(alpha), b) for b in enumerate_mi(n + 1, K.m)}
    out = np.zeros(len(pts), dtype=complex)
    for s, ws in zip(s_nodes, s_w):
        W = source.plane(y_pts, float(s))
        dz = np.empty((len(pts), len(y_pts), n + 1))
        dz[..., :n] = pts[:, None, :n] - y_pts[None, :, :]
        dz[..., n] = pts[:, None, n] - s
        for b, st in stacks.items():
            out -= ws * ((st(dz) * W[b][None, :]) @ y_w)
    return out


def _ring_integral(stack, x, t_off: float, n: int, r0: float, order: int = 10,
                   tol: float = 1e-13, max_rings: int = 40):
    """int_{R^n} stack((x - y, t_off)) dy by graded rings around x."""
    from .quadrature import annulus_nodes_1d, annulus_nodes_2d
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if n == 1:
        g, w = gauss_panel(x[0] - r0, x[0] + r0, 2 * order)
        ypts, yw = g[:, None], w
    else:
        gx, wx = gauss_panel(x[0] - r0, x[0] + r0, order)
        gy, wy = gauss_panel(x[1] - r0, x[1] + r0, order)
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        ypts = np.column_stack([X.ravel(), Y.ravel()])
        yw = np.outer(wx, wy).ravel()

    def chunk(ypts, yw):
        dz = np.empty((len(ypts), n + 1))
        dz[:, :n] = x[None, :] - ypts
        dz[:, n] = t_off
        return complex(np.sum(stack(dz) * yw))

    acc = chunk(ypts, yw)
    r = r0
    first = None
    for _ in range(max_rings):
        if n == 1:
            y, w = annulus_nodes_1d(x[0], r, 2 * r, order=2 * order, panels_per_side=2)
            ypts = y[:, None]
        else:
            ypts, w = annulus_nodes_2d(x, r, 2 * r, order=order)
        ring = chunk(ypts, w)
        acc += ring
        first = abs(ring) if first is None else first
        if abs(ring) < tol * max(abs(acc), first, 1e-300):
            break
        r *= 2
    return acc


class ThetaFamily:
    """Theta_t^S, Theta_t^D, Theta_t^perp, Theta_t^{S'} for one kernel.

    All vertical derivatives are taken analytically on the kernel; the
    ``*_slab`` methods return samples on (data grid) x t-list, the
    ``*_one`` methods integrate constants over all of R^n by graded rings.
    """

    def __init__(self, K: KernelEvaluator, spec: OperatorSpec, cfg: ThetaConfig):
        self.K = K
        self.spec = spec
        self.cfg = cfg
        self.m = K.m
        self.n = K.d - 1
        self.k = cfg.k
        self.x_stack = unit_mi(self.n + 1, self.n, self.m + self.k)
        self.gamma_perp = unit_mi(self.n + 1, self.n, self.m - 1)

    # Theta^S -----------------------------------------------------------
    def S_slab(self, g: WhitneyArray, t_list=None):
        t_list = self.cfg.t_grid if t_list is None else np.asarray(t_list, float)
        vals = single_layer_slab(self.K, g, self.x_stack, t_list)
        return vals * (t_list.reshape((-1,) + (1,) * g.components[g.indices[0]].ndim)
                       ** self.k)

    def S_points(self, g: WhitneyArray, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = single_layer(self.K, g, self.x_stack, pts)
        return vals * pts[:, -1] ** self.k

    def S_one(self, gamma, xs, ts, r0=None):
        """Theta_t^S(1 e_gamma)(x): honest all-of-R^n quadrature per (x, t)."""
        gamma = tuple(gamma)
        st = self.K.stack(self.x_stack, gamma)
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.empty((len(ts), len(xs)), dtype=complex)
        for it, t in enumerate(ts):
            for ix, x in enumerate(xs):
                out[it, ix] = t ** self.k * _ring_integral(
                    st, x, float(t), self.n, r0 or float(t))
        return out

    def Sprime_one(self, xs, ts):
        """max over gamma != gamma_perp of |Theta_t^S(1 e_gamma)| samples."""
        worst = None
        for gamma in dirichlet_indices(self.m, self.n):
            if gamma == self.gamma_perp:
                continue
            v = np.abs(self.S_one(gamma, xs, ts))
            worst = v if worst is None else np.maximum(worst, v)
        return worst

    # Theta^D -----------------------------------------------------------
    def D_slab(self, F_field, g_like: WhitneyArray, t_list=None,
               s_depth: float = None, order: int = 8, s_scale=None):
        """Theta_t^D via the lower-slab volume integral, conv in x.

        ``F_field`` extends the semi-horizontal data; ``g_like`` only
        supplies the target grid.  s_depth defaults to the grid extent.
        """
        t_list = self.cfg.t_grid if t_list is None else np.asarray(t_list, float)
        axes = g_like.axes()
        n = self.n
        extent = axes[0][-1] - axes[0][0]
        s_depth = s_depth or extent / 2
        s_scale = s_scale or min(float(np.min(t_list)), s_depth / 8) / 2
        edges = -graded_panels(0.0, s_depth, scale=s_scale)[::-1]
        s_nodes, s_w = panel_line(edges, order)
        mesh = np.meshgrid(*axes, indexing="ij") if n > 1 else [axes[0]]
        y_flat = np.stack([mm.ravel() for mm in mesh], axis=-1)
        source = _SourcePlanes(self.spec, F_field, n)
        shape = mesh[0].shape
        out = np.zeros((len(t_list),) + shape, dtype=complex)
        stacks = {b: self.K.stack(self.x_stack, b) for b in enumerate_mi(n + 1, self.m)}
        for s, ws in zip(s_nodes, s_w):
            W = source.plane(y_flat, float(s))
            for b, st in stacks.items():
                Wb = W[b].reshape(shape)
                for it, t in enumerate(t_list):
                    kd = _kernel_diff_array(st, axes, float(t) - float(s))
                    out[it] -= ws * conv_same(kd, Wb, g_like.cell)
        return out * (np.asarray(t_list).reshape((-1,) + (1,) * n) ** self.k)

    def D_points(self, F_field, points, s_depth: float, y_window, order: int = 8,
                 y_edges=None, s_edges=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vals = double_layer(self.K, self.spec, F_field, self.x_stack, pts,
                            s_depth, y_window, order=order, y_edges=y_edges,
                            s_edges=s_edges)
        return vals * pts[:, -1] ** self.k

    def D_one(self, beta, xs, ts, order: int = 8):
        """Theta_t^D e_beta via eqn. (D1): half-space integral against A_{.b}."""
        beta = tuple(beta)
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.zeros((len(ts), len(xs)), dtype=complex)
        for a in enumerate_mi(self.n + 1, self.m):
            c = self.spec.entry(a, beta)
            if c == 0 or isinstance(c, np.ndarray):
                continue
            st = self.K.stack(self.x_stack, a)
            for it, t in enumerate(ts):
                edges = -graded_panels(0.0, 64.0 * t, scale=t / 2)[::-1]
                s_nodes, s_w = panel_line(edges, order)
                for ix, x in enumerate(xs):
                    acc = 0.0 + 0.0j
                    for s, ws in zip(s_nodes, s_w):
                        acc += ws * _ring_integral(st, x, float(t - s), self.n,
                                                   max(float(t - s) / 2, t / 4))
                    out[it, ix] -= complex(c) * t ** self.k * acc
        return out

    # splittings ---------------------------------------------------------
    def perp_slab(self, h_values: np.ndarray, grid_like: WhitneyArray, t_list=None):
        comps = {c: np.zeros_like(h_values) for c in dirichlet_indices(self.m, self.n)}
        comps[self.gamma_perp] = h_values
        g = WhitneyArray("dirichlet", self.m, self.n, comps, grid_like.spacing,
                         grid_like.origin)
        return self.S_slab(g, t_list)

    def sprime_slab(self, g: WhitneyArray, t_list=None):
        comps = {c: (np.zeros_like(v) if c == self.gamma_perp else v)
                 for c, v in g.components.items()}
        g2 = WhitneyArray("dirichlet", self.m, self.n, comps, g.spacing, g.origin)
        return self.S_slab(g2, t_list)


def theta_family(K: KernelEvaluator, spec: OperatorSpec, cfg: ThetaConfig) -> ThetaFamily:
    need = cfg.k + spec.m  # vertical stack order on the X side
    if need < spec.m - 1:
        raise ValueError("derivative order outside kernel admissibility")
    return ThetaFamily(K, spec, cfg)


# -- binary container ---------------------------------------------------------

_MAGIC = b"HILAYER1"


def _write_payload(f, arrays):
    for v in arrays:
        v = np.asarray(v, dtype=complex)
        inter = np.empty(v.size * 2)
        inter[0::2] = v.real.ravel()
        inter[1::2] = v.imag.ravel()
        f.write(inter.astype("<f8").tobytes())


def save_whitney(path, arr: WhitneyArray):
    """Self-describing binary container: JSON header + little-endian f64 pairs."""
    shape = next(iter(arr.components.values())).shape
    meta = {"type": "whitney", "kind": arr.kind, "m": arr.m, "n": arr.n,
            "shape": list(shape), "spacing": list(arr.spacing),
            "origin": list(arr.origin),
            "index_set": [list(z) for z in arr.indices]}
    blob = json.dumps(meta).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        _write_payload(f, [arr.components[z] for z in arr.indices])


def _read_header(f):
    if f.read(8) != _MAGIC:
        raise ValueError("not a hilayer container")
    (ln,) = struct.unpack("<I", f.read(4))
    return json.loads(f.read(ln).decode())


def load_whitney(path) -> WhitneyArray:
    with open(path, "rb") as f:
        meta = _read_header(f)
        shape = tuple(meta["shape"])
        count = int(np.prod(shape))
        comps = {}
        for z in meta["index_set"]:
            raw = np.frombuffer(f.read(16 * count), dtype="<f8")
            comps[tuple(z)] = (raw[0::2] + 1j * raw[1::2]).reshape(shape)
    return WhitneyArray(meta["kind"], meta["m"], meta["n"], comps,
                        tuple(meta["spacing"]), tuple(meta["origin"]))


def save_slab(path, F: SlabField):
    meta = {"type": "slab", "shape": list(F.values.shape),
            "x_spacing": list(F.x_spacing), "x_origin": list(F.x_origin),
            "t_values": [float(t) for t in F.t_values]}
    blob = json.dumps(meta).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        _write_payload(f, [F.values])


def load_slab(path) -> SlabField:
    with open(path, "rb") as f:
        meta = _read_header(f)
        shape = tuple(meta["shape"])
        count = int(np.prod(shape))
        raw = np.frombuffer(f.read(16 * count), dtype="<f8")
        vals = (raw[0::2] + 1j * raw[1::2]).reshape(shape)
    return SlabField(vals, tuple(meta["x_spacing"]), np.asarray(meta["t_values"]),
                     tuple(meta["x_origin"]))


def export_whitney_csv(path, arr: WhitneyArray):
    import csv
    axes = arr.axes()
    mesh = np.meshgrid(*axes, indexing="ij") if arr.n > 1 else [axes[0]]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{i}" for i in range(arr.n)] + ["index", "re", "im"])
        for z in arr.indices:
            v = arr.components[z].ravel()
            coords = [mm.ravel() for mm in mesh]
            for i in range(len(v)):
                w.writerow([c[i] for c in coords] + ["".join(map(str, z)),
                                                     v[i].real, v[i].imag])
