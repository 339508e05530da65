"""Square-function norms, Carleson norms, CLP families, averaging operators,
decay/quasi-orthogonality scans, the Hodge decomposition, and Theta_t^beta.

Exponent fits use least squares on log-log data with the near field
(j < 2) excluded; pass thresholds are calibration constants carried by the
caller, since the underlying theory guarantees existence of exponents, not
values.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np

from .dyadic import DyadicCube, annuli, dyadic_forest
from .elliptic import OperatorSpec, horizontal_part
from .fields import GridField
from .mindex import MIArray, enumerate_mi, unit_mi
from .potential import (ThetaConfig, WhitneyArray, dirichlet_indices,
                        semih_indices, ThetaFamily)
from .quadrature import MomentBump
from .spectral import omega_grids, mi_multiplier, variational_solve

__all__ = [
    "square_norm", "carleson_norm", "CLPFamily", "clp_family", "averaging_ops",
    "DecayFit", "fit_decay", "offdiag_decay_scan", "quasi_orthogonality_scan",
    "hodge_decompose", "theta_beta_carleson", "write_scan_csv", "write_report_json",
]


# -- norms --------------------------------------------------------------------

def square_norm(u: np.ndarray, t_grid: np.ndarray, cell: float,
                weight: str = "t") -> float:
    """int int |u(x,t)|^2 w(t) dt dx on a geometric t-grid.

    ``u`` has shape (len(t_grid), *x-shape); the t-integral is a trapezoid
    in log t (so dt/t measures are resolved exactly in the grid geometry).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    ratios = t_grid[1:] / t_grid[:-1]
    if len(ratios) and (np.max(ratios) - np.min(ratios)) > 1e-8 * np.max(ratios):
        if weight == "1/t":
            raise ValueError("1/t weight requires a geometric t-grid")
    log_t = np.log(t_grid)
    w_log = np.zeros_like(t_grid)
    if len(t_grid) > 1:
        w_log[1:-1] = (log_t[2:] - log_t[:-2]) / 2
        w_log[0] = (log_t[1] - log_t[0]) / 2
        w_log[-1] = (log_t[-1] - log_t[-2]) / 2
    x_mass = np.sum(np.abs(u) ** 2, axis=tuple(range(1, u.ndim))) * cell
    if weight == "t":
        return float(np.sum(x_mass * t_grid ** 2 * w_log))
    if weight == "1/t":
        return float(np.sum(x_mass * w_log))
    raise ValueError("weight must be 't' or '1/t'")


def carleson_norm(sampler, forest, delta: float, x_order: int = 16,
                  t_points: int = 24) -> float:
    """sup_Q (1/|Q|) int_delta^{min(l(Q), 1/delta)} int_Q |f|^2 dx dt/t.

    ``sampler(x_pts, t_grid)`` returns samples of shape (len(t), len(x)).
    delta = 0 uses each cube's native range [l(Q)/64, l(Q)] (full Carleson
    norm convention at desk scale).
    """
    best = 0.0
    for Q in forest:
        l = Q.side
        t_hi = min(l, 1 / delta) if delta > 0 else l
        t_lo = delta if delta > 0 else l / 64
        if t_hi <= t_lo:
            continue
        t_grid = np.geomspace(t_lo, t_hi, t_points)
        xs, ws = _cube_nodes(Q, x_order)
        vals = sampler(xs, t_grid)
        log_t = np.log(t_grid)
        w_log = np.gradient(log_t)
        mass = np.sum(np.abs(vals) ** 2 * ws[None, :], axis=1) @ w_log
        best = max(best, float(mass / l ** Q.n))
    return best


def _cube_nodes(Q, order: int):
    from .quadrature import gauss_panel
    lo = np.asarray(Q.anchor)
    if Q.n == 1:
        x, w = gauss_panel(lo[0], lo[0] + Q.side, order)
        return x[:, None], w
    gx, wx = gauss_panel(lo[0], lo[0] + Q.side, order)
    gy, wy = gauss_panel(lo[1], lo[1] + Q.side, order)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(wx, wy).ravel()


# -- CLP families ---------------------------------------------------------------

class CLPFamily:
    """Q_s f = phi_s * f with normalization int_0^infty phi-hat(s xi)^2 ds/s = 1.

    Two profiles: 'band' has phi-hat a radial C^inf bump supported in the
    annulus 1/2 <= |xi| <= 2 (section-7 flavor); 'spatial' is a compactly
    supported mean-zero radial kernel, phi = Delta(bump) (section-8 flavor).
    Application is spectral multiplication on a periodic grid.
    """

    def __init__(self, profile: str, n: int):
        self.profile = profile
        self.n = n
        if profile == "band":
            self._hat = self._band_hat
        elif profile == "spatial":
            self._hat = self._spatial_hat
        else:
            raise ValueError("profile must be 'band' or 'spatial'")
        # normalize: int phi-hat(s)^2 ds/s over s > 0 (radial, scale-invariant)
        s = np.geomspace(1e-3, 1e3, 4001)
        vals = self._hat_raw(s) ** 2
        integral = float(np.trapezoid(vals, np.log(s)))
        if integral <= 0 or not np.isfinite(integral):
            raise ValueError("normalization integral nonpositive or divergent")
        self.norm_const = 1.0 / np.sqrt(integral)

    # raw (unnormalized) radial profiles of phi-hat
    @staticmethod
    def _band_hat_raw(r):
        r = np.asarray(r, dtype=float)
        u = np.log2(np.maximum(r, 1e-300))  # support |u| < 1
        out = np.zeros_like(r)
        mask = np.abs(u) < 1.0
        out[mask] = np.exp(-1.0 / (1.0 - u[mask] ** 2))
        return out

    def _spatial_hat_raw(self, r):
        # phi = Delta g, g a radial bump: phi-hat = -4 pi^2 r^2 g-hat(r)
        r = np.asarray(r, dtype=float)
        if not hasattr(self, "_gbump"):
            self._gbump = MomentBump(self.n, vanish_through=0, radius=0.5)
        # numeric radial FT of g via its quadrature nodes (cached on demand)
        if not hasattr(self, "_gnodes"):
            self._gnodes = self._gbump.nodes()[:2]
        pts, w = self._gnodes
        out = np.empty_like(r)
        flat = r.ravel()
        for i, rv in enumerate(flat):
            xi = np.zeros(self.n)
            xi[0] = rv
            out.ravel()[i] = np.real(np.sum(w * np.exp(-2j * np.pi * (pts @ xi))))
        return (2 * np.pi * r) ** 2 * out

    def _hat_raw(self, r):
        return self._band_hat_raw(r) if self.profile == "band" else self._spatial_hat_raw(r)

    def _band_hat(self, r):
        return self.norm_const * self._band_hat_raw(r)

    def _spatial_hat(self, r):
        return self.norm_const * self._spatial_hat_raw(r)

    def hat(self, r):
        return self._hat(r)

    def sigma_measured(self) -> float:
        """Largest sigma with |phi-hat| <= C min(r, 1/r)^sigma on a scan grid."""
        r = np.geomspace(1e-2, 1e2, 801)
        v = np.abs(self.hat(r)) + 1e-300
        lo = np.minimum(r, 1 / r)
        with np.errstate(divide="ignore"):
            expo = np.log(v / np.max(v)) / np.log(lo)
        return float(np.min(expo[lo < 0.5]))

    def apply(self, values: np.ndarray, spacing, s: float) -> np.ndarray:
        """Q_s on a periodic grid (spectral multiplication by phi-hat(s|xi|))."""
        oms = omega_grids(values.shape, spacing)
        r = np.sqrt(sum(om ** 2 for om in oms))
        return np.fft.ifftn(np.fft.fftn(values) * self.hat(s * r))

    def reproduce(self, values: np.ndarray, spacing, octaves=(1e-3, 1e3),
                  per_octave: int = 16) -> np.ndarray:
        """int Q_s^2 f ds/s by geometric quadrature (16 points/octave)."""
        n_oct = int(np.log2(octaves[1] / octaves[0]))
        s_grid = np.geomspace(*octaves, per_octave * n_oct + 1)
        oms = omega_grids(values.shape, spacing)
        r = np.sqrt(sum(om ** 2 for om in oms))
        mult = np.zeros(values.shape)
        logs = np.log(s_grid)
        w = np.gradient(logs)
        for s, ws in zip(s_grid, w):
            mult = mult + ws * self.hat(s * r) ** 2
        return np.fft.ifftn(np.fft.fftn(values) * mult)


def clp_family(profile: str, n: int) -> CLPFamily:
    return CLPFamily(profile, n)


# -- averaging operators ---------------------------------------------------------

class AveragingOps:
    """P_t (smooth approximate identity, vanishing moments through order m)
    and A_t^Q (dyadic averages on [0, L)^n grids)."""

    def __init__(self, grid_shape, spacing, top_length: float, moments: int = 2):
        self.shape = tuple(grid_shape)
        self.spacing = tuple(spacing)
        self.L = float(top_length)
        self.n = len(self.shape)
        self.moments = moments
        self._bumps = {}

    def P(self, values: np.ndarray, t: float) -> np.ndarray:
        """Convolution with psi_t, psi supported in B(0, 1/2) scaled to t."""
        key = round(float(t), 12)
        if key not in self._bumps:
            self._bumps[key] = MomentBump(self.n, vanish_through=self.moments,
                                          radius=t / 2)
        bump = self._bumps[key]
        axes = [np.fft.fftfreq(N, d=h) for N, h in zip(self.shape, self.spacing)]
        oms = np.meshgrid(*axes, indexing="ij")
        pts, w, _ = bump.nodes()
        hat = np.zeros(self.shape, dtype=complex)
        flat = np.stack([om.ravel() for om in oms], axis=-1)
        chunk = 4096
        out = np.zeros(flat.shape[0], dtype=complex)
        for i0 in range(0, len(flat), chunk):
            ph = np.exp(-2j * np.pi * (flat[i0:i0 + chunk] @ pts.T))
            out[i0:i0 + chunk] = ph @ w
        hat = out.reshape(self.shape)
        return np.fft.ifftn(np.fft.fftn(values) * hat)

    def A(self, values: np.ndarray, t: float) -> np.ndarray:
        """Dyadic average over the subcube containing x with t <= l(Q') < 2t."""
        if t > self.L:
            raise ValueError("t exceeds the top cube length")
        gen = int(np.floor(np.log2(self.L / t)))
        cells = 2 ** gen
        per = self.shape[0] // cells
        if per * cells != self.shape[0]:
            raise ValueError("grid does not align with the dyadic generation")
        v = values
        if self.n == 1:
            blocks = v.reshape(cells, per)
            means = blocks.mean(axis=1, keepdims=True)
            return np.broadcast_to(means, blocks.shape).reshape(v.shape)
        blocks = v.reshape(cells, per, cells, per)
        means = blocks.mean(axis=(1, 3), keepdims=True)
        return np.broadcast_to(means, blocks.shape).reshape(v.shape)


def averaging_ops(grid_shape, spacing, top_length: float, moments: int = 2):
    return AveragingOps(grid_shape, spacing, top_length, moments)


# -- exponent fits ----------------------------------------------------------------

@dataclass
class DecayFit:
    abscissae: list
    norms: list
    exponent: float
    stderr: float
    residual: float
    threshold: float
    passed: bool
    monotone: bool

    def to_dict(self):
        return asdict(self)


def fit_decay(abscissae, norms, threshold: float, skip: int = 0,
              require_monotone: bool = True) -> DecayFit:
    """Least-squares slope of -log2(norm) against the abscissa (j or
    log2(t/s)); pass iff slope >= threshold (and monotone when required)."""
    a = np.asarray(abscissae, dtype=float)[skip:]
    v = np.asarray(norms, dtype=float)[skip:]
    live = v > 0
    if np.count_nonzero(live) < 2:
        return DecayFit(list(abscissae), list(norms), float("inf"), 0.0, 0.0,
                        threshold, True, True)
    a, v = a[live], v[live]
    y = -np.log2(v)
    A = np.vander(a, 2)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    fitres = float(np.sqrt(res[0] / len(a))) if len(res) else 0.0
    dof = max(len(a) - 2, 1)
    cov = fitres ** 2 / max(np.sum((a - a.mean()) ** 2), 1e-300)
    mono = bool(np.all(np.diff(v) < 1e-12 + 0 * v[:-1])) if len(v) > 1 else True
    slope = float(coef[0])
    passed = slope >= threshold and (mono or not require_monotone)
    return DecayFit(list(map(float, a)), list(map(float, v)), slope,
                    float(np.sqrt(cov / dof)), fitres, threshold, passed, mono)


def offdiag_decay_scan(theta: ThetaFamily, Q: DyadicCube, j_max: int, seed: int,
                       kind: str = "S", threshold: float | None = None,
                       points_per_annulus: int = 96) -> DecayFit:
    """|| Theta_t (1_{A_j} g) ||_{L^2(Q)} against j, fitted in log2.

    Random unit-L^2 data supported in each annulus A_j(Q); t runs over
    [l(Q), 2 l(Q)].  Pass iff the fitted exponent exceeds (n+2)/2 (plus the
    caller's margin) so that theta > 0 exists in the decay hypothesis.
    """
    from .families import random_bumps
    m, n = theta.m, theta.n
    if threshold is None:
        threshold = (n + 2) / 2
    l = Q.side
    c = np.asarray(Q.center)
    rng = np.random.SeedSequence(seed).spawn(j_max + 1)
    ts = np.array([l, 1.5 * l, 2.0 * l])
    xs, xw = _cube_nodes(Q, 12)
    norms = []
    for j in range(j_max + 1):
        ann = annuli(Q, j)
        r_in = 0 if j == 0 else 2 ** (j - 1) * l
        r_out = 2 ** j * l
        width = max(r_out - r_in, l / 2)
        g_arrays, cell = _annulus_data(kind, theta, ann, c[0], r_in, r_out, rng[j],
                                       points_per_annulus)
        if kind == "S":
            vals = _theta_S_on_nodes(theta, g_arrays, cell, xs, ts)
            gn = g_arrays["norm"]
        else:
            vals = g_arrays["apply"](xs, ts)
            gn = g_arrays["norm"]
        mass = np.sqrt(np.sum(np.abs(vals) ** 2 * xw[None, :], axis=1))
        norms.append(float(np.max(mass) / max(gn, 1e-300)))
    return fit_decay(np.arange(j_max + 1), norms, threshold, skip=2)


def _annulus_data(kind, theta, ann, center, r_in, r_out, seedseq, npts):
    """Random data supported in the annulus: grid arrays for Theta^S,
    an extension-backed applier for Theta^D."""
    from .families import random_bumps
    from .fieldstacks import MollifierExtension, Piecewise1D, VerticalCutoff
    from .potential import WhitneyArray
    m, n = theta.m, theta.n
    rng = np.random.default_rng(seedseq)
    l_out = 2 * r_out if r_in == 0 else r_out
    # bump field scaled to the annulus
    width = (r_out - r_in) if r_in > 0 else r_out
    count = 3
    offs = []
    for _ in range(count):
        side = rng.choice([-1.0, 1.0])
        rad = rng.uniform(r_in + 0.25 * width, r_out - 0.25 * width) if r_in > 0 \
            else rng.uniform(0, 0.6 * r_out)
        offs.append(center + side * rad)
    bumps = random_bumps(int(rng.integers(1 << 30)), n, count=count,
                         center_box=0.0, width_range=(0.1 * width, 0.2 * width))
    bumps.centers = np.array(offs)[:, None]
    # sample on a local grid covering the support
    h = (2 * (r_out + width)) / max(npts, 16)
    xg = center - (r_out + width) + h * np.arange(int(2 * (r_out + width) / h))
    pts0 = np.stack([xg, np.zeros_like(xg)], axis=-1)
    mask = ann.contains(xg[:, None]).astype(float)
    if kind == "S":
        comps = {}
        for c in dirichlet_indices(m, n):
            v = bumps.eval_stack(c[:n] + (0,), pts0) * mask
            comps[c] = v
        g = WhitneyArray("dirichlet", m, n, comps, h, (xg[0],))
        norm = g.norm_l2()
        return {"g": g, "norm": norm}, h
    # Theta^D: data must be a semi-horizontal trace supported in the annulus;
    # cut the generating field off in the annulus (smooth profile)
    from .fieldstacks import EvenRadial
    prof = Piecewise1D([max(r_in - 0.05 * width, 0), max(r_in, 1e-9),
                        r_out, r_out + 0.05 * width],
                       [0.0, 1.0, 1.0, 0.0]) if r_in > 0 else \
        Piecewise1D([0.9 * r_out, r_out], [1.0, 0.0])
    cut = EvenRadial(prof, center=center)

    class _CutBumps:
        def eval_stack(self, zeta, pts):
            pts = np.asarray(pts, dtype=float)
            out = np.zeros(pts.shape[:-1], dtype=complex)
            kx = zeta[0]
            import math as _math
            for i in range(kx + 1):
                z2 = (kx - i,) + tuple(zeta[1:])
                out += _math.comb(kx, i) * cut.derivative(i, pts[..., 0]) \
                    * bumps.eval_stack(z2, pts)
            return out

    phi = _CutBumps()

    def calls(j, zeta_par, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        p = np.concatenate([xy, np.zeros((len(xy), 1))], axis=1)
        return phi.eval_stack(tuple(zeta_par) + (j,), p)

    sh = {}
    for b in semih_indices(m, n):
        sh[b] = phi.eval_stack(b, pts0)
    fsh = WhitneyArray("semih", m, n, sh, h, (xg[0],))
    norm = fsh.norm_l2()
    ext = MollifierExtension(m, n, calls, support_radius=width / 4)
    depth = 2 * l_out
    cutoff = Piecewise1D([-depth, -depth / 2], [0.0, 1.0])
    F = VerticalCutoff(ext, cutoff)

    def apply(xs, ts):
        from .quadrature import graded_panels, uniform_panels
        pts = np.concatenate([np.repeat(xs, len(ts), axis=0),
                              np.tile(ts, len(xs))[:, None]], axis=1)
        y_win = (center - 2 * r_out - width, center + 2 * r_out + width)
        # panels scale with the annulus so every ring costs the same
        y_edges = uniform_panels(*y_win, max(width / 6, (y_win[1] - y_win[0]) / 48))
        tmin = float(np.min(ts))
        s_edges = -graded_panels(0.0, depth, scale=min(tmin, width / 6) / 2,
                                 max_width=depth / 8)[::-1]
        vals = theta.D_points(F, pts, depth, y_win, y_edges=y_edges,
                              s_edges=s_edges)
        return vals.reshape(len(xs), len(ts)).T

    return {"apply": apply, "norm": norm}, h


def _theta_S_on_nodes(theta, data, cell, xs, ts):
    from .potential import single_layer
    g = data["g"]
    pts = np.concatenate([np.repeat(xs, len(ts), axis=0),
                          np.tile(ts, len(xs))[:, None]], axis=1)
    vals = single_layer(theta.K, g, theta.x_stack, pts) * pts[:, -1] ** theta.k
    return vals.reshape(len(xs), len(ts)).T


def quasi_orthogonality_scan(theta_Qs_apply, clp: CLPFamily, ratios, seed: int,
                             threshold, t_ref: float = 1.0,
                             band=(0.8, 1.2)) -> DecayFit:
    """||Theta_t Q_s h|| / ||h|| against log2(t/s); fit the exponent theta.

    ``theta_Qs_apply(s, t)`` must return (norm of Theta_t Q_s h, norm of h)
    for the caller's test data.  ``threshold`` may be a scalar (pass iff
    slope >= threshold) or a (lo, hi) band.
    """
    ratios = np.asarray(sorted(ratios), dtype=float)
    if np.any(ratios > 1.0 + 1e-12):
        raise ValueError("ratio grid must satisfy s <= t")
    norms = []
    for r in ratios:
        num, den = theta_Qs_apply(r * t_ref, t_ref)
        norms.append(num / max(den, 1e-300))
    a = -np.log2(ratios)            # log2(t/s)
    fit = fit_decay(a, norms, 0.0, skip=0, require_monotone=False)
    if np.isscalar(threshold):
        fit.threshold = float(threshold)
        fit.passed = fit.exponent >= float(threshold)
    else:
        lo, hi = threshold
        fit.threshold = float(lo)
        fit.passed = (lo <= fit.exponent <= hi)
    return fit


# -- Hodge decomposition -----------------------------------------------------------

def hodge_decompose(spec_h: OperatorSpec, F: MIArray, tol: float = 1e-10):
    """F = H + A_par grad^m Phi with Div_{m,par} H = 0 on the torus.

    spec_h acts in n variables (dim == n); F is an MIArray of GridFields
    over the n-torus.  Returns (H, Phi, report).
    """
    n = spec_h.dim
    m = spec_h.m
    Phi, info = variational_solve(spec_h, F, tol=tol)
    oms = omega_grids(Phi.shape, Phi.spacing)
    phi_hat = Phi.fft()
    mis = enumerate_mi(n, m)
    grads = {z: np.fft.ifftn(mi_multiplier(oms, z) * phi_hat) for z in mis}
    AG = spec_h.apply_tensor(grads)
    H = MIArray(n, m, {z: GridField(np.asarray(F[z].values) - AG[z], Phi.spacing)
                       for z in mis})
    # residuals
    div_hat = np.zeros(Phi.shape, dtype=complex)
    for z in mis:
        div_hat += mi_multiplier(oms, z) * np.fft.fftn(H[z].values)
    fnorm = np.sqrt(sum(np.sum(np.abs(np.asarray(F[z].values)) ** 2) for z in mis))
    div_res = float(np.linalg.norm(div_hat) /
                    max(np.prod(Phi.shape) ** 0.5 * fnorm, 1e-300))
    recon = float(np.sqrt(sum(np.sum(np.abs(np.asarray(F[z].values) - AG[z]
                                            - H[z].values) ** 2) for z in mis))
                  / max(fnorm, 1e-300))
    hnorm = np.sqrt(sum(np.sum(np.abs(H[z].values) ** 2) for z in mis))
    gnorm = np.sqrt(sum(np.sum(np.abs(grads[z]) ** 2) for z in mis))
    report = {"divergence_residual": div_res, "reconstruction_residual": recon,
              "energy_ratio": float((hnorm + gnorm) / max(fnorm, 1e-300)),
              "solver": info}
    return H, Phi, report


# -- Theta_t^beta -------------------------------------------------------------------

def theta_beta_carleson(spec: OperatorSpec, K, beta, cfg: ThetaConfig,
                        delta: float, forest=None, check_identity: bool = True):
    """Carleson norm of Theta_t^beta 1 plus the section-8 splitting check.

    Theta_t^beta f = sum_{a_d = 0} t^k int d_t^{m+k-1} d_y^a E(x,t,y,0)
    A_{a beta}(y) f(y) dy; for f = 1 the integral runs over all of R^n by
    graded rings.  The companion identity Theta_t^D e_beta =
    Theta_t^beta 1 - Theta_t^S a_beta is measured with the three terms
    computed by independent quadratures.
    """
    from .potential import theta_family, _kernel_diff_array
    from .probes import _measure  # noqa: F401  (kept local: no circular import)
    m, n = spec.m, K.d - 1
    beta = tuple(beta)
    if beta[-1] >= m:
        raise ValueError("beta must satisfy beta_d < m")
    if 2 * m <= n:
        raise ValueError("direct Theta^beta needs 2m > n; lift the operator first")
    hp = horizontal_part(spec)
    from .elliptic import garding_estimate, NonElliptic
    garding_estimate(hp)  # raises NonElliptic if the horizontal part fails
    th = theta_family(K, spec, cfg)
    x_stack = unit_mi(n + 1, n, m + cfg.k - 1)

    def theta_beta_one(xs, ts):
        from .potential import _ring_integral
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.zeros((len(ts), len(xs)), dtype=complex)
        for a in enumerate_mi(n + 1, m):
            if a[-1] != 0:
                continue
            c = spec.entry(a, beta)
            if c == 0 or isinstance(c, np.ndarray):
                continue
            st = K.stack(x_stack, a)
            for it, t in enumerate(ts):
                for ix, x in enumerate(xs):
                    out[it, ix] += complex(c) * t ** cfg.k * _ring_integral(
                        st, x, float(t), n, float(t))
        return out

    if forest is None:
        forest = dyadic_forest(n, 1.0, 3)
    cnorm = carleson_norm(theta_beta_one, forest, delta, x_order=6, t_points=12)
    sup_bound = float(np.max(np.abs(theta_beta_one(
        np.zeros((1, n)), np.geomspace(0.05, 2.0, 8)))))

    identity_residual = float("nan")
    if check_identity:
        xs = np.array([[0.15], [-0.3]])
        ts = np.array([0.5, 1.0])
        lhs = th.D_one(beta, xs, ts)
        a_beta = {}
        for gamma in dirichlet_indices(m, n):
            gt = tuple(g + (1 if i == n else 0) for i, g in enumerate(gamma))
            a_beta[gamma] = spec.entry(gt, beta)
        rhs = theta_beta_one(xs, ts)
        for gamma, cval in a_beta.items():
            if cval == 0:
                continue
            rhs = rhs - complex(cval) * th.S_one(gamma, xs, ts)
        identity_residual = float(np.max(np.abs(lhs - rhs))
                                  / max(np.max(np.abs(rhs)), 1e-300))
    return {"carleson_norm": cnorm, "sup_theta_beta_one": sup_bound,
            "identity_residual": identity_residual}


# -- emission -----------------------------------------------------------------------

def write_scan_csv(path, fit: DecayFit, meta: dict | None = None):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["abscissa", "norm"])
        for a, v in zip(fit.abscissae, fit.norms):
            w.writerow([a, v])
        w.writerow([])
        w.writerow(["exponent", fit.exponent])
        w.writerow(["threshold", fit.threshold])
        w.writerow(["passed", fit.passed])
        for k, v in (meta or {}).items():
            w.writerow([k, v])


def write_report_json(path, payload: dict):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, default=str)
