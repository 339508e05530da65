"""Identity measurements: Green's formula, jump relations, Neumann pairings,
the biharmonic Neumann family, and the section-9 Tb probe construction.

Everything here is a *measurement*: independent computational routes for
the two sides of an identity, with quadrature/refinement diagnostics, never
an assertion by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .elliptic import OperatorSpec
from .fields import SlabField
from .fieldstacks import (KernelPole, MollifierExtension, Piecewise1D,
                          VerticalCutoff, SeparableField, EvenRadial,
                          PolyTimesFactor)
from .kernel import KernelEvaluator
from .mindex import enumerate_mi, unit_mi
from .potential import (ThetaConfig, WhitneyArray, dirichlet_indices,
                        semih_indices, spectral_callables, single_layer_slab,
                        _kernel_diff_array, theta_family)
from .quadrature import conv_same, gauss_panel, graded_panels, panel_line
from .spectral import omega_grids, mi_multiplier, constant_symbol

__all__ = [
    "green_residual", "jump_residual", "neumann_pair", "biharmonic_neumann",
    "biharmonic_weak_residual", "riesz_transform", "tb_probe", "TbProbe",
    "TbProbeReport", "apply_L_residual", "solution_slab",
]


# -- interior equation check --------------------------------------------------

def apply_L_residual(spec: OperatorSpec, u: SlabField, margin: int = 6) -> float:
    """|L u| / scale on interior planes, by discrete derivatives.

    Discrete stacks amplify noise at order 2m; the scale is the discrete
    sup of |grad^{2m} u|, so the result measures relative PDE residual.
    """
    m = spec.m
    n = u.n
    acc = None
    scale = 0.0
    for a in enumerate_mi(n + 1, m):
        for b in enumerate_mi(n + 1, m):
            c = spec.entry(a, b)
            if isinstance(c, np.ndarray) or c == 0:
                continue
            stack = tuple(x + y for x, y in zip(a, b))
            der = u.derivative(stack).values
            scale = max(scale, float(np.max(np.abs(der))))
            term = ((-1.0) ** m) * complex(c) * der
            acc = term if acc is None else acc + term
    sl = (slice(None),) * n + (slice(margin, -margin),)
    return float(np.max(np.abs(acc[sl])) / max(scale, 1e-300))


def solution_slab(K: KernelEvaluator, g: WhitneyArray, t_values, orders) -> dict:
    """d^a S g sampled on (g grid) x t_values for each a in orders."""
    return {tuple(a): single_layer_slab(K, g, tuple(a), t_values) for a in orders}


# -- Green's formula -----------------------------------------------------------

def _low_order_slab(K, g: WhitneyArray, alpha, t_list):
    """Like single_layer_slab but allowing below-admissible stacks.

    Used only for trace extraction of concrete closed-form solutions; the
    normalization ambiguity is a polynomial, which the downstream double
    layer annihilates.
    """
    from .potential import _conv_layer
    axes = g.axes()
    out = np.zeros((len(t_list),) + next(iter(g.components.values())).shape,
                   dtype=complex)
    for c in g.indices:
        st = K._stack_any(tuple(alpha), c)
        for it, t in enumerate(t_list):
            out[it] += _conv_layer(st, g.components[c], axes, g.cell, float(t))
    return out


def green_residual(spec: OperatorSpec, K: KernelEvaluator, g: WhitneyArray,
                   eval_x: float = 1.0, eval_t=(0.3, 0.9), n_eval_t: int = 10,
                   s_depth: float = 3.0, newton_depth: float = 10.0,
                   interior_tol: float = 5e-3) -> dict:
    """Relative residual of 1_+ grad^m u = -grad^m D~(Tr u) + grad^m Pi(1_+ A grad^m u)
    for u = S g.

    The three terms follow independent routes: direct boundary quadrature
    (left side), mollifier extension + lower-slab volume quadrature (double
    layer), and the half-space Newton solve by horizontal partial Fourier
    transform with analytic vertical profiles (Newton potential).
    """
    from .kernel import halfspace_newton_gradm
    m, n = spec.m, K.d - 1
    if n != 1:
        raise NotImplementedError("green_residual is wired for n = 1")
    axes = g.axes()
    h = g.spacing[0]
    mis = enumerate_mi(n + 1, m)

    interior = _interior_residual(spec, K, g, h)
    if interior > interior_tol:
        raise ValueError(f"interior equation residual {interior:.2e} exceeds "
                         f"{interior_tol:.1e}; Green residual would be meaningless")

    t_lo, t_hi = eval_t
    t_eval = np.linspace(t_lo, t_hi, n_eval_t)
    x_sel = np.abs(axes[0]) <= eval_x

    # (1) left side
    lhs = {a: single_layer_slab(K, g, a, t_eval) for a in mis}

    # (2) Newton term: source planes are grad^m u; the s-panel edges include
    # the evaluation heights (vertical profiles kink at tau = 0)
    edges = np.unique(np.concatenate([
        graded_panels(0.0, t_lo, scale=t_lo / 8), t_eval,
        graded_panels(t_hi, newton_depth, scale=(t_hi - t_lo) / 4)]))
    s_nodes, s_weights = panel_line(edges, 8)
    plane_cache = {}

    def W_provider(s):
        if s not in plane_cache:
            grads = {b: single_layer_slab(K, g, b, [s])[0] for b in mis}
            plane_cache[s] = {a: sum(complex(spec.entry(a, b)) * grads[b]
                                     for b in mis) for a in mis}
        return plane_cache[s]

    grad_pi = halfspace_newton_gradm(spec, W_provider, axes[0], s_nodes,
                                     s_weights, t_eval)

    # (3) double layer of the trace of u (extrapolated low-order boundary data;
    # plane heights are free thanks to the oversampled convolution)
    tr_planes = np.arange(1, 7) * (h / 4)
    comps = {}
    for c in dirichlet_indices(m, n):
        comps[c] = _extrap0(_low_order_slab(K, g, c, tr_planes), tr_planes)
    f_dir = WhitneyArray("dirichlet", m, n, comps, h, (axes[0][0],))
    calls = spectral_callables(f_dir)
    ext = MollifierExtension(m, n, calls, support_radius=min(0.5, 8 * h))
    prof = Piecewise1D([-s_depth, -s_depth / 2], [0.0, 1.0])
    F_ext = VerticalCutoff(ext, prof)
    from .potential import _SourcePlanes
    source = _SourcePlanes(spec, F_ext, n)
    d_edges = -graded_panels(0.0, s_depth, scale=min(t_lo, s_depth / 8) / 2)[::-1]
    d_nodes, d_w = panel_line(d_edges, 8)
    dterm = {a: np.zeros((len(t_eval), len(axes[0])), dtype=complex) for a in mis}
    stacks = {(a, b): K.stack(a, b) for a in mis for b in mis}
    y_flat = axes[0][:, None]
    for s, ws in zip(d_nodes, d_w):
        Wp = source.plane(y_flat, float(s))
        for a in mis:
            for b in mis:
                for it, t in enumerate(t_eval):
                    kd = _kernel_diff_array(stacks[(a, b)], axes, float(t) - float(s))
                    dterm[a][it] -= ws * conv_same(kd, Wp[b].reshape(-1), h)

    num = 0.0
    den = 0.0
    for a in mis:
        res = lhs[a] + dterm[a] - grad_pi[a]
        num += np.sum(np.abs(res[:, x_sel]) ** 2)
        den += np.sum(np.abs(lhs[a][:, x_sel]) ** 2)
    return {"residual": float(np.sqrt(num / den)), "interior": interior}


def _extrap0(planes: np.ndarray, ts: np.ndarray) -> np.ndarray:
    V = np.vander(ts, len(ts), increasing=True)
    coef = np.linalg.solve(V, planes.reshape(len(ts), -1))
    return coef[0].reshape(planes.shape[1:])


def _interior_residual(spec, K, g, h) -> float:
    m, n = spec.m, spec.n
    t_planes = np.arange(2, 16) * h
    stacks = enumerate_mi(n + 1, 2 * m)
    # assemble L u via analytic kernel stacks (sum of order-2m derivatives)
    acc = None
    scale = 0.0
    for a in enumerate_mi(n + 1, m):
        for b in enumerate_mi(n + 1, m):
            c = spec.entry(a, b)
            if c == 0:
                continue
            stack = tuple(x + y for x, y in zip(a, b))
            vals = single_layer_slab(K, g, stack, t_planes[:4])
            scale = max(scale, float(np.max(np.abs(vals))))
            term = ((-1.0) ** m) * complex(c) * vals
            acc = term if acc is None else acc + term
    return float(np.max(np.abs(acc)) / max(scale, 1e-300))


# -- jump relation -------------------------------------------------------------

def jump_residual(K_star: KernelEvaluator, spec_star: OperatorSpec,
                  f: WhitneyArray, f_calls=None, s_depth: float = 2.0,
                  order: int = 8, planes=(2, 3, 4, 5, 6, 7, 8)) -> dict:
    """|| Tr^-_{m-1} D f - Tr^+_{m-1} D f - f || / ||f|| for D = D^{A*}.

    Upper-side values use the exterior (lower-source) representation and
    lower-side values the interior (upper-source) one, so no singular
    integrals arise; one-sided traces are extrapolated from |t| in
    [2h, 8h], comparing order-2 and order-3 extrapolants.
    """
    m, n = K_star.m, K_star.d - 1
    h = f.spacing[0]
    axes = f.axes()
    calls = f_calls if f_calls is not None else spectral_callables(f)
    ext = MollifierExtension(m, n, calls, support_radius=min(0.5, 8 * h))
    prof = Piecewise1D([-s_depth, -s_depth / 2, s_depth / 2, s_depth],
                       [0.0, 1.0, 1.0, 0.0])
    F_ext = VerticalCutoff(ext, prof)
    from .potential import _SourcePlanes
    source = _SourcePlanes(spec_star, F_ext, n)
    t_abs = np.array(planes, dtype=float) * h
    gammas = dirichlet_indices(m, n)
    betas = enumerate_mi(n + 1, m)
    stacks = {(c, b): K_star.stack(c, b) for c in gammas for b in betas}

    def v_field(side_sign):
        """V_gamma at t = side_sign * t_abs, integrating over the other side."""
        s_edges = graded_panels(0.0, s_depth, scale=t_abs[0])
        s_nodes, s_w = panel_line(s_edges, order)
        s_nodes = -side_sign * s_nodes  # opposite side of the targets
        out = {c: np.zeros((len(t_abs), len(axes[0])), dtype=complex) for c in gammas}
        for s, ws in zip(s_nodes, s_w):
            Wp = source.plane(axes[0][:, None], float(s))
            for c in gammas:
                for b in betas:
                    for it, ta in enumerate(t_abs):
                        kd = _kernel_diff_array(stacks[(c, b)], axes,
                                                side_sign * float(ta) - float(s))
                        out[c][it] += ws * conv_same(kd, Wp[b].reshape(-1), f.cell)
        return out

    v_up = v_field(+1.0)    # targets above, source below: -d^c D f above
    v_dn = v_field(-1.0)    # targets below, source above: +d^c D f below
    num = 0.0
    den = 0.0
    est_flag = 0.0
    for c in gammas:
        upper3 = _extrap_poly(v_up[c], t_abs, 3)
        upper2 = _extrap_poly(v_up[c][:4], t_abs[:4], 2)
        lower3 = _extrap_poly(v_dn[c], -t_abs, 3)
        jump = lower3 + upper3            # V^+(0-) + V^-(0+)
        scale = max(np.max(np.abs(upper3)), 1e-300)
        est_flag = max(est_flag, float(np.max(np.abs(upper3 - upper2)) / scale))
        num += np.sum(np.abs(jump - f.components[c]) ** 2)
        den += np.sum(np.abs(f.components[c]) ** 2)
    return {"residual": float(np.sqrt(num / den)),
            "extrapolation_disagreement": est_flag,
            "unstable": est_flag > 0.10}


def _extrap_poly(vals: np.ndarray, ts: np.ndarray, order: int) -> np.ndarray:
    V = np.vander(ts, order + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, vals.reshape(len(ts), -1), rcond=None)
    return coef[0].reshape(vals.shape[1:])


# -- Neumann pairing -----------------------------------------------------------

def neumann_pair(spec: OperatorSpec, u: SlabField, phi: SlabField,
                 interior_tol: float = 5e-3) -> complex:
    """<grad^m phi, A grad^m u> over the upper slab (u must solve Lu = 0)."""
    res = apply_L_residual(spec, u)
    if res > interior_tol:
        raise ValueError(f"interior equation residual {res:.2e}; refusing pairing")
    m, n = spec.m, u.n
    total = 0.0 + 0.0j
    w_t = np.full(len(u.t_values), u.t_spacing)
    w_t[[0, -1]] *= 0.5
    for a in enumerate_mi(n + 1, m):
        ga = phi.derivative(a).values
        for b in enumerate_mi(n + 1, m):
            c = spec.entry(a, b)
            if c == 0:
                continue
            gb = u.derivative(b).values
            total += complex(c) * np.sum(np.conj(ga) * gb * w_t) * float(np.prod(u.x_spacing))
    return total


# -- biharmonic Neumann family -------------------------------------------------

def _one_sided_d(values: np.ndarray, h: float, order: int):
    """order-th one-sided t-derivative at the first plane (4th-order stencils)."""
    tables = {
        1: np.array([-25, 48, -36, 16, -3]) / 12.0,
        2: np.array([45, -154, 214, -156, 61, -10]) / 12.0,
        3: np.array([-49, 232, -461, 496, -307, 104, -15]) / 8.0,
    }
    w = tables[order]
    acc = sum(w[i] * values[..., i] for i in range(len(w)))
    return acc / h ** order


def biharmonic_neumann(rho: float, v: SlabField):
    """(M_rho v, K_rho v) on t = 0 for the upper half-space (nu = -e_t).

    M_rho v = rho Delta v + (1 - rho) d_t^2 v
    K_rho v = -d_t Delta v - (1 - rho) Delta_par d_t v
    evaluated by one-sided vertical stencils at the boundary plane.
    """
    if len(v.t_values) < 7:
        raise ValueError("need at least 7 planes for 3rd-order boundary stencils")
    if abs(v.t_values[0]) > 1e-12:
        raise ValueError("slab must start at t = 0")
    n = v.n
    h = v.t_spacing
    vals = v.values
    lap_par0 = sum(v.derivative(unit_mi(n + 1, ax, 2)).values[..., 0] for ax in range(n))
    d2t0 = _one_sided_d(vals, h, 2)
    M = rho * (lap_par0 + d2t0) + (1 - rho) * d2t0
    # d_t Delta v at t=0: Delta_par d_t v + d_t^3 v
    dt = _fd_t(vals, h)
    lap_par_dt0 = sum(SlabField(dt, v.x_spacing, v.t_values, v.x_origin)
                      .derivative(unit_mi(n + 1, ax, 2)).values[..., 0]
                      for ax in range(n))
    d3t0 = _one_sided_d(vals, h, 3)
    K = -(lap_par_dt0 + d3t0) - (1 - rho) * lap_par_dt0
    return M, K


def _fd_t(values: np.ndarray, h: float) -> np.ndarray:
    from .fields import _fd_axis
    return _fd_axis(values, h, values.ndim - 1)


def biharmonic_weak_residual(rho: float, w_field, v_field, box=2.0, depth=2.0,
                             nx: int = 48, nt: int = 40) -> float:
    """Residual of the integration-by-parts identity defining (M_rho, K_rho):

    int_+ w D^2 v = int_+ (rho Dw Dv + (1-rho) d_jk w d_jk v)
                    + int_bdy (w K_rho v - d_nu w M_rho v)

    for analytic fields w, v (w compactly supported in the closed upper
    half-space).  Returns |lhs - rhs| / scale.
    """
    n = 1
    d = 2
    gx, wx = gauss_panel(-box, box, nx)
    gt, wt = gauss_panel(0.0, depth, nt)
    X, T = np.meshgrid(gx, gt, indexing="ij")
    P = np.stack([X.ravel(), T.ravel()], axis=-1)
    W2 = np.outer(wx, wt).ravel()

    def lap(f, pts):
        return f.eval_stack((2, 0), pts) + f.eval_stack((0, 2), pts)

    def bilap(f, pts):
        return (f.eval_stack((4, 0), pts) + 2 * f.eval_stack((2, 2), pts)
                + f.eval_stack((0, 4), pts))

    lhs = np.sum(W2 * np.conj(w_field.eval_stack((0, 0), P)) * bilap(v_field, P))
    bulk = rho * np.sum(W2 * np.conj(lap(w_field, P)) * lap(v_field, P))
    for a in range(d):
        for b in range(d):
            za = tuple((2 if a == b and a == i else (1 if i in (a, b) else 0))
                       for i in range(d))
            bulk += (1 - rho) * np.sum(W2 * np.conj(w_field.eval_stack(za, P))
                                       * v_field.eval_stack(za, P))
    B = gx[:, None]
    Pb = np.concatenate([B, np.zeros_like(B)], axis=1)
    w0 = np.conj(w_field.eval_stack((0, 0), Pb))
    dw_nu = -np.conj(w_field.eval_stack((0, 1), Pb))   # nu = -e_t
    Mv = (rho * (v_field.eval_stack((2, 0), Pb) + v_field.eval_stack((0, 2), Pb))
          + (1 - rho) * v_field.eval_stack((0, 2), Pb))
    Kv = -(v_field.eval_stack((2, 1), Pb) + v_field.eval_stack((0, 3), Pb)) \
        - (1 - rho) * v_field.eval_stack((2, 1), Pb)
    bdy = np.sum(wx * (w0 * Kv - dw_nu * Mv))
    rhs = bulk + bdy
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return float(abs(lhs - rhs) / scale)


def riesz_transform(values: np.ndarray, spacing, axis: int) -> np.ndarray:
    """R_j with multiplier +i theta_j/|theta| (fixed by d_t Delta u =
    sum_j d_j R_j Delta u for decaying harmonic u in the upper half-space).
    For n = 1 this is the Hilbert transform up to sign."""
    shape = values.shape
    freqs = [np.fft.fftfreq(N, d=h) for N, h in zip(shape, spacing)]
    oms = np.meshgrid(*freqs, indexing="ij")
    mag = np.sqrt(sum(om ** 2 for om in oms))
    mag[mag == 0] = 1.0
    mult = 1j * oms[axis] / mag
    return np.fft.ifftn(np.fft.fftn(values) * mult)


# -- Tb probes -----------------------------------------------------------------

@dataclass
class TbProbe:
    Q: object
    kappa: float
    omega: float
    y_Q: np.ndarray
    F_plus: KernelPole
    F_minus: KernelPole
    b_D: WhitneyArray
    phi_bound: float


@dataclass
class TbProbeReport:
    sigma_est: float
    eta_est: float
    carleson_budget: float
    averages: dict
    identity_residual: float
    kappa: float


def _phi_profiles(Q, omega: float, n: int):
    """Per-axis phi_Q factor and the vertical rho(t) profile."""
    l = Q.side
    c = Q.center
    floor = omega ** (1.0 / n)
    prof = Piecewise1D([l / 4, l / 2, (1 + omega) * l / 2], [1.0, floor, 0.0])
    xfac = [EvenRadial(prof, center=c[i]) for i in range(n)]
    rho = Piecewise1D([l, 2 * l], [1.0, 0.0])
    rho_even = _EvenT(rho)
    return xfac, rho_even, prof


class _EvenT:
    def __init__(self, profile):
        self.profile = profile

    def derivative(self, k, t):
        t = np.asarray(t, dtype=float)
        sign = np.where(t >= 0, 1.0, -1.0)
        return self.profile.derivative(k, np.abs(t)) * sign ** (k % 2)


def tb_probe(Q, kappa: float, K: KernelEvaluator, spec: OperatorSpec,
             omega: float = 1 / 8, cfg: ThetaConfig | None = None,
             grid_points: int = 256, identity_samples: int = 8,
             check_identity: bool = True):
    """Build the cube-adapted test pair and measure the section-9 quantities.

    Requires 2m > n (the paper's standing hypothesis; lower orders go
    through the lifted operator).  Returns (TbProbe, TbProbeReport):

      * probe averages <Tr_{m-1} Phi_Q^c, b_Q^S>/|Q| against the exact
        limit delta_{c, gamma_perp} = d_s^{m-1} Phi_Q^c(y_Q, -kappa l(Q));
      * the Carleson budget of Theta_t b_Q via the collapsed kernel form;
      * the identity Theta_t^D b_Q^D + Theta_t^S b_Q^S =
        |Q| t^k d_t^{m+k} F_- checked pointwise on samples, with the two
        sides assembled through independent machinery.
    """
    m, n = K.m, K.d - 1
    if 2 * m <= n:
        raise ValueError("tb probe needs 2m > n; use the lifted operator instead")
    if not (0 < kappa < 1 / 16):
        raise ValueError("kappa must lie in (0, 1/16)")
    if cfg is None:
        cfg = ThetaConfig(k=m + 2, t_grid=np.geomspace(Q.side / 64, Q.side, 24))
    l = Q.side
    y_Q = np.asarray(Q.center, dtype=float)
    pole_up = np.append(y_Q, +kappa * l)
    pole_dn = np.append(y_Q, -kappa * l)
    xi = unit_mi(n + 1, n, m - 1)
    F_plus = KernelPole(K, xi, pole_up)
    F_minus = KernelPole(K, xi, pole_dn)

    # b_Q^D on a grid covering several cube lengths
    half = 4 * l
    xg = y_Q[0] - half + (2 * half / grid_points) * np.arange(grid_points)
    h = xg[1] - xg[0]
    pts0 = np.stack([xg, np.zeros_like(xg)], axis=-1) if n == 1 else None
    comps = {}
    for b in semih_indices(m, n):
        vals = (F_plus.eval_stack(b, pts0) - F_minus.eval_stack(b, pts0))
        comps[b] = abs(_measure(Q)) * vals
    b_D = WhitneyArray("semih", m, n, comps, h, (xg[0],))

    xfac, rho, prof1d = _phi_profiles(Q, omega, n)
    phi_bound = prof1d.max_slope()

    # probe averages: slab pairings against grad^m Phi_Q^c
    averages = {}
    for c in dirichlet_indices(m, n):
        xf = [PolyTimesFactor(c[i], y_Q[i], xfac[i]) for i in range(n)]
        tf = _PolyTimesT(c[n], rho)
        Phi = SeparableField(xf, tf)
        val = (_pairing_halfspace(spec, Phi, F_minus, Q, omega, +1)
               + _pairing_halfspace(spec, Phi, F_plus, Q, omega, -1))
        averages[c] = complex(val)
    gamma_perp = unit_mi(n + 1, n, m - 1)
    sigma_est = float(np.real(averages[gamma_perp]))
    eta_est = max(abs(averages[c]) for c in averages if c != gamma_perp) / max(sigma_est, 1e-300)

    # Carleson budget via the collapsed kernel: Theta_t b_Q = |Q| t^k d_t^{m+k} F_-
    measure = abs(_measure(Q))
    stack = K.stack(unit_mi(n + 1, n, m + cfg.k), xi)
    tg = cfg.t_grid
    gx, gw = gauss_panel(Q.anchor[0], Q.anchor[0] + l, 24)
    budget = 0.0
    log_ts = np.log(tg)
    w_log = np.gradient(log_ts)
    for it, t in enumerate(tg):
        dz = np.stack([gx - y_Q[0], np.full_like(gx, t + kappa * l)], axis=-1)
        vals = measure * t ** cfg.k * stack(dz)
        budget += float(np.sum(gw * np.abs(vals) ** 2)) * w_log[it]
    budget /= measure

    identity_residual = float("nan")
    if check_identity:
        identity_residual = _tb_identity_residual(Q, kappa, K, spec, cfg, b_D,
                                                  F_plus, F_minus,
                                                  identity_samples)

    probe = TbProbe(Q, kappa, omega, y_Q, F_plus, F_minus, b_D, phi_bound)
    report = TbProbeReport(sigma_est, eta_est, float(budget), averages,
                           identity_residual, kappa)
    return probe, report


class _PolyTimesT:
    """(t^p / p!) * rho(t) as a 1D vertical factor."""

    def __init__(self, p: int, rho):
        self.p = int(p)
        self.rho = rho

    def derivative(self, k, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for i in range(min(k, self.p) + 1):
            mono = t ** (self.p - i) / math.factorial(self.p - i)
            out = out + math.comb(k, i) * mono * self.rho.derivative(k - i, t)
        return out


def _measure(Q) -> float:
    return Q.side ** Q.n


def _pairing_halfspace(spec, Phi, F_pole, Q, omega: float, side: int,
                       order: int = 10) -> complex:
    """<grad^m Phi, A grad^m F> over the upper (side=+1) or lower half-space.

    Phi is supported in (1+omega)Q x [-2l, 2l]; panels split at the profile
    breakpoints and grade toward t = 0 where the pole sits closest.
    """
    m = spec.m
    n = spec.n
    l = Q.side
    c = Q.center
    kap_l = abs(F_pole.pole[-1])
    xs, xw = [], []
    for ax in range(n):
        brk = np.array([-(1 + omega) * l / 2, -l / 2, -l / 4, l / 4, l / 2,
                        (1 + omega) * l / 2]) + c[ax]
        nodes, weights = panel_line(brk, order)
        xs.append(nodes)
        xw.append(weights)
    if n == 1:
        xpts = xs[0][:, None]
        xwts = xw[0]
    else:
        X1, X2 = np.meshgrid(xs[0], xs[1], indexing="ij")
        xpts = np.column_stack([X1.ravel(), X2.ravel()])
        xwts = np.outer(xw[0], xw[1]).ravel()
    t_edges = np.concatenate([graded_panels(0.0, l, scale=kap_l / 2), [2 * l]])
    t_nodes, t_w = panel_line(t_edges, order)
    if side < 0:
        t_nodes, t_w = -t_nodes, t_w
    total = 0.0 + 0.0j
    mis = enumerate_mi(n + 1, m)
    for tn, tw in zip(t_nodes, t_w):
        P = np.concatenate([xpts, np.full((len(xpts), 1), tn)], axis=1)
        gPhi = {a: Phi.eval_stack(a, P) for a in mis}
        gF = {a: F_pole.eval_stack(a, P) for a in mis}
        AF = spec.apply_tensor(gF)
        for a in mis:
            total += tw * np.sum(xwts * np.conj(gPhi[a]) * AF[a])
    return total


def _tb_identity_residual(Q, kappa, K, spec, cfg, b_D, F_plus, F_minus,
                          samples: int) -> float:
    """Theta_t^D b_Q^D + Theta_t^S b_Q^S versus |Q| t^k d_t^{m+k} F_-.

    Theta^S b_Q^S goes through the Green split
    Pi(1_+ A grad^m F_-) = F_- + D(Tr F_-) plus the direct lower-slab
    Newton integral of 1_- A grad^m F_+; every D-term uses an independent
    mollifier extension.
    """
    m, n = K.m, K.d - 1
    l = Q.side
    y_Q = np.asarray(Q.center, dtype=float)
    measure = abs(_measure(Q))
    k = cfg.k
    rng = np.random.default_rng(7)
    xs = y_Q[0] + rng.uniform(-0.4, 0.4, samples) * l
    ts = rng.uniform(0.4, 1.0, samples) * l
    pts = np.stack([xs, ts], axis=-1)
    xi = unit_mi(n + 1, n, m - 1)
    x_stack = unit_mi(n + 1, n, m + k)

    # rhs: collapsed kernel
    rhs = measure * ts ** k * K.stack(x_stack, xi)(
        np.stack([xs - y_Q[0], ts + kappa * l], axis=-1))

    th = theta_family(K, spec, cfg)
    s_depth = 16.0 * l
    y_win = (y_Q[0] - 32 * l, y_Q[0] + 32 * l)
    # panels must resolve the pole scale kappa*l near (y_Q, 0); outer panels
    # grow geometrically so the wide window stays cheap
    fine = kappa * l / 4
    right = graded_panels(0.0, 32 * l, scale=fine, ratio=1.6, max_width=1.5)
    y_edges = np.unique(np.concatenate([y_Q[0] - right[::-1], y_Q[0] + right]))
    s_edges = -graded_panels(0.0, s_depth, scale=fine, ratio=1.6,
                             max_width=1.2)[::-1]

    def extension_of(pole_field):
        def calls(j, zeta_par, xy):
            xy = np.atleast_2d(np.asarray(xy, dtype=float))
            p = np.concatenate([xy, np.zeros((len(xy), 1))], axis=1)
            return pole_field.eval_stack(tuple(zeta_par) + (j,), p)
        ext = MollifierExtension(m, n, calls, support_radius=l / 8)
        prof = Piecewise1D([-s_depth, -s_depth / 2], [0.0, 1.0])
        return VerticalCutoff(ext, prof)

    # Theta^D b_Q^D (extension of the trace difference)
    FQ_ext = extension_of(_PoleDiff(F_plus, F_minus))
    thD = measure * th.D_points(FQ_ext, pts, s_depth, y_win, order=10,
                                y_edges=y_edges, s_edges=s_edges)

    # Theta^S b_Q^S = |Q| t^k d_t^{m+k} [F_- + D(Tr F_-) + Pi(1_- A grad^m F_+)]
    term_F = measure * ts ** k * K.stack(x_stack, xi)(
        np.stack([xs - y_Q[0], ts + kappa * l], axis=-1))
    Fm_ext = extension_of(F_minus)
    term_D = measure * th.D_points(Fm_ext, pts, s_depth, y_win, order=10,
                                   y_edges=y_edges, s_edges=s_edges)
    term_Pi = measure * _newton_lower(K, spec, F_plus, pts, k, s_depth, y_win,
                                      order=10, y_edges=y_edges, s_edges=s_edges)
    lhs = thD + term_F + term_D + term_Pi
    return float(np.max(np.abs(lhs - rhs) / np.max(np.abs(rhs))))


class _PoleDiff:
    def __init__(self, a, b):
        self.a, self.b = a, b

    def eval_stack(self, zeta, pts):
        return self.a.eval_stack(zeta, pts) - self.b.eval_stack(zeta, pts)


def _newton_lower(K, spec, F_field, pts, k: int, s_depth: float, y_win,
                  order: int = 8, y_edges=None, s_edges=None):
    """t^k d_t^{m+k} Pi(1_- A grad^m F) at upper points (direct repr.)."""
    from .quadrature import uniform_panels
    m, n = K.m, K.d - 1
    pts = np.atleast_2d(pts)
    tmin = float(np.min(pts[:, -1]))
    if s_edges is None:
        s_edges = -graded_panels(0.0, s_depth, scale=tmin / 2, max_width=0.75)[::-1]
    s_nodes, s_w = panel_line(s_edges, order)
    ylo, yhi = y_win
    if y_edges is None:
        y_edges = uniform_panels(ylo, yhi, min(0.5, (yhi - ylo) / 16))
    y_nodes, y_w = panel_line(y_edges, order)
    y_pts = y_nodes[:, None]
    from .potential import _SourcePlanes
    source = _SourcePlanes(spec, F_field, n)
    x_stack = unit_mi(n + 1, n, m + k)
    stacks = {b: K.stack(x_stack, b) for b in enumerate_mi(n + 1, m)}
    out = np.zeros(len(pts), dtype=complex)
    for s, ws in zip(s_nodes, s_w):
        W = source.plane(y_pts, float(s))
        dz = np.empty((len(pts), len(y_pts), n + 1))
        dz[..., :n] = pts[:, None, :n] - y_pts[None, :, :]
        dz[..., n] = pts[:, None, n] - s
        for b, st in stacks.items():
            out += ws * ((st(dz) * W[b][None, :]) @ y_w)
    return out * pts[:, -1] ** k
