"""Fundamental solutions and the Newton potential.

Constant-coefficient kernels are translation invariant: a derivative stack
d_X^zeta d_Y^xi E(X, Y) is (-1)^{|xi|} (d^{zeta+xi} e)(X - Y) for a profile
e.  Closed forms cover the polyharmonic family; general constant tensors go
through the Fourier symbol (horizontal partial transform + contour
integration in the vertical frequency).  Variable-coefficient kernels are
never constructed pointwise; those potentials route through the torus
Newton solve.

Derivative stacks below the admissible range (|zeta|, |xi| >= m-1 and
|zeta| + |xi| >= 2m-1) are refused by ``evaluate``: lower-order derivatives
of E are defined only up to polynomials.  ``evaluate_any`` exposes the
concrete closed-form normalization for solution-ratio measurements that
need it.
"""

from __future__ import annotations

import csv
import math
from functools import lru_cache

import numpy as np

from .mindex import MIArray, enumerate_mi, unit_mi
from .fields import GridField
from .quadrature import gauss_panel, graded_panels, panel_line
from .radial import DerivativeStack, polyharmonic_profile
from .spectral import variational_solve, omega_grids, mi_multiplier

__all__ = [
    "KernelOrderError", "KernelEvaluator", "PolyharmonicKernel", "SymbolKernel",
    "polyharmonic_kernel", "symbol_kernel", "newton_potential",
    "newton_symmetry_check", "slice_bound_measure", "export_samples",
]


class KernelOrderError(ValueError):
    """Derivative orders outside the admissible range for this kernel."""


class KernelEvaluator:
    """Base: admissibility gate + the (zeta, xi) -> difference-stack plumbing."""

    provenance = "abstract"

    def __init__(self, m: int, d: int, spec=None):
        self.m = int(m)
        self.d = int(d)
        self.spec = spec

    def admissible(self, zeta, xi) -> bool:
        nz, nx = sum(zeta), sum(xi)
        return nz >= self.m - 1 and nx >= self.m - 1 and nz + nx >= 2 * self.m - 1

    def require_admissible(self, zeta, xi):
        if len(zeta) != self.d or len(xi) != self.d:
            raise ValueError("multiindex length must equal the ambient dimension")
        if not self.admissible(zeta, xi):
            raise KernelOrderError(
                f"stack (|zeta|={sum(zeta)}, |xi|={sum(xi)}) below the admissible "
                f"range for m={self.m}: need both >= m-1 and total >= 2m-1")

    def diff_stack(self, nu, sign: float):
        """Callable z -> sign * (d^nu e)(z); implemented by subclasses."""
        raise NotImplementedError

    def stack(self, zeta, xi):
        """Callable z -> d_X^zeta d_Y^xi E at X - Y = z (admissibility-gated)."""
        self.require_admissible(zeta, xi)
        return self._stack_any(tuple(zeta), tuple(xi))

    def _stack_any(self, zeta, xi):
        nu = tuple(a + b for a, b in zip(zeta, xi))
        return self.diff_stack(nu, (-1.0) ** sum(xi))

    def evaluate(self, zeta, xi, X, Y):
        """d_X^zeta d_Y^xi E(X, Y) for points X, Y of shape (..., d)."""
        f = self.stack(zeta, xi)
        return f(np.asarray(X, dtype=float) - np.asarray(Y, dtype=float))

    def evaluate_any(self, zeta, xi, X, Y):
        """Like evaluate but without the admissibility gate.

        Values below the admissible range depend on this evaluator's
        concrete normalization (they are defined only modulo polynomials);
        use only inside normalization-independent measurements.
        """
        f = self._stack_any(tuple(zeta), tuple(xi))
        return f(np.asarray(X, dtype=float) - np.asarray(Y, dtype=float))


class PolyharmonicKernel(KernelEvaluator):
    """Closed-form E for L = (-Delta)^m in R^d (log branch when 2m-d >= 0 even)."""

    provenance = "closed-form"

    def __init__(self, m: int, d: int):
        if d < 2:
            raise ValueError("need d >= 2")
        super().__init__(m, d)
        self.profile, self.power, self.log_branch = polyharmonic_profile(m, d)
        self._cache = {}

    def diff_stack(self, nu, sign: float):
        key = tuple(nu)
        if key not in self._cache:
            self._cache[key] = DerivativeStack(key, self.profile)
        st = self._cache[key]
        if sign == 1.0:
            return st
        return lambda z: sign * st(z)

    def homogeneity(self, total_order: int) -> float:
        """Scaling exponent of an order-``total_order`` stack (off the log branch)."""
        return 2 * self.m - self.d + 0.0 - total_order


def polyharmonic_kernel(m: int, d: int) -> PolyharmonicKernel:
    return PolyharmonicKernel(m, d)


class SymbolKernel(KernelEvaluator):
    """Constant-coefficient kernel stacks via the Fourier symbol.

    Write omega = (theta, w) with theta horizontal.  The vertical inverse
    transform of (2 pi i omega)^nu / s(omega) at height tau is a contour
    integral around the vertical-frequency roots on the relevant side of
    the real axis (Cauchy circles, robust at multiple roots); the
    horizontal inverse transform is then a Gauss-panel quadrature, with the
    e^{-c |theta| |tau|} factor supplying the high-frequency tail decay.
    Only off-boundary evaluations (tau != 0) are supported, which is all
    the layer-potential machinery needs.
    """

    provenance = "symbol-inverted"

    def __init__(self, spec, theta_order: int = 12, theta_panels: int = 30,
                 circle_nodes: int = 128):
        if not spec.is_constant:
            raise ValueError("symbol kernels require constant coefficients")
        if spec.lambda_est is None or spec.lambda_est <= 0:
            raise ValueError("spec must carry a positive lambda_est")
        super().__init__(spec.m, spec.dim, spec)
        self.n = self.d - 1
        self.theta_order = theta_order
        self.theta_panels = theta_panels
        self.circle_nodes = circle_nodes
        # vertical-degree coefficient table: s(theta, w) =
        # (4 pi^2)^m sum_v w^v * c_v(theta), c_v(theta) = sum A_ab theta^{(a+b)_par}
        self._poly_terms = []  # (v, horizontal multiindex, coefficient)
        A = spec.dense()
        mis = spec.indices
        for i, a in enumerate(mis):
            for j, b in enumerate(mis):
                c = A[i, j]
                if c == 0:
                    continue
                v = a[-1] + b[-1]
                hz = tuple(ai + bi for ai, bi in zip(a[:-1], b[:-1]))
                self._poly_terms.append((v, hz, complex(c)))
        self._scale = (4 * np.pi ** 2) ** self.m

    def _vertical_poly(self, theta: np.ndarray) -> np.ndarray:
        """Coefficients (ascending powers of w) of s(theta, .) / scale."""
        coeffs = np.zeros(2 * self.m + 1, dtype=complex)
        for v, hz, c in self._poly_terms:
            mono = np.prod(np.asarray(theta, dtype=float) ** np.array(hz))
            coeffs[v] += c * mono
        return coeffs

    def _vertical_integral(self, theta, j: int, tau: float) -> complex:
        """int_R e^{2 pi i w tau} (2 pi i w)^j / s(theta, w) dw.

        Closing the contour above (tau > 0) or below (tau < 0) reduces the
        line integral to +/- the counterclockwise contour integral around
        the roots on that side; near-coincident roots are enclosed by a
        shared Cauchy circle, so multiplicities cost nothing.
        """
        coeffs = self._vertical_poly(theta)  # ascending powers
        roots = np.roots(coeffs[::-1])
        side = roots[np.imag(roots) > 0] if tau > 0 else roots[np.imag(roots) < 0]
        other = roots[np.imag(roots) <= 0] if tau > 0 else roots[np.imag(roots) >= 0]
        if len(side) == 0:
            return 0.0 + 0.0j
        # greedy clustering of near-coincident roots
        scale = max(np.max(np.abs(side)), 1e-14)
        todo = sorted(side, key=lambda r: (r.real, r.imag))
        clusters = []
        for r in todo:
            for cl in clusters:
                if abs(r - cl[0]) < 0.05 * scale:
                    cl.append(r)
                    break
            else:
                clusters.append([r])
        th = 2 * np.pi * (np.arange(self.circle_nodes) + 0.5) / self.circle_nodes
        unit = np.exp(1j * th)
        total = 0.0 + 0.0j
        for ci, cluster in enumerate(clusters):
            cl = np.asarray(cluster)
            center = cl.mean()
            spread = float(np.max(np.abs(cl - center))) if len(cl) > 1 else 0.0
            clearance = abs(np.imag(center))  # distance to the real axis
            others = [np.asarray(c) for k, c in enumerate(clusters) if k != ci]
            if len(other):
                others.append(np.asarray(other))
            for grp in others:
                if len(grp):
                    clearance = min(clearance, float(np.min(np.abs(grp - center))))
            radius = min(max(2.5 * spread, 0.25 * clearance), 0.8 * clearance)
            radius = max(radius, 2.0 * spread + 1e-14)
            w = center + radius * unit
            dw = 1j * radius * unit * (2 * np.pi / self.circle_nodes)
            sv = np.polyval(coeffs[::-1], w) * self._scale
            total += np.sum(np.exp(2j * np.pi * w * tau) * (2j * np.pi * w) ** j / sv * dw)
        return (1.0 if tau > 0 else -1.0) * complex(total)

    def _theta_nodes(self, tau: float):
        decay = 2 * np.pi * abs(tau) * self._min_root_imag()
        theta_max = max(60.0 / max(decay, 1e-8), 4.0)
        if self.n == 1:
            edges = graded_panels(0.0, theta_max, scale=min(0.5, theta_max / 8))
            x, w = panel_line(edges, self.theta_order)
            nodes = np.concatenate([-x[::-1], x])[:, None]
            weights = np.concatenate([w[::-1], w])
            return nodes, weights
        # n = 2: polar grid
        edges = graded_panels(0.0, theta_max, scale=min(0.5, theta_max / 8))
        r, wr = panel_line(edges, self.theta_order)
        na = 48
        ang = 2 * np.pi * (np.arange(na) + 0.5) / na
        wa = 2 * np.pi / na
        R, A = np.meshgrid(r, ang, indexing="ij")
        nodes = np.column_stack([(R * np.cos(A)).ravel(), (R * np.sin(A)).ravel()])
        weights = (np.outer(wr * r, np.full(na, wa))).ravel()
        return nodes, weights

    @lru_cache(maxsize=64)
    def _min_root_imag(self) -> float:
        """min over unit directions of Im(root)/|theta|: the tail decay rate."""
        vals = []
        dirs = [np.array([1.0]), np.array([-1.0])] if self.n == 1 else \
            [np.array([np.cos(a), np.sin(a)]) for a in np.linspace(0, 2 * np.pi, 17)[:-1]]
        for th in dirs:
            roots = np.roots(self._vertical_poly(th)[::-1])
            vals.append(np.min(np.abs(np.imag(roots))))
        return float(min(vals))

    def diff_stack(self, nu, sign: float):
        nu = tuple(nu)
        n = self.n

        def evaluate(z):
            z = np.atleast_2d(np.asarray(z, dtype=float))
            out = np.empty(len(z), dtype=complex)
            # group by vertical offset tau (planes share the theta quadrature)
            taus = z[:, -1]
            for tau in np.unique(taus):
                if tau == 0.0:
                    raise ValueError("symbol kernel stacks need tau != 0")
                sel = np.nonzero(taus == tau)[0]
                nodes, weights = self._theta_nodes(tau)
                vert = np.array([self._vertical_integral(th, nu[-1], tau)
                                 for th in nodes])
                horiz = np.ones(len(nodes), dtype=complex)
                for ax in range(n):
                    horiz *= (2j * np.pi * nodes[:, ax]) ** nu[ax]
                phase = np.exp(2j * np.pi * (z[sel, :n] @ nodes.T))
                out[sel] = phase @ (weights * horiz * vert)
            return sign * out

        return evaluate


def symbol_kernel(spec) -> SymbolKernel:
    return SymbolKernel(spec)


class _VerticalProfile:
    """I_j(theta, tau) = int e^{2 pi i w tau} (2 pi i w)^j / s(theta, w) dw
    as exponential sums over the two contour-node sets (tau > 0 / tau < 0),
    vectorized over tau."""

    def __init__(self, sk: SymbolKernel, theta):
        self.sk = sk
        coeffs = sk._vertical_poly(theta)
        self._coeffs = coeffs
        roots = np.roots(coeffs[::-1])
        self._sides = {}
        for sign in (+1, -1):
            side = roots[np.imag(roots) > 0] if sign > 0 else roots[np.imag(roots) < 0]
            other = roots[np.imag(roots) <= 0] if sign > 0 else roots[np.imag(roots) >= 0]
            nodes, dws = [], []
            if len(side):
                scale = max(np.max(np.abs(side)), 1e-14)
                todo = sorted(side, key=lambda r: (r.real, r.imag))
                clusters = []
                for r in todo:
                    for cl in clusters:
                        if abs(r - cl[0]) < 0.05 * scale:
                            cl.append(r)
                            break
                    else:
                        clusters.append([r])
                th = 2 * np.pi * (np.arange(sk.circle_nodes) + 0.5) / sk.circle_nodes
                unit = np.exp(1j * th)
                for ci, cluster in enumerate(clusters):
                    cl = np.asarray(cluster)
                    center = cl.mean()
                    spread = float(np.max(np.abs(cl - center))) if len(cl) > 1 else 0.0
                    clearance = abs(np.imag(center))
                    others = [np.asarray(c) for kk, c in enumerate(clusters) if kk != ci]
                    if len(other):
                        others.append(np.asarray(other))
                    for grp in others:
                        if len(grp):
                            clearance = min(clearance, float(np.min(np.abs(grp - center))))
                    radius = min(max(2.5 * spread, 0.25 * clearance), 0.8 * clearance)
                    radius = max(radius, 2.0 * spread + 1e-14)
                    w = center + radius * unit
                    nodes.append(w)
                    dws.append(1j * radius * unit * (2 * np.pi / sk.circle_nodes))
            self._sides[sign] = (np.concatenate(nodes) if nodes else np.empty(0, complex),
                                 np.concatenate(dws) if dws else np.empty(0, complex))

    def eval(self, j: int, taus: np.ndarray) -> np.ndarray:
        taus = np.asarray(taus, dtype=float)
        out = np.zeros(taus.shape, dtype=complex)
        for sign in (+1, -1):
            sel = taus > 0 if sign > 0 else taus < 0
            if not np.any(sel):
                continue
            w, dw = self._sides[sign]
            if len(w) == 0:
                continue
            sv = np.polyval(self._coeffs[::-1], w) * self.sk._scale
            base = (2j * np.pi * w) ** j / sv * dw
            expo = np.exp(2j * np.pi * np.outer(taus[sel], w))
            out[sel] = float(sign) * (expo @ base)
        return out


def halfspace_newton_gradm(spec, W_provider, x_axis: np.ndarray, s_nodes,
                           s_weights, t_eval) -> dict:
    """grad^m Pi(1_+ W) on (x_axis x t_eval) by horizontal partial FT.

    ``W_provider(s)`` returns {beta: values on x_axis} for the source array
    at height s > 0.  Per horizontal frequency the vertical integrals are
    analytic exponential sums (contour machinery), so the source jump at
    t = 0 never meets a grid; s-panel edges should include the evaluation
    heights (the vertical profiles are Lipschitz at tau = 0).  n = 1 only.
    """
    m = spec.m
    n = spec.n
    if n != 1 or spec.dim != 2:
        raise NotImplementedError("half-space Newton solver is wired for n = 1")
    sk = SymbolKernel(spec)
    N = len(x_axis)
    h = x_axis[1] - x_axis[0]
    thetas = np.fft.fftfreq(N, d=h)
    mis = enumerate_mi(2, m)
    # FFT of every source plane
    W_hat = {b: np.zeros((len(s_nodes), N), dtype=complex) for b in mis}
    for i, s in enumerate(s_nodes):
        plane = W_provider(float(s))
        for b in mis:
            W_hat[b][i] = np.fft.fft(np.asarray(plane[b], dtype=complex))
    t_eval = np.asarray(t_eval, dtype=float)
    out_hat = {a: np.zeros((len(t_eval), N), dtype=complex) for a in mis}
    s_nodes = np.asarray(s_nodes, dtype=float)
    s_weights = np.asarray(s_weights, dtype=float)
    A_pp = complex(spec.entry((0, m), (0, m)))
    # the nu_d = 2m vertical integral carries a delta: (2 pi i w)^{2m}/s ->
    # (-1)^m / A_pp at infinity, so I_{2m} = (-1)^m/A_pp delta + contour part;
    # the delta contributes W_perp(., t)/A_pp to the alpha = m e_d component
    W_at_eval = [W_provider(float(t)) for t in t_eval]
    perp = (0, m)
    for it in range(len(t_eval)):
        out_hat[perp][it] += np.fft.fft(
            np.asarray(W_at_eval[it][perp], dtype=complex)) / A_pp
    for ix, th in enumerate(thetas):
        if th == 0.0:
            # zero mode: the contour part vanishes (all roots at the origin);
            # the delta term above already supplies W_perp / A_pp
            continue
        prof = _VerticalProfile(sk, np.array([th]))
        taus = t_eval[:, None] - s_nodes[None, :]
        Ivals = {}
        for a in mis:
            acc = np.zeros((len(t_eval),), dtype=complex)
            for b in mis:
                nu_par = a[0] + b[0]
                nu_v = a[1] + b[1]
                if nu_v not in Ivals:
                    Ivals[nu_v] = prof.eval(nu_v, taus.ravel()).reshape(taus.shape)
                horiz = (2j * np.pi * th) ** nu_par * (-1.0) ** m
                acc += horiz * (Ivals[nu_v] * W_hat[b][:, ix][None, :]) @ s_weights
            out_hat[a][:, ix] += acc
    return {a: np.fft.ifft(out_hat[a], axis=1) for a in mis}


def newton_potential(spec, H: MIArray, tol: float = 1e-10, maxiter=None):
    """Pi^L H on the torus: <grad^m phi, A grad^m Pi H> = <grad^m phi, H>.

    H is an MIArray of GridFields over the d-torus.  Returns (potential
    GridField with zero mean, info).  The energy bound
    ||grad^m Pi H|| <= ||H|| / lambda_est is asserted post-hoc.
    """
    u, info = variational_solve(spec, H, tol=tol, maxiter=maxiter)
    lam = spec.lambda_est or garding_estimate_cached(spec)
    mis = enumerate_mi(u.dim, spec.m)
    grad_sq = 0.0
    h_sq = 0.0
    u_hat = u.fft()
    oms = omega_grids(u.shape, u.spacing)
    for z in mis:
        g = np.fft.ifftn(mi_multiplier(oms, z) * u_hat)
        grad_sq += float(np.sum(np.abs(g) ** 2))
        h_sq += float(np.sum(np.abs(np.asarray(H[z].values)) ** 2))
    bound = np.sqrt(h_sq) / lam
    if np.sqrt(grad_sq) > bound * (1 + 1e-6) + 1e-12:
        raise RuntimeError(
            f"energy bound violated: ||grad^m Pi H|| = {np.sqrt(grad_sq):.3e} "
            f"> ||H||/lambda = {bound:.3e}")
    info["energy_ratio"] = float(np.sqrt(grad_sq) / max(np.sqrt(h_sq), 1e-300))
    return u, info


def garding_estimate_cached(spec):
    from .elliptic import garding_estimate
    if spec.lambda_est is None:
        spec.lambda_est = garding_estimate(spec).lambda_est
    return spec.lambda_est


def newton_symmetry_check(spec, G: MIArray, H: MIArray, tol: float = 1e-10) -> float:
    """|<G, grad^m Pi^L H> - <grad^m Pi^{L*} G, H>| / (||G|| ||H||)."""
    from .elliptic import adjoint

    uH, _ = variational_solve(spec, H, tol=tol)
    uG, _ = variational_solve(adjoint(spec), G, tol=tol)
    mis = enumerate_mi(uH.dim, spec.m)
    oms = omega_grids(uH.shape, uH.spacing)
    uH_hat, uG_hat = uH.fft(), uG.fft()
    lhs = 0.0 + 0.0j
    rhs = 0.0 + 0.0j
    gn = hn = 0.0
    for z in mis:
        gH = np.fft.ifftn(mi_multiplier(oms, z) * uH_hat)
        gG = np.fft.ifftn(mi_multiplier(oms, z) * uG_hat)
        lhs += np.sum(np.conj(G[z].values) * gH)
        rhs += np.sum(np.conj(gG) * np.asarray(H[z].values))
        gn += float(np.sum(np.abs(G[z].values) ** 2))
        hn += float(np.sum(np.abs(H[z].values) ** 2))
    denom = np.sqrt(gn) * np.sqrt(hn)
    return float(abs(lhs - rhs) / max(denom, 1e-300))


def slice_bound_measure(K: KernelEvaluator, Q, j: int, orders, t: float,
                        x_order: int = 6, y_order: int = 8, refine: int = 1):
    """int_Q int_{A_j(Q)} |grad-stack of E(x,t,y,0)|^2 dy dx.

    ``orders`` = (q, s, k, i) selects the integrand
    |grad_{x,t}^{m-q} grad_{y,s}^{m-s} d_t^k d_s^i E|^2 summed over the
    gradient arrays.  Pre: j >= 1 or l(Q) <= |t|, and the stacks must be
    admissible.  A refinement-doubling check flags non-convergent values.
    """
    q, s, k, i = orders
    m, d = K.m, K.d
    n = d - 1
    if not (j >= 1 or Q.side <= abs(t)):
        raise ValueError("need j >= 1 or l(Q) <= |t|")
    stacks = []
    for zp in enumerate_mi(d, m - q):
        for xp in enumerate_mi(d, m - s):
            zeta = tuple(a + (k if ax == d - 1 else 0) for ax, a in enumerate(zp))
            xi = tuple(a + (i if ax == d - 1 else 0) for ax, a in enumerate(xp))
            stacks.append(K.stack(zeta, xi))

    def compute(xo, yo):
        # x in Q: tensor Gauss; y in A_j(Q): annular panels
        lo = np.asarray(Q.anchor)
        hi = lo + Q.side
        xs, ws = [], []
        for ax in range(n):
            g, w = gauss_panel(lo[ax], hi[ax], xo)
            xs.append(g)
            ws.append(w)
        if n == 1:
            xpts = xs[0][:, None]
            xw = ws[0]
        else:
            X1, X2 = np.meshgrid(xs[0], xs[1], indexing="ij")
            xpts = np.column_stack([X1.ravel(), X2.ravel()])
            xw = np.outer(ws[0], ws[1]).ravel()
        from .quadrature import annulus_nodes_1d, annulus_nodes_2d
        c = Q.center
        r_in = 0.5 * Q.side * 2 ** j if j >= 1 else 0.0
        r_out = 0.5 * Q.side * 2 ** (j + 1)
        if j == 0:
            from .quadrature import radial_nodes
            ypts, yw = radial_nodes(n, c, r_out / 4, r_out, order=yo)
        elif n == 1:
            y, yw = annulus_nodes_1d(c[0], r_in, r_out, order=yo, panels_per_side=3)
            ypts = y[:, None]
        else:
            ypts, yw = annulus_nodes_2d(c, r_in, r_out, order=yo)
        dz = np.empty((len(xpts), len(ypts), d))
        dz[..., :n] = xpts[:, None, :] - ypts[None, :, :]
        dz[..., n] = t
        total = np.zeros((len(xpts), len(ypts)))
        for st in stacks:
            total += np.abs(st(dz)) ** 2
        return float(np.einsum("i,ij,j->", xw, total, yw))

    val = compute(x_order, y_order)
    val2 = compute(x_order + 2 * refine, y_order + 2 * refine)
    flag = abs(val - val2) > 1e-3 * max(abs(val2), 1e-300)
    return {"value": val2, "coarse": val, "converged": not flag,
            "rel_change": abs(val - val2) / max(abs(val2), 1e-300)}


def export_samples(path, K: KernelEvaluator, rows):
    """CSV regression table: X, Y, derivative orders, kernel value."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{i}" for i in range(K.d)] + [f"y{i}" for i in range(K.d)]
                   + ["zeta", "xi", "re", "im"])
        for (zeta, xi, X, Y) in rows:
            v = complex(np.atleast_1d(K.evaluate(zeta, xi, np.asarray(X)[None, :],
                                                 np.asarray(Y)[None, :]))[0])
            w.writerow(list(X) + list(Y) + ["".join(map(str, zeta)),
                                            "".join(map(str, xi)), v.real, v.imag])
