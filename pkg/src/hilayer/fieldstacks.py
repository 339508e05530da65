"""Analytic fields with derivative stacks.

Layer-potential quadratures need source fields whose mixed partials of any
relevant order are evaluable at arbitrary points; sampled slabs are too
lossy for that.  Everything here exposes

    field.eval_stack(zeta, pts)   # pts shape (..., d), zeta in N^d

with d = n + 1.  Implementations: Gaussian bump sums, kernel-pole fields
(derivatives of a fundamental solution anchored at a pole), the Lemma-3.3
mollifier extension of Whitney data, vertical cutoffs, products with
separable profiles, and polynomial fields.
"""

from __future__ import annotations

import math

import numpy as np

from .mindex import mi_factorial
from .quadrature import MomentBump

__all__ = [
    "GaussianBumps", "KernelPole", "MollifierExtension", "VerticalCutoff",
    "LinearCombination", "MonomialField", "SeparableField", "Piecewise1D",
    "smoothstep_profile",
]


class StackFieldBase:
    def eval_stack(self, zeta, pts) -> np.ndarray:
        raise NotImplementedError

    def __sub__(self, other):
        return LinearCombination([(1.0, self), (-1.0, other)])

    def __add__(self, other):
        return LinearCombination([(1.0, self), (1.0, other)])

    def __mul__(self, c):
        return LinearCombination([(complex(c), self)])

    __rmul__ = __mul__


class LinearCombination(StackFieldBase):
    def __init__(self, terms):
        self.terms = list(terms)

    def eval_stack(self, zeta, pts):
        out = None
        for c, f in self.terms:
            v = c * f.eval_stack(zeta, pts)
            out = v if out is None else out + v
        return out


class GaussianBumps(StackFieldBase):
    """sum_i amp_i exp(-|x - c_i|^2 / (2 w_i^2)) with exact derivatives.

    Derivatives are separable products of 1D Hermite-type factors
    d^k exp(-u^2/2w^2) = (-1/w)^k He_k(u/w) exp(-u^2/2w^2) with the
    probabilists' Hermite polynomials He_k.
    """

    def __init__(self, centers, widths, amps):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.widths = np.asarray(widths, dtype=float)
        self.amps = np.asarray(amps, dtype=complex)
        self.d = self.centers.shape[1]

    @staticmethod
    def _hermite(k: int, u: np.ndarray) -> np.ndarray:
        if k == 0:
            return np.ones_like(u)
        hm, h = np.ones_like(u), u.copy()
        for i in range(1, k):
            hm, h = h, u * h - i * hm
        return h

    def eval_stack(self, zeta, pts):
        pts = np.asarray(pts, dtype=float)
        zeta = tuple(zeta)
        out = np.zeros(pts.shape[:-1], dtype=complex)
        for c, w, a in zip(self.centers, self.widths, self.amps):
            u = (pts - c) / w
            val = np.full(pts.shape[:-1], a, dtype=complex)
            for ax, k in enumerate(zeta):
                ui = u[..., ax]
                val = val * np.exp(-0.5 * ui * ui)
                if k:
                    val = val * self._hermite(k, ui) * (-1.0 / w) ** k
            out += val
        return out


class KernelPole(StackFieldBase):
    """F(X) = d_Y^xi E(X, Y0) for a fixed pole Y0 (e.g. the probe fields F_s).

    Uses the kernel's concrete normalization (evaluate_any): probe fields
    only enter through admissible-order derivative pairings, where the
    normalization ambiguity cancels.
    """

    def __init__(self, K, xi, pole):
        self.K = K
        self.xi = tuple(xi)
        self.pole = np.asarray(pole, dtype=float)
        self.d = len(self.pole)

    def eval_stack(self, zeta, pts):
        pts = np.asarray(pts, dtype=float)
        stack = self.K._stack_any(tuple(zeta), self.xi)
        return np.asarray(stack(pts - self.pole), dtype=complex)


class MollifierExtension(StackFieldBase):
    """H(x, t) = sum_j (t^j / j!) (f_j * eta_t)(x): the Lemma-3.3 extension.

    ``f_callables`` supplies f_j and its horizontal derivatives:
    f_callables(j, zeta_par, x_pts) for zeta_par in N^n.  The mollifier is
    a MomentBump with moments vanishing through order m-1; its discrete
    node weights carry exact moments, so the cone-vanishing property of
    the lemma holds pointwise on the quadrature.

    Internally each derivative stack is a finite set of terms
    c * t^p * sum_k w_k y_k^mu (d^zeta f_j)(x - t y_k).
    """

    def __init__(self, m: int, n: int, f_callables, mollifier: MomentBump | None = None,
                 support_radius: float = 1.0):
        self.m = int(m)
        self.n = int(n)
        self.d = self.n + 1
        self.f = f_callables
        self.mollifier = mollifier or MomentBump(n, vanish_through=max(m - 1, 0),
                                                 radius=support_radius)
        nodes, weights, resid = self.mollifier.nodes()
        if resid > 1e-12:
            raise ValueError(f"mollifier moment residual {resid:.2e} exceeds 1e-12")
        self.nodes = nodes            # (K, n)
        self.weights = weights        # (K,)
        self._stack_cache = {}

    def _terms(self, zeta):
        zeta = tuple(zeta)
        if zeta in self._stack_cache:
            return self._stack_cache[zeta]
        # term: (coeff, j, p, zeta_par (len n), mu (len n))
        terms = {}
        for j in range(self.m):
            key = (j, j, (0,) * self.n, (0,) * self.n)
            terms[key] = terms.get(key, 0.0) + 1.0 / math.factorial(j)

        def d_horizontal(terms, ax):
            new = {}
            for (j, p, zp, mu), c in terms.items():
                zp2 = tuple(v + (1 if i == ax else 0) for i, v in enumerate(zp))
                new[(j, p, zp2, mu)] = new.get((j, p, zp2, mu), 0.0) + c
            return new

        def d_vertical(terms):
            new = {}
            for (j, p, zp, mu), c in terms.items():
                if p > 0:
                    key = (j, p - 1, zp, mu)
                    new[key] = new.get(key, 0.0) + c * p
                for ax in range(self.n):
                    zp2 = tuple(v + (1 if i == ax else 0) for i, v in enumerate(zp))
                    mu2 = tuple(v + (1 if i == ax else 0) for i, v in enumerate(mu))
                    key = (j, p, zp2, mu2)
                    new[key] = new.get(key, 0.0) - c
            return new

        for ax in range(self.n):
            for _ in range(zeta[ax]):
                terms = d_horizontal(terms, ax)
        for _ in range(zeta[self.n]):
            terms = d_vertical(terms)
        self._stack_cache[zeta] = terms
        return terms

    def eval_stack(self, zeta, pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, self.d)
        x, t = flat[:, :self.n], flat[:, self.n]
        # x - t y_k: shape (P, K, n)
        shifted = x[:, None, :] - t[:, None, None] * self.nodes[None, :, :]
        shifted_flat = shifted.reshape(-1, self.n)
        out = np.zeros(len(flat), dtype=complex)
        fcache = {}
        for (j, p, zp, mu), c in self._terms(zeta).items():
            if (j, zp) not in fcache:
                fcache[(j, zp)] = self.f(j, zp, shifted_flat).reshape(len(flat), -1)
            fv = fcache[(j, zp)]
            wmu = self.weights.copy()
            for ax in range(self.n):
                if mu[ax]:
                    wmu = wmu * self.nodes[:, ax] ** mu[ax]
            out += c * (t ** p) * (fv @ wmu)
        return out.reshape(pts.shape[:-1])


class VerticalCutoff(StackFieldBase):
    """eta(t) * F with a 1D profile; Leibniz in the vertical slot only."""

    def __init__(self, field, profile: "Piecewise1D"):
        self.field = field
        self.profile = profile

    def eval_stack(self, zeta, pts):
        zeta = tuple(zeta)
        pts = np.asarray(pts, dtype=float)
        t = pts[..., -1]
        kv = zeta[-1]
        out = np.zeros(pts.shape[:-1], dtype=complex)
        for i in range(kv + 1):
            eta_i = self.profile.derivative(i, t)
            if not np.any(eta_i):
                continue
            z2 = zeta[:-1] + (kv - i,)
            out += math.comb(kv, i) * eta_i * self.field.eval_stack(z2, pts)
        return out


class MonomialField(StackFieldBase):
    """X^beta / beta!  (so that grad^m of it is the unit array e_beta)."""

    def __init__(self, beta):
        self.beta = tuple(beta)
        self.d = len(self.beta)

    def eval_stack(self, zeta, pts):
        pts = np.asarray(pts, dtype=float)
        zeta = tuple(zeta)
        out = np.ones(pts.shape[:-1], dtype=complex) / mi_factorial(self.beta)
        for ax, (b, z) in enumerate(zip(self.beta, zeta)):
            if z > b:
                return np.zeros(pts.shape[:-1], dtype=complex)
            c = math.factorial(b) // math.factorial(b - z)
            out = out * c * pts[..., ax] ** (b - z)
        return out


class SeparableField(StackFieldBase):
    """prod_i f_i(x_i) * g(t) with 1D factors supplying derivative(k, x)."""

    def __init__(self, x_factors, t_factor):
        self.x_factors = list(x_factors)
        self.t_factor = t_factor

    def eval_stack(self, zeta, pts):
        pts = np.asarray(pts, dtype=float)
        zeta = tuple(zeta)
        out = np.ones(pts.shape[:-1], dtype=complex)
        for ax, f in enumerate(self.x_factors):
            out = out * f.derivative(zeta[ax], pts[..., ax])
        out = out * self.t_factor.derivative(zeta[-1], pts[..., -1])
        return out


def _smoothstep_coeffs():
    # 7th order smoothstep: S(0)=0, S(1)=1, S', S'', S''' vanish at both ends
    return np.array([0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0])


class Piecewise1D:
    """C^3 piecewise-polynomial profile with vectorized derivatives.

    Built from breakpoints and values; between consecutive breakpoints the
    profile ramps with the 7th-order smoothstep.  Outside the range it is
    constant (first/last value).
    """

    def __init__(self, breaks, values):
        self.breaks = np.asarray(breaks, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.breaks) != len(self.values):
            raise ValueError("breaks and values must align")
        c = _smoothstep_coeffs()
        self._polys = [np.polynomial.Polynomial(c)]
        for _ in range(8):
            self._polys.append(self._polys[-1].deriv())

    def derivative(self, k: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        if k == 0:
            out += np.where(x < self.breaks[0], self.values[0], 0.0)
            out += np.where(x >= self.breaks[-1], self.values[-1], 0.0)
        for i in range(len(self.breaks) - 1):
            a, b = self.breaks[i], self.breaks[i + 1]
            va, vb = self.values[i], self.values[i + 1]
            sel = (x >= a) & (x < b)
            if not np.any(sel):
                continue
            u = (x[sel] - a) / (b - a)
            if k == 0:
                out[sel] = va + (vb - va) * self._polys[0](u)
            else:
                out[sel] = (vb - va) * self._polys[k](u) / (b - a) ** k
        return out

    def max_slope(self, samples: int = 4000) -> float:
        xs = np.linspace(self.breaks[0], self.breaks[-1], samples)
        return float(np.max(np.abs(self.derivative(1, xs))))


def smoothstep_profile(one_until: float, zero_from: float, floor_at=None,
                       floor_value: float = 0.0) -> Piecewise1D:
    """Even profile of |x|: 1 on [0, one_until], 0 beyond zero_from.

    With ``floor_at`` the ramp passes through floor_value at that radius
    (used for phi_Q >= omega on Q).  Returns the profile of r = |x|; wrap
    with EvenRadial for use as a 1D factor.
    """
    if floor_at is None:
        return Piecewise1D([one_until, zero_from], [1.0, 0.0])
    return Piecewise1D([one_until, floor_at, zero_from], [1.0, floor_value, 0.0])


class EvenRadial:
    """1D factor f(x) = profile(|x - center|) with derivatives via chain rule."""

    def __init__(self, profile: Piecewise1D, center: float = 0.0):
        self.profile = profile
        self.center = float(center)

    def derivative(self, k: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = x - self.center
        sign = np.where(u >= 0, 1.0, -1.0)
        return self.profile.derivative(k, np.abs(u)) * sign ** (k % 2)


class PolyTimesFactor:
    """1D factor ((x - c)^p / p!) * g(x) by the Leibniz rule."""

    def __init__(self, p: int, center: float, g):
        self.p = int(p)
        self.center = float(center)
        self.g = g

    def derivative(self, k: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x, dtype=float)
        for i in range(min(k, self.p) + 1):
            mono = (x - self.center) ** (self.p - i) / math.factorial(self.p - i)
            out = out + math.comb(k, i) * mono * np.asarray(self.g.derivative(k - i, x))
        return out


class ConstantFactor:
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def derivative(self, k: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.full_like(x, self.value) if k == 0 else np.zeros_like(x)
