"""Exact mixed partial derivatives of radial profiles r^p and r^p log r.

A profile is G(u) with u = |z|^2, of the form u^a (c_pow + c_log * log u).
Any iterated partial derivative of G(|z|^2) is a finite sum of terms
c * z^mu * G^{(j)}(u); differentiation acts on the (c, mu, j) triples by

    d_i [c z^mu G^(j)] = c mu_i z^{mu - e_i} G^(j) + 2 c z^{mu + e_i} G^(j+1)

with exact integer/Fraction bookkeeping, so kernel stacks of any order are
evaluated in closed form away from z = 0.

The polyharmonic constants come from the radial anti-Laplacian recursion
starting at the Laplace fundamental solution; see ``polyharmonic_profile``.
"""

from __future__ import annotations

from fractions import Fraction
from math import gamma, pi

import numpy as np

__all__ = ["RadialProfile", "DerivativeStack", "polyharmonic_profile"]


class RadialProfile:
    """G(u) = u^a (c_pow + c_log * ln u), with exact derivative chain.

    G'(u) = u^{a-1} ((a c_pow + c_log) + a c_log ln u), so repeated
    differentiation stays inside the two-dimensional module.
    """

    def __init__(self, a: Fraction, c_pow, c_log=0):
        self.a = Fraction(a)
        self.c_pow = c_pow
        self.c_log = c_log

    def derivative_chain(self, jmax: int):
        """[(a_j, c_pow_j, c_log_j) for j = 0..jmax] for G^{(j)}."""
        out = [(self.a, self.c_pow, self.c_log)]
        a, cp, cl = self.a, self.c_pow, self.c_log
        for _ in range(jmax):
            cp, cl, a = a * cp + cl, a * cl, a - 1
            out.append((a, cp, cl))
        return out


class DerivativeStack:
    """d^nu applied to G(|z|^2): a frozen (coeff, mu, j) term expansion."""

    def __init__(self, nu, profile: RadialProfile):
        self.nu = tuple(int(v) for v in nu)
        self.d = len(self.nu)
        self.profile = profile
        terms = {((0,) * self.d, 0): Fraction(1)}
        for axis, count in enumerate(self.nu):
            for _ in range(count):
                new = {}
                for (mu, j), c in terms.items():
                    if mu[axis] > 0:
                        key = (tuple(m - (1 if i == axis else 0) for i, m in enumerate(mu)), j)
                        new[key] = new.get(key, Fraction(0)) + c * mu[axis]
                    key = (tuple(m + (1 if i == axis else 0) for i, m in enumerate(mu)), j + 1)
                    new[key] = new.get(key, Fraction(0)) + 2 * c
                terms = new
        self.terms = terms
        jmax = max(j for (_, j) in terms)
        self._chain = profile.derivative_chain(jmax)
        # flatten for vectorized evaluation
        self._mus = np.array([mu for (mu, _) in terms], dtype=float)
        self._js = np.array([j for (_, j) in terms], dtype=int)
        self._cs = np.array([float(c) for c in terms.values()])

    def __call__(self, z: np.ndarray) -> np.ndarray:
        """Evaluate at points z of shape (..., d); z = 0 raises."""
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.d:
            raise ValueError(f"points must have last dim {self.d}")
        u = np.sum(z * z, axis=-1)
        if np.any(u == 0.0):
            raise ZeroDivisionError("kernel stack evaluated on the diagonal")
        logu = np.log(u)
        out = np.zeros(u.shape, dtype=float)
        for (a, cp, cl), sel in self._group_by_j():
            gj = u ** float(a) * (float(cp) + float(cl) * logu) if cl else \
                float(cp) * u ** float(a)
            mono = np.zeros(u.shape)
            for idx in sel:
                mu = self._mus[idx]
                term = self._cs[idx] * np.ones(u.shape)
                for ax in range(self.d):
                    if mu[ax]:
                        term = term * z[..., ax] ** mu[ax]
                mono += term
            out += mono * gj
        return out

    def _group_by_j(self):
        for j in np.unique(self._js):
            yield self._chain[j], np.nonzero(self._js == j)[0]

    @property
    def order(self) -> int:
        return sum(self.nu)


def polyharmonic_profile(m: int, d: int):
    """Profile of E^L for L = (-Delta)^m in R^d, plus branch metadata.

    N_m (fundamental solution of Delta^m) is built by the radial recursion
    Delta(A' r^q + B' r^q ln r) = A r^{q-2} + B r^{q-2} ln r with
        B' q(q+d-2) = B,   A' q(q+d-2) + B'(2q+d-2) = A,
    starting from N_1 = -r^{2-d}/((d-2) sigma_{d-1}) for d >= 3 and
    N_1 = ln(r)/(2 pi) for d = 2.  Then E = (-1)^m N_m.

    Returns (RadialProfile in u = r^2, power p = 2m-d, log_branch flag).
    """
    if d < 2:
        raise ValueError("dimension must be >= 2")
    if m < 1:
        raise ValueError("m must be >= 1")
    if d == 2:
        A, B = 0.0, 1.0 / (2 * pi)
        p = 0
    else:
        sigma = 2 * pi ** (d / 2) / gamma(d / 2)
        A, B = -1.0 / ((d - 2) * sigma), 0.0
        p = 2 - d
    for _ in range(m - 1):
        q = p + 2
        denom = q * (q + d - 2)
        if denom == 0:
            raise ValueError(f"radial recursion degenerate at q={q}, d={d}")
        Bn = B / denom
        An = (A - Bn * (2 * q + d - 2)) / denom
        A, B, p = An, Bn, q
    sign = (-1.0) ** m
    # r^p = u^{p/2}; r^p ln r = u^{p/2} (1/2) ln u
    prof = RadialProfile(Fraction(p, 2), sign * A, sign * B / 2.0)
    return prof, p, B != 0.0
