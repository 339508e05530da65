"""Coefficient tensors, ellipticity verification, adjoints, order lifting.

An OperatorSpec holds the tensor A_{ab} (|a| = |b| = m) of a 2m-th order
divergence-form operator in n+1 variables with t-independent coefficients.
Entries are complex scalars or GridFields over the horizontal torus.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import GridField
from .mindex import enumerate_mi, mi_factorial, laplacian_power_coeffs, unit_mi
from .spectral import omega_grids, mi_multiplier, constant_symbol

__all__ = [
    "OperatorSpec", "EllipticityReport", "NonElliptic",
    "polyharmonic_spec", "perturbed_polyharmonic_spec", "garding_estimate",
    "adjoint", "horizontal_part", "lift_order", "psi_forward",
    "recover_from_lift", "spec_from_config",
]


class NonElliptic(ValueError):
    """Garding estimate failed; carries the offending direction/test."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


@dataclass
class EllipticityReport:
    lambda_est: float
    Lambda_est: float
    method: str
    samples: int
    witness: object = None

    def check(self):
        if not (self.lambda_est <= self.Lambda_est):
            raise ValueError("lambda_est must not exceed Lambda_est")


class OperatorSpec:
    """Order-2m divergence-form operator with t-independent coefficients.

    coeffs maps (alpha, beta) with |alpha| = |beta| = m (multiindices of
    length dim) to complex scalars or GridFields sampled over the
    horizontal torus (t-independence is structural: fields have rank n).
    Missing pairs are zero.  Immutable by convention.
    """

    def __init__(self, m: int, n: int, coeffs: dict, lambda_est=None,
                 Lambda_est=None, dim=None):
        self.m = int(m)
        self.n = int(n)
        self.dim = int(dim) if dim is not None else self.n + 1
        self.indices = enumerate_mi(self.dim, self.m)
        index_set = set(self.indices)
        for (a, b) in coeffs:
            if tuple(a) not in index_set or tuple(b) not in index_set:
                raise ValueError(f"bad index pair {(a, b)} for m={m}, dim={self.dim}")
        self.coeffs = {(tuple(a), tuple(b)): v for (a, b), v in coeffs.items()}
        self.lambda_est = lambda_est
        self.Lambda_est = Lambda_est if Lambda_est is not None else self.sup_norm()
        self._dense = None

    # -- structure ---------------------------------------------------------
    @property
    def is_constant(self) -> bool:
        return not any(isinstance(v, (GridField, np.ndarray))
                       for v in self.coeffs.values())

    @property
    def q(self) -> int:
        return len(self.indices)

    def entry(self, a, b):
        return self.coeffs.get((tuple(a), tuple(b)), 0.0)

    def sup_norm(self) -> float:
        out = 0.0
        for v in self.coeffs.values():
            if isinstance(v, GridField):
                out = max(out, float(np.max(np.abs(v.values))))
            else:
                out = max(out, abs(complex(v)))
        return out

    def dense(self) -> np.ndarray:
        """(q, q) complex matrix, or (q, q, *grid) for variable coefficients."""
        if self._dense is not None:
            return self._dense
        if self.is_constant:
            A = np.zeros((self.q, self.q), dtype=complex)
            for (a, b), v in self.coeffs.items():
                A[self.indices.index(a), self.indices.index(b)] = complex(v)
        else:
            shape = None
            for v in self.coeffs.values():
                if isinstance(v, GridField):
                    shape = v.shape
                    break
            A = np.zeros((self.q, self.q) + shape, dtype=complex)
            for (a, b), v in self.coeffs.items():
                payload = v.values if isinstance(v, GridField) else complex(v)
                A[self.indices.index(a), self.indices.index(b)] = payload
        self._dense = A
        return A

    def apply_tensor(self, arrays: dict) -> dict:
        """(A F)_a = sum_b A_ab F_b on dict payloads keyed by multiindex."""
        out = {}
        for a in self.indices:
            acc = None
            for b in self.indices:
                c = self.entry(a, b)
                if isinstance(c, GridField):
                    c = c.values
                elif c == 0:
                    continue
                term = c * np.asarray(arrays[b])
                acc = term if acc is None else acc + term
            out[a] = acc if acc is not None else 0.0 * np.asarray(arrays[a])
        return out

    def __repr__(self):
        kind = "constant" if self.is_constant else "variable"
        return f"OperatorSpec(order={2 * self.m}, n={self.n}, {kind}, q={self.q})"


def polyharmonic_spec(m: int, n: int, dim=None) -> OperatorSpec:
    """Diagonal tensor A_ab = (m!/a!) delta_ab, so the form has symbol |2 pi w|^{2m}."""
    if m < 1 or n < 1:
        raise ValueError("need m >= 1 and n >= 1")
    d = dim if dim is not None else n + 1
    fm = math.factorial(m)
    coeffs = {(a, a): fm / mi_factorial(a) for a in enumerate_mi(d, m)}
    spec = OperatorSpec(m, n, coeffs, dim=d)
    spec.lambda_est = garding_estimate(spec).lambda_est
    return spec


def perturbed_polyharmonic_spec(m: int, n: int, amplitude: float, seed: int = 0,
                                grid_shape=None, box=2.0) -> OperatorSpec:
    """Polyharmonic plus a smooth Hermitian t-independent perturbation.

    The perturbation is a few low-frequency cosine modes per index pair,
    scaled by ``amplitude``; for small amplitude the Garding bound stays
    positive (verified by the stochastic estimate, not assumed).
    """
    d = n + 1
    base = polyharmonic_spec(m, n)
    if grid_shape is None:
        grid_shape = (64,) * n
    spacing = tuple(box / N for N in grid_shape)
    rng = np.random.default_rng(seed)
    axes = [np.arange(N) * h for N, h in zip(grid_shape, spacing)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coeffs = {}
    mis = enumerate_mi(d, m)
    for i, a in enumerate(mis):
        for j in range(i, len(mis)):
            b = mis[j]
            wave = np.zeros(grid_shape)
            for _ in range(2):
                k = rng.integers(1, 3, size=n)
                phase = rng.uniform(0, 2 * np.pi)
                amp = rng.uniform(0.3, 1.0)
                wave = wave + amp * np.cos(sum(2 * np.pi * k[ax] * mesh[ax] / box
                                               for ax in range(n)) + phase)
            pert = amplitude * wave / 2.0
            fa = GridField(base.entry(a, b) + pert, spacing)
            coeffs[(a, b)] = fa
            if j != i:
                coeffs[(b, a)] = GridField(np.conj(fa.values), spacing)
    return OperatorSpec(m, n, coeffs)


def _sphere_points(d: int, count: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = np.linspace(0, np.pi, count, endpoint=False)  # antipodal symmetry
        return np.column_stack([np.cos(th), np.sin(th)])
    # Fibonacci sphere
    i = np.arange(count) + 0.5
    phi = np.arccos(1 - 2 * i / count)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.column_stack([np.sin(phi) * np.cos(theta),
                            np.sin(phi) * np.sin(theta), np.cos(phi)])


def _symbol_quotient(spec: OperatorSpec, omega: np.ndarray):
    """(Re sum A_ab w^{a+b}) / sum_a w^{2a} for real directions w (rows)."""
    mis = spec.indices
    mono = np.stack([np.prod(omega ** np.array(z), axis=1) for z in mis])
    A = spec.dense()
    num = np.real(np.einsum("ip,ij,jp->p", mono, A, mono))
    den = np.sum(mono ** 2, axis=0)
    return num / den


def garding_estimate(spec: OperatorSpec, trials: int = 64, seed: int = 0,
                     grid_shape=None) -> EllipticityReport:
    """lambda_est / Lambda_est for the Garding inequality.

    Constant coefficients: exact minimization of the symbol quotient over
    the unit sphere (dense directional scan plus local polish).  Variable
    coefficients: infimum of the Rayleigh quotient over random band-limited
    test functions; an estimate, not a certificate.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    Lambda = spec.sup_norm()
    if spec.is_constant:
        pts = _sphere_points(spec.dim, 720 if spec.dim == 2 else 4000)
        vals = _symbol_quotient(spec, pts)
        i0 = int(np.argmin(vals))
        w0, v0 = pts[i0], vals[i0]
        # local polish with a small pattern search on the sphere
        step = 0.05
        while step > 1e-7:
            improved = False
            for ax in range(spec.dim):
                for s in (+step, -step):
                    w = w0.copy()
                    w[ax] += s
                    w /= np.linalg.norm(w)
                    v = _symbol_quotient(spec, w[None, :])[0]
                    if v < v0:
                        w0, v0, improved = w, v, True
            if not improved:
                step /= 2
        report = EllipticityReport(float(v0), float(Lambda), "symbol-minimization",
                                   len(pts), witness=tuple(w0))
        if v0 <= 0:
            raise NonElliptic(f"symbol quotient min {v0:.3e} <= 0 at {tuple(w0)}",
                              witness=tuple(w0))
        report.check()
        return report

    # stochastic Rayleigh quotient on the torus (per-trial independent seeds)
    for v in spec.coeffs.values():
        if isinstance(v, GridField):
            shape, spacing = v.shape, v.spacing
            break
    d = spec.dim
    # coefficients live on the n-torus; test fields live on the d-torus
    full_shape = shape + (max(16, shape[0] // 2),) if len(shape) == spec.n else shape
    full_spacing = spacing + (spacing[0],) if len(shape) == spec.n else spacing
    mis = spec.indices
    oms = omega_grids(full_shape, full_spacing)
    seeds = np.random.SeedSequence(seed).spawn(trials)
    best = np.inf
    witness = None
    A = spec.dense()
    for sq in seeds:
        rng = np.random.default_rng(sq)
        hat = np.zeros(full_shape, dtype=complex)
        kmax = 4
        for _ in range(6):
            k = tuple(int(v) for v in rng.integers(-kmax, kmax + 1, size=d))
            hat[k] = rng.normal() + 1j * rng.normal()
        phi = np.fft.ifftn(hat)
        grads = [np.fft.ifftn(mi_multiplier(oms, z) * np.fft.fftn(phi)) for z in mis]
        num = 0.0
        den = 0.0
        for i in range(len(mis)):
            acc = np.zeros(full_shape, dtype=complex)
            for j in range(len(mis)):
                Aij = A[i, j]
                acc += (Aij[..., None] if np.ndim(Aij) == spec.n else Aij) * grads[j]
            num += np.real(np.sum(np.conj(grads[i]) * acc))
            den += np.real(np.sum(np.abs(grads[i]) ** 2))
        quot = num / den
        if quot < best:
            best, witness = quot, {"seed": sq.entropy, "spawn_key": sq.spawn_key}
    report = EllipticityReport(float(best), float(Lambda), "stochastic-test",
                               trials, witness=witness)
    if best <= 0:
        raise NonElliptic(f"Rayleigh quotient min {best:.3e} <= 0", witness=witness)
    report.check()
    return report


def adjoint(spec: OperatorSpec) -> OperatorSpec:
    """A*_ab = conj(A_ba); involutive."""
    coeffs = {}
    for (a, b), v in spec.coeffs.items():
        cv = GridField(np.conj(v.values), v.spacing, v.origin) if isinstance(v, GridField) \
            else np.conj(complex(v))
        coeffs[(b, a)] = cv
    return OperatorSpec(spec.m, spec.n, coeffs, lambda_est=spec.lambda_est,
                        Lambda_est=spec.Lambda_est, dim=spec.dim)


def horizontal_part(spec: OperatorSpec) -> OperatorSpec:
    """Restriction to index pairs with a_d = b_d = 0, as an operator on R^n."""
    coeffs = {}
    for (a, b), v in spec.coeffs.items():
        if a[-1] == 0 and b[-1] == 0:
            coeffs[(a[:-1], b[:-1])] = v
    return OperatorSpec(spec.m, spec.n, coeffs, dim=spec.n)


def lift_order(spec: OperatorSpec, M: int) -> OperatorSpec:
    """Coefficients of Delta^M L Delta^M: order 2m + 4M.

    A~_{de} = sum_{a+2z=d, b+2x=e} a_z a_x A_{ab}; ellipticity is
    recomputed, not assumed.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    d = spec.dim
    a_coeffs = laplacian_power_coeffs(M, d)
    coeffs = {}
    for (a, b), v in spec.coeffs.items():
        for z, az in a_coeffs.items():
            for x, ax in a_coeffs.items():
                delta = tuple(ai + 2 * zi for ai, zi in zip(a, z))
                eps = tuple(bi + 2 * xi for bi, xi in zip(b, x))
                key = (delta, eps)
                prev = coeffs.get(key, 0.0)
                if isinstance(v, GridField):
                    add = GridField((az * ax) * v.values, v.spacing, v.origin)
                    coeffs[key] = add if np.isscalar(prev) and prev == 0.0 else \
                        GridField(prev.values + add.values, v.spacing, v.origin)
                else:
                    coeffs[key] = prev + az * ax * v
    lifted = OperatorSpec(spec.m + 2 * M, spec.n, coeffs, dim=d)
    if lifted.is_constant and coeffs:
        try:
            lifted.lambda_est = garding_estimate(lifted).lambda_est
        except NonElliptic:
            lifted.lambda_est = None  # caller may still use the algebra
    return lifted


def psi_forward(F: dict, M: int, n: int, m: int) -> dict:
    """Psi(F)_e = sum_{|x|=M, 2x <= e componentwise} a_x F_{e-2x}.

    F is keyed by multiindices of length d = n+1 with |a| = m; the result
    is keyed by |e| = m + 2M.  (Strictness of 2x < e is automatic since
    |e - 2x| = m >= 1.)
    """
    d = n + 1
    a_coeffs = laplacian_power_coeffs(M, d)
    out = {}
    for e in enumerate_mi(d, m + 2 * M):
        acc = 0.0
        for x, ax in a_coeffs.items():
            rem = tuple(ei - 2 * xi for ei, xi in zip(e, x))
            if all(r >= 0 for r in rem):
                acc = acc + ax * F.get(rem, 0.0)
        out[e] = acc
    return out


def recover_from_lift(B: dict, M: int, n: int, m: int, tol: float = 1e-9):
    """Invert Psi by staged elimination; returns (F, consistency_residual).

    Each F_a is read off from the component e = a + 2M e_{j0}, j0 the
    largest slot of a: every interfering index there has strictly larger
    maximal entry, so processing indices by decreasing max-entry is
    well-founded.  The unused components of B give an overdetermined
    consistency check whose relative residual is returned.
    """
    d = n + 1
    a_coeffs = laplacian_power_coeffs(M, d)
    order = sorted(enumerate_mi(d, m), key=lambda z: -max(z))
    F = {}
    for a in order:
        j0 = int(np.argmax(a))
        e = tuple(ai + (2 * M if i == j0 else 0) for i, ai in enumerate(a))
        acc = B[e]
        direct = None
        for x, ax in a_coeffs.items():
            rem = tuple(ei - 2 * xi for ei, xi in zip(e, x))
            if any(r < 0 for r in rem):
                continue
            if rem == a:
                direct = ax
                continue
            if rem not in F:
                raise RuntimeError(f"elimination order broken at {a} <- {rem}")
            acc = acc - ax * F[rem]
        F[a] = acc / direct
    # overdetermined consistency
    recon = psi_forward(F, M, n, m)
    num = 0.0
    den = 0.0
    for e, v in recon.items():
        num += abs(v - B.get(e, 0.0)) ** 2
        den += abs(B.get(e, 0.0)) ** 2
    residual = float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))
    if residual > tol:
        raise ValueError(f"input not in the range of Psi: residual {residual:.3e}")
    return F, residual


# -- declarative configs ---------------------------------------------------

def spec_from_config(cfg) -> OperatorSpec:
    """Build an OperatorSpec from a config dict or JSON file path.

    Recognized forms:
      {"preset": "polyharmonic", "m": 2, "n": 1}
      {"preset": "perturbed-polyharmonic", "m": 1, "n": 1, "amplitude": 0.1,
       "seed": 3}
      {"m": 1, "n": 1, "entries": [{"alpha": [1,0], "beta": [1,0],
                                    "re": 1.0, "im": 0.0}, ...]}
    """
    if isinstance(cfg, (str,)):
        with open(cfg) as f:
            cfg = json.load(f)
    preset = cfg.get("preset")
    if preset == "polyharmonic":
        return polyharmonic_spec(cfg["m"], cfg["n"])
    if preset == "perturbed-polyharmonic":
        return perturbed_polyharmonic_spec(cfg["m"], cfg["n"],
                                           cfg.get("amplitude", 0.1),
                                           seed=cfg.get("seed", 0))
    if "entries" in cfg:
        coeffs = {}
        for ent in cfg["entries"]:
            a, b = tuple(ent["alpha"]), tuple(ent["beta"])
            coeffs[(a, b)] = ent.get("re", 0.0) + 1j * ent.get("im", 0.0)
        return OperatorSpec(cfg["m"], cfg["n"], coeffs)
    raise ValueError(f"unrecognized operator config: {cfg}")
