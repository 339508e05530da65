"""Torus spectral utilities: symbols, derivative stacks, variational solves.

The variational problem <grad^m phi, A grad^m u> = <grad^m phi, H> on a
periodic box is solved by direct symbol division for constant coefficients
and by preconditioned conjugate gradients on Fourier coefficients for
x-dependent ones (polyharmonic symbol preconditioner).
"""

from __future__ import annotations

import numpy as np

from .fields import GridField
from .mindex import MIArray, enumerate_mi

__all__ = ["omega_grids", "mi_multiplier", "constant_symbol", "variational_solve",
           "gradient_hat", "CGFailure"]


class CGFailure(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


def omega_grids(shape, spacing):
    """Frequency meshgrids (cycles per unit) for an fft-layout box."""
    freqs = [np.fft.fftfreq(N, d=h) for N, h in zip(shape, spacing)]
    return np.meshgrid(*freqs, indexing="ij")


def mi_multiplier(oms, zeta) -> np.ndarray:
    """(2 pi i omega)^zeta on the frequency grid."""
    out = np.ones(oms[0].shape, dtype=complex)
    for ax, k in enumerate(zeta):
        if k:
            out = out * (2j * np.pi * oms[ax]) ** k
    return out


def constant_symbol(coeff_matrix: np.ndarray, mis, oms) -> np.ndarray:
    """s(omega) = sum conj((2 pi i w)^a) A_ab (2 pi i w)^b for constant A.

    ``coeff_matrix`` is the dense (q, q) tensor in enumerate_mi order.
    """
    mults = [mi_multiplier(oms, z) for z in mis]
    s = np.zeros(oms[0].shape, dtype=complex)
    for i, a in enumerate(mis):
        acc = np.zeros_like(s)
        for j, b in enumerate(mis):
            c = coeff_matrix[i, j]
            if c != 0:
                acc += c * mults[j]
        s += np.conj(mults[i]) * acc
    return s


def gradient_hat(u_hat: np.ndarray, oms, mis):
    """Fourier coefficients of grad^m u as a list in enumerate_mi order."""
    return [mi_multiplier(oms, z) * u_hat for z in mis]


def _adjoint_divergence_hat(fields_hat, oms, mis):
    """sum_a conj((2 pi i w)^a) F_a-hat: the adjoint of gradient_hat."""
    out = np.zeros(fields_hat[0].shape, dtype=complex)
    for z, fh in zip(mis, fields_hat):
        out += np.conj(mi_multiplier(oms, z)) * fh
    return out


def variational_solve(spec, H: MIArray, shape=None, spacing=None,
                      tol: float = 1e-10, maxiter: int | None = None):
    """Solve <grad^m phi, A grad^m u> = <grad^m phi, H> on the torus.

    ``spec`` is an elliptic.OperatorSpec whose dimension matches the grid
    rank of the MIArray payloads (GridFields).  Returns (u: GridField with
    zero mean, info dict with residual history).
    """
    sample = H[H.indices[0]]
    if isinstance(sample, GridField):
        shape = sample.shape
        spacing = sample.spacing
        payload = {z: np.asarray(H[z].values, dtype=complex) for z in H.indices}
    else:
        payload = {z: np.asarray(H[z], dtype=complex) for z in H.indices}
    d = len(shape)
    m = spec.m
    mis = enumerate_mi(d, m)
    oms = omega_grids(shape, spacing)
    H_hat = [np.fft.fftn(payload[z]) for z in mis]
    rhs_hat = _adjoint_divergence_hat(H_hat, oms, mis)
    zero = (0,) * d

    # polyharmonic reference symbol |2 pi w|^{2m} for preconditioning
    w2 = sum((2 * np.pi * om) ** 2 for om in oms)
    poly = w2 ** m
    poly[zero] = 1.0

    info = {"method": "direct", "residuals": []}
    if spec.is_constant:
        s = constant_symbol(spec.dense(), mis, oms)
        s[zero] = 1.0
        u_hat = rhs_hat / s
        u_hat[zero] = 0.0
    else:
        # PCG on Fourier coefficients; the operator is Hermitian positive
        # definite by the Garding inequality.
        A = spec.dense()  # (q, q, *grid)
        mults = [mi_multiplier(oms, z) for z in mis]

        def apply_op(u_hat):
            grads = [np.fft.ifftn(mult * u_hat) for mult in mults]
            out_hat = np.zeros_like(u_hat)
            for i in range(len(mis)):
                acc = np.zeros(shape, dtype=complex)
                for j in range(len(mis)):
                    acc += A[i, j] * grads[j]
                out_hat += np.conj(mults[i]) * np.fft.fftn(acc)
            out_hat[zero] = 0.0
            return out_hat

        lam = spec.lambda_est if spec.lambda_est else 1.0
        precond = 1.0 / (lam * poly)
        b = rhs_hat.copy()
        b[zero] = 0.0
        x = np.zeros_like(b)
        r = b.copy()
        z = precond * r
        p = z.copy()
        rz = np.vdot(r, z)
        bnorm = np.linalg.norm(b)
        residuals = []
        if maxiter is None:
            maxiter = 10 * max(shape)
        k = 0
        while True:
            rn = np.linalg.norm(r) / max(bnorm, 1e-300)
            residuals.append(float(rn))
            if rn < tol:
                break
            if k >= maxiter:
                raise CGFailure(
                    f"CG did not reach {tol} in {maxiter} iterations", residuals)
            Ap = apply_op(p)
            alpha = rz / np.vdot(p, Ap)
            x += alpha * p
            r -= alpha * Ap
            z = precond * r
            rz_new = np.vdot(r, z)
            p = z + (rz_new / rz) * p
            rz = rz_new
            k += 1
        u_hat = x
        info = {"method": "pcg", "residuals": residuals}

    u = np.fft.ifftn(u_hat)
    gf = GridField(u, spacing)
    return gf, info
