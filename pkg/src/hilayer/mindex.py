"""Multiindex combinatorics and arrays indexed by multiindices.

Multiindices are plain tuples of nonnegative ints.  Everything here is
exact integer arithmetic; the enumeration order (graded lexicographic,
descending) is fixed forever because serialized arrays depend on it.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

MultiIndex = tuple

__all__ = [
    "enumerate_mi",
    "mi_factorial",
    "mi_norm",
    "mi_le",
    "mi_lt",
    "mi_add",
    "mi_sub",
    "laplacian_power_coeffs",
    "MIArray",
]


def _check_mi(zeta: Sequence[int]) -> tuple:
    z = tuple(int(v) for v in zeta)
    if any(v < 0 for v in z):
        raise ValueError(f"multiindex entries must be nonnegative, got {zeta}")
    return z


@lru_cache(maxsize=None)
def enumerate_mi(d: int, k: int) -> tuple:
    """All multiindices of length d with |zeta| = k, graded-lex descending.

    The count is C(k+d-1, d-1).  Example: enumerate_mi(2, 2) ->
    ((2,0), (1,1), (0,2)).
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if k < 0:
        raise ValueError("order must be >= 0")
    if d == 1:
        return ((k,),)
    out = []
    for first in range(k, -1, -1):
        for rest in enumerate_mi(d - 1, k - first):
            out.append((first,) + rest)
    return tuple(out)


def mi_norm(zeta: Sequence[int]) -> int:
    return int(sum(zeta))


def mi_factorial(zeta: Sequence[int]) -> int:
    """zeta! = zeta_1! zeta_2! ... zeta_d! (exact integer)."""
    z = _check_mi(zeta)
    out = 1
    for v in z:
        out *= math.factorial(v)
    return out


def mi_le(xi: Sequence[int], zeta: Sequence[int]) -> bool:
    """Componentwise partial order xi <= zeta."""
    return len(xi) == len(zeta) and all(a <= b for a, b in zip(xi, zeta))


def mi_lt(xi: Sequence[int], zeta: Sequence[int]) -> bool:
    """xi <= zeta with strict inequality in at least one slot."""
    return mi_le(xi, zeta) and any(a < b for a, b in zip(xi, zeta))


def mi_add(a: Sequence[int], b: Sequence[int]) -> tuple:
    return tuple(x + y for x, y in zip(a, b))


def mi_sub(a: Sequence[int], b: Sequence[int]) -> tuple:
    out = tuple(x - y for x, y in zip(a, b))
    if any(v < 0 for v in out):
        raise ValueError(f"{b} is not componentwise <= {a}")
    return out


def unit_mi(d: int, axis: int, count: int = 1) -> tuple:
    """count * e_axis as a multiindex in N^d."""
    z = [0] * d
    z[axis] = count
    return tuple(z)


def laplacian_power_coeffs(M: int, d: int) -> dict:
    """Coefficients a_zeta with Delta^M = sum_{|zeta|=M} a_zeta d^{2 zeta}.

    a_zeta = M!/zeta!; every coefficient is a positive integer >= 1.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    fM = math.factorial(M)
    return {z: fM // mi_factorial(z) for z in enumerate_mi(d, M)}


class MIArray:
    """Array of scalars or grids indexed by the multiindices of one order.

    The key set is always the full enumeration of length-``order``
    multiindices in N^dim.  Values may be complex scalars or ndarray-like
    payloads of a common shape.  The inner product is conjugate-linear in
    the first slot.
    """

    def __init__(self, dim: int, order: int, values=None, fill=0.0):
        self.dim = int(dim)
        self.order = int(order)
        self.indices = enumerate_mi(self.dim, self.order)
        if values is None:
            self.values = {z: fill for z in self.indices}
        else:
            values = dict(values)
            if set(values) != set(self.indices):
                missing = set(self.indices) - set(values)
                extra = set(values) - set(self.indices)
                raise ValueError(
                    f"key set must be the full enumeration; missing={missing}, extra={extra}"
                )
            self.values = {z: values[z] for z in self.indices}

    def __getitem__(self, zeta):
        return self.values[tuple(zeta)]

    def __setitem__(self, zeta, value):
        z = tuple(zeta)
        if z not in self.values:
            raise KeyError(f"{z} is not a multiindex of order {self.order} in N^{self.dim}")
        self.values[z] = value

    def __iter__(self) -> Iterator:
        return iter(self.indices)

    def map(self, fn) -> "MIArray":
        return MIArray(self.dim, self.order, {z: fn(v) for z, v in self.values.items()})

    def __add__(self, other: "MIArray") -> "MIArray":
        return MIArray(self.dim, self.order,
                       {z: self.values[z] + other.values[z] for z in self.indices})

    def __sub__(self, other: "MIArray") -> "MIArray":
        return MIArray(self.dim, self.order,
                       {z: self.values[z] - other.values[z] for z in self.indices})

    def __mul__(self, c) -> "MIArray":
        return self.map(lambda v: c * v)

    __rmul__ = __mul__

    def inner(self, other: "MIArray", cell_volume: float | None = None) -> complex:
        """<F, G> = sum_zeta conj(F_zeta) G_zeta.

        For grid payloads the entrywise products are summed over the grid;
        pass ``cell_volume`` to turn the sum into a quadrature of the L^2
        pairing.
        """
        total = 0.0 + 0.0j
        for z in self.indices:
            term = np.sum(np.conj(np.asarray(self.values[z])) * np.asarray(other.values[z]))
            total += complex(term)
        if cell_volume is not None:
            total *= cell_volume
        return total

    def norm2(self, cell_volume: float | None = None) -> float:
        return float(np.real(self.inner(self, cell_volume)))

    def to_text(self) -> str:
        """Columnar serialization: one row per (multiindex, real, imag) entry.

        Grid payloads are flattened in C order after a shape header line.
        """
        lines = [f"# miarray dim={self.dim} order={self.order}"]
        for z in self.indices:
            v = np.asarray(self.values[z], dtype=complex)
            lines.append("@ " + " ".join(str(i) for i in z) + " shape=" +
                         ",".join(str(s) for s in v.shape))
            flat = v.ravel()
            lines.extend(f"{x.real:.17e} {x.imag:.17e}" for x in flat)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MIArray":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        dim = int(head[2].split("=")[1])
        order = int(head[3].split("=")[1])
        values = {}
        i = 1
        while i < len(lines):
            parts = lines[i].split()
            assert parts[0] == "@"
            z = tuple(int(p) for p in parts[1:-1])
            shape = tuple(int(s) for s in parts[-1].split("=")[1].split(",") if s)
            count = int(np.prod(shape)) if shape else 1
            data = np.empty(count, dtype=complex)
            for k in range(count):
                re, im = lines[i + 1 + k].split()
                data[k] = float(re) + 1j * float(im)
            values[z] = data.reshape(shape) if shape else complex(data[0])
            i += 1 + count
        return cls(dim, order, values)

    def __repr__(self):
        return f"MIArray(dim={self.dim}, order={self.order}, n={len(self.indices)})"


def unit_array(dim: int, order: int, zeta, value=1.0) -> MIArray:
    """The unit array e_zeta with <e_zeta, F> = F_zeta."""
    arr = MIArray(dim, order)
    arr[tuple(zeta)] = value
    return arr
