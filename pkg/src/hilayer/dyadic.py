"""Dyadic cubes, annuli, and the shifted forests used by Carleson scans."""

from __future__ import annotations

import numpy as np

__all__ = ["DyadicCube", "annuli", "annuli_union", "dyadic_forest"]


class DyadicCube:
    """Half-open dyadic cube: anchor + generation over a configurable base grid.

    side = base * 2^{-generation}; the cube is anchor + [0, side)^n with
    anchor on the lattice (side * Z)^n shifted by ``shift``.
    """

    def __init__(self, anchor, generation: int = 0, base: float = 1.0, shift=None):
        self.anchor = tuple(float(a) for a in np.atleast_1d(anchor))
        self.generation = int(generation)
        self.base = float(base)
        self.n = len(self.anchor)
        self.shift = tuple(float(s) for s in (shift if shift is not None else (0.0,) * self.n))
        side = self.side
        for a, s in zip(self.anchor, self.shift):
            if abs((a - s) / side - round((a - s) / side)) > 1e-9:
                raise ValueError("anchor is not on the dyadic lattice")

    @property
    def side(self) -> float:
        return self.base * 2.0 ** (-self.generation)

    @property
    def center(self):
        return tuple(a + 0.5 * self.side for a in self.anchor)

    def children(self):
        side = self.side / 2
        out = []
        for corner in range(2 ** self.n):
            offs = [(corner >> i) & 1 for i in range(self.n)]
            anchor = tuple(a + o * side for a, o in zip(self.anchor, offs))
            out.append(DyadicCube(anchor, self.generation + 1, self.base, self.shift))
        return out

    def dilate(self, r: float):
        """The concentric cube rQ as (lo, hi) bounds."""
        c, h = self.center, 0.5 * r * self.side
        lo = np.array([ci - h for ci in c])
        hi = np.array([ci + h for ci in c])
        return lo, hi

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lo = np.asarray(self.anchor)
        hi = lo + self.side
        return np.all((pts >= lo) & (pts < hi), axis=1)

    def __repr__(self):
        return f"DyadicCube(anchor={self.anchor}, gen={self.generation}, side={self.side:g})"


class _Annulus:
    """A_j(Q): 2Q for j = 0, else 2^{j+1}Q \\ 2^j Q (membership + bounds)."""

    def __init__(self, cube: DyadicCube, j: int):
        self.cube = cube
        self.j = int(j)
        self.outer = cube.dilate(2.0 ** (self.j + 1))
        self.inner = None if self.j == 0 else cube.dilate(2.0 ** self.j)

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lo, hi = self.outer
        inside_outer = np.all((pts >= lo) & (pts < hi), axis=1)
        if self.inner is None:
            return inside_outer
        lo_i, hi_i = self.inner
        inside_inner = np.all((pts >= lo_i) & (pts < hi_i), axis=1)
        return inside_outer & ~inside_inner

    def __repr__(self):
        return f"Annulus(j={self.j}, side={self.cube.side:g})"


def annuli(Q: DyadicCube, j: int) -> _Annulus:
    """A_0(Q) = 2Q and A_j(Q) = 2^{j+1}Q \\ 2^j Q for j >= 1."""
    if j < 0:
        raise ValueError("j must be >= 0")
    return _Annulus(Q, j)


def annuli_union(Q: DyadicCube, j: int, i: int):
    """A_{j,i}(Q) = union of A_l(Q) for l in [j-i, j+i], empty pieces dropped."""
    return [annuli(Q, l) for l in range(max(j - i, 0), j + i + 1)]


def dyadic_forest(n: int, top_side: float, depth: int, shifts=(0.0, 1 / 3, 2 / 3)):
    """Dyadic cubes from three top cubes shifted by thirds (anti-alignment).

    Returns a flat list of cubes of every generation 0..depth, for each
    shifted top cube anchored at shift * top_side.
    """
    cubes = []
    for s in shifts:
        anchor = (s * top_side,) * n
        top = DyadicCube(anchor, 0, base=top_side, shift=anchor)
        layer = [top]
        cubes.extend(layer)
        for _ in range(depth):
            layer = [c for parent in layer for c in parent.children()]
            cubes.extend(layer)
    return cubes
