"""Lattice sites, uniform perturbation fields, boxes and oriented paths.

Sites are plain tuples of ints.  A perturbation field attaches to every site
an independent uniform offset in ``[-L, L]^d``, realized lazily through a
counter-based hash of (seed, label, index, site), so any site can be queried
in O(1) without materializing the field.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .stats import RandomStream, pack_index

Site = tuple

#: coordinates a field can address through the packed fast path
PACK_BITS = 16
MAX_PACK_DIM = 64 // PACK_BITS


def unit_vector(d: int, axis: int) -> Site:
    if not 0 <= axis < d:
        raise ValueError(f"axis {axis} out of range for dimension {d}")
    return tuple(1 if i == axis else 0 for i in range(d))


def l1_norm(z) -> int:
    return int(sum(abs(int(c)) for c in z))


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box; empty when lo > hi in any coordinate."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have the same length")
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))

    @classmethod
    def cube(cls, center, half_width: float) -> "Box":
        return cls(
            tuple(c - half_width for c in center),
            tuple(c + half_width for c in center),
        )

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def is_empty(self) -> bool:
        return any(l > h for l, h in zip(self.lo, self.hi))

    def contains(self, point) -> bool:
        return all(l <= p <= h for l, p, h in zip(self.lo, point, self.hi))

    def contains_box(self, other: "Box") -> bool:
        if other.is_empty:
            return True
        return all(l <= ol and oh <= h for l, h, ol, oh in
                   zip(self.lo, self.hi, other.lo, other.hi))

    def intersect(self, other: "Box") -> "Box":
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        return Box(
            tuple(max(a, b) for a, b in zip(self.lo, other.lo)),
            tuple(min(a, b) for a, b in zip(self.hi, other.hi)),
        )

    def volume(self) -> float:
        if self.is_empty:
            return 0.0
        v = 1.0
        for l, h in zip(self.lo, self.hi):
            v *= h - l
        return v


def support_box(z, L: float) -> Box:
    """The support box ``z + [-L, L]^d`` of the perturbed point at site z."""
    if L <= 0:
        raise ValueError("amplitude L must be > 0")
    return Box.cube(tuple(float(c) for c in z), float(L))


@dataclass(frozen=True)
class PerturbationField:
    """Deterministic i.i.d. uniform offsets on ``Z^d``, one draw per site
    coordinate.

    ``label`` distinguishes independent fields built from one master seed
    (e.g. the departure field, the arrival field and a shifted copy);
    ``index`` separates Monte Carlo replicas of the same field.
    """

    seed: int
    amplitude: float
    label: str
    dim: int
    index: int = 0

    def __post_init__(self):
        if self.amplitude <= 0:
            raise ValueError("amplitude L must be > 0")
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")

    @cached_property
    def _base(self) -> RandomStream:
        return RandomStream.from_seed(self.seed, "field").derive(self.label, self.index)

    @cached_property
    def _axis_streams(self):
        return tuple(self._base.derive(j) for j in range(self.dim))

    def axis_key(self, axis: int) -> int:
        """Key of the per-coordinate stream; consumed by compiled sweeps."""
        return self._axis_streams[axis].key

    def site_index(self, z):
        """Packed index word for a site (dim <= 4, |coord| < 2**15)."""
        if len(z) != self.dim:
            raise ValueError("site dimension mismatch")
        return pack_index(z, bits=PACK_BITS)

    def coord_uniform(self, z, axis: int) -> float:
        """The raw uniform in [0, 1) behind coordinate ``axis`` of offset(z)."""
        if self.dim <= MAX_PACK_DIM:
            return self._axis_streams[axis].uniform(self.site_index(z))
        # wide lattices: fold coordinates into the key one by one
        return self._axis_streams[axis].derive(*(int(c) for c in z)).uniform(0)

    def coord_uniforms(self, packed_sites: np.ndarray, axis: int) -> np.ndarray:
        """Vectorized ``coord_uniform`` over pre-packed site words."""
        return self._axis_streams[axis].uniform(packed_sites)

    def offset(self, z) -> np.ndarray:
        """Offset vector of site z; every coordinate lies in [-L, L]."""
        L = self.amplitude
        return np.array(
            [self.coord_uniform(z, j) * (2.0 * L) - L for j in range(self.dim)]
        )

    def point(self, z) -> np.ndarray:
        """Perturbed point ``z + offset(z)``."""
        return np.asarray(z, dtype=np.float64) + self.offset(z)


@dataclass(frozen=True)
class OrientedPath:
    """Oriented nearest-neighbor path from the origin: at step k the site
    advances by one unit along ``steps[k]``.

    All implied sites are distinct and the endpoint sits at l1 distance
    ``len(steps)`` from the origin.
    """

    steps: tuple
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if any(not 0 <= s < self.dim for s in self.steps):
            raise ValueError("step axes must lie in [0, dim)")

    def __len__(self) -> int:
        return len(self.steps)

    @cached_property
    def sites(self) -> tuple:
        out = [tuple([0] * self.dim)]
        for s in self.steps:
            prev = out[-1]
            out.append(tuple(c + (1 if i == s else 0) for i, c in enumerate(prev)))
        return tuple(out)

    @property
    def endpoint(self) -> Site:
        return self.sites[-1]

    @cached_property
    def _site_rank(self) -> dict:
        return {z: i for i, z in enumerate(self.sites)}


def shift_map(path: OrientedPath, w) -> Site:
    """Relabeling that moves each path site one step forward.

    ``z_i`` maps to ``z_{i+1}``; the terminal site is a fixed point; sites off
    the path map to themselves.  No site maps to the origin, which is how the
    origin gets vacated.
    """
    w = tuple(int(c) for c in w)
    i = path._site_rank.get(w)
    if i is None or i == len(path):
        return w
    return path.sites[i + 1]


@dataclass(frozen=True)
class ShiftedField:
    """Perturbed lattice with points pushed one step along a path.

    Site z emits ``offset(z) + shift_map(path, z)``: off-path sites keep
    their perturbed point, while path site ``z_{i-1}`` emits a point
    distributed like a fresh uniform around ``z_i``.
    """

    base: PerturbationField
    path: OrientedPath

    def __post_init__(self):
        if self.base.dim != self.path.dim:
            raise ValueError("field and path dimension mismatch")

    def shifted_point(self, z) -> np.ndarray:
        target = shift_map(self.path, z)
        return np.asarray(target, dtype=np.float64) + self.base.offset(z)


def sites_in_box(lo, hi):
    """All integer sites of the closed coordinate box [lo, hi]^d."""
    ranges = [range(int(l), int(h) + 1) for l, h in zip(lo, hi)]
    return [tuple(z) for z in itertools.product(*ranges)]
