"""Bridge between time-space oriented percolation and the perturbed lattice.

The embedding maps a time-space point ``(t, w)`` to the lattice site
``(t - sum(w), w)``; a time-space bond becomes a unit step ``z -> z + e_j``.
A lattice bond is open when the departure point of its tail and the arrival
point of its head both fall in the overlap of the two support boxes.  For a
unit step along axis j the overlap test reduces to two one-dimensional
conditions on the offsets, which is what both the scalar rule and the
compiled sweeps evaluate:

    open  <=>  x_off[j] >= 1 - L  and  y_off[j] <= L - 1

(the remaining coordinates always lie inside the overlap).  The induced bond
probability is ``(1 - 1/(2L))**2``, clamped to 0 below L = 1/2 where the
overlap in the step direction is empty.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import gobp
from .lattice import PerturbationField, unit_vector
from .stats import (
    RandomStream,
    TestReport,
    bonferroni,
    chain_array,
    chi_square_independence,
    pack_index,
)


def p_hat(L: float) -> float:
    """Effective bond probability induced by amplitude L."""
    if L <= 0:
        raise ValueError("amplitude L must be > 0")
    if L < 0.5:
        return 0.0
    return (1.0 - 1.0 / (2.0 * L)) ** 2


@dataclass(frozen=True)
class Embedding:
    """Level-preserving injection of time-space into the lattice.

    ``(t, w) -> (t - sum(w), w)`` for spatial vectors w with d - 1
    nonnegative coordinates; the image is the nonnegative orthant and the
    level is recovered as the coordinate sum.
    """

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")

    @property
    def d_star(self) -> int:
        return self.d - 1

    def embed(self, t: int, w) -> tuple:
        w = tuple(int(c) for c in w)
        if len(w) != self.d_star:
            raise ValueError("spatial vector has wrong dimension")
        if any(c < 0 for c in w):
            raise ValueError("spatial coordinates must be nonnegative")
        s = sum(w)
        if t < s:
            raise ValueError(f"level {t} below spatial l1 norm {s}")
        return (t - s,) + w

    def unembed(self, z) -> tuple:
        z = tuple(int(c) for c in z)
        if len(z) != self.d:
            raise ValueError("site has wrong dimension")
        if any(c < 0 for c in z):
            raise ValueError("site outside the nonnegative orthant")
        return sum(z), z[1:]


@dataclass(frozen=True)
class CoupledBondRealization:
    """One joint realization of the departure and arrival offset fields."""

    x_field: PerturbationField
    y_field: PerturbationField

    def __post_init__(self):
        if self.x_field.dim != self.y_field.dim:
            raise ValueError("field dimensions differ")
        if self.x_field.amplitude != self.y_field.amplitude:
            raise ValueError("field amplitudes differ")

    @property
    def dim(self) -> int:
        return self.x_field.dim

    @property
    def amplitude(self) -> float:
        return self.x_field.amplitude

    def replica(self, trial: int) -> "CoupledBondRealization":
        """Independent copy for Monte Carlo trial ``trial``."""
        return CoupledBondRealization(
            dataclasses.replace(self.x_field, index=trial),
            dataclasses.replace(self.y_field, index=trial),
        )

    def step_axis(self, z_prev, w_next) -> int:
        diff = tuple(int(b) - int(a) for a, b in zip(z_prev, w_next))
        if sum(abs(c) for c in diff) != 1 or 1 not in diff:
            raise ValueError(f"{z_prev} -> {w_next} is not a unit forward step")
        return diff.index(1)

    def bond_open(self, z_prev, w_next) -> bool:
        """Overlap-box rule for the bond ``z_prev -> w_next = z_prev + e_j``.

        Evaluated in offset coordinates (exact integer translation of the
        overlap box), so it agrees bit for bit with the compiled sweeps.
        """
        j = self.step_axis(z_prev, w_next)
        L = self.amplitude
        xo = self.x_field.coord_uniform(z_prev, j) * (2.0 * L) - L
        if not xo >= 1.0 - L:
            return False
        yo = self.y_field.coord_uniform(w_next, j) * (2.0 * L) - L
        return yo <= L - 1.0


def coupled_realization(seed: int, L: float, d: int, trial: int = 0) -> CoupledBondRealization:
    """Standard construction: departure and arrival fields from one master
    seed under distinct labels."""
    return CoupledBondRealization(
        PerturbationField(seed, L, "X", d, index=trial),
        PerturbationField(seed, L, "Y", d, index=trial),
    )


@dataclass(frozen=True)
class CoupledBondField:
    """Time-space bond field driven by a coupled realization through the
    embedding; effective bond probability is ``p_hat(L)``."""

    realization: CoupledBondRealization
    embedding: Embedding
    horizon: int

    def __post_init__(self):
        if self.embedding.d != self.realization.dim:
            raise ValueError("embedding and realization dimensions differ")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def d_star(self) -> int:
        return self.embedding.d_star

    @property
    def open_probability(self) -> float:
        return p_hat(self.realization.amplitude)

    def is_open(self, bond: "gobp.OrientedBond") -> bool:
        if bond.head.t > self.horizon:
            raise ValueError("bond level beyond field horizon")
        a = self.embedding.embed(bond.tail.t, bond.tail.z)
        b = self.embedding.embed(bond.head.t, bond.head.z)
        return self.realization.bond_open(a, b)

    def kernel_spec(self, T: int) -> dict:
        if T > self.horizon:
            raise ValueError("sweep beyond field horizon")
        d = self.embedding.d
        if d > 4:
            raise ValueError("compiled sweeps support dimension <= 4")
        xkeys = np.array(
            [self.realization.x_field.axis_key(j) for j in range(d)], dtype=np.uint64
        )
        ykeys = np.array(
            [self.realization.y_field.axis_key(j) for j in range(d)], dtype=np.uint64
        )
        return {
            "kind": "coupled",
            "xkeys": xkeys,
            "ykeys": ykeys,
            "amplitude": float(self.realization.amplitude),
        }


def coupled_bond_field(real: CoupledBondRealization, embedding: Embedding,
                       horizon: int) -> CoupledBondField:
    return CoupledBondField(real, embedding, horizon)


def coupled_survival(L: float, d: int, T: int, n: int, seed: int,
                     workers: int = 1) -> "gobp.SurvivalEstimate":
    """Finite-horizon survival proxy on the amplitude axis.

    Trials are keyed by trial index only, so estimates at different L share
    the driving uniforms and are pathwise monotone in L.
    """
    spec = {"kind": "coupled", "L": float(L), "d": int(d),
            "seed": int(seed), "namespace": "survival"}
    return gobp.survival_from_spec(spec, axis="L", param=float(L),
                                   T=T, n=n, workers=workers)


# --- independence battery -------------------------------------------------

#: a bond is (tail site in Z^d, step axis)
Bond = tuple


def _bond_head(bond: Bond) -> tuple:
    z, j = bond
    e = unit_vector(len(z), j)
    return tuple(int(a) + b for a, b in zip(z, e))


def axis_keys_for_trials(seed: int, label: str, trials: np.ndarray,
                         axis: int) -> np.ndarray:
    """Per-trial stream keys reproducing
    ``PerturbationField(seed, L, label, d, index=i).axis_key(axis)``."""
    k0 = RandomStream.from_seed(seed, "field").derive(label).key
    ki = chain_array(k0, trials.astype(np.uint64))
    return chain_array(ki, axis)


def bond_indicators(seed: int, L: float, bonds, n: int) -> np.ndarray:
    """Open/closed indicators of the given bonds over n independent
    realizations; returns a bool array of shape (len(bonds), n)."""
    trials = np.arange(n, dtype=np.uint64)
    out = np.empty((len(bonds), n), dtype=bool)
    cache = {}
    for row, (z, j) in enumerate(bonds):
        head = _bond_head((z, j))
        kx = cache.get(("X", j))
        if kx is None:
            kx = cache[("X", j)] = axis_keys_for_trials(seed, "X", trials, j)
        ky = cache.get(("Y", j))
        if ky is None:
            ky = cache[("Y", j)] = axis_keys_for_trials(seed, "Y", trials, j)
        ux = chain_array(kx, pack_index(z)).astype(np.float64) * 2.0 ** -64
        uy = chain_array(ky, pack_index(head)).astype(np.float64) * 2.0 ** -64
        xo = ux * (2.0 * L) - L
        yo = uy * (2.0 * L) - L
        out[row] = (xo >= 1.0 - L) & (yo <= L - 1.0)
    return out


@dataclass(frozen=True)
class TupleResult:
    name: str
    bonds: tuple
    report: TestReport
    joint_all_open: float
    product_all_open: float
    correlation: float | None


@dataclass(frozen=True)
class IndependenceReport:
    alpha: float
    corrected_alpha: float
    trials: int
    results: tuple

    @property
    def all_passed(self) -> bool:
        return all(r.report.p_value >= self.corrected_alpha for r in self.results)

    def by_name(self, prefix: str):
        return [r for r in self.results if r.name.startswith(prefix)]


def verify_independence(seed: int, L: float, named_tuples, n: int,
                        alpha: float = 0.01) -> IndependenceReport:
    """Chi-square battery for joint bond openness against the product of
    marginals.  ``named_tuples`` is a list of (name, [bond, ...]).

    Bonds sharing an arrival site reuse the single arrival draw of that
    site, exactly as the open rule prescribes; whether that still looks
    i.i.d. is what this battery measures, so shared-arrival tuples should be
    named so they can be reported separately.
    """
    m = len(named_tuples)
    results = []
    for name, bonds in named_tuples:
        bonds = [(tuple(int(c) for c in z), int(j)) for z, j in bonds]
        if len(set(bonds)) != len(bonds):
            raise ValueError(f"tuple {name!r} contains duplicate bonds")
        ind = bond_indicators(seed, L, bonds, n)
        k = len(bonds)
        patterns = np.zeros(n, dtype=np.int64)
        for row in range(k):
            patterns |= ind[row].astype(np.int64) << (k - 1 - row)
        table = np.bincount(patterns, minlength=1 << k).reshape((2,) * k)
        report = chi_square_independence(table, alpha=bonferroni(alpha, m), name=name)
        marg = ind.mean(axis=1)
        corr = None
        if k == 2 and ind[0].std() > 0 and ind[1].std() > 0:
            corr = float(np.corrcoef(ind[0], ind[1])[0, 1])
        results.append(
            TupleResult(name, tuple(bonds), report,
                        joint_all_open=float(ind.all(axis=0).mean()),
                        product_all_open=float(np.prod(marg)),
                        correlation=corr)
        )
    return IndependenceReport(alpha, bonferroni(alpha, m), n, tuple(results))


def default_bond_tuples(d: int):
    """Geometric configurations within l1 distance 2 of each other: shared
    departure site, shared arrival site, head-to-tail along a path, disjoint,
    plus the full d-fold fan-out of one site."""
    z0 = tuple([0] * d)
    far = (10,) + tuple([0] * (d - 1))
    e0 = unit_vector(d, 0)
    named = [
        ("shared_departure/axes01", [(z0, 0), (z0, 1)]),
        ("disjoint/far_apart", [(z0, 0), (far, 0)]),
        ("head_to_tail/axis0_then_1", [(z0, 0), (e0, 1)]),
        ("head_to_tail/axis0_then_0", [(z0, 0), (e0, 0)]),
        ("shared_arrival/axes01", [(z0, 1), (tuple(a - b for a, b in zip(unit_vector(d, 1), e0)), 0)]),
        ("fanout/all_axes", [(z0, j) for j in range(d)]),
    ]
    return named
