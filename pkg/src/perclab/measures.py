"""Finite-horizon estimators of the path-summed restricted measures.

For a cylinder event ``E`` (finitely many sites, each with a box constraint
on its perturbed point) the two estimators are Monte Carlo averages of

    (1 / (d p_hat)^t) * sum over length-t oriented paths of
        1{lattice in E} * 1{path open}

with the full lattice (departure side) or the origin-deleted lattice
(arrival side) deciding membership.  Openness always uses both offset
fields.  The law identity between the two sides holds when the event window
cannot see any path endpoint; those hypotheses are enforced as hard
preconditions, not warnings.

The per-path identity is additionally exhibited through a third route: the
path-shifted field, whose departure constraints turn into arrival-type
constraints on an independent field copy.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .coupling import CoupledBondRealization, p_hat
from .lattice import Box, OrientedPath, PerturbationField, support_box, shift_map
from .stats import RandomStream, TO_UNIT, chain_array, checked_sum, pack_index


class HypothesisError(ValueError):
    """A stated precondition of the measure identity is violated."""


@dataclass(frozen=True)
class CylinderEvent:
    """Finitely many sites, each constraining its perturbed point to a box.

    ``window_half_width`` M fixes the observation window K = [-M, M]^d; every
    constraint box must lie inside K and every constrained site must be able
    to reach K (its support box intersects K).  Unconstrained sites impose
    nothing.  An empty constraint box makes the event impossible.
    """

    dim: int
    window_half_width: float
    constraints: tuple  # of (site, Box)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.window_half_width <= 0:
            raise ValueError("window half-width must be > 0")
        norm = []
        seen = set()
        for site, box in self.constraints:
            site = tuple(int(c) for c in site)
            if len(site) != self.dim or box.dim != self.dim:
                raise ValueError("constraint dimension mismatch")
            if site in seen:
                raise ValueError(f"site {site} constrained twice")
            seen.add(site)
            norm.append((site, box))
        object.__setattr__(self, "constraints", tuple(norm))

    @property
    def sites(self):
        return tuple(site for site, _ in self.constraints)

    @property
    def constrains_origin(self) -> bool:
        return tuple([0] * self.dim) in self.sites

    def validate_for(self, L: float):
        """Check the window relations that depend on the amplitude."""
        M = self.window_half_width
        window = Box.cube(tuple([0.0] * self.dim), M)
        for site, box in self.constraints:
            if not window.contains_box(box):
                raise HypothesisError(
                    f"constraint box at {site} is not inside the window "
                    f"[-{M}, {M}]^{self.dim}"
                )
            if any(abs(c) > L + M for c in site):
                raise HypothesisError(
                    f"site {site} cannot reach the window: "
                    f"max|coord| > L + M = {L + M}"
                )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "window_half_width": self.window_half_width,
            "constraints": [
                {"site": list(site), "box": [[lo, hi] for lo, hi in zip(box.lo, box.hi)]}
                for site, box in self.constraints
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CylinderEvent":
        try:
            dim = int(doc["dim"])
            m = float(doc["window_half_width"])
            cons = []
            for entry in doc.get("constraints", []):
                site = tuple(int(c) for c in entry["site"])
                pairs = entry["box"]
                box = Box(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))
                cons.append((site, box))
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"malformed event document: {exc}") from exc
        return cls(dim, m, tuple(cons))


def load_event_file(path) -> CylinderEvent:
    with open(path, "r", encoding="utf-8") as fh:
        return CylinderEvent.from_dict(json.load(fh))


@dataclass(frozen=True)
class PathBoxSystem:
    """Per-site boxes along a path: on the departure side the box of z_k
    (k < t) is the overlap of the supports of z_k and z_{k+1}; on the
    arrival side it is z_{k+1} that gets the overlap.  All other sites keep
    their full support box."""

    path: OrientedPath
    amplitude: float
    side: str  # "departure" or "arrival"

    def __post_init__(self):
        if self.side not in ("departure", "arrival"):
            raise ValueError("side must be 'departure' or 'arrival'")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")

    def box_at(self, z) -> Box:
        z = tuple(int(c) for c in z)
        sites = self.path.sites
        L = self.amplitude
        rank = self.path._site_rank.get(z)
        if rank is None:
            return support_box(z, L)
        if self.side == "departure":
            if rank == len(self.path):
                return support_box(z, L)
            return support_box(sites[rank], L).intersect(support_box(sites[rank + 1], L))
        if rank == 0:
            return support_box(z, L)
        return support_box(sites[rank - 1], L).intersect(support_box(sites[rank], L))


def enumerate_paths(d: int, t: int, budget: int = 1_000_000):
    """All d^t oriented paths of length t from the origin."""
    if d < 1 or t < 0:
        raise ValueError("need d >= 1 and t >= 0")
    if d ** t > budget:
        raise ValueError(
            f"d^t = {d ** t} exceeds the enumeration budget {budget}; "
            "reduce t or use path sampling"
        )
    return [OrientedPath(steps, d) for steps in itertools.product(range(d), repeat=t)]


def sample_paths(d: int, t: int, m: int, stream: RandomStream):
    """m oriented paths drawn uniformly (with replacement) from the d^t."""
    u = stream.derive("paths").uniform(np.arange(m * t, dtype=np.uint64))
    axes = np.minimum((u * d).astype(np.int64), d - 1).reshape(m, t)
    return [OrientedPath(tuple(int(a) for a in row), d) for row in axes]


def path_open_indicator(x_field: PerturbationField, y_field: PerturbationField,
                        path: OrientedPath) -> bool:
    """Whether every bond of the path is open under the overlap rule."""
    if len(path) < 1:
        raise ValueError("path must have at least one step")
    real = CoupledBondRealization(x_field, y_field)
    sites = path.sites
    return all(
        real.bond_open(sites[k], sites[k + 1]) for k in range(len(path))
    )


class _TrialFields:
    """Vectorized offset draws of one labeled field over Monte Carlo trials.

    Reproduces ``PerturbationField(seed, L, label, dim, index=i)`` draws for
    i = index_base .. index_base + n - 1, one array entry per trial.
    """

    def __init__(self, seed: int, label: str, n: int, L: float, dim: int,
                 index_base: int = 0):
        trials = np.arange(index_base, index_base + n, dtype=np.uint64)
        k0 = RandomStream.from_seed(seed, "field").derive(label).key
        ki = chain_array(k0, trials)
        self._axis_keys = [chain_array(ki, j) for j in range(dim)]
        self.L = float(L)
        self.dim = dim
        self._cache = {}

    def offsets(self, site, axis: int) -> np.ndarray:
        key = (site, axis)
        out = self._cache.get(key)
        if out is None:
            u = chain_array(self._axis_keys[axis], pack_index(site))
            u = u.astype(np.float64) * TO_UNIT
            out = self._cache[key] = u * (2.0 * self.L) - self.L
        return out

    def departure_ok(self, site, axis: int) -> np.ndarray:
        return self.offsets(site, axis) >= 1.0 - self.L

    def arrival_ok(self, site, axis: int) -> np.ndarray:
        return self.offsets(site, axis) <= self.L - 1.0

    def in_box(self, site, box: Box, anchor=None) -> np.ndarray:
        """Per-trial membership of the site's point in the box.  ``anchor``
        overrides the point's lattice anchor (used by the shifted field)."""
        a = site if anchor is None else anchor
        n = self._axis_keys[0].shape[0]
        out = np.ones(n, dtype=bool)
        for c in range(self.dim):
            off = self.offsets(site, c)
            out &= (off >= box.lo[c] - a[c]) & (off <= box.hi[c] - a[c])
        return out


def _open_indicators(xf: _TrialFields, yf: _TrialFields, path: OrientedPath) -> np.ndarray:
    sites = path.sites
    out = None
    for k, j in enumerate(path.steps):
        step = xf.departure_ok(sites[k], j) & yf.arrival_ok(sites[k + 1], j)
        out = step if out is None else out & step
    return out


def _membership(fields: _TrialFields, event: CylinderEvent, shift=None) -> np.ndarray:
    n = fields._axis_keys[0].shape[0]
    out = np.ones(n, dtype=bool)
    for site, box in event.constraints:
        anchor = shift(site) if shift is not None else None
        out &= fields.in_box(site, box, anchor=anchor)
    return out


@dataclass(frozen=True)
class MeasureEstimate:
    """Monte Carlo value of one side of the normalized path-sum measure.
    The value may exceed 1: overlapping path events are deliberately counted
    once per path, exactly as the definition prescribes."""

    t: int
    which: str  # "departure" or "arrival"
    value: float
    se: float
    trials: int
    mode: str  # "enumerate" or "sample"
    n_paths: int


def _mean_se(values: np.ndarray):
    n = values.shape[0]
    mean = checked_sum(values) / n
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return mean, se


def estimate_measure(t: int, event: CylinderEvent, which: str, L: float,
                     trials: int, seed: int, *,
                     path_sample: int | None = None, budget: int = 1_000_000,
                     index_base: int = 0) -> MeasureEstimate:
    """Estimate the normalized path-sum measure of a cylinder event.

    ``which`` selects the lattice whose points decide membership:
    "departure" uses the full perturbed lattice, "arrival" the
    origin-deleted one.  Openness of paths always involves both fields.
    With ``path_sample`` set, the path sum over all d^t paths is replaced by
    uniform sampling with importance weight d^t / path_sample.
    """
    if which not in ("departure", "arrival"):
        raise ValueError("which must be 'departure' or 'arrival'")
    if trials < 2:
        raise ValueError("need at least two trials")
    if t < 1:
        raise ValueError("t must be >= 1")
    ph = p_hat(L)
    if ph == 0.0:
        raise ValueError("amplitude below 1/2 gives zero bond probability")
    event.validate_for(L)
    d = event.dim
    if which == "arrival" and event.constrains_origin:
        raise ValueError("the origin-deleted lattice has no point at the origin")
    stream = RandomStream.from_seed(seed, "measure").derive(which, index_base)
    if path_sample is None:
        paths = enumerate_paths(d, t, budget)
        weight = 1.0
        mode = "enumerate"
    else:
        paths = sample_paths(d, t, path_sample, stream)
        weight = float(d) ** t / path_sample
        mode = "sample"
    xf = _TrialFields(seed, "X", trials, L, d, index_base)
    yf = _TrialFields(seed, "Y", trials, L, d, index_base)
    open_count = np.zeros(trials, dtype=np.float64)
    for path in paths:
        open_count += _open_indicators(xf, yf, path)
    member = _membership(xf if which == "departure" else yf, event)
    values = member * open_count * (weight / (d * ph) ** t)
    mean, se = _mean_se(values)
    return MeasureEstimate(t, which, mean, se, trials, mode, len(paths))


def _min_endpoint_max_coord(t: int, d: int) -> int:
    # over nonnegative z with |z|_1 = t the max coordinate is minimized by
    # the balanced composition
    return -(-t // d)


def require_identity_hypotheses(t: int, event: CylinderEvent, L: float):
    """Hard preconditions of the measure identity: the window lies in
    [-M, M]^d and no level-t path endpoint is visible from it."""
    event.validate_for(L)
    M = event.window_half_width
    reach = _min_endpoint_max_coord(t, event.dim)
    if reach <= L + M:
        raise HypothesisError(
            f"a level-{t} endpoint lies inside [-(L+M), L+M]^d: "
            f"min over endpoints of max|coord| = {reach} <= L + M = {L + M}"
        )


def require_path_hypotheses(path: OrientedPath, event: CylinderEvent, L: float):
    event.validate_for(L)
    M = event.window_half_width
    reach = max(path.endpoint)
    if reach <= L + M:
        raise HypothesisError(
            f"path endpoint {path.endpoint} lies inside [-(L+M), L+M]^d: "
            f"max coord = {reach} <= L + M = {L + M}"
        )


def _pair_consistent(a: float, b: float, se: float, sigmas: float = 3.0) -> bool:
    if se == 0.0:
        return a == b
    return abs(a - b) <= sigmas * se


@dataclass(frozen=True)
class MeasureIdentityReport:
    """Two-sided comparison of the measure estimates for one event."""

    t: int
    amplitude: float
    departure: MeasureEstimate
    arrival: MeasureEstimate

    @property
    def difference(self) -> float:
        return self.departure.value - self.arrival.value

    @property
    def pooled_se(self) -> float:
        return math.hypot(self.departure.se, self.arrival.se)

    @property
    def passed(self) -> bool:
        return _pair_consistent(self.departure.value, self.arrival.value,
                                self.pooled_se)


def check_measure_identity(t: int, event: CylinderEvent, L: float,
                           trials: int, seed: int,
                           **kwargs) -> MeasureIdentityReport:
    """Compare the two measure estimates at 3 pooled standard errors.

    The sides use disjoint trial indices, so their errors are independent.
    Hypothesis violations raise before any sampling happens.
    """
    require_identity_hypotheses(t, event, L)
    dep = estimate_measure(t, event, "departure", L, trials, seed,
                           index_base=0, **kwargs)
    arr = estimate_measure(t, event, "arrival", L, trials, seed,
                           index_base=trials, **kwargs)
    return MeasureIdentityReport(t, L, dep, arr)


@dataclass(frozen=True)
class PathIdentityReport:
    """Unnormalized per-path probabilities along three routes: the plain
    lattice, the path-shifted field, and the origin-deleted lattice."""

    path_steps: tuple
    amplitude: float
    departure: tuple  # (value, se)
    shifted: tuple
    arrival: tuple
    trials: int

    def _pairs(self):
        routes = {"departure": self.departure, "shifted": self.shifted,
                  "arrival": self.arrival}
        names = list(routes)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                va, sa = routes[a]
                vb, sb = routes[b]
                yield (a, b), (va, vb, math.hypot(sa, sb))

    @property
    def passed(self) -> bool:
        return all(_pair_consistent(va, vb, se) for _, (va, vb, se) in self._pairs())


def check_path_identity(path: OrientedPath, event: CylinderEvent, L: float,
                        trials: int, seed: int) -> PathIdentityReport:
    """Exhibit the per-path law identity three ways.

    Departure route:  P(lattice in E, path open).
    Shifted route:    the independent field copy whose points are pushed one
                      step along the path; its on-path constraints become
                      arrival-type conditions, and the arrival half of
                      openness is kept.
    Arrival route:    P(origin-deleted lattice in E, path open).
    """
    require_path_hypotheses(path, event, L)
    if p_hat(L) == 0.0:
        raise ValueError("amplitude below 1/2 gives zero bond probability")
    if event.constrains_origin:
        raise ValueError("the origin-deleted lattice has no point at the origin")
    d = event.dim
    if path.dim != d:
        raise ValueError("path and event dimension mismatch")
    n = trials
    sites = path.sites

    xf = _TrialFields(seed, "X", n, L, d, 0)
    yf = _TrialFields(seed, "Y", n, L, d, 0)
    dep_vals = (_membership(xf, event) & _open_indicators(xf, yf, path)).astype(np.float64)

    sf = _TrialFields(seed, "X'", n, L, d, n)
    ysf = _TrialFields(seed, "Y", n, L, d, n)
    shifted_open = None
    for k, j in enumerate(path.steps):
        step = sf.arrival_ok(sites[k], j) & ysf.arrival_ok(sites[k + 1], j)
        shifted_open = step if shifted_open is None else shifted_open & step
    member_sf = _membership(sf, event, shift=lambda s: shift_map(path, s))
    shf_vals = (member_sf & shifted_open).astype(np.float64)

    xa = _TrialFields(seed, "X", n, L, d, 2 * n)
    ya = _TrialFields(seed, "Y", n, L, d, 2 * n)
    arr_vals = (_membership(ya, event) & _open_indicators(xa, ya, path)).astype(np.float64)

    return PathIdentityReport(path.steps, L, _mean_se(dep_vals),
                              _mean_se(shf_vals), _mean_se(arr_vals), n)


# --- bundled verification battery ------------------------------------------


def default_battery(M: float = 1.0):
    """Twenty named cylinder-event configurations at d = 2.

    Constrained sites sit outside the nonnegative orthant, so they lie on no
    oriented path and the two measure estimates agree exactly in law; the
    battery is then a pure false-alarm check of the 3-sigma comparison.
    """
    def ev(*cons):
        return CylinderEvent(2, M, tuple(cons))

    b = Box
    configs = [
        ("unconstrained", ev()),
        ("empty_box", ev(((-1, 0), b((0.5, 0.0), (-0.5, 0.5))))),
        ("west_full", ev(((-1, 0), b((-1.0, -1.0), (0.0, 1.0))))),
        ("west_half", ev(((-1, 0), b((-1.0, -1.0), (-0.5, 1.0))))),
        ("west_quarter", ev(((-1, 0), b((-1.0, 0.0), (-0.5, 1.0))))),
        ("west_inner", ev(((-1, 0), b((-0.75, -0.5), (-0.25, 0.5))))),
        ("south_full", ev(((0, -1), b((-1.0, -1.0), (1.0, 0.0))))),
        ("south_half", ev(((0, -1), b((-1.0, -1.0), (1.0, -0.5))))),
        ("south_sliver", ev(((0, -1), b((-0.25, -1.0), (0.25, 0.0))))),
        ("southwest_full", ev(((-1, -1), b((-1.0, -1.0), (0.0, 0.0))))),
        ("southwest_inner", ev(((-1, -1), b((-0.8, -0.8), (-0.2, -0.2))))),
        ("northwest_full", ev(((-1, 1), b((-1.0, 0.0), (0.0, 1.0))))),
        ("northwest_band", ev(((-1, 1), b((-1.0, 0.25), (0.0, 0.75))))),
        ("southeast_full", ev(((1, -1), b((0.0, -1.0), (1.0, 0.0))))),
        ("southeast_band", ev(((1, -1), b((0.25, -1.0), (0.75, 0.0))))),
        ("pair_wide", ev(((-1, 0), b((-1.0, -1.0), (0.0, 1.0))),
                         ((0, -1), b((-1.0, -1.0), (1.0, 0.0))))),
        ("pair_narrow", ev(((-1, 0), b((-1.0, -0.5), (-0.25, 0.5))),
                           ((1, -1), b((0.25, -1.0), (1.0, -0.25))))),
        ("pair_diagonal", ev(((-1, -1), b((-1.0, -1.0), (0.0, 0.0))),
                             ((-1, 1), b((-1.0, 0.0), (0.0, 1.0))))),
        ("triple", ev(((-1, 0), b((-1.0, -1.0), (0.0, 1.0))),
                      ((0, -1), b((-1.0, -1.0), (1.0, 0.0))),
                      ((-1, -1), b((-1.0, -1.0), (0.0, 0.0))))),
        ("triple_tight", ev(((-1, 0), b((-0.9, -0.6), (-0.1, 0.6))),
                            ((0, -1), b((-0.6, -0.9), (0.6, -0.1))),
                            ((1, -1), b((0.1, -0.9), (0.9, -0.1))))),
    ]
    return configs


@dataclass(frozen=True)
class BatteryReport:
    t: int
    amplitude: float
    trials: int
    results: tuple  # of (name, MeasureIdentityReport)

    @property
    def n_passed(self) -> int:
        return sum(1 for _, r in self.results if r.passed)

    def passed(self, min_pass: int | None = None) -> bool:
        need = len(self.results) - 1 if min_pass is None else min_pass
        return self.n_passed >= need


def run_identity_battery(t: int, L: float, trials: int, seed: int,
                         configs=None) -> BatteryReport:
    """Run the two-sided comparison over a battery of events; under the law
    identity roughly alpha = 0.3% of configurations may trip 3 sigma."""
    if configs is None:
        configs = default_battery()
    results = []
    for i, (name, event) in enumerate(configs):
        report = check_measure_identity(
            t, event, L, trials,
            RandomStream.from_seed(seed, "battery").derive(i).key)
        results.append((name, report))
    return BatteryReport(t, L, trials, tuple(results))
