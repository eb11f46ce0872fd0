"""Generalized oriented bond percolation in d*+1 time-space dimensions.

Points live on levels t = 0, 1, ... with nonnegative spatial coordinates;
every point at level t-1 has d*+1 outgoing bonds, one per spatial axis plus
a "stay" move.  The module provides cluster growth, finite-horizon survival
proxies, exact and normalized open-path counting N_{t,z}, the martingale
study of the normalized totals, and critical-parameter bisection on either
the bond-probability axis or the perturbation-amplitude axis.

Trials are embarrassingly parallel: every trial derives its randomness from
(master seed, trial index), so results are identical under any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from . import _kernels
from .lattice import MAX_PACK_DIM, unit_vector
from .stats import (
    RandomStream,
    bernoulli_threshold,
    chain_array,
    checked_sum,
    pack_index,
    wilson_interval,
)


class BracketError(ValueError):
    """The supplied bisection bracket does not straddle the target."""


class EscalationBudgetError(RuntimeError):
    """Trial-count escalation could not separate an estimate from the
    target threshold."""


@dataclass(frozen=True)
class TimeSpacePoint:
    """A point (t, z) with level t >= 0 and nonnegative spatial coords."""

    t: int
    z: tuple

    def __post_init__(self):
        object.__setattr__(self, "z", tuple(int(c) for c in self.z))
        if self.t < 0:
            raise ValueError("level must be >= 0")
        if any(c < 0 for c in self.z):
            raise ValueError("spatial coordinates must be >= 0")

    @property
    def d_star(self) -> int:
        return len(self.z)


@dataclass(frozen=True)
class OrientedBond:
    """Bond from (t-1, z) to (t, w) with w = z or w = z + e_i."""

    tail: TimeSpacePoint
    head: TimeSpacePoint

    def __post_init__(self):
        if self.head.t != self.tail.t + 1:
            raise ValueError("bond must advance exactly one level")
        diff = tuple(b - a for a, b in zip(self.tail.z, self.head.z))
        if len(self.tail.z) != len(self.head.z):
            raise ValueError("endpoint dimensions differ")
        if not (all(c == 0 for c in diff)
                or (sum(diff) == 1 and all(c in (0, 1) for c in diff))):
            raise ValueError(f"{self.tail} -> {self.head} is not a bond")

    @property
    def direction(self) -> int:
        """0 for the stay move, s+1 for a step along spatial axis s."""
        diff = tuple(b - a for a, b in zip(self.tail.z, self.head.z))
        return diff.index(1) + 1 if any(diff) else 0


def bond(t: int, z, direction: int) -> OrientedBond:
    """Bond leaving (t-1, z) in the given direction, arriving at level t."""
    z = tuple(int(c) for c in z)
    if direction == 0:
        head = z
    else:
        head = tuple(a + b for a, b in zip(z, unit_vector(len(z), direction - 1)))
    return OrientedBond(TimeSpacePoint(t - 1, z), TimeSpacePoint(t, head))


@dataclass(frozen=True)
class BernoulliBondField:
    """I.i.d. Bernoulli(p) bond states, realized lazily from a stream."""

    p: float
    d_star: int
    horizon: int
    stream: RandomStream

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.d_star < 1:
            raise ValueError("d_star must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def open_probability(self) -> float:
        return self.p

    def is_open(self, b: OrientedBond) -> bool:
        if b.head.t > self.horizon:
            raise ValueError("bond level beyond field horizon")
        if b.tail.d_star != self.d_star:
            raise ValueError("bond dimension mismatch")
        stream = self.stream.derive(b.head.t, b.direction)
        if self.d_star <= MAX_PACK_DIM:
            return bool(stream.bernoulli(self.p, pack_index(b.tail.z)))
        return bool(stream.derive(*b.tail.z).bernoulli(self.p, 0))

    def kernel_spec(self, T: int) -> dict:
        if T > self.horizon:
            raise ValueError("sweep beyond field horizon")
        keys = np.empty((T, self.d_star + 1), dtype=np.uint64)
        for t in range(1, T + 1):
            for k in range(self.d_star + 1):
                keys[t - 1, k] = self.stream.derive(t, k).key
        thr = bernoulli_threshold(self.p)
        return {
            "kind": "bernoulli",
            "level_keys": keys,
            "thr": np.uint64(min(thr, (1 << 64) - 1)),
            "open_all": thr >= 1 << 64,
        }


def _sweep_args(field, T: int):
    dense, flats, packed, lvl, sizes, dstr, pshift = _kernels.slab_tables(
        field.d_star, T)
    ks = field.kernel_spec(T)
    if ks["kind"] == "bernoulli":
        args = (T, field.d_star + 1, dense, flats, packed, sizes, dstr,
                ks["level_keys"], ks["thr"], ks["open_all"])
        return "bernoulli", args
    args = (T, field.d_star + 1, dense, flats, packed, lvl, sizes, dstr,
            pshift, ks["xkeys"], ks["ykeys"], ks["amplitude"])
    return "coupled", args


def reach_level(field, T: int) -> int:
    """Highest level the origin's open cluster reaches, capped at T."""
    kind, args = _sweep_args(field, T)
    if kind == "bernoulli":
        return int(_kernels.bern_reach_level(*args))
    return int(_kernels.coupled_reach_level(*args))


def normalized_totals_sweep(field, T: int) -> np.ndarray:
    """|N-bar_t| for t = 0..T in one scaled sweep (per-level rescaling by
    (d*+1) * open probability keeps the values finite at any horizon)."""
    p = field.open_probability
    if p <= 0.0:
        raise ValueError("normalized sweep requires open probability > 0")
    inv = 1.0 / ((field.d_star + 1) * p)
    kind, args = _sweep_args(field, T)
    if kind == "bernoulli":
        return _kernels.bern_scaled_totals(*args, inv)
    return _kernels.coupled_scaled_totals(*args, inv)


def grow_cluster(field, origin: TimeSpacePoint, T: int):
    """Per-level reached-site sets of the open cluster of ``origin``.

    Returns a list indexed by level offset: entry l holds the spatial sites
    reached at level origin.t + l.  Once a level is empty all later levels
    stay empty.
    """
    if T < origin.t:
        raise ValueError("horizon below origin level")
    levels = [{origin.z}]
    for t in range(origin.t + 1, T + 1):
        cur = set()
        for z in levels[-1]:
            for k in range(len(z) + 1):
                b = bond(t, z, k)
                if field.is_open(b):
                    cur.add(b.head.z)
        levels.append(cur)
    return levels


@dataclass(frozen=True)
class LayerCounts:
    """Open-path counts at one level: exact integers, or values rescaled by
    ((d*+1) p)^level in scaled mode."""

    level: int
    counts: dict
    d_star: int
    scaled: bool
    norm_p: float | None = None

    @property
    def total(self):
        """|N_t| in exact mode, |N-bar_t| in scaled mode."""
        return sum(self.counts.values())


def count_paths(field, T: int, mode: str = "exact"):
    """Dynamic-programming path counts N_{t,z} for t = 0..T.

    Exact mode keeps arbitrary-precision integers and is intended for
    cross-checks at small horizons; scaled mode stores
    N_{t,z} / ((d*+1) p)^t with per-level rescaling.
    """
    if mode not in ("exact", "scaled"):
        raise ValueError("mode must be 'exact' or 'scaled'")
    if T < 0:
        raise ValueError("horizon must be >= 0")
    d_star = field.d_star
    inv = None
    if mode == "scaled":
        p = field.open_probability
        if p <= 0.0:
            raise ValueError("scaled mode requires open probability > 0")
        inv = 1.0 / ((d_star + 1) * p)
    origin = tuple([0] * d_star)
    layer = {origin: 1.0 if mode == "scaled" else 1}
    out = [LayerCounts(0, dict(layer), d_star, mode == "scaled",
                       field.open_probability if mode == "scaled" else None)]
    for t in range(1, T + 1):
        nxt = {}
        for z, v in layer.items():
            w = v * inv if inv is not None else v
            for k in range(d_star + 1):
                b = bond(t, z, k)
                if field.is_open(b):
                    nxt[b.head.z] = nxt.get(b.head.z, 0) + w
        out.append(LayerCounts(t, nxt, d_star, mode == "scaled",
                               field.open_probability if mode == "scaled" else None))
        layer = nxt
    return out


def normalized_total(layer: LayerCounts, p: float) -> float:
    """|N-bar_t| = |N_t| / ((d*+1) p)^t for the given layer."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if layer.scaled:
        if layer.norm_p != p:
            raise ValueError("scaled layer was normalized at a different p")
        return float(layer.total)
    return layer.total / float(((layer.d_star + 1) * p) ** layer.level)


def one_step_continuations(layer: LayerCounts, p: float, m: int,
                           stream: RandomStream, chunk: int = 4096) -> np.ndarray:
    """|N-bar_{t+1}| over m independent one-step continuations of a frozen
    level-t layer.  The conditional mean equals |N-bar_t| exactly, which is
    the martingale property this function exists to exercise."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    d_star = layer.d_star
    inv = 1.0 / ((d_star + 1) * p)
    if layer.scaled:
        if layer.norm_p != p:
            raise ValueError("scaled layer was normalized at a different p")
        items = [(z, float(v)) for z, v in layer.counts.items()]
    else:
        norm = float(((d_star + 1) * p) ** layer.level)
        items = [(z, v / norm) for z, v in layer.counts.items()]
    keys = []
    weights = []
    for z, v in items:
        if v == 0.0:
            continue
        zkey = int(pack_index(z)) if d_star <= MAX_PACK_DIM else None
        for k in range(d_star + 1):
            if zkey is not None:
                keys.append(stream.derive(zkey, k).key)
            else:
                keys.append(stream.derive(*z, k).key)
            weights.append(v * inv)
    if not keys:
        return np.zeros(m, dtype=np.float64)
    keys = np.array(keys, dtype=np.uint64)
    weights = np.array(weights, dtype=np.float64)
    thr = bernoulli_threshold(p)
    out = np.empty(m, dtype=np.float64)
    for lo in range(0, m, chunk):
        js = np.arange(lo, min(lo + chunk, m), dtype=np.uint64)
        raws = chain_array(keys[:, None], js[None, :])
        if thr >= 1 << 64:
            open_ = np.ones(raws.shape, dtype=np.float64)
        else:
            open_ = (raws < np.uint64(thr)).astype(np.float64)
        out[lo:lo + len(js)] = weights @ open_
    return out


# --- Monte Carlo drivers ---------------------------------------------------


@dataclass(frozen=True)
class SurvivalEstimate:
    """Finite-horizon survival proxy with a Wilson 95% interval."""

    axis: str
    param: float
    horizon: int
    trials: int
    survivors: int
    point: float
    ci_low: float
    ci_high: float


def _spec_field(spec: dict, trial: int, T: int):
    if spec["kind"] == "bernoulli":
        stream = RandomStream.from_seed(spec["seed"], spec["namespace"]).derive(trial)
        return BernoulliBondField(spec["p"], spec["d_star"], T, stream)
    if spec["kind"] == "coupled":
        from . import coupling

        real = coupling.coupled_realization(spec["seed"], spec["L"], spec["d"], trial)
        return coupling.CoupledBondField(real, coupling.Embedding(spec["d"]), T)
    raise ValueError(f"unknown field spec kind {spec['kind']!r}")


def _survival_chunk(args):
    spec, T, lo, hi = args
    out = np.empty(hi - lo, dtype=bool)
    for i, trial in enumerate(range(lo, hi)):
        field = _spec_field(spec, trial, T)
        out[i] = reach_level(field, T) >= T
    return out


def _totals_chunk(args):
    spec, T, checkpoints, lo, hi = args
    out = np.empty((hi - lo, len(checkpoints)), dtype=np.float64)
    for i, trial in enumerate(range(lo, hi)):
        field = _spec_field(spec, trial, T)
        totals = normalized_totals_sweep(field, T)
        out[i] = totals[list(checkpoints)]
    return out


def _run_chunks(worker, make_args, n: int, workers: int):
    if workers <= 1 or n < 2 * workers:
        return worker(make_args(0, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    jobs = [make_args(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
    ctx = get_context("fork")
    with ctx.Pool(workers) as pool:
        parts = pool.map(worker, jobs)
    return np.concatenate(parts)


def survival_from_spec(spec: dict, axis: str, param: float, T: int, n: int,
                       workers: int = 1) -> SurvivalEstimate:
    if n < 1:
        raise ValueError("need at least one trial")
    if T < 1:
        raise ValueError("horizon must be >= 1")
    flags = _run_chunks(_survival_chunk,
                        lambda lo, hi: (spec, T, lo, hi), n, workers)
    k = int(flags.sum())
    lo, hi = wilson_interval(k, n)
    return SurvivalEstimate(axis, float(param), T, n, k, k / n, lo, hi)


def survival_probability(p: float, d_star: int, T: int, n: int, seed: int,
                         workers: int = 1,
                         namespace: str = "survival") -> SurvivalEstimate:
    """P(the origin's cluster reaches level T), the desk-scale stand-in for
    the infinite-cluster probability.  Trials are keyed by trial index only,
    so estimates at different p share driving noise and are pathwise
    monotone in p."""
    spec = {"kind": "bernoulli", "p": float(p), "d_star": int(d_star),
            "seed": int(seed), "namespace": namespace}
    return survival_from_spec(spec, "p", float(p), T, n, workers)


@dataclass(frozen=True)
class MartingaleStudy:
    """Distribution summary of |N-bar_T| over independent trials."""

    axis: str
    param: float
    d_star: int
    horizon: int
    eps: float
    trials: int
    checkpoint_levels: tuple
    checkpoint_values: np.ndarray  # shape (trials, len(checkpoint_levels))

    @property
    def values(self) -> np.ndarray:
        """|N-bar_T| per trial (the last checkpoint)."""
        return self.checkpoint_values[:, -1]

    @property
    def mean(self) -> float:
        return checked_sum(self.values) / self.trials

    @property
    def se(self) -> float:
        if self.trials < 2:
            return float("nan")
        return float(self.values.std(ddof=1) / np.sqrt(self.trials))

    def fraction_above(self, eps: float | None = None) -> dict:
        """Surviving-mass fraction P(|N-bar_t| > eps) per checkpoint level."""
        e = self.eps if eps is None else eps
        return {
            int(t): float((self.checkpoint_values[:, i] > e).mean())
            for i, t in enumerate(self.checkpoint_levels)
        }

    def histogram(self, bins: int = 30):
        return np.histogram(self.values, bins=bins)


def _norm_checkpoints(checkpoints, T: int) -> tuple:
    if checkpoints is None:
        checkpoints = (T,)
    checkpoints = tuple(int(t) for t in checkpoints)
    if (not checkpoints or checkpoints[-1] != T
            or any(t < 0 or t > T for t in checkpoints)):
        raise ValueError("checkpoints must lie in [0, T] and end at T")
    return checkpoints


def martingale_limit_study(p: float, d_star: int, T: int, n: int, seed: int,
                           eps: float = 1e-3, checkpoints=None,
                           workers: int = 1) -> MartingaleStudy:
    """Sample |N-bar_T| over n trials of a Bernoulli(p) field.

    The mean is 1 at every horizon; whether mass survives (high dimension,
    large p) or drains to zero (d* = 1, 2) is what the summary reports.
    ``checkpoints`` asks for |N-bar_t| at intermediate levels in one sweep.
    """
    if p <= 0.0:
        raise ValueError("p must be > 0")
    checkpoints = _norm_checkpoints(checkpoints, T)
    spec = {"kind": "bernoulli", "p": float(p), "d_star": int(d_star),
            "seed": int(seed), "namespace": "martingale"}
    values = _run_chunks(_totals_chunk,
                         lambda lo, hi: (spec, T, checkpoints, lo, hi),
                         n, workers)
    return MartingaleStudy("p", float(p), d_star, T, eps, n, checkpoints, values)


def coupled_martingale_study(L: float, d: int, T: int, n: int, seed: int,
                             eps: float = 1e-3, checkpoints=None,
                             workers: int = 1) -> MartingaleStudy:
    """Same study driven through the embedded overlap-box field."""
    from .coupling import p_hat

    if p_hat(L) <= 0.0:
        raise ValueError("amplitude below 1/2 opens no bonds")
    checkpoints = _norm_checkpoints(checkpoints, T)
    spec = {"kind": "coupled", "L": float(L), "d": int(d), "seed": int(seed)}
    values = _run_chunks(_totals_chunk,
                         lambda lo, hi: (spec, T, checkpoints, lo, hi),
                         n, workers)
    return MartingaleStudy("L", float(L), d - 1, T, eps, n, checkpoints, values)


@dataclass(frozen=True)
class CriticalSearchResult:
    """Bisection bracket for the parameter where the survival proxy crosses
    the target threshold."""

    axis: str
    theta_star: float
    tol: float
    bracket_low: float
    bracket_high: float
    status: str  # "bracketed" or "below_bracket"
    low_estimate: SurvivalEstimate | None
    high_estimate: SurvivalEstimate
    iterations: tuple

    def to_dict(self) -> dict:
        def est(e):
            return None if e is None else {
                "axis": e.axis, "param": e.param, "horizon": e.horizon,
                "trials": e.trials, "survivors": e.survivors,
                "point": e.point, "ci_low": e.ci_low, "ci_high": e.ci_high,
            }
        return {
            "axis": self.axis, "theta_star": self.theta_star, "tol": self.tol,
            "bracket_low": self.bracket_low, "bracket_high": self.bracket_high,
            "status": self.status,
            "low_estimate": est(self.low_estimate),
            "high_estimate": est(self.high_estimate),
            "iterations": [est(e) for e in self.iterations],
        }


def bisect_critical(axis: str, d_star: int, T: int, n: int, theta_star: float,
                    tol: float, seed: int, bracket, *, workers: int = 1,
                    max_escalations: int = 3) -> CriticalSearchResult:
    """Bisect the survival-proxy crossing on the p-axis or the L-axis.

    Every evaluation whose confidence interval covers ``theta_star`` doubles
    its trial count, up to ``max_escalations`` doublings; running out of
    budget raises EscalationBudgetError.  A bracket whose high end stays
    below the target raises BracketError; a bracket whose low end is already
    above the target returns immediately with a degenerate bracket and
    status "below_bracket".
    """
    if axis not in ("p", "L"):
        raise ValueError("axis must be 'p' or 'L'")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if not 0.0 < theta_star < 1.0:
        raise ValueError("theta_star must lie in (0, 1)")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError("bracket_low must be < bracket_high")

    def proxy(param: float, trials: int) -> SurvivalEstimate:
        if axis == "p":
            return survival_probability(param, d_star, T, trials, seed,
                                        workers=workers)
        from .coupling import coupled_survival

        return coupled_survival(param, d_star + 1, T, trials, seed,
                                workers=workers)

    iterations = []

    def evaluate(param: float) -> SurvivalEstimate:
        trials = n
        for _ in range(max_escalations + 1):
            est = proxy(param, trials)
            iterations.append(est)
            if not est.ci_low <= theta_star <= est.ci_high:
                return est
            trials *= 2
        raise EscalationBudgetError(
            f"estimate at {axis}={param} cannot be separated from "
            f"theta*={theta_star} within the escalation budget"
        )

    hi_est = evaluate(hi)
    if hi_est.ci_high < theta_star:
        raise BracketError(
            f"survival proxy at {axis}={hi} is below theta*={theta_star}; "
            "bracket does not straddle the crossing"
        )
    lo_est = evaluate(lo)
    if lo_est.ci_low > theta_star:
        return CriticalSearchResult(axis, theta_star, tol, lo, lo,
                                    "below_bracket", None, lo_est,
                                    tuple(iterations))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        est = evaluate(mid)
        if est.point < theta_star:
            lo, lo_est = mid, est
        else:
            hi, hi_est = mid, est
    return CriticalSearchResult(axis, theta_star, tol, lo, hi, "bracketed",
                                lo_est, hi_est, tuple(iterations))
