"""Batch experiment driver.

Subcommands cover the study surface: ``phat-sweep`` (formula vs empirical
bond probability), ``survival`` (finite-horizon survival curves on the p- or
L-axis), ``martingale`` (normalized path-count totals per trial),
``critical`` (bisection for the crossing parameter), ``check-measures``
(measure-identity battery) and ``count-paths`` (per-level totals).

Configuration comes from flags, optionally backed by a ``key = value`` file
(flags win).  PERCLAB_SEED supplies a default seed and PERCLAB_OUTDIR a
default output directory.  Output files embed the seed and a hash of the
scientific configuration, so any row can be reproduced bit-exactly;
wall-clock timing goes to stderr only, keeping files byte-identical across
reruns and worker counts.

Exit codes: 0 success, 1 validation error, 2 statistical battery failure,
3 escalation budget exhaustion.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

from . import __version__
from .coupling import bond_indicators, coupled_survival, p_hat
from .gobp import (
    BernoulliBondField,
    BracketError,
    EscalationBudgetError,
    bisect_critical,
    coupled_martingale_study,
    count_paths,
    martingale_limit_study,
    normalized_total,
    survival_probability,
)
from .measures import (
    HypothesisError,
    check_measure_identity,
    load_event_file,
    run_identity_battery,
)
from .stats import RandomStream, wilson_interval

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BATTERY = 2
EXIT_BUDGET = 3

DEFAULT_SEED = 20260810


def _env_seed() -> int:
    raw = os.environ.get("PERCLAB_SEED")
    return int(raw) if raw else DEFAULT_SEED


def _resolve_out(path: str) -> str:
    outdir = os.environ.get("PERCLAB_OUTDIR")
    if outdir and not os.path.isabs(path):
        os.makedirs(outdir, exist_ok=True)
        return os.path.join(outdir, path)
    return path


def _load_config_file(path: str) -> dict:
    """``key = value`` lines; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _coerce(value, like):
    if like is int:
        return int(value)
    if like is float:
        return float(value)
    return str(value)


def _merged(args: argparse.Namespace, key: str, like, default=None, required=False):
    """Flag value, else config-file value, else default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    cfg = getattr(args, "_cfg", {})
    if key in cfg:
        return _coerce(cfg[key], like)
    if required and default is None:
        raise ValueError(f"missing required option --{key.replace('_', '-')}")
    return default


def _grid(text: str):
    vals = [float(v) for v in text.split(",") if v.strip() != ""]
    if not vals:
        raise ValueError("empty value grid")
    return vals


def _config_hash(config: dict) -> str:
    canon = ";".join(f"{k}={config[k]}" for k in sorted(config))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _write_csv(path: str, command: str, config: dict, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        canon = ";".join(f"{k}={config[k]}" for k in sorted(config))
        fh.write(f"# perclab {command} schema=1 version={__version__}\n")
        fh.write(f"# config: {canon}\n")
        fh.write(f"# config_hash={_config_hash(config)}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    print(f"wrote {path}", file=sys.stderr)


def _write_json(path: str, command: str, config: dict, payload: dict):
    doc = {
        "command": command,
        "schema": 1,
        "version": __version__,
        "config": {k: config[k] for k in sorted(config)},
        "config_hash": _config_hash(config),
        "result": payload,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {path}", file=sys.stderr)


def _axis_param(args):
    """Exactly one of p / L decides the parameter axis."""
    p = _merged(args, "p", float)
    L = _merged(args, "L", float)
    if (p is None) == (L is None):
        raise ValueError("supply exactly one of --p and --L")
    return ("p", p) if p is not None else ("L", L)


def cmd_phat_sweep(args) -> int:
    grid = _grid(_merged(args, "grid", str, "0.75,1,2,5"))
    n = _merged(args, "trials", int, 100_000)
    seed = _merged(args, "seed", int, _env_seed())
    out = _resolve_out(_merged(args, "out", str, "phat_sweep.csv"))
    if n < 1:
        raise ValueError("trials must be >= 1")
    config = {"grid": ",".join(repr(v) for v in grid), "trials": n, "seed": seed}
    rows = []
    origin2 = (0, 0)
    for L in grid:
        formula = p_hat(L)
        opens = bond_indicators(seed, L, [(origin2, 0)], n)[0]
        k = int(opens.sum())
        lo, hi = wilson_interval(k, n)
        rows.append((L, formula, k / n, lo, hi, n, seed))
    _write_csv(out, "phat-sweep", config,
               ["L", "phat_formula", "phat_empirical", "ci_low", "ci_high",
                "trials", "seed"], rows)
    return EXIT_OK


def cmd_survival(args) -> int:
    grid_text = _merged(args, "grid", str)
    if grid_text is not None:
        axis = _merged(args, "axis", str, required=True)
        if axis not in ("p", "L"):
            raise ValueError("axis must be 'p' or 'L'")
        grid = _grid(grid_text)
    else:
        axis, value = _axis_param(args)
        grid = [value]
    d = _merged(args, "d", int, required=True)
    T = _merged(args, "T", int, required=True)
    n = _merged(args, "trials", int, 1000)
    seed = _merged(args, "seed", int, _env_seed())
    workers = _merged(args, "workers", int, 1)
    out = _resolve_out(_merged(args, "out", str, "survival.csv"))
    if d < 2:
        raise ValueError("need dimension d >= 2")
    config = {"axis": axis, "grid": ",".join(repr(v) for v in grid),
              "d": d, "T": T, "trials": n, "seed": seed}
    rows = []
    for value in grid:
        if axis == "p":
            est = survival_probability(value, d - 1, T, n, seed, workers=workers)
        else:
            est = coupled_survival(value, d, T, n, seed, workers=workers)
        rows.append((axis, value, T, est.point, est.ci_low, est.ci_high,
                     est.survivors, n, seed))
    _write_csv(out, "survival", config,
               ["axis", "param", "T", "estimate", "ci_low", "ci_high",
                "survivors", "trials", "seed"], rows)
    return EXIT_OK


def cmd_martingale(args) -> int:
    axis, value = _axis_param(args)
    d = _merged(args, "d", int, required=True)
    T = _merged(args, "T", int, required=True)
    n = _merged(args, "trials", int, 1000)
    eps = _merged(args, "eps", float, 1e-3)
    seed = _merged(args, "seed", int, _env_seed())
    workers = _merged(args, "workers", int, 1)
    cps_text = _merged(args, "checkpoints", str)
    checkpoints = tuple(int(v) for v in cps_text.split(",")) if cps_text else (T,)
    out = _resolve_out(_merged(args, "out", str, "martingale.csv"))
    if d < 2:
        raise ValueError("need dimension d >= 2")
    config = {"axis": axis, "param": repr(value), "d": d, "T": T, "trials": n,
              "eps": repr(eps), "seed": seed,
              "checkpoints": ",".join(str(c) for c in checkpoints)}
    if axis == "p":
        study = martingale_limit_study(value, d - 1, T, n, seed, eps=eps,
                                       checkpoints=checkpoints, workers=workers)
    else:
        study = coupled_martingale_study(value, d, T, n, seed, eps=eps,
                                         checkpoints=checkpoints, workers=workers)
    header = ["trial"] + [f"nbar_t{t}" for t in study.checkpoint_levels]
    rows = [(i, *map(float, study.checkpoint_values[i]))
            for i in range(study.trials)]
    _write_csv(out, "martingale", config, header, rows)
    fr = study.fraction_above()
    print(f"mean={study.mean:.6f} se={study.se:.6f} "
          f"fraction_above_eps={fr}", file=sys.stderr)
    return EXIT_OK


def cmd_critical(args) -> int:
    axis = _merged(args, "axis", str, required=True)
    d = _merged(args, "d", int, required=True)
    T = _merged(args, "T", int, required=True)
    n = _merged(args, "trials", int, 1000)
    theta = _merged(args, "theta_star", float, 0.5)
    tol = _merged(args, "tol", float, 0.05)
    seed = _merged(args, "seed", int, _env_seed())
    workers = _merged(args, "workers", int, 1)
    bracket_text = _merged(args, "bracket", str, required=True)
    bracket = _grid(bracket_text)
    if len(bracket) != 2:
        raise ValueError("--bracket wants 'low,high'")
    max_esc = _merged(args, "max_escalations", int, 3)
    out = _resolve_out(_merged(args, "out", str, "critical.json"))
    if d < 2:
        raise ValueError("need dimension d >= 2")
    config = {"axis": axis, "d": d, "T": T, "trials": n,
              "theta_star": repr(theta), "tol": repr(tol), "seed": seed,
              "bracket": ",".join(repr(v) for v in bracket),
              "max_escalations": max_esc}
    result = bisect_critical(axis, d - 1, T, n, theta, tol, seed, bracket,
                             workers=workers, max_escalations=max_esc)
    _write_json(out, "critical", config, result.to_dict())
    return EXIT_OK


def cmd_check_measures(args) -> int:
    t = _merged(args, "t", int, 5)
    L = _merged(args, "L", float, 1.0)
    n = _merged(args, "trials", int, 100_000)
    seed = _merged(args, "seed", int, _env_seed())
    out = _resolve_out(_merged(args, "out", str, "check_measures.json"))
    event_file = _merged(args, "event", str)
    min_pass = _merged(args, "min_pass", int)
    config = {"t": t, "L": repr(L), "trials": n, "seed": seed,
              "event": event_file or "<bundled battery>"}

    def report_dict(rep):
        return {
            "departure": {"value": rep.departure.value, "se": rep.departure.se},
            "arrival": {"value": rep.arrival.value, "se": rep.arrival.se},
            "difference": rep.difference,
            "pooled_se": rep.pooled_se,
            "passed": rep.passed,
        }

    if event_file:
        event = load_event_file(event_file)
        rep = check_measure_identity(t, event, L, n, seed)
        payload = {"mode": "single", "report": report_dict(rep)}
        _write_json(out, "check-measures", config, payload)
        return EXIT_OK if rep.passed else EXIT_BATTERY
    battery = run_identity_battery(t, L, n, seed)
    payload = {
        "mode": "battery",
        "n_configs": len(battery.results),
        "n_passed": battery.n_passed,
        "reports": {name: report_dict(rep) for name, rep in battery.results},
    }
    _write_json(out, "check-measures", config, payload)
    ok = battery.passed(min_pass)
    if not ok:
        print(f"battery failed: {battery.n_passed}/{len(battery.results)} passed",
              file=sys.stderr)
    return EXIT_OK if ok else EXIT_BATTERY


def cmd_count_paths(args) -> int:
    axis, value = _axis_param(args)
    d = _merged(args, "d", int, required=True)
    T = _merged(args, "T", int, required=True)
    mode = _merged(args, "mode", str, "exact")
    seed = _merged(args, "seed", int, _env_seed())
    out = _resolve_out(_merged(args, "out", str, "count_paths.csv"))
    if d < 2:
        raise ValueError("need dimension d >= 2")
    config = {"axis": axis, "param": repr(value), "d": d, "T": T,
              "mode": mode, "seed": seed}
    if axis == "p":
        field = BernoulliBondField(value, d - 1, T,
                                   RandomStream.from_seed(seed, "count").derive(0))
    else:
        from .coupling import CoupledBondField, Embedding, coupled_realization

        field = CoupledBondField(coupled_realization(seed, value, d, 0),
                                 Embedding(d), T)
    layers = count_paths(field, T, mode=mode)
    p_norm = field.open_probability
    rows = []
    for layer in layers:
        total = layer.total
        nbar = normalized_total(layer, p_norm) if p_norm > 0 else ""
        rows.append((layer.level, total, nbar))
    _write_csv(out, "count-paths", config, ["t", "total", "normalized_total"], rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perclab",
        description="oriented percolation on perturbed lattices: experiment driver",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_workers=True):
        p.add_argument("--config", help="key = value defaults file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if with_workers:
            p.add_argument("--workers", type=int)

    p = sub.add_parser("phat-sweep", help="formula vs empirical bond probability")
    common(p, with_workers=False)
    p.add_argument("--grid", help="comma-separated amplitudes")
    p.add_argument("--trials", type=int)
    p.set_defaults(fn=cmd_phat_sweep)

    p = sub.add_parser("survival", help="finite-horizon survival proxy curve")
    common(p)
    p.add_argument("--axis", choices=("p", "L"))
    p.add_argument("--grid", help="comma-separated parameter values")
    p.add_argument("--p", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--trials", type=int)
    p.set_defaults(fn=cmd_survival)

    p = sub.add_parser("martingale", help="normalized path-count totals per trial")
    common(p)
    p.add_argument("--p", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--checkpoints", help="comma-separated levels, ending at T")
    p.set_defaults(fn=cmd_martingale)

    p = sub.add_parser("critical", help="bisect the survival-proxy crossing")
    common(p)
    p.add_argument("--axis", choices=("p", "L"))
    p.add_argument("--d", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--theta-star", dest="theta_star", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--bracket", help="low,high")
    p.add_argument("--max-escalations", dest="max_escalations", type=int)
    p.set_defaults(fn=cmd_critical)

    p = sub.add_parser("check-measures", help="measure-identity battery")
    common(p, with_workers=False)
    p.add_argument("--event", help="JSON event file; omit for bundled battery")
    p.add_argument("--t", type=int)
    p.add_argument("--L", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--min-pass", dest="min_pass", type=int)
    p.set_defaults(fn=cmd_check_measures)

    p = sub.add_parser("count-paths", help="per-level open path totals")
    common(p, with_workers=False)
    p.add_argument("--p", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--mode", choices=("exact", "scaled"))
    p.set_defaults(fn=cmd_count_paths)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._cfg = _load_config_file(args.config) if args.config else {}
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    start = time.perf_counter()
    try:
        code = args.fn(args)
    except EscalationBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (BracketError, HypothesisError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"wall_time_s={time.perf_counter() - start:.3f}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
