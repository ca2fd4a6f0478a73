"""Command-line entry points: run, check, gradcheck, theorem1, localize."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ._backend import backend_name

log = logging.getLogger("anglerig")

EXIT_OK, EXIT_FAIL, EXIT_ABORT = 0, 1, 2


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------

def cmd_run(args) -> int:
    from .simulation import ConfigError, ScenarioConfig, run

    try:
        data = _load_json(args.config)
        if args.seed is not None:
            data["seed"] = int(args.seed)
        cfg = ScenarioConfig.from_dict(data)
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_FAIL
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    trace = run(cfg)
    trace.write_csv(out / "trace.csv")
    summary = trace.summary()
    summary["config_name"] = cfg.name
    summary["seed"] = cfg.seed
    summary["backend"] = backend_name()
    _write_json(out / "summary.json", summary)
    _write_json(out / "config.resolved.json", cfg.resolved())
    log.info("run finished in %.1f s", time.time() - t0)
    if trace.aborted:
        print(f"run aborted: {trace.abort}", file=sys.stderr)
        return EXIT_ABORT
    print(f"wrote {out / 'trace.csv'} ({trace.t.size} records)")
    return EXIT_OK


# --------------------------------------------------------------------------
# check
# --------------------------------------------------------------------------

def load_framework(path):
    """Framework from JSON {d, positions, rotations?, edges (one-based)}."""
    from .geometry import JointState
    from .rigidity import DirectedGraph, Framework

    data = _load_json(path)
    for key in ("d", "positions", "edges"):
        if key not in data:
            raise ValueError(f"framework file is missing '{key}'")
    d = int(data["d"])
    p = np.asarray(data["positions"], dtype=float)
    if p.ndim != 2 or p.shape[1] != d:
        raise ValueError(f"positions must be a list of {d}-vectors")
    R = data.get("rotations")
    R = None if R is None else np.asarray(R, dtype=float)
    n = p.shape[0]
    edges = []
    for e in data["edges"]:
        if len(e) != 2:
            raise ValueError(f"edge {e} must have two endpoints")
        i, j = int(e[0]), int(e[1])
        if not (1 <= i <= n and 1 <= j <= n):
            raise ValueError(f"edge {e} refers to a vertex outside 1..{n}")
        edges.append((i - 1, j - 1))
    return Framework(DirectedGraph(n, tuple(edges)), JointState(p, R))


def cmd_check(args) -> int:
    from .rigidity import analyze

    try:
        fw = load_framework(args.framework)
    except FileNotFoundError as exc:
        print(f"error: framework file not found: {exc.filename}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps(analyze(fw).to_dict(), indent=2))
    return EXIT_OK


# --------------------------------------------------------------------------
# gradcheck
# --------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_FAIL
    results = run_all(args.trials, args.seed, fault=args.inject_fault)
    ok = True
    for r in results.values():
        status = "PASS" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{status} {r.name:24s} worst_rel_err={r.worst:.3e} threshold={r.threshold:.0e} "
              f"trials={r.trials} failures={r.failures}")
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# theorem1
# --------------------------------------------------------------------------

def cmd_theorem1(args) -> int:
    from .simulation import theorem1_experiment

    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_FAIL
    t0 = time.time()
    stats = theorem1_experiment(args.trials, args.d, args.seed)
    print(json.dumps({"d": args.d, "trials": stats.trials,
                      "inconsistencies": stats.inconsistencies,
                      "counts": dict(sorted(stats.counts.items())),
                      "seconds": round(time.time() - t0, 2)}, indent=2))
    return EXIT_OK if stats.inconsistencies == 0 else EXIT_FAIL


# --------------------------------------------------------------------------
# localize
# --------------------------------------------------------------------------

def cmd_localize(args) -> int:
    import warnings

    from .localization import run_localize_config

    try:
        data = _load_json(args.config)
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_FAIL
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_FAIL
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_localize_config(data)
    except (ValueError, TypeError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tr = res.trace
    n = tr.errors.shape[1]
    with open(out / "error_trace.csv", "w", newline="\n") as fh:
        fh.write(",".join(["t", "error"] + [f"err_{i + 1}" for i in range(n)] + ["graph"]) + "\n")
        for s in range(tr.t.size):
            vals = [tr.t[s], tr.total[s], *tr.errors[s]]
            fh.write(",".join(f"{v:.9g}" for v in vals) + f",{tr.graph_index[s] + 1}\n")
    summary = res.summary()
    _write_json(out / "summary.json", summary)
    for w in summary["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"decay rate {res.rate:.4g} 1/s (R^2 = {res.r2:.4f}), "
          f"error {tr.total[0]:.3g} m -> {tr.total[-1]:.3g} m")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anglerig",
                                 description="Angle rigidity analysis, localization and control.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and export metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="analyze a framework file")
    p.add_argument("--framework", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gradcheck", help="compare analytic derivatives with finite differences")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("theorem1", help="Monte-Carlo check of the bearing/angle rigidity equivalence")
    p.add_argument("--d", type=int, choices=(2, 3), required=True)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_theorem1)

    p = sub.add_parser("localize", help="fixed-truth localization under switching graphs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_localize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
