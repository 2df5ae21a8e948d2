"""Command-line experiment harness.

Subcommands::

    tstiefel run        seeded benchmark grid over problems x retractions
    tstiefel verify     run the property-check suite and report pass/fail
    tstiefel dim        print the manifold dimension for (n, p, l)
    tstiefel decompose  t-SVD / t-QR / t-PD of a tensor container file

``run`` writes one JSON-lines file per (retraction, trial) with an
iteration record per line, plus ``summary.csv`` with per-retraction means
of {obj, re, iter, time, feasi}.  Options may come from a plain
``key=value`` config file; explicit flags win.  The environment variable
``TSTIEFEL_THREADS`` caps how many trials run concurrently (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import problems, tlinalg
from .manifold import RETRACTIONS, TRANSPORTS, TensorStiefel, manifold_dim
from .problems import FAMILIES, alternating_solve, make_instance
from .solver import SolverConfig, solve
from .tcore import load_tensor, save_tensor
from .verify import run_checks

_MASK64 = (1 << 64) - 1


def derive_seed(master, index):
    """Splitmix-style expansion of a master seed into per-trial seeds."""
    z = (master + 0x9E3779B97F4A7C15 * (index + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _read_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


_RUN_DEFAULTS = {
    "problem": "best-approx",
    "n": 50,
    "p": 10,
    "l": 8,
    "trials": 50,
    "seed": 0,
    "retraction": "all",
    "transport": "projection",
    "missing_ratio": 0.3,
    "noise": 0.1,
    "n_samples": 3,
    "rho": 0.1,
    "alpha0": 1e-3,
    "tol_x": 1e-6,
    "tol_f": 1e-12,
    "max_iter": 1000,
    "out": "runs",
    "trace_csv": False,
    "deterministic": False,
}

_INT_KEYS = {"n", "p", "l", "trials", "seed", "max_iter", "n_samples"}
_FLOAT_KEYS = {"missing_ratio", "noise", "rho", "alpha0", "tol_x", "tol_f"}
_BOOL_KEYS = {"trace_csv", "deterministic"}


def _coerce(key, value):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        if isinstance(value, bool):
            return value
        return str(value).lower() in ("1", "true", "yes", "on")
    return value


def _merge_run_options(args):
    """Defaults, then config file, then explicit flags."""
    merged = dict(_RUN_DEFAULTS)
    if args.config:
        for key, val in _read_config_file(args.config).items():
            if key not in _RUN_DEFAULTS:
                raise ValueError(f"unknown config key {key!r}")
            merged[key] = _coerce(key, val)
    for key in _RUN_DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = _coerce(key, flag)
    return merged


def _instance_kwargs(opts):
    if opts["problem"] == "missing-entries":
        return {"missing_ratio": opts["missing_ratio"]}
    if opts["problem"] == "joint-fdiag":
        return {"noise": opts["noise"], "n_samples": opts["n_samples"]}
    if opts["problem"] == "sparse-pca":
        return {"rho": opts["rho"]}
    return {}


def _run_single_trial(opts, retraction, trial):
    seed = derive_seed(opts["seed"], trial)
    instance = make_instance(
        opts["problem"], opts["n"], opts["p"], opts["l"], seed,
        **_instance_kwargs(opts),
    )
    mfd = TensorStiefel(*instance.shape)
    x0 = mfd.random_point(seed=derive_seed(seed, 1))
    config = SolverConfig(
        alpha0=opts["alpha0"], tol_x=opts["tol_x"], tol_f=opts["tol_f"],
        max_iter=opts["max_iter"], retraction=retraction,
        transport=opts["transport"], seed=seed,
    )
    if opts["problem"] == "missing-entries":
        u, s, record = alternating_solve(instance, x0, config)
        metrics = instance.metrics(u, s)
    else:
        u, record = solve(instance, x0, config)
        metrics = instance.metrics(u)
    if opts["deterministic"]:
        record.zero_wall_time()
    return record, metrics


def _write_trial_outputs(opts, retraction, trial, record):
    stem = f"{opts['problem']}_{retraction}_t{trial:03d}"
    record.to_jsonl(os.path.join(opts["out"], stem + ".jsonl"))
    if opts["trace_csv"]:
        with open(os.path.join(opts["out"], stem + "_trace.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective"])
            for k, obj in enumerate(record.objective):
                writer.writerow([k, repr(obj)])


def cmd_run(args):
    try:
        opts = _merge_run_options(args)
        if opts["problem"] not in FAMILIES:
            raise ValueError(f"unknown problem {opts['problem']!r}")
        if opts["retraction"] != "all" and opts["retraction"] not in RETRACTIONS:
            raise ValueError(f"unknown retraction {opts['retraction']!r}")
        if opts["transport"] not in TRANSPORTS:
            raise ValueError(f"unknown transport {opts['transport']!r}")
        if opts["trials"] < 1:
            raise ValueError("trials must be >= 1")
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    arms = ["qr", "polar", "cayley"] if opts["retraction"] == "all" \
        else [opts["retraction"]]
    os.makedirs(opts["out"], exist_ok=True)
    threads = max(1, int(os.environ.get("TSTIEFEL_THREADS", "1")))

    jobs = [(retraction, trial) for retraction in arms
            for trial in range(opts["trials"])]

    def worker(job):
        retraction, trial = job
        try:
            record, metrics = _run_single_trial(opts, retraction, trial)
            return retraction, trial, record, metrics, None
        except Exception as exc:  # noqa: BLE001 - per-trial failures are reported
            return retraction, trial, None, None, exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(worker, jobs))
    else:
        results = [worker(job) for job in jobs]

    per_arm = {retraction: [] for retraction in arms}
    failures = 0
    trial_rows = []
    for retraction, trial, record, metrics, err in results:
        if err is not None:
            failures += 1
            print(f"trial {trial} ({retraction}) failed: {err}", file=sys.stderr)
            continue
        _write_trial_outputs(opts, retraction, trial, record)
        summary = record.summary()
        row = {
            "obj": metrics["obj"],
            "re": metrics["re"],
            "iter": summary["iter"],
            "time": summary["time"],
            "feasi": metrics["feasi"],
        }
        per_arm[retraction].append(row)
        trial_rows.append((retraction, trial, row))

    with open(os.path.join(opts["out"], "trials.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "retraction", "trial",
                         "obj", "re", "iter", "time", "feasi"])
        for retraction, trial, row in trial_rows:
            writer.writerow([
                opts["problem"], retraction, trial,
                repr(row["obj"]),
                "" if math.isnan(row["re"]) else repr(row["re"]),
                row["iter"], repr(row["time"]), repr(row["feasi"]),
            ])

    with open(os.path.join(opts["out"], "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "retraction", "obj", "re", "iter", "time", "feasi"])
        for retraction in arms:
            rows = per_arm[retraction]
            if not rows:
                continue
            means = {
                key: sum(r[key] for r in rows) / len(rows)
                for key in ("obj", "re", "iter", "time", "feasi")
            }
            writer.writerow([
                opts["problem"], retraction,
                repr(means["obj"]),
                "" if math.isnan(means["re"]) else repr(means["re"]),
                repr(means["iter"]), repr(means["time"]), repr(means["feasi"]),
            ])
    print(f"wrote {os.path.join(opts['out'], 'summary.csv')}")

    if failures and all(not rows for rows in per_arm.values()):
        return 3
    return 0 if failures == 0 else 3


def cmd_verify(args):
    failures = run_checks(only=args.only)
    return 1 if failures else 0


def cmd_dim(args):
    print(manifold_dim(args.n, args.p, args.l))
    return 0


def cmd_decompose(args):
    a = load_tensor(args.tensor)
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "t-svd":
        u, s, v = tlinalg.t_svd(a, compact=args.compact)
        factors = {"u": u, "s": s, "v": v}
    elif args.kind == "t-qr":
        q, r = tlinalg.t_qr(a)
        factors = {"q": q, "r": r}
    elif args.kind == "t-pd":
        p, h = tlinalg.t_polar(a)
        factors = {"p": p, "h": h}
    else:
        raise ValueError(f"unknown decomposition {args.kind!r}")
    for name, tensor in factors.items():
        path = os.path.join(args.out, f"{name}.tt3d")
        save_tensor(path, tensor)
        print(f"wrote {path} shape={tensor.shape}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tstiefel",
        description="Benchmark harness for optimization over the tensor "
                    "Stiefel manifold under the t-product.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a seeded benchmark grid")
    run.add_argument("--config", help="key=value option file (flags win)")
    run.add_argument("--problem", choices=FAMILIES)
    run.add_argument("--n", type=int)
    run.add_argument("--p", type=int)
    run.add_argument("--l", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--retraction", choices=RETRACTIONS + ("all",))
    run.add_argument("--transport", choices=TRANSPORTS)
    run.add_argument("--missing-ratio", dest="missing_ratio", type=float)
    run.add_argument("--noise", type=float)
    run.add_argument("--n-samples", dest="n_samples", type=int)
    run.add_argument("--rho", type=float)
    run.add_argument("--alpha0", type=float)
    run.add_argument("--tol-x", dest="tol_x", type=float)
    run.add_argument("--tol-f", dest="tol_f", type=float)
    run.add_argument("--max-iter", dest="max_iter", type=int)
    run.add_argument("--out")
    run.add_argument("--trace-csv", dest="trace_csv", action="store_const",
                     const=True, help="also write per-run objective traces")
    run.add_argument("--deterministic", action="store_const", const=True,
                     help="zero wall-time fields for bitwise-identical outputs")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the property-check suite")
    ver.add_argument("--only", help="substring filter on check names")
    ver.set_defaults(func=cmd_verify)

    dim = sub.add_parser("dim", help="print the manifold dimension")
    dim.add_argument("n", type=int)
    dim.add_argument("p", type=int)
    dim.add_argument("l", type=int)
    dim.set_defaults(func=cmd_dim)

    dec = sub.add_parser("decompose", help="factorize a tensor container file")
    dec.add_argument("tensor", help="path to a TT3D container")
    dec.add_argument("--kind", choices=("t-svd", "t-qr", "t-pd"), default="t-svd")
    dec.add_argument("--compact", action="store_true")
    dec.add_argument("--out", default="factors")
    dec.set_defaults(func=cmd_decompose)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
