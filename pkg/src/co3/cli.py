"""
Command-line front end.

    co3 run --config exp.ini [--out DIR] [--seed N]
    co3 verify --suite {lemma1,convergence,distfit} [--out DIR] [--seed N]
    co3 fit SAMPLES_FILE [--out DIR]

Exit status: 0 success, 1 a verification bound was violated, 2 bad input.
``CO3_THREADS`` sets the number of worker threads (0 = single-threaded).
"""
import argparse
import datetime as _dt
import json
import math
import os
import sys
from typing import List, Optional

import numpy as np

from co3 import report
from co3.config import load_config
from co3.distfit import Family, GenNormParams, fit_all_families, gennorm_sample
from co3.errors import Co3Error, DegenerateSampleError, InsufficientSampleError
from co3.fedsim import default_threads, run_experiment
from co3.fpquant import FP4, FP8
from co3.tasks import build_task

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2

SUITES = ("lemma1", "convergence", "distfit")
CONVERGENCE_ROUNDS = (100, 400, 1600)
DISTFIT_BETAS = (1.0, 1.2, 1.5, 2.0)


class InputError(Co3Error):
    pass


def make_run_dir(base: str, stem: str, seed: int) -> str:
    """Create a fresh directory under ``base``; never reuses an existing one."""
    os.makedirs(base, exist_ok=True)
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    name = f"{stamp}-{stem}-seed{seed}"
    for k in range(10_000):
        path = os.path.join(base, name if k == 0 else f"{name}-{k}")
        try:
            os.mkdir(path)
            return path
        except FileExistsError:
            continue
    raise OSError(f"could not create a unique run directory under {base}")


def write_manifest(out_dir, config_path, seed, schemes, extra=None) -> str:
    manifest = {
        "config": os.path.abspath(config_path) if config_path else None,
        "output_dir": os.path.abspath(out_dir),
        "seed": seed,
        "schemes": list(schemes),
        "timestamp": _dt.datetime.now().isoformat(timespec="seconds"),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


# -- run -----------------------------------------------------------------------

def cmd_run(args, out=None) -> int:
    out = out or sys.stdout
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    task = build_task(cfg.task)
    threads = default_threads()
    stem = os.path.splitext(os.path.basename(args.config))[0]
    run_dir = make_run_dir(args.out or "runs", stem, cfg.seed)
    write_manifest(run_dir, args.config, cfg.seed, [s.label for s in cfg.schemes],
                   {"threads": threads, "task": cfg.task.kind.value, "dimension": task.dim})
    results = []
    for scheme in cfg.schemes:
        res = run_experiment(task, scheme, threads=threads)
        results.append(res)
        report.records_csv(res.records, os.path.join(run_dir, f"{scheme.label}.csv"))
        print(f"{scheme.label:>14s}  bits={res.ledger.total_bits:<12d} final_loss={res.final_loss:.6g} "
              f"final_gap={res.final_gap:.6g}", file=out)
    report.summary_csv(results, task.dim, os.path.join(run_dir, "summary.csv"))
    print(f"wrote {run_dir}", file=out)
    return EXIT_OK


# -- verify --------------------------------------------------------------------

def _suite_lemma1(seed, out):
    from co3.theory import TAIL_BOUND, verify_lemma1

    rows, ok = [], True
    for fmt in (FP4, FP8):
        rep = verify_lemma1(fmt, seed=seed)
        print(f"format {fmt.label}: theory-scale bias {rep.format.bias:.6g}, largest level {rep.format.max_level:.6g}",
              file=out)
        for r in rep.rows:
            status = "ok" if r.ok else "VIOLATION"
            print(f"  beta={r.beta:<5g} E[E^2]={r.second_moment:.5f} (bound {r.bound:g})  "
                  f"tail mc={r.tail_mc:.5f} quad={r.tail_quad:.5f} (bound {TAIL_BOUND:g})  {status}", file=out)
            rows.append([fmt.label, r.beta, r.second_moment, r.bound, r.tail_mc, r.tail_quad])
        ok &= rep.ok
    header = ["format", "beta", "second_moment", "bound", "tail_mc", "tail_quad"]
    return ok, header, rows


def _suite_convergence(seed, out):
    from co3.theory import convergence_config, convergence_task, verify_convergence

    task = convergence_task(seed)
    rows, ok, gaps = [], True, []
    threads = default_threads()
    for T in CONVERGENCE_ROUNDS:
        rep = verify_convergence(task, convergence_config(T, FP4, task.smoothness), 50, seed, threads)
        gaps.append(rep.empirical_gap)
        status = "ok" if rep.satisfied else "VIOLATION"
        print(f"  T={T:<5d} gap={rep.empirical_gap:.6g} +- {rep.std_error:.2g}  bound={rep.bound_value:.6g}  {status}",
              file=out)
        rows.append([T, rep.empirical_gap, rep.bound_value])
        ok &= rep.satisfied
    ratio = gaps[0] / gaps[-1] if gaps[-1] > 0 else math.inf
    trend = ratio >= 2.0
    print(f"  gap(T={CONVERGENCE_ROUNDS[0]}) / gap(T={CONVERGENCE_ROUNDS[-1]}) = {ratio:.3g}  "
          f"{'ok' if trend else 'VIOLATION'}", file=out)
    return ok and trend, ["T", "empirical_gap", "bound"], rows


def _suite_distfit(seed, out):
    rows, ok = [], True
    for k, beta in enumerate(DISTFIT_BETAS):
        x = gennorm_sample(GenNormParams(0.0, 1.0, beta), 100_000, [seed, k])
        fits = fit_all_families(x)
        beta_hat = fits[Family.GENNORM].params.beta
        good = abs(beta_hat - beta) <= 0.1
        w2 = {f: fits[f].w2_distance for f in Family}
        if beta == 1.2:
            order = w2[Family.GENNORM] <= w2[Family.NORMAL] and w2[Family.GENNORM] <= w2[Family.LAPLACE]
            good &= order
        ok &= good
        print(f"  beta={beta:<4g} beta_hat={beta_hat:.4f}  " +
              "  ".join(f"W2[{f.value}]={w2[f]:.5f}" for f in Family) + ("  ok" if good else "  VIOLATION"), file=out)
        rows.append([beta, beta_hat] + [w2[f] for f in Family])
    return ok, ["beta", "beta_hat"] + [f"w2_{f.value}" for f in Family], rows


_SUITE_FUNCS = {"lemma1": _suite_lemma1, "convergence": _suite_convergence, "distfit": _suite_distfit}


def cmd_verify(args, out=None) -> int:
    out = out or sys.stdout
    seed = 0 if args.seed is None else args.seed
    print(f"suite {args.suite}", file=out)
    ok, header, rows = _SUITE_FUNCS[args.suite](seed, out)
    if args.out:
        run_dir = make_run_dir(args.out, f"verify-{args.suite}", seed)
        write_manifest(run_dir, None, seed, [], {"suite": args.suite, "passed": bool(ok)})
        report.table_csv(header, rows, os.path.join(run_dir, f"{args.suite}.csv"))
        print(f"wrote {run_dir}", file=out)
    print("PASS" if ok else "FAIL", file=out)
    return EXIT_OK if ok else EXIT_VIOLATION


# -- fit -----------------------------------------------------------------------

def read_samples(path) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None
    if not lines:
        raise InputError(f"{path}: no samples")
    try:
        x = np.array([float(tok) for tok in lines])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise InputError(f"{path}: non-finite sample")
    return x


def _describe(params) -> str:
    return ", ".join(f"{k}={v:.6g}" for k, v in vars(params).items())


def cmd_fit(args, out=None) -> int:
    out = out or sys.stdout
    x = read_samples(args.samples)
    try:
        fits = fit_all_families(x)
    except (DegenerateSampleError, InsufficientSampleError) as exc:
        raise InputError(f"{args.samples}: {exc}") from None
    best = min(fits.values(), key=lambda f: f.w2_distance).family
    rows = []
    print(f"{'family':<10s} {'w2':>12s}  params", file=out)
    for fam, fit in fits.items():
        mark = "  <- best" if fam is best else ""
        print(f"{fam.value:<10s} {fit.w2_distance:12.6g}  {_describe(fit.params)}{mark}", file=out)
        rows.append([fam.value, fit.w2_distance, _describe(fit.params), "1" if fam is best else "0"])
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "fit.csv")
        report.table_csv(["family", "w2", "params", "best"], rows, path)
        print(f"wrote {path}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="co3", description="Compressed federated SGD simulator and checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the schemes of an experiment config")
    p.add_argument("--config", required=True, help="INI experiment config")
    p.add_argument("--out", default=None, help="parent directory for the run folder (default ./runs)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--out", default=None, help="write the suite table and manifest here")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fit", help="fit the four families to a file of samples")
    p.add_argument("samples", help="whitespace/newline separated decimal numbers")
    p.add_argument("--out", default=None, help="directory for fit.csv")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Co3Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
