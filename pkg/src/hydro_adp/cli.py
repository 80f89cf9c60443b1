"""Command-line front end: scenario generation, training, evaluation,
benchmarks, and report emission as reproducible batch runs.

All randomness flows from one top-level seed through named substreams (one per
scenario role), so every artifact is byte-reproducible given the same flags.
A `run_config.json` sidecar recording the resolved configuration and derived
substream seeds accompanies every output set.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, lp, scenarios as scn, system as sysm, training as trn

COMMANDS = ("generate", "train", "evaluate", "waitandsee", "detcheck",
            "compare-ei", "sweep")
DEFAULT_SWEEP = (200, 1000, 2000, 3000, 4000, 5000)


class CliError(Exception):
    """Configuration-level failure (exit code 1)."""


def named_seed(seed: int, name: str) -> int:
    """Derive a deterministic substream seed from the top-level seed."""
    digest = hashlib.sha256(name.encode()).digest()
    return int(np.random.SeedSequence(
        [seed, int.from_bytes(digest[:8], "big")]).generate_state(1)[0])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hydro-adp",
        description="Affine value-function dispatch for connected hydro "
                    "reservoirs: scenario simulation, offline training, "
                    "online evaluation, and benchmark reports.")
    p.add_argument("--system", metavar="PATH", default=None,
                   help="reservoir system JSON (default: shipped two-reservoir "
                        "cascade)")
    p.add_argument("--command", required=True, choices=COMMANDS,
                   help="what to run")
    p.add_argument("--horizon", type=int, default=48, metavar="N",
                   help="stages (hours) per sample path")
    p.add_argument("--n-train", type=int, default=1000, metavar="N",
                   help="training sample count")
    p.add_argument("--n-test", type=int, default=1000, metavar="N",
                   help="test sample count")
    p.add_argument("--alpha", type=float, default=0.5, metavar="F",
                   help="initial learning rate")
    p.add_argument("--alpha-damping", type=float, default=100.0, metavar="N",
                   help="n0 in alpha_n = alpha*n0/(n0+n-1); large values keep "
                        "the rate nearly constant")
    p.add_argument("--fd-step", type=float, default=1.0, metavar="F",
                   help="finite-difference step (1e3 m3)")
    p.add_argument("--seed", type=int, default=0, metavar="N",
                   help="top-level RNG seed")
    p.add_argument("--exclude-inflow-term", action="store_true",
                   help="train/evaluate case E (no inflow term)")
    p.add_argument("--out", metavar="DIR",
                   default=os.environ.get("HYDRO_ADP_OUT", "."),
                   help="output directory (env HYDRO_ADP_OUT as fallback)")
    p.add_argument("--k-last", type=int, default=5, metavar="N",
                   help="trailing iterates for convergence stats")
    p.add_argument("--threads", type=int, default=1, metavar="N",
                   help="worker threads for evaluation/wait-and-see")
    p.add_argument("--sweep-counts", metavar="N,N,...",
                   default=",".join(str(c) for c in DEFAULT_SWEEP),
                   help="sample counts for the sweep command")
    p.add_argument("--detcheck-paths", type=int, default=10, metavar="N",
                   help="single paths for the deterministic cross-check")
    p.add_argument("--detcheck-iterations", type=int, default=200, metavar="N")
    return p


def _load_system(args) -> sysm.ReservoirSystem:
    if args.system is None:
        return sysm.load_shipped_system("norwegian_cascade")
    return sysm.load_system(args.system)


def _train_config(args, n_samples=None) -> trn.TrainConfig:
    return trn.TrainConfig(
        n_samples=n_samples if n_samples is not None else args.n_train,
        alpha_initial=args.alpha, alpha_damping=args.alpha_damping,
        fd_step=args.fd_step, include_inflow_term=not args.exclude_inflow_term,
        seed=args.seed)


def _models(system):
    return scn.specs_for_system(system)


def _make_set(args, system, role: str, n: int) -> scn.ScenarioSet:
    price, inflows, noise = _models(system)
    return scn.simulate(price, inflows, noise, args.horizon, n,
                        seed=named_seed(args.seed, role), role=role)


def _sidecar(args, out: Path, extra=None) -> None:
    data = {k: getattr(args, k) for k in vars(args)}
    data["substream_seeds"] = {r: named_seed(args.seed, r)
                               for r in ("training", "test")}
    data.update(extra or {})
    (out / "run_config.json").write_text(json.dumps(data, indent=1, default=str))


def _chunked_map(fn, items, threads):
    if threads <= 1:
        return [fn(chunk) for chunk in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def cmd_generate(args, out: Path) -> int:
    system = _load_system(args)
    scn.save_scenarios(_make_set(args, system, "training", args.n_train),
                       out / "train_scenarios.csv")
    scn.save_scenarios(_make_set(args, system, "test", args.n_test),
                       out / "test_scenarios.csv")
    print(f"wrote {out / 'train_scenarios.csv'} and {out / 'test_scenarios.csv'}")
    return 0


def cmd_train(args, out: Path) -> int:
    system = _load_system(args)
    price, _, _ = _models(system)
    ss = _make_set(args, system, "training", args.n_train)
    tf = scn.terminal_price_forecasts(price, ss)
    approx, trace = trn.train_offline(system, ss, tf, _train_config(args))
    approx.save(out / "value_approx.json")
    analysis.emit_trace(trace, out / "trace.csv")
    _, _, std_pct = analysis.convergence_stats(
        trace, min(args.k_last, trace.v0.size))
    print(f"trained {args.n_train} iterations, {trace.n_solves} LP solves, "
          f"{trace.runtime_s:.1f}s; last-{args.k_last} std {std_pct:.2f}% of mean")
    print(f"wrote {out / 'value_approx.json'} and {out / 'trace.csv'}")
    return 0


def cmd_evaluate(args, out: Path) -> int:
    system = _load_system(args)
    approx_path = out / "value_approx.json"
    approx = trn.ValueApproximation.load(approx_path)
    if approx.system_hash and approx.system_hash != system.config_hash():
        raise CliError(f"{approx_path} was trained for a different system config")
    price, _, _ = _models(system)
    ss = _make_set(args, system, "test", args.n_test)
    tf = scn.terminal_price_forecasts(price, ss)
    result = trn.evaluate_online(system, approx, ss, tf)
    with (out / "evaluation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "value_estimate", "realized_profit"])
        for i in range(ss.n_samples):
            w.writerow([i, format(result.value_estimates[i], ".17g"),
                        format(result.realized_profits[i], ".17g")])
    analysis.emit_trajectories(result, out / "trajectories.csv")
    print(f"mean estimate {result.mean_estimate:.2f}, "
          f"mean realized {result.mean_realized:.2f} over {ss.n_samples} samples")
    print(f"wrote {out / 'evaluation.csv'} and {out / 'trajectories.csv'}")
    return 0


def cmd_waitandsee(args, out: Path) -> int:
    system = _load_system(args)
    price, _, _ = _models(system)
    ss = _make_set(args, system, "test", args.n_test)
    tf = scn.terminal_price_forecasts(price, ss)
    n = ss.n_samples
    bounds = np.linspace(0, n, min(args.threads, n) + 1).astype(int)

    def solve_block(block):
        lo, hi = block
        vals = np.empty(hi - lo)
        warm = None
        for i in range(lo, hi):
            sol = sysm.solve_full_horizon(system, ss.prices[i], ss.inflows[i],
                                          tf[i], warm=warm, allow_spill=True)
            vals[i - lo] = sol.value
            warm = sol
        return vals

    vals = np.concatenate(_chunked_map(
        solve_block, list(zip(bounds[:-1], bounds[1:])), args.threads))
    with (out / "waitandsee.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "ws_value"])
        for i in range(n):
            w.writerow([i, format(vals[i], ".17g")])
    print(f"wait-and-see mean {vals.mean():.2f} over {n} samples")
    print(f"wrote {out / 'waitandsee.csv'}")
    return 0


def cmd_detcheck(args, out: Path) -> int:
    system = _load_system(args)
    price, inflows, noise = _models(system)
    paths, forecasts = [], []
    for s in range(args.detcheck_paths):
        ss = scn.simulate(price, inflows, noise, args.horizon, 1,
                          seed=named_seed(args.seed, f"detcheck-{s}"))
        paths.append(ss)
        forecasts.append(scn.terminal_price_forecasts(price, ss)[0])
    cfg = _train_config(args, n_samples=1)
    mean_gap, gaps = analysis.deterministic_crosscheck(
        system, paths, forecasts, iterations=args.detcheck_iterations, cfg=cfg)
    with (out / "detcheck.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "gap_pct"])
        for s, g in enumerate(gaps):
            w.writerow([s, format(g, ".17g")])
    print(f"deterministic cross-check: mean gap {mean_gap:.3f}% over "
          f"{args.detcheck_paths} paths, {args.detcheck_iterations} iterations")
    print(f"wrote {out / 'detcheck.csv'}")
    return 0


def cmd_compare_ei(args, out: Path) -> int:
    system = _load_system(args)
    price, _, _ = _models(system)
    ss_tr = _make_set(args, system, "training", args.n_train)
    ss_te = _make_set(args, system, "test", args.n_test)
    run_e, run_i, improvement = analysis.compare_cases(
        system, ss_tr, ss_te, _train_config(args), price_spec=price,
        k_last=args.k_last)
    analysis.emit_report([run_e.report, run_i.report], out / "compare_ei.csv")
    print(f"case E out-of-sample {run_e.report.out_sample_mean:.2f}, "
          f"case I {run_i.report.out_sample_mean:.2f}, "
          f"improvement {improvement:.2f}%")
    print(f"wrote {out / 'compare_ei.csv'}")
    return 0


def cmd_sweep(args, out: Path) -> int:
    system = _load_system(args)
    price, _, _ = _models(system)
    try:
        counts = [int(c) for c in args.sweep_counts.split(",") if c]
    except ValueError:
        raise CliError(f"bad --sweep-counts {args.sweep_counts!r}") from None
    ss_te = _make_set(args, system, "test", args.n_test)
    tf_te = scn.terminal_price_forecasts(price, ss_te)
    ws_mean, _ = analysis.wait_and_see(system, ss_te, tf_te)
    reports = []
    for n in counts:
        ss_tr = _make_set(args, system, "training", n)
        tf_tr = scn.terminal_price_forecasts(price, ss_tr)
        run = analysis.run_case(system, ss_tr, ss_te, _train_config(args, n),
                                tf_tr, tf_te, ws_mean, args.k_last)
        reports.append(run.report)
        r = run.report
        print(f"N={n}: in {r.in_sample_mean:.1f} out {r.out_sample_mean:.1f} "
              f"diff {r.diff_pct:.2f}% ws_gap {r.ws_gap_pct:.2f}% "
              f"std_last {r.std_last5_pct:.2f}% ({r.runtime_s:.0f}s)")
    analysis.emit_report(reports, out / "sweep.csv")
    print(f"wrote {out / 'sweep.csv'}")
    return 0


def run(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from exc
    if args.horizon < 1:
        raise CliError("--horizon must be >= 1")
    if args.n_train < 1 or args.n_test < 1:
        raise CliError("sample counts must be >= 1")
    handler = {
        "generate": cmd_generate,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "waitandsee": cmd_waitandsee,
        "detcheck": cmd_detcheck,
        "compare-ei": cmd_compare_ei,
        "sweep": cmd_sweep,
    }[args.command]
    _sidecar(args, out, {"started": time.strftime("%Y-%m-%dT%H:%M:%S")})
    return handler(args, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (CliError, sysm.SystemConfigError, scn.ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except trn.TrainingError as exc:
        if "not found" in str(exc) or "invalid JSON" in str(exc):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except lp.LpError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
