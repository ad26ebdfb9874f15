"""Command-line entry point: ``cbslab <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import yaml

from .. import cbs_fit
from ..problem import build_powerlaw_problem, load_problem_config
from ..risk_oracle import MomentMode, oracle_cbs, oracle_row, stability_margin, write_oracle_csv
from ..sgd_sim import SGDConfig, run_record
from ..trainer import load_trainer_config, train
from .records import read_records
from .report import FitEntry, emit_report
from .sweep import SweepSpec, best_per_batch, run_sweep

OUTPUT_ENV = "CBSLAB_OUTPUT_DIR"


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "cbslab_out"))


def _problem(args):
    if args.config:
        return load_problem_config(args.config)
    return build_powerlaw_problem(args.d, args.a, args.b, args.sigma2)


def _add_problem_args(p):
    p.add_argument("--config", help="problem config file (YAML or JSON)")
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--b", type=float, default=3.0)
    p.add_argument("--sigma2", type=float, default=1.0)


def _read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_simulate(args):
    problem = _problem(args)
    gamma = args.gamma if args.gamma is not None else 0.25 * stability_margin(problem, args.batch)
    row = run_record(problem, SGDConfig(args.batch, gamma, args.data, args.seed), reps=args.reps)
    print(json.dumps(row))
    return 0


def cmd_oracle(args):
    problem = _problem(args)
    mode = MomentMode(args.mode)
    if args.cbs:
        gammas = [0.5 * 2 ** (-k / 4) for k in range(40)]
        for data in args.data:
            batches = [2 ** k for k in range(data.bit_length())]
            res = oracle_cbs(problem, data, args.overhead, batches, gammas, mode)
            print(f"D={data} B*={res.critical_batch} B*_interp={res.critical_batch_interp:.3f} "
                  f"best_risk={res.best_risk:.6g}")
        return 0
    gamma = args.gamma if args.gamma is not None else 0.25 * stability_margin(problem, args.batch)
    rows = [oracle_row(problem, data, gamma, args.batch, mode) for data in args.data]
    if args.output:
        write_oracle_csv(rows, args.output)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return 0


def cmd_sweep(args):
    spec = SweepSpec.from_file(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    output = args.output or spec.output or default_output_dir() / "runs.jsonl"
    res = run_sweep(spec, output, jobs=args.jobs, resume=args.resume)
    print(f"executed {res.executed}, skipped {res.skipped}, failed {len(res.failures)}; records in {output}")
    for coords, rep, err in res.failures:
        print(f"  failed {coords} replica {rep}: {err}", file=sys.stderr)
    return 1 if res.failures else 0


def cmd_train(args):
    cfg = load_trainer_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    res = train(cfg, args.target)
    for ev in res.evals if args.verbose else []:
        print(f"step {ev.step:>7d} lr {ev.lr:.3e} val_ewa {ev.val_loss_ewa:.6f} val_raw {ev.val_loss_raw:.6f}")
    print(json.dumps({"status": res.status, "steps": res.steps}))
    return 0


def cmd_fit_steps(args):
    if args.input.endswith(".jsonl"):
        obs = best_per_batch(read_records(args.input))
    else:
        obs = [cbs_fit.StepObservation(int(r["B"]), float(r["steps"])) for r in _read_table(args.input)]
    fit = cbs_fit.fit_step_law(obs, cbs_fit.AlphaMode(args.alpha))
    out = {"a": fit.a, "b": fit.b, "alpha": fit.alpha, "rss": fit.rss, "converged": fit.converged}
    if args.b_opt:
        bstar = cbs_fit.critical_batch(fit, args.b_opt, args.overhead)
        out.update(critical_batch=bstar, log2_critical_batch=math.log2(bstar))
    for w in fit.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(json.dumps(out))
    return 0


def cmd_fit_cbs(args):
    rows = _read_table(args.input)
    pts = [(float(r["scale"]), float(r["critical_batch"])) for r in rows]
    law = cbs_fit.fit_cbs_law(pts, fix_constant=not args.free_constant, scale_kind=cbs_fit.ScaleKind(args.scale_kind))
    print(json.dumps({"constant": law.constant, "coefficient": law.coefficient,
                      "exponent": law.exponent, "rss": law.rss}))
    return 0


def cmd_forecast(args):
    law = cbs_fit.CBSLawFit(args.constant, args.coefficient, args.exponent)
    for s in args.scale:
        print(f"{s:g}\t{float(cbs_fit.forecast(law, s)):.2f}")
    return 0


def cmd_chinchilla(args):
    for n in args.n_params:
        print(f"{n:g}\t{cbs_fit.chinchilla_steps(n, args.batch, args.ctx, args.ratio)}")
    return 0


def cmd_report(args):
    records = read_records(args.records) if args.records else []
    fits = []
    if args.fits:
        for item in yaml.safe_load(Path(args.fits).read_text()):
            fit = cbs_fit.StepLawFit(item["a"], item["b"], item.get("alpha", 1.0),
                                     cbs_fit.AlphaMode.FIXED_ONE, 0.0)
            fits.append(FitEntry(str(item.get("label", "")), fit, item.get("b_opt", 256), item.get("scale")))
    out = args.output or default_output_dir() / "report"
    paths = emit_report(out, records, fits, args.reference_batch, args.overhead, svg=args.svg)
    print(paths["summary.txt"].read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbslab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="mini-batch SGD on a power-law problem")
    _add_problem_args(p)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--gamma", type=float, help="default: a quarter of the stability margin")
    p.add_argument("--data", type=int, default=4096)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="exact excess risk, or critical batch over a grid with --cbs")
    _add_problem_args(p)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--gamma", type=float)
    p.add_argument("--data", type=int, nargs="+", default=[4096])
    p.add_argument("--mode", choices=[m.value for m in MomentMode], default=MomentMode.EXACT.value)
    p.add_argument("--cbs", action="store_true")
    p.add_argument("--overhead", type=float, default=0.2)
    p.add_argument("--output")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sweep", help="run a grid sweep from a YAML spec")
    p.add_argument("spec")
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train one configuration to a target loss")
    p.add_argument("config")
    p.add_argument("--target", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit-steps", help="fit steps = a + b / B^alpha")
    p.add_argument("input", help="CSV with columns B,steps, or a .jsonl record file")
    p.add_argument("--alpha", choices=[m.value for m in cbs_fit.AlphaMode], default=cbs_fit.AlphaMode.FIXED_ONE.value)
    p.add_argument("--b-opt", type=float)
    p.add_argument("--overhead", type=float, default=0.2)
    p.set_defaults(func=cmd_fit_steps)

    p = sub.add_parser("fit-cbs", help="fit B* against model size or data size")
    p.add_argument("input", help="CSV with columns scale,critical_batch")
    p.add_argument("--free-constant", action="store_true")
    p.add_argument("--scale-kind", choices=[k.value for k in cbs_fit.ScaleKind], default=cbs_fit.ScaleKind.MODEL.value)
    p.set_defaults(func=cmd_fit_cbs)

    p = sub.add_parser("forecast", help="evaluate a critical-batch law")
    p.add_argument("scale", type=float, nargs="+")
    p.add_argument("--coefficient", type=float, default=93.20)
    p.add_argument("--exponent", type=float, default=0.47)
    p.add_argument("--constant", type=float, default=0.0)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("chinchilla-steps", help="steps for a compute-optimal token budget")
    p.add_argument("n_params", type=float, nargs="+")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--ctx", type=int, default=cbs_fit.CONTEXT_LENGTH)
    p.add_argument("--ratio", type=float, default=cbs_fit.CHINCHILLA_RATIO)
    p.set_defaults(func=cmd_chinchilla)

    p = sub.add_parser("report", help="write CSV tables and a summary")
    p.add_argument("--records", help="record file (.jsonl)")
    p.add_argument("--fits", help="YAML list of {label, a, b, alpha, b_opt, scale}")
    p.add_argument("--output")
    p.add_argument("--reference-batch", type=int)
    p.add_argument("--overhead", type=float, default=0.2)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
