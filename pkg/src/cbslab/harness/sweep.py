"""Grid sweeps over (B, lr, tau, beta2, D, N) with resumable record files."""
from __future__ import annotations

import copy
import itertools
import logging
import time
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..cbs_fit import StepObservation
from ..problem import build_powerlaw_problem, excess_risk
from ..risk_oracle import exact_excess_risk
from ..sgd_sim import Diverged, SGDConfig, run_minibatch_sgd
from ..trainer import TrainerConfig, TrainingDiverged, train
from .records import RunRecord, append_records, derive_seed, read_records, stable_hash

log = logging.getLogger(__name__)

MODULES = ("trainer", "sgd_sim", "risk_oracle")


@dataclass
class SweepSpec:
    module: str
    axes: dict
    fixed: dict = field(default_factory=dict)
    seed: int = 0
    replicas: int = 1
    seed_policy: str = "derived"  # derived: hash(seed, coords, replica); shared: seed + replica
    output: str | None = None

    def __post_init__(self):
        if self.module not in MODULES:
            raise ValueError(f"module must be one of {MODULES}")
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            raise ValueError("sweep grid is empty")
        for name, values in self.axes.items():
            if len({repr(v) for v in values}) != len(values):
                raise ValueError(f"duplicate values on axis {name!r}")
        if self.seed_policy not in ("derived", "shared"):
            raise ValueError("seed_policy must be 'derived' or 'shared'")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")

    @classmethod
    def from_file(cls, path) -> SweepSpec:
        return cls(**yaml.safe_load(Path(path).read_text()))

    def points(self):
        names = list(self.axes)
        for combo in itertools.product(*(self.axes[n] for n in names)):
            yield dict(zip(names, combo))


@dataclass
class SweepResult:
    records: list
    executed: int
    skipped: int
    failures: list  # (coords, replica, error message)


def _set_dotted(cfg: dict, key: str, value):
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _merged(fixed: dict, coords: dict) -> dict:
    cfg = copy.deepcopy(fixed)
    for k, v in coords.items():
        _set_dotted(cfg, k, v)
    return cfg


def _tasks(spec: SweepSpec):
    base_hash = stable_hash({"module": spec.module, "fixed": spec.fixed})
    for coords in spec.points():
        for rep in range(spec.replicas):
            if spec.seed_policy == "derived":
                seed = derive_seed(spec.seed, coords, rep)
            else:
                seed = spec.seed + rep
            run_id = stable_hash({"spec": base_hash, "coords": coords, "replica": rep, "seed": seed})
            yield run_id, coords, rep, seed, base_hash


def _execute(module: str, cfg: dict, seed: int, run_id: str, spec_hash: str, coords: dict) -> RunRecord:
    start = time.perf_counter()
    if module == "trainer":
        cfg.setdefault("seed", seed)
        cfg["seed"] = seed
        tcfg = TrainerConfig.from_dict(cfg)
        try:
            res = train(tcfg)
            outcome, value = ("steps_to_target", float(res.steps)) if res.reached else ("not-reached", None)
        except TrainingDiverged:
            outcome, value = "diverged", None
        kw = dict(batch_size=tcfg.batch_size, lr=tcfg.lr, tau=tcfg.ewa_decay,
                  beta2=tcfg.optimizer.beta2, target=tcfg.target_loss,
                  n_millions=cfg.get("n_millions"))
    else:
        problem = build_powerlaw_problem(int(cfg["d"]), float(cfg["a"]), float(cfg["b"]), float(cfg["sigma2"]))
        bsz, gamma, data = int(cfg["B"]), float(cfg["gamma"]), int(cfg["D"])
        try:
            if module == "sgd_sim":
                res = run_minibatch_sgd(problem, SGDConfig(bsz, gamma, data, seed))
                with np.errstate(over="ignore"):
                    value = excess_risk(problem, res.average)
                if not np.isfinite(value):
                    raise Diverged(data // bsz)
            else:
                value = exact_excess_risk(problem, data, gamma, bsz, cfg.get("mode", "exact-gaussian")).total_excess
            outcome = "excess_risk"
        except Diverged:
            outcome, value = "diverged", None
        kw = dict(batch_size=bsz, lr=gamma, data_size=data)
    return RunRecord(
        run_id=run_id, module=module, spec_hash=spec_hash, seed=seed, outcome=outcome,
        value=value, wall_time=time.perf_counter() - start, params=dict(coords), **kw,
    )


def _safe_execute(args):
    try:
        return _execute(*args), None
    except Exception as exc:  # isolate the failing grid point
        return None, f"{type(exc).__name__}: {exc}"


def run_sweep(spec: SweepSpec, output=None, jobs: int = 1, resume: bool = True) -> SweepResult:
    """Run every grid point; records are appended in grid order.

    Run ids already present in the output file are skipped when ``resume``.
    """
    output = output or spec.output
    done = {}
    if output and resume:
        done = {r.run_id: r for r in read_records(output)}
    todo, keys = [], []
    records = []
    skipped = 0
    for run_id, coords, rep, seed, spec_hash in _tasks(spec):
        if run_id in done:
            skipped += 1
            continue
        todo.append((spec.module, _merged(spec.fixed, coords), seed, run_id, spec_hash, coords))
        keys.append((coords, rep))

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = pool.map(_safe_execute, todo)
            outcomes = _drain(results, output)
    else:
        outcomes = _drain(map(_safe_execute, todo), output)

    failures = []
    for (coords, rep), (rec, err) in zip(keys, outcomes):
        if err is not None:
            log.warning("grid point %s (replica %d) failed: %s", coords, rep, err)
            failures.append((coords, rep, err))
        else:
            records.append(rec)
    all_records = [done[rid] for rid, *_ in _tasks(spec) if rid in done] + records
    return SweepResult(all_records, len(todo), skipped, failures)


def _drain(results, output):
    # single writer: results arrive in grid order and are appended one by one
    out = []
    for rec, err in results:
        if rec is not None and output:
            append_records(output, [rec])
        out.append((rec, err))
    return out


def best_per_batch(records, aggregate: str = "min") -> list[StepObservation]:
    """Empirical steps-vs-batch curve: best steps to target per batch size.

    ``aggregate="min"`` takes the minimum over every run for that batch size.
    ``aggregate="mean"`` first averages seeds within each hyperparameter
    setting (settings with any unfinished seed are dropped), then minimises.
    """
    by_batch = defaultdict(list)
    for rec in records:
        by_batch[rec.batch_size].append(rec)
    out = []
    for bsz in sorted(by_batch):
        recs = by_batch[bsz]
        reached = [r for r in recs if r.outcome == "steps_to_target"]
        if aggregate == "min":
            best = min((r.value for r in reached), default=None)
        elif aggregate == "mean":
            groups = defaultdict(list)
            for r in recs:
                key = stable_hash({k: v for k, v in r.params.items() if k != "seed"})
                groups[key].append(r)
            means = [np.mean([r.value for r in g]) for g in groups.values()
                     if all(r.outcome == "steps_to_target" for r in g)]
            best = min(means, default=None)
        else:
            raise ValueError("aggregate must be 'min' or 'mean'")
        if best is None:
            warnings.warn(f"batch size {bsz}: no run reached the target; excluded", RuntimeWarning, stacklevel=2)
            continue
        n_millions = recs[0].n_millions
        out.append(StepObservation(bsz, float(best), n_millions, recs[0].data_size))
    return out
