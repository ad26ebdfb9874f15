"""CSV tables, a text summary and optional SVG charts from run records and fits."""
from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..cbs_fit import CBSLawFit, StepLawFit, critical_batch, fit_cbs_law, relative_steps
from .records import write_records_csv
from .sweep import best_per_batch


@dataclass
class FitEntry:
    """A fitted step law for one scale, with the reference batch size used for B*."""

    label: str
    fit: StepLawFit
    b_opt: float
    scale: float | None = None  # N in millions, or tokens


RELATIVE_FIELDS = ["group", "B", "steps", "relative_steps", "reference_batch"]
POINT_FIELDS = ["label", "scale", "a", "b", "alpha", "b_opt", "critical_batch", "log2_critical_batch"]
CURVE_FIELDS = ["scale", "critical_batch"]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _group_records(records):
    groups = defaultdict(list)
    for rec in records:
        if rec.module != "trainer":
            continue
        groups[(rec.n_millions, rec.target)].append(rec)
    return groups


def _group_label(key):
    n, target = key
    parts = []
    if n is not None:
        parts.append(f"N={n:g}M")
    if target is not None:
        parts.append(f"target={target:g}")
    return " ".join(parts) or "all"


def emit_report(out_dir, records=(), fits=(), reference_batch=None, overhead=0.2,
                aggregate="min", svg=False) -> dict:
    """Write the report files into ``out_dir`` and return their paths by name.

    Parameters
    ----------
    records : sequence of RunRecord
        Written verbatim to ``runs.csv``; trainer records also feed the
        relative-steps table (best steps per batch size, per scale and target).
    fits : sequence of FitEntry
        Each produces one row of ``cbs_points.csv``. With two or more entries
        carrying a scale, a power law ``B* = k * scale**e`` is fitted and
        sampled into ``cbs_curve.csv``.
    reference_batch : int, optional
        Batch size used to normalise steps; defaults to the smallest one seen.
    svg : bool
        Also draw steps against batch size on log-log axes (needs matplotlib).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    paths = {name: out / name for name in
             ("runs.csv", "relative_steps.csv", "cbs_points.csv", "cbs_curve.csv", "summary.txt")}
    records = list(records)
    write_records_csv(records, paths["runs.csv"])

    curves = {}
    rel_rows = []
    for key, recs in sorted(_group_records(records).items(), key=lambda kv: _group_label(kv[0])):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            obs = best_per_batch(recs, aggregate)
        if not obs:
            continue
        ref = reference_batch if reference_batch is not None else obs[0].batch_size
        label = _group_label(key)
        curves[label] = obs
        steps = {o.batch_size: o.steps for o in obs}
        try:
            rel = relative_steps(obs, ref)
        except KeyError:
            warnings.warn(f"{label}: reference batch {ref} missing; group skipped", RuntimeWarning, stacklevel=2)
            continue
        rel_rows.extend([label, bsz, steps[bsz], r, ref] for bsz, r in rel)
    _write_csv(paths["relative_steps.csv"], RELATIVE_FIELDS, rel_rows)

    point_rows, scale_pts = [], []
    for entry in fits:
        bstar = critical_batch(entry.fit, entry.b_opt, overhead)
        point_rows.append([entry.label, entry.scale, entry.fit.a, entry.fit.b, entry.fit.alpha,
                           entry.b_opt, bstar, math.log2(bstar)])
        if entry.scale is not None:
            scale_pts.append((entry.scale, bstar))
    _write_csv(paths["cbs_points.csv"], POINT_FIELDS,
               [["" if v is None else v for v in row] for row in point_rows])

    law = None
    curve_rows = []
    if len({s for s, _ in scale_pts}) >= 2:
        law = fit_cbs_law(scale_pts)
        lo, hi = min(s for s, _ in scale_pts), max(s for s, _ in scale_pts)
        for s in np.geomspace(lo / 2, hi * 4, 25):
            curve_rows.append([float(s), law.constant + law.coefficient * float(s) ** law.exponent])
    _write_csv(paths["cbs_curve.csv"], CURVE_FIELDS, curve_rows)

    paths["summary.txt"].write_text(_summary(records, curves, point_rows, law))
    if svg and curves:
        paths["steps_vs_batch.svg"] = out / "steps_vs_batch.svg"
        _plot(curves, paths["steps_vs_batch.svg"])
    return paths


def _summary(records, curves, point_rows, law: CBSLawFit | None) -> str:
    lines = [f"runs: {len(records)}"]
    counts = defaultdict(int)
    for rec in records:
        counts[rec.outcome] += 1
    for outcome in sorted(counts):
        lines.append(f"  {outcome}: {counts[outcome]}")
    for label, obs in curves.items():
        lines.append(f"best steps per batch size ({label}):")
        lines.extend(f"  B={o.batch_size:<6d} steps={o.steps:g}" for o in obs)
    if point_rows:
        lines.append("critical batch sizes:")
        lines.extend(f"  {row[0]:<8s} B*={row[6]:.2f} log2(B*)={row[7]:.2f}" for row in point_rows)
    if law is not None:
        lines.append(f"B* = {law.coefficient:.4g} * scale^{law.exponent:.4f}")
    return "\n".join(lines) + "\n"


def _plot(curves, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for label, obs in curves.items():
        ax.plot([o.batch_size for o in obs], [o.steps for o in obs], marker="o", label=label)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("batch size")
    ax.set_ylabel("steps to target")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
