"""Benchmark loop and plot-data consolidation behind the command-line tool."""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bayes import EstimationResult, MeasurementBatch, distribution_summary, run_estimation
from .errors import DataFormatError, InvalidArgumentError
from .jsonfmt import dumps
from .simulator import DatasetRecord

TRACE_COLUMNS = ("iteration", "mean_fhat_MHz", "mean_E_MHz2", "mean_V_MHz2", "skip_rate")
PER_SET_COLUMNS = (
    "provider", "set_id", "f_true_MHz", "final_fhat_MHz", "final_E_MHz2", "final_V_MHz2", "skip_rate", "converged",
)
TRACE_NAME = re.compile(r"^trace_(?P<provider>[A-Za-z0-9-]+)_set(?P<set_id>\d+)\.csv$")
METRICS = {"mean_fhat_MHz": "fhat", "mean_E_MHz2": "E", "mean_V_MHz2": "V", "skip_rate": "skip_rate"}


def default_tolerance(f_min: float, f_max: float, m: int) -> float:
    """Ten final grid spacings."""
    return 10 * (f_max - f_min) / m


def trace_name(provider: str, set_id: int) -> str:
    return f"trace_{provider}_set{set_id}.csv"


@dataclass
class SetOutcome:
    provider: str
    set_id: int
    f_true: float
    result: EstimationResult
    converged: bool

    def row(self) -> list:
        t = self.result.mean_trace
        return [
            self.provider, self.set_id, repr(self.f_true), repr(float(t.fhat[-1])), repr(float(t.sq_error[-1])),
            repr(float(t.variance[-1])), repr(float(np.mean(t.skipped))), int(self.converged),
        ]


def benchmark_providers(
    groups: Mapping[int, Sequence[DatasetRecord]],
    truth: Mapping[int, float],
    providers: Mapping[str, object],
    f_min: float,
    f_max: float,
    m: int = 5000,
    orderings: int = 100,
    seed: int = 0,
    mode: str = "auto",
    tolerance: float | None = None,
) -> list[SetOutcome]:
    """Estimate every set with every provider.

    Both providers see the same batch orderings for a given set, so their
    traces share an iteration axis and differ only through the likelihood.
    """
    if not groups:
        raise InvalidArgumentError("benchmark needs at least one frequency set")
    if not providers:
        raise InvalidArgumentError("benchmark needs at least one provider")
    tol = default_tolerance(f_min, f_max, m) if tolerance is None else tolerance
    out = []
    for name in sorted(providers):
        for set_id, recs in groups.items():
            if set_id not in truth:
                raise InvalidArgumentError(f"no truth value for set {set_id}")
            f_true = float(truth[set_id])
            batches = [MeasurementBatch.from_record(r) for r in recs]
            res = run_estimation(
                batches, providers[name], f_min, f_max, m, orderings, seed=[seed, set_id], f_true=f_true, mode=mode
            )
            ok = abs(res.mean_final_fhat - f_true) <= tol
            out.append(SetOutcome(name, set_id, f_true, res, bool(ok)))
    return out


def summarize_outcomes(outcomes: Sequence[SetOutcome], tolerance: float) -> dict:
    by_provider: dict[str, list[SetOutcome]] = {}
    for o in outcomes:
        by_provider.setdefault(o.provider, []).append(o)
    summary = {"tolerance_MHz": tolerance, "providers": {}}
    for name, items in sorted(by_provider.items()):
        e = [o.result.mean_final_sq_error for o in items]
        v = [o.result.mean_final_variance for o in items]
        summary["providers"][name] = {
            "n_sets": len(items),
            "n_converged": sum(o.converged for o in items),
            "non_converged_set_ids": [o.set_id for o in items if not o.converged],
            "final_E_MHz2": distribution_summary(e),
            "final_V_MHz2": distribution_summary(v),
            "mean_skip_rate": float(np.mean([np.mean(o.result.mean_trace.skipped) for o in items])),
        }
    return summary


def write_per_set_csv(outcomes: Sequence[SetOutcome], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PER_SET_COLUMNS)
        for o in outcomes:
            w.writerow(o.row())


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


# --- report ---------------------------------------------------------------------


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Parse one trace file; any structural problem raises naming the file."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise DataFormatError(f"{path}: expected header {','.join(TRACE_COLUMNS)}")
    body = rows[1:]
    if not body:
        raise DataFormatError(f"{path}: trace has no rows")
    try:
        data = np.array([[float(x) for x in row] for row in body])
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    if data.shape[1] != len(TRACE_COLUMNS):
        raise DataFormatError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data[:, [0, 3, 4]])):
        raise DataFormatError(f"{path}: non-finite values")
    return {c: data[:, i] for i, c in enumerate(TRACE_COLUMNS)}


def read_per_set_csv(path) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PER_SET_COLUMNS:
            raise DataFormatError(f"{path}: expected header {','.join(PER_SET_COLUMNS)}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            try:
                rows.append(
                    {
                        "provider": row["provider"],
                        "set_id": int(row["set_id"]),
                        "final_E_MHz2": float(row["final_E_MHz2"]),
                        "final_V_MHz2": float(row["final_V_MHz2"]),
                        "converged": bool(int(row["converged"])),
                    }
                )
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
    return rows


def build_report(bench_dir, out_dir) -> dict:
    """Long-format trace table plus violin-ready final-value distributions."""
    bench_dir, out_dir = Path(bench_dir), Path(out_dir)
    traces_dir = bench_dir / "traces"
    per_set = bench_dir / "per_set.csv"
    if not traces_dir.is_dir():
        raise FileNotFoundError(f"{traces_dir}: no traces directory")
    if not per_set.is_file():
        raise FileNotFoundError(f"{per_set}: missing per-set table")
    files = []
    for p in traces_dir.iterdir():
        m = TRACE_NAME.match(p.name)
        if m:
            files.append((m["provider"], int(m["set_id"]), p))
    if not files:
        raise InvalidArgumentError(f"{traces_dir}: no trace files")
    files.sort()
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "long.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["provider", "set_id", "iteration", "metric", "value"])
        for provider, set_id, p in files:
            tr = read_trace_csv(p)
            for i, it in enumerate(tr["iteration"]):
                for col, metric in METRICS.items():
                    w.writerow([provider, set_id, int(it), metric, repr(float(tr[col][i]))])
    dist: dict[str, dict] = {}
    for row in read_per_set_csv(per_set):
        d = dist.setdefault(row["provider"], {"set_ids": [], "final_E_MHz2": [], "final_V_MHz2": []})
        d["set_ids"].append(row["set_id"])
        d["final_E_MHz2"].append(row["final_E_MHz2"])
        d["final_V_MHz2"].append(row["final_V_MHz2"])
    report = {
        name: {
            **d,
            "log10_final_E": [math.log10(x) if x > 0 else None for x in d["final_E_MHz2"]],
            "summary_E": distribution_summary(d["final_E_MHz2"]),
            "summary_V": distribution_summary(d["final_V_MHz2"]),
        }
        for name, d in sorted(dist.items())
    }
    write_json(report, out_dir / "distributions.json")
    return report


def read_truth(path) -> dict[int, float]:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
        return {int(k): float(v) for k, v in d["fB_MHz"].items()}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
        raise DataFormatError(f"{path}: malformed truth file ({exc})") from exc
