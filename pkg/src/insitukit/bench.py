"""Experiment driver: timed runs over (budget, mode, split, frequency, task)
matrices, repeat averaging, sweep summaries and report emission."""

from __future__ import annotations

import csv
import hashlib
import os
import warnings
from dataclasses import dataclass, field, asdict

from . import engine, tasks
from .proxysim import MeshConfig, ProxySimulator


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentPlan:
    name: str
    mesh: MeshConfig = field(default_factory=MeshConfig)
    repeats: int = 3
    worker_budgets: list = field(default_factory=lambda: [2])
    modes: list = field(default_factory=lambda: ["synchronous"])
    splits: dict = field(default_factory=dict)  # budget -> list of p_insitu
    frequencies: list = field(default_factory=lambda: [1])
    task_matrix: list = field(default_factory=list)  # list of TaskSpec
    total_steps: int = 200
    async_frequency_factor: int = 1  # hybrid: f_async = factor * frequency

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentPlan":
        mesh_doc = doc.get("mesh", {})
        mesh = MeshConfig(
            elements_per_axis=tuple(mesh_doc.get("elements_per_axis", (4, 4, 4))),
            order=mesh_doc.get("order", 7),
            seed=mesh_doc.get("seed", 0),
            spectrum_slope=mesh_doc.get("spectrum_slope", -5.0 / 3.0),
            n_modes=mesh_doc.get("n_modes", 32),
            dt=mesh_doc.get("dt", 1e-3))
        return cls(
            name=doc.get("name", "plan"),
            mesh=mesh,
            repeats=doc.get("repeats", 3),
            worker_budgets=doc.get("worker_budgets", [2]),
            modes=doc.get("modes", ["synchronous"]),
            splits={int(k): v for k, v in doc.get("splits", {}).items()},
            frequencies=doc.get("frequencies", [1]),
            task_matrix=[TaskSpec(t["task_id"], t.get("params", {}))
                         for t in doc.get("tasks", [])],
            total_steps=doc.get("total_steps", 200),
            async_frequency_factor=doc.get("async_frequency_factor", 1))


@dataclass
class SweepRow:
    budget: int
    mode: str
    task_id: str
    insitu_workers: int
    frequency: int
    avg_step_time: float
    t_sim_avg: float
    t_insitu_avg: float
    t_transfer_avg: float
    t_wait_avg: float
    min_step_time: float
    max_step_time: float
    would_be_bytes: int
    actual_bytes: int
    output_checksum: str
    best_flag: bool = False
    failed: bool = False
    error: str = ""


@dataclass
class SweepRecord:
    plan_name: str
    rows: list


def _cell_splits(plan: ExperimentPlan, budget: int, mode: str) -> list:
    if mode == "synchronous":
        return [0]
    cand = plan.splits.get(budget) or [max(budget // 4, 1)]
    return [s for s in cand if 1 <= s < budget]


def _output_files(record: engine.RunRecord) -> list:
    files = []
    for out in record.task_outputs:
        items = out if isinstance(out, list) else [out]
        for item in items:
            if hasattr(item, "paths"):
                files.extend(item.paths)
            elif hasattr(item, "path"):
                files.append(item.path)
    return sorted(files)


def _checksum_outputs(paths: list) -> str:
    h = hashlib.sha256()
    for path in paths:
        h.update(os.path.basename(path).encode())
        with open(path, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def run_cell(plan: ExperimentPlan, budget: int, mode: str, split: int,
             frequency: int, task_spec: TaskSpec, out_dir: str,
             repeats: int = None) -> SweepRow:
    """Run one plan cell `repeats` times and average arithmetically."""
    repeats = repeats or plan.repeats
    params = dict(task_spec.params)
    cell_dir = os.path.join(
        out_dir, f"{mode}_{task_spec.task_id}_N{budget}_q{split}_f{frequency}")
    os.makedirs(cell_dir, exist_ok=True)
    params["out_dir"] = cell_dir
    cfg = engine.InSituConfig(
        mode=mode, total_workers=budget, insitu_workers=split,
        frequency=frequency, task_id=task_spec.task_id, task_params=params,
        total_steps=plan.total_steps,
        async_frequency=(frequency * plan.async_frequency_factor
                         if mode == "hybrid" else None))
    means_acc = []
    last_record = None
    for rep in range(repeats):
        sim = ProxySimulator(plan.mesh)
        task = tasks.make_task(task_spec.task_id, params)
        record = engine.run(sim, task, cfg)
        record.to_csv(os.path.join(cell_dir, f"steps_rep{rep}.csv"))
        means_acc.append(record.mean_timings())
        last_record = record
    n = len(means_acc)
    avg = {k: sum(m[k] for m in means_acc) / n for k in means_acc[0]}
    files = _output_files(last_record)
    actual = sum(os.path.getsize(f) for f in files)
    n3 = (plan.mesh.order + 1) ** 3
    firings = plan.total_steps // frequency
    would_be = plan.mesh.n_elements * n3 * 8 * 4 * firings
    return SweepRow(
        budget=budget, mode=mode, task_id=task_spec.task_id,
        insitu_workers=split, frequency=frequency,
        avg_step_time=avg["t_total"], t_sim_avg=avg["t_sim"],
        t_insitu_avg=avg["t_insitu_inline"], t_transfer_avg=avg["t_transfer"],
        t_wait_avg=avg["t_wait"],
        min_step_time=min(m["t_total"] for m in means_acc),
        max_step_time=max(m["t_total"] for m in means_acc),
        would_be_bytes=would_be, actual_bytes=actual,
        output_checksum=_checksum_outputs(files))


def run_plan(plan: ExperimentPlan, out_dir: str) -> SweepRecord:
    """Execute every cell of the plan matrix sequentially; never aborts the
    plan on a cell failure (the failure is recorded in its row)."""
    host = os.cpu_count() or 1
    if max(plan.worker_budgets, default=1) > host:
        warnings.warn(
            f"worker budget exceeds {host} host threads: timings will be "
            "oversubscribed and should not be read as scaling evidence")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for task_spec in plan.task_matrix:
        for budget in plan.worker_budgets:
            for mode in plan.modes:
                if mode == "hybrid" and task_spec.task_id == "none":
                    continue
                for frequency in plan.frequencies:
                    for split in _cell_splits(plan, budget, mode):
                        try:
                            rows.append(run_cell(plan, budget, mode, split,
                                                 frequency, task_spec, out_dir))
                        except Exception as exc:
                            rows.append(SweepRow(
                                budget=budget, mode=mode,
                                task_id=task_spec.task_id,
                                insitu_workers=split, frequency=frequency,
                                avg_step_time=float("nan"), t_sim_avg=0.0,
                                t_insitu_avg=0.0, t_transfer_avg=0.0,
                                t_wait_avg=0.0, min_step_time=0.0,
                                max_step_time=0.0, would_be_bytes=0,
                                actual_bytes=0, output_checksum="",
                                failed=True, error=repr(exc)))
    _flag_best(rows)
    record = SweepRecord(plan_name=plan.name, rows=rows)
    write_sweep_csv(os.path.join(out_dir, "summary.csv"), record)
    return record


def _flag_best(rows: list) -> None:
    groups = {}
    for row in rows:
        if row.failed:
            continue
        groups.setdefault((row.budget, row.mode, row.frequency, row.task_id),
                          []).append(row)
    for group in groups.values():
        min(group, key=lambda r: r.avg_step_time).best_flag = True


_SWEEP_COLUMNS = ["budget", "mode", "task_id", "insitu_workers", "frequency",
                  "avg_step_time", "t_sim_avg", "t_insitu_avg",
                  "t_transfer_avg", "t_wait_avg", "min_step_time",
                  "max_step_time", "would_be_bytes", "actual_bytes",
                  "output_checksum", "best_flag", "failed", "error"]


def write_sweep_csv(path, record: SweepRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_SWEEP_COLUMNS)
        w.writeheader()
        for row in record.rows:
            w.writerow(asdict(row))


def read_sweep_csv(path) -> SweepRecord:
    rows = []
    with open(path, newline="") as fh:
        for doc in csv.DictReader(fh):
            rows.append(SweepRow(
                budget=int(doc["budget"]), mode=doc["mode"],
                task_id=doc["task_id"],
                insitu_workers=int(doc["insitu_workers"]),
                frequency=int(doc["frequency"]),
                avg_step_time=float(doc["avg_step_time"]),
                t_sim_avg=float(doc["t_sim_avg"]),
                t_insitu_avg=float(doc["t_insitu_avg"]),
                t_transfer_avg=float(doc["t_transfer_avg"]),
                t_wait_avg=float(doc["t_wait_avg"]),
                min_step_time=float(doc["min_step_time"]),
                max_step_time=float(doc["max_step_time"]),
                would_be_bytes=int(doc["would_be_bytes"]),
                actual_bytes=int(doc["actual_bytes"]),
                output_checksum=doc["output_checksum"],
                best_flag=doc["best_flag"] == "True",
                failed=doc["failed"] == "True",
                error=doc["error"]))
    return SweepRecord(plan_name=os.path.basename(str(path)), rows=rows)


def report(record: SweepRecord, tidy_csv_path=None) -> str:
    """Human-readable sweet-spot tables plus the saved-IO accounting."""
    lines = [f"sweep report: {record.plan_name}", ""]
    groups = {}
    for row in record.rows:
        groups.setdefault((row.task_id, row.mode, row.budget, row.frequency),
                          []).append(row)
    for (task_id, mode, budget, frequency), rows in sorted(groups.items()):
        lines.append(f"task={task_id} mode={mode} N={budget} frequency={frequency}")
        lines.append(f"  {'p_insitu':>8} {'avg_step':>12} {'t_sim':>10} "
                     f"{'t_insitu':>10} {'t_wait':>10}")
        for row in sorted(rows, key=lambda r: r.insitu_workers):
            if row.failed:
                lines.append(f"  {row.insitu_workers:>8} FAILED: {row.error}")
                continue
            mark = "  <-- sweet spot" if row.best_flag else ""
            lines.append(
                f"  {row.insitu_workers:>8} {row.avg_step_time:>12.6f} "
                f"{row.t_sim_avg:>10.6f} {row.t_insitu_avg:>10.6f} "
                f"{row.t_wait_avg:>10.6f}{mark}")
        saved = [(r.would_be_bytes, r.actual_bytes) for r in rows if not r.failed]
        if saved:
            wb, ab = saved[0]
            if wb:
                lines.append(f"  would-be IO {wb} bytes, actual {ab} bytes "
                             f"(saved {100.0 * (1 - ab / wb):.1f}%)")
        lines.append("")
    if tidy_csv_path is not None:
        write_sweep_csv(tidy_csv_path, record)
    return "\n".join(lines)
