import os

import pytest

from insitukit import bench
from insitukit.bench import (ExperimentPlan, SweepRecord, SweepRow, TaskSpec,
                             read_sweep_csv, report, run_cell, run_plan,
                             write_sweep_csv)
from insitukit.proxysim import MeshConfig

SMALL_MESH = MeshConfig(elements_per_axis=(2, 2, 2), order=3, seed=4)


def small_plan(**over):
    base = dict(name="unit", mesh=SMALL_MESH, repeats=2, worker_budgets=[2],
                modes=["synchronous"], splits={2: [1]}, frequencies=[2],
                task_matrix=[TaskSpec("none")], total_steps=6)
    base.update(over)
    return ExperimentPlan(**base)


def make_row(**over):
    base = dict(budget=2, mode="synchronous", task_id="none", insitu_workers=0,
                frequency=1, avg_step_time=1.0, t_sim_avg=1.0, t_insitu_avg=0.0,
                t_transfer_avg=0.0, t_wait_avg=0.0, min_step_time=1.0,
                max_step_time=1.0, would_be_bytes=0, actual_bytes=0,
                output_checksum="")
    base.update(over)
    return SweepRow(**base)


class TestPlanParsing:
    def test_from_dict_defaults(self):
        plan = ExperimentPlan.from_dict({"name": "p"})
        assert plan.mesh.order == 7
        assert plan.repeats == 3
        assert plan.task_matrix == []

    def test_from_dict_full(self):
        plan = ExperimentPlan.from_dict({
            "name": "p",
            "mesh": {"elements_per_axis": [2, 2, 2], "order": 3, "seed": 9},
            "worker_budgets": [4], "modes": ["asynchronous"],
            "splits": {"4": [1, 2]}, "frequencies": [5],
            "tasks": [{"task_id": "uq", "params": {"n_lags": 4}}],
            "total_steps": 40, "async_frequency_factor": 2})
        assert plan.mesh.elements_per_axis == (2, 2, 2)
        assert plan.splits == {4: [1, 2]}
        assert plan.task_matrix[0].params == {"n_lags": 4}


class TestRunCell:
    def test_none_task_baseline(self, tmp_path):
        row = run_cell(small_plan(), 2, "synchronous", 0, 2, TaskSpec("none"),
                       str(tmp_path))
        assert row.task_id == "none"
        assert row.actual_bytes == 0
        assert row.avg_step_time > 0.0
        assert not row.failed
        cell = tmp_path / "synchronous_none_N2_q0_f2"
        assert sorted(os.listdir(cell)) == ["steps_rep0.csv", "steps_rep1.csv"]

    def test_compression_cell_reports_io(self, tmp_path):
        plan = small_plan(task_matrix=[TaskSpec("compression",
                                                {"epsilon": 1e-1})])
        row = run_cell(plan, 2, "synchronous", 0, 2,
                       plan.task_matrix[0], str(tmp_path))
        firings = 6 // 2
        assert row.would_be_bytes == 8 * 64 * 8 * 4 * firings
        assert 0 < row.actual_bytes < row.would_be_bytes
        assert len(row.output_checksum) == 64

    def test_repeat_min_max_bracket_average(self, tmp_path):
        row = run_cell(small_plan(repeats=3), 2, "synchronous", 0, 1,
                       TaskSpec("none"), str(tmp_path))
        assert row.min_step_time <= row.avg_step_time <= row.max_step_time


class TestRunPlan:
    def test_writes_summary_and_flags_best(self, tmp_path):
        plan = small_plan(modes=["synchronous", "asynchronous"],
                          splits={2: [1]}, repeats=1)
        rec = run_plan(plan, str(tmp_path))
        assert os.path.exists(tmp_path / "summary.csv")
        assert len(rec.rows) == 2
        # one best per (budget, mode, frequency, task) group
        assert sum(r.best_flag for r in rec.rows) == 2

    def test_hybrid_skipped_for_none_task(self, tmp_path):
        plan = small_plan(modes=["hybrid"], repeats=1)
        rec = run_plan(plan, str(tmp_path))
        assert rec.rows == []

    def test_cell_failure_recorded_not_raised(self, tmp_path, monkeypatch):
        def explode(*a, **k):
            raise RuntimeError("cell exploded")
        monkeypatch.setattr(bench, "run_cell", explode)
        rec = run_plan(small_plan(repeats=1), str(tmp_path))
        assert len(rec.rows) == 1
        assert rec.rows[0].failed
        assert "cell exploded" in rec.rows[0].error
        assert not rec.rows[0].best_flag

    def test_oversubscription_warns(self, tmp_path):
        host = os.cpu_count() or 1
        plan = small_plan(worker_budgets=[host + 1], splits={host + 1: [1]},
                          repeats=1)
        with pytest.warns(UserWarning, match="oversubscribed"):
            run_plan(plan, str(tmp_path))


class TestCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        rows = [make_row(), make_row(mode="asynchronous", insitu_workers=1,
                                     best_flag=True, would_be_bytes=100,
                                     actual_bytes=40, output_checksum="ab" * 32),
                make_row(failed=True, error="ValueError('x')")]
        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, SweepRecord(plan_name="p", rows=rows))
        back = read_sweep_csv(path).rows
        assert back == rows


class TestReport:
    def test_tables_and_saved_io(self):
        rows = [
            make_row(mode="asynchronous", task_id="compression",
                     insitu_workers=1, avg_step_time=2.0,
                     would_be_bytes=1000, actual_bytes=250),
            make_row(mode="asynchronous", task_id="compression",
                     insitu_workers=2, avg_step_time=1.0, best_flag=True,
                     would_be_bytes=1000, actual_bytes=250),
        ]
        text = report(SweepRecord(plan_name="demo", rows=rows))
        assert "sweep report: demo" in text
        assert text.count("<-- sweet spot") == 1
        assert "saved 75.0%" in text

    def test_failed_row_shown(self):
        text = report(SweepRecord(plan_name="p", rows=[
            make_row(failed=True, error="boom")]))
        assert "FAILED: boom" in text

    def test_tidy_csv_emitted(self, tmp_path):
        path = tmp_path / "tidy.csv"
        report(SweepRecord(plan_name="p", rows=[make_row()]), tidy_csv_path=path)
        assert read_sweep_csv(path).rows == [make_row()]

    def test_empty_record(self):
        assert "sweep report" in report(SweepRecord(plan_name="empty", rows=[]))
