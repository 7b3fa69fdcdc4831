"""In-situ orchestrator: coupling modes, resource split, staged channel.

Workers are threads in one process. The simulation side and the in-situ
side never share mutable data; everything crosses through a capacity-one
StageChannel with rendezvous semantics (the sender returns only after the
receiver has taken the message), which is what produces the backpressure
and the max(sim, task) overlap behavior in asynchronous mode.
"""

from __future__ import annotations

import csv
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

MODES = ("synchronous", "asynchronous", "hybrid")
TASK_IDS = ("compression", "image", "uq", "none")
WARMUP_STEPS = 10


class ConfigError(ValueError):
    pass


class LifecycleError(RuntimeError):
    """Task init/check/end called out of order."""


class RunError(RuntimeError):
    """A task failed during a run; carries the failing step index."""

    def __init__(self, step_index: int, cause: BaseException):
        super().__init__(f"in-situ task failed at step {step_index}: {cause!r}")
        self.step_index = step_index
        self.cause = cause


@dataclass(frozen=True)
class InSituConfig:
    mode: str
    total_workers: int
    insitu_workers: int = 0
    frequency: int = 1
    task_id: str = "none"
    task_params: dict = field(default_factory=dict)
    total_steps: int = 1000
    async_frequency: Optional[int] = None  # hybrid only; multiple of frequency

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.task_id not in TASK_IDS:
            raise ConfigError(f"unknown task {self.task_id!r}")
        if self.total_workers < 1:
            raise ConfigError("total_workers must be >= 1")
        if self.frequency < 1:
            raise ConfigError("frequency must be >= 1")
        if self.sim_workers < 1:
            raise ConfigError("p_sim must be >= 1")
        if self.mode == "synchronous" and self.insitu_workers != 0:
            raise ConfigError("synchronous mode requires insitu_workers == 0")
        if self.mode in ("asynchronous", "hybrid") and self.insitu_workers < 1:
            raise ConfigError(f"{self.mode} mode requires insitu_workers >= 1")
        if self.async_frequency is not None and self.async_frequency % self.frequency:
            raise ConfigError("async_frequency must be a multiple of frequency")

    @property
    def sim_workers(self) -> int:
        return self.total_workers - self.insitu_workers


@dataclass
class StepTimings:
    step_index: int
    t_sim: float
    t_transfer: float = 0.0
    t_insitu_inline: float = 0.0
    t_wait: float = 0.0
    t_total: float = 0.0


class TaskContext:
    """Handed to InSituTask.init: worker budget, output dir, mesh info."""

    def __init__(self, workers: int, out_dir=None, mesh=None, executor=None,
                 cfg: InSituConfig = None):
        self.workers = workers
        self.out_dir = out_dir
        self.mesh = mesh
        self.executor = executor
        self.cfg = cfg


class InSituTask:
    """Lifecycle contract: init once, any number of checks, end once.

    Hybrid-capable subclasses additionally implement sync_part /
    async_payload / async_part.
    """

    def __init__(self):
        self._phase = "created"

    # lifecycle bookkeeping -- subclasses override on_* hooks
    def init(self, context: TaskContext) -> None:
        if self._phase != "created":
            raise LifecycleError(f"init called in phase {self._phase}")
        self._phase = "running"
        self.on_init(context)

    def check(self, snapshot, step_index: int):
        if self._phase != "running":
            raise LifecycleError(f"check called in phase {self._phase}")
        return self.on_check(snapshot, step_index)

    def end(self) -> None:
        if self._phase != "running":
            raise LifecycleError(f"end called in phase {self._phase}")
        self._phase = "ended"
        self.on_end()

    def on_init(self, context: TaskContext) -> None:
        pass

    def on_check(self, snapshot, step_index: int):
        raise NotImplementedError

    def on_end(self) -> None:
        pass

    # hybrid protocol (optional)
    supports_hybrid = False

    def sync_part(self, snapshot, step_index: int) -> None:
        raise NotImplementedError

    def async_payload(self, step_index: int) -> Any:
        raise NotImplementedError

    def async_part(self, payload, step_index: int):
        raise NotImplementedError


class _Closed:
    pass


_CLOSED = _Closed()


class StageChannel:
    """Capacity-one rendezvous channel between sim and in-situ sides.

    send() blocks until the receiver has taken the message; messages are
    never dropped or reordered. send() reports how long it waited for the
    receiver to become ready (backpressure) versus the handoff itself.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._item = None
        self._full = False
        self._recv_waiting = False
        self._closed = False

    def send(self, item) -> tuple[float, float]:
        """Returns (wait_seconds, handoff_seconds)."""
        t0 = time.perf_counter()
        with self._cond:
            if self._closed:
                raise RuntimeError("send on closed channel")
            while not self._recv_waiting or self._full:
                self._cond.wait()
            t1 = time.perf_counter()
            self._item = item
            self._full = True
            self._cond.notify_all()
            while self._full:
                self._cond.wait()
        return t1 - t0, time.perf_counter() - t1

    def recv(self):
        """Blocks for the next message; returns the channel-closed sentinel
        after close() once drained."""
        with self._cond:
            self._recv_waiting = True
            self._cond.notify_all()
            while not self._full and not self._closed:
                self._cond.wait()
            if self._full:
                item = self._item
                self._item = None
                self._full = False
                self._recv_waiting = False
                self._cond.notify_all()
                return item
            self._recv_waiting = False
            return _CLOSED

    @staticmethod
    def is_closed(item) -> bool:
        return item is _CLOSED

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()


@dataclass
class RunRecord:
    cfg: InSituConfig
    timings: list[StepTimings]
    task_outputs: list = field(default_factory=list)
    insitu_durations: list[float] = field(default_factory=list)
    final_state: Any = None

    def mean_timings(self, skip_warmup: bool = True) -> dict[str, float]:
        rows = [t for t in self.timings
                if not skip_warmup or t.step_index > WARMUP_STEPS]
        if not rows:
            rows = self.timings
        n = len(rows)
        return {
            "t_sim": sum(t.t_sim for t in rows) / n,
            "t_transfer": sum(t.t_transfer for t in rows) / n,
            "t_insitu_inline": sum(t.t_insitu_inline for t in rows) / n,
            "t_wait": sum(t.t_wait for t in rows) / n,
            "t_total": sum(t.t_total for t in rows) / n,
        }

    def to_csv(self, path) -> None:
        means = self.mean_timings()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t_sim", "t_transfer", "t_insitu_inline",
                        "t_wait", "t_total"])
            for t in self.timings:
                w.writerow([t.step_index, t.t_sim, t.t_transfer,
                            t.t_insitu_inline, t.t_wait, t.t_total])
            w.writerow(["mean", means["t_sim"], means["t_transfer"],
                        means["t_insitu_inline"], means["t_wait"],
                        means["t_total"]])


def _fires(step: int, every: int) -> bool:
    return step % every == 0


def run_synchronous(sim, task: InSituTask, cfg: InSituConfig) -> RunRecord:
    """All workers advance the sim; the task runs inline on firing steps
    with a zero-copy view of the state."""
    if cfg.mode != "synchronous":
        raise ConfigError("run_synchronous requires mode=synchronous")
    record = RunRecord(cfg=cfg, timings=[])
    with ThreadPoolExecutor(max_workers=cfg.total_workers) as pool:
        ctx = TaskContext(workers=cfg.total_workers,
                          out_dir=cfg.task_params.get("out_dir"),
                          mesh=getattr(sim, "cfg", None), executor=pool, cfg=cfg)
        task.init(ctx)
        state = sim.init_state()
        for step in range(1, cfg.total_steps + 1):
            t0 = time.perf_counter()
            state = sim.step(state, workers=cfg.total_workers, executor=pool)
            t1 = time.perf_counter()
            t_insitu = 0.0
            if _fires(step, cfg.frequency):
                snap = sim.view(state) if hasattr(sim, "view") else state
                try:
                    out = task.check(snap, step)
                except Exception as exc:
                    raise RunError(step, exc) from exc
                t_insitu = time.perf_counter() - t1
                if out is not None:
                    record.task_outputs.append(out)
            t_end = time.perf_counter()
            record.timings.append(StepTimings(
                step_index=step, t_sim=t1 - t0, t_insitu_inline=t_insitu,
                t_total=t_end - t0))
        task.end()
    record.final_state = state
    return record


class _Consumer(threading.Thread):
    """In-situ side: drains the channel and applies `handler` in order."""

    def __init__(self, channel: StageChannel, handler):
        super().__init__(daemon=True)
        self.channel = channel
        self.handler = handler
        self.error: Optional[tuple[int, BaseException]] = None
        self.outputs: list = []
        self.durations: list[float] = []

    def run(self):
        while True:
            item = self.channel.recv()
            if StageChannel.is_closed(item):
                return
            payload, step = item
            t0 = time.perf_counter()
            try:
                out = self.handler(payload, step)
            except Exception as exc:
                self.error = (step, exc)
                # keep draining so the sender never deadlocks
                continue
            self.durations.append(time.perf_counter() - t0)
            if out is not None:
                self.outputs.append(out)


def run_asynchronous(sim, task: InSituTask, cfg: InSituConfig) -> RunRecord:
    """Sim on p_sim workers; task on p_insitu workers fed via the channel."""
    if cfg.mode != "asynchronous":
        raise ConfigError("run_asynchronous requires mode=asynchronous")
    record = RunRecord(cfg=cfg, timings=[])
    channel = StageChannel()
    with ThreadPoolExecutor(max_workers=cfg.sim_workers) as sim_pool, \
            ThreadPoolExecutor(max_workers=cfg.insitu_workers) as insitu_pool:
        ctx = TaskContext(workers=cfg.insitu_workers,
                          out_dir=cfg.task_params.get("out_dir"),
                          mesh=getattr(sim, "cfg", None), executor=insitu_pool,
                          cfg=cfg)
        task.init(ctx)
        consumer = _Consumer(channel, task.check)
        consumer.start()
        state = sim.init_state()
        try:
            for step in range(1, cfg.total_steps + 1):
                t0 = time.perf_counter()
                state = sim.step(state, workers=cfg.sim_workers, executor=sim_pool)
                t1 = time.perf_counter()
                t_transfer = t_wait = 0.0
                if _fires(step, cfg.frequency):
                    snap = sim.snapshot(state)
                    t2 = time.perf_counter()
                    wait, handoff = channel.send((snap, step))
                    t_transfer = (t2 - t1) + handoff
                    t_wait = wait
                t_end = time.perf_counter()
                record.timings.append(StepTimings(
                    step_index=step, t_sim=t1 - t0, t_transfer=t_transfer,
                    t_wait=t_wait, t_total=t_end - t0))
        finally:
            channel.close()
            consumer.join()
        task.end()
    record.final_state = state
    record.task_outputs = consumer.outputs
    record.insitu_durations = consumer.durations
    if consumer.error is not None:
        step, exc = consumer.error
        raise RunError(step, exc)
    return record


def run_hybrid(sim, task: InSituTask, cfg: InSituConfig) -> RunRecord:
    """sync_part inline every `frequency` steps; accumulated intermediate
    data crosses the channel every `async_frequency` steps."""
    if cfg.mode != "hybrid":
        raise ConfigError("run_hybrid requires mode=hybrid")
    if not task.supports_hybrid:
        raise ConfigError(f"task {cfg.task_id!r} does not support hybrid mode")
    f_async = cfg.async_frequency or cfg.frequency
    record = RunRecord(cfg=cfg, timings=[])
    channel = StageChannel()
    with ThreadPoolExecutor(max_workers=cfg.sim_workers) as sim_pool, \
            ThreadPoolExecutor(max_workers=cfg.insitu_workers) as insitu_pool:
        ctx = TaskContext(workers=cfg.insitu_workers,
                          out_dir=cfg.task_params.get("out_dir"),
                          mesh=getattr(sim, "cfg", None), executor=insitu_pool,
                          cfg=cfg)
        task.init(ctx)
        consumer = _Consumer(channel, task.async_part)
        consumer.start()
        state = sim.init_state()
        try:
            for step in range(1, cfg.total_steps + 1):
                t0 = time.perf_counter()
                state = sim.step(state, workers=cfg.sim_workers, executor=sim_pool)
                t1 = time.perf_counter()
                t_insitu = t_transfer = t_wait = 0.0
                if _fires(step, cfg.frequency):
                    snap = sim.view(state) if hasattr(sim, "view") else state
                    try:
                        task.sync_part(snap, step)
                    except Exception as exc:
                        raise RunError(step, exc) from exc
                    t_insitu = time.perf_counter() - t1
                if _fires(step, f_async):
                    t2 = time.perf_counter()
                    payload = task.async_payload(step)
                    t3 = time.perf_counter()
                    wait, handoff = channel.send((payload, step))
                    t_transfer = (t3 - t2) + handoff
                    t_wait = wait
                t_end = time.perf_counter()
                record.timings.append(StepTimings(
                    step_index=step, t_sim=t1 - t0, t_transfer=t_transfer,
                    t_insitu_inline=t_insitu, t_wait=t_wait, t_total=t_end - t0))
        finally:
            channel.close()
            consumer.join()
        task.end()
    record.final_state = state
    record.task_outputs = consumer.outputs
    record.insitu_durations = consumer.durations
    if consumer.error is not None:
        step, exc = consumer.error
        raise RunError(step, exc)
    return record


def run(sim, task: InSituTask, cfg: InSituConfig) -> RunRecord:
    runner = {"synchronous": run_synchronous,
              "asynchronous": run_asynchronous,
              "hybrid": run_hybrid}[cfg.mode]
    return runner(sim, task, cfg)


@dataclass
class SplitResult:
    insitu_workers: int
    means: dict[str, float]
    best: bool = False


def sweep_splits(sim_factory, task_factory, cfg: InSituConfig,
                 splits: list[int]) -> list[SplitResult]:
    """Run the configured mode once per split; flag the argmin split."""
    results = []
    for p_insitu in splits:
        run_cfg = InSituConfig(
            mode=cfg.mode, total_workers=cfg.total_workers,
            insitu_workers=p_insitu, frequency=cfg.frequency,
            task_id=cfg.task_id, task_params=cfg.task_params,
            total_steps=cfg.total_steps, async_frequency=cfg.async_frequency)
        record = run(sim_factory(), task_factory(run_cfg), run_cfg)
        results.append(SplitResult(insitu_workers=p_insitu,
                                   means=record.mean_timings()))
    if results:
        best = min(results, key=lambda r: r.means["t_total"])
        best.best = True
    return results
