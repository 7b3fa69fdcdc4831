"""Sleep-based synthetic workloads for calibrating the coupling laws.

These stand in for the solver and tasks when the point under test is the
orchestration itself (additive law in synchronous mode, max-law under
backpressure, split sweet spots), not the numerics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .engine import InSituTask, TaskContext


@dataclass
class SleepState:
    step_index: int = 0
    payload: tuple = ()


class SleepSimulator:
    """Fixed- or scaling-cost stand-in for the solver.

    per_step is the single-worker step cost; with scale_with_workers the
    cost is per_step / workers (a perfectly scaling solver).
    """

    def __init__(self, per_step: float, scale_with_workers: bool = False):
        self.per_step = per_step
        self.scale_with_workers = scale_with_workers
        self.cfg = None

    def init_state(self) -> SleepState:
        return SleepState()

    def step(self, state: SleepState, workers: int = 1, executor=None) -> SleepState:
        cost = self.per_step / workers if self.scale_with_workers else self.per_step
        time.sleep(cost)
        return SleepState(step_index=state.step_index + 1)

    def snapshot(self, state: SleepState) -> SleepState:
        return SleepState(step_index=state.step_index, payload=state.payload)


class SleepTask(InSituTask):
    """Task with a fixed check cost."""

    supports_hybrid = True

    def __init__(self, check_cost: float, sync_cost: float = 0.0):
        super().__init__()
        self.check_cost = check_cost
        self.sync_cost = sync_cost
        self.checked_steps: list[int] = []

    def on_check(self, snapshot, step_index):
        time.sleep(self.check_cost)
        self.checked_steps.append(step_index)
        return None

    def sync_part(self, snapshot, step_index):
        time.sleep(self.sync_cost)

    def async_payload(self, step_index):
        return step_index

    def async_part(self, payload, step_index):
        time.sleep(self.check_cost)
        self.checked_steps.append(step_index)
        return None


class AmdahlSleepTask(InSituTask):
    """Task whose cost follows Amdahl's law in the granted worker count:
    base_cost * (serial_fraction + (1 - serial_fraction) / workers)."""

    def __init__(self, base_cost: float, serial_fraction: float = 0.8):
        super().__init__()
        self.base_cost = base_cost
        self.serial_fraction = serial_fraction
        self.workers = 1

    def cost(self, workers: int) -> float:
        return self.base_cost * (self.serial_fraction
                                 + (1.0 - self.serial_fraction) / workers)

    def on_init(self, ctx: TaskContext):
        self.workers = ctx.workers

    def on_check(self, snapshot, step_index):
        time.sleep(self.cost(self.workers))
        return None
