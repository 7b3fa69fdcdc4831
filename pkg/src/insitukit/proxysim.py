"""Deterministic proxy solver standing in for a spectral-element CFD code.

Holds pressure and three velocity fields on a box of elements. Each field
is a superposition of separable Fourier modes whose phases rotate in time,
so the data stays turbulence-like and bounded while the per-step cost is
constant and scales linearly with the element count. A step additionally
performs genuine tensor-product derivative work per element (the gradient
magnitude is kept as a diagnostic), so simulation cost behaves like real
per-element compute.

Results are bit-identical for a given seed regardless of how many workers
process the element ranges.
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .spectral import Basis1D, gll_basis

FIELD_NAMES = ("pressure", "vel_x", "vel_y", "vel_z")


@dataclass(frozen=True)
class MeshConfig:
    elements_per_axis: tuple[int, int, int] = (4, 4, 4)
    order: int = 7
    seed: int = 0
    spectrum_slope: float = -5.0 / 3.0
    n_modes: int = 32
    dt: float = 1e-3

    def __post_init__(self):
        ex, ey, ez = self.elements_per_axis
        if ex < 1 or ey < 1 or ez < 1:
            raise ValueError(f"elements_per_axis must be positive, got {self.elements_per_axis}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_modes < 0:
            raise ValueError(f"n_modes must be >= 0, got {self.n_modes}")

    @property
    def n_elements(self) -> int:
        ex, ey, ez = self.elements_per_axis
        return ex * ey * ez


@dataclass
class SimState:
    time: float
    step_index: int
    fields: dict[str, np.ndarray]  # name -> (n_elements, n, n, n)
    grad_max: float = 0.0


@dataclass(frozen=True)
class _ModeTable:
    """Per-field separable Fourier modes: amplitudes, wavevectors, phases."""

    amplitude: np.ndarray   # (M,)
    wavevec: np.ndarray     # (M, 3) integer wavenumbers
    phase: np.ndarray       # (M, 3) initial phases
    omega: np.ndarray       # (M,) phase rotation rates


class ProxySimulator:
    """Stepper over the synthetic multi-scale fields."""

    def __init__(self, cfg: MeshConfig):
        self.cfg = cfg
        self.basis: Basis1D = gll_basis(cfg.order)
        ex, ey, ez = cfg.elements_per_axis
        n = cfg.order + 1
        # physical GLL coordinates per axis: (elements_on_axis, n) in [0, 1]
        ref = (self.basis.nodes + 1.0) / 2.0
        self._coords = tuple(
            (np.arange(e)[:, None] + ref[None, :]) / e for e in (ex, ey, ez))
        # element_id = (iz*ey + iy)*ex + ix
        iz, iy, ix = np.meshgrid(np.arange(ez), np.arange(ey), np.arange(ex),
                                 indexing="ij")
        self._eix = ix.ravel()
        self._eiy = iy.ravel()
        self._eiz = iz.ravel()
        self._modes = self._build_modes(cfg)
        w = self.basis.weights
        self._w3 = w[:, None, None] * w[None, :, None] * w[None, None, :]

    @staticmethod
    def _build_modes(cfg: MeshConfig) -> dict[str, _ModeTable]:
        rng = np.random.default_rng(cfg.seed)
        modes = {}
        for name in FIELD_NAMES:
            k = rng.integers(1, 5, size=(cfg.n_modes, 3))
            kmag = np.sqrt((k ** 2).sum(axis=1))
            amp = kmag ** (cfg.spectrum_slope / 2.0) if cfg.n_modes else np.empty(0)
            phase = rng.uniform(0.0, 2.0 * np.pi, size=(cfg.n_modes, 3))
            omega = 2.0 * np.pi * 0.1 * kmag
            for a in (amp, k, phase, omega):
                a.setflags(write=False)
            modes[name] = _ModeTable(amplitude=amp, wavevec=k, phase=phase, omega=omega)
        return modes

    # -- field evaluation -------------------------------------------------

    def _axis_tables(self, table: _ModeTable, t: float) -> list[np.ndarray]:
        """cos(2 pi k_a x + phi_a + omega t) per axis: list of (M, E_a, n)."""
        out = []
        for axis in range(3):
            coords = self._coords[axis]  # (E_a, n)
            k = table.wavevec[:, axis][:, None, None]
            phi = table.phase[:, axis][:, None, None]
            rot = (table.omega * t)[:, None, None] if axis == 0 else 0.0
            out.append(np.cos(2.0 * np.pi * k * coords[None, :, :] + phi + rot))
        return out

    def _eval_field(self, name: str, t: float, elems: np.ndarray) -> np.ndarray:
        """Evaluate one field at time t on the given element ids: (E, n, n, n)."""
        n = self.cfg.order + 1
        table = self._modes[name]
        if table.amplitude.size == 0:
            return np.zeros((elems.size, n, n, n))
        cx, cy, cz = self._axis_tables(table, t)
        zi = cz[:, self._eiz[elems], :]   # (M, E, n)
        yi = cy[:, self._eiy[elems], :]
        xi = cx[:, self._eix[elems], :]
        zy = np.einsum("mei,mej->meij", zi, yi)
        zy *= table.amplitude[:, None, None, None]
        # contraction over modes is sequential -> identical per element
        # regardless of how elements are partitioned across workers
        return np.einsum("meij,mek->eijk", zy, xi)

    def _grad_max(self, values: np.ndarray, axis_extent: tuple[int, int, int]) -> float:
        """Max gradient magnitude via tensor-product differentiation."""
        d = self.basis.diff_matrix
        ex, ey, ez = axis_extent
        dz = np.einsum("ij,ejkl->eikl", d, values) * (2.0 * ez)
        dy = np.einsum("ij,ekjl->ekil", d, values) * (2.0 * ey)
        dx = np.einsum("ij,eklj->ekli", d, values) * (2.0 * ex)
        return float(np.sqrt(dz ** 2 + dy ** 2 + dx ** 2).max()) if values.size else 0.0

    # -- public API -------------------------------------------------------

    def init_state(self) -> SimState:
        all_elems = np.arange(self.cfg.n_elements)
        fields = {name: self._eval_field(name, 0.0, all_elems)
                  for name in FIELD_NAMES}
        return SimState(time=0.0, step_index=0, fields=fields)

    def step(self, state: SimState, workers: int = 1,
             executor: Optional[Executor] = None) -> SimState:
        """Advance one step; bit-identical for any worker count."""
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        new_index = state.step_index + 1
        t = new_index * self.cfg.dt
        chunks = np.array_split(np.arange(self.cfg.n_elements), workers)
        chunks = [c for c in chunks if c.size]

        def update(elems: np.ndarray):
            out = {name: self._eval_field(name, t, elems) for name in FIELD_NAMES}
            gmax = max(self._grad_max(v, self.cfg.elements_per_axis)
                       for v in out.values())
            return out, gmax

        if executor is not None and len(chunks) > 1:
            results = list(executor.map(update, chunks))
        else:
            results = [update(c) for c in chunks]

        fields = {name: np.concatenate([r[0][name] for r in results])
                  for name in FIELD_NAMES}
        grad_max = max(r[1] for r in results)
        return SimState(time=t, step_index=new_index, fields=fields,
                        grad_max=grad_max)

    def element_average_velocity(self, state: SimState) -> np.ndarray:
        """GLL-weighted average velocity magnitude per element."""
        mag = np.sqrt(state.fields["vel_x"] ** 2 + state.fields["vel_y"] ** 2
                      + state.fields["vel_z"] ** 2)
        return np.einsum("eijk,ijk->e", mag, self._w3) / self._w3.sum()

    def snapshot(self, state: SimState) -> SimState:
        """Deep copy for cross-worker-group transfer."""
        return SimState(time=state.time, step_index=state.step_index,
                        fields={k: v.copy() for k, v in state.fields.items()},
                        grad_max=state.grad_max)
