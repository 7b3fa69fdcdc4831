"""Concrete in-situ tasks: compression to archive, slice images, streaming UQ.

Each implements the InSituTask lifecycle; compression, image and UQ also
provide the hybrid split (inline stage + staged asynchronous stage). Task
outputs are pure functions of the snapshot, so archives, frames and UQ
CSVs come out byte-identical in every coupling mode.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import compress, render, uq
from .engine import InSituTask, TaskContext
from .proxysim import FIELD_NAMES, ProxySimulator
from .spectral import ElementField, dlt_forward, gll_basis


def _chunk(seq, workers: int):
    arr = np.array_split(np.arange(len(seq)), max(workers, 1))
    return [c for c in arr if c.size]


@dataclass
class CompressionOutput:
    step_index: int
    paths: list
    reports: dict
    archive_bytes: int


class CompressionTask(InSituTask):
    """DLT + truncation + lossless encode of all four fields per firing.

    Hybrid split mirrors the natural pipeline: truncation happens inline
    (it reuses simulation-side data), encoding and writing happen on the
    in-situ side.
    """

    supports_hybrid = True

    def __init__(self, epsilon: float = 1e-2, codec_id: int = compress.CODEC_DEFLATE,
                 fields=FIELD_NAMES, keep_reports: bool = True):
        super().__init__()
        self.spec = compress.TruncationSpec(epsilon)
        self.codec_id = codec_id
        self.fields = tuple(fields)
        self.keep_reports = keep_reports
        self._pending = []

    def on_init(self, ctx: TaskContext):
        self.ctx = ctx
        self.basis = gll_basis(ctx.mesh.order)
        self.out_dir = ctx.out_dir or "out"
        os.makedirs(self.out_dir, exist_ok=True)

    def _truncate_fields(self, snapshot):
        """Lossy stage: per-field list of truncated blocks."""
        p = self.basis.order
        out = {}
        for name in self.fields:
            values = snapshot.fields[name]
            elem_ids = np.arange(values.shape[0])

            def work(ids, values=values, p=p):
                blocks = []
                for e in ids:
                    fld = ElementField(order=p, values=values[e], element_id=int(e))
                    blocks.append(compress.truncate(
                        dlt_forward(fld, self.basis), self.basis, self.spec))
                return blocks

            chunks = _chunk(elem_ids, self.ctx.workers)
            if self.ctx.executor is not None and len(chunks) > 1:
                parts = list(self.ctx.executor.map(
                    work, [elem_ids[c] for c in chunks]))
            else:
                parts = [work(elem_ids[c]) for c in chunks]
            out[name] = [b for part in parts for b in part]
        return out

    def _encode_and_write(self, blocks_by_field: dict, step_index: int):
        paths = []
        reports = {}
        total_bytes = 0
        for name, blocks in blocks_by_field.items():
            archive = compress.encode(blocks, p=self.basis.order,
                                      epsilon=self.spec.epsilon, field_name=name,
                                      codec_id=self.codec_id)
            data = archive.to_bytes()
            path = os.path.join(self.out_dir, f"{name}_{step_index:08d}.nkz")
            try:
                with open(path, "wb") as fh:
                    fh.write(data)
            except OSError as exc:
                raise RuntimeError(f"archive write failed at {path}: {exc}") from exc
            paths.append(path)
            total_bytes += len(data)
            if self.keep_reports:
                n3 = (self.basis.order + 1) ** 3
                kept = sum(int(b.kept_mask.sum()) for b in blocks)
                reports[name] = {
                    "ratio": len(blocks) * n3 * 8 / len(data),
                    "discarded_fraction": 1.0 - kept / (len(blocks) * n3),
                }
        return CompressionOutput(step_index=step_index, paths=paths,
                                 reports=reports, archive_bytes=total_bytes)

    def on_check(self, snapshot, step_index):
        return self._encode_and_write(self._truncate_fields(snapshot), step_index)

    # hybrid protocol
    def sync_part(self, snapshot, step_index):
        self._pending.append((step_index, self._truncate_fields(snapshot)))

    def async_payload(self, step_index):
        pending, self._pending = self._pending, []
        return pending

    def async_part(self, payload, step_index):
        return [self._encode_and_write(blocks, step) for step, blocks in payload]


@dataclass
class ImageOutput:
    step_index: int
    path: str
    n_bytes: int


class ImageTask(InSituTask):
    """Slice rasterization to binary PPM frames.

    Rasterization fans out over element footprints; the gather, colormap
    and encode stage is serialized through one worker on purpose (it is
    the stand-in for the poorly scaling collective stage).
    """

    supports_hybrid = True

    def __init__(self, spec: render.ImageSpec = None):
        super().__init__()
        self.spec = spec or render.ImageSpec()
        self._pending = []

    def on_init(self, ctx: TaskContext):
        self.ctx = ctx
        self.basis = gll_basis(ctx.mesh.order)
        self.out_dir = ctx.out_dir or "out"
        os.makedirs(self.out_dir, exist_ok=True)
        # slice position must be inside the domain: validated here, not per frame
        if not (0.0 <= self.spec.slice_position <= 1.0):
            raise render.SliceConfigError("slice outside domain")

    def _rasterize(self, snapshot) -> np.ndarray:
        return render.sample_slice(
            snapshot.fields, self.ctx.mesh.elements_per_axis, self.basis,
            self.spec, executor=self.ctx.executor, workers=self.ctx.workers)

    def _gather_and_write(self, frame: np.ndarray, step_index: int) -> ImageOutput:
        rgb = render.colorize(frame, self.spec.value_range)
        path = os.path.join(self.out_dir, f"frame_{step_index:08d}.ppm")
        render.write_ppm(path, rgb)
        return ImageOutput(step_index=step_index, path=path,
                           n_bytes=os.path.getsize(path))

    def on_check(self, snapshot, step_index):
        return self._gather_and_write(self._rasterize(snapshot), step_index)

    # hybrid protocol: inline sampling, staged colormap + encode
    def sync_part(self, snapshot, step_index):
        self._pending.append((step_index, self._rasterize(snapshot)))

    def async_payload(self, step_index):
        pending, self._pending = self._pending, []
        return pending

    def async_part(self, payload, step_index):
        return [self._gather_and_write(frame, step) for step, frame in payload]


@dataclass
class UQOutput:
    step_index: int
    path: str
    n_bytes: int
    max_tau_int: float


class UQTask(InSituTask):
    """Streaming ACF lag updates plus periodic model-fit estimation.

    `n_lags` training lags are updated from the per-element average
    velocity magnitude on every firing; every `estimate_every` steps the
    exponential ACF model is fitted and a per-element CSV emitted. In
    hybrid mode the update is the inline part and the fit the staged part.
    """

    supports_hybrid = True

    def __init__(self, n_lags: int = 50, estimate_every: int = 50):
        super().__init__()
        self.n_lags = n_lags
        self.estimate_every = estimate_every
        self.lags = None

    def on_init(self, ctx: TaskContext):
        self.ctx = ctx
        self.out_dir = ctx.out_dir or "out"
        os.makedirs(self.out_dir, exist_ok=True)
        self._averager = ProxySimulator(ctx.mesh)
        self.lags = uq.TrainingLags(self.n_lags, ctx.mesh.n_elements)

    def _update(self, snapshot):
        self.lags.update(self._averager.element_average_velocity(snapshot))

    def _estimate_and_write(self, lags: uq.TrainingLags, step_index: int):
        if lags.count == 0 or int(lags._n.min()) < 10:
            return None
        results = self._parallel_estimate(lags)
        path = os.path.join(self.out_dir, f"uq_{step_index:08d}.csv")
        uq.write_uq_csv(path, results)
        return UQOutput(step_index=step_index, path=path,
                        n_bytes=os.path.getsize(path),
                        max_tau_int=max(r.tau_int for r in results))

    def _parallel_estimate(self, lags: uq.TrainingLags):
        # estimate() is already per-element; keep it single-call (the
        # per-element cost heterogeneity is part of the workload model)
        return uq.estimate(lags)

    def on_check(self, snapshot, step_index):
        self._update(snapshot)
        if step_index % self.estimate_every == 0:
            return self._estimate_and_write(self.lags, step_index)
        return None

    # hybrid protocol: inline lag updates, staged estimation
    def sync_part(self, snapshot, step_index):
        self._update(snapshot)

    def async_payload(self, step_index):
        return self.lags.copy()

    def async_part(self, payload, step_index):
        return self._estimate_and_write(payload, step_index)


class NullTask(InSituTask):
    """No-op task for baseline (sim-only) timing runs."""

    def on_check(self, snapshot, step_index):
        return None


def make_task(task_id: str, params: dict) -> InSituTask:
    """Factory used by the bench driver and CLI."""
    params = dict(params)
    params.pop("out_dir", None)
    if task_id == "none":
        return NullTask()
    if task_id == "compression":
        return CompressionTask(
            epsilon=params.get("epsilon", 1e-2),
            codec_id=params.get("codec_id", compress.CODEC_DEFLATE))
    if task_id == "image":
        spec = render.ImageSpec(
            axis=params.get("axis", "z"),
            slice_position=params.get("slice_position", 0.5),
            width=params.get("width", 256),
            height=params.get("height", 256),
            value_range=tuple(params["value_range"]) if params.get("value_range") else None,
            field=params.get("field", "vel_mag"))
        return ImageTask(spec)
    if task_id == "uq":
        return UQTask(n_lags=params.get("n_lags", 50),
                      estimate_every=params.get("estimate_every", 50))
    raise ValueError(f"unknown task id {task_id!r}")
