"""Command line entry points.

Exit codes: 0 success, 1 config error, 2 run failure, 3 format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench, compress, engine, render, tasks, uq
from .proxysim import FIELD_NAMES, MeshConfig, ProxySimulator
from .spectral import ElementField, dlt_forward, dlt_inverse, gll_basis

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2
EXIT_FORMAT = 3


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise SystemExit_with(EXIT_CONFIG, f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise SystemExit_with(EXIT_CONFIG, f"config {path} is not valid JSON: {exc}")


def SystemExit_with(code: int, message: str) -> SystemExit:
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(code)


def _mesh_from_doc(doc: dict, seed=None) -> MeshConfig:
    m = doc.get("mesh", {})
    try:
        return MeshConfig(
            elements_per_axis=tuple(m.get("elements_per_axis", (4, 4, 4))),
            order=m.get("order", 7),
            seed=seed if seed is not None else m.get("seed", 0),
            spectrum_slope=m.get("spectrum_slope", -5.0 / 3.0),
            n_modes=m.get("n_modes", 32),
            dt=m.get("dt", 1e-3))
    except (ValueError, TypeError) as exc:
        raise SystemExit_with(EXIT_CONFIG, f"bad mesh config: {exc}")


def _advance(sim: ProxySimulator, steps: int):
    state = sim.init_state()
    for _ in range(steps):
        state = sim.step(state)
    return state


def cmd_compress(args) -> int:
    doc = _load_json(args.config)
    sim = ProxySimulator(_mesh_from_doc(doc, args.seed))
    state = _advance(sim, args.steps or 0)
    epsilon = doc.get("epsilon", 1e-2)
    basis = sim.basis
    os.makedirs(args.out_dir, exist_ok=True)
    spec = compress.TruncationSpec(epsilon)
    for name in FIELD_NAMES:
        blocks = []
        originals = []
        for e in range(sim.cfg.n_elements):
            fld = ElementField(order=basis.order, values=state.fields[name][e],
                               element_id=e)
            originals.append(fld)
            blocks.append(compress.truncate(dlt_forward(fld, basis), basis, spec))
        archive = compress.encode(blocks, p=basis.order, epsilon=epsilon,
                                  field_name=name)
        path = os.path.join(args.out_dir, f"{name}_{state.step_index:08d}.nkz")
        with open(path, "wb") as fh:
            fh.write(archive.to_bytes())
        rep = compress.compression_report(originals, archive, basis)
        print(f"{name}: ratio {rep.ratio:.2f}, discarded "
              f"{100 * rep.discarded_fraction:.1f}%, max RMSE {rep.max_rmse:.3e} "
              f"-> {path}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    try:
        with open(args.archive, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise SystemExit_with(EXIT_CONFIG, f"cannot read archive: {exc}")
    try:
        archive = compress.CompressedArchive.from_bytes(data)
        blocks = compress.decode(archive)
    except compress.ArchiveFormatError as exc:
        raise SystemExit_with(EXIT_FORMAT, f"bad archive: {exc}")
    basis = gll_basis(archive.order)
    fields = np.stack([dlt_inverse(b, basis).values for b in blocks]) \
        if blocks else np.zeros((0,) + (archive.order + 1,) * 3)
    np.save(args.out, fields)
    print(f"reconstructed {archive.element_count} elements of "
          f"'{archive.field_name}' (p={archive.order}) -> {args.out}")
    return EXIT_OK


def cmd_render(args) -> int:
    doc = _load_json(args.config)
    sim = ProxySimulator(_mesh_from_doc(doc, args.seed))
    state = _advance(sim, args.steps or 0)
    img = doc.get("image", {})
    try:
        spec = render.ImageSpec(
            axis=img.get("axis", "z"),
            slice_position=img.get("slice_position", 0.5),
            width=img.get("width", 256), height=img.get("height", 256),
            value_range=tuple(img["value_range"]) if img.get("value_range") else None,
            field=img.get("field", "vel_mag"))
    except render.SliceConfigError as exc:
        raise SystemExit_with(EXIT_CONFIG, str(exc))
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, f"frame_{state.step_index:08d}.ppm")
    render.render_slice_ppm(path, state.fields, sim.cfg.elements_per_axis,
                            sim.basis, spec)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_uq(args) -> int:
    doc = _load_json(args.config)
    sim = ProxySimulator(_mesh_from_doc(doc, args.seed))
    u = doc.get("uq", {})
    n_lags = u.get("n_lags", 50)
    update_every = u.get("update_every", 1)
    estimate_every = u.get("estimate_every", 50)
    steps = args.steps or doc.get("total_steps", 1000)
    os.makedirs(args.out_dir, exist_ok=True)
    lags = uq.TrainingLags(n_lags, sim.cfg.n_elements)
    state = sim.init_state()
    written = []
    for step in range(1, steps + 1):
        state = sim.step(state)
        if step % update_every == 0:
            lags.update(sim.element_average_velocity(state))
        if step % estimate_every == 0 and lags.count and int(lags._n.min()) >= 10:
            results = uq.estimate(lags)
            path = os.path.join(args.out_dir, f"uq_{step:08d}.csv")
            uq.write_uq_csv(path, results)
            written.append(path)
    print(f"wrote {len(written)} UQ csv files to {args.out_dir}")
    return EXIT_OK


def cmd_run(args) -> int:
    doc = _load_json(args.config)
    sim = ProxySimulator(_mesh_from_doc(doc, args.seed))
    ins = doc.get("insitu", {})
    params = dict(ins.get("task_params", {}))
    params.setdefault("out_dir", args.out_dir)
    try:
        cfg = engine.InSituConfig(
            mode=ins.get("mode", "synchronous"),
            total_workers=ins.get("total_workers", 1),
            insitu_workers=ins.get("insitu_workers", 0),
            frequency=ins.get("frequency", 1),
            task_id=ins.get("task_id", "compression"),
            task_params=params,
            total_steps=args.steps or ins.get("total_steps", 1000),
            async_frequency=ins.get("async_frequency"))
        task = tasks.make_task(cfg.task_id, params)
    except (engine.ConfigError, ValueError) as exc:
        raise SystemExit_with(EXIT_CONFIG, str(exc))
    try:
        record = engine.run(sim, task, cfg)
    except engine.RunError as exc:
        raise SystemExit_with(EXIT_RUN, str(exc))
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "steps.csv")
    record.to_csv(csv_path)
    means = record.mean_timings()
    print(f"{cfg.mode} run, {cfg.total_steps} steps: avg step "
          f"{means['t_total']:.6f}s (sim {means['t_sim']:.6f}s, inline "
          f"{means['t_insitu_inline']:.6f}s, wait {means['t_wait']:.6f}s) "
          f"-> {csv_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _load_json(args.plan)
    try:
        plan = bench.ExperimentPlan.from_dict(doc)
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise SystemExit_with(EXIT_CONFIG, f"bad plan: {exc}")
    if args.steps:
        plan.total_steps = args.steps
    if args.repeats:
        plan.repeats = args.repeats
    if args.seed is not None:
        plan.mesh = MeshConfig(
            elements_per_axis=plan.mesh.elements_per_axis, order=plan.mesh.order,
            seed=args.seed, spectrum_slope=plan.mesh.spectrum_slope,
            n_modes=plan.mesh.n_modes, dt=plan.mesh.dt)
    record = bench.run_plan(plan, args.out_dir)
    print(bench.report(record))
    if any(r.failed for r in record.rows):
        return EXIT_RUN
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        record = bench.read_sweep_csv(args.sweep_csv)
    except (OSError, KeyError, ValueError) as exc:
        raise SystemExit_with(EXIT_FORMAT, f"bad sweep csv: {exc}")
    tidy = os.path.join(args.out_dir, "tidy.csv") if args.out_dir else None
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    print(bench.report(record, tidy_csv_path=tidy))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="insitukit",
        description="in-situ coupling experiments around a spectral proxy solver")
    parser.add_argument("--out-dir", default="out")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--repeats", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("compress", help="compress the proxy fields to archives")
    p.add_argument("config")
    p.set_defaults(func=cmd_compress)
    p = sub.add_parser("reconstruct", help="decode an archive to an .npy file")
    p.add_argument("archive")
    p.add_argument("out")
    p.set_defaults(func=cmd_reconstruct)
    p = sub.add_parser("render", help="render one slice frame to PPM")
    p.add_argument("config")
    p.set_defaults(func=cmd_render)
    p = sub.add_parser("uq", help="run streaming UQ over a simulation")
    p.add_argument("config")
    p.set_defaults(func=cmd_uq)
    p = sub.add_parser("run", help="one engine run from a JSON config")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="execute an experiment plan")
    p.add_argument("plan")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("report", help="summarize a sweep csv")
    p.add_argument("sweep_csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except compress.ArchiveFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (engine.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except engine.RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
