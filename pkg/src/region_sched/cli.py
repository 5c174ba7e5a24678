"""Command-line front end: single runs, ablation sweeps, trace replay, maps.

Usage:
    region-sched run <config.json> [--out DIR] [--seed N] [--threads N]
    region-sched ablate <config.json> [--out DIR] [--seed N] [--threads N]
    region-sched replay <config.json> [--out DIR] [--seed N]
    region-sched maps <config.json> [--out DIR] [--seed N]

Exit codes: 0 ok, 2 config error (message names the field path), 3 numeric
failure (message names the step), 4 trace/manifest error.  Every command is
reproducible: the same config and seed produce byte-identical outputs,
except for the wall_time column of ablation CSVs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config, resolved_dict
from .core import LatentGrid, RegionMap, SigmaSchedule
from .errors import ConfigError, FormatError, ManifestError, NumericError, ParameterError
from .figures import save_ratio_dilation_figure, save_run_activity, save_variant_figure
from .metrics import mse, psnr, ssim
from .oracle import DeltaDenoiser, GmmDenoiser, forward_noise, make_default_prior, make_scene
from .sampler import RunReport, compute_ratio, full_sample, ras_like_sample, sdit_sample
from .tensor_io import TraceRecorder, load_trace, replay_schedule, write_array, write_pgm, write_ppm

__all__ = ["main"]


def _world(cfg: RunConfig):
    """Scene, schedule, denoiser, and the noised starting grid for one run."""
    scene = make_scene(cfg.scene)
    s = cfg.schedule.build()
    if cfg.denoiser == "gmm":
        d = GmmDenoiser(make_default_prior(cfg.scene))
    else:
        d = DeltaDenoiser(scene)
    x_start = forward_noise(scene, s.sigma_max, seed=cfg.sampler.seed)
    return scene, s, d, x_start


def _run_method(cfg: RunConfig, d, x_start: LatentGrid, s: SigmaSchedule, observer=None, on_step=None):
    if cfg.method == "full":
        return full_sample(d, x_start, s, on_step=on_step)
    if cfg.method == "sdit":
        return sdit_sample(d, x_start, s, cfg.sampler, observer)
    if cfg.method == "random":
        return sdit_sample(d, x_start, s, replace(cfg.sampler, selection="random"), observer)
    return ras_like_sample(d, x_start, s, cfg.flat_ratio(), patch=cfg.sampler.uniform_patch)


class _MapWriter:
    """Step observer that renders segmentation and complexity per sparse step."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.written = 0

    def __call__(self, t, plan, seg, cmap):
        if plan.mode != "sparse" or seg is None or cmap is None:
            return
        write_ppm(seg, self.out_dir / f"seg_t{t:03d}.ppm")
        write_pgm(cmap, self.out_dir / f"cmplx_t{t:03d}.pgm")
        self.written += 1


def _metric_block(x_out: LatentGrid, x_ref: LatentGrid, data_range: float) -> dict:
    return {
        "mse": mse(x_out, x_ref),
        "psnr": psnr(x_out, x_ref, data_range),
        "ssim": ssim(x_out, x_ref, data_range),
    }


def _write_report_json(path: Path, cfg: RunConfig, report: RunReport, metrics: dict | None):
    doc = {
        "engine_version": __version__,
        "config": resolved_dict(cfg),
        "report": report.to_dict(),
        "metrics": metrics,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(cfg: RunConfig, out_dir: Path) -> int:
    if cfg.trace_dir is not None and cfg.method != "full":
        raise ConfigError("trace_dir", "trace recording requires method 'full'")
    scene, s, d, x_start = _world(cfg)
    span = cfg.scene.value_range[1] - cfg.scene.value_range[0]

    observer = None
    if cfg.emit_maps:
        if cfg.method not in ("sdit", "random"):
            raise ConfigError("emit_maps", f"method {cfg.method!r} has no region maps")
        observer = _MapWriter(out_dir)

    recorder = None
    if cfg.trace_dir is not None:
        trace_dir = Path(cfg.trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)
        recorder = TraceRecorder(trace_dir)

    x_out, report = _run_method(cfg, d, x_start, s, observer=observer, on_step=recorder)
    if recorder is not None:
        recorder.finalize()

    metrics = None
    if cfg.method != "full":
        x_ref, _ = full_sample(d, x_start, s)
        metrics = _metric_block(x_out, x_ref, span)

    write_array(x_out, out_dir / "result.npy")
    _write_report_json(out_dir / "report.json", cfg, report, metrics)
    if cfg.emit_figures:
        save_run_activity(report, str(out_dir / "activity.png"))
    print(f"wrote {out_dir / 'report.json'}")
    return 0


_CSV_METRICS = ("compute_ratio", "mse", "psnr", "ssim", "wall_time")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _sweep_cell(cfg: RunConfig, d, x_start, s, x_ref, span):
    """One ablation cell: run, compare to the dense reference, time it."""
    t0 = time.perf_counter()
    x_out, report = _run_method(cfg, d, x_start, s)
    wall = time.perf_counter() - t0
    m = _metric_block(x_out, x_ref, span)
    return {
        "compute_ratio": compute_ratio(report),
        "mse": m["mse"],
        "psnr": m["psnr"],
        "ssim": m["ssim"],
        "wall_time": wall,
    }


def _write_csv(path: Path, axis_cols: tuple[str, ...], rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method",) + axis_cols + _CSV_METRICS)
        for r in rows:
            w.writerow(
                [r["method"]]
                + [_fmt(r.get(c, "")) for c in axis_cols]
                + [_fmt(r[c]) for c in _CSV_METRICS]
            )


def cmd_ablate(cfg: RunConfig, out_dir: Path, threads: int) -> int:
    if cfg.sweep.empty:
        raise ConfigError("sweep", "no sweep axes configured")
    scene, s, d, x_start = _world(cfg)
    span = cfg.scene.value_range[1] - cfg.scene.value_range[0]

    t0 = time.perf_counter()
    x_ref, ref_report = full_sample(d, x_start, s)
    ref_wall = time.perf_counter() - t0
    ref_row = {
        "method": "full",
        "compute_ratio": 1.0,
        "mse": 0.0,
        "psnr": psnr(x_ref, x_ref, span),
        "ssim": 1.0,
        "wall_time": ref_wall,
    }

    # (csv name, axis columns, list of (axis values, cfg) cells)
    sweeps: list[tuple[str, tuple[str, ...], list[tuple[dict, RunConfig]]]] = []
    if cfg.sweep.partitioners:
        cells = [
            ({"partitioner": p}, replace(cfg, sampler=replace(cfg.sampler, partitioner=p)))
            for p in cfg.sweep.partitioners
        ]
        sweeps.append(("partitioner_sweep.csv", ("partitioner",), cells))
    if cfg.sweep.scorers:
        cells = [
            ({"scorer": v}, replace(cfg, sampler=replace(cfg.sampler, scorer=v)))
            for v in cfg.sweep.scorers
        ]
        sweeps.append(("scorer_sweep.csv", ("scorer",), cells))
    if cfg.sweep.ratios and cfg.sweep.dilations:
        cells = []
        for r in cfg.sweep.ratios:
            for dil in cfg.sweep.dilations:
                ssd = replace(cfg.sampler.ssd, p_min=r, p_max=r)
                cells.append(
                    (
                        {"ratio": r, "dilation": dil},
                        replace(cfg, sampler=replace(cfg.sampler, ssd=ssd, dilation=dil)),
                    )
                )
        sweeps.append(("ratio_dilation_sweep.csv", ("ratio", "dilation"), cells))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for csv_name, axis_cols, cells in sweeps:
            futures = [
                pool.submit(_sweep_cell, cell_cfg, d, x_start, s, x_ref, span)
                for _, cell_cfg in cells
            ]
            rows = [dict(ref_row)]
            for (axes, cell_cfg), fut in zip(cells, futures):
                row = {"method": cell_cfg.method, **axes, **fut.result()}
                rows.append(row)
            _write_csv(out_dir / csv_name, axis_cols, rows)
            if cfg.emit_figures:
                body = rows[1:]
                fig_path = str(out_dir / (csv_name[: -len(".csv")] + ".png"))
                if axis_cols == ("ratio", "dilation"):
                    save_ratio_dilation_figure(body, fig_path)
                else:
                    save_variant_figure(body, axis_cols[0], fig_path)
            print(f"wrote {out_dir / csv_name}")
    return 0


def cmd_replay(cfg: RunConfig, out_dir: Path) -> int:
    if cfg.trace_dir is None:
        raise ConfigError("trace_dir", "replay needs a recorded trace directory")
    trace = load_trace(cfg.trace_dir)
    result = replay_schedule(trace, cfg.sampler)

    with open(out_dir / "replay.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ("t", "sigma", "mode", "active_pixel_count", "region_count", "cached_error", "probe_divergence")
        )
        for r in result.rows:
            w.writerow(
                (
                    r.t,
                    _fmt(r.sigma),
                    r.mode,
                    r.active_pixel_count,
                    r.region_count,
                    "" if r.cached_error is None else _fmt(r.cached_error),
                    "" if r.probe_divergence is None else _fmt(r.probe_divergence),
                )
            )

    for plan in result.plans:
        if plan.mode == "sparse":
            mask_map = RegionMap.from_labels(plan.omega.bits.astype("int64"))
            write_ppm(mask_map, out_dir / f"mask_t{plan.t:03d}.ppm")
    print(f"wrote {out_dir / 'replay.csv'}")
    return 0


def cmd_maps(cfg: RunConfig, out_dir: Path) -> int:
    if cfg.method not in ("sdit", "random"):
        raise ConfigError("method", f"maps need a region-scheduled method, got {cfg.method!r}")
    scene, s, d, x_start = _world(cfg)
    writer = _MapWriter(out_dir)
    _run_method(cfg, d, x_start, s, observer=writer)
    print(f"wrote {writer.written} map pairs to {out_dir}")
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="region-sched", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "ablate", "replay", "maps"):
        sp = sub.add_parser(name)
        sp.add_argument("config", help="path to a JSON run config")
        sp.add_argument("--out", default=None, help="output directory (beats config output_dir)")
        sp.add_argument("--seed", type=int, default=None, help="override sampler seed")
        sp.add_argument("--threads", type=int, default=1, help="sweep worker threads")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, sampler=replace(cfg.sampler, seed=args.seed))
        out_dir = Path(args.out or cfg.output_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        threads = int(os.environ.get("REGION_SCHED_THREADS", args.threads))
        if args.command == "run":
            return cmd_run(cfg, out_dir)
        if args.command == "ablate":
            return cmd_ablate(cfg, out_dir, threads)
        if args.command == "replay":
            return cmd_replay(cfg, out_dir)
        return cmd_maps(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (ManifestError, FormatError) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 4
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
