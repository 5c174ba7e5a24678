"""Array file I/O, map images, and trace record/replay.

Arrays travel as NPY version 1.0 (written by hand so the byte layout is
pinned, not inherited from whatever numpy release is installed), with a
dependency-free "RSGRID01" raw container as a fallback the reader accepts
transparently.  Scalar maps render to PGM P5, region maps to PPM P6 with
a hashed 24-bit palette.  A trace is a directory of per-step arrays plus
a trace.json manifest; replay re-runs every scheduling decision against
the recorded latents without ever re-integrating the state.
"""

from __future__ import annotations

import ast
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .complexity import ComplexityMap
from .core import BitMask, LatentGrid, RegionMap
from .errors import FormatError, ManifestError, ParameterError
from .partition import DensityField
from .sampler import RunReport, SamplerConfig, ScheduleEngine, StepRecord
from .ssd import StepPlan, measure_divergence

__all__ = [
    "read_array",
    "write_array",
    "write_rsgrid",
    "write_pgm",
    "write_ppm",
    "TraceStep",
    "TraceRecorder",
    "load_trace",
    "ReplayRow",
    "ReplayResult",
    "replay_schedule",
]

_NPY_MAGIC = b"\x93NUMPY"
_RSGRID_MAGIC = b"RSGRID01"
_PALETTE_HASH = 0x9E3779B1


def _npy_header_bytes(descr: str, shape: tuple[int, ...]) -> bytes:
    """Header dict + padding so the payload starts on a 64-byte boundary."""
    dict_src = "{'descr': %r, 'fortran_order': False, 'shape': %s, }" % (
        descr,
        "(%s)" % ", ".join(str(int(n)) for n in shape),
    )
    raw = dict_src.encode("latin1")
    # magic(6) + version(2) + hlen(2) + header must be a multiple of 64
    unpadded = 6 + 2 + 2 + len(raw) + 1
    pad = (64 - unpadded % 64) % 64
    return raw + b" " * pad + b"\n"


def write_array(g: LatentGrid, path: str | Path):
    """Write a grid as NPY v1.0, little-endian 8-byte floats, C order."""
    header = _npy_header_bytes("<f8", g.shape)
    payload = np.ascontiguousarray(g.data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_NPY_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header)
        fh.write(payload)


def write_rsgrid(g: LatentGrid, path: str | Path):
    """Raw fallback container: magic, three u32 dims, f8 payload, all LE."""
    with open(path, "wb") as fh:
        fh.write(_RSGRID_MAGIC)
        fh.write(struct.pack("<III", g.height, g.width, g.channels))
        fh.write(np.ascontiguousarray(g.data, dtype="<f8").tobytes())


def _read_npy(blob: bytes, path: str) -> LatentGrid:
    if len(blob) < 10:
        raise FormatError(f"{path}: truncated before the version field")
    major, minor = blob[6], blob[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"{path}: unsupported version ({major}, {minor}), expected (1, 0)")
    (hlen,) = struct.unpack("<H", blob[8:10])
    header_end = 10 + hlen
    if len(blob) < header_end:
        raise FormatError(f"{path}: header length field exceeds the file")
    try:
        meta = ast.literal_eval(blob[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparseable header dict: {exc}") from None
    if not isinstance(meta, dict):
        raise FormatError(f"{path}: header is not a dict literal")
    descr = meta.get("descr")
    if descr not in ("<f8", "<f4"):
        raise FormatError(f"{path}: unsupported descr {descr!r}, expected '<f8' or '<f4'")
    if meta.get("fortran_order") is not False:
        raise FormatError(f"{path}: fortran_order must be False, got {meta.get('fortran_order')!r}")
    shape = meta.get("shape")
    if not (isinstance(shape, tuple) and len(shape) == 3 and all(isinstance(n, int) for n in shape)):
        raise FormatError(f"{path}: shape must be a rank-3 tuple, got {shape!r}")
    itemsize = 8 if descr == "<f8" else 4
    count = shape[0] * shape[1] * shape[2]
    body = blob[header_end:]
    if len(body) != count * itemsize:
        raise FormatError(
            f"{path}: payload holds {len(body)} bytes, shape {shape} needs {count * itemsize}"
        )
    data = np.frombuffer(body, dtype=descr).astype(np.float64).reshape(shape)
    return LatentGrid(data)


def _read_rsgrid(blob: bytes, path: str) -> LatentGrid:
    if len(blob) < 20:
        raise FormatError(f"{path}: truncated before the dims field")
    h, w, c = struct.unpack("<III", blob[8:20])
    count = h * w * c
    body = blob[20:]
    if len(body) != count * 8:
        raise FormatError(f"{path}: payload holds {len(body)} bytes, dims ({h}, {w}, {c}) need {count * 8}")
    data = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(h, w, c)
    return LatentGrid(data)


def read_array(path: str | Path) -> LatentGrid:
    """Read either container back to a grid; 4-byte floats widen to 8."""
    with open(path, "rb") as fh:
        blob = fh.read()
    name = str(path)
    if blob[:6] == _NPY_MAGIC:
        return _read_npy(blob, name)
    if blob[:8] == _RSGRID_MAGIC:
        return _read_rsgrid(blob, name)
    raise FormatError(f"{name}: unrecognized magic {blob[:8]!r}")


def _scalar_map(m) -> np.ndarray:
    if isinstance(m, ComplexityMap):
        return m.scores
    if isinstance(m, DensityField):
        return m.rho
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ParameterError(f"scalar map must be rank 2, got rank {arr.ndim}")
    return arr


def write_pgm(m, path: str | Path, lo: float | None = None, hi: float | None = None):
    """Scalar map as PGM P5.

    Default scaling is per-file min-max to 0..255 (a constant map emits
    zeros).  Passing both ``lo`` and ``hi`` pins an absolute scale instead,
    with out-of-range values clipped, so maps from different steps stay
    comparable.
    """
    arr = _scalar_map(m)
    if (lo is None) != (hi is None):
        raise ParameterError("lo and hi must be given together")
    if lo is None:
        lo, hi = float(arr.min()), float(arr.max())
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise ParameterError(f"bad scale [{lo}, {hi}]")
    if hi == lo:
        scaled = np.zeros(arr.shape, dtype=np.uint8)
    else:
        norm = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
        scaled = np.rint(norm * 255.0).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(scaled.tobytes())


def write_ppm(m: RegionMap, path: str | Path):
    """Region map as PPM P6 with a deterministic hashed palette."""
    labels = m.labels.astype(np.uint64)
    mixed = (labels * np.uint64(_PALETTE_HASH)) & np.uint64(0xFFFFFFFF)
    rgb = np.empty((m.height, m.width, 3), dtype=np.uint8)
    rgb[..., 0] = (mixed >> np.uint64(24)) & np.uint64(255)
    rgb[..., 1] = (mixed >> np.uint64(16)) & np.uint64(255)
    rgb[..., 2] = (mixed >> np.uint64(8)) & np.uint64(255)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (m.width, m.height))
        fh.write(rgb.tobytes())


@dataclass(frozen=True)
class TraceStep:
    """One manifest row: the sigma and array files for a recorded step."""

    t: int
    sigma: float
    x_path: Path
    eps_path: Path
    x_pred_path: Path


class TraceRecorder:
    """Callback for ``full_sample(..., on_step=recorder)`` that writes a trace.

    Arrays land as x_{t:03d}.npy / eps_{t:03d}.npy / xpred_{t:03d}.npy in
    ``out_dir``; ``finalize`` writes the trace.json manifest and returns
    its path.
    """

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._steps: list[dict] = []

    def __call__(self, t: int, sigma: float, x: LatentGrid, eps: LatentGrid, x_pred: LatentGrid):
        names = {
            "x": f"x_{t:03d}.npy",
            "eps": f"eps_{t:03d}.npy",
            "x_pred": f"xpred_{t:03d}.npy",
        }
        write_array(x, self.out_dir / names["x"])
        write_array(eps, self.out_dir / names["eps"])
        write_array(x_pred, self.out_dir / names["x_pred"])
        self._steps.append({"t": t, "sigma": sigma, **names})

    def finalize(self) -> Path:
        manifest = self.out_dir / "trace.json"
        with open(manifest, "w") as fh:
            json.dump({"steps": self._steps}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return manifest


def load_trace(trace_dir: str | Path) -> tuple[TraceStep, ...]:
    """Parse and validate trace.json; all referenced files must exist."""
    root = Path(trace_dir)
    manifest = root / "trace.json"
    if not manifest.is_file():
        raise ManifestError(f"no trace.json in {root}")
    try:
        doc = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest}: invalid JSON: {exc}") from None
    steps_doc = doc.get("steps") if isinstance(doc, dict) else None
    if not isinstance(steps_doc, list) or not steps_doc:
        raise ManifestError(f"{manifest}: 'steps' must be a non-empty list")
    steps = []
    for i, row in enumerate(steps_doc):
        if not isinstance(row, dict):
            raise ManifestError(f"{manifest}: steps[{i}] is not an object")
        try:
            t = int(row["t"])
            sigma = float(row["sigma"])
            paths = {key: root / str(row[key]) for key in ("x", "eps", "x_pred")}
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{manifest}: steps[{i}] malformed: {exc}") from None
        for key, p in paths.items():
            if not p.is_file():
                raise ManifestError(f"{manifest}: steps[{i}].{key} missing file {p}")
        steps.append(TraceStep(t, sigma, paths["x"], paths["eps"], paths["x_pred"]))
    if [s.t for s in steps] != list(range(len(steps))):
        raise ManifestError(f"{manifest}: step indices must run 0..{len(steps) - 1}")
    sigmas = [s.sigma for s in steps]
    if any(b >= a for a, b in zip(sigmas, sigmas[1:])):
        raise ManifestError(f"{manifest}: sigma sequence must be strictly decreasing")
    return tuple(steps)


@dataclass(frozen=True)
class ReplayRow:
    """Per-step replay outcome: scheduling decision plus error measurements.

    ``cached_error`` is the relative L2 between extrapolated and recorded
    noise over the pixels the plan left inactive (None on full steps);
    ``probe_divergence`` is the same probe measurement the live loop makes.
    """

    t: int
    sigma: float
    mode: str
    active_pixel_count: int
    region_count: int
    cached_error: float | None
    probe_divergence: float | None


@dataclass(frozen=True)
class ReplayResult:
    report: RunReport
    rows: tuple[ReplayRow, ...]
    plans: tuple[StepPlan, ...]


def replay_schedule(trace: tuple[TraceStep, ...], cfg: SamplerConfig) -> ReplayResult:
    """Re-run scheduling decisions offline against recorded latents.

    The state x is taken from the trace at every step, never integrated;
    planning, history pushes (restricted to each step's active set), probe
    draws, and extrapolation all go through the same ``ScheduleEngine`` the
    live sampler uses, so the decisions and divergence numbers are the
    ones a live run over this trajectory would produce.
    """
    if not trace:
        raise ManifestError("empty trace")
    first = read_array(trace[0].x_path)
    height, width, channels = first.shape
    sig = np.asarray([s.sigma for s in trace], dtype=np.float64)
    eng = ScheduleEngine(cfg, height, width, channels, sig)
    rows: list[ReplayRow] = []
    records: list[StepRecord] = []
    plans: list[StepPlan] = []

    for t, step in enumerate(trace):
        x = first if t == 0 else read_array(step.x_path)
        eps = read_array(step.eps_path)
        x_pred = read_array(step.x_pred_path)
        if eps.shape != (height, width, channels) or x_pred.shape != (height, width, channels):
            raise ManifestError(f"step {t}: array shapes disagree with step 0")
        if x.shape != (height, width, channels):
            raise ManifestError(f"step {t}: array shapes disagree with step 0")

        plan, seg_used, _ = eng.plan(t, x.data)
        eps_hat, _, probe_div = eng.absorb(t, plan, eps.data, x_pred.data)

        cached_error: float | None = None
        if plan.mode == "sparse":
            cached = ~plan.omega.bits
            if cached.any():
                cached_error = measure_divergence(eps_hat, eps.data, BitMask(cached))
        rows.append(
            ReplayRow(
                t=t,
                sigma=float(step.sigma),
                mode=plan.mode,
                active_pixel_count=plan.active_pixel_count,
                region_count=seg_used.region_count if seg_used is not None else 0,
                cached_error=cached_error,
                probe_divergence=probe_div,
            )
        )
        records.append(
            StepRecord(
                t=t,
                sigma=float(step.sigma),
                mode=plan.mode,
                active_pixel_count=plan.active_pixel_count,
                region_count=seg_used.region_count if seg_used is not None else 0,
                divergence=probe_div,
            )
        )
        plans.append(plan)

    report = RunReport(height, width, channels, tuple(records))
    return ReplayResult(report=report, rows=tuple(rows), plans=tuple(plans))
