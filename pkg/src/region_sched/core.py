"""Grid, mask, region-map, and noise-schedule primitives.

Everything downstream builds on these four value types.  All of them are
immutable after construction: the wrapped numpy buffers are marked
read-only, and operations return new instances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ScheduleError

__all__ = [
    "LatentGrid",
    "BitMask",
    "RegionMap",
    "SigmaSchedule",
    "make_schedule",
    "grid_stats",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LatentGrid:
    """An H x W x C field of 64-bit scalars.

    Rows are y, columns are x, the trailing axis is the channel.  Data is
    validated to be finite and is stored read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ParameterError(f"grid data must be rank 3 (H, W, C), got rank {arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ParameterError(f"grid axes must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("grid data contains non-finite values")
        object.__setattr__(self, "data", _freeze(arr))

    @classmethod
    def from_flat(cls, values, height: int, width: int, channels: int) -> "LatentGrid":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != height * width * channels:
            raise ParameterError(
                f"expected {height * width * channels} values for "
                f"{height}x{width}x{channels}, got {arr.size}"
            )
        return cls(arr.reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BitMask:
    """An H x W boolean activation mask."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.dtype != np.bool_:
            raise ParameterError(f"mask dtype must be bool, got {arr.dtype}")
        if arr.ndim != 2:
            raise ParameterError(f"mask must be rank 2 (H, W), got rank {arr.ndim}")
        object.__setattr__(self, "bits", _freeze(arr))

    @classmethod
    def full(cls, height: int, width: int) -> "BitMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def empty(cls, height: int, width: int) -> "BitMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())

    def __or__(self, other: "BitMask") -> "BitMask":
        return BitMask(self.bits | other.bits)

    def __and__(self, other: "BitMask") -> "BitMask":
        return BitMask(self.bits & other.bits)


def _dense_relabel(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel arbitrary integer labels to 0..K-1 by first occurrence in scan order."""
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    dense = rank[np.searchsorted(uniq, flat)]
    return dense.reshape(labels.shape), int(uniq.size)


@dataclass(frozen=True)
class RegionMap:
    """A dense labeling of the grid into regions 0..K-1."""

    labels: np.ndarray
    region_count: int

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if not np.issubdtype(arr.dtype, np.integer):
            raise ParameterError(f"labels must be integers, got {arr.dtype}")
        if arr.ndim != 2:
            raise ParameterError(f"labels must be rank 2 (H, W), got rank {arr.ndim}")
        arr = arr.astype(np.int64, copy=False)
        present = np.unique(arr)
        if present.size != self.region_count or present[0] != 0 or present[-1] != self.region_count - 1:
            raise ParameterError(
                f"labels must cover exactly 0..{self.region_count - 1}, found {present.size} ids"
            )
        object.__setattr__(self, "labels", _freeze(arr))

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "RegionMap":
        """Build a RegionMap from arbitrary integer labels.

        Ids are renumbered densely in ascending order of first occurrence in
        row-major scan order, which makes the numbering deterministic.
        """
        arr = np.asarray(labels)
        if arr.ndim != 2:
            raise ParameterError(f"labels must be rank 2 (H, W), got rank {arr.ndim}")
        dense, count = _dense_relabel(arr)
        return cls(dense, count)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def sizes(self) -> np.ndarray:
        """Pixel count per region id."""
        return np.bincount(self.labels.ravel(), minlength=self.region_count)

    def mask(self, region_id: int) -> BitMask:
        if not 0 <= region_id < self.region_count:
            raise ParameterError(f"region id {region_id} outside 0..{self.region_count - 1}")
        return BitMask(self.labels == region_id)


@dataclass(frozen=True)
class SigmaSchedule:
    """A strictly decreasing ladder of noise levels sigma_0 > ... > sigma_T >= 0.

    ``step_count`` is the number of integration steps, one per consecutive
    pair of sigmas.
    """

    sigmas: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.sigmas, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise ScheduleError("schedule needs a rank-1 ladder of at least 2 sigmas")
        if not np.all(np.isfinite(arr)):
            raise ScheduleError("schedule contains non-finite sigmas")
        if not np.all(np.diff(arr) < 0):
            raise ScheduleError("sigmas must be strictly decreasing")
        if arr[-1] < 0:
            raise ScheduleError("final sigma must be >= 0")
        object.__setattr__(self, "sigmas", _freeze(arr))

    @property
    def step_count(self) -> int:
        return self.sigmas.size - 1

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[0])

    @property
    def sigma_min(self) -> float:
        return float(self.sigmas[-1])

    def to_json(self) -> str:
        return json.dumps({"sigmas": self.sigmas.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "SigmaSchedule":
        payload = json.loads(text)
        if not isinstance(payload, dict) or "sigmas" not in payload:
            raise ScheduleError("schedule json must be an object with a 'sigmas' list")
        return cls(np.asarray(payload["sigmas"], dtype=np.float64))


def make_schedule(kind: str, sigma_max: float, sigma_min: float, steps: int) -> SigmaSchedule:
    """Build a sigma ladder with ``steps`` entries from sigma_max down to sigma_min.

    ``linear`` spaces the entries evenly; ``cosine`` follows
    sigma(u) = sigma_min + (sigma_max - sigma_min) * cos(pi*u/2)^2 over
    evenly spaced u in [0, 1].
    """
    if steps < 2:
        raise ScheduleError(f"steps must be >= 2, got {steps}")
    if not (math.isfinite(sigma_max) and math.isfinite(sigma_min)):
        raise ScheduleError("sigma bounds must be finite")
    if sigma_max <= sigma_min:
        raise ScheduleError(f"sigma_max must exceed sigma_min, got {sigma_max} <= {sigma_min}")
    if sigma_min < 0:
        raise ScheduleError(f"sigma_min must be >= 0, got {sigma_min}")
    u = np.linspace(0.0, 1.0, steps)
    if kind == "linear":
        sig = sigma_max + (sigma_min - sigma_max) * u
    elif kind == "cosine":
        sig = sigma_min + (sigma_max - sigma_min) * np.cos(np.pi * u / 2.0) ** 2
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    # Pin the endpoints exactly; the interior is already strictly monotone.
    sig[0] = sigma_max
    sig[-1] = sigma_min
    return SigmaSchedule(sig)


def grid_stats(g: LatentGrid) -> dict[str, float]:
    """Summary statistics used by reports: min, max, mean, l2_norm."""
    arr = g.data
    return {
        "min": float(arr.min()),
        "max": float(arr.max()),
        "mean": float(arr.mean()),
        "l2_norm": float(np.sqrt((arr * arr).sum())),
    }
