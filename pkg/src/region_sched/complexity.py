"""Per-pixel complexity scoring, region aggregation, and budgeted selection.

The score combines three signals on the denoised estimate: edge strength
(gradient magnitude), fine detail (absolute Laplacian), and the current
denoising residual |x_t - x_pred|.  Regions are ranked by the mean of
their top-q fraction of pixel scores and greedily selected under a pixel
budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LatentGrid, RegionMap
from .errors import ParameterError

__all__ = [
    "ComplexityWeights",
    "ComplexityMap",
    "RegionScores",
    "complexity_map",
    "score_map_variant",
    "region_scores",
    "select_regions",
    "SCORE_VARIANTS",
]

SCORE_VARIANTS = ("ours", "l2_norm", "noise_amplitude", "stddev")


@dataclass(frozen=True)
class ComplexityWeights:
    """Non-negative term weights; at least one must be positive."""

    alpha: float = 1.0  # edge strength
    gamma: float = 0.5  # fine detail (Laplacian)
    beta: float = 1.0  # denoising residual

    def __post_init__(self):
        for name in ("alpha", "gamma", "beta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be finite and >= 0, got {v}")
        if self.alpha == 0 and self.gamma == 0 and self.beta == 0:
            raise ParameterError("at least one complexity weight must be > 0")


@dataclass(frozen=True)
class ComplexityMap:
    """Non-negative per-pixel scores, shape (H, W)."""

    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2:
            raise ParameterError(f"scores must be rank 2 (H, W), got rank {arr.ndim}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ParameterError("scores must be finite and >= 0")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "scores", arr)


@dataclass(frozen=True)
class RegionScores:
    """Per-region score and pixel count, aligned with region ids 0..K-1."""

    scores: np.ndarray
    pixel_counts: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        c = np.asarray(self.pixel_counts, dtype=np.int64)
        if s.ndim != 1 or c.shape != s.shape:
            raise ParameterError("scores and pixel_counts must be equal-length vectors")
        if not np.all(np.isfinite(s)):
            raise ParameterError("region scores must be finite")
        if np.any(c < 1):
            raise ParameterError("every region must own at least one pixel")
        for name, arr in (("scores", s), ("pixel_counts", c)):
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def region_count(self) -> int:
        return self.scores.size


def _gradient_magnitude(xp: np.ndarray) -> np.ndarray:
    """Central differences inside, one-sided at borders; zero on size-1 axes."""
    gy = np.gradient(xp, axis=0) if xp.shape[0] > 1 else np.zeros_like(xp)
    gx = np.gradient(xp, axis=1) if xp.shape[1] > 1 else np.zeros_like(xp)
    return np.sqrt(gx * gx + gy * gy)


def _laplacian(xp: np.ndarray) -> np.ndarray:
    """5-point Laplacian with replicate padding."""
    p = np.pad(xp, ((1, 1), (1, 1), (0, 0)), mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * xp


def complexity_map(x_t: LatentGrid, x_pred: LatentGrid, w: ComplexityWeights) -> ComplexityMap:
    """Channel-mean of alpha*|grad x_pred| + gamma*|lap x_pred| + beta*|x_t - x_pred|."""
    if x_t.shape != x_pred.shape:
        raise ParameterError(f"x_t {x_t.shape} and x_pred {x_pred.shape} disagree")
    xp = x_pred.data
    per_channel = (
        w.alpha * _gradient_magnitude(xp)
        + w.gamma * np.abs(_laplacian(xp))
        + w.beta * np.abs(x_t.data - xp)
    )
    return ComplexityMap(per_channel.mean(axis=2))


def _window_stddev(xp: np.ndarray) -> np.ndarray:
    """Population stddev over 3x3 windows with replicate padding, per channel."""
    p = np.pad(xp, ((1, 1), (1, 1), (0, 0)), mode="edge")
    m1 = np.zeros_like(xp)
    m2 = np.zeros_like(xp)
    for dy in range(3):
        for dx in range(3):
            sl = p[dy : dy + xp.shape[0], dx : dx + xp.shape[1]]
            m1 += sl
            m2 += sl * sl
    m1 /= 9.0
    m2 /= 9.0
    return np.sqrt(np.clip(m2 - m1 * m1, 0.0, None))


def score_map_variant(
    variant: str,
    x_t: LatentGrid,
    x_pred: LatentGrid,
    eps: LatentGrid,
    w: ComplexityWeights,
) -> ComplexityMap:
    """Scoring ablations: 'ours', 'l2_norm', 'noise_amplitude', 'stddev'."""
    if variant == "ours":
        return complexity_map(x_t, x_pred, w)
    if variant == "l2_norm":
        return ComplexityMap(np.sqrt(np.einsum("ijk,ijk->ij", x_pred.data, x_pred.data)))
    if variant == "noise_amplitude":
        return ComplexityMap(np.abs(eps.data).mean(axis=2))
    if variant == "stddev":
        return ComplexityMap(_window_stddev(x_pred.data).mean(axis=2))
    raise ParameterError(f"unknown score variant {variant!r}; pick one of {SCORE_VARIANTS}")


def region_scores(c: ComplexityMap, m: RegionMap, q: float = 0.2) -> RegionScores:
    """Mean of the top ceil(q*size) pixel scores per region (at least one pixel)."""
    if not 0.0 < q <= 1.0:
        raise ParameterError(f"q must be in (0, 1], got {q}")
    if c.scores.shape != m.labels.shape:
        raise ParameterError("complexity map and region map shapes disagree")
    flat_s = c.scores.ravel()
    flat_l = m.labels.ravel()
    order = np.argsort(flat_l, kind="stable")
    sorted_l = flat_l[order]
    sorted_s = flat_s[order]
    bounds = np.searchsorted(sorted_l, np.arange(m.region_count + 1))
    scores = np.empty(m.region_count, dtype=np.float64)
    counts = np.empty(m.region_count, dtype=np.int64)
    for k in range(m.region_count):
        vals = sorted_s[bounds[k] : bounds[k + 1]]
        n = vals.size
        n_q = max(1, math.ceil(q * n))
        top = np.partition(vals, n - n_q)[n - n_q :]
        scores[k] = top.mean()
        counts[k] = n
    return RegionScores(scores, counts)


def select_regions(s: RegionScores, m: RegionMap, p: float) -> list[int]:
    """Greedy budgeted pick: walk regions by descending score, keep what fits.

    The budget is p * H * W pixels.  Ties in score go to the lower region
    id.  The top-ranked region is always kept even when it alone exceeds
    the budget; with p = 1 every region is returned.  A region that does
    not fit is skipped and the walk continues, so the budget is packed
    rather than cut off at the first overflow.
    """
    if not 0.0 < p <= 1.0:
        raise ParameterError(f"p must be in (0, 1], got {p}")
    if s.region_count != m.region_count:
        raise ParameterError("scores and region map disagree on region count")
    order = np.lexsort((np.arange(s.region_count), -s.scores))
    budget = p * m.height * m.width
    selected: list[int] = []
    used = 0
    for rid in order.tolist():
        size = int(s.pixel_counts[rid])
        if not selected:
            selected.append(rid)
            used = size
        elif used + size <= budget:
            selected.append(rid)
            used += size
    return selected
