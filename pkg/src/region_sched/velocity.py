"""Velocity-space noise caching: histories, divided differences, extrapolation.

A fresh noise estimate at step t is converted to a velocity
v_t = eps_t / (sigma_t - sigma_{t-1}) and pushed into a per-pixel-channel
ring buffer.  A pixel that is skipped later gets its noise re-synthesized
by evaluating a decay-weighted Newton form through its stored
(sigma, velocity) nodes and converting back with the local sigma interval.

Node order everywhere is most-recent-first: slot 0 of a history is the
newest sample, and scalar sample lists follow the same convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import HistoryError, ParameterError, ScheduleError

__all__ = [
    "ExtrapolationParams",
    "PixelHistory",
    "to_velocity",
    "to_noise",
    "divided_differences",
    "newton_extrapolate",
    "push_history",
    "extrapolate_grid",
]


@dataclass(frozen=True)
class ExtrapolationParams:
    """order: maximum Newton order n; decay: distance penalty lambda >= 0."""

    order: int = 2
    decay: float = 0.5

    def __post_init__(self):
        if self.order < 0:
            raise ParameterError(f"order must be >= 0, got {self.order}")
        if not math.isfinite(self.decay) or self.decay < 0:
            raise ParameterError(f"decay must be finite and >= 0, got {self.decay}")

    @property
    def depth(self) -> int:
        """History slots needed: n + 1 nodes feed an order-n form."""
        return self.order + 1


def to_velocity(eps, sigma_t: float, sigma_prev: float):
    """v = eps / (sigma_t - sigma_prev); the interval is signed and must be nonzero."""
    if sigma_t == sigma_prev:
        raise ScheduleError(f"zero sigma interval at sigma={sigma_t}")
    return eps / (sigma_t - sigma_prev)


def to_noise(v, sigma_next: float, sigma_t: float):
    """eps_hat = v * (sigma_next - sigma_t); exact inverse of to_velocity."""
    return v * (sigma_next - sigma_t)


def divided_differences(nodes: Sequence[tuple[float, float]]) -> np.ndarray:
    """Full divided-difference table for (sigma, value) nodes.

    Returns an upper-triangular (L, L) array where entry [i, j] is the
    difference over nodes i..i+j in the order given; the top row [0, :]
    holds the Newton coefficients for that node order.
    """
    L = len(nodes)
    if L == 0:
        raise HistoryError("divided differences need at least one node")
    sig = np.asarray([s for s, _ in nodes], dtype=np.float64)
    val = np.asarray([v for _, v in nodes], dtype=np.float64)
    if np.unique(sig).size != L:
        raise ParameterError("sigma nodes must be pairwise distinct")
    table = np.zeros((L, L), dtype=np.float64)
    table[:, 0] = val
    for j in range(1, L):
        num = table[1 : L - j + 1, j - 1] - table[: L - j, j - 1]
        den = sig[j:] - sig[:-j]
        table[: L - j, j] = num / den
    return table


def newton_extrapolate(
    samples: Sequence[tuple[float, float]],
    sigma_next: float,
    params: ExtrapolationParams,
) -> float:
    """Decay-weighted Newton estimate of v(sigma_next) from stored nodes.

    ``samples`` is (sigma, velocity) most-recent-first.  With k-th
    coefficient c_k over the newest k+1 nodes, the estimate is
    sum_k w_k * c_k * prod_{j<k}(sigma_next - sigma_j) where
    w_k = exp(-lambda * |sigma_0 - sigma_k|).  decay = 0 recovers exact
    Newton extrapolation; large decay collapses to holding the newest value.
    """
    if len(samples) == 0:
        raise HistoryError("cannot extrapolate an empty history; force-activate instead")
    eff = min(params.order, len(samples) - 1)
    nodes = list(samples[: eff + 1])
    table = divided_differences(nodes)
    coeffs = table[0]
    sig0 = nodes[0][0]
    result = 0.0
    alpha = 1.0
    for k in range(eff + 1):
        w = math.exp(-params.decay * abs(sig0 - nodes[k][0]))
        result += w * alpha * coeffs[k]
        alpha *= sigma_next - nodes[k][0]
    return result


@dataclass(frozen=True)
class PixelHistory:
    """Ring buffers of (sigma, velocity) per pixel-channel, newest first.

    sigmas: (depth, H, W) node sigmas, shared across channels of a pixel.
    values: (depth, H, W, C) velocities.
    counts: (H, W) number of valid slots per pixel.

    Unused sigma slots hold large distinct sentinels so vectorized
    divided-difference denominators stay nonzero; their contributions are
    masked out by ``counts``.
    """

    sigmas: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.sigmas.ndim != 3 or self.values.ndim != 4 or self.counts.ndim != 2:
            raise ParameterError("history arrays have wrong ranks")
        d, h, w = self.sigmas.shape
        if self.values.shape[:3] != (d, h, w) or self.counts.shape != (h, w):
            raise ParameterError("history array shapes disagree")
        for name in ("sigmas", "values", "counts"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, height: int, width: int, channels: int, depth: int) -> "PixelHistory":
        if depth < 1:
            raise ParameterError(f"depth must be >= 1, got {depth}")
        sentinel = 1e9 + np.arange(depth, dtype=np.float64) * 1e6
        sigmas = np.broadcast_to(sentinel[:, None, None], (depth, height, width)).copy()
        return cls(
            sigmas=sigmas,
            values=np.zeros((depth, height, width, channels), dtype=np.float64),
            counts=np.zeros((height, width), dtype=np.int64),
        )

    @property
    def depth(self) -> int:
        return self.sigmas.shape[0]

    def samples_at(self, y: int, x: int, channel: int) -> list[tuple[float, float]]:
        """The valid (sigma, velocity) nodes of one pixel-channel, newest first."""
        n = int(self.counts[y, x])
        return [(float(self.sigmas[k, y, x]), float(self.values[k, y, x, channel])) for k in range(n)]


def push_history(h: PixelHistory, sigma: float, v_grid: np.ndarray, mask: np.ndarray) -> PixelHistory:
    """Insert fresh velocities at ``sigma`` for pixels where ``mask`` is set.

    Pushes must come in strictly decreasing sigma order per pixel; a push
    at a sigma >= the pixel's newest stored node is an ordering error.
    Returns a new history; the input is left untouched.
    """
    if v_grid.shape != h.values.shape[1:]:
        raise ParameterError(f"velocity grid shape {v_grid.shape} does not match history")
    if mask.shape != h.counts.shape or mask.dtype != np.bool_:
        raise ParameterError("mask must be a bool (H, W) array matching the history")
    stale = mask & (h.counts > 0) & (h.sigmas[0] <= sigma)
    if stale.any():
        y, x = np.argwhere(stale)[0]
        raise HistoryError(
            f"push at sigma={sigma} is not below newest stored sigma={h.sigmas[0, y, x]} "
            f"for pixel ({y}, {x})"
        )
    sigmas = h.sigmas.copy()
    values = h.values.copy()
    sigmas[1:][:, mask] = h.sigmas[:-1][:, mask]
    values[1:][:, mask] = h.values[:-1][:, mask]
    sigmas[0][mask] = sigma
    values[0][mask] = v_grid[mask]
    counts = np.where(mask, np.minimum(h.counts + 1, h.depth), h.counts)
    return PixelHistory(sigmas=sigmas, values=values, counts=counts)


def extrapolate_grid(
    h: PixelHistory,
    sigma_next: float,
    params: ExtrapolationParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized newton_extrapolate over every pixel-channel.

    Returns (velocities (H, W, C), has_history (H, W)).  Pixels with empty
    histories get velocity 0 and has_history False; callers must
    force-activate them rather than trust that zero.
    """
    depth, height, width = h.sigmas.shape
    channels = h.values.shape[3]
    orders = min(params.order, depth - 1)
    sig = h.sigmas
    # Divided-difference pyramid over slot windows, masked by fill count.
    level = h.values.copy()  # level j entry i = diff over slots i..i+j
    result = np.zeros((height, width, channels), dtype=np.float64)
    alpha = np.ones((height, width), dtype=np.float64)
    for k in range(orders + 1):
        if k > 0:
            den = sig[k:] - sig[:-k]  # (depth-k, H, W); sentinels keep this nonzero
            level = (level[1 : depth - k + 1] - level[: depth - k]) / den[..., None]
        valid = h.counts > k
        w = np.exp(-params.decay * np.abs(sig[0] - sig[k]))
        contrib = (w * alpha)[..., None] * level[0]
        result += np.where(valid[..., None], contrib, 0.0)
        alpha = alpha * (sigma_next - sig[k])
    return result, h.counts > 0
