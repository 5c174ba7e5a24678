"""Sampling-ratio schedule and per-step refresh planning.

The per-step update ratio follows a three-phase law over normalized time
u = t/T: a structure phase (u < tau1) at p_max, a stable phase
(tau1 <= u <= tau2) easing from p_max down to p_min along a half cosine,
and a detail phase (u > tau2) back at p_max.  The jump at tau2 is
intentional: the final steps snap straight back to dense updates.

``plan_step`` folds the ratio together with warm-up, cool-down, and
divergence-triggered resets into a concrete activation mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .complexity import RegionScores, select_regions
from .core import BitMask, RegionMap
from .errors import ParameterError
from .partition import dilate_mask

__all__ = [
    "SsdParams",
    "RefreshPolicy",
    "StepPlan",
    "ssd_ratio",
    "dense_step",
    "full_plan",
    "plan_step",
    "measure_divergence",
]


@dataclass(frozen=True)
class SsdParams:
    """Ratio-law knobs: 0 < p_min <= p_max <= 1 and 0 <= tau1 < tau2 <= 1."""

    p_min: float = 1.0
    p_max: float = 1.0
    tau1: float = 0.1
    tau2: float = 0.95

    def __post_init__(self):
        if not (math.isfinite(self.p_min) and math.isfinite(self.p_max)):
            raise ParameterError("p_min and p_max must be finite")
        if not 0.0 < self.p_min <= self.p_max <= 1.0:
            raise ParameterError(
                f"need 0 < p_min <= p_max <= 1, got p_min={self.p_min}, p_max={self.p_max}"
            )
        if not 0.0 <= self.tau1 < self.tau2 <= 1.0:
            raise ParameterError(f"need 0 <= tau1 < tau2 <= 1, got {self.tau1}, {self.tau2}")


@dataclass(frozen=True)
class RefreshPolicy:
    """Forced-dense bookends plus a divergence-triggered reset.

    warmup_steps: dense steps at the start (at least 1: no history exists).
    cooldown_steps: dense steps at the end (0 disables).
    divergence_threshold: relative-L2 level above which the next step is dense.
    probe_fraction: share of recently extrapolated pixels probed per step
        (0 disables probing entirely).
    """

    warmup_steps: int = 2
    cooldown_steps: int = 1
    divergence_threshold: float = 0.35
    probe_fraction: float = 0.05

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ParameterError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if self.cooldown_steps < 0:
            raise ParameterError(f"cooldown_steps must be >= 0, got {self.cooldown_steps}")
        if not math.isfinite(self.divergence_threshold) or self.divergence_threshold <= 0:
            raise ParameterError("divergence_threshold must be > 0")
        if not 0.0 <= self.probe_fraction <= 1.0:
            raise ParameterError(f"probe_fraction must be in [0, 1], got {self.probe_fraction}")


@dataclass(frozen=True)
class StepPlan:
    """Resolved decision for one step: mode, chosen regions, activation mask."""

    t: int
    mode: str  # "full" or "sparse"
    ratio: float
    selected: tuple[int, ...]
    omega: BitMask
    active_pixel_count: int

    def __post_init__(self):
        if self.mode not in ("full", "sparse"):
            raise ParameterError(f"mode must be 'full' or 'sparse', got {self.mode!r}")
        if self.active_pixel_count != self.omega.count():
            raise ParameterError("active_pixel_count does not match the mask")


def ssd_ratio(t: int, total_steps: int, p: SsdParams) -> float:
    """Update ratio at step t of total_steps following the three-phase law."""
    if total_steps < 1:
        raise ParameterError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= t < total_steps:
        raise ParameterError(f"step {t} outside 0..{total_steps - 1}")
    u = t / total_steps
    if u < p.tau1:
        return p.p_max
    if u <= p.tau2:
        phase = (u - p.tau1) / (p.tau2 - p.tau1)
        return p.p_min + (p.p_max - p.p_min) / 2.0 * (1.0 + math.cos(math.pi * phase))
    return p.p_max


def dense_step(
    t: int,
    total_steps: int,
    policy: RefreshPolicy,
    ssd: SsdParams,
    divergence: float | None = None,
) -> bool:
    """True when step t must run dense: warm-up/cool-down bookends, a probe
    divergence above the policy threshold, or a ratio of 1."""
    return (
        t < policy.warmup_steps
        or t >= total_steps - policy.cooldown_steps
        or (divergence is not None and divergence > policy.divergence_threshold)
        or ssd_ratio(t, total_steps, ssd) >= 1.0
    )


def full_plan(t: int, ratio: float, height: int, width: int) -> StepPlan:
    """A dense plan covering the whole grid."""
    omega = BitMask.full(height, width)
    return StepPlan(
        t=t,
        mode="full",
        ratio=ratio,
        selected=(),
        omega=omega,
        active_pixel_count=omega.count(),
    )


def plan_step(
    t: int,
    total_steps: int,
    scores: RegionScores | None,
    m: RegionMap,
    policy: RefreshPolicy,
    ssd: SsdParams,
    dilation: int,
    divergence: float | None = None,
) -> StepPlan:
    """Resolve one step to a full or sparse plan.

    The step is dense when ``dense_step`` says so; otherwise the budgeted
    region pick is dilated into the activation mask.  ``scores`` may be
    None only when the step resolves dense.
    """
    ratio = ssd_ratio(t, total_steps, ssd)
    if dense_step(t, total_steps, policy, ssd, divergence):
        return full_plan(t, ratio, m.height, m.width)
    if scores is None:
        raise ParameterError("sparse planning needs region scores")
    chosen = select_regions(scores, m, ratio)
    union = np.isin(m.labels, np.asarray(chosen, dtype=np.int64))
    omega = dilate_mask(BitMask(union), dilation)
    return StepPlan(
        t=t,
        mode="sparse",
        ratio=ratio,
        selected=tuple(chosen),
        omega=omega,
        active_pixel_count=omega.count(),
    )


def measure_divergence(eps_hat: np.ndarray, eps_fresh: np.ndarray, probe: BitMask) -> float:
    """Relative L2 gap between extrapolated and fresh noise on probed pixels.

    ||eps_hat - eps_fresh||_2 / (||eps_fresh||_2 + 1e-12) over all channels
    of the probed pixels.  An empty probe is a parameter error.
    """
    if eps_hat.shape != eps_fresh.shape:
        raise ParameterError(f"shape mismatch: {eps_hat.shape} vs {eps_fresh.shape}")
    if probe.bits.shape != eps_hat.shape[:2]:
        raise ParameterError("probe mask does not match the grids")
    if probe.count() == 0:
        raise ParameterError("probe mask is empty")
    a = eps_hat[probe.bits]
    b = eps_fresh[probe.bits]
    num = float(np.sqrt(((a - b) ** 2).sum()))
    den = float(np.sqrt((b**2).sum()))
    return num / (den + 1e-12)
