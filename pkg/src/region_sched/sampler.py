"""Sampling loops: dense reference, region-scheduled, and baselines.

``full_sample`` is the plain Euler integrator every other loop is judged
against.  ``sdit_sample`` runs the full pipeline: segment the latent,
score regions, pick a budgeted subset per the ratio law, refresh those
pixels with the denoiser, and extrapolate everything else from velocity
histories.  ``ras_like_sample`` is the patch-ranking baseline that reuses
stale noise verbatim, and a random-selection mode of ``sdit_sample``
isolates the value of complexity-driven picking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Protocol

import numpy as np

from .complexity import (
    ComplexityMap,
    ComplexityWeights,
    RegionScores,
    SCORE_VARIANTS,
    region_scores,
    score_map_variant,
    select_regions,
)
from .core import BitMask, LatentGrid, RegionMap, SigmaSchedule
from .errors import NumericError, ParameterError
from .partition import (
    QuickshiftSettings,
    build_feature_field,
    enforce_min_region_size,
    estimate_density,
    kmeans_partition,
    quickshift_segment,
    uniform_partition,
)
from .ssd import (
    RefreshPolicy,
    SsdParams,
    StepPlan,
    dense_step,
    full_plan,
    measure_divergence,
    plan_step,
    ssd_ratio,
)
from .velocity import ExtrapolationParams, PixelHistory, extrapolate_grid, push_history

__all__ = [
    "Denoiser",
    "SamplerConfig",
    "StepRecord",
    "RunReport",
    "StepObserver",
    "ScheduleEngine",
    "euler_step",
    "full_sample",
    "sdit_sample",
    "ras_like_sample",
    "segment_latent",
    "compute_ratio",
    "draw_probe",
]

PARTITIONERS = ("quickshift", "uniform", "kmeans")
CACHE_MODES = ("extrapolate", "freeze")
SELECTIONS = ("complexity", "random")

_PROBE_TAG = 0x70726F62  # distinct seed streams per purpose
_RANDOM_SEL_TAG = 0x72616E64


class Denoiser(Protocol):
    """Anything that maps (x, sigma) to (eps, x_pred) with x_pred = x - sigma*eps.

    Evaluation must be per-pixel pure: evaluating a subset of pixels gives
    the same values those pixels get under a full evaluation.
    """

    def evaluate(self, x: LatentGrid, sigma: float) -> tuple[LatentGrid, LatentGrid]: ...


@dataclass(frozen=True)
class SamplerConfig:
    """Everything the scheduled sampler needs beyond the schedule itself."""

    ssd: SsdParams = SsdParams()
    refresh: RefreshPolicy = RefreshPolicy()
    quickshift: QuickshiftSettings = QuickshiftSettings()
    extrapolation: ExtrapolationParams = ExtrapolationParams()
    weights: ComplexityWeights = ComplexityWeights()
    partitioner: str = "quickshift"
    scorer: str = "ours"
    selection: str = "complexity"
    q: float = 0.2
    dilation: int = 1
    segment_every: int = 1
    min_region_size: int = 8
    uniform_patch: int = 8
    kmeans_k: int = 12
    kmeans_iters: int = 25
    cache_mode: str = "extrapolate"
    seed: int = 0

    def __post_init__(self):
        if self.partitioner not in PARTITIONERS:
            raise ParameterError(f"partitioner must be one of {PARTITIONERS}, got {self.partitioner!r}")
        if self.scorer not in SCORE_VARIANTS:
            raise ParameterError(f"scorer must be one of {SCORE_VARIANTS}, got {self.scorer!r}")
        if self.selection not in SELECTIONS:
            raise ParameterError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if self.cache_mode not in CACHE_MODES:
            raise ParameterError(f"cache_mode must be one of {CACHE_MODES}, got {self.cache_mode!r}")
        if not 0.0 < self.q <= 1.0:
            raise ParameterError(f"q must be in (0, 1], got {self.q}")
        if self.dilation < 0:
            raise ParameterError(f"dilation must be >= 0, got {self.dilation}")
        if self.segment_every < 1:
            raise ParameterError(f"segment_every must be >= 1, got {self.segment_every}")
        if self.min_region_size < 1:
            raise ParameterError(f"min_region_size must be >= 1, got {self.min_region_size}")
        if self.uniform_patch < 1:
            raise ParameterError(f"uniform_patch must be >= 1, got {self.uniform_patch}")
        if self.kmeans_k < 1:
            raise ParameterError(f"kmeans_k must be >= 1, got {self.kmeans_k}")
        if self.kmeans_iters < 1:
            raise ParameterError(f"kmeans_iters must be >= 1, got {self.kmeans_iters}")


@dataclass(frozen=True)
class StepRecord:
    """One report row: what happened at step t."""

    t: int
    sigma: float
    mode: str
    active_pixel_count: int
    region_count: int
    divergence: float | None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "sigma": self.sigma,
            "mode": self.mode,
            "active_pixel_count": self.active_pixel_count,
            "region_count": self.region_count,
            "divergence": self.divergence,
        }


@dataclass(frozen=True)
class RunReport:
    """Per-step rows plus the grid geometry needed for compute accounting."""

    height: int
    width: int
    channels: int
    rows: tuple[StepRecord, ...]

    @property
    def full_steps(self) -> int:
        return sum(1 for r in self.rows if r.mode == "full")

    @property
    def sparse_steps(self) -> int:
        return sum(1 for r in self.rows if r.mode == "sparse")

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "totals": {
                "compute_ratio": compute_ratio(self),
                "full_steps": self.full_steps,
                "sparse_steps": self.sparse_steps,
            },
        }


def compute_ratio(report: RunReport) -> float:
    """Fraction of denoiser work done: sum of active pixels over T*H*W."""
    if not report.rows:
        raise ParameterError("report has no rows")
    total = report.height * report.width * len(report.rows)
    return sum(r.active_pixel_count for r in report.rows) / total


StepObserver = Callable[[int, StepPlan, "RegionMap | None", "ComplexityMap | None"], None]


def euler_step(x: LatentGrid, eps: LatentGrid, sigma_from: float, sigma_to: float) -> LatentGrid:
    """One variance-exploding Euler update: x + (sigma_to - sigma_from) * eps."""
    if x.shape != eps.shape:
        raise ParameterError(f"x {x.shape} and eps {eps.shape} disagree")
    return LatentGrid(x.data + (sigma_to - sigma_from) * eps.data)


def _require_finite(arr: np.ndarray, t: int, what: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(t, f"non-finite {what}")


def full_sample(
    d: Denoiser,
    x_t: LatentGrid,
    s: SigmaSchedule,
    on_step: Callable[[int, float, LatentGrid, LatentGrid, LatentGrid], None] | None = None,
) -> tuple[LatentGrid, RunReport]:
    """Dense Euler integration along the schedule; the fidelity reference.

    ``on_step`` (if given) sees (t, sigma_t, x_t, eps_t, x_pred_t) before
    each update, which is how traces get recorded.
    """
    if x_t.height * x_t.width == 0:
        raise ParameterError("empty grid")
    x = x_t
    rows = []
    sig = s.sigmas
    for t in range(s.step_count):
        sigma_t = float(sig[t])
        sigma_next = float(sig[t + 1])
        eps, x_pred = d.evaluate(x, sigma_t)
        _require_finite(eps.data, t, "noise estimate")
        if on_step is not None:
            on_step(t, sigma_t, x, eps, x_pred)
        nxt = x.data + (sigma_next - sigma_t) * eps.data
        _require_finite(nxt, t, "state after update")
        x = LatentGrid(nxt)
        rows.append(
            StepRecord(
                t=t,
                sigma=sigma_t,
                mode="full",
                active_pixel_count=x_t.height * x_t.width,
                region_count=0,
                divergence=None,
            )
        )
    return x, RunReport(x_t.height, x_t.width, x_t.channels, tuple(rows))


def draw_probe(candidates: np.ndarray, fraction: float, seed: int, t: int) -> np.ndarray | None:
    """Seeded probe mask: ceil(fraction * |candidates|) pixels, or None.

    The stream is keyed by (seed, t) only, so a replay over the same
    decisions draws the same probe pixels.
    """
    if fraction <= 0.0:
        return None
    idx = np.flatnonzero(candidates.ravel())
    if idx.size == 0:
        return None
    count = max(1, math.ceil(fraction * idx.size))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _PROBE_TAG, t])))
    chosen = rng.choice(idx, size=count, replace=False)
    mask = np.zeros(candidates.shape, dtype=bool)
    mask.ravel()[chosen] = True
    return mask


def segment_latent(cfg: SamplerConfig, x_pred: np.ndarray, eps: np.ndarray) -> RegionMap:
    """One segmentation pass over (possibly stale) latent estimates."""
    f = build_feature_field(
        LatentGrid(x_pred), LatentGrid(eps), cfg.quickshift.spatial_weight
    )
    if cfg.partitioner == "quickshift":
        params = cfg.quickshift.resolve(f)
        rho = estimate_density(f, params)
        seg = quickshift_segment(f, rho, params)
    elif cfg.partitioner == "uniform":
        seg = uniform_partition(f.height, f.width, cfg.uniform_patch)
    else:
        seg = kmeans_partition(f, cfg.kmeans_k, cfg.kmeans_iters, cfg.seed)
    return enforce_min_region_size(seg, f, cfg.min_region_size)


class ScheduleEngine:
    """Planning, probing, and history state shared by the live sampler and
    offline trace replay.

    Both consumers drive the same two-phase protocol per step: ``plan``
    before the denoiser evaluation (it consumes the divergence measured on
    the previous step), then ``absorb`` once fresh values exist.  Keeping a
    single implementation is what makes replayed decisions bit-identical
    to live ones.

    ``eval_sigmas`` holds the T evaluation points.  ``sigma_final`` is the
    schedule's terminal sigma, used only to form the step-0 velocity
    interval when T = 1; traces do not record it, and a one-step run never
    reads the history it pushes, so None is acceptable there.
    """

    def __init__(
        self,
        cfg: SamplerConfig,
        height: int,
        width: int,
        channels: int,
        eval_sigmas: np.ndarray,
        sigma_final: float | None = None,
    ):
        sig = np.asarray(eval_sigmas, dtype=np.float64)
        if sig.ndim != 1 or sig.size < 1:
            raise ParameterError("eval_sigmas must be a non-empty vector")
        self.cfg = cfg
        self.height = height
        self.width = width
        self.total = int(sig.size)
        self.sig = sig
        self.sigma_final = sigma_final
        self.hist = PixelHistory.empty(height, width, channels, cfg.extrapolation.depth)
        self.seg: RegionMap | None = None
        self._last_seg_t = -(10**9)
        self.last_xpred: np.ndarray | None = None
        self.last_eps: np.ndarray | None = None
        self.divergence: float | None = None
        self._prev_extrap = np.zeros((height, width), dtype=bool)

    def _interval_before(self, t: int) -> float | None:
        """Signed sigma interval that scales velocities pushed at step t."""
        if t > 0:
            return float(self.sig[t] - self.sig[t - 1])
        if self.total >= 2:
            return float(self.sig[1] - self.sig[0])
        if self.sigma_final is not None:
            return float(self.sigma_final - self.sig[0])
        return None

    def plan(self, t: int, x: np.ndarray) -> tuple[StepPlan, RegionMap | None, ComplexityMap | None]:
        cfg = self.cfg
        ratio = ssd_ratio(t, self.total, cfg.ssd)
        if dense_step(t, self.total, cfg.refresh, cfg.ssd, self.divergence):
            return full_plan(t, ratio, self.height, self.width), None, None
        if self.seg is None or t - self._last_seg_t >= cfg.segment_every:
            self.seg = segment_latent(cfg, self.last_xpred, self.last_eps)
            self._last_seg_t = t
        cmap = score_map_variant(
            cfg.scorer, LatentGrid(x), LatentGrid(self.last_xpred), LatentGrid(self.last_eps), cfg.weights
        )
        scores = region_scores(cmap, self.seg, cfg.q)
        if cfg.selection == "random":
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([cfg.seed, _RANDOM_SEL_TAG, t]))
            )
            scores = RegionScores(rng.random(self.seg.region_count), scores.pixel_counts)
        plan = plan_step(t, self.total, scores, self.seg, cfg.refresh, cfg.ssd, cfg.dilation, self.divergence)
        # Pixels with no history cannot be extrapolated; force them in.
        need = self.hist.counts == 0
        if bool(need.any()):
            grown = plan.omega.bits | need
            plan = replace(plan, omega=BitMask(grown), active_pixel_count=int(grown.sum()))
        return plan, self.seg, cmap

    def absorb(
        self,
        t: int,
        plan: StepPlan,
        eps_fresh: np.ndarray,
        xp_fresh: np.ndarray,
    ) -> tuple[np.ndarray | None, np.ndarray | None, float | None]:
        """Digest one step's fresh values; returns (eps_hat, probe, divergence).

        ``eps_hat`` is the extrapolated noise grid at sigma_t (None when
        neither caching nor probing needs it), ``probe`` the probe mask
        actually drawn, ``divergence`` this step's probe measurement, which
        also arms the next ``plan`` call.
        """
        cfg = self.cfg
        sigma_t = float(self.sig[t])
        eval_mask = plan.omega.bits
        sparse = plan.mode == "sparse"

        probe = draw_probe(self._prev_extrap & eval_mask, cfg.refresh.probe_fraction, cfg.seed, t)

        eps_hat: np.ndarray | None = None
        if sparse or probe is not None:
            # Cached pixels advance with where the history polynomial puts
            # the noise at sigma_t, converted by the local interval.
            v_hat, _ = extrapolate_grid(self.hist, sigma_t, cfg.extrapolation)
            eps_hat = v_hat * (sigma_t - float(self.sig[t - 1]))

        self.divergence = (
            measure_divergence(eps_hat, eps_fresh, BitMask(probe)) if probe is not None else None
        )

        interval = self._interval_before(t)
        if interval is not None:
            self.hist = push_history(self.hist, sigma_t, eps_fresh / interval, eval_mask)

        if self.last_xpred is None:
            self.last_xpred = xp_fresh.copy()
            self.last_eps = eps_fresh.copy()
        else:
            mask3 = eval_mask[..., None]
            self.last_xpred = np.where(mask3, xp_fresh, self.last_xpred)
            self.last_eps = np.where(mask3, eps_fresh, self.last_eps)

        self._prev_extrap = (
            ~eval_mask if sparse else np.zeros((self.height, self.width), dtype=bool)
        )
        return eps_hat, probe, self.divergence


def sdit_sample(
    d: Denoiser,
    x_t: LatentGrid,
    s: SigmaSchedule,
    cfg: SamplerConfig,
    observer: StepObserver | None = None,
) -> tuple[LatentGrid, RunReport]:
    """Region-scheduled sampling with velocity-history extrapolation.

    Every pixel advances exactly once per step: active pixels with fresh
    denoiser output, cached pixels with noise extrapolated from their
    velocity history (or held frozen in cache_mode="freeze").  Probe
    divergence measured on re-activated pixels feeds the refresh policy
    one step later.
    """
    height, width, channels = x_t.shape
    total = s.step_count
    sig = s.sigmas
    x = x_t.data.copy()
    eng = ScheduleEngine(cfg, height, width, channels, sig[:total], float(sig[total]))
    rows = []

    for t in range(total):
        sigma_t = float(sig[t])
        sigma_next = float(sig[t + 1])

        plan, seg_used, cmap = eng.plan(t, x)
        omega = plan.omega.bits
        sparse = plan.mode == "sparse"

        eps_g, xp_g = d.evaluate(LatentGrid(x), sigma_t)
        eps_fresh = eps_g.data
        xp_fresh = xp_g.data
        _require_finite(eps_fresh, t, "noise estimate")

        eps_hat, _, divergence = eng.absorb(t, plan, eps_fresh, xp_fresh)

        if sparse:
            mask3 = omega[..., None]
            if cfg.cache_mode == "freeze":
                eps_used = np.where(mask3, eps_fresh, 0.0)
            else:
                eps_used = np.where(mask3, eps_fresh, eps_hat)
            _require_finite(eps_used, t, "extrapolated noise")
        else:
            eps_used = eps_fresh

        x = x + (sigma_next - sigma_t) * eps_used
        _require_finite(x, t, "state after update")

        rows.append(
            StepRecord(
                t=t,
                sigma=sigma_t,
                mode=plan.mode,
                active_pixel_count=plan.active_pixel_count,
                region_count=seg_used.region_count if seg_used is not None else 0,
                divergence=divergence,
            )
        )
        if observer is not None:
            observer(t, plan, seg_used, cmap)

    return LatentGrid(x), RunReport(height, width, channels, tuple(rows))


def ras_like_sample(
    d: Denoiser,
    x_t: LatentGrid,
    s: SigmaSchedule,
    ratio: float,
    patch: int = 8,
) -> tuple[LatentGrid, RunReport]:
    """Patch-ranking baseline: refresh loud patches, reuse stale noise elsewhere.

    The first step is dense.  Afterwards uniform patches are ranked by the
    mean |eps| of their cached noise, the top patches up to ratio*H*W
    pixels are re-evaluated, and every inactive pixel advances with its
    stale cached eps unchanged.  No extrapolation, no dilation, no
    warm-up/cool-down beyond the dense first step.
    """
    if not 0.0 < ratio <= 1.0:
        raise ParameterError(f"ratio must be in (0, 1], got {ratio}")
    height, width, channels = x_t.shape
    patches = uniform_partition(height, width, patch)
    sizes = patches.sizes()
    x = x_t.data.copy()
    eps_cache: np.ndarray | None = None
    rows = []
    sig = s.sigmas
    for t in range(s.step_count):
        sigma_t = float(sig[t])
        sigma_next = float(sig[t + 1])
        if t == 0:
            eps_g, _ = d.evaluate(LatentGrid(x), sigma_t)
            _require_finite(eps_g.data, t, "noise estimate")
            eps_cache = eps_g.data
            active = height * width
            mode = "full"
            x = x + (sigma_next - sigma_t) * eps_cache
        else:
            amplitude = ComplexityMap(np.abs(eps_cache).mean(axis=2))
            scores = region_scores(amplitude, patches, q=1.0)
            chosen = select_regions(scores, patches, ratio)
            omega = np.isin(patches.labels, np.asarray(chosen, dtype=np.int64))
            eps_g, _ = d.evaluate(LatentGrid(x), sigma_t)
            _require_finite(eps_g.data, t, "noise estimate")
            eps_cache = np.where(omega[..., None], eps_g.data, eps_cache)
            active = int(omega.sum())
            mode = "sparse" if active < height * width else "full"
            x = x + (sigma_next - sigma_t) * eps_cache
        _require_finite(x, t, "state after update")
        rows.append(
            StepRecord(
                t=t,
                sigma=sigma_t,
                mode=mode,
                active_pixel_count=active,
                region_count=patches.region_count,
                divergence=None,
            )
        )
    return LatentGrid(x), RunReport(height, width, channels, tuple(rows))
