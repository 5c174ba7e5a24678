"""Analytic test-bed: synthetic scenes, forward noising, and closed-form denoisers.

The denoisers here play the role a trained network would play at scale,
but their outputs are exact: a delta-prior denoiser that always points at
a known target, and a per-pixel two-component Gaussian-mixture denoiser
whose posterior mean is available in closed form.  Both satisfy the
variance-exploding convention x = x0 + sigma * z with
x_pred = x - sigma * eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import LatentGrid
from .errors import ParameterError

__all__ = [
    "SceneSpec",
    "GmmPixelPrior",
    "DeltaDenoiser",
    "GmmDenoiser",
    "make_scene",
    "scene_edge_mask",
    "make_default_prior",
    "forward_noise",
    "counter_normals",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO53 = float(1 << 53)


def _mix64(v: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer: a full-avalanche permutation of uint64."""
    v = (v + _GOLDEN).astype(np.uint64)
    v = (v ^ (v >> np.uint64(30))) * _MIX1
    v = (v ^ (v >> np.uint64(27))) * _MIX2
    return v ^ (v >> np.uint64(31))


def counter_normals(seed: int, count: int) -> np.ndarray:
    """Standard normals from a 64-bit counter generator keyed by (seed, index).

    Each output value depends only on the seed and its own index, so the
    stream is reproducible regardless of evaluation order or chunking.
    Variates come from the Box-Muller transform of two hashed uniforms.
    """
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    with np.errstate(over="ignore"):
        key = _mix64(np.asarray([np.uint64(seed & 0xFFFFFFFFFFFFFFFF)]))[0]
        idx = np.arange(count, dtype=np.uint64)
        h1 = _mix64(key ^ (np.uint64(2) * idx))
        h2 = _mix64(key ^ (np.uint64(2) * idx + np.uint64(1)))
    u1 = ((h1 >> np.uint64(11)).astype(np.float64) + 1.0) / _TWO53  # in (0, 1]
    u2 = (h2 >> np.uint64(11)).astype(np.float64) / _TWO53  # in [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a deterministic synthetic scene."""

    height: int = 64
    width: int = 64
    channels: int = 1
    shape_count: int = 4
    texture_band: bool = True
    background: str = "gradient"  # "flat" or "gradient"
    value_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ParameterError("scene must be at least 8x8")
        if self.channels < 1:
            raise ParameterError("scene needs at least one channel")
        if self.shape_count < 0:
            raise ParameterError("shape_count must be >= 0")
        if self.background not in ("flat", "gradient"):
            raise ParameterError(f"unknown background {self.background!r}")
        lo, hi = self.value_range
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
            raise ParameterError(f"value_range must be a finite (lo, hi) with hi > lo")


def make_scene(spec: SceneSpec) -> LatentGrid:
    """Render the scene: background, overlapping shapes, optional texture band.

    Same spec always yields the same grid.  Shapes are axis-aligned
    rectangles and ellipses with sharp edges; the texture band is a
    high-frequency vertical stripe pattern.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 0x5CE11E])))
    h, w, c = spec.height, spec.width, spec.channels
    lo, hi = spec.value_range
    span = hi - lo
    ys, xs = np.mgrid[0:h, 0:w]

    img = np.empty((h, w, c), dtype=np.float64)
    if spec.background == "flat":
        img[...] = lo + 0.5 * span
    else:
        ramp = lo + span * (0.2 + 0.5 * xs / max(w - 1, 1))
        img[...] = ramp[..., None]

    for i in range(spec.shape_count):
        cy = rng.uniform(0.15, 0.85) * h
        cx = rng.uniform(0.15, 0.85) * w
        ry = rng.uniform(0.06, 0.22) * h
        rx = rng.uniform(0.06, 0.22) * w
        values = lo + span * rng.uniform(0.05, 0.95, size=c)
        if i % 2 == 0:
            inside = (np.abs(ys - cy) <= ry) & (np.abs(xs - cx) <= rx)
        else:
            inside = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
        img[inside] = values

    if spec.texture_band:
        r0, r1 = int(0.65 * h), int(0.80 * h)
        band = np.zeros((h, w), dtype=bool)
        band[r0:r1] = True
        stripes = np.where(xs % 2 == 0, 1.0, -1.0)
        base = lo + 0.5 * span
        tex = base + 0.18 * span * stripes
        img[band] = np.clip(tex[band, None], lo, hi)

    return LatentGrid(np.clip(img, lo, hi))


def scene_edge_mask(scene: LatentGrid, halo: int = 1) -> np.ndarray:
    """Pixels on or next to a discontinuity of the clean scene.

    A pixel counts as an edge pixel when any 8-neighbor differs in any
    channel; ``halo`` grows the set by that many 8-connected rings.
    """
    arr = scene.data
    h, w = arr.shape[:2]
    edge = np.zeros((h, w), dtype=bool)
    padded = np.pad(arr, ((1, 1), (1, 1), (0, 0)), mode="edge")
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            edge |= np.any(nb != arr, axis=2)
    for _ in range(halo):
        p = np.pad(edge, 1)
        grown = np.zeros_like(edge)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                grown |= p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        edge = grown
    return edge


def forward_noise(x0: LatentGrid, sigma: float, seed: int) -> LatentGrid:
    """x = x0 + sigma * z with z from the counter generator."""
    if not math.isfinite(sigma) or sigma < 0:
        raise ParameterError(f"sigma must be finite and >= 0, got {sigma}")
    if sigma == 0.0:
        return x0
    z = counter_normals(seed, x0.data.size).reshape(x0.shape)
    return LatentGrid(x0.data + sigma * z)


@dataclass(frozen=True)
class DeltaDenoiser:
    """Oracle whose prior is a point mass at ``target``.

    evaluate() returns eps = (x - target) / sigma and x_pred = target,
    the exact posterior under a delta prior.
    """

    target: LatentGrid

    def evaluate(self, x: LatentGrid, sigma: float) -> tuple[LatentGrid, LatentGrid]:
        if x.shape != self.target.shape:
            raise ParameterError(f"shape mismatch: {x.shape} vs target {self.target.shape}")
        if not math.isfinite(sigma) or sigma < 0:
            raise ParameterError(f"sigma must be finite and >= 0, got {sigma}")
        if sigma == 0.0:
            return LatentGrid(np.zeros(x.shape)), self.target
        eps = (x.data - self.target.data) / sigma
        return LatentGrid(eps), self.target


@dataclass(frozen=True)
class GmmPixelPrior:
    """Per pixel-channel two-component Gaussian mixture prior.

    ``means`` has shape (H, W, C, K); ``stds`` and ``weights`` have shape
    (K,).  Weights must be positive and sum to 1, stds strictly positive.
    """

    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        stds = np.asarray(self.stds, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if means.ndim != 4:
            raise ParameterError(f"means must be rank 4 (H, W, C, K), got rank {means.ndim}")
        k = means.shape[3]
        if stds.shape != (k,) or weights.shape != (k,):
            raise ParameterError(f"stds and weights must have shape ({k},)")
        if not np.all(np.isfinite(means)):
            raise ParameterError("means contain non-finite values")
        if not np.all(stds > 0):
            raise ParameterError("component stds must be > 0")
        if np.any(weights <= 0) or abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ParameterError("weights must be positive and sum to 1")
        for name, arr in (("means", means), ("stds", stds), ("weights", weights)):
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.means.shape[:3]


@dataclass(frozen=True)
class GmmDenoiser:
    """Exact posterior-mean denoiser under a per-pixel Gaussian mixture prior.

    With prior sum_k pi_k N(mu_k, s_k^2) and observation x = x0 + sigma*z,
    the posterior mean is sum_k w_k(x) * (mu_k + s_k^2/(s_k^2+sigma^2) * (x - mu_k))
    with responsibilities w_k(x) proportional to pi_k N(x; mu_k, sigma^2 + s_k^2).
    """

    prior: GmmPixelPrior

    def evaluate(self, x: LatentGrid, sigma: float) -> tuple[LatentGrid, LatentGrid]:
        if x.shape != self.prior.shape:
            raise ParameterError(f"shape mismatch: {x.shape} vs prior {self.prior.shape}")
        if not math.isfinite(sigma) or sigma < 0:
            raise ParameterError(f"sigma must be finite and >= 0, got {sigma}")
        if sigma == 0.0:
            return LatentGrid(np.zeros(x.shape)), x
        mu = self.prior.means
        s2 = self.prior.stds**2
        var = s2 + sigma * sigma  # (K,)
        diff = x.data[..., None] - mu  # (H, W, C, K)
        logw = np.log(self.prior.weights) - 0.5 * np.log(2.0 * np.pi * var) - diff**2 / (2.0 * var)
        logw -= logw.max(axis=-1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=-1, keepdims=True)
        shrink = s2 / var  # (K,)
        component_mean = mu + shrink * diff
        x_pred = (w * component_mean).sum(axis=-1)
        eps = (x.data - x_pred) / sigma
        return LatentGrid(eps), LatentGrid(x_pred)


def _box_blur(arr: np.ndarray, passes: int = 2) -> np.ndarray:
    """Repeated 3x3 mean filter with replicate padding."""
    out = arr
    for _ in range(passes):
        p = np.pad(out, ((1, 1), (1, 1), (0, 0)), mode="edge")
        acc = np.zeros_like(out)
        for dy in range(3):
            for dx in range(3):
                acc += p[dy : dy + out.shape[0], dx : dx + out.shape[1]]
        out = acc / 9.0
    return out


def make_default_prior(spec: SceneSpec, component_std: float = 0.05) -> GmmPixelPrior:
    """Two-component prior whose components disagree mainly on detailed areas.

    Component one is the scene.  Component two softens every edge and
    flips the texture band's stripe phase, but matches the scene on flat
    areas up to a faint smooth glow.  The posterior therefore keeps
    moving during sampling exactly where the image has detail, while
    flat pixels see a nearly degenerate mixture and denoise almost for
    free.  That concentration is what makes region scheduling
    interesting on these scenes: noise in detail areas follows a curved
    trajectory that needs refreshing, smooth areas coast on
    extrapolation.
    """
    sharp = make_scene(spec)
    h, w, _ = sharp.shape
    lo, hi = spec.value_range
    span = hi - lo
    alt = sharp.data.copy()
    edge = scene_edge_mask(sharp, halo=0)
    blurred = _box_blur(sharp.data, passes=1)
    alt[edge] = blurred[edge]
    if spec.texture_band:
        xs = np.arange(w)[None, :].repeat(h, axis=0)
        band = np.zeros((h, w), dtype=bool)
        band[int(0.65 * h) : int(0.80 * h)] = True
        stripes = np.where(xs % 2 == 0, -1.0, 1.0)
        tex = np.clip(lo + 0.5 * span + 0.18 * span * stripes, lo, hi)
        alt[band] = tex[band, None]
    # Faint smooth disagreement everywhere: keeps every pixel's posterior
    # mildly alive so coverage still matters away from the detail set,
    # an order of magnitude below the band gap.
    ys = np.arange(h)[:, None]
    xs_row = np.arange(w)[None, :]
    glow = 0.015 * span * np.sin(2.0 * np.pi * ys / h) * np.sin(2.0 * np.pi * xs_row / w)
    alt = alt + glow[..., None]
    means = np.stack([sharp.data, alt], axis=-1)
    return GmmPixelPrior(
        means=means,
        stds=np.asarray([component_std, component_std]),
        weights=np.asarray([0.5, 0.5]),
    )
