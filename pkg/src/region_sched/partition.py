"""Latent-space segmentation: feature fields, density, quickshift, and friends.

The segmenter never sees decoded images.  Its input is a per-pixel
descriptor built from the current denoised estimate, the current noise
estimate, and scaled pixel coordinates.  Quickshift mode-seeking over a
kNN kernel density is the primary partitioner; uniform patches and
k-means are kept as ablation baselines.  ``dilate_mask`` grows activation
masks by Chebyshev rings, which is how region boundaries get a halo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BitMask, LatentGrid, RegionMap
from .errors import ParameterError

__all__ = [
    "FeatureField",
    "DensityField",
    "QuickshiftParams",
    "QuickshiftSettings",
    "build_feature_field",
    "default_quickshift_params",
    "estimate_density",
    "quickshift_segment",
    "uniform_partition",
    "kmeans_partition",
    "enforce_min_region_size",
    "dilate_mask",
]

EXACT_SCAN_LIMIT = 4096


@dataclass(frozen=True)
class FeatureField:
    """Per-pixel descriptors of shape (H, W, D) with D = 2*C + 2."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ParameterError(f"feature field must be rank 3 (H, W, D), got rank {arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("feature field contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DensityField:
    """Per-pixel kernel density values, shape (H, W), all > 0."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ParameterError(f"density must be rank 2 (H, W), got rank {arr.ndim}")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ParameterError("density values must be finite and > 0")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class QuickshiftParams:
    """Resolved quickshift knobs.

    bandwidth: kernel bandwidth h for the Gaussian density.
    window: spatial search radius in pixels (Chebyshev).
    knn: neighbor count for the density estimate.
    spatial_weight: coordinate scale used when the feature field was built.
    max_link_dist: maximum feature-space distance a parent link may span.
    seed: reserved for randomized neighbor backends; bundled paths are
        deterministic and ignore it.
    """

    bandwidth: float
    window: int = 5
    knn: int = 16
    spatial_weight: float = 0.5
    max_link_dist: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise ParameterError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.window < 1:
            raise ParameterError(f"window must be >= 1, got {self.window}")
        if self.knn < 1:
            raise ParameterError(f"knn must be >= 1, got {self.knn}")
        if not math.isfinite(self.spatial_weight) or self.spatial_weight < 0:
            raise ParameterError(f"spatial_weight must be >= 0, got {self.spatial_weight}")
        if not math.isfinite(self.max_link_dist) or self.max_link_dist <= 0:
            raise ParameterError(f"max_link_dist must be > 0, got {self.max_link_dist}")


@dataclass(frozen=True)
class QuickshiftSettings:
    """User-facing quickshift knobs; None fields resolve from the data.

    ``bandwidth`` defaults to half the standard deviation of descriptor
    norms and ``max_link_dist`` to three bandwidths, both recomputed per
    segmentation so they track the evolving feature field.
    """

    window: int = 5
    knn: int = 16
    spatial_weight: float = 0.5
    bandwidth: float | None = None
    max_link_dist: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ParameterError(f"window must be >= 1, got {self.window}")
        if self.knn < 1:
            raise ParameterError(f"knn must be >= 1, got {self.knn}")
        if not math.isfinite(self.spatial_weight) or self.spatial_weight < 0:
            raise ParameterError(f"spatial_weight must be >= 0, got {self.spatial_weight}")
        if self.bandwidth is not None and (not math.isfinite(self.bandwidth) or self.bandwidth <= 0):
            raise ParameterError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.max_link_dist is not None and (
            not math.isfinite(self.max_link_dist) or self.max_link_dist <= 0
        ):
            raise ParameterError(f"max_link_dist must be > 0, got {self.max_link_dist}")

    def resolve(self, f: FeatureField) -> QuickshiftParams:
        return default_quickshift_params(
            f,
            window=self.window,
            knn=self.knn,
            spatial_weight=self.spatial_weight,
            bandwidth=self.bandwidth,
            max_link_dist=self.max_link_dist,
            seed=self.seed,
        )


def build_feature_field(x_pred: LatentGrid, eps: LatentGrid, spatial_weight: float = 0.5) -> FeatureField:
    """Descriptor f = [x_pred_channels | eps_channels | g*x/W | g*y/H].

    Coordinates are normalized to [0, 1) before scaling by
    ``spatial_weight`` so the positional part is resolution independent.
    """
    if x_pred.shape != eps.shape:
        raise ParameterError(f"x_pred {x_pred.shape} and eps {eps.shape} disagree")
    if not math.isfinite(spatial_weight) or spatial_weight < 0:
        raise ParameterError(f"spatial_weight must be >= 0, got {spatial_weight}")
    h, w = x_pred.height, x_pred.width
    ys, xs = np.mgrid[0:h, 0:w]
    sx = spatial_weight * xs / w
    sy = spatial_weight * ys / h
    data = np.concatenate(
        [x_pred.data, eps.data, sx[..., None], sy[..., None]], axis=2
    )
    return FeatureField(data)


def default_quickshift_params(
    f: FeatureField,
    window: int = 5,
    knn: int = 16,
    spatial_weight: float = 0.5,
    bandwidth: float | None = None,
    max_link_dist: float | None = None,
    seed: int = 0,
) -> QuickshiftParams:
    """Data-adaptive defaults: h = 0.5 * std of descriptor norms, link cap 3h.

    A tiny floor keeps both strictly positive on degenerate (constant)
    fields, where every distance is zero anyway.
    """
    norms = np.sqrt(np.einsum("ijk,ijk->ij", f.data, f.data))
    if bandwidth is None:
        bandwidth = max(0.5 * float(norms.std()), 1e-6)
    if max_link_dist is None:
        max_link_dist = 3.0 * bandwidth
    return QuickshiftParams(
        bandwidth=bandwidth,
        window=window,
        knn=min(knn, f.height * f.width - 1),
        spatial_weight=spatial_weight,
        max_link_dist=max_link_dist,
        seed=seed,
    )


def _knn_sq_dists_exact(x: np.ndarray, k: int) -> np.ndarray:
    """Squared distances to the k nearest neighbors (self excluded), brute force."""
    n = x.shape[0]
    sq = np.einsum("nd,nd->n", x, x)
    out = np.empty((n, k), dtype=np.float64)
    chunk = max(1, min(n, (1 << 22) // max(n, 1)))  # ~32MB of f64 per slab
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        d2 = sq[s:e, None] + sq[None, :] - 2.0 * (x[s:e] @ x.T)
        np.clip(d2, 0.0, None, out=d2)
        d2[np.arange(e - s), np.arange(s, e)] = np.inf
        out[s:e] = np.partition(d2, k - 1, axis=1)[:, :k]
    return out


def _knn_sq_dists_tree(x: np.ndarray, k: int) -> np.ndarray:
    from scipy.spatial import cKDTree

    tree = cKDTree(x)
    dist, _ = tree.query(x, k=k + 1)
    return dist[:, 1:] ** 2


def estimate_density(f: FeatureField, params: QuickshiftParams) -> DensityField:
    """Gaussian kNN density: rho_i = sum_j exp(-|f_i - f_j|^2 / (2 h^2)).

    The sum runs over the k nearest neighbors of i in descriptor space,
    excluding i itself.  At or below EXACT_SCAN_LIMIT pixels the k nearest
    are found by exact scan; above it a KD-tree index takes over (it must
    return true nearest neighbors, which cKDTree does).
    """
    n = f.height * f.width
    k = params.knn
    if k >= n:
        raise ParameterError(f"knn={k} needs at least {k + 1} pixels, grid has {n}")
    x = f.data.reshape(n, f.dim)
    if n <= EXACT_SCAN_LIMIT:
        d2 = _knn_sq_dists_exact(x, k)
    else:
        d2 = _knn_sq_dists_tree(x, k)
    rho = np.exp(-d2 / (2.0 * params.bandwidth**2)).sum(axis=1)
    # Every pixel has k finite kernel terms, so rho > 0 holds mathematically;
    # exp underflow on pathological data is floored to keep the type contract.
    return DensityField(np.maximum(rho, 1e-300).reshape(f.height, f.width))


def quickshift_segment(f: FeatureField, rho: DensityField, params: QuickshiftParams) -> RegionMap:
    """Mode-seeking segmentation over the density landscape.

    Each pixel links to its feature-nearest neighbor inside the spatial
    window that has strictly higher density (density ties defer to the
    lower linear index) and lies within max_link_dist in feature space.
    Pixels with no admissible parent are mode roots; each tree of the
    resulting forest is one region.  Feature-distance ties pick the lower
    linear index, so the partition is fully deterministic.
    """
    h, w = f.height, f.width
    if rho.values.shape != (h, w):
        raise ParameterError(f"density shape {rho.values.shape} does not match field {(h, w)}")
    feat = f.data
    dens = rho.values
    lin = np.arange(h * w, dtype=np.int64).reshape(h, w)
    best_d2 = np.full((h, w), np.inf)
    parent = np.full((h, w), -1, dtype=np.int64)
    cap = params.max_link_dist**2
    rad = params.window

    for dy in range(-rad, rad + 1):
        for dx in range(-rad, rad + 1):
            if dy == 0 and dx == 0:
                continue
            ys, ye = max(0, -dy), h - max(0, dy)
            xs, xe = max(0, -dx), w - max(0, dx)
            if ys >= ye or xs >= xe:
                continue
            fi = feat[ys:ye, xs:xe]
            fj = feat[ys + dy : ye + dy, xs + dx : xe + dx]
            diff = fi - fj
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            ri = dens[ys:ye, xs:xe]
            rj = dens[ys + dy : ye + dy, xs + dx : xe + dx]
            li = lin[ys:ye, xs:xe]
            lj = lin[ys + dy : ye + dy, xs + dx : xe + dx]
            uphill = (rj > ri) | ((rj == ri) & (lj < li))
            elig = uphill & (d2 <= cap)
            cur_d2 = best_d2[ys:ye, xs:xe]
            cur_p = parent[ys:ye, xs:xe]
            better = elig & ((d2 < cur_d2) | ((d2 == cur_d2) & (lj < cur_p)))
            best_d2[ys:ye, xs:xe] = np.where(better, d2, cur_d2)
            parent[ys:ye, xs:xe] = np.where(better, lj, cur_p)

    # Resolve the forest by pointer jumping; links strictly climb the
    # (density, -index) order, so there are no cycles.
    root = np.where(parent.ravel() < 0, lin.ravel(), parent.ravel())
    while True:
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    return RegionMap.from_labels(root.reshape(h, w))


def uniform_partition(height: int, width: int, patch: int) -> RegionMap:
    """Axis-aligned patch grid of ceil(H/patch) * ceil(W/patch) regions.

    Patches in the last row/column band are clipped (smaller) when the
    patch size does not divide the axis.
    """
    if patch < 1:
        raise ParameterError(f"patch must be >= 1, got {patch}")
    if height < 1 or width < 1:
        raise ParameterError("grid axes must be positive")
    ys = np.arange(height) // patch
    xs = np.arange(width) // patch
    across = int(xs[-1]) + 1
    labels = ys[:, None] * across + xs[None, :]
    return RegionMap.from_labels(labels)


def kmeans_partition(f: FeatureField, k: int, iters: int = 25, seed: int = 0) -> RegionMap:
    """Lloyd k-means over descriptors with a seeded kmeans++ start.

    Ties in assignment go to the lower centroid index.  A cluster that
    empties is re-seeded from the point farthest from its own centroid.
    Same inputs and seed always give the same labels.
    """
    n = f.height * f.width
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in 1..{n}, got {k}")
    if iters < 1:
        raise ParameterError(f"iters must be >= 1, got {iters}")
    x = f.data.reshape(n, f.dim)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x6B6D])))

    centers = np.empty((k, f.dim), dtype=np.float64)
    centers[0] = x[int(rng.integers(n))]
    closest = np.einsum("nd,nd->n", x - centers[0], x - centers[0])
    for j in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[j] = x[idx]
        cand = np.einsum("nd,nd->n", x - centers[j], x - centers[j])
        np.minimum(closest, cand, out=closest)

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = (
            np.einsum("nd,nd->n", x, x)[:, None]
            - 2.0 * (x @ centers.T)
            + np.einsum("kd,kd->k", centers, centers)[None, :]
        )
        new_assign = np.argmin(d2, axis=1)
        for j in range(k):
            sel = new_assign == j
            if sel.any():
                centers[j] = x[sel].mean(axis=0)
            else:
                dist_own = d2[np.arange(n), new_assign]
                far = int(np.argmax(dist_own))
                centers[j] = x[far]
                new_assign[far] = j
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return RegionMap.from_labels(assign.reshape(f.height, f.width))


def _adjacent_pairs(labels: np.ndarray) -> set[tuple[int, int]]:
    pairs: set[tuple[int, int]] = set()
    h, w = labels.shape
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        ys, ye = max(0, -dy), h - max(0, dy)
        xs, xe = max(0, -dx), w - max(0, dx)
        a = labels[ys:ye, xs:xe]
        b = labels[ys + dy : ye + dy, xs + dx : xe + dx]
        diff = a != b
        if diff.any():
            stacked = np.stack([a[diff], b[diff]], axis=1)
            lo = stacked.min(axis=1)
            hi = stacked.max(axis=1)
            pairs.update(zip(lo.tolist(), hi.tolist()))
    return pairs


def enforce_min_region_size(m: RegionMap, f: FeatureField, min_size: int) -> RegionMap:
    """Merge undersized regions into their most similar spatial neighbor.

    Repeatedly takes the smallest region below ``min_size`` (ties: lower
    id) and merges it into the 8-adjacent region whose mean descriptor is
    nearest (ties: lower id), until every region is large enough or one
    region remains.
    """
    if min_size < 1:
        raise ParameterError(f"min_size must be >= 1, got {min_size}")
    if (m.height, m.width) != (f.height, f.width):
        raise ParameterError("region map and feature field shapes disagree")
    labels = m.labels.copy()
    flat_f = f.data.reshape(-1, f.dim)
    flat_l = labels.ravel()

    while True:
        ids, counts = np.unique(flat_l, return_counts=True)
        if ids.size <= 1:
            break
        if np.all(counts >= min_size):
            break
        # Smallest undersized region first; ties go to the lower id.
        order = np.lexsort((ids, counts))
        victim = int(ids[order[0]])

        sums = np.zeros((int(ids.max()) + 1, f.dim))
        np.add.at(sums, flat_l, flat_f)
        sizes = np.bincount(flat_l, minlength=int(ids.max()) + 1)
        pairs = _adjacent_pairs(labels)
        neighbors = sorted(
            {b for a, b in pairs if a == victim} | {a for a, b in pairs if b == victim}
        )
        if not neighbors:
            break
        vm = sums[victim] / sizes[victim]
        best, best_d = None, np.inf
        for nb in neighbors:
            nm = sums[nb] / sizes[nb]
            d = float(((vm - nm) ** 2).sum())
            if d < best_d:
                best, best_d = nb, d
        flat_l[flat_l == victim] = best
        labels = flat_l.reshape(labels.shape)

    return RegionMap.from_labels(labels)


def dilate_mask(m: BitMask, r: int) -> BitMask:
    """Grow the mask by r rings of 8-connectivity (a Chebyshev ball of radius r)."""
    if r < 0:
        raise ParameterError(f"dilation radius must be >= 0, got {r}")
    bits = m.bits
    h, w = bits.shape
    for _ in range(r):
        p = np.pad(bits, 1)
        out = np.zeros((h, w), dtype=bool)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                out |= p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bits = out
    return BitMask(bits)
