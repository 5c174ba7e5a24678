import math

import numpy as np
import pytest

from region_sched import (
    DeltaDenoiser,
    GmmDenoiser,
    GmmPixelPrior,
    LatentGrid,
    ParameterError,
    SceneSpec,
    counter_normals,
    forward_noise,
    make_default_prior,
    make_scene,
    scene_edge_mask,
)


def test_counter_normals_deterministic_and_order_free():
    a = counter_normals(42, 1000)
    b = counter_normals(42, 1000)
    assert np.array_equal(a, b)
    # Value i depends only on (seed, i): a longer draw extends, never reshuffles.
    longer = counter_normals(42, 1500)
    assert np.array_equal(longer[:1000], a)
    assert not np.array_equal(counter_normals(43, 1000), a)


def test_counter_normals_moments():
    z = counter_normals(7, 200_000)
    assert abs(z.mean()) < 0.01
    assert 0.95 < z.var() < 1.05
    assert np.all(np.isfinite(z))


def test_counter_normals_rejects_negative_count():
    with pytest.raises(ParameterError):
        counter_normals(0, -1)
    assert counter_normals(0, 0).size == 0


def test_make_scene_deterministic_and_in_range():
    spec = SceneSpec(height=20, width=24, channels=2, seed=9, value_range=(-1.0, 2.0))
    a = make_scene(spec)
    b = make_scene(spec)
    assert np.array_equal(a.data, b.data)
    assert a.shape == (20, 24, 2)
    assert a.data.min() >= -1.0 and a.data.max() <= 2.0
    c = make_scene(SceneSpec(height=20, width=24, channels=2, seed=10, value_range=(-1.0, 2.0)))
    assert not np.array_equal(c.data, a.data)


def test_scene_spec_validation():
    with pytest.raises(ParameterError):
        SceneSpec(height=0)
    with pytest.raises(ParameterError):
        SceneSpec(value_range=(1.0, 1.0))
    with pytest.raises(ParameterError):
        SceneSpec(background="plaid")


def test_scene_edge_mask_marks_contrast():
    spec = SceneSpec(height=16, width=16, channels=1, shape_count=2, seed=3, background="flat")
    scene = make_scene(spec)
    edges = scene_edge_mask(scene, halo=0)
    assert edges.dtype == np.bool_
    assert edges.shape == (16, 16)
    assert 0 < edges.sum() < 16 * 16
    # A halo only grows the set.
    assert (scene_edge_mask(scene, halo=1) & edges).sum() == edges.sum()


def test_forward_noise_definition():
    x0 = LatentGrid(np.zeros((4, 5, 2)))
    x = forward_noise(x0, 2.0, seed=11)
    z = counter_normals(11, 40).reshape(4, 5, 2)
    assert np.allclose(x.data, 2.0 * z)
    assert forward_noise(x0, 0.0, seed=11) is x0
    with pytest.raises(ParameterError):
        forward_noise(x0, -1.0, seed=11)


def test_delta_denoiser_exact_posterior():
    target = LatentGrid(np.full((3, 3, 1), 0.7))
    d = DeltaDenoiser(target)
    x = LatentGrid(np.linspace(-1, 1, 9).reshape(3, 3, 1) + 0.7)
    eps, x_pred = d.evaluate(x, 0.5)
    assert np.array_equal(x_pred.data, target.data)
    assert np.allclose(eps.data, (x.data - target.data) / 0.5)
    # One Euler step straight to sigma 0 lands exactly on the target.
    landed = x.data + (0.0 - 0.5) * eps.data
    assert np.allclose(landed, target.data, atol=1e-15)


def test_gmm_prior_validation():
    means = np.zeros((2, 2, 1, 2))
    with pytest.raises(ParameterError):
        GmmPixelPrior(means=means, stds=np.array([0.1, -0.1]), weights=np.array([0.5, 0.5]))
    with pytest.raises(ParameterError):
        GmmPixelPrior(means=means, stds=np.array([0.1, 0.1]), weights=np.array([0.7, 0.7]))


def _gmm_quadrature_xpred(x: float, sigma: float, mus, stds, weights) -> float:
    """E[x0 | x] by Simpson quadrature over a wide x0 grid (2001 points)."""
    lo = min(mus) - 12.0 * max(max(stds), 1e-3)
    hi = max(mus) + 12.0 * max(max(stds), 1e-3)
    grid = np.linspace(lo, hi, 2001)
    prior = np.zeros_like(grid)
    for mu, s, w in zip(mus, stds, weights):
        prior += w * np.exp(-0.5 * ((grid - mu) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    like = np.exp(-0.5 * ((x - grid) / sigma) ** 2)
    post = prior * like
    h = grid[1] - grid[0]
    simp = np.ones_like(grid)
    simp[1:-1:2] = 4.0
    simp[2:-1:2] = 2.0
    z = (simp * post).sum() * h / 3.0
    return float((simp * post * grid).sum() * h / 3.0 / z)


def test_gmm_denoiser_matches_quadrature():
    mus = (0.2, 1.4)
    stds = (0.15, 0.3)
    weights = (0.35, 0.65)
    means = np.zeros((1, 1, 1, 2))
    means[..., 0] = mus[0]
    means[..., 1] = mus[1]
    prior = GmmPixelPrior(
        means=means, stds=np.asarray(stds), weights=np.asarray(weights)
    )
    d = GmmDenoiser(prior)
    for sigma in (0.3, 0.8, 2.0):
        for xv in (-0.5, 0.4, 0.9, 2.2):
            x = LatentGrid(np.full((1, 1, 1), xv))
            eps, x_pred = d.evaluate(x, sigma)
            ref = _gmm_quadrature_xpred(xv, sigma, mus, stds, weights)
            assert abs(float(x_pred.data[0, 0, 0]) - ref) < 1e-6
            assert abs(float(eps.data[0, 0, 0]) - (xv - ref) / sigma) < 1e-6


def test_default_prior_shapes_and_sharp_component():
    spec = SceneSpec(height=16, width=16, channels=1, shape_count=2, seed=5, background="flat")
    prior = make_default_prior(spec)
    scene = make_scene(spec)
    assert prior.means.shape == (16, 16, 1, 2)
    assert np.array_equal(prior.means[..., 0], scene.data)
    assert prior.weights.tolist() == [0.5, 0.5]
    # The two components must actually disagree somewhere.
    gap = np.abs(prior.means[..., 1] - prior.means[..., 0])
    assert gap.max() > 0.1
