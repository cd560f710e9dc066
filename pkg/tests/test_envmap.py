import numpy as np
import pytest

from implicit_points.envmap import (ConstantBackground, DistillConfig, EnvironmentMap,
                                    SHBackground, bilinear_taps, distill_env, psnr,
                                    random_directions, sample_env, sample_env_texel_grad,
                                    texel_directions)
from implicit_points.raster import rasterize
from implicit_points.scene import CameraView, PointSet


def random_map(seed, H=8):
    return EnvironmentMap(np.random.default_rng(seed).normal(size=(H, 2 * H, 4)))


def test_map_shape_invariants():
    with pytest.raises(ValueError):
        EnvironmentMap(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        EnvironmentMap(np.full((2, 4, 4), np.nan))


def test_constant_map():
    env = EnvironmentMap(np.broadcast_to([0.1, 0.2, 0.3, 0.4], (16, 32, 4)))
    d = random_directions(np.random.default_rng(0), 1000)
    assert np.allclose(sample_env(env, d), [0.1, 0.2, 0.3, 0.4], atol=1e-15)


def test_texel_center_returns_texel():
    env = random_map(1)
    d = texel_directions(env.height, env.width)
    assert np.allclose(sample_env(env, d), env.texels, atol=1e-12)


def test_seam_wraps_columns():
    env = random_map(2)
    H, W = env.height, env.width
    # direction on the u = 0 seam (azimuth -pi), between last and first column, row 3 center
    theta = (3 + 0.5) / H * np.pi
    d = np.array([[-1e-12 * np.sin(theta), np.cos(theta), -np.sin(theta)]])
    wide = np.concatenate([env.texels, env.texels], axis=1)
    expect = 0.5 * (wide[3, W - 1] + wide[3, W])
    assert np.allclose(sample_env(env, d)[0], expect, atol=1e-9)


def test_poles_clamp_rows():
    env = random_map(3)
    rows, _, w = bilinear_taps(np.array([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]]), env.height, env.width)
    assert rows.min() == 0 and rows.max() == env.height - 1
    assert np.allclose(w.sum(axis=1), 1.0)


def test_zero_direction_rejected():
    with pytest.raises(ValueError):
        sample_env(random_map(0), np.zeros((1, 3)))


def test_texel_gradient_weights_sum_to_one():
    env = random_map(4)
    d = random_directions(np.random.default_rng(5), 200)
    for i in range(0, 200, 37):
        g = sample_env_texel_grad(env, d[i:i + 1], np.array([[1.0, 0, 0, 0]]))
        assert np.isclose(g[..., 0].sum(), 1.0, rtol=0, atol=1e-15)
        assert np.all(g[..., 1:] == 0)


def test_texel_gradient_matches_finite_differences():
    env = random_map(6)
    d = random_directions(np.random.default_rng(7), 40)
    up = np.random.default_rng(8).normal(size=(40, 4))
    an = sample_env_texel_grad(env, d, up)
    h = 1e-2  # lookup is linear in the texels, so a large step has no truncation error
    worst = 0.0
    for idx in list(np.ndindex(env.texels.shape))[::3]:
        tp = env.texels.copy()
        tp[idx] += h
        tm = env.texels.copy()
        tm[idx] -= h
        fd = (np.sum(up * sample_env(EnvironmentMap(tp), d))
              - np.sum(up * sample_env(EnvironmentMap(tm), d))) / (2 * h)
        worst = max(worst, abs(an[idx] - fd) / max(abs(an[idx]), abs(fd), 1e-3))
    assert worst < 1e-8


def test_scatter_is_deterministic():
    env = random_map(9, H=16)
    d = random_directions(np.random.default_rng(1), 5000)
    up = np.random.default_rng(2).normal(size=(5000, 4))
    assert np.array_equal(sample_env_texel_grad(env, d, up), sample_env_texel_grad(env, d, up))


def test_constant_oracle_distills_exactly():
    value = (0.3, -0.2, 0.7, 1.1)
    res = distill_env(ConstantBackground(value), DistillConfig(height=32, width=64, iterations=20))
    d = random_directions(np.random.default_rng(0), 10_000)
    assert np.mean((sample_env(res.env, d) - np.array(value)) ** 2) < 1e-10


def test_full_scale_preset():
    cfg = DistillConfig.full_scale()
    assert (cfg.height, cfg.width, cfg.iterations, cfg.batch) == (1024, 2048, 1000, 1 << 21)
    assert (cfg.lr_start, cfg.lr_end) == (0.01, 0.001)
    assert np.isclose(cfg.lr(0), 0.01) and np.isclose(cfg.lr(999), 0.001)


def test_distill_rejects_bad_shape_and_nonfinite():
    with pytest.raises(ValueError):
        distill_env(ConstantBackground((0, 0, 0, 0)), DistillConfig(height=4, width=4))

    def bad(d):
        return np.full(d.shape[:-1] + (4,), np.nan)
    with pytest.raises(FloatingPointError):
        distill_env(bad, DistillConfig(height=4, width=8, iterations=3, batch=64))


def test_sgd_is_available_but_slow():
    o = SHBackground.from_seed(0)
    d = random_directions(np.random.default_rng(3), 20_000)
    kw = dict(height=16, width=32, iterations=60, batch=1 << 12)
    sgd = distill_env(o, DistillConfig(optimizer="sgd", **kw))
    adam = distill_env(o, DistillConfig(**kw))
    assert psnr(sample_env(adam.env, d), o(d)) > psnr(sample_env(sgd.env, d), o(d))


def test_distillation_is_deterministic():
    o = SHBackground.from_seed(1)
    kw = dict(height=16, width=32, iterations=30, batch=1 << 10, seed=4)
    a = distill_env(o, DistillConfig(**kw))
    b = distill_env(o, DistillConfig(**kw))
    assert np.array_equal(a.env.texels, b.env.texels) and a.losses == b.losses


def test_probe_loss_non_increasing_after_warmup(distilled_sh):
    _, res, _ = distilled_sh
    probe = np.array([l for it, l in res.probe_losses if it >= 10])
    assert len(probe) > 50
    assert np.all(np.diff(probe) <= 0)


def test_distilled_map_renders_like_oracle(distilled_sh):
    oracle, res, _ = distilled_sh
    cam = CameraView.look_at([0.3, 0.2, -1.0], [0.0, 0.0, 1.0], fx=40, fy=40, cx=24, cy=16,
                             width=48, height=32, z_near=0.1)
    rng = np.random.default_rng(0)
    n = 300
    pts = PointSet(np.c_[rng.uniform(-0.8, 0.8, n), rng.uniform(-0.5, 0.5, n), rng.uniform(0.5, 2, n)],
                   rng.uniform(0, 0.9, n), rng.normal(size=(n, 4, 9)) * 0.3)
    a = rasterize(pts, cam, oracle).image.features
    b = rasterize(pts, cam, res.env).image.features
    assert np.max(np.abs(a - b)) < 1e-2
