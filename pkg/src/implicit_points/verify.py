"""Property suites behind ``verify``; each check returns (name, passed, detail)."""
from __future__ import annotations

import numpy as np
from scipy import stats

from .envmap import (ConstantBackground, DistillConfig, EnvironmentMap, SHBackground,
                     distill_env, psnr, random_directions, sample_env, sample_env_texel_grad)
from .raster import rasterize, render_backward
from .sampling import (VoxelPDF, allocate_counts, halton_points, rejection_sample)
from .scene import CameraView, PointSet, ProbabilityField
from .tonemap import tonemap_forward, tonemap_inverse

SUITES = ("gradcheck", "sampling", "tonemap", "envmap")


def random_scene(seed: int, n: int, width: int, height: int):
    rng = np.random.default_rng(seed)
    cam = CameraView(fx=0.9 * width, fy=0.85 * width, cx=width / 2 + 0.3, cy=height / 2 - 0.2,
                     width=width, height=height, z_near=0.1)
    pos = np.c_[rng.uniform(-1.2, 1.2, n), rng.uniform(-0.9, 0.9, n), rng.uniform(0.3, 3.0, n)]
    opa = rng.uniform(0.0, 0.95, n)
    opa[rng.random(n) < 0.1] = 0.0  # zero-alpha fragments
    pts = PointSet(pos, opa, rng.normal(size=(n, 4, 9)) * 0.5)
    bg = rng.uniform(size=(height, width, 4))
    return pts, cam, bg


def gradcheck(seed: int = 0, n: int = 60, width: int = 24, height: int = 18, h: float = 1e-3,
              tol: float = 1e-4, h_sh: float = 1e-2):
    """Analytic opacity/SH gradients vs central differences of ``sum(G * image)``.

    The image is a low-degree polynomial in each opacity and linear in the SH
    coefficients, so moderate steps keep truncation error negligible while
    avoiding cancellation in the summed loss.
    """
    pts, cam, bg = random_scene(seed, n, width, height)
    G = np.random.default_rng(seed + 1).normal(size=(height, width, 4))
    grads = render_backward(rasterize(pts, cam, bg), pts, G)

    def loss(p):
        return float(np.sum(G * rasterize(p, cam, bg).image.features))

    def with_opacity(i, value):
        o = pts.opacities.copy()
        o[i] = value
        return pts.replace(opacities=o)

    worst = 0.0
    for i in range(len(pts)):
        o0 = pts.opacities[i]
        if o0 < h:
            # one-sided second-order stencil; opacity cannot go negative
            fd = (-3 * loss(pts) + 4 * loss(with_opacity(i, o0 + h))
                  - loss(with_opacity(i, o0 + 2 * h))) / (2 * h)
        else:
            fd = (loss(with_opacity(i, o0 + h)) - loss(with_opacity(i, o0 - h))) / (2 * h)
        worst = max(worst, _rel(grads.d_opacity[i], fd))
        for c in range(4):
            for j in range(9):
                s = pts.sh_coeffs.copy()
                s[i, c, j] += h_sh
                lp = loss(pts.replace(sh_coeffs=s))
                s[i, c, j] -= 2 * h_sh
                lm = loss(pts.replace(sh_coeffs=s))
                worst = max(worst, _rel(grads.d_sh[i, c, j], (lp - lm) / (2 * h_sh)))
    return [("blend gradient vs finite differences", worst < tol, f"max rel err {worst:.2e}")]


def _rel(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def half_clipped_voxel(size: float = 0.2):
    """Field with one voxel bisected by the near plane of a forward camera.

    The voxel spans z in [0.8, 1.0] and the near plane sits at its center.
    """
    res = 10
    lo = np.array([-1.0, -1.0, 0.0])
    field_ = ProbabilityField(res, lo, lo + res * size, np.array([[5, 5, 4]]), np.ones(1))
    zc = float(field_.centers[0, 2])
    cam = CameraView(fx=100, fy=100, cx=64, cy=64, width=128, height=128, z_near=zc)
    return field_, cam


def chi_square_half_voxel(samples: int = 1_000_000, seed: int = 0, cells: int = 8):
    field_, cam = half_clipped_voxel()
    pdf = VoxelPDF(np.array([0]), np.ones(1), 1.0, np.array([0.5]))
    pos = rejection_sample(field_, pdf, np.array([samples]), cam, seed)
    o = field_.origins[0]
    s = field_.voxel_size
    u = (pos - o) / s
    outside = int(np.sum(pos[:, 2] <= cam.z_near))
    # visible half: z in (0.5, 1] of the voxel
    uz = (u[:, 2] - 0.5) * 2.0
    ijk = np.stack([np.floor(u[:, 0] * cells), np.floor(u[:, 1] * cells), np.floor(uz * cells)], 1)
    ijk = np.clip(ijk.astype(np.int64), 0, cells - 1)
    counts = np.bincount((ijk[:, 0] * cells + ijk[:, 1]) * cells + ijk[:, 2],
                         minlength=cells ** 3)
    p = stats.chisquare(counts).pvalue
    return p, outside


def sampling_suite(seed: int = 0, samples: int = 1_000_000):
    out = []
    p, outside = chi_square_half_voxel(samples, seed)
    out.append(("rejection sampling chi-square (8^3 cells)", p > 0.01 and outside == 0,
                f"p={p:.4f}, outside={outside}"))
    rng = np.random.default_rng(seed)
    bad = 0
    for t in range(1000):
        k = int(rng.integers(1, 60))
        w = rng.dirichlet(np.full(k, rng.uniform(0.05, 2.0)))
        if t % 3 == 0:
            w[0] += 1e6
            w /= w.sum()
        n = int(rng.integers(k, 5 * k + 10))
        c = allocate_counts(VoxelPDF(np.arange(k), w, 1.0, np.ones(k)), n, seed + t)
        if c.sum() != n or np.any(c[w > 0] < 1):
            bad += 1
    out.append(("allocate_counts sum and min-one rule (1000 PDFs)", bad == 0, f"{bad} failures"))
    wins = 0
    for s in range(10):
        h = halton_points(np.zeros(3), 1.0, 4096, s * 4096)
        r = np.random.default_rng(s).random((4096, 3))
        wins += min_pairwise_distance(h) > min_pairwise_distance(r)
    out.append(("Halton beats uniform min pairwise distance", wins == 10, f"{wins}/10 seeds"))
    return out


def min_pairwise_distance(p: np.ndarray) -> float:
    from scipy.spatial import cKDTree
    d, _ = cKDTree(p).query(p, k=2)
    return float(d[:, 1].min())


def tonemap_suite(n: int = 1_000_000, seed: int = 0, knots: int = 25, tol: float = 1e-12):
    x, ev, curves = random_tonemap_triples(n, seed, knots)
    y = tonemap_forward(x, ev, curves)
    back = tonemap_inverse(y, ev, curves)
    err = float(np.max(np.abs(back - x)))
    ys = np.random.default_rng(seed + 1).random(n)
    err2 = float(np.max(np.abs(tonemap_forward(tonemap_inverse(ys, ev, curves), ev, curves) - ys)))
    return [("tonemap inverse(forward(x)) round trip", err <= tol, f"max abs err {err:.2e}"),
            ("tonemap forward(inverse(y)) round trip", err2 <= tol, f"max abs err {err2:.2e}")]


def random_tonemap_triples(n: int, seed: int, knots: int = 25):
    """Random curves (one per value), EVs in [-3, 3], values in [0, 2^ev].

    Curves are normalized cumulative sums of segment rises drawn from
    U[0.1, 1], so no segment is more than 10x flatter than another. The
    round trip error grows like 2^ev * ulp / min_gap, so near-flat curves
    are ill-conditioned by construction and are not part of this family.
    """
    rng = np.random.default_rng(seed)
    rise = rng.uniform(0.1, 1.0, (n, knots - 1))
    c = np.cumsum(rise, axis=1)
    curves = np.zeros((n, knots))
    curves[:, 1:] = c / c[:, -1:]
    curves[:, -1] = 1.0
    ev = rng.uniform(-3.0, 3.0, n)
    x = rng.random(n) * np.exp2(ev)
    return x, ev, curves


def envmap_suite(seed: int = 0, iterations: int = 1000):
    out = []
    env = EnvironmentMap(np.random.default_rng(seed).normal(size=(8, 16, 4)))
    d = random_directions(np.random.default_rng(seed + 1), 64)
    g = np.random.default_rng(seed + 2).normal(size=(64, 4))
    an = sample_env_texel_grad(env, d, g)
    worst = 0.0
    h = 1e-2  # linear in the texels: no truncation error, less cancellation
    t = env.texels.copy()
    for idx in np.ndindex(t.shape):
        tp = t.copy()
        tp[idx] += h
        tm = t.copy()
        tm[idx] -= h
        fd = (np.sum(g * sample_env(EnvironmentMap(tp), d)) - np.sum(g * sample_env(EnvironmentMap(tm), d))) / (2 * h)
        worst = max(worst, _rel(an[idx], fd, 1e-3))
    out.append(("env texel gradient vs finite differences", worst < 1e-8, f"max rel err {worst:.2e}"))
    const = distill_env(ConstantBackground((0.3, -0.2, 0.7, 1.1)),
                        DistillConfig(iterations=50, seed=seed))
    dd = random_directions(np.random.default_rng(seed + 3), 10000)
    mse = float(np.mean((sample_env(const.env, dd) - np.array([0.3, -0.2, 0.7, 1.1])) ** 2))
    out.append(("constant oracle distillation", mse < 1e-10, f"mse {mse:.2e}"))
    oracle = SHBackground.from_seed(seed)
    res = distill_env(oracle, DistillConfig(iterations=iterations, seed=seed))
    val = psnr(sample_env(res.env, dd), oracle(dd))
    out.append(("band-limited oracle distillation PSNR >= 40 dB", val >= 40.0, f"{val:.2f} dB"))
    return out


def run_suite(name: str, quick: bool = False):
    if name == "gradcheck":
        return gradcheck(n=20 if quick else 60)
    if name == "sampling":
        return sampling_suite(samples=200_000 if quick else 1_000_000)
    if name == "tonemap":
        return tonemap_suite(n=100_000 if quick else 1_000_000)
    if name == "envmap":
        return envmap_suite(iterations=200 if quick else 1000)
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
