import numpy as np
import pytest
from hypothesis import given, strategies as st

from implicit_points.sampling import (DEFAULT_GLOBAL_SAMPLES, DEFAULT_VIEW_SAMPLES,
                                      DegenerateVisibilityError, EmptyFrustumError, RingBuffer,
                                      VoxelPDF, allocate_counts, global_extract, global_weights,
                                      halton_points, halton_start_index, in_frustum,
                                      radical_inverse, rejection_sample, ring_assemble, ring_push,
                                      sample_view, view_pdf, view_weights, visible_fraction)
from implicit_points.scene import AppearanceOracle, CameraView, PointSet, ProbabilityField
from implicit_points.verify import chi_square_half_voxel, half_clipped_voxel, min_pairwise_distance

CAM = CameraView(fx=100, fy=100, cx=64, cy=64, width=128, height=128, z_near=0.1)


def field_at(indices, weights=None, res=16, lo=(-2.0, -2.0, -2.0), size=4.0):
    idx = np.array(indices)
    w = np.ones(len(idx)) if weights is None else np.array(weights, dtype=float)
    lo = np.array(lo)
    return ProbabilityField(res, lo, lo + size, idx, w)


def pdf_of(weights):
    w = np.asarray(weights, dtype=float)
    return VoxelPDF(np.arange(len(w)), w / w.sum(), float(w.sum()), np.ones(len(w)))


# --------------------------------------------------------------------------
# view_pdf


def test_single_visible_voxel_gets_all_weight():
    f = field_at([[8, 8, 12]])
    pdf = view_pdf(f, CAM)
    assert len(pdf) == 1 and pdf.weights[0] == 1.0


def test_inverse_square_distance_ratio():
    # two voxels on the optical axis, centers at z = 1 and z = 2 (voxel size 0.25)
    f = ProbabilityField(16, np.array([-2.0, -2.0, -1.0]), np.array([2.0, 2.0, 3.0]),
                         np.array([[7, 7, 7], [7, 7, 11]]), np.ones(2))
    cam = CameraView(fx=100, fy=100, cx=64, cy=64, width=128, height=128, z_near=0.1,
                     translation=np.array([0.125, 0.125, 0.125]))
    w, vis = view_weights(f, cam)
    assert np.all(vis == 1.0)
    d = np.linalg.norm(f.centers - cam.center, axis=1)
    assert np.allclose(d, [1.0, 2.0])
    assert np.isclose(w[0] / w[1], 4.0)


def test_voxel_behind_camera_excluded():
    f = field_at([[8, 8, 12], [8, 8, 2]])
    pdf = view_pdf(f, CAM)
    assert len(pdf) == 1
    assert np.isclose(f.centers[pdf.voxel_ids[0], 2], 1.125)


def test_empty_frustum_raises():
    with pytest.raises(EmptyFrustumError):
        view_pdf(field_at([[8, 8, 2]]), CAM)


def test_visible_fraction_half_clipped():
    f, cam = half_clipped_voxel()
    assert visible_fraction(f, cam)[0] == 0.5


def test_pdf_normalized():
    rng = np.random.default_rng(0)
    idx = np.unique(rng.integers(0, 16, (300, 3)), axis=0)
    f = field_at(idx, rng.random(len(idx)) + 0.01)
    pdf = view_pdf(f, CAM)
    assert abs(pdf.weights.sum() - 1) < 1e-9
    assert np.all(pdf.visfrac > 0)


# --------------------------------------------------------------------------
# allocate_counts


def test_allocate_single_voxel():
    assert allocate_counts(pdf_of([1.0]), 8, 0).tolist() == [8]


def test_allocate_min_one_rule_tiny_weights():
    w = np.r_[0.999999, np.full(10, 1e-7)]
    c = allocate_counts(pdf_of(w), 100, 0)
    assert c.sum() == 100 and np.all(c >= 1)


def test_allocate_rejects_too_few_samples():
    with pytest.raises(ValueError):
        allocate_counts(pdf_of(np.ones(5)), 4, 0)


def test_allocate_reassignment_takes_from_largest_lowest_index_first():
    from implicit_points.sampling import _reassign
    # 5,5 -> 4,5 -> 4,4 -> 3,4 (tie goes to the lower index)
    assert _reassign(np.array([3, 5, 5, 0]), 3).tolist() == [3, 3, 4, 0]


@given(st.integers(1, 40), st.integers(0, 2 ** 31), st.floats(0.01, 3.0))
def test_allocate_properties(k, seed, conc):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.full(k, conc)) + 1e-300
    n = int(rng.integers(k, 4 * k + 5))
    c = allocate_counts(pdf_of(w), n, seed)
    assert c.sum() == n and np.all(c >= 1)
    assert np.array_equal(c, allocate_counts(pdf_of(w), n, seed))


def test_allocate_converges_to_weights():
    w = np.array([0.5, 0.3, 0.15, 0.05])
    n = 1_000_000
    c = allocate_counts(pdf_of(w), n, 3)
    sigma = np.sqrt(n * w * (1 - w))
    assert np.all(np.abs(c - n * w) < 3 * sigma)


# --------------------------------------------------------------------------
# rejection_sample


def test_rejection_fully_visible_voxel():
    f = field_at([[8, 8, 12]])
    pdf = view_pdf(f, CAM)
    pos = rejection_sample(f, pdf, np.array([500]), CAM, 1)
    lo = f.origins[0]
    assert pos.shape == (500, 3)
    assert np.all(pos >= lo) and np.all(pos < lo + f.voxel_size)
    assert np.all(in_frustum(CAM, pos))


def test_rejection_half_clipped_is_uniform_and_inside():
    p, outside = chi_square_half_voxel(200_000, seed=2)
    assert outside == 0 and p > 0.01


def test_rejection_deterministic():
    f, cam = half_clipped_voxel()
    pdf = view_pdf(f, cam)
    a = rejection_sample(f, pdf, np.array([1000]), cam, 5)
    b = rejection_sample(f, pdf, np.array([1000]), cam, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rejection_sample(f, pdf, np.array([1000]), cam, 6))


def test_rejection_slot_order_by_voxel():
    rng = np.random.default_rng(1)
    idx = np.unique(rng.integers(4, 12, (40, 3)), axis=0)
    idx[:, 2] += 4
    f = field_at(idx)
    pdf = view_pdf(f, CAM)
    counts = np.arange(1, len(pdf) + 1)
    pos = rejection_sample(f, pdf, counts, CAM, 0)
    owner = np.repeat(np.arange(len(pdf)), counts)
    lo = f.origins[pdf.voxel_ids][owner]
    assert np.all(pos >= lo - 1e-12) and np.all(pos <= lo + f.voxel_size + 1e-12)


def test_rejection_degenerate_visibility():
    f = field_at([[8, 8, 2]])  # behind the camera
    pdf = VoxelPDF(np.array([0]), np.ones(1), 1.0, np.array([1e-6]))
    with pytest.raises(DegenerateVisibilityError):
        rejection_sample(f, pdf, np.array([1]), CAM, 0)


# --------------------------------------------------------------------------
# sample_view


def test_sample_view_defaults_and_empty():
    assert DEFAULT_VIEW_SAMPLES == 8_388_608
    f = field_at([[8, 8, 12]])
    assert len(sample_view(f, CAM, AppearanceOracle(0), n=0)) == 0


def test_sample_view_identical_frusta_identical_points():
    rng = np.random.default_rng(2)
    idx = np.unique(rng.integers(4, 12, (50, 3)), axis=0)
    idx[:, 2] += 4
    f = field_at(idx)
    cam2 = CameraView(fx=100, fy=100, cx=64, cy=64, width=128, height=128, z_near=0.1)
    a = sample_view(f, CAM, AppearanceOracle(1), n=2000, seed=3)
    b = sample_view(f, cam2, AppearanceOracle(1), n=2000, seed=3)
    assert a == b and len(a) == 2000


# --------------------------------------------------------------------------
# Halton and global extraction


def test_radical_inverse_prefix():
    assert radical_inverse(np.arange(1, 4), 2).tolist() == [0.5, 0.25, 0.75]
    assert np.allclose(radical_inverse(np.arange(1, 4), 3), [1 / 3, 2 / 3, 1 / 9])


def test_halton_points_layout():
    assert halton_points(np.zeros(3), 1.0, 0).shape == (0, 3)
    p = halton_points(np.array([1.0, 2.0, 3.0]), 0.5, 3, start_index=1)
    assert np.allclose(p[:, 0], 1.0 + 0.5 * np.array([0.5, 0.25, 0.75]))
    with pytest.raises(ValueError):
        halton_points(np.zeros(3), 1.0, -1)


def test_halton_beats_random_spacing():
    h = [min_pairwise_distance(halton_points(np.zeros(3), 1.0, 4096, s * 4096)) for s in range(10)]
    r = [min_pairwise_distance(np.random.default_rng(s).random((4096, 3))) for s in range(10)]
    assert np.mean(h) > np.mean(r)


def test_halton_start_index_range():
    s = halton_start_index(np.arange(10_000, dtype=np.uint64))
    assert s.min() >= 0 and s.max() < 1 << 16 and len(np.unique(s)) > 9000


def _field_for_global():
    rng = np.random.default_rng(5)
    idx = np.unique(rng.integers(0, 16, (400, 3)), axis=0)
    return field_at(idx, rng.random(len(idx)) + 0.1)


def test_global_single_camera_equals_view_weights():
    f = _field_for_global()
    assert np.array_equal(global_weights(f, [CAM]), view_weights(f, CAM)[0])


def test_global_weights_monotone_in_cameras():
    f = _field_for_global()
    cams = [CameraView.look_at([3 * np.sin(a), 0.5, 3 * np.cos(a)], [0, 0, 0], fx=60, fy=60,
                               cx=32, cy=32, width=64, height=64, z_near=0.1)
            for a in np.linspace(0, 2 * np.pi, 6, endpoint=False)]
    prev = np.zeros(len(f))
    for k in range(1, len(cams) + 1):
        g = global_weights(f, cams[:k])
        assert np.all(g >= prev)
        prev = g


def test_global_extract_skips_invisible_voxels():
    f = field_at([[8, 8, 12], [8, 8, 2]])
    pts = global_extract(f, [CAM], AppearanceOracle(0), m=1000, seed=1)
    assert len(pts) == 1000
    assert np.all(pts.positions[:, 2] > 0.5)
    assert DEFAULT_GLOBAL_SAMPLES == 33_554_432


def test_global_extract_errors():
    f = field_at([[8, 8, 2]])
    with pytest.raises(EmptyFrustumError):
        global_extract(f, [CAM], AppearanceOracle(0), m=10)
    with pytest.raises(ValueError):
        global_extract(f, [], AppearanceOracle(0), m=10)
    with pytest.raises(ValueError):
        global_extract(f, [CAM], AppearanceOracle(0), m=0)


def test_global_extract_deterministic():
    f = _field_for_global()
    a = global_extract(f, [CAM], AppearanceOracle(0), m=5000, seed=4)
    assert a == global_extract(f, [CAM], AppearanceOracle(0), m=5000, seed=4)


# --------------------------------------------------------------------------
# Ring buffer


def cloud(n, tag):
    return PointSet(np.full((n, 3), float(tag)), np.full(n, 0.5), np.zeros((n, 4, 9)))


def test_ring_fifo_eviction():
    buf = RingBuffer(4)
    for i in range(5):
        ring_push(buf, cloud(2, i))
    assert len(buf) == 4 and buf.frame_tags == [1, 2, 3, 4]
    assert ring_assemble(buf).positions[0, 0] == 1.0


def test_ring_assemble_preserves_order_and_sizes():
    buf = RingBuffer(4)
    ring_push(buf, cloud(3, 7))
    ring_push(buf, cloud(5, 9))
    out = ring_assemble(buf)
    assert len(out) == 8 and out.positions[:3, 0].tolist() == [7.0] * 3


def test_ring_errors():
    with pytest.raises(ValueError):
        ring_assemble(RingBuffer())
    with pytest.raises(ValueError):
        ring_push(RingBuffer(), PointSet.empty())
    buf = ring_push(RingBuffer(), cloud(1, 0), frame=5)
    with pytest.raises(ValueError):
        ring_push(buf, cloud(1, 0), frame=5)
    with pytest.raises(ValueError):
        RingBuffer(0)


def test_ring_does_not_mutate_clouds():
    c = cloud(4, 1)
    before = c.sh_coeffs.copy()
    buf = RingBuffer(2)
    ring_push(buf, c)
    ring_assemble(buf)
    assert np.array_equal(c.sh_coeffs, before)
