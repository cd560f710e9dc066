import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from implicit_points.tonemap import (MIN_GAP, ResponseCurve, project_curve, tonemap_forward,
                                     tonemap_inverse, validate_curve)
from implicit_points.verify import random_tonemap_triples


def random_curve(seed, K=25):
    rng = np.random.default_rng(seed)
    c = np.cumsum(rng.uniform(0.1, 1.0, K - 1))
    return ResponseCurve(np.r_[0.0, c / c[-1]])


def test_identity_curve_is_clamp():
    x = np.array([-1.0, 0.0, 0.25, 0.7, 1.0, 3.0])
    assert np.allclose(tonemap_forward(x, 0.0, ResponseCurve.identity()), np.clip(x, 0, 1),
                       atol=1e-15)


def test_exposure_division():
    assert tonemap_forward(np.array([2.0]), 1.0, ResponseCurve.identity())[0] == 1.0
    assert np.isclose(tonemap_forward(np.array([0.5]), 1.0, ResponseCurve.identity())[0], 0.25)


@pytest.mark.parametrize("seed", range(3))
def test_endpoints_map_to_zero_and_one(seed):
    c = random_curve(seed)
    ev = 1.7
    out = tonemap_forward(np.array([0.0, 2 ** ev, 10.0]), ev, c)
    assert out.tolist() == [0.0, 1.0, 1.0]
    inv = tonemap_inverse(np.array([0.0, 1.0]), ev, c)
    assert inv[0] == 0.0 and inv[1] == 2 ** ev


def test_identity_inverse_closed_form():
    y = np.linspace(0, 1, 101)
    assert np.allclose(tonemap_inverse(y, -0.5, ResponseCurve.identity()), y * 2 ** -0.5,
                       rtol=0, atol=1e-15)


def test_inverse_rejects_out_of_range():
    c = ResponseCurve.identity()
    with pytest.raises(ValueError):
        tonemap_inverse(np.array([1.0 + 1e-9]), 0.0, c)
    with pytest.raises(ValueError):
        tonemap_inverse(np.array([-1e-9]), 0.0, c)
    tonemap_inverse(np.array([1.0 + 1e-13, -1e-13]), 0.0, c)


def test_validator_rejects_unpinned_and_flat_curves():
    with pytest.raises(ValueError, match="endpoints"):
        validate_curve(np.linspace(0, 0.9, 25))  # y in (0.9, 1] would have no preimage
    with pytest.raises(ValueError):
        validate_curve(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        ResponseCurve(np.array([0.0]))
    with pytest.raises(ValueError):
        tonemap_forward(np.ones(2), 0.0, np.array([[0.0, 0.95], [0.0, 1.0]]))


def test_project_curve_fixed_point():
    c = random_curve(4)
    assert np.max(np.abs(project_curve(c.values).values - c.values)) <= 1e-15


def test_project_curve_constant_input():
    v = project_curve(np.full(25, 0.3)).values
    validate_curve(v)
    assert v[0] == 0.0 and v[-1] == 1.0
    # interior collapses onto an eps-spaced staircase at the constant
    assert np.allclose(np.diff(v[1:-1]), MIN_GAP, rtol=1e-6)
    assert np.isclose(v[1], 0.3)


def test_project_curve_needs_two_values():
    with pytest.raises(ValueError):
        project_curve(np.array([0.5]))


@given(st.lists(st.floats(allow_nan=True, allow_infinity=True), min_size=2, max_size=40))
def test_project_curve_always_valid(raw):
    validate_curve(project_curve(np.array(raw, dtype=np.float64)).values)


@given(st.integers(0, 10_000), st.floats(-4, 4))
def test_forward_monotone(seed, ev):
    c = random_curve(seed)
    x = np.sort(np.random.default_rng(seed).uniform(-1, 2 ** ev * 1.5, 500))
    assert np.all(np.diff(tonemap_forward(x, ev, c)) >= 0)


def test_round_trips_small_batch():
    x, ev, curves = random_tonemap_triples(20_000, 3)
    y = tonemap_forward(x, ev, curves)
    assert np.max(np.abs(tonemap_inverse(y, ev, curves) - x)) <= 1e-12
    ys = np.random.default_rng(0).random(20_000)
    assert np.max(np.abs(tonemap_forward(tonemap_inverse(ys, ev, curves), ev, curves) - ys)) <= 1e-12


def test_batched_matches_single_curves():
    x, ev, curves = random_tonemap_triples(50, 9)
    batched = tonemap_forward(x, ev, curves)
    single = [tonemap_forward(x[i], ev[i], ResponseCurve(curves[i])) for i in range(50)]
    assert np.array_equal(batched, np.array(single))


def test_curve_json_round_trip():
    c = random_curve(5)
    back = ResponseCurve.from_json(c.to_json())
    assert np.array_equal(back.values, c.values)
    assert json.loads(c.to_json())["knots"] == 25
