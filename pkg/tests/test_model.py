import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from awunfold import catalog
from awunfold.model import (
    ControllerGains,
    PlantModel,
    assemble_closed_loop,
    closed_loop_rhs,
    gains_hash,
    load_gains,
    save_gains,
    saturate,
    smooth_saturate,
    smooth_saturate_derivative,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def structured_rhs(plant, gains, x, sat):
    """Plant and controller equations written out block by block."""
    xp, xc = x[: plant.n], x[plant.n:]
    y = plant.C_p @ xp
    u = gains.C_c @ xc + gains.D_c @ y
    s = sat(u)
    return np.concatenate([plant.A_p @ xp + plant.B_p @ s,
                           gains.A_c @ xc + gains.B_c @ y + gains.E_c @ (s - u)])


def test_initial_controller_feedback_matrix(initial):
    F = [[-3.3333, 0, 0.3333, 0], [0, 1, 0, -0.1]]
    np.testing.assert_allclose(initial.F, F, atol=1e-15)


def test_zero_gains_give_open_loop(plant):
    sys = assemble_closed_loop(plant, ControllerGains.zeros(2, 2, 2))
    np.testing.assert_array_equal(sys.A[:2, :2], plant.A_p)
    np.testing.assert_array_equal(sys.A[2:], 0)
    np.testing.assert_array_equal(sys.A[:2, 2:], 0)
    np.testing.assert_array_equal(sys.B, np.vstack([plant.B_p, np.zeros((2, 2))]))
    np.testing.assert_array_equal(sys.F, 0)


def test_learned_antiwindup_block(learned):
    np.testing.assert_array_equal(learned.B[2:], [[-0.0195, 1.5041], [0.4874, -1.3736]])


def test_mismatched_blocks_are_named(plant):
    bad = ControllerGains(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)),
                          np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="D_c"):
        assemble_closed_loop(plant, bad)


def test_gain_shape_validation():
    with pytest.raises(ValueError):
        ControllerGains(np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((2, 2)),
                        np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        PlantModel(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros((1, 2)))


@pytest.mark.parametrize("u, expected", [([0.5, -2.0], [0.5, -1.0]), ([0, 0], [0, 0]),
                                         ([1.0, -1.0], [1.0, -1.0])])
def test_saturate_examples(u, expected):
    np.testing.assert_array_equal(saturate(np.array(u)), expected)


def test_smooth_saturate_values():
    # reference values from 30-digit evaluation of the formula
    assert smooth_saturate(0.0, 1e-6) == 0.0
    assert smooth_saturate(1.0, 1e-6) == pytest.approx(0.9995001249999922, rel=1e-13)
    v = smooth_saturate(10.0, 1e-6)
    assert 0.9999 < v < 1.0
    assert v == pytest.approx(0.999999994949495, rel=1e-12)


def test_smooth_saturate_derivative_values():
    assert smooth_saturate_derivative(0.0, 1e-6) == pytest.approx(0.9999995000003750, rel=1e-13)
    assert smooth_saturate_derivative(10.0, 1e-6) < 1e-2
    assert smooth_saturate_derivative(-10.0, 1e-6) < 1e-2
    assert smooth_saturate_derivative(10.0, 1e-6) == pytest.approx(1.0203040348e-9, rel=1e-6)


@given(st.floats(-50, 50), st.sampled_from([1e-2, 1e-4, 1e-6]))
def test_smooth_saturate_properties(u, zeta):
    s = smooth_saturate(u, zeta)
    assert abs(s) < 1.0
    assert smooth_saturate(-u, zeta) == -s
    assert abs(s - saturate(u)) <= np.sqrt(zeta) / 2 * (1 + 1e-9)


@given(st.floats(-20, 20), st.sampled_from([1e-2, 1e-4]))
def test_smooth_derivative_matches_difference(u, zeta):
    h = 1e-6
    fd = (smooth_saturate(u + h, zeta) - smooth_saturate(u - h, zeta)) / (2 * h)
    assert smooth_saturate_derivative(u, zeta) == pytest.approx(fd, abs=1e-5)


def test_rhs_at_origin(learned):
    assert np.all(closed_loop_rhs(learned, np.zeros(4)) == 0)
    assert np.all(closed_loop_rhs(learned, np.zeros(4), zeta=1e-6) == 0)


def test_rhs_boundary_state_matches_structured_form(plant, learned):
    x = np.array(catalog.BOUNDARY_STATE)
    expected = structured_rhs(plant, catalog.learned_controller(), x, saturate)
    np.testing.assert_allclose(closed_loop_rhs(learned, x), expected, rtol=1e-13, atol=1e-12)
    np.testing.assert_allclose(expected, [1.152, 10.878, 42.776172, -34.44463031], rtol=1e-9)


@settings(max_examples=50)
@given(arrays(float, 4, elements=finite), st.sampled_from([None, 1e-3]))
def test_rhs_matches_structured_form(plant, x, zeta):
    gains = catalog.learned_controller()
    sys = assemble_closed_loop(plant, gains)
    sat = saturate if zeta is None else (lambda u: smooth_saturate(u, zeta))
    np.testing.assert_allclose(closed_loop_rhs(sys, x, zeta), structured_rhs(plant, gains, x, sat),
                               rtol=1e-10, atol=1e-8)


@settings(max_examples=50)
@given(arrays(float, 4, elements=st.floats(-1, 1)))
def test_rhs_linear_region(learned, x):
    x = x * 0.9 / max(1.0, np.max(np.abs(learned.F @ x)))
    np.testing.assert_allclose(closed_loop_rhs(learned, x), learned.A @ x, atol=1e-12)


def test_rhs_batched(learned, rng):
    X = rng.normal(size=(3, 5, 4)) * 10
    out = closed_loop_rhs(learned, X)
    np.testing.assert_allclose(out[1, 2], closed_loop_rhs(learned, X[1, 2]), rtol=1e-14)


def test_gains_roundtrip_and_hash(tmp_path):
    g = catalog.learned_controller()
    save_gains(g, tmp_path / "g.json")
    g2 = load_gains(tmp_path / "g.json")
    for key in ("A_c", "B_c", "C_c", "D_c", "E_c"):
        np.testing.assert_array_equal(getattr(g, key), getattr(g2, key))
    assert gains_hash(g) == gains_hash(g2)
    assert len(gains_hash(g)) == 64
    assert gains_hash(g) != gains_hash(g.without_antiwindup())
