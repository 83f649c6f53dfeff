import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgbp.errors import ShapeError, ValidationError
from rgbp.polar_core import (
    QuadIntensities,
    StokesImage,
    compute_polar_maps,
    compute_stokes,
    consistency_residual,
    intensity_at,
    stokes_from_polar,
    synthesize_intensities,
)


def quad(*vals):
    return QuadIntensities(*(np.full((1, 1), v, dtype=np.float64) for v in vals))


def stokes(*vals):
    return StokesImage(*(np.full((1, 1), v, dtype=np.float64) for v in vals))


def scalars(img):
    return tuple(float(getattr(img, f).ravel()[0]) for f in img.__dataclass_fields__)


def malus(s0, s1, s2, deg):
    t = math.radians(deg)
    return 0.5 * (s0 + s1 * math.cos(2 * t) + s2 * math.sin(2 * t))


@pytest.mark.parametrize(
    "i, s",
    [
        ((0.5, 0.5, 0.5, 0.5), (1.0, 0.0, 0.0)),
        ((1.3, 1.4, 0.7, 0.6), (2.0, 0.6, 0.8)),
        ((1.0, 0.5, 0.0, 0.5), (1.0, 1.0, 0.0)),
    ],
)
def test_compute_stokes_examples(i, s):
    # quad order here is (i0, i45, i90, i135)
    got = scalars(compute_stokes(quad(*i)))
    assert got == pytest.approx(s, abs=1e-12)


def test_malus_oracle_for_stokes_example():
    # the (2.0, 0.6, 0.8) Stokes vector seen through the four polarizers
    assert [malus(2.0, 0.6, 0.8, d) for d in (0, 45, 90, 135)] == pytest.approx([1.3, 1.4, 0.7, 0.6])


def test_polar_maps_examples():
    m = compute_polar_maps(stokes(2.0, 0.6, 0.8))
    assert float(m.dolp[0, 0]) == pytest.approx(0.5, abs=1e-12)
    assert float(m.aolp[0, 0]) == pytest.approx(0.5 * math.atan2(0.8, 0.6), abs=1e-12)
    assert float(m.aolp[0, 0]) == pytest.approx(0.46365, abs=1e-5)

    m = compute_polar_maps(stokes(1.0, 0.0, 0.0))
    assert (float(m.aolp[0, 0]), float(m.dolp[0, 0])) == (0.0, 0.0)

    m = compute_polar_maps(stokes(1.0, 1.2, 0.0))
    assert (float(m.aolp[0, 0]), float(m.dolp[0, 0])) == (0.0, 1.0)


def test_zero_s0_gives_zero_dolp():
    m = compute_polar_maps(stokes(0.0, 0.0, 0.0))
    assert float(m.dolp[0, 0]) == 0.0 and float(m.aolp[0, 0]) == 0.0


def test_aolp_range_half_open():
    # s2 = -0, s1 < 0 lands on -pi/2 before the shift
    m = compute_polar_maps(stokes(1.0, -0.5, -0.0))
    assert 0.0 <= float(m.aolp[0, 0]) < math.pi
    s1 = np.array([[-1.0, 1.0, 0.0, -1.0]])
    s2 = np.array([[0.0, 0.0, 1.0, -1e-300]])
    m = compute_polar_maps(StokesImage(np.full_like(s1, 2.0), s1, s2))
    assert np.all((m.aolp >= 0) & (m.aolp < np.pi))


@pytest.mark.parametrize(
    "s, i",
    [
        ((2.0, 0.6, 0.8), (1.3, 1.4, 0.7, 0.6)),
        ((1.0, 0.0, 0.0), (0.5, 0.5, 0.5, 0.5)),
        ((1.0, 1.0, 0.0), (1.0, 0.5, 0.0, 0.5)),
    ],
)
def test_synthesize_examples(s, i):
    assert scalars(synthesize_intensities(stokes(*s))) == pytest.approx(i, abs=1e-12)


def test_synthesize_rejects_overpolarized():
    with pytest.raises(ValidationError):
        synthesize_intensities(stokes(1.0, 0.9, 0.9))


def test_intensity_at_matches_malus():
    s = stokes(2.0, 0.6, 0.8)
    for deg in (0, 10, 45, 77, 135):
        assert float(intensity_at(s, math.radians(deg))[0, 0]) == pytest.approx(malus(2.0, 0.6, 0.8, deg))


def test_residual_examples():
    assert float(consistency_residual(quad(1.0, 0.5, 0.0, 0.6))[0, 0]) == pytest.approx(0.1, abs=1e-12)
    assert float(consistency_residual(quad(0, 0, 0, 0))[0, 0]) == 0.0
    q = synthesize_intensities(stokes(2.0, 0.6, 0.8))
    assert float(consistency_residual(q)[0, 0]) == pytest.approx(0.0, abs=1e-12)


def test_validation_errors():
    with pytest.raises(ValidationError):
        quad(1.0, -0.1, 0.5, 0.5)
    with pytest.raises(ValidationError):
        quad(1.0, np.nan, 0.5, 0.5)
    with pytest.raises(ValidationError):
        stokes(-1.0, 0.0, 0.0)
    with pytest.raises(ShapeError):
        QuadIntensities(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(ShapeError):
        StokesImage(np.ones((2, 2, 2)), np.ones((2, 2, 2)), np.ones((2, 2, 2)))


def test_integer_planes_promoted():
    q = QuadIntensities(*(np.full((2, 2), 100, dtype=np.uint16) for _ in range(4)))
    assert q.i0.dtype == np.float32
    assert compute_stokes(q).s0.dtype == np.float32


def test_float32_stays_float32(rng):
    s0 = rng.uniform(0.5, 1, (4, 4)).astype(np.float32)
    m = compute_polar_maps(StokesImage(s0, 0.3 * s0, -0.2 * s0))
    assert m.aolp.dtype == np.float32 and m.dolp.dtype == np.float32


def test_stokes_from_polar_inverse(rng):
    s0 = rng.uniform(0.1, 2, (5, 5, 3))
    phi = rng.uniform(0, np.pi, s0.shape)
    rho = rng.uniform(0.01, 1, s0.shape)
    m = compute_polar_maps(stokes_from_polar(s0, phi, rho))
    assert np.max(np.abs(m.dolp - rho)) < 1e-12
    d = np.abs(m.aolp - phi)
    assert np.max(np.minimum(d, np.pi - d)) < 1e-9


finite = st.floats(0.0, 10.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(finite, st.floats(0, 1), st.floats(0, math.pi, exclude_max=True))
def test_round_trip_property(s0, rho, phi):
    s = stokes_from_polar(np.full((1, 1), s0), np.full((1, 1), phi), np.full((1, 1), rho))
    m = compute_polar_maps(compute_stokes(synthesize_intensities(s)))
    if s0 > 1e-6:
        assert abs(float(m.dolp[0, 0]) - rho) < 1e-9
        if rho * s0 > 1e-6:
            d = abs(float(m.aolp[0, 0]) - phi)
            assert min(d, math.pi - d) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=4, max_size=4))
def test_maps_always_in_range(vals):
    m = compute_polar_maps(compute_stokes(quad(*vals)))
    assert 0.0 <= float(m.dolp[0, 0]) <= 1.0
    assert 0.0 <= float(m.aolp[0, 0]) < math.pi
    assert float(consistency_residual(quad(*vals))[0, 0]) >= 0.0
