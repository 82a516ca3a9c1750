import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2dsim import rng
from d2dsim.channel import (
    DEFAULT_TEMPLATES,
    CalibrationAnchor,
    Composition,
    LinkKind,
    RadioProfile,
    calibrate,
    default_anchors,
    end_to_end_success,
    estimate_distance,
    expected_success,
    mean_rssi,
    packet_success_prob,
    range_at_threshold,
    sample_rssi,
    sample_rssi_array,
    shadow_sigma,
)
from d2dsim.errors import CalibrationError, DomainError, NoSolutionError


def make_profile(**overrides) -> RadioProfile:
    base = dict(
        link_kind=LinkKind.D2D,
        tx_power_dbm=18.0,
        pl0_db=40.0,
        ref_distance_m=1.0,
        path_loss_exponent=3.0,
        shadow_sigma0_db=1.0,
        shadow_sigma_slope_db=2.0,
        success_midpoint_dbm=-88.0,
        success_slope_per_db=0.5,
    )
    base.update(overrides)
    return RadioProfile(**base)


# ---------------------------------------------------------------- mean_rssi

def test_mean_rssi_at_reference_distance():
    p = make_profile()
    assert mean_rssi(p, 1.0) == pytest.approx(-22.0)


def test_mean_rssi_one_decade():
    p = make_profile()
    assert mean_rssi(p, 10.0) == pytest.approx(-52.0)


def test_mean_rssi_two_decades():
    p = make_profile()
    assert mean_rssi(p, 100.0) == pytest.approx(-82.0)


@pytest.mark.parametrize("bad", [0.0, -5.0, 0.5])
def test_mean_rssi_rejects_bad_distance(bad):
    with pytest.raises(DomainError):
        mean_rssi(make_profile(), bad)


# ------------------------------------------------------------- shadow_sigma

def test_shadow_sigma_at_reference():
    p = make_profile(shadow_sigma0_db=1.0, shadow_sigma_slope_db=2.0)
    assert shadow_sigma(p, 1.0) == pytest.approx(1.0)


def test_shadow_sigma_two_decades():
    p = make_profile(shadow_sigma0_db=1.0, shadow_sigma_slope_db=2.0)
    assert shadow_sigma(p, 100.0) == pytest.approx(5.0)


def test_shadow_sigma_constant_when_slope_zero():
    p = make_profile(shadow_sigma0_db=1.0, shadow_sigma_slope_db=0.0)
    for d in (1.0, 7.0, 1234.0):
        assert shadow_sigma(p, d) == pytest.approx(1.0)


# -------------------------------------------------------------- sample_rssi

def test_sample_rssi_zero_variance_equals_mean():
    p = make_profile(shadow_sigma0_db=0.0, shadow_sigma_slope_db=0.0)
    stream = rng.stream(1, "test")
    s = sample_rssi(p, 25.0, stream)
    assert s.value_dbm == mean_rssi(p, 25.0)
    assert s.distance_m == 25.0
    assert s.link_kind is LinkKind.D2D


def test_sample_rssi_mean_converges():
    # Law of large numbers: sample mean within 3*sigma/sqrt(N) of the model mean.
    p = make_profile()
    d = 50.0
    n = 10_000
    samples = sample_rssi_array(p, d, rng.stream(7, "lln"), n)
    tolerance = 3.0 * shadow_sigma(p, d) / math.sqrt(n)
    assert abs(samples.mean() - mean_rssi(p, d)) < tolerance


def test_sample_rssi_variance_grows_with_distance():
    p = make_profile(shadow_sigma0_db=1.0, shadow_sigma_slope_db=2.0)
    near = sample_rssi_array(p, 10.0, rng.stream(3, "near"), 10_000)
    far = sample_rssi_array(p, 100.0, rng.stream(3, "far"), 10_000)
    assert far.var(ddof=1) > near.var(ddof=1)


def test_sample_rssi_deterministic():
    p = make_profile()
    a = sample_rssi_array(p, 40.0, rng.stream(99, "det"), 1000)
    b = sample_rssi_array(p, 40.0, rng.stream(99, "det"), 1000)
    assert np.array_equal(a, b)


# -------------------------------------------------------- estimate_distance

def test_estimate_distance_fixed_point_at_reference():
    p = make_profile()
    assert estimate_distance(p, mean_rssi(p, 1.0)) == pytest.approx(1.0)


def test_estimate_distance_inverse_example():
    p = make_profile()
    assert estimate_distance(p, -52.0) == pytest.approx(10.0)


def test_estimate_distance_with_positive_noise():
    # Closed-form inverse: +3 dB error maps 50 m to 50 * 10^(-3/30).
    p = make_profile()
    expected = 50.0 * 10.0 ** (-3.0 / 30.0)
    got = estimate_distance(p, mean_rssi(p, 50.0) + 3.0)
    assert got == pytest.approx(expected, rel=1e-9)
    assert got == pytest.approx(39.7164117, rel=1e-6)


def test_estimate_distance_rejects_rssi_above_reference():
    p = make_profile()
    with pytest.raises(DomainError):
        estimate_distance(p, mean_rssi(p, 1.0) + 0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.0, max_value=4.0))
def test_estimate_distance_round_trip(log_d):
    p = make_profile()
    d = p.ref_distance_m * 10.0**log_d
    assert estimate_distance(p, mean_rssi(p, d)) == pytest.approx(d, rel=1e-6)


# ------------------------------------------------------ packet_success_prob

def test_success_prob_at_midpoint():
    p = make_profile()
    assert packet_success_prob(p, p.success_midpoint_dbm) == pytest.approx(0.5)


def test_success_prob_saturation():
    p = make_profile(success_slope_per_db=0.5)
    span = 40.0 / p.success_slope_per_db
    assert packet_success_prob(p, p.success_midpoint_dbm + span) == pytest.approx(1.0, abs=1e-9)
    assert packet_success_prob(p, p.success_midpoint_dbm - span) == pytest.approx(0.0, abs=1e-9)


def test_success_prob_logistic_value():
    # Direct evaluation oracle: 1 / (1 + e^-2).
    p = make_profile(success_midpoint_dbm=-88.0, success_slope_per_db=0.5)
    assert packet_success_prob(p, -84.0) == pytest.approx(1.0 / (1.0 + math.exp(-2.0)))
    assert packet_success_prob(p, -84.0) == pytest.approx(0.8808, abs=1e-4)


def test_success_prob_rejects_nonfinite():
    with pytest.raises(DomainError):
        packet_success_prob(make_profile(), math.inf)


# -------------------------------------------------------- end_to_end_success

def test_end_to_end_lossless():
    assert end_to_end_success([1.0, 1.0], 0) == pytest.approx(1.0)


def test_end_to_end_independent_product():
    assert end_to_end_success([0.9, 0.9], 0) == pytest.approx(0.81)


def test_end_to_end_one_retry():
    assert end_to_end_success([0.9, 0.9], 1) == pytest.approx(0.9801)


def test_end_to_end_rejects_empty():
    with pytest.raises(DomainError):
        end_to_end_success([], 1)


def test_end_to_end_rejects_bad_probability():
    with pytest.raises(DomainError):
        end_to_end_success([1.5], 0)


# --------------------------------------------------------- range_at_threshold

def test_calibrated_ranges(calibrated_profiles):
    bts = calibrated_profiles[LinkKind.BTS_UE]
    d2d = calibrated_profiles[LinkKind.D2D]
    assert range_at_threshold(bts, Composition.SINGLE_HOP, 85.0) == pytest.approx(120.0, abs=1.0)
    assert range_at_threshold(d2d, Composition.SINGLE_HOP, 90.0) == pytest.approx(30.0, abs=1.0)
    relayed = range_at_threshold(
        d2d, Composition.TWO_HOP_MIDPOINT_RELAY, 90.0, retries_per_hop=1
    )
    assert relayed == pytest.approx(62.0, abs=2.0)


def test_range_unreachable_threshold():
    # Midpoint far above any achievable RSSI: already below threshold at d0.
    p = make_profile(success_midpoint_dbm=0.0)
    with pytest.raises(NoSolutionError):
        range_at_threshold(p, Composition.SINGLE_HOP, 90.0)


def test_range_bisection_tightness(calibrated_profiles):
    # The crossing is located to better than the 0.01 m bracket.
    d2d = calibrated_profiles[LinkKind.D2D]
    d = range_at_threshold(d2d, Composition.SINGLE_HOP, 90.0)
    assert expected_success(d2d, Composition.SINGLE_HOP, d - 0.01) >= 0.90
    assert expected_success(d2d, Composition.SINGLE_HOP, d + 0.01) <= 0.90


# ----------------------------------------------------------------- calibrate

def test_calibrate_reproduces_all_anchors():
    profiles = calibrate(default_anchors(), fixed={"path_loss_exponent": 3.0})
    for anchor in default_anchors():
        achieved = range_at_threshold(
            profiles[anchor.link_kind], anchor.composition,
            anchor.efficiency_pct, retries_per_hop=1,
        )
        tolerance = 1.0 if anchor.composition is Composition.SINGLE_HOP else 2.0
        assert achieved == pytest.approx(anchor.distance_m, abs=tolerance)


def test_calibrate_single_anchor_closed_form():
    # One anchor, steepness fixed: midpoint must satisfy the logistic exactly,
    # i.e. m = mean_rssi(30) - ln(9)/k.
    anchor = CalibrationAnchor(LinkKind.D2D, Composition.SINGLE_HOP, 30.0, 90.0)
    k = DEFAULT_TEMPLATES[LinkKind.D2D].success_slope_per_db
    profiles = calibrate([anchor], fixed={"success_slope_per_db": k})
    profile = profiles[LinkKind.D2D]
    expected_midpoint = mean_rssi(profile, 30.0) - math.log(9.0) / k
    assert profile.success_midpoint_dbm == pytest.approx(expected_midpoint, abs=1e-6)
    assert packet_success_prob(profile, mean_rssi(profile, 30.0)) == pytest.approx(0.90, abs=1e-6)


def test_calibrate_contradictory_anchors():
    anchors = [
        CalibrationAnchor(LinkKind.D2D, Composition.SINGLE_HOP, 30.0, 90.0),
        CalibrationAnchor(LinkKind.D2D, Composition.SINGLE_HOP, 30.0, 50.0),
    ]
    with pytest.raises(CalibrationError):
        calibrate(anchors)


def test_calibrate_requires_single_hop_anchor():
    anchors = [
        CalibrationAnchor(LinkKind.D2D, Composition.TWO_HOP_MIDPOINT_RELAY, 62.0, 90.0)
    ]
    with pytest.raises(CalibrationError):
        calibrate(anchors)


def test_calibrate_is_deterministic():
    a = calibrate(default_anchors())
    b = calibrate(default_anchors())
    assert a == b


# -------------------------------------------------------------- invariants

@settings(max_examples=100, deadline=None)
@given(
    st.floats(min_value=2.0, max_value=5.0),
    st.floats(min_value=0.0, max_value=4.0),
    st.floats(min_value=0.0, max_value=3.0),
)
def test_monotonicity_invariants(exponent, sigma0, slope):
    p = make_profile(
        path_loss_exponent=exponent,
        shadow_sigma0_db=sigma0,
        shadow_sigma_slope_db=slope,
    )
    distances = [1.0, 2.0, 10.0, 55.0, 300.0, 9000.0]
    means = [mean_rssi(p, d) for d in distances]
    sigmas = [shadow_sigma(p, d) for d in distances]
    assert all(m1 > m2 for m1, m2 in zip(means, means[1:]))
    assert all(s1 <= s2 for s1, s2 in zip(sigmas, sigmas[1:]))


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=-140.0, max_value=0.0), st.floats(min_value=0.1, max_value=5.0))
def test_success_prob_nondecreasing(rssi, delta):
    p = make_profile()
    assert packet_success_prob(p, rssi + delta) >= packet_success_prob(p, rssi)


def test_expected_success_nonincreasing_in_distance(calibrated_profiles):
    d2d = calibrated_profiles[LinkKind.D2D]
    for composition in Composition:
        lo = 2.0 if composition is Composition.TWO_HOP_MIDPOINT_RELAY else 1.0
        distances = np.linspace(lo, 200.0, 150)
        values = [expected_success(d2d, composition, d, 1) for d in distances]
        assert all(a >= b for a, b in zip(values, values[1:]))


def test_profile_validation():
    with pytest.raises(DomainError):
        make_profile(ref_distance_m=0.0)
    with pytest.raises(DomainError):
        make_profile(path_loss_exponent=1.5)
    with pytest.raises(DomainError):
        make_profile(shadow_sigma0_db=-1.0)
    with pytest.raises(DomainError):
        make_profile(success_slope_per_db=0.0)
