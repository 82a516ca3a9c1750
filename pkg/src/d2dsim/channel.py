"""Statistical radio model for the two link classes.

Mean received power follows a log-distance law, the spread around it is
Gaussian with a standard deviation that grows with log-distance, and the
probability that a packet is received correctly is a logistic function of
its RSSI.  A small calibration solver pins the logistic parameters so that
the model reproduces the range anchors it is configured with (cell edge,
direct D2D range, relay-extended D2D range).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import CalibrationError, DomainError, NoSolutionError


class LinkKind(Enum):
    """The two radio classes: the cellular BTS-UE link and the UE-UE D2D link."""

    BTS_UE = "bts_ue"
    D2D = "d2d"


class Composition(Enum):
    """How a logical path is assembled from physical hops."""

    SINGLE_HOP = "single_hop"
    TWO_HOP_MIDPOINT_RELAY = "two_hop_midpoint_relay"


@dataclass(frozen=True)
class RadioProfile:
    """Channel parameters for one link class.

    ``pl0_db`` is the path loss at ``ref_distance_m``; the mean RSSI then
    falls off with 10 * path_loss_exponent dB per decade of distance.
    ``shadow_sigma0_db`` and ``shadow_sigma_slope_db`` give the Gaussian
    spread at the reference distance and its growth per decade.  The
    packet-success logistic is parameterized by its 50% midpoint (dBm) and
    steepness (per dB).
    """

    link_kind: LinkKind
    tx_power_dbm: float
    pl0_db: float
    ref_distance_m: float
    path_loss_exponent: float
    shadow_sigma0_db: float
    shadow_sigma_slope_db: float
    success_midpoint_dbm: float
    success_slope_per_db: float

    def __post_init__(self) -> None:
        if self.ref_distance_m <= 0:
            raise DomainError(f"ref_distance_m must be > 0, got {self.ref_distance_m}")
        if self.path_loss_exponent < 2.0:
            raise DomainError(
                f"path_loss_exponent must be >= 2.0, got {self.path_loss_exponent}"
            )
        if self.shadow_sigma0_db < 0 or self.shadow_sigma_slope_db < 0:
            raise DomainError("shadowing sigma parameters must be >= 0")
        if self.success_slope_per_db <= 0:
            raise DomainError(
                f"success_slope_per_db must be > 0, got {self.success_slope_per_db}"
            )
        if not all(
            math.isfinite(v)
            for v in (
                self.tx_power_dbm,
                self.pl0_db,
                self.success_midpoint_dbm,
            )
        ):
            raise DomainError("profile parameters must be finite")


@dataclass(frozen=True)
class RssiSample:
    """One received-power measurement, with ground truth kept for bookkeeping."""

    value_dbm: float
    link_kind: LinkKind
    distance_m: float


@dataclass(frozen=True)
class CalibrationAnchor:
    """A (distance, efficiency) point the calibrated model must reproduce."""

    link_kind: LinkKind
    composition: Composition
    distance_m: float
    efficiency_pct: float

    def __post_init__(self) -> None:
        if self.distance_m <= 0:
            raise DomainError(f"anchor distance must be > 0, got {self.distance_m}")
        if not 0 < self.efficiency_pct <= 100:
            raise DomainError(
                f"anchor efficiency must be in (0, 100], got {self.efficiency_pct}"
            )


# Anchor ranges are verified to these absolute tolerances (meters).
RANGE_TOLERANCE_M = {
    Composition.SINGLE_HOP: 1.0,
    Composition.TWO_HOP_MIDPOINT_RELAY: 2.0,
}

# Template parameters per link class: a longer-range coordinator radio and a
# low-power 2.4 GHz D2D radio.  The logistic midpoint below is a placeholder
# until calibrate() pins it.  The shadowing spread is kept well under a dB so
# that the per-packet efficiency observed over many shadowing draws stays
# within a fraction of a percentage point of the mean-RSSI prediction at the
# anchor points; larger spreads are configurable but drive the two
# predictions apart.
DEFAULT_TEMPLATES = {
    LinkKind.BTS_UE: RadioProfile(
        link_kind=LinkKind.BTS_UE,
        tx_power_dbm=18.0,
        pl0_db=40.0,
        ref_distance_m=1.0,
        path_loss_exponent=3.0,
        shadow_sigma0_db=0.30,
        shadow_sigma_slope_db=0.20,
        success_midpoint_dbm=-90.0,
        success_slope_per_db=0.30,
    ),
    LinkKind.D2D: RadioProfile(
        link_kind=LinkKind.D2D,
        tx_power_dbm=1.0,
        pl0_db=40.0,
        ref_distance_m=1.0,
        path_loss_exponent=3.0,
        shadow_sigma0_db=0.06,
        shadow_sigma_slope_db=0.02,
        success_midpoint_dbm=-84.0,
        success_slope_per_db=2.0,
    ),
}


def default_anchors() -> list[CalibrationAnchor]:
    """The built-in range/efficiency anchors the default model is pinned to."""
    return [
        CalibrationAnchor(LinkKind.BTS_UE, Composition.SINGLE_HOP, 120.0, 85.0),
        CalibrationAnchor(LinkKind.D2D, Composition.SINGLE_HOP, 30.0, 90.0),
        CalibrationAnchor(
            LinkKind.D2D, Composition.TWO_HOP_MIDPOINT_RELAY, 62.0, 90.0
        ),
    ]


def ideal_profile(link_kind: LinkKind = LinkKind.D2D) -> RadioProfile:
    """A zero-variance, always-succeeds profile for protocol/debug runs."""
    return replace(
        DEFAULT_TEMPLATES[link_kind],
        shadow_sigma0_db=0.0,
        shadow_sigma_slope_db=0.0,
        success_midpoint_dbm=-1.0e4,
        success_slope_per_db=1.0,
    )


def _check_distance(profile: RadioProfile, distance_m: float) -> None:
    if not math.isfinite(distance_m) or not (distance_m >= profile.ref_distance_m):
        raise DomainError(
            f"distance {distance_m} m must be finite and at least the "
            f"reference distance {profile.ref_distance_m} m"
        )


def mean_rssi(profile: RadioProfile, distance_m: float) -> float:
    """Mean received power (dBm) at a distance, log-distance path loss."""
    _check_distance(profile, distance_m)
    return (
        profile.tx_power_dbm
        - profile.pl0_db
        - 10.0
        * profile.path_loss_exponent
        * math.log10(distance_m / profile.ref_distance_m)
    )


def shadow_sigma(profile: RadioProfile, distance_m: float) -> float:
    """Shadowing standard deviation (dB) at a distance; grows per decade."""
    _check_distance(profile, distance_m)
    return profile.shadow_sigma0_db + profile.shadow_sigma_slope_db * math.log10(
        distance_m / profile.ref_distance_m
    )


def sample_rssi(
    profile: RadioProfile, distance_m: float, rng: np.random.Generator
) -> RssiSample:
    """Draw one RSSI sample: mean path loss plus a Gaussian shadowing term."""
    mu = mean_rssi(profile, distance_m)
    sigma = shadow_sigma(profile, distance_m)
    value = mu + sigma * rng.standard_normal()
    return RssiSample(value_dbm=value, link_kind=profile.link_kind, distance_m=distance_m)


def sample_rssi_array(
    profile: RadioProfile, distance_m: float, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Vectorized sample_rssi: ``size`` independent draws at one distance."""
    mu = mean_rssi(profile, distance_m)
    sigma = shadow_sigma(profile, distance_m)
    return mu + sigma * rng.standard_normal(size)


def estimate_distance(profile: RadioProfile, rssi_dbm: float) -> float:
    """Invert the mean path-loss law to estimate distance from an RSSI."""
    rssi_at_ref = profile.tx_power_dbm - profile.pl0_db
    if rssi_dbm > rssi_at_ref:
        raise DomainError(
            f"RSSI {rssi_dbm} dBm exceeds the value at the reference distance "
            f"({rssi_at_ref} dBm); no distance >= {profile.ref_distance_m} m matches"
        )
    exponent = (rssi_at_ref - rssi_dbm) / (10.0 * profile.path_loss_exponent)
    return profile.ref_distance_m * 10.0**exponent


def packet_success_prob(profile: RadioProfile, rssi_dbm: float) -> float:
    """Probability that a packet at this RSSI is received correctly."""
    if not math.isfinite(rssi_dbm):
        raise DomainError(f"rssi must be finite, got {rssi_dbm}")
    x = profile.success_slope_per_db * (rssi_dbm - profile.success_midpoint_dbm)
    # Numerically stable logistic.
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def packet_success_prob_array(profile: RadioProfile, rssi_dbm: np.ndarray) -> np.ndarray:
    """Vectorized packet_success_prob."""
    x = profile.success_slope_per_db * (np.asarray(rssi_dbm) - profile.success_midpoint_dbm)
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def rssi_at_success(profile: RadioProfile, probability: float) -> float:
    """Invert the success logistic: RSSI at which success equals ``probability``."""
    if not 0.0 < probability < 1.0:
        raise DomainError(f"probability must be in (0, 1), got {probability}")
    return profile.success_midpoint_dbm + math.log(
        probability / (1.0 - probability)
    ) / profile.success_slope_per_db


def end_to_end_success(hop_probs: list[float], retries_per_hop: int) -> float:
    """Success over a chain of hops with per-hop ACK and retransmission.

    Each hop delivers with probability 1-(1-p)^(retries+1); hops are
    independent, so the chain multiplies.
    """
    if not hop_probs:
        raise DomainError("hop list must not be empty")
    if retries_per_hop < 0:
        raise DomainError(f"retries_per_hop must be >= 0, got {retries_per_hop}")
    total = 1.0
    for p in hop_probs:
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"hop probability {p} outside [0, 1]")
        total *= 1.0 - (1.0 - p) ** (retries_per_hop + 1)
    return total


def expected_success(
    profile: RadioProfile,
    composition: Composition,
    distance_m: float,
    retries_per_hop: int = 1,
) -> float:
    """Expected end-to-end success at a distance, on the mean-RSSI curve.

    Single hop is the raw per-packet success (one attempt, no retries, as
    in a link packet trial); the two-hop composition places the relay at
    the midpoint and applies the per-hop retry law.
    """
    if composition is Composition.SINGLE_HOP:
        return packet_success_prob(profile, mean_rssi(profile, distance_m))
    p_hop = packet_success_prob(profile, mean_rssi(profile, distance_m / 2.0))
    return end_to_end_success([p_hop, p_hop], retries_per_hop)


def range_at_threshold(
    profile: RadioProfile,
    composition: Composition,
    threshold_pct: float,
    retries_per_hop: int = 1,
) -> float:
    """Largest distance at which expected success still meets the threshold.

    Bisection on the (monotone decreasing) expected-success curve until the
    bracket is narrower than 0.01 m.
    """
    if not 0.0 < threshold_pct < 100.0:
        raise DomainError(f"threshold must be in (0, 100), got {threshold_pct}")
    target = threshold_pct / 100.0
    d_min = profile.ref_distance_m
    if composition is Composition.TWO_HOP_MIDPOINT_RELAY:
        d_min = 2.0 * profile.ref_distance_m

    f = lambda d: expected_success(profile, composition, d, retries_per_hop)
    if f(d_min) < target:
        raise NoSolutionError(
            f"expected success at the minimum distance {d_min} m is already "
            f"below {threshold_pct}%"
        )
    lo, hi = d_min, 2.0 * d_min
    for _ in range(64):
        if f(hi) < target:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise NoSolutionError(
            f"threshold {threshold_pct}% is never crossed up to {hi} m"
        )
    while hi - lo >= 0.01:
        mid = 0.5 * (lo + hi)
        if f(mid) >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _bisect_midpoint(
    template: RadioProfile,
    slope: float,
    anchor: CalibrationAnchor,
    retries_per_hop: int,
    iteration_cap: int = 200,
) -> float:
    """Inner solve: midpoint such that the anchor efficiency is met exactly.

    Expected success is strictly decreasing in the midpoint, so plain
    bisection converges; the bracket spans every plausible receive level.
    """
    target = anchor.efficiency_pct / 100.0
    mu = mean_rssi(template, anchor.distance_m)
    # Wide enough that the logistic saturates past the target at both ends,
    # whatever the trial steepness.
    logit_span = abs(math.log(target / (1.0 - target))) if target < 1.0 else 50.0
    half_width = max(120.0, 2.0 * (logit_span + 30.0) / slope)
    lo, hi = mu - half_width, mu + half_width

    def achieved(m: float) -> float:
        p = replace(template, success_midpoint_dbm=m, success_slope_per_db=slope)
        return expected_success(p, anchor.composition, anchor.distance_m, retries_per_hop)

    if achieved(lo) < target or achieved(hi) > target:
        raise CalibrationError(
            f"anchor {anchor} cannot be met by any midpoint with slope {slope}"
        )
    for _ in range(iteration_cap):
        mid = 0.5 * (lo + hi)
        if achieved(mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    return 0.5 * (lo + hi)


def _calibrate_class(
    template: RadioProfile,
    anchors: list[CalibrationAnchor],
    slope_fixed: bool,
    retries_per_hop: int,
    iteration_cap: int = 200,
    efficiency_tol: float = 1e-3,
) -> RadioProfile:
    single = [a for a in anchors if a.composition is Composition.SINGLE_HOP]
    if not single:
        raise CalibrationError(
            f"link class {template.link_kind.value} has no single-hop anchor"
        )
    primary = single[0]
    rest = [a for a in anchors if a is not primary]

    if slope_fixed or not rest:
        slope = template.success_slope_per_db
        midpoint = _bisect_midpoint(template, slope, primary, retries_per_hop)
    else:
        # Outer solve: steepness against the second anchor, with the midpoint
        # re-pinned to the primary anchor at every trial steepness.
        secondary = rest[0]
        target = secondary.efficiency_pct / 100.0

        def residual(k: float) -> float:
            m = _bisect_midpoint(template, k, primary, retries_per_hop)
            p = replace(template, success_midpoint_dbm=m, success_slope_per_db=k)
            return (
                expected_success(p, secondary.composition, secondary.distance_m, retries_per_hop)
                - target
            )

        lo, hi = 1e-3, 50.0
        r_lo, r_hi = residual(lo), residual(hi)
        if r_lo == 0.0:
            slope = lo
        elif r_hi == 0.0:
            slope = hi
        elif r_lo * r_hi > 0:
            raise CalibrationError(
                f"anchor {secondary} is inconsistent with anchor {primary}: "
                f"no logistic steepness satisfies both"
            )
        else:
            for _ in range(iteration_cap):
                mid = 0.5 * (lo + hi)
                r_mid = residual(mid)
                if r_mid == 0.0:
                    lo = hi = mid
                    break
                if r_lo * r_mid < 0:
                    hi, r_hi = mid, r_mid
                else:
                    lo, r_lo = mid, r_mid
                if hi - lo < 1e-10:
                    break
            slope = 0.5 * (lo + hi)
        midpoint = _bisect_midpoint(template, slope, primary, retries_per_hop)

    profile = replace(
        template, success_midpoint_dbm=midpoint, success_slope_per_db=slope
    )

    # Every anchor of the class must be reproduced, in efficiency and range.
    for anchor in anchors:
        achieved_eff = expected_success(
            profile, anchor.composition, anchor.distance_m, retries_per_hop
        )
        if abs(achieved_eff - anchor.efficiency_pct / 100.0) > efficiency_tol:
            raise CalibrationError(
                f"calibration does not satisfy anchor {anchor}: achieved "
                f"{100 * achieved_eff:.3f}% at {anchor.distance_m} m"
            )
        achieved_range = range_at_threshold(
            profile, anchor.composition, anchor.efficiency_pct, retries_per_hop
        )
        if abs(achieved_range - anchor.distance_m) > RANGE_TOLERANCE_M[anchor.composition]:
            raise CalibrationError(
                f"calibration does not satisfy anchor {anchor}: range "
                f"{achieved_range:.2f} m"
            )
    return profile


def calibrate(
    anchors: list[CalibrationAnchor],
    fixed: dict[str, float] | None = None,
    retries_per_hop: int = 1,
    templates: dict[LinkKind, RadioProfile] | None = None,
) -> dict[LinkKind, RadioProfile]:
    """Solve logistic parameters per link class so every anchor is reproduced.

    ``fixed`` overrides template parameters by name for all classes (e.g.
    ``{"path_loss_exponent": 2.7}``); fixing ``success_slope_per_db`` keeps
    the steepness at the given value and solves the midpoint only.  Classes
    with a single anchor keep the template steepness.  The solve is pure
    bisection, so the result is deterministic.
    """
    if not anchors:
        raise CalibrationError("no anchors given")
    fixed = dict(fixed or {})
    slope_fixed = "success_slope_per_db" in fixed
    templates = templates or DEFAULT_TEMPLATES

    by_class: dict[LinkKind, list[CalibrationAnchor]] = {}
    for anchor in anchors:
        by_class.setdefault(anchor.link_kind, []).append(anchor)

    profiles: dict[LinkKind, RadioProfile] = {}
    for kind in sorted(by_class, key=lambda k: k.value):
        template = replace(templates[kind], **fixed)
        profiles[kind] = _calibrate_class(
            template, by_class[kind], slope_fixed, retries_per_hop
        )
    return profiles
