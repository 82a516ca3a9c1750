"""Desk-scale simulator of BTS-coordinated device-to-device communication."""

from .channel import (
    CalibrationAnchor,
    Composition,
    LinkKind,
    RadioProfile,
    RssiSample,
    calibrate,
    default_anchors,
    end_to_end_success,
    estimate_distance,
    expected_success,
    ideal_profile,
    mean_rssi,
    packet_success_prob,
    range_at_threshold,
    sample_rssi,
    shadow_sigma,
)
from .energy import (
    Battery,
    PowerModel,
    PowerState,
    PowerTrace,
    consume,
    duty_cycle_lifetime,
    lifetime_hours,
)
from .engine import (
    Scenario,
    ScenarioReport,
    TrialConfig,
    TrialStats,
    airtime,
    coverage_area_km2,
    efficiency,
    run_range_sweep,
    run_scenario,
)
from .errors import (
    CalibrationError,
    DomainError,
    InsufficientDataError,
    NoSolutionError,
    PairUnreachableError,
    SimError,
    ValidationError,
)
from .protocol import (
    LinkReport,
    Message,
    Mode,
    ModeDecision,
    MsgKind,
    NodeKind,
    NodeRecord,
    Thresholds,
    UeState,
    bts_decide_mode,
    d2d_feasible,
    derive_thresholds,
    handle_ue_event,
    select_relay,
)

__version__ = "0.1.0"
