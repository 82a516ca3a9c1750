import math

import numpy as np
import pytest

from conftest import build_nodes, build_scenario
from oracles import brute_force_relay, quadrature_efficiency, quadrature_two_hop_efficiency

from d2dsim.channel import (
    Composition,
    LinkKind,
    mean_rssi,
)
from d2dsim.engine import (
    EventQueue,
    Scenario,
    airtime,
    coverage_area_km2,
    efficiency,
    run_range_sweep,
    run_scenario,
)
from d2dsim.errors import CalibrationError, DomainError, ValidationError
from d2dsim.protocol import (
    LinkReport,
    Mode,
    NodeKind,
    NodeRecord,
    Thresholds,
    Timer,
    bts_decide_mode,
    derive_thresholds,
    link_key,
)


# ------------------------------------------------------------------- airtime

def test_airtime_default_rate():
    assert airtime(64, 8) == pytest.approx(0.01)


def test_airtime_overhead_only():
    assert airtime(0, 8) == pytest.approx(64.0 / 57_600.0)
    assert airtime(0, 8) == pytest.approx(1.111e-3, abs=1e-6)


def test_airtime_small_packet():
    # 320 bits / 57600 baud.
    assert airtime(32, 8) == pytest.approx(320.0 / 57_600.0)
    assert airtime(32, 8) == pytest.approx(5.556e-3, abs=1e-6)


def test_airtime_rejects_bad_rate():
    with pytest.raises(DomainError):
        airtime(64, 8, 0.0)
    with pytest.raises(DomainError):
        airtime(64, 8, -1.0)


# ---------------------------------------------------------------- efficiency

def test_efficiency_examples():
    assert efficiency(50, 50) == pytest.approx(100.0)
    assert efficiency(45, 50) == pytest.approx(90.0)
    assert efficiency(0, 50) == pytest.approx(0.0)


def test_efficiency_rejects_zero_sent():
    with pytest.raises(DomainError):
        efficiency(0, 0)


def test_efficiency_rejects_excess_received():
    with pytest.raises(DomainError):
        efficiency(51, 50)


# ---------------------------------------------------------------- coverage

def test_coverage_area_cell_radius():
    assert 0.0447 <= coverage_area_km2(120.0) <= 0.0457


def test_coverage_area_zero():
    assert coverage_area_km2(0.0) == 0.0


def test_coverage_area_kilometer():
    assert coverage_area_km2(1000.0) == pytest.approx(math.pi, rel=1e-6)


def test_coverage_area_rejects_negative():
    with pytest.raises(DomainError):
        coverage_area_km2(-1.0)


# -------------------------------------------------------------- event queue

def test_event_queue_orders_by_time_then_ordinal():
    q = EventQueue()
    q.schedule(2.0, "b", Timer("x"))
    q.schedule(1.0, "a", Timer("y"))
    q.schedule(1.0, "c", Timer("z"))
    order = [q.pop() for _ in range(3)]
    assert [e.node_id for e in order] == ["a", "c", "b"]
    assert order[0].ordinal < order[1].ordinal  # tie at t=1.0 broken by ordinal


# ----------------------------------------------------------- run_range_sweep

def sweep_scenario(profiles, seed=42, **trial_kwargs):
    from d2dsim.engine import TrialConfig

    return build_scenario(
        profiles, [("a", 10.0, 0.0), ("b", 20.0, 0.0)], [("a", "b")],
        seed=seed, trial=TrialConfig(**trial_kwargs) if trial_kwargs else TrialConfig(),
    )


def test_sweep_ideal_channel_all_delivered(ideal_profiles):
    scenario = sweep_scenario(ideal_profiles)
    stats = run_range_sweep(LinkKind.D2D, [5.0, 50.0, 500.0], scenario)
    assert [t.efficiency_pct for t in stats] == [100.0, 100.0, 100.0]
    for t in stats:
        assert t.sent == 50 and t.received == 50
        assert np.all(t.rssi_samples == mean_rssi(ideal_profiles[LinkKind.D2D], t.distance_m))


def test_sweep_preserves_input_order(calibrated_profiles):
    scenario = sweep_scenario(calibrated_profiles)
    distances = [90.0, 10.0, 40.0]
    stats = run_range_sweep(LinkKind.BTS_UE, distances, scenario)
    assert [t.distance_m for t in stats] == distances


def test_sweep_deterministic(calibrated_profiles):
    scenario = sweep_scenario(calibrated_profiles)
    a = run_range_sweep(LinkKind.D2D, [20.0, 30.0], scenario)
    b = run_range_sweep(LinkKind.D2D, [20.0, 30.0], scenario)
    for ta, tb in zip(a, b):
        assert ta.received == tb.received
        assert np.array_equal(ta.rssi_samples, tb.rssi_samples)


def test_sweep_rejects_invalid_distance(calibrated_profiles):
    scenario = sweep_scenario(calibrated_profiles)
    with pytest.raises(DomainError, match=r"distances\[1\]"):
        run_range_sweep(LinkKind.D2D, [10.0, 0.5], scenario)
    with pytest.raises(DomainError, match=r"distances\[0\]"):
        run_range_sweep(
            LinkKind.D2D, [1.5], scenario, composition=Composition.TWO_HOP_MIDPOINT_RELAY
        )


def test_sweep_requires_profiles():
    scenario = build_scenario(None, [("a", 10.0, 0.0), ("b", 20.0, 0.0)], [])
    with pytest.raises(CalibrationError, match="calibrate"):
        run_range_sweep(LinkKind.D2D, [10.0], scenario)


def test_sweep_matches_quadrature_oracle(calibrated_profiles):
    # Empirical efficiency against 1e5-point numeric integration of the
    # success curve over the shadowing distribution, within 1 pct-pt.
    scenario = sweep_scenario(calibrated_profiles)
    for link, distances in (
        (LinkKind.BTS_UE, [60.0, 110.0, 120.0, 130.0]),
        (LinkKind.D2D, [20.0, 29.0, 30.0, 31.0]),
    ):
        stats = run_range_sweep(link, distances, scenario, packets=50_000)
        for t in stats:
            expected = 100.0 * quadrature_efficiency(calibrated_profiles[link], t.distance_m)
            assert t.efficiency_pct == pytest.approx(expected, abs=1.0)


def test_two_hop_sweep_matches_quadrature_oracle(calibrated_profiles):
    scenario = sweep_scenario(calibrated_profiles)
    stats = run_range_sweep(
        LinkKind.D2D, [58.0, 62.0, 66.0], scenario,
        composition=Composition.TWO_HOP_MIDPOINT_RELAY, packets=50_000,
    )
    for t in stats:
        expected = 100.0 * quadrature_two_hop_efficiency(
            calibrated_profiles[LinkKind.D2D], t.distance_m, retries_per_hop=1
        )
        assert t.efficiency_pct == pytest.approx(expected, abs=1.0)


def test_sweep_rssi_statistics_shape(calibrated_profiles):
    scenario = sweep_scenario(calibrated_profiles)
    stats = run_range_sweep(
        LinkKind.BTS_UE, [20.0, 50.0, 80.0, 110.0], scenario, packets=10_000
    )
    means = [float(t.rssi_samples.mean()) for t in stats]
    variances = [float(t.rssi_samples.var(ddof=1)) for t in stats]
    assert all(a > b for a, b in zip(means, means[1:]))
    assert all(a <= b for a, b in zip(variances, variances[1:]))


# -------------------------------------------------------------- run_scenario

def analytic_reports(scenario: Scenario) -> dict:
    """Oracle report table: mean-model RSSI for every link."""
    profiles = scenario.profiles
    table = {}
    ids = sorted(n.id for n in scenario.nodes)
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            kind = LinkKind.BTS_UE if "bts" in (a, b) else LinkKind.D2D
            key = link_key(a, b)
            table[key] = LinkReport(
                a=key[0], b=key[1],
                rssi_ab_dbm=mean_rssi(profiles[kind], scenario.distance(a, b)),
                sample_count=10, freshness=0.0,
            )
    return table


def oracle_decision(scenario: Scenario, pair) -> Mode:
    thresholds = derive_thresholds(
        scenario.profiles, retries_per_hop=scenario.trial.retries_per_hop
    )
    reports = analytic_reports(scenario)
    candidates = {
        n.id for n in scenario.ues if n.id not in {p for q in scenario.pairs for p in q}
    }
    return bts_decide_mode(pair, reports, thresholds, candidates=candidates)


def test_scenario_direct_pair(calibrated_profiles):
    scenario = build_scenario(
        calibrated_profiles, [("a", 20.0, 0.0), ("b", 30.0, 0.0)], [("a", "b")]
    )
    report = run_scenario(scenario)
    oracle = oracle_decision(scenario, ("a", "b"))
    assert oracle.mode is Mode.D2D_DIRECT
    assert report.decisions[("a", "b")].mode is Mode.D2D_DIRECT


def test_scenario_relayed_pair(calibrated_profiles):
    scenario = build_scenario(
        calibrated_profiles,
        [("a", -30.0, 40.0), ("b", 30.0, 40.0), ("r1", 0.0, 41.0)],
        [("a", "b")],
    )
    report = run_scenario(scenario)
    oracle = oracle_decision(scenario, ("a", "b"))
    assert oracle.mode is Mode.D2D_RELAYED and oracle.relay == "r1"
    decision = report.decisions[("a", "b")]
    assert decision.mode is Mode.D2D_RELAYED
    assert decision.relay == "r1"
    # Relayed transfer actually moves data.
    trial = report.trials[("a", "b")]
    assert trial.sent == 50
    assert trial.received >= 40


def test_scenario_cellular_pair(calibrated_profiles):
    x = 50.0 * math.cos(math.asin(30.0 / 50.0))
    scenario = build_scenario(
        calibrated_profiles, [("a", -30.0, x), ("b", 30.0, x)], [("a", "b")]
    )
    report = run_scenario(scenario)
    oracle = oracle_decision(scenario, ("a", "b"))
    assert oracle.mode is Mode.CELLULAR_FALLBACK
    assert report.decisions[("a", "b")].mode is Mode.CELLULAR_FALLBACK


def test_scenario_relay_selection_matches_brute_force(calibrated_profiles):
    scenario = build_scenario(
        calibrated_profiles,
        [("a", -30.0, 40.0), ("b", 30.0, 40.0), ("r1", 0.0, 41.0), ("r2", 5.0, 44.0)],
        [("a", "b")],
    )
    report = run_scenario(scenario)
    thresholds = derive_thresholds(scenario.profiles, retries_per_hop=1)
    reports = analytic_reports(scenario)
    want = brute_force_relay(("a", "b"), {"r1", "r2"}, reports, thresholds)
    assert report.decisions[("a", "b")].relay == want


def test_scenario_ideal_channel_liveness(ideal_profiles):
    # With success forced to 1, every data packet is delivered and acked.
    scenario = build_scenario(
        ideal_profiles,
        [("a", -30.0, 40.0), ("b", 30.0, 40.0), ("r1", 0.0, 41.0)],
        [("a", "b")],
    )
    report = run_scenario(scenario)
    trial = report.trials[("a", "b")]
    assert trial.sent == 50 and trial.received == 50
    assert report.protocol_violations == 0
    from d2dsim.protocol import MsgKind

    assert report.messages_delivered[MsgKind.DATA] == report.messages_emitted[MsgKind.DATA]
    # Every delivered data packet is acknowledged on its hop.
    assert report.messages_emitted[MsgKind.DATA_ACK] == report.messages_delivered[MsgKind.DATA]


def test_scenario_cellular_liveness_ideal_channel(ideal_profiles):
    # Force fallback with explicit thresholds; the BTS forward path must
    # deliver and ack every packet on a lossless channel.
    thresholds = Thresholds(
        direct_rssi_dbm=0.0, relay_hop_rssi_dbm=0.0, cell_rssi_dbm=-500.0
    )
    scenario = build_scenario(
        ideal_profiles, [("a", 20.0, 0.0), ("b", 30.0, 0.0)], [("a", "b")],
        thresholds=thresholds,
    )
    report = run_scenario(scenario)
    assert report.decisions[("a", "b")].mode is Mode.CELLULAR_FALLBACK
    trial = report.trials[("a", "b")]
    assert trial.sent == 50 and trial.received == 50
    assert report.protocol_violations == 0
    assert report.relay_counters["bts"] == (50, 50)


def test_scenario_conservation(calibrated_profiles):
    scenario = build_scenario(
        calibrated_profiles,
        [("a", -30.0, 40.0), ("b", 30.0, 40.0), ("r1", 0.0, 41.0)],
        [("a", "b")],
    )
    report = run_scenario(scenario)
    for pair, trial in report.trials.items():
        assert trial.received <= trial.sent
    for node, (addressed, forwarded) in report.relay_counters.items():
        assert forwarded <= addressed


def test_scenario_reproducible(calibrated_profiles):
    scenario = build_scenario(
        calibrated_profiles,
        [("a", -30.0, 40.0), ("b", 30.0, 40.0), ("r1", 0.0, 41.0)],
        [("a", "b")],
    )
    r1 = run_scenario(scenario)
    r2 = run_scenario(scenario)
    assert r1.to_dict() == r2.to_dict()
    for pair in r1.trials:
        assert np.array_equal(r1.trials[pair].rssi_samples, r2.trials[pair].rssi_samples)


def test_scenario_every_pair_resolved(calibrated_profiles):
    x = 50.0 * math.cos(math.asin(30.0 / 50.0))
    scenario = build_scenario(
        calibrated_profiles,
        [("a", 20.0, 0.0), ("b", 30.0, 0.0), ("c", -30.0, x), ("d", 30.0, x + 60.0)],
        [("a", "b"), ("c", "d")],
    )
    report = run_scenario(scenario)
    for pair in scenario.pairs:
        assert pair in report.decisions or pair in report.outcomes


def test_scenario_energy_accounting(calibrated_profiles):
    scenario = build_scenario(
        calibrated_profiles, [("a", 20.0, 0.0), ("b", 30.0, 0.0)], [("a", "b")]
    )
    report = run_scenario(scenario)
    power = scenario.power
    for node_id, result in report.energy.items():
        assert 0.0 <= result.time_d2d_on_s <= scenario.horizon_s
        assert result.consumed_wh == pytest.approx(
            (
                power.model.draw_d2d_on_w * result.time_d2d_on_s
                + power.model.draw_d2d_off_w * (scenario.horizon_s - result.time_d2d_on_s)
            )
            / 3600.0,
            rel=1e-9,
        )
    # The direct pair keeps its D2D radio on from assignment to horizon.
    assert report.energy["a"].time_d2d_on_s > 100.0
    assert report.energy["bts"].time_d2d_on_s == 0.0


def test_scenario_trace_rendering(calibrated_profiles):
    scenario = build_scenario(
        calibrated_profiles, [("a", 20.0, 0.0), ("b", 30.0, 0.0)], [("a", "b")]
    )
    report = run_scenario(scenario, collect_trace=True)
    assert report.trace
    first = report.trace[0].split()
    assert len(first) == 4
    float(first[0])  # leading timestamp parses


# ---------------------------------------------------------------- validation

def test_scenario_rejects_duplicate_ids():
    nodes = build_nodes(("a", 10.0, 0.0), ("a", 20.0, 0.0))
    with pytest.raises(ValidationError, match="duplicate"):
        Scenario(nodes=nodes)


def test_scenario_requires_one_bts():
    nodes = [NodeRecord(id="a", kind=NodeKind.UE, position=(1.0, 0.0))]
    with pytest.raises(ValidationError, match="BTS"):
        Scenario(nodes=nodes)
    two = build_nodes(("a", 10.0, 0.0))
    two.append(NodeRecord(id="bts2", kind=NodeKind.BTS, position=(5.0, 5.0)))
    with pytest.raises(ValidationError, match="BTS"):
        Scenario(nodes=two)


def test_scenario_rejects_unknown_pair_endpoint():
    nodes = build_nodes(("a", 10.0, 0.0), ("b", 20.0, 0.0))
    with pytest.raises(ValidationError, match="not a UE"):
        Scenario(nodes=nodes, pairs=[("a", "zz")])


def test_scenario_rejects_sub_reference_spacing(calibrated_profiles):
    scenario = build_scenario(
        calibrated_profiles, [("a", 10.0, 0.0), ("b", 10.5, 0.0)], [("a", "b")]
    )
    with pytest.raises(ValidationError, match="reference distance"):
        run_scenario(scenario)
