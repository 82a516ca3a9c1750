"""Discrete-event simulation core and the packet-trial experiment harnesses.

One run owns a single event queue dispatched in (time, ordinal) order; all
randomness flows through named substreams of the scenario seed, so repeated
runs are bit-identical.  The module also provides the direct Monte-Carlo
range sweep that mirrors the measurement methodology (a fixed number of
packets per distance, RSSI recorded per packet).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from collections import Counter

import numpy as np

from . import rng
from .channel import (
    CalibrationAnchor,
    Composition,
    LinkKind,
    RadioProfile,
    mean_rssi,
    packet_success_prob,
    packet_success_prob_array,
    shadow_sigma,
)
from .energy import Battery, PowerModel, PowerState, PowerTrace, consume
from .errors import CalibrationError, DomainError, ValidationError
from .protocol import (
    BROADCAST,
    CONTROL_KINDS,
    BtsMachine,
    Delivery,
    MachineConfig,
    Message,
    ModeDecision,
    NodeKind,
    NodeRecord,
    Thresholds,
    Timer,
    TimerRequest,
    UeMachine,
    derive_thresholds,
    trace_line,
)

DEFAULT_DATA_RATE_BAUD = 57_600.0
# Fixed handling delay added to every transmission; the source gives no
# timing figures, so pacing constants are simulator-defined and documented.
TURNAROUND_S = 0.010
DATA_START_DELAY_S = 0.1


def airtime(
    payload_bytes: int,
    overhead_bytes: int = 8,
    data_rate_baud: float = DEFAULT_DATA_RATE_BAUD,
) -> float:
    """Transmission time of one packet; 1 baud carries 1 bit here."""
    if data_rate_baud <= 0:
        raise DomainError(f"data rate must be > 0, got {data_rate_baud}")
    if payload_bytes < 0 or overhead_bytes < 0:
        raise DomainError("byte counts must be >= 0")
    return (payload_bytes + overhead_bytes) * 8.0 / data_rate_baud


def efficiency(received: int, sent: int) -> float:
    """Delivered share of a packet trial, in percent."""
    if sent < 1:
        raise DomainError(f"sent must be >= 1, got {sent}")
    if not 0 <= received <= sent:
        raise DomainError(f"received {received} outside [0, {sent}]")
    return 100.0 * received / sent


def coverage_area_km2(radius_m: float) -> float:
    """Disk area covered by a given radius, in square kilometers."""
    if radius_m < 0:
        raise DomainError(f"radius must be >= 0, got {radius_m}")
    return math.pi * radius_m * radius_m * 1e-6


@dataclass
class TrialStats:
    """Outcome of one packet trial at one distance."""

    distance_m: float
    sent: int
    received: int
    rssi_samples: np.ndarray
    efficiency_pct: float

    @classmethod
    def make(
        cls, distance_m: float, sent: int, received: int, rssi_samples: np.ndarray
    ) -> "TrialStats":
        eff = efficiency(received, sent) if sent >= 1 else 0.0
        return cls(distance_m, sent, received, np.asarray(rssi_samples, float), eff)


@dataclass(frozen=True)
class TrialConfig:
    packet_payload_bytes: int = 64
    overhead_bytes: int = 8
    packets_per_trial: int = 50
    retries_per_hop: int = 1
    data_rate_baud: float = DEFAULT_DATA_RATE_BAUD

    def __post_init__(self) -> None:
        if self.packets_per_trial < 1:
            raise ValidationError("packets_per_trial must be >= 1")
        if self.retries_per_hop < 0:
            raise ValidationError("retries_per_hop must be >= 0")
        if self.data_rate_baud <= 0:
            raise ValidationError("data_rate_baud must be > 0")
        if self.packet_payload_bytes < 0 or self.overhead_bytes < 0:
            raise ValidationError("byte counts must be >= 0")


@dataclass(frozen=True)
class ThresholdTargets:
    """Efficiency targets from which RSSI thresholds are derived at run time."""

    direct_eff_pct: float = 90.0
    cell_eff_pct: float = 85.0
    beacon_min_samples: int = 5


@dataclass(frozen=True)
class PowerConfig:
    model: PowerModel = field(default_factory=PowerModel)
    battery: Battery = field(default_factory=Battery)
    duty_fractions: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class SweepConfig:
    links: tuple[LinkKind, ...] = (LinkKind.BTS_UE,)
    compositions: tuple[Composition, ...] = (Composition.SINGLE_HOP,)
    distances: tuple[float, ...] = tuple(float(d) for d in range(10, 151, 10))
    packets_per_point: int | None = None


@dataclass
class Scenario:
    """Everything one experiment needs: nodes, channel, thresholds, trial plan."""

    nodes: list[NodeRecord]
    pairs: list[tuple[str, str]] = field(default_factory=list)
    profiles: dict[LinkKind, RadioProfile] | None = None
    thresholds: Thresholds | None = None
    threshold_targets: ThresholdTargets = field(default_factory=ThresholdTargets)
    trial: TrialConfig = field(default_factory=TrialConfig)
    power: PowerConfig = field(default_factory=PowerConfig)
    anchors: list[CalibrationAnchor] = field(default_factory=list)
    sweep: SweepConfig | None = None
    seed: int = 42
    horizon_s: float = 120.0

    def __post_init__(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate node ids: {dupes}")
        bts = [n for n in self.nodes if n.kind is NodeKind.BTS]
        if len(bts) != 1:
            raise ValidationError(f"exactly one BTS required, found {len(bts)}")
        ues = {n.id for n in self.nodes if n.kind is NodeKind.UE}
        for pair in self.pairs:
            a, b = pair
            if a == b:
                raise ValidationError(f"pair {pair} has identical endpoints")
            for end in pair:
                if end not in ues:
                    raise ValidationError(f"pair endpoint {end!r} is not a UE")
        if self.horizon_s <= 0:
            raise ValidationError("horizon_s must be > 0")

    @property
    def bts(self) -> NodeRecord:
        return next(n for n in self.nodes if n.kind is NodeKind.BTS)

    @property
    def ues(self) -> list[NodeRecord]:
        return [n for n in self.nodes if n.kind is NodeKind.UE]

    def node(self, node_id: str) -> NodeRecord:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise ValidationError(f"unknown node id {node_id!r}")

    def distance(self, a: str, b: str) -> float:
        pa, pb = self.node(a).position, self.node(b).position
        return math.hypot(pa[0] - pb[0], pa[1] - pb[1])


@dataclass(frozen=True)
class Event:
    """One scheduled action; the ordinal breaks simultaneous-time ties."""

    time_s: float
    ordinal: int
    node_id: str
    action: Delivery | Timer


class EventQueue:
    """Min-heap keyed on (time, ordinal); ordinals are unique and increasing."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, Event]] = []
        self._next_ordinal = 0

    def schedule(self, time_s: float, node_id: str, action: Delivery | Timer) -> Event:
        event = Event(time_s, self._next_ordinal, node_id, action)
        self._next_ordinal += 1
        heapq.heappush(self._heap, (event.time_s, event.ordinal, event))
        return event

    def pop(self) -> Event:
        return heapq.heappop(self._heap)[2]

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class EnergyResult:
    consumed_wh: float
    remaining_wh: float
    depleted: bool
    time_d2d_on_s: float


@dataclass
class ScenarioReport:
    """Aggregated outcome of one scenario run."""

    decisions: dict[tuple[str, str], ModeDecision]
    outcomes: dict[tuple[str, str], str]
    trials: dict[tuple[str, str], TrialStats]
    energy: dict[str, EnergyResult]
    messages_emitted: Counter
    messages_delivered: Counter
    relay_counters: dict[str, tuple[int, int]]  # node -> (addressed, forwarded)
    protocol_violations: int
    seed: int
    horizon_s: float
    trace: list[str] | None = None

    def to_dict(self) -> dict:
        def pair_key(p: tuple[str, str]) -> str:
            return f"{p[0]}->{p[1]}"

        return {
            "seed": self.seed,
            "horizon_s": self.horizon_s,
            "decisions": {
                pair_key(p): {
                    "mode": d.mode.value,
                    "relay": d.relay,
                    "decided_at": d.decided_at,
                }
                for p, d in sorted(self.decisions.items())
            },
            "outcomes": {pair_key(p): o for p, o in sorted(self.outcomes.items())},
            "trials": {
                pair_key(p): {
                    "distance_m": t.distance_m,
                    "sent": t.sent,
                    "received": t.received,
                    "efficiency_pct": t.efficiency_pct,
                    "mean_rssi_dbm": float(np.mean(t.rssi_samples))
                    if len(t.rssi_samples)
                    else None,
                }
                for p, t in sorted(self.trials.items())
            },
            "energy": {
                node: {
                    "consumed_wh": e.consumed_wh,
                    "remaining_wh": e.remaining_wh,
                    "depleted": e.depleted,
                    "time_d2d_on_s": e.time_d2d_on_s,
                }
                for node, e in sorted(self.energy.items())
            },
            "messages_emitted": {k.value: v for k, v in sorted(self.messages_emitted.items(), key=lambda kv: kv[0].value)},
            "messages_delivered": {k.value: v for k, v in sorted(self.messages_delivered.items(), key=lambda kv: kv[0].value)},
            "relay_counters": {
                n: {"addressed": c[0], "forwarded": c[1]}
                for n, c in sorted(self.relay_counters.items())
            },
            "protocol_violations": self.protocol_violations,
        }


# --------------------------------------------------------------------------
# Monte-Carlo range sweep
# --------------------------------------------------------------------------

def _require_profiles(scenario: Scenario) -> dict[LinkKind, RadioProfile]:
    if not scenario.profiles:
        raise CalibrationError(
            "no calibrated radio profiles in the scenario; run `sim calibrate` "
            "and reference its output, or embed profiles explicitly"
        )
    return scenario.profiles


def run_range_sweep(
    link_kind: LinkKind,
    distances: list[float],
    scenario: Scenario,
    composition: Composition = Composition.SINGLE_HOP,
    packets: int | None = None,
) -> list[TrialStats]:
    """Simulate a fixed packet count at each distance and record RSSI/success.

    Single hop sends each packet once; the two-hop composition places the
    relay at the midpoint and gives every hop the configured retries.  Fully
    determined by the scenario seed; distances keep their input order.
    """
    profiles = _require_profiles(scenario)
    if link_kind not in profiles:
        raise CalibrationError(f"no profile for link class {link_kind.value}")
    profile = profiles[link_kind]
    n_packets = packets if packets is not None else scenario.trial.packets_per_trial
    if n_packets < 1:
        raise DomainError(f"packet count must be >= 1, got {n_packets}")
    retries = scenario.trial.retries_per_hop

    min_d = profile.ref_distance_m
    if composition is Composition.TWO_HOP_MIDPOINT_RELAY:
        min_d = 2.0 * profile.ref_distance_m
    for i, d in enumerate(distances):
        if not (d >= min_d) or not math.isfinite(d):
            raise DomainError(
                f"distances[{i}] = {d} is invalid for {composition.value} "
                f"(minimum {min_d} m)"
            )

    out: list[TrialStats] = []
    for d in distances:
        stream = rng.stream(
            scenario.seed, "sweep", link_kind.value, composition.value, repr(float(d))
        )
        if composition is Composition.SINGLE_HOP:
            samples = mean_rssi(profile, d) + shadow_sigma(profile, d) * stream.standard_normal(n_packets)
            delivered = stream.random(n_packets) < packet_success_prob_array(profile, samples)
            out.append(TrialStats.make(d, n_packets, int(delivered.sum()), samples))
        else:
            out.append(_two_hop_trial(profile, d, n_packets, retries, stream))
    return out


def _two_hop_trial(
    profile: RadioProfile,
    distance_m: float,
    n_packets: int,
    retries: int,
    stream: np.random.Generator,
) -> TrialStats:
    hop_d = distance_m / 2.0
    mu = mean_rssi(profile, hop_d)
    sigma = shadow_sigma(profile, hop_d)
    recorded: list[np.ndarray] = []

    def run_hop(eligible: np.ndarray) -> np.ndarray:
        delivered = np.zeros(n_packets, dtype=bool)
        for _ in range(retries + 1):
            # Full-size draws keep stream consumption independent of outcomes.
            samples = mu + sigma * stream.standard_normal(n_packets)
            success = stream.random(n_packets) < packet_success_prob_array(profile, samples)
            active = eligible & ~delivered
            recorded.append(samples[active])
            delivered |= success & active
        return delivered

    hop1 = run_hop(np.ones(n_packets, dtype=bool))
    hop2 = run_hop(hop1)
    samples = np.concatenate(recorded) if recorded else np.empty(0)
    return TrialStats.make(distance_m, n_packets, int(hop2.sum()), samples)


# --------------------------------------------------------------------------
# Full protocol scenario
# --------------------------------------------------------------------------

class _Simulation:
    def __init__(self, scenario: Scenario, collect_trace: bool = False):
        self.scenario = scenario
        self.profiles = _require_profiles(scenario)
        trial = scenario.trial

        if scenario.thresholds is not None:
            self.thresholds = scenario.thresholds
        else:
            targets = scenario.threshold_targets
            self.thresholds = derive_thresholds(
                self.profiles,
                direct_eff_pct=targets.direct_eff_pct,
                cell_eff_pct=targets.cell_eff_pct,
                retries_per_hop=trial.retries_per_hop,
                beacon_min_samples=targets.beacon_min_samples,
            )

        data_air = airtime(trial.packet_payload_bytes, trial.overhead_bytes, trial.data_rate_baud)
        ack_air = airtime(8, trial.overhead_bytes, trial.data_rate_baud)
        self.machine_config = MachineConfig(
            data_payload_bytes=trial.packet_payload_bytes,
            packets_per_trial=trial.packets_per_trial,
            retries_per_hop=trial.retries_per_hop,
            ack_timeout_s=data_air + ack_air + 2 * TURNAROUND_S + 0.005,
            send_gap_s=TURNAROUND_S,
            data_start_delay_s=DATA_START_DELAY_S,
        )

        # Machines own private copies of the node records.
        bts_rec = replace(scenario.bts)
        self.bts = BtsMachine(bts_rec, scenario.pairs, self.thresholds, self.machine_config)
        self.ues: dict[str, UeMachine] = {}
        for node in sorted(scenario.ues, key=lambda n: n.id):
            sends_to = [b for (a, b) in scenario.pairs if a == node.id]
            self.ues[node.id] = UeMachine(
                replace(node), self.bts.id, sends_to, self.machine_config
            )
        self.machines: dict[str, BtsMachine | UeMachine] = {self.bts.id: self.bts, **self.ues}

        self._check_geometry()

        self.queue = EventQueue()
        self.now = 0.0
        self.emitted: Counter = Counter()
        self.delivered: Counter = Counter()
        self.trace: list[str] | None = [] if collect_trace else None
        self._streams: dict[tuple[str, str, str], np.random.Generator] = {}

        # Energy trace bookkeeping: (current state, since).
        self._power: dict[str, tuple[PowerState, float]] = {
            nid: (m.record.power_state, 0.0) for nid, m in self.machines.items()
        }
        self._traces: dict[str, PowerTrace] = {nid: PowerTrace() for nid in self.machines}

    def _check_geometry(self) -> None:
        # Sub-reference distances are rejected, not clamped.
        min_ref = max(p.ref_distance_m for p in self.profiles.values())
        ids = sorted(self.machines)
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                if self.scenario.distance(a, b) < min_ref:
                    raise ValidationError(
                        f"nodes {a!r} and {b!r} are closer than the channel "
                        f"reference distance ({min_ref} m)"
                    )

    def _slot(self, payload_bytes: int) -> float:
        trial = self.scenario.trial
        return airtime(payload_bytes, trial.overhead_bytes, trial.data_rate_baud) + TURNAROUND_S

    def _link_stream(self, kind: LinkKind, a: str, b: str) -> np.random.Generator:
        lo, hi = (a, b) if a < b else (b, a)
        key = (kind.value, lo, hi)
        if key not in self._streams:
            self._streams[key] = rng.stream(self.scenario.seed, "link", *key)
        return self._streams[key]

    def _schedule_phases(self) -> None:
        from .protocol import BEACON_PAYLOAD_BYTES, CTRL_PAYLOAD_BYTES

        ue_ids = sorted(self.ues)
        n = len(ue_ids)
        ctrl_slot = self._slot(CTRL_PAYLOAD_BYTES)
        beacon_slot = self._slot(BEACON_PAYLOAD_BYTES)

        for i, uid in enumerate(ue_ids):
            self.queue.schedule(i * ctrl_slot, uid, Timer("start"))

        t0 = n * ctrl_slot + 0.1
        # One beacon round per required sample; both directions of a link
        # report, so the merged table sees up to 2x rounds samples per pair.
        rounds = self.thresholds.beacon_min_samples
        # Each round: all beacons, then every UE's reports (up to n-1 each).
        round_len = n * beacon_slot + n * max(n - 1, 1) * ctrl_slot + 0.02
        for r in range(rounds):
            base = t0 + r * round_len
            for i, uid in enumerate(ue_ids):
                self.queue.schedule(base + i * beacon_slot, uid, Timer("beacon"))
            report_base = base + n * beacon_slot
            for i, uid in enumerate(ue_ids):
                self.queue.schedule(
                    report_base + i * max(n - 1, 1) * ctrl_slot, uid, Timer("report")
                )
        self.decide_time = t0 + rounds * round_len + 0.05
        self.queue.schedule(self.decide_time, self.bts.id, Timer("decide"))

    def _route(self, src_id: str, msg: Message) -> None:
        trial = self.scenario.trial
        if msg.dst == BROADCAST:
            dsts = [uid for uid in sorted(self.ues) if uid != src_id]
        else:
            dsts = [msg.dst]
        delay = airtime(msg.payload_len_bytes, trial.overhead_bytes, trial.data_rate_baud) + TURNAROUND_S
        for dst in dsts:
            self.emitted[msg.kind] += 1
            kind = (
                LinkKind.BTS_UE
                if self.bts.id in (src_id, dst)
                else LinkKind.D2D
            )
            profile = self.profiles[kind]
            stream = self._link_stream(kind, src_id, dst)
            d = self.scenario.distance(src_id, dst)
            sample = mean_rssi(profile, d) + shadow_sigma(profile, d) * stream.standard_normal()
            if msg.kind in CONTROL_KINDS:
                ok = True
            else:
                ok = stream.random() < packet_success_prob(profile, sample)
            if ok:
                self.delivered[msg.kind] += 1
                target = msg if msg.dst != BROADCAST else replace(msg, dst=dst)
                self.queue.schedule(
                    self.now + delay, dst, Delivery(target, measured_rssi_dbm=sample)
                )
                if self.trace is not None:
                    self.trace.append(trace_line(self.now, target))

    def _note_power(self, node_id: str) -> None:
        machine = self.machines[node_id]
        state, since = self._power[node_id]
        current = machine.record.power_state
        if current is not state:
            self._traces[node_id].append(state, self.now - since)
            self._power[node_id] = (current, self.now)

    def run(self) -> ScenarioReport:
        self._schedule_phases()
        horizon = self.scenario.horizon_s
        while len(self.queue):
            event = self.queue.pop()
            if event.time_s > horizon:
                break
            self.now = event.time_s
            machine = self.machines.get(event.node_id)
            if machine is None:
                continue
            emissions = machine.handle(event.action, self.now)
            self._note_power(event.node_id)
            for emission in emissions:
                if isinstance(emission, TimerRequest):
                    self.queue.schedule(
                        self.now + emission.delay_s,
                        event.node_id,
                        Timer(emission.kind, emission.payload),
                    )
                else:
                    self._route(event.node_id, emission)
        return self._report(horizon)

    def _report(self, horizon: float) -> ScenarioReport:
        # Close energy traces at the horizon and integrate.
        energy: dict[str, EnergyResult] = {}
        power_cfg = self.scenario.power
        for nid, machine in sorted(self.machines.items()):
            state, since = self._power[nid]
            trace = self._traces[nid]
            trace.append(state, max(horizon - since, 0.0))
            battery, depleted = consume(trace, power_cfg.model, power_cfg.battery)
            energy[nid] = EnergyResult(
                consumed_wh=power_cfg.battery.remaining_wh - battery.remaining_wh,
                remaining_wh=battery.remaining_wh,
                depleted=depleted,
                time_d2d_on_s=trace.time_in_s(PowerState.D2D_ON),
            )

        trials: dict[tuple[str, str], TrialStats] = {}
        for pair in self.scenario.pairs:
            a, b = pair
            transfer = self.ues[a].transfers.get(b)
            if transfer is None or transfer.sent == 0:
                continue
            received = len(self.ues[b].received_seqs.get(a, set()))
            samples = np.asarray(self.ues[b].received_rssi.get(a, []), dtype=float)
            trials[pair] = TrialStats.make(
                self.scenario.distance(a, b), transfer.sent, received, samples
            )

        relay_counters = {
            nid: (m.fwd_addressed, m.fwd_forwarded)
            for nid, m in sorted(self.machines.items())
            if m.fwd_addressed or m.fwd_forwarded
        }
        violations = sum(m.violations for m in self.machines.values())
        return ScenarioReport(
            decisions=dict(self.bts.decisions),
            outcomes=dict(self.bts.outcomes),
            trials=trials,
            energy=energy,
            messages_emitted=self.emitted,
            messages_delivered=self.delivered,
            relay_counters=relay_counters,
            protocol_violations=violations,
            seed=self.scenario.seed,
            horizon_s=horizon,
            trace=self.trace,
        )


def run_scenario(scenario: Scenario, collect_trace: bool = False) -> ScenarioReport:
    """Execute registration, beaconing, decision and data phases to the horizon."""
    return _Simulation(scenario, collect_trace=collect_trace).run()
