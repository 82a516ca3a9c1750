"""Coordination protocol: registration, beaconing, mode decision, data transfer.

The BTS decides per UE pair whether to allocate a direct D2D link, a relayed
D2D link through a third UE, or to fall back to carrying traffic itself.
Decisions are made from RSSI link reports: UEs measure each other's beacons
on the D2D radio and report the medians to the BTS over the (reliable)
control link; the BTS measures uplink RSSI on every control message it
receives.

Node behaviour is written as event-driven machines: ``handle_ue_event``
consumes one message or timer and returns the emissions it triggers.  The
engine owns the clock and the channel; machines never draw randomness.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from enum import Enum

from .channel import LinkKind, RadioProfile, rssi_at_success
from .energy import PowerState
from .errors import (
    DomainError,
    InsufficientDataError,
    PairUnreachableError,
    ValidationError,
)

BROADCAST = "*"

# Payload sizes (bytes, before per-packet overhead) for the message kinds
# whose length the protocol fixes; data payload size comes from the scenario.
CTRL_PAYLOAD_BYTES = 16
BEACON_PAYLOAD_BYTES = 8
ACK_PAYLOAD_BYTES = 8

# Censored-measurement sentinel: a UE that completed its beacon rounds and
# heard nothing from a peer has measured the link as dead, not left it
# unmeasured.  Far below any usable threshold.
NO_SIGNAL_FLOOR_DBM = -200.0


class NodeKind(Enum):
    BTS = "bts"
    UE = "ue"


class UeState(Enum):
    IDLE = "idle"
    REGISTERED = "registered"
    CELLULAR = "cellular"
    D2D_DIRECT = "d2d_direct"
    D2D_RELAYED = "d2d_relayed"
    RELAY_DUTY = "relay_duty"


class Mode(Enum):
    CELLULAR_FALLBACK = "cellular_fallback"
    D2D_DIRECT = "d2d_direct"
    D2D_RELAYED = "d2d_relayed"


_MODE_TO_STATE = {
    Mode.CELLULAR_FALLBACK: UeState.CELLULAR,
    Mode.D2D_DIRECT: UeState.D2D_DIRECT,
    Mode.D2D_RELAYED: UeState.D2D_RELAYED,
}

_D2D_ON_STATES = {UeState.D2D_DIRECT, UeState.D2D_RELAYED, UeState.RELAY_DUTY}


class MsgKind(Enum):
    REGISTER = "register"
    REGISTER_ACK = "register_ack"
    RSSI_REPORT = "rssi_report"
    PEER_BEACON = "peer_beacon"
    MODE_ASSIGN = "mode_assign"
    RELAY_REQUEST = "relay_request"
    RELAY_GRANT = "relay_grant"
    DATA = "data"
    DATA_ACK = "data_ack"


# Control kinds ride the BTS link and are treated as reliable; the rest are
# subject to the loss model of whichever channel they traverse.
CONTROL_KINDS = {
    MsgKind.REGISTER,
    MsgKind.REGISTER_ACK,
    MsgKind.RSSI_REPORT,
    MsgKind.MODE_ASSIGN,
    MsgKind.RELAY_REQUEST,
    MsgKind.RELAY_GRANT,
}


@dataclass
class NodeRecord:
    """Identity, placement and protocol state of one node.

    ``ue_state`` and ``power_state`` are only ever changed by the owning
    machine's event handler.
    """

    id: str
    kind: NodeKind
    position: tuple[float, float]
    ue_state: UeState = UeState.IDLE
    power_state: PowerState = PowerState.D2D_OFF


@dataclass(frozen=True)
class ModeDecision:
    mode: Mode
    relay: str | None = None
    decided_at: float = 0.0

    def __post_init__(self) -> None:
        if (self.relay is not None) != (self.mode is Mode.D2D_RELAYED):
            raise ValidationError("relay id present iff the mode is relayed")


@dataclass(frozen=True)
class Message:
    """In-memory wire unit.

    ``subject`` names what the message is about: the measured peer for an
    RSSI report, the far endpoint for a mode assignment, the (a, b) pair for
    relay negotiation, and the originating endpoint for data/acks (so relays
    and receivers can deduplicate retransmissions).  ``sample_count`` rides
    on RSSI reports only.
    """

    kind: MsgKind
    src: str
    dst: str
    seq: int = 0
    payload_len_bytes: int = CTRL_PAYLOAD_BYTES
    carried_rssi: float | None = None
    assigned_mode: ModeDecision | None = None
    subject: str | tuple[str, str] | None = None
    sample_count: int | None = None

    def __post_init__(self) -> None:
        has_rssi = self.carried_rssi is not None
        if has_rssi != (self.kind is MsgKind.RSSI_REPORT):
            # Beacons are sent blind; their RSSI is measured by the receiver.
            if not (self.kind is MsgKind.PEER_BEACON and not has_rssi):
                raise ValidationError(
                    f"carried_rssi must accompany rssi_report only, got {self.kind}"
                )
        if self.assigned_mode is not None and self.kind is not MsgKind.MODE_ASSIGN:
            raise ValidationError("assigned_mode is only valid on mode_assign")


def trace_line(time_s: float, msg: Message) -> str:
    """Canonical one-line text rendering of a message for trace logs."""
    return f"{time_s:.6f} {msg.kind.value} {msg.src}->{msg.dst} seq={msg.seq}"


@dataclass(frozen=True)
class LinkReport:
    """Aggregated RSSI knowledge about one (unordered) node pair."""

    a: str
    b: str
    rssi_ab_dbm: float
    sample_count: int
    freshness: float

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValidationError("sample_count must be >= 1")
        if not self.a < self.b:
            raise ValidationError("link report key must be normalized (a < b)")


def link_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Thresholds:
    direct_rssi_dbm: float
    relay_hop_rssi_dbm: float
    cell_rssi_dbm: float
    beacon_min_samples: int = 5

    def __post_init__(self) -> None:
        for v in (self.direct_rssi_dbm, self.relay_hop_rssi_dbm, self.cell_rssi_dbm):
            if not math.isfinite(v):
                raise ValidationError(f"threshold {v} must be finite")
        if self.beacon_min_samples < 1:
            raise ValidationError("beacon_min_samples must be >= 1")


def d2d_feasible(rssi_ab_dbm: float, thresholds: Thresholds) -> bool:
    """Direct D2D is feasible when the pair RSSI meets the direct threshold."""
    return rssi_ab_dbm >= thresholds.direct_rssi_dbm


def select_relay(
    pair: tuple[str, str],
    candidates: set[str],
    reports: dict[tuple[str, str], LinkReport],
    thresholds: Thresholds,
) -> str | None:
    """Pick the relay whose weaker hop is strongest, above the hop threshold.

    Ties go to the smaller device id; candidates without reports for both
    hops are skipped.  Returns None when nobody qualifies.
    """
    a, b = pair
    best: str | None = None
    best_score = -math.inf
    for r in sorted(candidates):
        ra = reports.get(link_key(a, r))
        rb = reports.get(link_key(r, b))
        if ra is None or rb is None:
            continue
        score = min(ra.rssi_ab_dbm, rb.rssi_ab_dbm)
        if score >= thresholds.relay_hop_rssi_dbm and score > best_score:
            best, best_score = r, score
    return best


def bts_decide_mode(
    pair: tuple[str, str],
    reports: dict[tuple[str, str], LinkReport],
    thresholds: Thresholds,
    bts_id: str = "bts",
    candidates: set[str] | None = None,
) -> ModeDecision:
    """Mode verdict for a pair from the current link reports.

    Rule order: direct if the pair RSSI meets the direct threshold; else the
    best qualifying relay; else cellular fallback provided both BTS links
    meet the cell threshold.  Reports are assumed pre-filtered to the beacon
    sample minimum.
    """
    a, b = pair
    if candidates is None:
        ids = {n for key in reports for n in key}
        candidates = ids - {a, b, bts_id}

    pair_report = reports.get(link_key(a, b))
    if pair_report is not None and d2d_feasible(pair_report.rssi_ab_dbm, thresholds):
        return ModeDecision(mode=Mode.D2D_DIRECT)

    relay = select_relay(pair, candidates, reports, thresholds)
    if relay is not None:
        return ModeDecision(mode=Mode.D2D_RELAYED, relay=relay)

    if pair_report is None and not candidates:
        raise InsufficientDataError(
            f"no link report for pair {pair} and no relay candidates"
        )

    cell_a = reports.get(link_key(bts_id, a))
    cell_b = reports.get(link_key(bts_id, b))
    if cell_a is None or cell_b is None:
        raise InsufficientDataError(
            f"missing BTS link report for pair {pair}; cannot evaluate fallback"
        )
    if (
        cell_a.rssi_ab_dbm >= thresholds.cell_rssi_dbm
        and cell_b.rssi_ab_dbm >= thresholds.cell_rssi_dbm
    ):
        return ModeDecision(mode=Mode.CELLULAR_FALLBACK)
    raise PairUnreachableError(
        f"pair {pair}: no D2D path and at least one BTS link below "
        f"{thresholds.cell_rssi_dbm} dBm"
    )


def derive_thresholds(
    profiles: dict[LinkKind, RadioProfile],
    direct_eff_pct: float = 90.0,
    cell_eff_pct: float = 85.0,
    retries_per_hop: int = 1,
    beacon_min_samples: int = 5,
) -> Thresholds:
    """Map efficiency targets onto RSSI thresholds via the success logistics.

    The relay hop threshold is the RSSI at which two hops with the
    configured per-hop retries still achieve the direct-link target
    end to end.
    """
    for eff in (direct_eff_pct, cell_eff_pct):
        if not 0.0 < eff < 100.0:
            raise DomainError(f"efficiency target must be in (0, 100), got {eff}")
    d2d = profiles[LinkKind.D2D]
    cell = profiles[LinkKind.BTS_UE]
    direct_rssi = rssi_at_success(d2d, direct_eff_pct / 100.0)
    cell_rssi = rssi_at_success(cell, cell_eff_pct / 100.0)
    q_hop = math.sqrt(direct_eff_pct / 100.0)
    p_hop = 1.0 - (1.0 - q_hop) ** (1.0 / (retries_per_hop + 1))
    relay_rssi = rssi_at_success(d2d, p_hop)
    return Thresholds(
        direct_rssi_dbm=direct_rssi,
        relay_hop_rssi_dbm=relay_rssi,
        cell_rssi_dbm=cell_rssi,
        beacon_min_samples=beacon_min_samples,
    )


# --------------------------------------------------------------------------
# Event-driven node machines
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Delivery:
    """A message arriving at a node, annotated with its measured RSSI."""

    message: Message
    measured_rssi_dbm: float | None = None


@dataclass(frozen=True)
class Timer:
    kind: str
    payload: tuple = ()


@dataclass(frozen=True)
class TimerRequest:
    """A machine asking the engine to fire a timer after a delay."""

    delay_s: float
    kind: str
    payload: tuple = ()


Emission = Message | TimerRequest


@dataclass(frozen=True)
class MachineConfig:
    """Engine-supplied constants the machines need for data transfer."""

    data_payload_bytes: int = 64
    packets_per_trial: int = 50
    retries_per_hop: int = 1
    ack_timeout_s: float = 0.05
    send_gap_s: float = 0.01
    data_start_delay_s: float = 0.1


class _Transfer:
    """Source-side bookkeeping for one outgoing packet stream."""

    def __init__(self) -> None:
        self.sent = 0  # distinct seqs initiated
        self.pending: dict[int, int] = {}  # seq -> attempts made
        self.acked: set[int] = set()
        self.resolved: set[int] = set()


class UeMachine:
    """One UE as an event-driven state machine.

    Mutates its ``record`` in place and returns emissions; all randomness
    and scheduling live in the engine.
    """

    def __init__(
        self,
        record: NodeRecord,
        bts_id: str,
        sends_to: list[str],
        config: MachineConfig,
    ) -> None:
        self.record = record
        self.bts_id = bts_id
        self.sends_to = list(sends_to)
        self.config = config
        self.violations = 0
        self.beacon_samples: dict[str, list[float]] = {}
        self.downlink_rssi: float | None = None
        self.mode_by_peer: dict[str, ModeDecision] = {}
        self.transfers: dict[str, _Transfer] = {p: _Transfer() for p in sends_to}
        self.relay_pair: tuple[str, str] | None = None
        self.fwd_pending: dict[tuple[str, int], int] = {}
        self.fwd_seen: set[tuple[str, int]] = set()
        self.fwd_addressed = 0
        self.fwd_forwarded = 0
        self.received_seqs: dict[str, set[int]] = {}
        self.received_rssi: dict[str, list[float]] = {}

    # -- helpers ------------------------------------------------------------

    @property
    def id(self) -> str:
        return self.record.id

    def _set_state(self, state: UeState) -> None:
        self.record.ue_state = state
        self.record.power_state = (
            PowerState.D2D_ON if state in _D2D_ON_STATES else PowerState.D2D_OFF
        )

    def _next_hop(self, peer: str) -> str:
        decision = self.mode_by_peer[peer]
        if decision.mode is Mode.D2D_DIRECT:
            return peer
        if decision.mode is Mode.D2D_RELAYED:
            return decision.relay  # type: ignore[return-value]
        return self.bts_id

    def _data(self, dst: str, seq: int, origin: str) -> Message:
        return Message(
            kind=MsgKind.DATA,
            src=self.id,
            dst=dst,
            seq=seq,
            payload_len_bytes=self.config.data_payload_bytes,
            subject=origin,
        )

    def _ack(self, dst: str, seq: int, origin: str) -> Message:
        return Message(
            kind=MsgKind.DATA_ACK,
            src=self.id,
            dst=dst,
            seq=seq,
            payload_len_bytes=ACK_PAYLOAD_BYTES,
            subject=origin,
        )

    def _start_packet(self, peer: str, seq: int) -> list[Emission]:
        transfer = self.transfers[peer]
        if seq > self.config.packets_per_trial:
            return []
        transfer.sent += 1
        transfer.pending[seq] = 1
        return [
            self._data(self._next_hop(peer), seq, origin=self.id),
            TimerRequest(self.config.ack_timeout_s, "retry", (peer, seq, 1)),
        ]

    # -- event dispatch -----------------------------------------------------

    def handle(self, event: Delivery | Timer, now: float) -> list[Emission]:
        if isinstance(event, Timer):
            return self._on_timer(event, now)
        return self._on_message(event, now)

    def _on_timer(self, timer: Timer, now: float) -> list[Emission]:
        if timer.kind == "start":
            return [
                Message(kind=MsgKind.REGISTER, src=self.id, dst=self.bts_id)
            ]
        if timer.kind == "beacon":
            if self.record.ue_state is UeState.IDLE:
                return []
            return [
                Message(
                    kind=MsgKind.PEER_BEACON,
                    src=self.id,
                    dst=BROADCAST,
                    payload_len_bytes=BEACON_PAYLOAD_BYTES,
                )
            ]
        if timer.kind == "report":
            return self._emit_reports()
        if timer.kind == "send":
            peer, seq = timer.payload
            return self._start_packet(peer, seq)
        if timer.kind == "retry":
            return self._on_retry(*timer.payload)
        if timer.kind == "fwd_retry":
            return self._on_fwd_retry(*timer.payload)
        return []

    def _emit_reports(self) -> list[Emission]:
        if self.record.ue_state is UeState.IDLE:
            return []
        out: list[Emission] = []
        for peer in sorted(self.beacon_samples):
            samples = self.beacon_samples[peer]
            out.append(
                Message(
                    kind=MsgKind.RSSI_REPORT,
                    src=self.id,
                    dst=self.bts_id,
                    carried_rssi=statistics.median(samples),
                    subject=peer,
                    sample_count=len(samples),
                )
            )
        if not out and self.downlink_rssi is not None:
            # Keepalive so the BTS keeps sampling our uplink even when no
            # peer has been heard.
            out.append(
                Message(
                    kind=MsgKind.RSSI_REPORT,
                    src=self.id,
                    dst=self.bts_id,
                    carried_rssi=self.downlink_rssi,
                    subject=self.bts_id,
                    sample_count=1,
                )
            )
        return out

    def _on_retry(self, peer: str, seq: int, attempts: int) -> list[Emission]:
        transfer = self.transfers[peer]
        if seq not in transfer.pending:
            return []  # already acknowledged
        if attempts < self.config.retries_per_hop + 1:
            transfer.pending[seq] = attempts + 1
            return [
                self._data(self._next_hop(peer), seq, origin=self.id),
                TimerRequest(self.config.ack_timeout_s, "retry", (peer, seq, attempts + 1)),
            ]
        del transfer.pending[seq]
        transfer.resolved.add(seq)
        return [TimerRequest(self.config.send_gap_s, "send", (peer, seq + 1))]

    def _on_fwd_retry(self, origin: str, seq: int, attempts: int) -> list[Emission]:
        key = (origin, seq)
        if key not in self.fwd_pending:
            return []
        if attempts < self.config.retries_per_hop + 1 and self.relay_pair is not None:
            a, b = self.relay_pair
            far = b if origin == a else a
            self.fwd_pending[key] = attempts + 1
            return [
                self._data(far, seq, origin=origin),
                TimerRequest(self.config.ack_timeout_s, "fwd_retry", (origin, seq, attempts + 1)),
            ]
        del self.fwd_pending[key]
        return []

    def _on_message(self, event: Delivery, now: float) -> list[Emission]:
        msg = event.message
        state = self.record.ue_state
        kind = msg.kind

        if kind is MsgKind.REGISTER_ACK:
            if state is not UeState.IDLE:
                self.violations += 1
                return []
            if event.measured_rssi_dbm is not None:
                self.downlink_rssi = event.measured_rssi_dbm
            self._set_state(UeState.REGISTERED)
            return []

        if kind is MsgKind.PEER_BEACON:
            if state is UeState.IDLE:
                return []
            if event.measured_rssi_dbm is not None:
                self.beacon_samples.setdefault(msg.src, []).append(
                    event.measured_rssi_dbm
                )
            return []

        if kind is MsgKind.MODE_ASSIGN:
            if state is UeState.IDLE or msg.assigned_mode is None:
                self.violations += 1
                return []
            peer = msg.subject
            self.mode_by_peer[peer] = msg.assigned_mode
            self._set_state(_MODE_TO_STATE[msg.assigned_mode.mode])
            if peer in self.sends_to:
                return [
                    TimerRequest(self.config.data_start_delay_s, "send", (peer, 1))
                ]
            return []

        if kind is MsgKind.RELAY_REQUEST:
            if state is not UeState.REGISTERED:
                self.violations += 1
                return []
            return [
                Message(
                    kind=MsgKind.RELAY_GRANT,
                    src=self.id,
                    dst=self.bts_id,
                    subject=msg.subject,
                )
            ]

        if kind is MsgKind.RELAY_GRANT:
            if state is not UeState.REGISTERED:
                self.violations += 1
                return []
            self.relay_pair = msg.subject  # type: ignore[assignment]
            self._set_state(UeState.RELAY_DUTY)
            return []

        if kind is MsgKind.DATA:
            return self._on_data(msg, event.measured_rssi_dbm)

        if kind is MsgKind.DATA_ACK:
            return self._on_data_ack(msg)

        self.violations += 1
        return []

    def _on_data(self, msg: Message, measured: float | None) -> list[Emission]:
        state = self.record.ue_state
        origin = msg.subject

        if state is UeState.RELAY_DUTY and self.relay_pair is not None:
            a, b = self.relay_pair
            if msg.src not in (a, b):
                self.violations += 1
                return []
            self.fwd_addressed += 1
            far = b if msg.src == a else a
            key = (origin, msg.seq)
            out: list[Emission] = [self._ack(msg.src, msg.seq, origin)]
            if key not in self.fwd_seen:
                self.fwd_seen.add(key)
                self.fwd_pending[key] = 1
                self.fwd_forwarded += 1
                out.append(self._data(far, msg.seq, origin=origin))
                out.append(
                    TimerRequest(self.config.ack_timeout_s, "fwd_retry", (origin, msg.seq, 1))
                )
            return out

        if state in (UeState.D2D_DIRECT, UeState.D2D_RELAYED, UeState.CELLULAR):
            if origin not in self.mode_by_peer:
                self.violations += 1
                return []
            seqs = self.received_seqs.setdefault(origin, set())
            if msg.seq not in seqs:
                seqs.add(msg.seq)
                if measured is not None:
                    self.received_rssi.setdefault(origin, []).append(measured)
            return [self._ack(msg.src, msg.seq, origin)]

        self.violations += 1
        return []

    def _on_data_ack(self, msg: Message) -> list[Emission]:
        origin = msg.subject
        if origin == self.id:
            # Ack for a packet I originated.
            for peer in self.sends_to:
                if self._next_hop_or_none(peer) == msg.src:
                    transfer = self.transfers[peer]
                    if msg.seq in transfer.pending:
                        del transfer.pending[msg.seq]
                        transfer.acked.add(msg.seq)
                        transfer.resolved.add(msg.seq)
                        return [
                            TimerRequest(
                                self.config.send_gap_s, "send", (peer, msg.seq + 1)
                            )
                        ]
                    return []  # late duplicate ack
            self.violations += 1
            return []
        if self.record.ue_state is UeState.RELAY_DUTY:
            key = (origin, msg.seq)
            if key in self.fwd_pending:
                del self.fwd_pending[key]
            return []
        self.violations += 1
        return []

    def _next_hop_or_none(self, peer: str) -> str | None:
        if peer not in self.mode_by_peer:
            return None
        return self._next_hop(peer)


def handle_ue_event(
    machine: UeMachine, event: Delivery | Timer, now: float = 0.0
) -> tuple[NodeRecord, list[Emission]]:
    """Feed one event to a UE machine; returns (updated record, emissions)."""
    emissions = machine.handle(event, now)
    return machine.record, emissions


class BtsMachine:
    """The coordinator: registry, link-report table, decisions, forwarding."""

    def __init__(
        self,
        record: NodeRecord,
        pairs: list[tuple[str, str]],
        thresholds: Thresholds,
        config: MachineConfig,
    ) -> None:
        self.record = record
        self.pairs = list(pairs)
        self.thresholds = thresholds
        self.config = config
        self.registered: set[str] = set()
        self.reported: set[str] = set()
        self.uplink_samples: dict[str, list[float]] = {}
        # (reporter, subject) -> (median rssi, sample count, freshness)
        self.peer_reports: dict[tuple[str, str], tuple[float, int, float]] = {}
        self.decisions: dict[tuple[str, str], ModeDecision] = {}
        self.outcomes: dict[tuple[str, str], str] = {}
        self.pending_relay: dict[tuple[str, str], str] = {}
        self.busy_relays: set[str] = set()
        self.violations = 0
        self.fwd_pending: dict[tuple[str, int], int] = {}
        self.fwd_seen: set[tuple[str, int]] = set()
        self.fwd_addressed = 0
        self.fwd_forwarded = 0

    @property
    def id(self) -> str:
        return self.record.id

    def handle(self, event: Delivery | Timer, now: float) -> list[Emission]:
        if isinstance(event, Timer):
            if event.kind == "decide":
                return self._decide_all(now)
            if event.kind == "fwd_retry":
                return self._on_fwd_retry(*event.payload)
            return []
        msg = event.message
        if event.measured_rssi_dbm is not None:
            self.uplink_samples.setdefault(msg.src, []).append(event.measured_rssi_dbm)

        if msg.kind is MsgKind.REGISTER:
            self.registered.add(msg.src)
            return [Message(kind=MsgKind.REGISTER_ACK, src=self.id, dst=msg.src)]
        if msg.kind is MsgKind.RSSI_REPORT:
            self.reported.add(msg.src)
            if msg.subject != self.id and msg.subject is not None:
                self.peer_reports[(msg.src, msg.subject)] = (
                    msg.carried_rssi,
                    msg.sample_count or 1,
                    now,
                )
            return []
        if msg.kind is MsgKind.RELAY_GRANT:
            return self._on_relay_grant(msg, now)
        if msg.kind is MsgKind.DATA:
            return self._on_data(msg)
        if msg.kind is MsgKind.DATA_ACK:
            key = (msg.subject, msg.seq)
            if key in self.fwd_pending:
                del self.fwd_pending[key]
            return []
        self.violations += 1
        return []

    # -- decision phase -----------------------------------------------------

    def build_reports(self, now: float) -> dict[tuple[str, str], LinkReport]:
        """Merge directional peer reports and own uplink samples into a table.

        Inter-UE entries combine both directions' medians (count-weighted)
        and are dropped when the combined count is below the beacon minimum;
        BTS links use the median of all uplink samples.
        """
        table: dict[tuple[str, str], LinkReport] = {}
        seen: set[tuple[str, str]] = set()
        for reporter, subject in sorted(self.peer_reports):
            key = link_key(reporter, subject)
            if key in seen:
                continue
            seen.add(key)
            fwd = self.peer_reports.get((key[0], key[1]))
            rev = self.peer_reports.get((key[1], key[0]))
            total = (fwd[1] if fwd else 0) + (rev[1] if rev else 0)
            if total < self.thresholds.beacon_min_samples:
                continue
            weighted = sum(r[0] * r[1] for r in (fwd, rev) if r is not None) / total
            freshness = max(r[2] for r in (fwd, rev) if r is not None)
            table[key] = LinkReport(
                a=key[0], b=key[1], rssi_ab_dbm=weighted,
                sample_count=total, freshness=freshness,
            )
        for ue in sorted(self.uplink_samples):
            samples = self.uplink_samples[ue]
            key = link_key(self.id, ue)
            table[key] = LinkReport(
                a=key[0], b=key[1],
                rssi_ab_dbm=statistics.median(samples),
                sample_count=len(samples), freshness=now,
            )
        # Traffic pairs whose endpoints both finished reporting yet heard
        # nothing from each other: the link was measured as dead (censored
        # below sensitivity), so record a floor entry rather than no entry.
        for pair in self.pairs:
            key = link_key(*pair)
            if key not in table and all(end in self.reported for end in pair):
                table[key] = LinkReport(
                    a=key[0], b=key[1], rssi_ab_dbm=NO_SIGNAL_FLOOR_DBM,
                    sample_count=self.thresholds.beacon_min_samples, freshness=now,
                )
        return table

    def _candidates_for(self, pair: tuple[str, str]) -> set[str]:
        # One pair at a time per relay, and pair endpoints (single
        # transceiver) never relay for others.
        endpoints = {n for p in self.pairs for n in p}
        return self.registered - endpoints - self.busy_relays - {self.id}

    def _decide_all(self, now: float) -> list[Emission]:
        out: list[Emission] = []
        reports = self.build_reports(now)
        for pair in self.pairs:
            try:
                decision = bts_decide_mode(
                    pair, reports, self.thresholds,
                    bts_id=self.id, candidates=self._candidates_for(pair),
                )
            except InsufficientDataError:
                self.outcomes[pair] = "insufficient_data"
                continue
            except PairUnreachableError:
                self.outcomes[pair] = "unreachable"
                continue
            if decision.mode is Mode.D2D_RELAYED:
                self.pending_relay[pair] = decision.relay  # type: ignore[arg-type]
                self.busy_relays.add(decision.relay)  # type: ignore[arg-type]
                out.append(
                    Message(
                        kind=MsgKind.RELAY_REQUEST, src=self.id,
                        dst=decision.relay, subject=pair,  # type: ignore[arg-type]
                    )
                )
            else:
                decision = ModeDecision(mode=decision.mode, decided_at=now)
                self.decisions[pair] = decision
                out.extend(self._assign(pair, decision))
        return out

    def _assign(self, pair: tuple[str, str], decision: ModeDecision) -> list[Message]:
        a, b = pair
        return [
            Message(kind=MsgKind.MODE_ASSIGN, src=self.id, dst=a,
                    subject=b, assigned_mode=decision),
            Message(kind=MsgKind.MODE_ASSIGN, src=self.id, dst=b,
                    subject=a, assigned_mode=decision),
        ]

    def _on_relay_grant(self, msg: Message, now: float) -> list[Emission]:
        pair = msg.subject
        if pair not in self.pending_relay or self.pending_relay[pair] != msg.src:
            self.violations += 1
            return []
        del self.pending_relay[pair]
        decision = ModeDecision(mode=Mode.D2D_RELAYED, relay=msg.src, decided_at=now)
        self.decisions[pair] = decision
        confirm = Message(
            kind=MsgKind.RELAY_GRANT, src=self.id, dst=msg.src, subject=pair
        )
        return [confirm, *self._assign(pair, decision)]

    # -- cellular data forwarding --------------------------------------------

    def _pair_of(self, origin: str) -> tuple[str, str] | None:
        for pair in self.pairs:
            if origin in pair and self.decisions.get(pair, None) is not None:
                if self.decisions[pair].mode is Mode.CELLULAR_FALLBACK:
                    return pair
        return None

    def _on_data(self, msg: Message) -> list[Emission]:
        origin = msg.subject
        pair = self._pair_of(origin)
        if pair is None:
            self.violations += 1
            return []
        self.fwd_addressed += 1
        a, b = pair
        far = b if origin == a else a
        key = (origin, msg.seq)
        ack = Message(
            kind=MsgKind.DATA_ACK, src=self.id, dst=msg.src, seq=msg.seq,
            payload_len_bytes=ACK_PAYLOAD_BYTES, subject=origin,
        )
        out: list[Emission] = [ack]
        if key not in self.fwd_seen:
            self.fwd_seen.add(key)
            self.fwd_pending[key] = 1
            self.fwd_forwarded += 1
            out.append(
                Message(
                    kind=MsgKind.DATA, src=self.id, dst=far, seq=msg.seq,
                    payload_len_bytes=msg.payload_len_bytes, subject=origin,
                )
            )
            out.append(
                TimerRequest(self.config.ack_timeout_s, "fwd_retry", (origin, msg.seq, 1))
            )
        return out

    def _on_fwd_retry(self, origin: str, seq: int, attempts: int) -> list[Emission]:
        key = (origin, seq)
        if key not in self.fwd_pending:
            return []
        pair = self._pair_of(origin)
        if pair is None or attempts >= self.config.retries_per_hop + 1:
            del self.fwd_pending[key]
            return []
        a, b = pair
        far = b if origin == a else a
        self.fwd_pending[key] = attempts + 1
        return [
            Message(
                kind=MsgKind.DATA, src=self.id, dst=far, seq=seq,
                payload_len_bytes=self.config.data_payload_bytes, subject=origin,
            ),
            TimerRequest(self.config.ack_timeout_s, "fwd_retry", (origin, seq, attempts + 1)),
        ]
