"""Output rendering: delimited results, text reports, and figures.

CSV files use '.' decimals, LF line endings and fixed 4-decimal floats so
byte-identical golden comparisons work everywhere.  Each report path also
renders a matplotlib figure next to the delimited output; figures carry
fixed PNG metadata so repeated runs produce identical bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .channel import (
    CalibrationAnchor,
    Composition,
    LinkKind,
    RadioProfile,
    packet_success_prob_array,
    range_at_threshold,
)
from .config import profile_to_dict
from .energy import Battery, PowerModel, duty_cycle_lifetime, lifetime_hours
from .engine import ScenarioReport, TrialStats

PNG_METADATA = {"Software": "d2dsim"}


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _save_figure(fig, path: str) -> None:
    fig.savefig(path, dpi=150, metadata=PNG_METADATA)
    plt.close(fig)


# --------------------------------------------------------------------------
# Sweep results
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    distance_m: float
    link: str
    mean_rssi_dbm: float
    rssi_var_db2: float
    sent: int
    received: int
    efficiency_pct: float


def sweep_rows(
    link: LinkKind, composition: Composition, stats: list[TrialStats]
) -> list[SweepRow]:
    label = link.value
    if composition is not Composition.SINGLE_HOP:
        label = f"{link.value}+{composition.value}"
    rows = []
    for t in stats:
        samples = np.asarray(t.rssi_samples, dtype=float)
        mean = float(samples.mean()) if samples.size else math.nan
        var = float(samples.var(ddof=1)) if samples.size > 1 else 0.0
        rows.append(
            SweepRow(
                distance_m=t.distance_m,
                link=label,
                mean_rssi_dbm=mean,
                rssi_var_db2=var,
                sent=t.sent,
                received=t.received,
                efficiency_pct=t.efficiency_pct,
            )
        )
    return rows


def write_sweep_csv(rows: list[SweepRow], path: str) -> None:
    lines = ["distance_m,link,mean_rssi_dbm,rssi_var_db2,sent,received,efficiency_pct"]
    for r in rows:
        lines.append(
            ",".join(
                (
                    _fmt(r.distance_m),
                    r.link,
                    _fmt(r.mean_rssi_dbm),
                    _fmt(r.rssi_var_db2),
                    str(r.sent),
                    str(r.received),
                    _fmt(r.efficiency_pct),
                )
            )
        )
    _write_text(path, "\n".join(lines) + "\n")


def render_sweep_figures(rows: list[SweepRow], out_dir: str) -> list[str]:
    """Efficiency-vs-distance and RSSI-vs-distance figures beside the CSV."""
    by_link: dict[str, list[SweepRow]] = {}
    for r in rows:
        by_link.setdefault(r.link, []).append(r)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label in sorted(by_link):
        series = by_link[label]
        ax.plot(
            [r.distance_m for r in series],
            [r.efficiency_pct for r in series],
            marker="o", markersize=3, label=label,
        )
    ax.set_xlabel("distance (m)")
    ax.set_ylabel("packet efficiency (%)")
    ax.set_ylim(0, 105)
    ax.grid(True, alpha=0.3)
    ax.legend()
    eff_path = os.path.join(out_dir, "sweep_efficiency.png")
    _save_figure(fig, eff_path)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label in sorted(by_link):
        series = by_link[label]
        d = np.array([r.distance_m for r in series])
        mean = np.array([r.mean_rssi_dbm for r in series])
        sd = np.sqrt(np.array([max(r.rssi_var_db2, 0.0) for r in series]))
        ax.plot(d, mean, marker="o", markersize=3, label=label)
        ax.fill_between(d, mean - sd, mean + sd, alpha=0.2)
    ax.set_xlabel("distance (m)")
    ax.set_ylabel("RSSI (dBm)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    rssi_path = os.path.join(out_dir, "sweep_rssi.png")
    _save_figure(fig, rssi_path)
    return [eff_path, rssi_path]


# --------------------------------------------------------------------------
# Calibration artifact
# --------------------------------------------------------------------------

def verification_table(
    profiles: dict[LinkKind, RadioProfile],
    anchors: list[CalibrationAnchor],
    retries_per_hop: int,
) -> list[dict]:
    from .channel import RANGE_TOLERANCE_M

    table = []
    for anchor in anchors:
        achieved = range_at_threshold(
            profiles[anchor.link_kind],
            anchor.composition,
            anchor.efficiency_pct,
            retries_per_hop,
        )
        tol = RANGE_TOLERANCE_M[anchor.composition]
        table.append(
            {
                "link": anchor.link_kind.value,
                "composition": anchor.composition.value,
                "target_distance_m": anchor.distance_m,
                "efficiency_pct": anchor.efficiency_pct,
                "achieved_range_m": round(achieved, 3),
                "tolerance_m": tol,
                "within_tolerance": abs(achieved - anchor.distance_m) <= tol,
            }
        )
    return table


def write_calibration_artifact(
    profiles: dict[LinkKind, RadioProfile],
    verification: list[dict],
    retries_per_hop: int,
    path: str,
) -> None:
    doc = {
        "profiles": {
            kind.value: profile_to_dict(profile)
            for kind, profile in sorted(profiles.items(), key=lambda kv: kv[0].value)
        },
        "verification": verification,
        "retries_per_hop": retries_per_hop,
    }
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def render_calibration_figure(
    profiles: dict[LinkKind, RadioProfile], out_dir: str
) -> str:
    """Success-vs-RSSI curves for the calibrated link classes."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for kind, profile in sorted(profiles.items(), key=lambda kv: kv[0].value):
        lo = profile.success_midpoint_dbm - 12.0 / profile.success_slope_per_db
        hi = profile.success_midpoint_dbm + 12.0 / profile.success_slope_per_db
        rssi = np.linspace(lo, hi, 400)
        ax.plot(rssi, 100 * packet_success_prob_array(profile, rssi), label=kind.value)
        ax.axvline(profile.success_midpoint_dbm, color="gray", lw=0.5, alpha=0.5)
    ax.set_xlabel("RSSI (dBm)")
    ax.set_ylabel("packet success (%)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    path = os.path.join(out_dir, "calibration_success_curves.png")
    _save_figure(fig, path)
    return path


# --------------------------------------------------------------------------
# Scenario report
# --------------------------------------------------------------------------

def write_scenario_json(reports: list[ScenarioReport], path: str) -> None:
    doc = {"replications": [r.to_dict() for r in reports]}
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_pairs_csv(reports: list[ScenarioReport], path: str) -> None:
    lines = ["replication,pair,mode,relay,distance_m,sent,received,efficiency_pct"]
    for i, report in enumerate(reports):
        keys = sorted(set(report.decisions) | set(report.outcomes))
        for pair in keys:
            decision = report.decisions.get(pair)
            mode = decision.mode.value if decision else report.outcomes[pair]
            relay = decision.relay if decision and decision.relay else ""
            trial = report.trials.get(pair)
            lines.append(
                ",".join(
                    (
                        str(i),
                        f"{pair[0]}->{pair[1]}",
                        mode,
                        relay,
                        _fmt(trial.distance_m) if trial else "",
                        str(trial.sent) if trial else "0",
                        str(trial.received) if trial else "0",
                        _fmt(trial.efficiency_pct) if trial else "",
                    )
                )
            )
    _write_text(path, "\n".join(lines) + "\n")


def render_topology_figure(scenario, report: ScenarioReport, out_dir: str) -> str:
    """Node placement with the decided links drawn in."""
    from .protocol import Mode, NodeKind

    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    for node in scenario.nodes:
        x, y = node.position
        if node.kind is NodeKind.BTS:
            ax.plot(x, y, marker="^", markersize=12, color="tab:red")
        else:
            ax.plot(x, y, marker="o", markersize=8, color="tab:blue")
        ax.annotate(node.id, (x, y), textcoords="offset points", xytext=(6, 6))

    def pos(nid: str):
        return scenario.node(nid).position

    bts_id = scenario.bts.id
    for pair, decision in sorted(report.decisions.items()):
        a, b = pair
        if decision.mode is Mode.D2D_DIRECT:
            hops = [(a, b)]
        elif decision.mode is Mode.D2D_RELAYED:
            hops = [(a, decision.relay), (decision.relay, b)]
        else:
            hops = [(a, bts_id), (bts_id, b)]
        for u, v in hops:
            (x0, y0), (x1, y1) = pos(u), pos(v)
            ax.plot([x0, x1], [y0, y1], "k--", lw=1.0, alpha=0.7)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(True, alpha=0.3)
    path = os.path.join(out_dir, "scenario_topology.png")
    _save_figure(fig, path)
    return path


# --------------------------------------------------------------------------
# Lifetime report
# --------------------------------------------------------------------------

def lifetime_report_text(
    model: PowerModel, battery: Battery, duty_fractions: tuple[float, ...]
) -> str:
    active = lifetime_hours(battery, model.draw_d2d_on_w)
    standby = lifetime_hours(battery, model.draw_d2d_off_w)
    lines = [
        "Power and lifetime report",
        f"battery: {battery.capacity_wh:.2f} Wh at {battery.nominal_voltage_v:.1f} V",
        "",
        f"power consumption (D2D feature ON):  {1000 * model.draw_d2d_on_w:.1f} mW",
        f"power consumption (D2D feature OFF): {1000 * model.draw_d2d_off_w:.1f} mW",
        f"active time (D2D feature ON):        {active:.2f} h",
        f"standby time (D2D feature OFF):      {standby:.2f} h",
        "",
        "duty-cycle lifetimes (fraction of time with D2D on):",
    ]
    for fraction in duty_fractions:
        hours = duty_cycle_lifetime(model, battery, fraction)
        lines.append(f"  f={fraction:.2f}: {hours:.2f} h")
    return "\n".join(lines) + "\n"


def write_lifetime_report(
    model: PowerModel,
    battery: Battery,
    duty_fractions: tuple[float, ...],
    path: str,
) -> str:
    text = lifetime_report_text(model, battery, duty_fractions)
    _write_text(path, text)
    return text


def render_lifetime_figure(model: PowerModel, battery: Battery, out_dir: str) -> str:
    fractions = np.linspace(0.0, 1.0, 101)
    hours = [duty_cycle_lifetime(model, battery, f) for f in fractions]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(fractions, hours)
    ax.set_xlabel("fraction of time with D2D on")
    ax.set_ylabel("battery lifetime (h)")
    ax.grid(True, alpha=0.3)
    path = os.path.join(out_dir, "lifetime_vs_duty.png")
    _save_figure(fig, path)
    return path
