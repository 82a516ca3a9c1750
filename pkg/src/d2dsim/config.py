"""Scenario document parsing and rendering.

A scenario is a single JSON document; every key has a default except the
node list.  Unknown keys are rejected with the offending key path so typos
never silently change an experiment.  ``parse_scenario(render_scenario(s))``
reproduces ``s`` exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any

from .channel import (
    DEFAULT_TEMPLATES,
    CalibrationAnchor,
    Composition,
    LinkKind,
    RadioProfile,
)
from .energy import Battery, PowerModel
from .engine import (
    PowerConfig,
    Scenario,
    SweepConfig,
    ThresholdTargets,
    TrialConfig,
)
from .errors import CalibrationError, ValidationError
from .protocol import NodeKind, NodeRecord, Thresholds

_PROFILE_FIELDS = {
    f.name for f in fields(RadioProfile) if f.name != "link_kind"
}


def _fail(path: str, message: str) -> None:
    raise ValidationError(f"{path}: {message}")


def _check_keys(obj: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        _fail(f"{path}.{unknown[0]}", "unknown key")


def _number(obj: dict, key: str, path: str, default: float | None = None) -> float:
    if key not in obj:
        if default is None:
            _fail(f"{path}.{key}", "required number missing")
        return float(default)
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"{path}.{key}", f"expected a number, got {type(v).__name__}")
    return float(v)


def _integer(obj: dict, key: str, path: str, default: int | None = None) -> int:
    if key not in obj:
        if default is None:
            _fail(f"{path}.{key}", "required integer missing")
        return int(default)
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(f"{path}.{key}", f"expected an integer, got {type(v).__name__}")
    return v


def _string(obj: dict, key: str, path: str) -> str:
    v = obj.get(key)
    if not isinstance(v, str) or not v:
        _fail(f"{path}.{key}", "expected a non-empty string")
    return v


def _link_kind(name: str, path: str) -> LinkKind:
    try:
        return LinkKind(name)
    except ValueError:
        _fail(path, f"unknown link class {name!r} (use 'bts_ue' or 'd2d')")


def _composition(name: str, path: str) -> Composition:
    try:
        return Composition(name)
    except ValueError:
        _fail(path, f"unknown composition {name!r}")


def _parse_nodes(items: Any, path: str) -> list[NodeRecord]:
    if not isinstance(items, list) or not items:
        _fail(path, "expected a non-empty list of nodes")
    nodes = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        if not isinstance(item, dict):
            _fail(p, "expected an object")
        _check_keys(item, {"id", "kind", "x", "y"}, p)
        kind_name = _string(item, "kind", p)
        if kind_name not in ("bts", "ue"):
            _fail(f"{p}.kind", f"must be 'bts' or 'ue', got {kind_name!r}")
        nodes.append(
            NodeRecord(
                id=_string(item, "id", p),
                kind=NodeKind(kind_name),
                position=(_number(item, "x", p), _number(item, "y", p)),
            )
        )
    return nodes


def _parse_pairs(items: Any, path: str) -> list[tuple[str, str]]:
    if not isinstance(items, list):
        _fail(path, "expected a list of [src, dst] pairs")
    pairs = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        if (
            not isinstance(item, list)
            or len(item) != 2
            or not all(isinstance(x, str) for x in item)
        ):
            _fail(p, "expected a two-element list of node ids")
        pairs.append((item[0], item[1]))
    return pairs


def _parse_profile(kind: LinkKind, obj: Any, path: str) -> RadioProfile:
    if not isinstance(obj, dict):
        _fail(path, "expected an object of profile parameters")
    _check_keys(obj, _PROFILE_FIELDS, path)
    template = DEFAULT_TEMPLATES[kind]
    values = {
        name: _number(obj, name, path, default=getattr(template, name))
        for name in _PROFILE_FIELDS
    }
    return replace(template, **values)


def _parse_profiles(obj: Any, path: str) -> dict[LinkKind, RadioProfile]:
    if not isinstance(obj, dict):
        _fail(path, "expected an object keyed by link class")
    out = {}
    for name in sorted(obj):
        kind = _link_kind(name, f"{path}.{name}")
        out[kind] = _parse_profile(kind, obj[name], f"{path}.{name}")
    return out


def _parse_anchors(items: Any, path: str) -> list[CalibrationAnchor]:
    if not isinstance(items, list):
        _fail(path, "expected a list of anchors")
    anchors = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]"
        if not isinstance(item, dict):
            _fail(p, "expected an object")
        _check_keys(item, {"link", "composition", "distance_m", "efficiency_pct"}, p)
        anchors.append(
            CalibrationAnchor(
                link_kind=_link_kind(_string(item, "link", p), f"{p}.link"),
                composition=_composition(
                    item.get("composition", "single_hop"), f"{p}.composition"
                ),
                distance_m=_number(item, "distance_m", p),
                efficiency_pct=_number(item, "efficiency_pct", p),
            )
        )
    return anchors


def _parse_trial(obj: Any, path: str) -> TrialConfig:
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    _check_keys(
        obj,
        {"packet_payload_bytes", "overhead_bytes", "packets_per_trial",
         "retries_per_hop", "data_rate_baud"},
        path,
    )
    d = TrialConfig()
    return TrialConfig(
        packet_payload_bytes=_integer(obj, "packet_payload_bytes", path, d.packet_payload_bytes),
        overhead_bytes=_integer(obj, "overhead_bytes", path, d.overhead_bytes),
        packets_per_trial=_integer(obj, "packets_per_trial", path, d.packets_per_trial),
        retries_per_hop=_integer(obj, "retries_per_hop", path, d.retries_per_hop),
        data_rate_baud=_number(obj, "data_rate_baud", path, d.data_rate_baud),
    )


def _parse_power(obj: Any, path: str) -> PowerConfig:
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    _check_keys(
        obj, {"draw_d2d_on_w", "draw_d2d_off_w", "battery", "duty_fractions"}, path
    )
    model_default = PowerModel()
    model = PowerModel(
        draw_d2d_on_w=_number(obj, "draw_d2d_on_w", path, model_default.draw_d2d_on_w),
        draw_d2d_off_w=_number(obj, "draw_d2d_off_w", path, model_default.draw_d2d_off_w),
    )
    battery_default = Battery()
    battery = battery_default
    if "battery" in obj:
        bobj = obj["battery"]
        bpath = f"{path}.battery"
        if not isinstance(bobj, dict):
            _fail(bpath, "expected an object")
        _check_keys(bobj, {"capacity_wh", "nominal_voltage_v"}, bpath)
        battery = Battery(
            capacity_wh=_number(bobj, "capacity_wh", bpath, battery_default.capacity_wh),
            nominal_voltage_v=_number(
                bobj, "nominal_voltage_v", bpath, battery_default.nominal_voltage_v
            ),
        )
    fractions = PowerConfig().duty_fractions
    if "duty_fractions" in obj:
        raw = obj["duty_fractions"]
        if not isinstance(raw, list):
            _fail(f"{path}.duty_fractions", "expected a list of numbers")
        fractions = tuple(
            _number({"f": v}, "f", f"{path}.duty_fractions[{i}]")
            for i, v in enumerate(raw)
        )
    return PowerConfig(model=model, battery=battery, duty_fractions=fractions)


def _parse_distances(obj: Any, path: str) -> tuple[float, ...]:
    if isinstance(obj, list):
        out = []
        for i, v in enumerate(obj):
            out.append(_number({"d": v}, "d", f"{path}[{i}]"))
        return tuple(out)
    if isinstance(obj, dict):
        _check_keys(obj, {"start", "stop", "step"}, path)
        start = _number(obj, "start", path)
        stop = _number(obj, "stop", path)
        step = _number(obj, "step", path)
        if step <= 0 or stop < start:
            _fail(path, "need step > 0 and stop >= start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(start + i * step for i in range(n))
    _fail(path, "expected a list or a {start, stop, step} object")


def _parse_sweep(obj: Any, path: str) -> SweepConfig:
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    _check_keys(obj, {"links", "compositions", "distances", "packets_per_point"}, path)
    default = SweepConfig()
    links = default.links
    if "links" in obj:
        raw = obj["links"]
        if not isinstance(raw, list) or not raw:
            _fail(f"{path}.links", "expected a non-empty list of link classes")
        links = tuple(_link_kind(v, f"{path}.links[{i}]") for i, v in enumerate(raw))
    compositions = default.compositions
    if "compositions" in obj:
        raw = obj["compositions"]
        if not isinstance(raw, list) or not raw:
            _fail(f"{path}.compositions", "expected a non-empty list")
        compositions = tuple(
            _composition(v, f"{path}.compositions[{i}]") for i, v in enumerate(raw)
        )
    distances = default.distances
    if "distances" in obj:
        distances = _parse_distances(obj["distances"], f"{path}.distances")
    packets = None
    if "packets_per_point" in obj and obj["packets_per_point"] is not None:
        packets = _integer(obj, "packets_per_point", path)
    return SweepConfig(
        links=links, compositions=compositions, distances=distances,
        packets_per_point=packets,
    )


def _parse_thresholds(obj: Any, path: str) -> Thresholds:
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    _check_keys(
        obj,
        {"direct_rssi_dbm", "relay_hop_rssi_dbm", "cell_rssi_dbm", "beacon_min_samples"},
        path,
    )
    return Thresholds(
        direct_rssi_dbm=_number(obj, "direct_rssi_dbm", path),
        relay_hop_rssi_dbm=_number(obj, "relay_hop_rssi_dbm", path),
        cell_rssi_dbm=_number(obj, "cell_rssi_dbm", path),
        beacon_min_samples=_integer(obj, "beacon_min_samples", path, 5),
    )


def _parse_targets(obj: Any, path: str) -> ThresholdTargets:
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    _check_keys(obj, {"direct_eff_pct", "cell_eff_pct", "beacon_min_samples"}, path)
    d = ThresholdTargets()
    return ThresholdTargets(
        direct_eff_pct=_number(obj, "direct_eff_pct", path, d.direct_eff_pct),
        cell_eff_pct=_number(obj, "cell_eff_pct", path, d.cell_eff_pct),
        beacon_min_samples=_integer(obj, "beacon_min_samples", path, d.beacon_min_samples),
    )


def _parse_calibration_options(obj: Any, path: str) -> dict[str, float]:
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    _check_keys(obj, {"fixed"}, path)
    fixed_raw = obj.get("fixed", {})
    if not isinstance(fixed_raw, dict):
        _fail(f"{path}.fixed", "expected an object of parameter overrides")
    fixed = {}
    for name in sorted(fixed_raw):
        if name not in _PROFILE_FIELDS:
            _fail(f"{path}.fixed.{name}", "unknown profile parameter")
        fixed[name] = _number(fixed_raw, name, f"{path}.fixed")
    return fixed


_TOP_KEYS = {
    "seed", "horizon_s", "nodes", "pairs", "profiles", "profiles_from",
    "anchors", "calibration", "thresholds", "threshold_targets", "trial",
    "power", "sweep",
}


def load_calibration_profiles(path: str) -> dict[LinkKind, RadioProfile]:
    """Read the profiles section of a calibration artifact file."""
    if not os.path.exists(path):
        raise CalibrationError(
            f"calibration artifact {path!r} not found; run `sim calibrate` first"
        )
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read calibration artifact {path!r}: {exc}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"calibration artifact {path!r} is not valid JSON: {exc}")
    if not isinstance(doc, dict) or "profiles" not in doc:
        raise ValidationError(
            f"calibration artifact {path!r} has no 'profiles' section"
        )
    return _parse_profiles(doc["profiles"], "profiles")


@dataclass
class ParsedDocument:
    """A validated scenario plus the sections individual commands consume."""

    scenario: Scenario
    calibration_fixed: dict[str, float]
    profiles_from: str | None

    def resolve_profiles(self) -> Scenario:
        """Load a referenced calibration artifact into the scenario, if any.

        Deferred so that commands which do not need profiles (calibrate,
        lifetime) can run before the artifact exists.
        """
        if self.scenario.profiles is not None or self.profiles_from is None:
            return self.scenario
        return replace(
            self.scenario, profiles=load_calibration_profiles(self.profiles_from)
        )


def parse_scenario(document: str | dict, base_dir: str | None = None) -> ParsedDocument:
    """Validate a scenario document and build the Scenario with defaults.

    ``document`` is JSON text or an already-decoded object; ``base_dir``
    resolves a relative ``profiles_from`` reference.
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ValidationError(
                f"document is not valid JSON (line {exc.lineno}, column {exc.colno}): "
                f"{exc.msg}"
            )
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ValidationError("top level: expected a JSON object")
    _check_keys(doc, _TOP_KEYS, "top level")

    nodes = _parse_nodes(doc.get("nodes"), "nodes")

    if "pairs" in doc:
        pairs = _parse_pairs(doc["pairs"], "pairs")
    else:
        ue_ids = [n.id for n in nodes if n.kind is NodeKind.UE]
        pairs = [(ue_ids[0], ue_ids[1])] if len(ue_ids) >= 2 else []

    profiles = None
    profiles_from = None
    if "profiles" in doc and "profiles_from" in doc:
        _fail("profiles_from", "give either inline profiles or a reference, not both")
    if "profiles" in doc:
        profiles = _parse_profiles(doc["profiles"], "profiles")
    elif "profiles_from" in doc:
        ref = _string(doc, "profiles_from", "top level")
        if not os.path.isabs(ref) and base_dir:
            ref = os.path.join(base_dir, ref)
        profiles_from = ref

    from .channel import default_anchors

    anchors = (
        _parse_anchors(doc["anchors"], "anchors")
        if "anchors" in doc
        else default_anchors()
    )
    fixed = (
        _parse_calibration_options(doc["calibration"], "calibration")
        if "calibration" in doc
        else {}
    )

    thresholds = (
        _parse_thresholds(doc["thresholds"], "thresholds")
        if "thresholds" in doc
        else None
    )
    targets = (
        _parse_targets(doc["threshold_targets"], "threshold_targets")
        if "threshold_targets" in doc
        else ThresholdTargets()
    )
    trial = _parse_trial(doc.get("trial", {}), "trial")
    power = _parse_power(doc.get("power", {}), "power")
    sweep = _parse_sweep(doc["sweep"], "sweep") if "sweep" in doc else None

    seed = _integer(doc, "seed", "top level", 42)
    horizon = _number(doc, "horizon_s", "top level", 120.0)

    scenario = Scenario(
        nodes=nodes,
        pairs=pairs,
        profiles=profiles,
        thresholds=thresholds,
        threshold_targets=targets,
        trial=trial,
        power=power,
        anchors=anchors,
        sweep=sweep,
        seed=seed,
        horizon_s=horizon,
    )
    return ParsedDocument(
        scenario=scenario, calibration_fixed=fixed, profiles_from=profiles_from
    )


def profile_to_dict(profile: RadioProfile) -> dict:
    d = asdict(profile)
    d.pop("link_kind")
    return d


def render_scenario(scenario: Scenario, fixed: dict[str, float] | None = None) -> dict:
    """Canonical document for a scenario; inverse of parse_scenario."""
    doc: dict[str, Any] = {
        "seed": scenario.seed,
        "horizon_s": scenario.horizon_s,
        "nodes": [
            {"id": n.id, "kind": n.kind.value, "x": n.position[0], "y": n.position[1]}
            for n in scenario.nodes
        ],
        "pairs": [[a, b] for a, b in scenario.pairs],
        "anchors": [
            {
                "link": a.link_kind.value,
                "composition": a.composition.value,
                "distance_m": a.distance_m,
                "efficiency_pct": a.efficiency_pct,
            }
            for a in scenario.anchors
        ],
        "threshold_targets": {
            "direct_eff_pct": scenario.threshold_targets.direct_eff_pct,
            "cell_eff_pct": scenario.threshold_targets.cell_eff_pct,
            "beacon_min_samples": scenario.threshold_targets.beacon_min_samples,
        },
        "trial": {
            "packet_payload_bytes": scenario.trial.packet_payload_bytes,
            "overhead_bytes": scenario.trial.overhead_bytes,
            "packets_per_trial": scenario.trial.packets_per_trial,
            "retries_per_hop": scenario.trial.retries_per_hop,
            "data_rate_baud": scenario.trial.data_rate_baud,
        },
        "power": {
            "draw_d2d_on_w": scenario.power.model.draw_d2d_on_w,
            "draw_d2d_off_w": scenario.power.model.draw_d2d_off_w,
            "battery": {
                "capacity_wh": scenario.power.battery.capacity_wh,
                "nominal_voltage_v": scenario.power.battery.nominal_voltage_v,
            },
            "duty_fractions": list(scenario.power.duty_fractions),
        },
    }
    if scenario.profiles is not None:
        doc["profiles"] = {
            kind.value: profile_to_dict(profile)
            for kind, profile in sorted(scenario.profiles.items(), key=lambda kv: kv[0].value)
        }
    if scenario.thresholds is not None:
        t = scenario.thresholds
        doc["thresholds"] = {
            "direct_rssi_dbm": t.direct_rssi_dbm,
            "relay_hop_rssi_dbm": t.relay_hop_rssi_dbm,
            "cell_rssi_dbm": t.cell_rssi_dbm,
            "beacon_min_samples": t.beacon_min_samples,
        }
    if scenario.sweep is not None:
        s = scenario.sweep
        doc["sweep"] = {
            "links": [k.value for k in s.links],
            "compositions": [c.value for c in s.compositions],
            "distances": list(s.distances),
            "packets_per_point": s.packets_per_point,
        }
    if fixed:
        doc["calibration"] = {"fixed": dict(sorted(fixed.items()))}
    return doc
