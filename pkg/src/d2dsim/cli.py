"""Command-line front end.

    sim <command> --input <scenario.json> --out <dir> [--seed N] [--replications N]

Commands: ``calibrate`` (solve channel profiles against the range anchors),
``sweep`` (packet trials over distances, CSV + figures), ``scenario`` (full
protocol run, JSON/CSV report + topology figure), ``lifetime`` (power and
battery report).  Exit codes: 0 success, 2 validation error, 3 calibration
error, 4 runtime/solver error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import report as report_mod
from . import rng
from .channel import calibrate
from .config import ParsedDocument, parse_scenario
from .engine import SweepConfig, TrialStats, run_range_sweep, run_scenario
from .errors import (
    CalibrationError,
    DomainError,
    SimError,
    ValidationError,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CALIBRATION = 3
EXIT_RUNTIME = 4

COMMANDS = ("calibrate", "sweep", "scenario", "lifetime")


@dataclass(frozen=True)
class RunConfig:
    command: str
    input_path: str
    output_dir: str
    seed_override: int | None = None
    replications: int = 1
    trace: bool = False

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")


def _load_document(config: RunConfig) -> ParsedDocument:
    try:
        with open(config.input_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read input {config.input_path!r}: {exc}")
    parsed = parse_scenario(text, base_dir=os.path.dirname(config.input_path))
    if config.seed_override is not None:
        parsed.scenario = replace(parsed.scenario, seed=config.seed_override)
    return parsed


def _replication_seed(base_seed: int, index: int) -> int:
    # Replication 0 runs on the scenario seed itself so single runs stay
    # reproducible from the document alone.
    if index == 0:
        return base_seed
    return rng.derive_seed(base_seed, "replication", index)


def cmd_calibrate(config: RunConfig) -> list[str]:
    parsed = _load_document(config)
    scenario = parsed.scenario
    retries = scenario.trial.retries_per_hop
    profiles = calibrate(
        scenario.anchors, fixed=parsed.calibration_fixed, retries_per_hop=retries
    )
    verification = report_mod.verification_table(profiles, scenario.anchors, retries)
    os.makedirs(config.output_dir, exist_ok=True)
    artifact = os.path.join(config.output_dir, "calibration.json")
    report_mod.write_calibration_artifact(profiles, verification, retries, artifact)
    figure = report_mod.render_calibration_figure(profiles, config.output_dir)
    for row in verification:
        print(
            f"{row['link']} {row['composition']}: target {row['target_distance_m']} m "
            f"@ {row['efficiency_pct']}% -> achieved {row['achieved_range_m']} m "
            f"(tolerance {row['tolerance_m']} m)"
        )
    return [artifact, figure]


def _pooled_stats(per_rep: list[list[TrialStats]]) -> list[TrialStats]:
    pooled = []
    for stats in zip(*per_rep):
        sent = sum(t.sent for t in stats)
        received = sum(t.received for t in stats)
        samples = np.concatenate([np.asarray(t.rssi_samples, float) for t in stats])
        pooled.append(TrialStats.make(stats[0].distance_m, sent, received, samples))
    return pooled


def cmd_sweep(config: RunConfig) -> list[str]:
    scenario = _load_document(config).resolve_profiles()
    if scenario.profiles is None:
        raise CalibrationError(
            "scenario has no radio profiles; run `sim calibrate` first and "
            "reference its artifact via 'profiles_from' (or embed 'profiles')"
        )
    sweep = scenario.sweep if scenario.sweep is not None else SweepConfig()
    packets = sweep.packets_per_point

    rows = []
    for link in sweep.links:
        for composition in sweep.compositions:
            per_rep = []
            for i in range(config.replications):
                rep = replace(scenario, seed=_replication_seed(scenario.seed, i))
                per_rep.append(
                    run_range_sweep(
                        link, list(sweep.distances), rep,
                        composition=composition, packets=packets,
                    )
                )
            rows.extend(report_mod.sweep_rows(link, composition, _pooled_stats(per_rep)))

    os.makedirs(config.output_dir, exist_ok=True)
    csv_path = os.path.join(config.output_dir, "sweep.csv")
    report_mod.write_sweep_csv(rows, csv_path)
    figures = report_mod.render_sweep_figures(rows, config.output_dir)
    print(f"{len(rows)} sweep rows -> {csv_path}")
    return [csv_path, *figures]


def cmd_scenario(config: RunConfig) -> list[str]:
    scenario = _load_document(config).resolve_profiles()
    reports = []
    for i in range(config.replications):
        rep = replace(scenario, seed=_replication_seed(scenario.seed, i))
        reports.append(run_scenario(rep, collect_trace=config.trace and i == 0))

    os.makedirs(config.output_dir, exist_ok=True)
    json_path = os.path.join(config.output_dir, "scenario_report.json")
    report_mod.write_scenario_json(reports, json_path)
    csv_path = os.path.join(config.output_dir, "pairs.csv")
    report_mod.write_pairs_csv(reports, csv_path)
    figure = report_mod.render_topology_figure(scenario, reports[0], config.output_dir)
    written = [json_path, csv_path, figure]
    if config.trace:
        trace_path = os.path.join(config.output_dir, "trace.txt")
        with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(reports[0].trace or []) + "\n")
        written.append(trace_path)
    for pair, decision in sorted(reports[0].decisions.items()):
        relay = f" via {decision.relay}" if decision.relay else ""
        print(f"{pair[0]}->{pair[1]}: {decision.mode.value}{relay}")
    for pair, outcome in sorted(reports[0].outcomes.items()):
        print(f"{pair[0]}->{pair[1]}: {outcome}")
    return written


def cmd_lifetime(config: RunConfig) -> list[str]:
    power = _load_document(config).scenario.power
    os.makedirs(config.output_dir, exist_ok=True)
    txt_path = os.path.join(config.output_dir, "lifetime.txt")
    text = report_mod.write_lifetime_report(
        power.model, power.battery, power.duty_fractions, txt_path
    )
    figure = report_mod.render_lifetime_figure(power.model, power.battery, config.output_dir)
    print(text, end="")
    return [txt_path, figure]


_DISPATCH = {
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "scenario": cmd_scenario,
    "lifetime": cmd_lifetime,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sim",
        description="Desk-scale D2D communication simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("calibrate", "solve channel profiles against the range anchors"),
        ("sweep", "packet trials over a distance sweep (CSV + figures)"),
        ("scenario", "full protocol run (report JSON/CSV + topology figure)"),
        ("lifetime", "power draw and battery lifetime report"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--input", required=True, help="scenario JSON document")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the document seed")
        p.add_argument("--replications", type=int, default=1, help="independent repetitions")
        if name == "scenario":
            p.add_argument(
                "--trace", action="store_true",
                help="write the per-message trace of the first replication",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig(
            command=args.command,
            input_path=args.input,
            output_dir=args.out,
            seed_override=args.seed,
            replications=args.replications,
            trace=getattr(args, "trace", False),
        )
        written = _DISPATCH[config.command](config)
    except (ValidationError, DomainError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
