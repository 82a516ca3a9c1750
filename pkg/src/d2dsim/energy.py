"""Power-state and battery model.

Two flat draw levels (D2D radio powered vs. not) integrated over per-node
state traces, plus the closed-form lifetime figures for a reference battery.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import DomainError

DEFAULT_DRAW_D2D_ON_W = 0.3852
DEFAULT_DRAW_D2D_OFF_W = 0.234
DEFAULT_BATTERY_CAPACITY_WH = 5.3
DEFAULT_BATTERY_VOLTAGE_V = 3.6


class PowerState(Enum):
    D2D_ON = "d2d_on"
    D2D_OFF = "d2d_off"


@dataclass(frozen=True)
class PowerModel:
    """Average draw per power state, in watts."""

    draw_d2d_on_w: float = DEFAULT_DRAW_D2D_ON_W
    draw_d2d_off_w: float = DEFAULT_DRAW_D2D_OFF_W

    def __post_init__(self) -> None:
        if not self.draw_d2d_on_w > self.draw_d2d_off_w > 0:
            raise DomainError(
                "power draws must satisfy draw_d2d_on_w > draw_d2d_off_w > 0, "
                f"got {self.draw_d2d_on_w} / {self.draw_d2d_off_w}"
            )

    def draw_w(self, state: PowerState) -> float:
        return self.draw_d2d_on_w if state is PowerState.D2D_ON else self.draw_d2d_off_w


@dataclass(frozen=True)
class Battery:
    capacity_wh: float = DEFAULT_BATTERY_CAPACITY_WH
    nominal_voltage_v: float = DEFAULT_BATTERY_VOLTAGE_V
    remaining_wh: float | None = None

    def __post_init__(self) -> None:
        if self.capacity_wh <= 0 or self.nominal_voltage_v <= 0:
            raise DomainError("battery capacity and voltage must be > 0")
        if self.remaining_wh is None:
            object.__setattr__(self, "remaining_wh", self.capacity_wh)
        if not 0 <= self.remaining_wh <= self.capacity_wh:
            raise DomainError(
                f"remaining_wh {self.remaining_wh} outside [0, {self.capacity_wh}]"
            )


@dataclass
class PowerTrace:
    """Contiguous (state, duration) segments for one node."""

    segments: list[tuple[PowerState, float]] = field(default_factory=list)

    def append(self, state: PowerState, duration_s: float) -> None:
        if duration_s < 0:
            raise DomainError(f"segment duration must be >= 0, got {duration_s}")
        self.segments.append((state, duration_s))

    def total_s(self) -> float:
        return sum(d for _, d in self.segments)

    def time_in_s(self, state: PowerState) -> float:
        return sum(d for s, d in self.segments if s is state)


def lifetime_hours(battery: Battery, draw_w: float) -> float:
    """Hours until the battery is empty at a constant draw."""
    if draw_w <= 0:
        raise DomainError(f"draw must be > 0, got {draw_w}")
    return battery.capacity_wh / draw_w


def consume(
    trace: PowerTrace, model: PowerModel, battery: Battery
) -> tuple[Battery, bool]:
    """Integrate a trace against the model; returns (battery, depleted flag).

    The remaining charge is floored at zero; the flag reports whether the
    floor was hit.
    """
    used_wh = sum(
        model.draw_w(state) * duration / 3600.0 for state, duration in trace.segments
    )
    remaining = battery.remaining_wh - used_wh
    depleted = remaining <= 0.0
    return replace(battery, remaining_wh=max(remaining, 0.0)), depleted


def duty_cycle_lifetime(
    model: PowerModel, battery: Battery, fraction_d2d_on: float
) -> float:
    """Lifetime in hours when the D2D radio is on for a fraction of the time."""
    if not 0.0 <= fraction_d2d_on <= 1.0:
        raise DomainError(f"fraction must be in [0, 1], got {fraction_d2d_on}")
    mixed_draw = (
        fraction_d2d_on * model.draw_d2d_on_w
        + (1.0 - fraction_d2d_on) * model.draw_d2d_off_w
    )
    return battery.capacity_wh / mixed_draw
