"""Energy and CO2 attribution for measured execution times.

Energy is modeled, never measured: wall-clock seconds times a configured
average power. Remote endpoints expose no power telemetry, so every
profile carries a source_note disclosing where its constants came from.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class PowerProfile:
    """Average draw and grid carbon intensity used to convert time to
    energy and emissions."""

    profile_id: str
    avg_power_w: float
    carbon_intensity_g_per_kwh: float
    source_note: str

    def __post_init__(self) -> None:
        if self.avg_power_w <= 0:
            raise ConfigError(f"avg_power_w must be > 0, got {self.avg_power_w}")
        if self.carbon_intensity_g_per_kwh < 0:
            raise ConfigError(
                f"carbon_intensity_g_per_kwh must be >= 0, got {self.carbon_intensity_g_per_kwh}"
            )


# Must be overridden in config for reportable runs; kept obviously inert.
PLACEHOLDER_PROFILE = PowerProfile(
    profile_id="placeholder",
    avg_power_w=1.0,
    carbon_intensity_g_per_kwh=0.0,
    source_note="Placeholder constants; configure a measured profile before reporting results.",
)


@dataclass(frozen=True)
class ResourceSummary:
    avg_exec_time_s: float
    avg_energy_wh: float
    total_co2_g: float


def energy_wh(exec_time_s: float, profile: PowerProfile) -> float:
    """Watt-hours for one execution: avg_power_w * exec_time_s / 3600.

    Evaluated as (exec_time_s / 3600) * avg_power_w so that a one-hour
    execution yields exactly avg_power_w watt-hours.
    """
    if exec_time_s < 0:
        raise ValueError(f"exec_time_s must be >= 0, got {exec_time_s}")
    return exec_time_s / 3600.0 * profile.avg_power_w


def co2_grams(energy: float, profile: PowerProfile) -> float:
    """Grams of CO2-equivalent: (energy_wh / 1000) * carbon intensity."""
    if energy < 0:
        raise ValueError(f"energy must be >= 0, got {energy}")
    return energy / 1000.0 * profile.carbon_intensity_g_per_kwh


def aggregate_resources(outcomes: list, profile: PowerProfile) -> ResourceSummary:
    """Mean execution time, energy at that mean, and summed emissions.

    avg_energy_wh is the energy of the average execution time; total_co2_g
    sums per-outcome emissions.
    """
    if not outcomes:
        raise ValueError("cannot aggregate resources over zero outcomes")
    avg_time = math.fsum(o.exec_time_s for o in outcomes) / len(outcomes)
    total_co2 = math.fsum(co2_grams(energy_wh(o.exec_time_s, profile), profile) for o in outcomes)
    return ResourceSummary(
        avg_exec_time_s=avg_time,
        avg_energy_wh=energy_wh(avg_time, profile),
        total_co2_g=total_co2,
    )


def load_power_profile(path: str | Path) -> PowerProfile:
    """Load a power profile from a JSON file with keys profile_id,
    avg_power_w, carbon_intensity_g_per_kwh, source_note."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"power profile file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"power profile {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"power profile {path} must be a JSON object")
    required = {"profile_id", "avg_power_w", "carbon_intensity_g_per_kwh", "source_note"}
    missing = required - raw.keys()
    if missing:
        raise ConfigError(f"power profile {path} missing fields: {sorted(missing)}")
    unknown = raw.keys() - required
    if unknown:
        raise ConfigError(f"power profile {path} has unknown fields: {sorted(unknown)}")
    try:
        return PowerProfile(
            profile_id=str(raw["profile_id"]),
            avg_power_w=float(raw["avg_power_w"]),
            carbon_intensity_g_per_kwh=float(raw["carbon_intensity_g_per_kwh"]),
            source_note=str(raw["source_note"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"power profile {path}: {exc}") from exc
