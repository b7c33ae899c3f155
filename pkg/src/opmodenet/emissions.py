"""Pollutant mass conversion from operating-mode distributions and link
activity, plus town/region aggregation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ValidationError
from .opmode import BIN_INDEX, CANONICAL_BINS, OpModeDistribution

log = logging.getLogger(__name__)

POLLUTANTS = ["CO", "NOx", "CO2", "PM2.5"]


@dataclass(frozen=True)
class EmissionRateTable:
    """Grams per vehicle-hour by (pollutant, bin), ingested from CSV."""

    pollutants: tuple[str, ...]
    rates: dict[str, np.ndarray]  # pollutant -> 23-vector indexed like CANONICAL_BINS
    source: str = ""

    def rate(self, pollutant: str, bin_id: int) -> float:
        return float(self.rates[pollutant][BIN_INDEX[bin_id]])


def _bundled_rates() -> Path:
    from importlib import resources

    return Path(str(resources.files("opmodenet") / "data" / "emission_rates.csv"))


def load_rates(path: str | Path | None = None) -> EmissionRateTable:
    """Load and validate a rate table; every (pollutant, bin) must be present."""
    path = Path(path) if path is not None else _bundled_rates()
    seen: dict[tuple[str, int], float] = {}
    duplicates = 0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pollutant = row["pollutant"].strip()
            bin_id = int(row["bin_id"])
            rate = float(row["g_per_veh_hr"])
            if rate < 0:
                raise ValidationError(f"negative rate for ({pollutant}, {bin_id})")
            if (pollutant, bin_id) in seen:
                duplicates += 1
            seen[(pollutant, bin_id)] = rate  # last wins
    if duplicates:
        log.warning("%d duplicate rate rows; last occurrence wins", duplicates)
    pollutants = tuple(sorted({p for p, _ in seen}))
    missing = [
        (p, b) for p in pollutants for b in CANONICAL_BINS if (p, b) not in seen
    ]
    if missing:
        raise ValidationError(f"rate table incomplete; missing pairs: {missing}")
    rates = {
        p: np.array([seen[(p, b)] for b in CANONICAL_BINS]) for p in pollutants
    }
    return EmissionRateTable(pollutants=pollutants, rates=rates, source=str(path))


@dataclass(frozen=True)
class LinkEmissions:
    link_id: str
    town: str | None
    activity_veh_hr: float  # vehicle-hours accrued on the link per hour
    grams_per_hr: dict[str, float]


def link_emissions(
    link_id: str,
    dist: OpModeDistribution,
    activity_veh_hr: float,
    rates: EmissionRateTable,
    town: str | None = None,
) -> LinkEmissions:
    """grams/hr per pollutant: activity times the rate expectation under the
    distribution."""
    if activity_veh_hr < 0:
        raise DomainError(f"activity must be >= 0, got {activity_veh_hr}")
    grams = {
        p: activity_veh_hr * float(dist.fractions @ rates.rates[p])
        for p in rates.pollutants
    }
    return LinkEmissions(link_id=link_id, town=town, activity_veh_hr=activity_veh_hr, grams_per_hr=grams)


def activity_veh_hr(peak_hour_flow_vph: float, travel_time_s: float) -> float:
    """Vehicle-hours spent on the link per hour of peak flow."""
    return peak_hour_flow_vph * travel_time_s / 3600.0


def aggregate(emissions: list[LinkEmissions], grouping: str = "town") -> dict[str, dict[str, float]]:
    """Per-group per-pollutant sums; summation order fixed by link id."""
    if grouping not in ("town", "region"):
        raise DomainError(f"unknown grouping {grouping!r}")
    ordered = sorted(emissions, key=lambda e: e.link_id)
    totals: dict[str, dict[str, float]] = {}
    for e in ordered:
        if grouping == "region":
            key = "region"
        elif e.town is None:
            log.warning("link %s has no town; grouped as 'unassigned'", e.link_id)
            key = "unassigned"
        else:
            key = e.town
        bucket = totals.setdefault(key, {})
        for pollutant, grams in e.grams_per_hr.items():
            bucket[pollutant] = bucket.get(pollutant, 0.0) + grams
    return totals
