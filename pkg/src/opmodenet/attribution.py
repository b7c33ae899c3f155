"""Assignment of smoothed per-second records to links and coverage filtering."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geo import MPH_PER_MPS
from .gpx import TraceSegment

MIN_LINK_LENGTH_M = 50.0
MIN_COVERAGE_S = 120.0
MAX_PLAUSIBLE_SPEED_MPH = 100.0


@dataclass(frozen=True)
class LinkSecondRecord:
    link_id: str
    t: float
    speed_mph: float
    accel_mphps: float
    grade: float


def is_plausible_vehicle(segment: TraceSegment, max_speed_mph: float = MAX_PLAUSIBLE_SPEED_MPH) -> bool:
    """Sanity gate rejecting segments that move implausibly fast."""
    if segment.smoothed is None:
        return True
    return max(segment.smoothed.speed, default=0.0) * MPH_PER_MPS <= max_speed_mph


def attribute_seconds(
    segment: TraceSegment,
    link_lengths: dict[str, float],
    link_grades: dict[str, float],
) -> list[LinkSecondRecord]:
    """One record per grid second, assigned to the link containing its position."""
    if segment.smoothed is None or segment.route_links is None:
        raise DomainError(f"{segment.segment_id}: segment not matched/smoothed")
    bounds = np.cumsum([link_lengths[l] for l in segment.route_links])
    route_total = float(bounds[-1])
    records = []
    for t, s, v, a in zip(
        segment.smoothed.t, segment.smoothed.s, segment.smoothed.speed, segment.smoothed.accel
    ):
        s_clamped = min(max(s, 0.0), route_total - 1e-9)
        idx = int(np.searchsorted(bounds, s_clamped, side="right"))
        link_id = segment.route_links[min(idx, len(segment.route_links) - 1)]
        records.append(
            LinkSecondRecord(
                link_id=link_id,
                t=t,
                speed_mph=v * MPH_PER_MPS,
                accel_mphps=a * MPH_PER_MPS,
                grade=link_grades.get(link_id, 0.0),
            )
        )
    return records


def filter_links(
    records: list[LinkSecondRecord],
    link_lengths: dict[str, float],
    min_length_m: float = MIN_LINK_LENGTH_M,
    min_coverage_s: float = MIN_COVERAGE_S,
) -> dict[str, list[LinkSecondRecord]]:
    """Group records by link, keeping links long enough with enough coverage.

    Thresholds are strict: length must exceed `min_length_m` and cumulative
    duration must exceed `min_coverage_s`.
    """
    by_link: dict[str, list[LinkSecondRecord]] = defaultdict(list)
    for rec in records:
        by_link[rec.link_id].append(rec)
    return {
        link_id: recs
        for link_id, recs in sorted(by_link.items())
        if link_lengths.get(link_id, 0.0) > min_length_m and len(recs) > min_coverage_s
    }
