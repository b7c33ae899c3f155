"""GPX ingestion: raw traces and temporal-gap segmentation."""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import ParseError

log = logging.getLogger(__name__)

DEFAULT_MAX_GAP_S = 180.0


@dataclass(frozen=True)
class TracePoint:
    t: float  # seconds since epoch
    lat: float
    lon: float


@dataclass(frozen=True)
class RawTrace:
    trace_id: str
    points: list[TracePoint]
    device_meta: str | None = None


@dataclass
class ParseReport:
    dropped_points: int = 0
    skipped_tracks: list[str] = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.skipped_tracks is None:
            self.skipped_tracks = []


def _parse_time(text: str) -> float:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_traces(document: str, source_id: str = "gpx") -> tuple[list[RawTrace], ParseReport]:
    """Parse GPX 1.0/1.1 text into one RawTrace per track segment.

    Points breaking strict timestamp monotonicity are dropped and counted;
    segments left with fewer than two usable points are skipped with a reason.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise ParseError(f"unparseable GPX: {exc}") from exc

    report = ParseReport()
    traces: list[RawTrace] = []
    trk_index = 0
    for trk in root.iter():
        if _localname(trk.tag) != "trk":
            continue
        seg_index = 0
        for seg in trk.iter():
            if _localname(seg.tag) != "trkseg":
                continue
            trace_id = f"{source_id}:trk{trk_index}:seg{seg_index}"
            seg_index += 1
            points: list[TracePoint] = []
            for pt in seg:
                if _localname(pt.tag) != "trkpt":
                    continue
                time_el = None
                for child in pt:
                    if _localname(child.tag) == "time":
                        time_el = child
                        break
                if time_el is None or not time_el.text:
                    report.dropped_points += 1
                    continue
                try:
                    t = _parse_time(time_el.text)
                    lat = float(pt.attrib["lat"])
                    lon = float(pt.attrib["lon"])
                except (ValueError, KeyError):
                    report.dropped_points += 1
                    continue
                if points and t <= points[-1].t:
                    report.dropped_points += 1
                    continue
                points.append(TracePoint(t, lat, lon))
            if len(points) < 2:
                report.skipped_tracks.append(f"{trace_id}: fewer than 2 usable points")
                continue
            traces.append(RawTrace(trace_id=trace_id, points=points))
        trk_index += 1
    return traces, report


@dataclass
class TraceSegment:
    """A gap-free run of points from one trace.

    Matching and smoothing results are attached by the later stages:
    `matched_links` aligns one link id (or None) per point, `route_links` is
    the decoded connected link sequence, `arc_s` the per-point position along
    the route, and `smoothed` the uniform 1 s (t, s, speed, accel) grid.
    """

    segment_id: str
    parent_trace_id: str
    points: list[TracePoint]
    matched_links: list[str | None] = None  # type: ignore[assignment]
    route_links: list[str] = None  # type: ignore[assignment]
    arc_s: list[float] = None  # type: ignore[assignment]
    smoothed: "SmoothedSeries | None" = None


@dataclass(frozen=True)
class SmoothedSeries:
    t: "list[float]"  # integer-second grid
    s: "list[float]"  # position along route, m
    speed: "list[float]"  # m/s, clamped >= 0
    accel: "list[float]"  # m/s^2
    fallback_global_fit: bool = False


def segment_gaps(trace: RawTrace, max_gap_s: float = DEFAULT_MAX_GAP_S) -> list[TraceSegment]:
    """Split a trace at inter-point gaps strictly exceeding `max_gap_s`.

    The threshold is inclusive: a gap of exactly `max_gap_s` does not split.
    Sub-threshold gaps are retained for smoothing-based imputation. Segments
    with fewer than two points are discarded.
    """
    runs: list[list[TracePoint]] = [[trace.points[0]]]
    for prev, cur in zip(trace.points[:-1], trace.points[1:]):
        if cur.t - prev.t > max_gap_s:
            runs.append([])
        runs[-1].append(cur)
    segments = []
    for i, run in enumerate(runs):
        if len(run) < 2:
            continue
        segments.append(
            TraceSegment(
                segment_id=f"{trace.trace_id}#{i}",
                parent_trace_id=trace.trace_id,
                points=run,
            )
        )
    return segments
