"""Per-second link attribution and coverage filtering."""

import pytest

from opmodenet.attribution import (
    LinkSecondRecord,
    attribute_seconds,
    filter_links,
    is_plausible_vehicle,
)
from opmodenet.errors import DomainError
from opmodenet.geo import MPH_PER_MPS
from opmodenet.gpx import SmoothedSeries, TracePoint, TraceSegment


def make_segment(t, s, speed, route):
    seg = TraceSegment(
        "x#0", "x", [TracePoint(float(ti), 42.0, -71.0) for ti in t], route_links=route
    )
    seg.smoothed = SmoothedSeries(
        t=list(t), s=list(s), speed=list(speed), accel=[0.0] * len(t)
    )
    return seg


class TestAttributeSeconds:
    def test_boundary_goes_to_next_link(self):
        seg = make_segment([0, 1, 2], [50.0, 100.0, 150.0], [50.0] * 3, ["A", "B"])
        recs = attribute_seconds(seg, {"A": 100.0, "B": 100.0}, {"A": 0.01, "B": -0.02})
        assert [r.link_id for r in recs] == ["A", "B", "B"]
        assert recs[0].grade == 0.01
        assert recs[1].grade == -0.02

    def test_positions_clamped_to_route(self):
        seg = make_segment([0, 1], [-5.0, 250.0], [10.0] * 2, ["A", "B"])
        recs = attribute_seconds(seg, {"A": 100.0, "B": 100.0}, {})
        assert [r.link_id for r in recs] == ["A", "B"]

    def test_speed_units_converted_to_mph(self):
        seg = make_segment([0, 1], [0.0, 10.0], [10.0, 10.0], ["A"])
        recs = attribute_seconds(seg, {"A": 100.0}, {})
        assert recs[0].speed_mph == pytest.approx(10.0 * MPH_PER_MPS)

    def test_unsmoothed_segment_rejected(self):
        seg = TraceSegment("x#0", "x", [TracePoint(0.0, 42.0, -71.0)])
        with pytest.raises(DomainError):
            attribute_seconds(seg, {}, {})


class TestPlausibility:
    def test_fast_segment_rejected(self):
        seg = make_segment([0, 1], [0.0, 50.0], [50.0, 50.0], ["A"])  # ~112 mph
        assert not is_plausible_vehicle(seg)

    def test_normal_segment_kept(self):
        seg = make_segment([0, 1], [0.0, 20.0], [20.0, 20.0], ["A"])  # ~45 mph
        assert is_plausible_vehicle(seg)

    def test_custom_threshold(self):
        seg = make_segment([0, 1], [0.0, 20.0], [20.0, 20.0], ["A"])
        assert not is_plausible_vehicle(seg, max_speed_mph=40.0)


def rec(link_id, t):
    return LinkSecondRecord(link_id, float(t), 30.0, 0.0, 0.0)


class TestFilterLinks:
    def test_thresholds_are_strict(self):
        records = [rec("A", i) for i in range(121)] + [rec("B", i) for i in range(120)]
        lengths = {"A": 50.1, "B": 500.0}
        kept = filter_links(records, lengths)
        assert list(kept) == ["A"]  # B has exactly 120 s -> excluded

    def test_short_link_excluded(self):
        records = [rec("A", i) for i in range(200)]
        assert filter_links(records, {"A": 50.0}) == {}  # exactly 50 m -> excluded

    def test_groups_sorted_by_link(self):
        records = [rec("B", i) for i in range(130)] + [rec("A", i) for i in range(130)]
        kept = filter_links(records, {"A": 100.0, "B": 100.0})
        assert list(kept) == ["A", "B"]

    def test_custom_thresholds(self):
        records = [rec("A", i) for i in range(15)]
        kept = filter_links(records, {"A": 60.0}, min_length_m=10.0, min_coverage_s=10.0)
        assert list(kept) == ["A"]
