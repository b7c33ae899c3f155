"""Network construction: parsing, link building, grades, attribute joins."""

import json

import numpy as np
import pytest

from opmodenet.errors import ParseError, ValidationError
from opmodenet.geo import polyline_length_m
from opmodenet.roadnet import (
    AttributeRecord,
    ElevationGrid,
    OpenElevationClient,
    RoadLink,
    apply_grades,
    build_links,
    compute_grade,
    join_attributes,
    links_from_json,
    links_to_extract,
    links_to_json,
    name_similarity,
    parse_network,
    parse_wkt,
    read_attribute_records,
)


def net(nodes, ways):
    return json.dumps({"nodes": nodes, "ways": ways})


MINIMAL = net(
    {"n1": [42.0, -71.0], "n2": [42.001, -71.0]},
    [{"id": "w1", "nodes": ["n1", "n2"]}],
)


class TestParseNetwork:
    def test_minimal_document(self):
        extract = parse_network(MINIMAL)
        assert len(extract.nodes) == 2
        assert len(extract.ways) == 1

    def test_malformed_json_reports_position(self):
        with pytest.raises(ParseError, match=r"line \d+, column \d+"):
            parse_network('{"nodes": {, }')

    def test_dangling_reference_names_node(self):
        doc = net({"n1": [42.0, -71.0], "n2": [42.001, -71.0]},
                  [{"id": "w1", "nodes": ["n1", "n9"]}])
        with pytest.raises(ValidationError, match="n9"):
            parse_network(doc)

    def test_missing_top_level_keys(self):
        with pytest.raises(ParseError):
            parse_network('{"nodes": {}}')

    def test_single_node_way_rejected(self):
        doc = net({"n1": [42.0, -71.0]}, [{"id": "w1", "nodes": ["n1"]}])
        with pytest.raises(ValidationError):
            parse_network(doc)


class TestBuildLinks:
    def test_two_way_pair(self):
        links = build_links(parse_network(MINIMAL))
        assert len(links) == 2
        fwd, rev = sorted(links, key=lambda l: l.link_id)
        assert (fwd.from_node, fwd.to_node) == ("n1", "n2")
        assert (rev.from_node, rev.to_node) == ("n2", "n1")
        assert fwd.length_m == pytest.approx(rev.length_m)

    def test_oneway_single_link(self):
        doc = net(
            {"n1": [42.0, -71.0], "n2": [42.001, -71.0]},
            [{"id": "w1", "nodes": ["n1", "n2"], "tags": {"oneway": "yes"}}],
        )
        links = build_links(parse_network(doc))
        assert len(links) == 1
        assert links[0].one_way is True

    def test_oneway_reversed_tag(self):
        doc = net(
            {"n1": [42.0, -71.0], "n2": [42.001, -71.0]},
            [{"id": "w1", "nodes": ["n1", "n2"], "tags": {"oneway": "-1"}}],
        )
        (link,) = build_links(parse_network(doc))
        assert (link.from_node, link.to_node) == ("n2", "n1")

    def test_pass_through_node_absorbed(self):
        # A-B-C where B belongs only to this way: one undirected link A->C
        doc = net(
            {"a": [42.0, -71.0], "b": [42.001, -71.0], "c": [42.002, -71.0]},
            [{"id": "w1", "nodes": ["a", "b", "c"]}],
        )
        links = build_links(parse_network(doc))
        assert len(links) == 2  # two directions
        fwd = next(l for l in links if l.from_node == "a")
        assert fwd.to_node == "c"
        assert len(fwd.geometry) == 3

    def test_way_split_at_crossing(self):
        # two ways crossing at x: 4 undirected links incident to x
        doc = net(
            {
                "w": [42.0, -71.001], "e": [42.0, -70.999],
                "n": [42.001, -71.0], "s": [41.999, -71.0],
                "x": [42.0, -71.0],
            },
            [
                {"id": "we", "nodes": ["w", "x", "e"]},
                {"id": "ns", "nodes": ["n", "x", "s"]},
            ],
        )
        links = build_links(parse_network(doc))
        assert len(links) == 8  # 4 undirected x 2 directions
        incident = [l for l in links if "x" in (l.from_node, l.to_node)]
        assert len(incident) == 8

    def test_grid_5x5_has_80_directed_links(self, grid_links):
        assert len(grid_links) == 80

    def test_length_conserved(self, grid_fixture, grid_links):
        extract = parse_network((grid_fixture / "network.json").read_text())
        way_total = sum(
            polyline_length_m([extract.nodes[n] for n in w.node_ids]) for w in extract.ways
        )
        link_total = sum(l.length_m for l in grid_links)
        assert link_total == pytest.approx(2.0 * way_total, rel=1e-6)

    def test_idempotent_fixed_point(self, grid_links):
        again = build_links(links_to_extract(grid_links))
        assert len(again) == len(grid_links)
        lengths = sorted(round(l.length_m, 6) for l in grid_links)
        assert sorted(round(l.length_m, 6) for l in again) == lengths

    def test_interior_nodes_have_degree_two(self, grid_links):
        for link in grid_links:
            assert len(link.geometry) >= 2

    def test_maxspeed_parsing(self):
        doc = net(
            {"n1": [42.0, -71.0], "n2": [42.001, -71.0]},
            [{"id": "w1", "nodes": ["n1", "n2"], "tags": {"maxspeed": "30 mph"}}],
        )
        links = build_links(parse_network(doc))
        assert links[0].speed_limit_mph == 30.0

    def test_maxspeed_kmh(self):
        doc = net(
            {"n1": [42.0, -71.0], "n2": [42.001, -71.0]},
            [{"id": "w1", "nodes": ["n1", "n2"], "tags": {"maxspeed": "50"}}],
        )
        links = build_links(parse_network(doc))
        assert links[0].speed_limit_mph == pytest.approx(31.07, abs=0.01)

    def test_json_round_trip(self, grid_links):
        text = links_to_json(grid_links)
        back = links_from_json(text)
        assert links_to_json(back) == text


class FlatElevation:
    def __init__(self, value=10.0):
        self.value = value

    def lookup(self, lat, lon):
        return self.value


class SlopedElevation:
    """Elevation rises 1 m per 0.001 degrees of latitude."""

    def lookup(self, lat, lon):
        return (lat - 42.0) * 1000.0


class TestGrades:
    def link(self, lat_to=42.001):
        return RoadLink(
            link_id="L1", from_node="a", to_node="b",
            geometry=[(42.0, -71.0), (lat_to, -71.0)],
            length_m=polyline_length_m([(42.0, -71.0), (lat_to, -71.0)]),
        )

    def test_flat_is_zero(self):
        assert compute_grade(self.link(), FlatElevation()) == 0.0

    def test_slope_value(self):
        link = self.link()
        # 1 m rise over ~111.2 m horizontal
        grade = compute_grade(link, SlopedElevation())
        assert grade == pytest.approx(1.0 / link.length_m, rel=1e-6)

    def test_antisymmetry(self):
        fwd = self.link()
        rev = RoadLink(
            link_id="L2", from_node="b", to_node="a",
            geometry=list(reversed(fwd.geometry)), length_m=fwd.length_m,
        )
        elev = SlopedElevation()
        assert compute_grade(fwd, elev) == pytest.approx(-compute_grade(rev, elev))

    def test_failure_imputes_zero(self):
        degenerate = RoadLink(
            link_id="L3", from_node="a", to_node="a",
            geometry=[(42.0, -71.0), (42.0, -71.0)], length_m=0.0,
        )
        out, failed = apply_grades([degenerate], FlatElevation())
        assert failed == ["L3"]
        assert out[0].grade == 0.0

    def test_elevation_grid_nearest(self, tmp_path):
        path = tmp_path / "elev.csv"
        path.write_text("lat,lon,elev_m\n42.0,-71.0,5.0\n42.01,-71.0,25.0\n")
        grid = ElevationGrid.from_csv(str(path))
        assert grid.lookup(42.0001, -71.0) == 5.0
        assert grid.lookup(42.0099, -71.0) == 25.0

    def test_open_elevation_adapter(self):
        client = OpenElevationClient(
            lambda lat, lon: {"results": [{"latitude": lat, "longitude": lon, "elevation": 7.5}]}
        )
        assert client.lookup(42.0, -71.0) == 7.5
        empty = OpenElevationClient(lambda lat, lon: {"results": []})
        with pytest.raises(LookupError):
            empty.lookup(42.0, -71.0)


class TestWkt:
    def test_point(self):
        assert parse_wkt("POINT (-71.1 42.3)") == [(42.3, -71.1)]

    def test_linestring(self):
        coords = parse_wkt("LINESTRING (-71.1 42.3, -71.0 42.4)")
        assert coords == [(42.3, -71.1), (42.4, -71.0)]

    def test_unsupported(self):
        with pytest.raises(ParseError):
            parse_wkt("POLYGON ((0 0, 1 1, 0 1, 0 0))")


class TestNameSimilarity:
    def test_identical(self):
        assert name_similarity("Main St", "main st") == 1.0

    def test_missing_name(self):
        assert name_similarity(None, "Main St") == 0.0

    def test_partial(self):
        sim = name_similarity("Main Street", "Maim Street")
        assert sim == pytest.approx(1.0 - 1.0 / 11.0)


class TestJoinAttributes:
    def two_parallel_links(self):
        # two north-south links ~20 m apart in longitude
        la = RoadLink("LA", "a1", "a2", [(42.0, -71.0), (42.002, -71.0)], 222.0)
        lb = RoadLink("LB", "b1", "b2", [(42.0, -70.99975), (42.002, -70.99975)], 222.0)
        return [la, lb]

    def test_exact_overlap_attaches(self):
        links = self.two_parallel_links()
        record = AttributeRecord("r1", list(links[0].geometry), "Elm St", {"aadt": "12000"})
        joined, unmatched = join_attributes(links, [record], link_names={"LA": "Elm St"})
        assert not unmatched
        assert joined[0].aadt == 12000.0
        assert joined[1].aadt is None

    def test_distance_gate(self):
        links = self.two_parallel_links()
        record = AttributeRecord("r1", [(42.0, -70.9)], "Elm St", {"aadt": "1"})
        joined, unmatched = join_attributes(links, [record])
        assert len(unmatched) == 1
        assert all(l.aadt is None for l in joined)

    def test_name_breaks_spatial_tie(self):
        # record equidistant from both links, name matches only LB:
        # 0.7 * spatial cancels, 0.3 * 1.0 name similarity decides
        links = self.two_parallel_links()
        mid_lon = (-71.0 + -70.99975) / 2.0
        record = AttributeRecord(
            "r1", [(42.001, mid_lon)], "Oak Ave", {"town": "boxford"}
        )
        joined, unmatched = join_attributes(
            links, [record], link_names={"LA": "Elm St", "LB": "Oak Ave"}
        )
        assert not unmatched
        assert joined[1].town == "boxford"
        assert joined[0].town is None

    def test_no_geometry_rejected(self):
        links = self.two_parallel_links()
        record = AttributeRecord("r1", [], "Elm St", {"aadt": "1"})
        _, unmatched = join_attributes(links, [record])
        assert unmatched and "geometry" in unmatched[0][1]

    def test_unknown_attrs_go_to_extra(self):
        links = self.two_parallel_links()
        record = AttributeRecord("r1", list(links[0].geometry), None, {"pavement": "asphalt"})
        joined, _ = join_attributes(links, [record])
        assert joined[0].extra["pavement"] == "asphalt"

    def test_read_attribute_records(self, tmp_path):
        path = tmp_path / "attrs.csv"
        path.write_text(
            'record_id,wkt,name,aadt\nr1,"LINESTRING (-71.0 42.0, -71.0 42.002)",Elm St,9000\n'
        )
        records = read_attribute_records(str(path))
        assert records[0].record_id == "r1"
        assert records[0].attrs == {"aadt": "9000"}
        assert records[0].geometry[0] == (42.0, -71.0)
