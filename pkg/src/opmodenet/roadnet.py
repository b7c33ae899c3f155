"""Road network construction from raw open-map extracts.

Parses the JSON network format, builds intersection-to-intersection directed
links (splitting ways at intersections, merging through pass-through nodes),
computes signed grades from an elevation source, and joins external attribute
records onto links by spatial proximity blended with street-name similarity.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParseError, ValidationError
from .geo import LocalProjection, haversine_m, point_polyline_projection, polyline_length_m

log = logging.getLogger(__name__)

# Mapping from raw OSM XML tag names to the keys used by the JSON network
# format. A converter from OSM XML should populate way tags using the values
# on the right.
OSM_TAG_MAP = {
    "highway": "highway",  # road type categorical
    "oneway": "oneway",  # yes/no/-1
    "maxspeed": "maxspeed",  # "30 mph" or km/h number
    "lanes": "lanes",
}

_ONEWAY_TRUE = {"yes", "true", "1"}


@dataclass(frozen=True)
class Way:
    way_id: str
    node_ids: list[str]
    tags: dict[str, str]


@dataclass(frozen=True)
class NetworkExtract:
    nodes: dict[str, tuple[float, float]]
    ways: list[Way]


@dataclass
class RoadLink:
    """One directed intersection-to-intersection road segment."""

    link_id: str
    from_node: str
    to_node: str
    geometry: list[tuple[float, float]]
    length_m: float
    road_type: str = "unclassified"
    one_way: bool | None = None
    speed_limit_mph: float | None = None
    lanes: int | None = None
    urban_type: str | None = None
    functional_class: str | None = None
    capacity_vph: float | None = None
    free_flow_speed_mph: float | None = None
    aadt: float | None = None
    grade: float = 0.0
    town: str | None = None
    extra: dict[str, str] = field(default_factory=dict)


def convert_osm_xml(document: str) -> str:
    """Stub: convert raw OSM XML to the JSON network format.

    The mapping is mechanical: `<node id lat lon>` rows become entries of the
    top-level "nodes" object; each `<way>` becomes a "ways" entry with its
    ordered `<nd ref>` list and the tags named in OSM_TAG_MAP. Not implemented
    here because the pipeline consumes the JSON format directly.
    """
    raise NotImplementedError("convert raw OSM XML externally; see OSM_TAG_MAP")


def parse_network(document: str) -> NetworkExtract:
    """Parse the JSON network format into a validated NetworkExtract."""
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"malformed network document at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict) or "nodes" not in raw or "ways" not in raw:
        raise ParseError("network document must have top-level 'nodes' and 'ways'")

    nodes: dict[str, tuple[float, float]] = {}
    for node_id, coords in raw["nodes"].items():
        if not (isinstance(coords, (list, tuple)) and len(coords) == 2):
            raise ParseError(f"node {node_id}: expected [lat, lon]")
        nodes[str(node_id)] = (float(coords[0]), float(coords[1]))

    ways: list[Way] = []
    dangling: dict[str, list[str]] = {}
    for entry in raw["ways"]:
        way_id = str(entry["id"])
        node_ids = [str(n) for n in entry["nodes"]]
        if len(node_ids) < 2:
            raise ValidationError(f"way {way_id} has fewer than 2 nodes")
        missing = [n for n in node_ids if n not in nodes]
        if missing:
            dangling[way_id] = missing
        tags = {str(k): str(v) for k, v in entry.get("tags", {}).items()}
        ways.append(Way(way_id, node_ids, tags))

    if dangling:
        detail = "; ".join(
            f"way {w} references missing nodes {sorted(set(m))}" for w, m in sorted(dangling.items())
        )
        raise ValidationError(f"dangling node references: {detail}")
    return NetworkExtract(nodes=nodes, ways=ways)


@dataclass
class _Piece:
    nodes: list[str]
    oneway: bool | None  # True one-way forward, False two-way, None untagged
    tags: dict[str, str]

    @property
    def effective_oneway(self) -> bool:
        return self.oneway is True


def _way_oneway(tags: dict[str, str]) -> tuple[bool | None, bool]:
    """Return (oneway flag, reversed) from way tags."""
    val = tags.get("oneway")
    if val is None:
        return None, False
    val = val.strip().lower()
    if val in _ONEWAY_TRUE:
        return True, False
    if val == "-1":
        return True, True
    return False, False


def build_links(extract: NetworkExtract) -> list[RoadLink]:
    """Build directed intersection-to-intersection links.

    A node is an intersection iff it is referenced by two or more distinct
    ways or is a way endpoint. Ways are split at interior intersections;
    interior pass-through nodes (referenced only by their own way) are
    absorbed into the link geometry. Two-way pieces yield two directed links.
    """
    ref_ways: dict[str, set[str]] = defaultdict(set)
    for way in extract.ways:
        for n in way.node_ids:
            ref_ways[n].add(way.way_id)

    pieces: list[_Piece] = []
    for way in sorted(extract.ways, key=lambda w: w.way_id):
        oneway, reverse = _way_oneway(way.tags)
        node_ids = list(reversed(way.node_ids)) if reverse else way.node_ids
        cut = [0]
        for i in range(1, len(node_ids) - 1):
            if len(ref_ways[node_ids[i]]) >= 2 or node_ids.count(node_ids[i]) > 1:
                cut.append(i)
        cut.append(len(node_ids) - 1)
        for a, b in zip(cut[:-1], cut[1:]):
            if b > a:
                pieces.append(_Piece(node_ids[a : b + 1], oneway, dict(way.tags)))

    final = sorted(pieces, key=lambda p: (p.nodes[0], p.nodes[-1], p.nodes))

    links: list[RoadLink] = []
    dropped = 0
    for i, piece in enumerate(final):
        geometry = [extract.nodes[n] for n in piece.nodes]
        length = polyline_length_m(geometry)
        if length <= 0.0:
            dropped += 1
            continue
        base = f"L{i:06d}"
        links.append(_make_link(base + "F", piece, piece.nodes, geometry, length))
        if piece.oneway is not True:
            links.append(
                _make_link(
                    base + "R",
                    piece,
                    list(reversed(piece.nodes)),
                    list(reversed(geometry)),
                    length,
                )
            )
    if dropped:
        log.warning("dropped %d zero-length links", dropped)
    return links


def _parse_maxspeed(value: str) -> float | None:
    value = value.strip().lower()
    try:
        if value.endswith("mph"):
            return float(value[:-3].strip())
        return float(value) * 0.621371  # bare numbers are km/h in OSM
    except ValueError:
        return None


def _make_link(
    link_id: str, piece: _Piece, nodes: list[str], geometry: list[tuple[float, float]], length: float
) -> RoadLink:
    tags = piece.tags
    lanes = None
    if "lanes" in tags:
        try:
            lanes = max(1, int(float(tags["lanes"])))
        except ValueError:
            lanes = None
    speed_limit = _parse_maxspeed(tags["maxspeed"]) if "maxspeed" in tags else None
    one_way: bool | None
    if piece.oneway is None:
        one_way = None
    else:
        one_way = bool(piece.oneway)
    extra = {"name": tags["name"]} if "name" in tags else {}
    return RoadLink(
        link_id=link_id,
        from_node=nodes[0],
        to_node=nodes[-1],
        geometry=geometry,
        length_m=length,
        road_type=tags.get("highway", "unclassified"),
        one_way=one_way,
        speed_limit_mph=speed_limit,
        lanes=lanes,
        extra=extra,
    )


def links_to_extract(links: list[RoadLink]) -> NetworkExtract:
    """Re-serialize built links as a network extract (one way per undirected
    link, forward/reverse pairs folded into a single two-way way).

    build_links over this extract is a fixed point of link construction.
    """
    nodes: dict[str, tuple[float, float]] = {}
    ways: list[Way] = []
    geom_nodes: dict[tuple[float, float], str] = {}

    def node_for(pt: tuple[float, float]) -> str:
        if pt not in geom_nodes:
            geom_nodes[pt] = f"n{len(geom_nodes)}"
            nodes[geom_nodes[pt]] = pt
        return geom_nodes[pt]

    paired: set[str] = set()
    for link in sorted(links, key=lambda l: l.link_id):
        if link.link_id in paired:
            continue
        reverse = next(
            (
                o
                for o in links
                if o.link_id != link.link_id
                and o.from_node == link.to_node
                and o.to_node == link.from_node
                and o.geometry == list(reversed(link.geometry))
            ),
            None,
        )
        tags = {}
        if link.road_type != "unclassified":
            tags["highway"] = link.road_type
        if reverse is None and link.one_way is not False:
            tags["oneway"] = "yes"
        else:
            paired.add(reverse.link_id)
        ways.append(Way(link.link_id, [node_for(pt) for pt in link.geometry], tags))
    return NetworkExtract(nodes=nodes, ways=ways)


_LINK_JSON_FIELDS = [
    "link_id",
    "from_node",
    "to_node",
    "geometry",
    "length_m",
    "road_type",
    "one_way",
    "speed_limit_mph",
    "lanes",
    "urban_type",
    "functional_class",
    "capacity_vph",
    "free_flow_speed_mph",
    "aadt",
    "grade",
    "town",
    "extra",
]


def links_to_json(links: list[RoadLink]) -> str:
    """Deterministic JSON serialization of a link list."""
    payload = [
        {f: getattr(link, f) for f in _LINK_JSON_FIELDS}
        for link in sorted(links, key=lambda l: l.link_id)
    ]
    return json.dumps(payload, sort_keys=True)


def links_from_json(text: str) -> list[RoadLink]:
    out = []
    for entry in json.loads(text):
        entry["geometry"] = [tuple(pt) for pt in entry["geometry"]]
        out.append(RoadLink(**entry))
    return out


class ElevationGrid:
    """Nearest-neighbor elevation lookup over a (lat, lon, elev_m) CSV grid."""

    def __init__(self, lats: np.ndarray, lons: np.ndarray, elevs: np.ndarray, provenance: str = ""):
        if len(lats) == 0:
            raise ValidationError("elevation grid is empty")
        self.provenance = provenance
        self._elevs = np.asarray(elevs, dtype=float)
        pts = np.column_stack([lats, lons * np.cos(np.radians(np.mean(lats)))])
        self._tree = cKDTree(pts)
        self._coslat = float(np.cos(np.radians(np.mean(lats))))

    @classmethod
    def from_csv(cls, path: str) -> "ElevationGrid":
        lats, lons, elevs = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                lats.append(float(row["lat"]))
                lons.append(float(row["lon"]))
                elevs.append(float(row["elev_m"]))
        return cls(np.array(lats), np.array(lons), np.array(elevs), provenance=path)

    def lookup(self, lat: float, lon: float) -> float:
        _, idx = self._tree.query([lat, lon * self._coslat])
        return float(self._elevs[idx])


class OpenElevationClient:
    """Adapter for services speaking the Open-Elevation response shape.

    `fetch` is a callable taking (lat, lon) and returning the parsed JSON
    payload: {"results": [{"latitude": .., "longitude": .., "elevation": ..}]}.
    """

    def __init__(self, fetch, provenance: str = "open-elevation"):
        self._fetch = fetch
        self.provenance = provenance

    def lookup(self, lat: float, lon: float) -> float:
        payload = self._fetch(lat, lon)
        results = payload.get("results") or []
        if not results:
            raise LookupError(f"no elevation result for ({lat}, {lon})")
        return float(results[0]["elevation"])


def compute_grade(link: RoadLink, elevation) -> float:
    """Signed grade: elevation rise over horizontal endpoint distance."""
    lat1, lon1 = link.geometry[0]
    lat2, lon2 = link.geometry[-1]
    horizontal = haversine_m(lat1, lon1, lat2, lon2)
    if horizontal <= 0.0:
        raise LookupError(f"link {link.link_id} has coincident endpoints")
    rise = elevation.lookup(lat2, lon2) - elevation.lookup(lat1, lon1)
    grade = rise / horizontal
    if abs(grade) >= 1.0:
        raise LookupError(f"link {link.link_id}: implausible grade {grade:.3f}")
    return grade


def apply_grades(links: list[RoadLink], elevation) -> tuple[list[RoadLink], list[str]]:
    """Compute grades for all links; failures are imputed as 0 and flagged."""
    out: list[RoadLink] = []
    failed: list[str] = []
    for link in links:
        try:
            out.append(replace(link, grade=compute_grade(link, elevation)))
        except LookupError as exc:
            log.warning("grade imputed as 0: %s", exc)
            failed.append(link.link_id)
            out.append(replace(link, grade=0.0))
    return out, failed


@dataclass
class AttributeRecord:
    record_id: str
    geometry: list[tuple[float, float]]  # (lat, lon); single point allowed
    name: str | None
    attrs: dict[str, str]


def parse_wkt(text: str) -> list[tuple[float, float]]:
    """Parse POINT/LINESTRING WKT (x=lon, y=lat) into (lat, lon) tuples."""
    text = text.strip()
    upper = text.upper()
    if upper.startswith("POINT"):
        body = text[text.index("(") + 1 : text.rindex(")")]
        lon, lat = body.split()[:2]
        return [(float(lat), float(lon))]
    if upper.startswith("LINESTRING"):
        body = text[text.index("(") + 1 : text.rindex(")")]
        coords = []
        for pair in body.split(","):
            lon, lat = pair.split()[:2]
            coords.append((float(lat), float(lon)))
        return coords
    raise ParseError(f"unsupported WKT geometry: {text[:30]}")


def read_attribute_records(path: str, geometry_col: str = "wkt", name_col: str = "name") -> list[AttributeRecord]:
    records = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            geom_text = (row.get(geometry_col) or "").strip()
            geometry = parse_wkt(geom_text) if geom_text else []
            attrs = {
                k: v
                for k, v in row.items()
                if k not in (geometry_col, name_col, "record_id") and v not in (None, "")
            }
            records.append(
                AttributeRecord(
                    record_id=str(row.get("record_id", i)),
                    geometry=geometry,
                    name=(row.get(name_col) or None),
                    attrs=attrs,
                )
            )
    return records


def _edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def name_similarity(a: str | None, b: str | None) -> float:
    """1 minus normalized edit distance on case-folded names; 0 if either missing."""
    if not a or not b:
        return 0.0
    a, b = a.casefold().strip(), b.casefold().strip()
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return 1.0 - _edit_distance(a, b) / longest


_LINK_ATTR_FIELDS = {
    "aadt": ("aadt", float),
    "capacity": ("capacity_vph", float),
    "free_flow_speed": ("free_flow_speed_mph", float),
    "speed_limit": ("speed_limit_mph", float),
    "lanes": ("lanes", lambda v: max(1, int(float(v)))),
    "urban_type": ("urban_type", str),
    "functional_class": ("functional_class", str),
    "town": ("town", str),
}


def join_attributes(
    links: list[RoadLink],
    records: list[AttributeRecord],
    spatial_gate_m: float = 25.0,
    name_weight: float = 0.3,
    link_names: dict[str, str] | None = None,
) -> tuple[list[RoadLink], list[tuple[AttributeRecord, str]]]:
    """Attach each record to its best-scoring link.

    The match score blends a spatial score (mean perpendicular distance,
    hard-gated at `spatial_gate_m`) with a name-similarity score. Records
    beyond the gate for every link are reported unmatched.
    """
    if not links:
        return [], [(r, "no links") for r in records]
    all_coords = np.array([pt for link in links for pt in link.geometry])
    proj = LocalProjection(float(all_coords[:, 0].mean()), float(all_coords[:, 1].mean()))
    link_xy = []
    for link in links:
        xy = proj.to_xy_array(np.array(link.geometry, dtype=float))
        seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
        cumlen = np.concatenate([[0.0], np.cumsum(seg)])
        link_xy.append((xy, cumlen))
    if link_names is None:
        link_names = {l.link_id: l.extra["name"] for l in links if "name" in l.extra}

    by_id = {link.link_id: replace(link, extra=dict(link.extra)) for link in links}
    unmatched: list[tuple[AttributeRecord, str]] = []
    spatial_weight = 1.0 - name_weight

    for record in records:
        if not record.geometry:
            unmatched.append((record, "record has no geometry"))
            continue
        rec_xy = proj.to_xy_array(np.array(record.geometry, dtype=float))
        best: tuple[float, str] | None = None
        for link, (xy, cumlen) in zip(links, link_xy):
            dists = [
                point_polyline_projection(px, py, xy, cumlen)[0] for px, py in rec_xy
            ]
            mean_d = float(np.mean(dists))
            if mean_d > spatial_gate_m:
                continue
            spatial_score = 1.0 - mean_d / spatial_gate_m
            name_score = name_similarity(record.name, link_names.get(link.link_id))
            score = spatial_weight * spatial_score + name_weight * name_score
            if best is None or score > best[0] or (score == best[0] and link.link_id < best[1]):
                best = (score, link.link_id)
        if best is None:
            unmatched.append((record, f"no link within {spatial_gate_m} m"))
            continue
        target = by_id[best[1]]
        for key, value in record.attrs.items():
            mapped = _LINK_ATTR_FIELDS.get(key.lower())
            if mapped is None:
                target.extra[key] = value
            else:
                field_name, conv = mapped
                try:
                    setattr(target, field_name, conv(value))
                except ValueError:
                    target.extra[key] = value
    return [by_id[link.link_id] for link in links], unmatched
