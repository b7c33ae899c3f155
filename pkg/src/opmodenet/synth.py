"""Synthetic fixture generators standing in for the non-redistributable
source dataset: grid networks, noisy GPS traces along known routes with a
full answer key, town imagery embeddings, and a feature-conditioned target
dataset for model/baseline comparisons.

Everything is seeded; identical specs produce identical bytes on disk.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import opmode, traffic
from .attribution import LinkSecondRecord
from .features import EMBEDDING_DIM
from .geo import EARTH_RADIUS_M, MPH_PER_MPS, haversine_m
from .matching import RoadGraph
from .roadnet import RoadLink, apply_grades, build_links, parse_network

ROAD_TYPES = ["motorway", "primary", "secondary", "residential", "unclassified"]
SPEED_LIMIT_MPH = {
    "motorway": 65.0,
    "primary": 45.0,
    "secondary": 35.0,
    "residential": 25.0,
    "unclassified": 30.0,
}
TRACE_EPOCH = 1_700_000_000.0


@dataclass
class SyntheticSpec:
    grid_rows: int = 5
    grid_cols: int = 5
    spacing_m: float = 200.0
    origin_lat: float = 42.30
    origin_lon: float = -71.10
    noise_sigma_m: float = 10.0
    n_traces: int = 50
    n_towns: int = 4
    seed: int = 0
    speed_regime_mph: dict = field(
        default_factory=lambda: {
            "motorway": 55.0,
            "primary": 38.0,
            "secondary": 30.0,
            "residential": 20.0,
            "unclassified": 25.0,
        }
    )


def _grid_coords(spec: SyntheticSpec, r: int, c: int) -> tuple[float, float]:
    dlat = spec.spacing_m / EARTH_RADIUS_M * 180.0 / math.pi
    dlon = dlat / math.cos(math.radians(spec.origin_lat))
    return spec.origin_lat + r * dlat, spec.origin_lon + c * dlon


def grid_network_json(spec: SyntheticSpec) -> str:
    """Lattice network: every edge its own two-way way with a road type
    assigned deterministically by row/column."""
    nodes = {}
    for r in range(spec.grid_rows):
        for c in range(spec.grid_cols):
            lat, lon = _grid_coords(spec, r, c)
            nodes[f"n{r}_{c}"] = [lat, lon]
    ways = []
    wid = 0

    def add_way(a: str, b: str, idx: int) -> None:
        nonlocal wid
        road_type = ROAD_TYPES[idx % len(ROAD_TYPES)]
        ways.append(
            {
                "id": f"w{wid:04d}",
                "nodes": [a, b],
                "tags": {
                    "highway": road_type,
                    "maxspeed": f"{SPEED_LIMIT_MPH[road_type]:.0f} mph",
                    "name": f"street {wid}",
                },
            }
        )
        wid += 1

    for r in range(spec.grid_rows):
        for c in range(spec.grid_cols):
            if c + 1 < spec.grid_cols:
                add_way(f"n{r}_{c}", f"n{r}_{c + 1}", r)
            if r + 1 < spec.grid_rows:
                add_way(f"n{r}_{c}", f"n{r + 1}_{c}", c)
    return json.dumps({"nodes": nodes, "ways": ways}, sort_keys=True)


def elevation_csv(spec: SyntheticSpec) -> str:
    """Smooth synthetic terrain sampled at every grid node."""
    lines = ["lat,lon,elev_m"]
    for r in range(spec.grid_rows):
        for c in range(spec.grid_cols):
            lat, lon = _grid_coords(spec, r, c)
            elev = 30.0 + 8.0 * math.sin(r * 0.9) + 5.0 * math.cos(c * 1.3) + 0.8 * r * c
            lines.append(f"{lat:.8f},{lon:.8f},{elev:.3f}")
    return "\n".join(lines) + "\n"


def town_of(spec: SyntheticSpec, r: int, c: int) -> str:
    half_r = max(1, spec.grid_rows // 2)
    half_c = max(1, spec.grid_cols // 2)
    quadrant = (r // half_r) * 2 + (c // half_c)
    return f"town{quadrant % spec.n_towns}"


def attributes_csv(spec: SyntheticSpec, links: list[RoadLink]) -> str:
    """One inventory record per undirected edge, joined back spatially."""
    rng = np.random.default_rng(spec.seed + 101)
    lines = ["record_id,wkt,name,aadt,capacity,free_flow_speed,urban_type,functional_class,town"]
    seen_pairs = set()
    for link in sorted(links, key=lambda l: l.link_id):
        pair = tuple(sorted([link.from_node, link.to_node]))
        if pair in seen_pairs:
            continue
        seen_pairs.add(pair)
        wkt = "LINESTRING (" + ", ".join(f"{lon:.8f} {lat:.8f}" for lat, lon in link.geometry) + ")"
        limit = SPEED_LIMIT_MPH[link.road_type]
        aadt = float(rng.integers(2000, 30000))
        capacity = {"motorway": 3600, "primary": 1800, "secondary": 1400, "residential": 700, "unclassified": 1000}[link.road_type]
        r, c = (int(x) for x in link.from_node[1:].split("_"))
        lines.append(
            f"r_{pair[0]}_{pair[1]},\"{wkt}\",{link.extra.get('name', '')},{aadt:.0f},{capacity},"
            f"{limit:.0f},{'urban' if r + c < (spec.grid_rows + spec.grid_cols) // 2 else 'suburban'},"
            f"{'principal_arterial' if link.road_type in ('motorway', 'primary') else 'collector'},"
            f"{town_of(spec, r, c)}"
        )
    return "\n".join(lines) + "\n"


def embeddings_csv(n_towns: int, seed: int, dim: int = EMBEDDING_DIM, latent: int = 8) -> str:
    """Low-rank town embeddings: shared structure plus small noise, so PCA
    concentrates variance in a few components."""
    rng = np.random.default_rng(seed + 202)
    basis = rng.normal(0.0, 1.0, (latent, dim))
    codes = rng.normal(0.0, 1.0, (n_towns, latent))
    emb = codes @ basis + rng.normal(0.0, 0.05, (n_towns, dim))
    lines = ["town_id," + ",".join(f"v{i}" for i in range(dim))]
    for i in range(n_towns):
        lines.append(f"town{i}," + ",".join(f"{v:.6f}" for v in emb[i]))
    return "\n".join(lines) + "\n"


@dataclass
class TraceTruth:
    trace_id: str
    route_links: list[str]
    sample_t: list[float]
    sample_true_link: list[str]
    motion_t: list[float]  # true 1 Hz motion
    motion_s: list[float]
    motion_speed: list[float]  # m/s
    motion_accel: list[float]  # m/s^2


def _route_point(graph: RoadGraph, route: list[str], s: float) -> tuple[float, float]:
    """Lat/lon at arc-length s along a route of link ids."""
    for link_id in route:
        length = graph.length(link_id)
        if s <= length or link_id == route[-1]:
            geom = graph.links[link_id].geometry
            cum = 0.0
            s_here = min(max(s, 0.0), length)
            for (lat1, lon1), (lat2, lon2) in zip(geom[:-1], geom[1:]):
                seg = haversine_m(lat1, lon1, lat2, lon2)
                if cum + seg >= s_here or (lat2, lon2) == geom[-1]:
                    f = 0.0 if seg == 0 else min(1.0, (s_here - cum) / seg)
                    return lat1 + f * (lat2 - lat1), lon1 + f * (lon2 - lon1)
                cum += seg
        s -= length
    geom = graph.links[route[-1]].geometry
    return geom[-1]


def generate_traces(
    spec: SyntheticSpec, links: list[RoadLink], graph: RoadGraph
) -> tuple[list[str], list[TraceTruth]]:
    """Noisy GPX documents along shortest-path routes, with full truth."""
    rng = np.random.default_rng(spec.seed + 303)
    node_ids = sorted({l.from_node for l in links})
    regimes = {l.link_id: spec.speed_regime_mph[l.road_type] / MPH_PER_MPS for l in links}
    gpx_docs: list[str] = []
    truths: list[TraceTruth] = []
    proj = graph.proj
    attempts = 0
    while len(truths) < spec.n_traces and attempts < spec.n_traces * 20:
        attempts += 1
        a, b = rng.choice(len(node_ids), size=2, replace=False)
        start, end = node_ids[a], node_ids[b]
        dist, pred = graph._shortest_from(start)
        if end not in pred:
            continue
        route = []
        node = end
        while node != start:
            link_id = pred[node]
            route.append(link_id)
            node = graph.links[link_id].from_node
        route.reverse()
        total = sum(graph.length(l) for l in route)
        if total < 3.0 * spec.spacing_m:
            continue

        # true 1 Hz motion along the route, kept strictly inside the route so
        # no sample sits exactly on an intersection node (where link
        # membership is genuinely ambiguous)
        bounds = np.cumsum([graph.length(l) for l in route])
        # trips start mid-block, not in the middle of an intersection
        s = min(float(rng.uniform(20.0, 60.0)), 0.4 * graph.length(route[0]))
        v = regimes[route[0]] * 0.5
        motion_t, motion_s, motion_v, motion_a = [0.0], [s], [v], [0.0]
        t = 0.0
        while t < 3600:
            idx = int(np.searchsorted(bounds, s, side="right"))
            target = regimes[route[min(idx, len(route) - 1)]]
            dv = np.clip(0.25 * (target - v), -1.5, 1.0) + rng.normal(0.0, 0.25)
            new_v = float(np.clip(v + dv, 0.3, None))
            if s + 0.5 * (v + new_v) >= total - 1.0:
                break
            s += 0.5 * (v + new_v)
            v = new_v
            t += 1.0
            motion_t.append(t)
            motion_s.append(s)
            motion_v.append(v)
            motion_a.append(float(dv))
        if len(motion_t) < 30:
            continue

        # irregular GPS sampling with positional noise
        base_t = TRACE_EPOCH + len(truths) * 20_000.0
        sample_idx = [0]
        while sample_idx[-1] < len(motion_t) - 1:
            sample_idx.append(min(sample_idx[-1] + int(rng.integers(1, 3)), len(motion_t) - 1))
        sample_t, sample_link, points = [], [], []
        for i in sample_idx:
            s_i = motion_s[i]
            idx = int(np.searchsorted(bounds, min(s_i, total - 1e-9), side="right"))
            true_link = route[min(idx, len(route) - 1)]
            lat, lon = _route_point(graph, route, s_i)
            if spec.noise_sigma_m > 0:
                x, y = proj.to_xy(lat, lon)
                x += rng.normal(0.0, spec.noise_sigma_m)
                y += rng.normal(0.0, spec.noise_sigma_m)
                lat = proj.ref_lat + math.degrees(y / EARTH_RADIUS_M)
                lon = proj.ref_lon + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(proj.ref_lat))))
            sample_t.append(base_t + motion_t[i])
            sample_link.append(true_link)
            points.append((sample_t[-1], lat, lon))

        trace_id = f"synth{len(truths):03d}"
        gpx_docs.append(_gpx_document(trace_id, points))
        truths.append(
            TraceTruth(
                trace_id=trace_id,
                route_links=route,
                sample_t=sample_t,
                sample_true_link=sample_link,
                motion_t=[base_t + t for t in motion_t],
                motion_s=motion_s,
                motion_speed=motion_v,
                motion_accel=motion_a,
            )
        )
    return gpx_docs, truths


def _gpx_document(name: str, points: list[tuple[float, float, float]]) -> str:
    rows = []
    for t, lat, lon in points:
        stamp = datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        rows.append(f'      <trkpt lat="{lat:.8f}" lon="{lon:.8f}"><time>{stamp}</time></trkpt>')
    body = "\n".join(rows)
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        '<gpx version="1.1" creator="opmodenet-synth" xmlns="http://www.topografix.com/GPX/1/1">\n'
        f"  <trk><name>{name}</name>\n    <trkseg>\n{body}\n    </trkseg>\n  </trk>\n</gpx>\n"
    )


def true_link_distributions(
    truths: list[TraceTruth], graph: RoadGraph, link_grades: dict[str, float]
) -> dict[str, np.ndarray]:
    """Answer-key operating-mode distributions from the generator's true
    motion, via the same classification path the pipeline uses."""
    by_link: dict[str, list[LinkSecondRecord]] = {}
    for truth in truths:
        bounds = np.cumsum([graph.length(l) for l in truth.route_links])
        total = float(bounds[-1])
        for t, s, v, a in zip(truth.motion_t, truth.motion_s, truth.motion_speed, truth.motion_accel):
            idx = int(np.searchsorted(bounds, min(s, total - 1e-9), side="right"))
            link_id = truth.route_links[min(idx, len(truth.route_links) - 1)]
            by_link.setdefault(link_id, []).append(
                LinkSecondRecord(
                    link_id=link_id,
                    t=t,
                    speed_mph=v * MPH_PER_MPS,
                    accel_mphps=a * MPH_PER_MPS,
                    grade=link_grades.get(link_id, 0.0),
                )
            )
    return {
        link_id: opmode.distribution(records).fractions
        for link_id, records in sorted(by_link.items())
    }


def generate(spec: SyntheticSpec, outdir: str | Path) -> dict:
    """Write the full fixture set and its answer key; returns the key."""
    outdir = Path(outdir)
    (outdir / "traces").mkdir(parents=True, exist_ok=True)
    network = grid_network_json(spec)
    (outdir / "network.json").write_text(network)
    (outdir / "elevation.csv").write_text(elevation_csv(spec))
    (outdir / "embeddings.csv").write_text(embeddings_csv(spec.n_towns, spec.seed))

    extract = parse_network(network)
    links = build_links(extract)
    from .roadnet import ElevationGrid

    grid = ElevationGrid.from_csv(str(outdir / "elevation.csv"))
    links, _ = apply_grades(links, grid)
    (outdir / "attributes.csv").write_text(attributes_csv(spec, links))

    graph = RoadGraph(links)
    gpx_docs, truths = generate_traces(spec, links, graph)
    for doc, truth in zip(gpx_docs, truths):
        (outdir / "traces" / f"{truth.trace_id}.gpx").write_text(doc)

    grades = {l.link_id: l.grade for l in links}
    key = {
        "spec": {
            "grid_rows": spec.grid_rows,
            "grid_cols": spec.grid_cols,
            "spacing_m": spec.spacing_m,
            "noise_sigma_m": spec.noise_sigma_m,
            "n_traces": spec.n_traces,
            "seed": spec.seed,
        },
        "n_links": len(links),
        "traces": [
            {
                "trace_id": t.trace_id,
                "route_links": t.route_links,
                "sample_t": t.sample_t,
                "sample_true_link": t.sample_true_link,
                "motion_t": t.motion_t,
                "motion_s": t.motion_s,
                "motion_speed": t.motion_speed,
                "motion_accel": t.motion_accel,
            }
            for t in truths
        ],
        "true_distributions": {
            k: v.tolist() for k, v in true_link_distributions(truths, graph, grades).items()
        },
    }
    (outdir / "answer_key.json").write_text(json.dumps(key, sort_keys=True))
    return key


# ---------------------------------------------------------------------------
# feature-conditioned target dataset for the model/baseline analogue


def feature_target_map(seed: int, scale: float = 2.0):
    """A fixed smooth map from (congested speed, road type, grade) to the
    23-simplex. Learnable by the network; opaque to the average-speed
    baseline, which sees only speed and road type."""
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, scale, (opmode.N_BINS, 2 + len(ROAD_TYPES)))

    def target(congested_speed_mph: float, road_type: str, grade: float) -> np.ndarray:
        phi = np.zeros(2 + len(ROAD_TYPES))
        phi[0] = congested_speed_mph / 50.0
        phi[1] = grade * 20.0
        phi[2 + ROAD_TYPES.index(road_type)] = 1.0
        logits = w @ phi
        e = np.exp(logits - logits.max())
        return e / e.sum()

    return target


def generate_feature_dataset(
    n_links: int, seed: int, n_towns: int = 45
) -> tuple[list[RoadLink], list, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Random links with plausible attributes, their traffic states, town
    embeddings, and feature-conditioned target distributions."""
    rng = np.random.default_rng(seed)
    params = traffic.TrafficParams()
    target_fn = feature_target_map(seed + 1)
    links, states, targets = [], [], {}
    for i in range(n_links):
        road_type = ROAD_TYPES[int(rng.integers(0, len(ROAD_TYPES)))]
        limit = SPEED_LIMIT_MPH[road_type]
        length = float(rng.uniform(80.0, 2000.0))
        link = RoadLink(
            link_id=f"S{i:05d}",
            from_node=f"a{i}",
            to_node=f"b{i}",
            geometry=[(42.0, -71.0), (42.0 + length / 111_000.0, -71.0)],
            length_m=length,
            road_type=road_type,
            one_way=bool(rng.integers(0, 2)),
            speed_limit_mph=limit,
            lanes=int(rng.integers(1, 4)),
            urban_type="urban" if rng.random() < 0.5 else "suburban",
            functional_class="principal_arterial" if road_type in ("motorway", "primary") else "collector",
            capacity_vph=float({"motorway": 3600, "primary": 1800, "secondary": 1400, "residential": 700, "unclassified": 1000}[road_type]),
            free_flow_speed_mph=limit * float(rng.uniform(0.95, 1.1)),
            aadt=float(rng.integers(1000, 40000)),
            grade=float(rng.uniform(-0.08, 0.08)),
            town=f"town{int(rng.integers(0, n_towns))}",
        )
        state = traffic.derive_state(link, params)
        links.append(link)
        states.append(state)
        targets[link.link_id] = target_fn(state.congested_speed_mph, road_type, link.grade)
    emb_text = embeddings_csv(n_towns, seed)
    import tempfile

    from .features import read_embeddings

    with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as fh:
        fh.write(emb_text)
        emb_path = fh.name
    embeddings = read_embeddings(emb_path)
    Path(emb_path).unlink()
    return links, states, embeddings, targets
