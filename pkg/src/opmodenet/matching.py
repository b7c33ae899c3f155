"""Hidden-Markov map matching of GPS segments onto the directed link graph.

Candidates are links within a radius of each point; emission probability
falls off as a Gaussian in perpendicular distance, transitions penalize the
gap between network route distance and great-circle distance, and a Viterbi
decode picks the jointly most plausible link sequence.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .geo import LocalProjection, point_polyline_projection
from .gpx import TraceSegment
from .roadnet import RoadLink

DEFAULT_SIGMA_M = 10.0
DEFAULT_LAMBDA_M = 20.0
DEFAULT_RADIUS_M = 50.0


class MatchRejected(ValidationError):
    """Segment is off-network: too many points without candidate links."""


@dataclass(frozen=True)
class Candidate:
    link_id: str
    distance_m: float  # perpendicular distance point -> link
    arc_s: float  # offset of the projection along the link


class RoadGraph:
    """Directed link graph with a spatial index and cached shortest paths."""

    def __init__(self, links: list[RoadLink], cell_m: float = 100.0):
        if not links:
            raise ValidationError("empty link list")
        self.links = {link.link_id: link for link in links}
        coords = np.array([pt for link in links for pt in link.geometry])
        self.proj = LocalProjection(float(coords[:, 0].mean()), float(coords[:, 1].mean()))
        self._xy: dict[str, np.ndarray] = {}
        self._cumlen: dict[str, np.ndarray] = {}
        self._out: dict[str, list[str]] = {}
        self._cell_m = cell_m
        self._grid: dict[tuple[int, int], list[str]] = {}
        for link in links:
            xy = self.proj.to_xy_array(np.array(link.geometry, dtype=float))
            seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
            cumlen = np.concatenate([[0.0], np.cumsum(seg)])
            self._xy[link.link_id] = xy
            self._cumlen[link.link_id] = cumlen
            self._out.setdefault(link.from_node, []).append(link.link_id)
            for i in range(len(xy) - 1):
                lo_x, hi_x = sorted((xy[i, 0], xy[i + 1, 0]))
                lo_y, hi_y = sorted((xy[i, 1], xy[i + 1, 1]))
                for cx in range(int(lo_x // cell_m) - 1, int(hi_x // cell_m) + 2):
                    for cy in range(int(lo_y // cell_m) - 1, int(hi_y // cell_m) + 2):
                        cell = self._grid.setdefault((cx, cy), [])
                        if not cell or cell[-1] != link.link_id:
                            cell.append(link.link_id)
        # lazily-filled per-source-node Dijkstra results: dist + predecessor link
        self._sp_cache: dict[str, tuple[dict[str, float], dict[str, str]]] = {}

    def length(self, link_id: str) -> float:
        return float(self._cumlen[link_id][-1])

    def candidates(self, lat: float, lon: float, radius_m: float) -> list[Candidate]:
        px, py = self.proj.to_xy(lat, lon)
        cx, cy = int(px // self._cell_m), int(py // self._cell_m)
        seen: set[str] = set()
        out: list[Candidate] = []
        reach = int(math.ceil(radius_m / self._cell_m))
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                for link_id in self._grid.get((cx + dx, cy + dy), ()):
                    if link_id in seen:
                        continue
                    seen.add(link_id)
                    d, s = point_polyline_projection(
                        px, py, self._xy[link_id], self._cumlen[link_id]
                    )
                    if d <= radius_m:
                        out.append(Candidate(link_id, d, s))
        out.sort(key=lambda c: (c.distance_m, c.link_id))
        return out

    def _shortest_from(self, node: str) -> tuple[dict[str, float], dict[str, str]]:
        cached = self._sp_cache.get(node)
        if cached is not None:
            return cached
        dist = {node: 0.0}
        pred: dict[str, str] = {}
        heap = [(0.0, node)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist.get(u, math.inf):
                continue
            for link_id in self._out.get(u, ()):
                link = self.links[link_id]
                nd = d + self.length(link_id)
                if nd < dist.get(link.to_node, math.inf):
                    dist[link.to_node] = nd
                    pred[link.to_node] = link_id
                    heapq.heappush(heap, (nd, link.to_node))
        self._sp_cache[node] = (dist, pred)
        return dist, pred

    def route_distance(self, a: str, s_a: float, b: str, s_b: float) -> float:
        """Network distance from offset s_a on link a to offset s_b on link b."""
        if a == b:
            # same link: backward offsets are GPS jitter, not loop-arounds
            return abs(s_b - s_a)
        la = self.links[a]
        dist, _ = self._shortest_from(la.to_node)
        via = dist.get(self.links[b].from_node, math.inf)
        if math.isinf(via):
            return math.inf
        return (self.length(a) - s_a) + via + s_b

    def route_links(self, a: str, b: str) -> list[str] | None:
        """Connected link sequence from a to b inclusive (None if unreachable)."""
        if a == b:
            return [a]
        la = self.links[a]
        target = self.links[b].from_node
        dist, pred = self._shortest_from(la.to_node)
        if target not in dist:
            return None
        path = []
        node = target
        while node != la.to_node:
            link_id = pred[node]
            path.append(link_id)
            node = self.links[link_id].from_node
        return [a] + list(reversed(path)) + [b]


def viterbi(
    candidate_lists: list[list[Candidate]],
    gc_dists: list[float],
    graph: RoadGraph,
    sigma_m: float = DEFAULT_SIGMA_M,
    lambda_m: float = DEFAULT_LAMBDA_M,
) -> list[Candidate]:
    """Max-probability candidate per point under the HMM scores."""
    n = len(candidate_lists)
    assert n >= 1 and all(candidate_lists)
    score = [-c.distance_m**2 / (2.0 * sigma_m**2) for c in candidate_lists[0]]
    back: list[list[int]] = []
    for i in range(1, n):
        prev_cands = candidate_lists[i - 1]
        cur_cands = candidate_lists[i]
        gc = gc_dists[i - 1]
        new_score = []
        new_back = []
        for c in cur_cands:
            emit = -c.distance_m**2 / (2.0 * sigma_m**2)
            best, best_j = -math.inf, 0
            for j, p in enumerate(prev_cands):
                route = graph.route_distance(p.link_id, p.arc_s, c.link_id, c.arc_s)
                if math.isinf(route):
                    continue
                # the tiny route-length term breaks exact ties (e.g. between a
                # two-way link's directions at a route endpoint) toward the
                # shorter actual route without affecting non-degenerate choices
                trans = -abs(route - gc) / lambda_m - 1e-6 * route / lambda_m
                total = score[j] + trans
                if total > best:
                    best, best_j = total, j
            new_score.append(best + emit)
            new_back.append(best_j)
        score = new_score
        back.append(new_back)
    idx = int(np.argmax(score))
    path = [idx]
    for bk in reversed(back):
        idx = bk[idx]
        path.append(idx)
    path.reverse()
    return [cands[j] for cands, j in zip(candidate_lists, path)]


def match_segment(
    segment: TraceSegment,
    graph: RoadGraph,
    sigma_m: float = DEFAULT_SIGMA_M,
    lambda_m: float = DEFAULT_LAMBDA_M,
    radius_m: float = DEFAULT_RADIUS_M,
) -> list[TraceSegment]:
    """Match a segment, splitting at points with no candidate link.

    Returns fully matched sub-segments with `matched_links`, `route_links`
    and per-point `arc_s` filled in. Raises MatchRejected when more than half
    of the points have no candidates.
    """
    from .geo import haversine_m

    pts = segment.points
    cand_lists = [graph.candidates(p.lat, p.lon, radius_m) for p in pts]
    n_missing = sum(1 for c in cand_lists if not c)
    if n_missing > 0.5 * len(pts):
        raise MatchRejected(
            f"{segment.segment_id}: {n_missing}/{len(pts)} points off-network"
        )

    # contiguous runs of points that do have candidates
    runs: list[tuple[int, int]] = []
    start = None
    for i, cands in enumerate(cand_lists):
        if cands and start is None:
            start = i
        elif not cands and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(pts)))

    out: list[TraceSegment] = []
    multi = len(runs) > 1
    for ri, (lo, hi) in enumerate(runs):
        if hi - lo < 2:
            continue
        run_pts = pts[lo:hi]
        gc = [
            haversine_m(a.lat, a.lon, b.lat, b.lon)
            for a, b in zip(run_pts[:-1], run_pts[1:])
        ]
        decoded = viterbi(cand_lists[lo:hi], gc, graph, sigma_m, lambda_m)

        # expand to a connected route and compute arc positions
        route: list[str] = [decoded[0].link_id]
        offset = 0.0  # route arc-length at the start of the current last link
        arc = [decoded[0].arc_s]
        ok = True
        for prev, cur in zip(decoded[:-1], decoded[1:]):
            if cur.link_id == route[-1] and cur.arc_s >= prev.arc_s - 1e-9:
                arc.append(offset + cur.arc_s)
                continue
            hop = graph.route_links(route[-1], cur.link_id)
            if hop is None or (len(hop) == 1 and cur.link_id != route[-1]):
                ok = False
                break
            if cur.link_id == route[-1]:
                # went around a loop back onto the same link
                hop = graph.route_links(route[-1], cur.link_id)
            for link_id in hop[1:]:
                offset += graph.length(route[-1])
                route.append(link_id)
            arc.append(offset + cur.arc_s)
        if not ok:
            continue
        seg_id = segment.segment_id + (f"/{ri}" if multi else "")
        out.append(
            replace(
                segment,
                segment_id=seg_id,
                points=run_pts,
                matched_links=[c.link_id for c in decoded],
                route_links=route,
                arc_s=arc,
            )
        )
    return out
