"""Locally weighted quadratic smoothing of arc-length vs time.

Position along the matched route is fitted with a tricube-weighted local
quadratic at every integer second; speed and acceleration come from the
first and second derivatives of the local polynomial, so both are defined
and continuous. Gaps below the segmentation threshold are imputed by the
same fit.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .gpx import SmoothedSeries, TraceSegment

MIN_BANDWIDTH_S = 11.0
MIN_NEIGHBORS = 7


def _local_quadratic(t: np.ndarray, s: np.ndarray, t0: float, h: float) -> tuple[float, float, float]:
    """Weighted quadratic fit around t0; returns (value, slope, curvature*2).

    The bandwidth is widened until at least three points carry weight, so the
    normal equations stay well posed near segment edges and inside gaps.
    """
    for _ in range(32):
        u = np.abs(t - t0) / h
        w = np.clip(1.0 - u**3, 0.0, None) ** 3
        active = w > 0.0
        if active.sum() >= 3:
            break
        h *= 2.0
    dt = t[active] - t0
    sw = np.sqrt(w[active])
    X = np.column_stack([np.ones_like(dt), dt, dt**2]) * sw[:, None]
    y = s[active] * sw
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(coef[0]), float(coef[1]), 2.0 * float(coef[2])


def smooth_series(
    t: np.ndarray,
    s: np.ndarray,
    min_bandwidth_s: float = MIN_BANDWIDTH_S,
    min_neighbors: int = MIN_NEIGHBORS,
) -> SmoothedSeries:
    """Smooth an irregular (t, s) series onto the integer-second grid."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if len(t) < 2:
        raise DomainError("need at least 2 samples to smooth")
    order = np.argsort(t)
    t, s = t[order], s[order]

    grid = np.arange(np.ceil(t[0]), np.floor(t[-1]) + 0.5)
    if len(grid) == 0:
        raise DomainError("segment spans no integer second")

    span = t[-1] - t[0]
    fallback = span < min_bandwidth_s or len(t) < min_neighbors
    if fallback:
        # global quadratic fit
        X = np.column_stack([np.ones_like(t), t - t[0], (t - t[0]) ** 2])
        coef, *_ = np.linalg.lstsq(X, s, rcond=None)
        dt = grid - t[0]
        pos = coef[0] + coef[1] * dt + coef[2] * dt**2
        speed = coef[1] + 2.0 * coef[2] * dt
        accel = np.full_like(grid, 2.0 * coef[2])
    else:
        pos = np.empty(len(grid))
        speed = np.empty(len(grid))
        accel = np.empty(len(grid))
        for i, t0 in enumerate(grid):
            # bandwidth: at least min_bandwidth_s, widened to cover the
            # min_neighbors nearest samples
            dist = np.abs(t - t0)
            kth = np.partition(dist, min_neighbors - 1)[min_neighbors - 1]
            h = max(min_bandwidth_s, kth * 1.0001)
            pos[i], speed[i], accel[i] = _local_quadratic(t, s, t0, h)

    speed = np.clip(speed, 0.0, None)
    return SmoothedSeries(
        t=grid.tolist(),
        s=pos.tolist(),
        speed=speed.tolist(),
        accel=accel.tolist(),
        fallback_global_fit=fallback,
    )


def smooth(segment: TraceSegment) -> TraceSegment:
    """Attach the smoothed 1 s series to a matched segment."""
    if segment.arc_s is None:
        raise DomainError(f"{segment.segment_id}: segment not matched")
    t = np.array([p.t for p in segment.points])
    segment.smoothed = smooth_series(t, np.array(segment.arc_s))
    return segment
