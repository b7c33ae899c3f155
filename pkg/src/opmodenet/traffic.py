"""Peak-hour flow, volume-delay travel time, and congested speed per link."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import DomainError
from .geo import MPH_PER_MPS
from .roadnet import RoadLink

log = logging.getLogger(__name__)

# Hourly capacity fallbacks by functional class when the inventory record
# carries none (vehicles per hour per link). Configurable via
# traffic.capacity_defaults.
DEFAULT_CAPACITY_BY_CLASS = {
    "interstate": 3600.0,
    "principal_arterial": 1800.0,
    "minor_arterial": 1400.0,
    "collector": 1000.0,
    "local": 700.0,
}
FALLBACK_CAPACITY_VPH = 1000.0

# Guard band on congested speed above the posted limit, mph.
SPEED_CAP_OVER_LIMIT_MPH = 10.0


@dataclass(frozen=True)
class TrafficParams:
    k_factor: float = 0.09
    d_factor: float = 0.55
    alpha: float = 0.15
    beta: float = 4.0
    capacity_defaults: dict | None = None

    def __post_init__(self):
        if not (0.0 < self.k_factor <= 1.0):
            raise DomainError(f"K factor must be in (0, 1], got {self.k_factor}")
        if not (0.0 < self.d_factor <= 1.0):
            raise DomainError(f"D factor must be in (0, 1], got {self.d_factor}")
        if self.alpha < 0.0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 1.0:
            raise DomainError(f"beta must be >= 1, got {self.beta}")


@dataclass(frozen=True)
class LinkTrafficState:
    peak_hour_flow_vph: float
    free_flow_time_s: float
    travel_time_s: float
    congested_speed_mph: float
    v_over_c: float


def peak_hour_flow(aadt: float, params: TrafficParams) -> float:
    """Peak-hour volume: AADT scaled by the K and D factors."""
    if aadt < 0.0:
        raise DomainError(f"AADT must be >= 0, got {aadt}")
    return aadt * params.k_factor * params.d_factor


def bpr_travel_time(t0_s: float, volume_vph: float, capacity_vph: float, params: TrafficParams) -> float:
    """Volume-delay travel time: t0 * (1 + alpha * (v/c)^beta)."""
    if t0_s <= 0.0:
        raise DomainError(f"free-flow time must be > 0, got {t0_s}")
    if capacity_vph <= 0.0:
        raise DomainError(f"capacity must be > 0, got {capacity_vph}")
    if volume_vph < 0.0:
        raise DomainError(f"volume must be >= 0, got {volume_vph}")
    return t0_s * (1.0 + params.alpha * (volume_vph / capacity_vph) ** params.beta)


def congested_speed_mph(link: RoadLink, travel_time_s: float) -> float:
    """Link length over congested travel time, in mph.

    Capped at the posted limit plus a guard band to absorb inconsistent
    open-data length/time pairs.
    """
    if travel_time_s <= 0.0:
        raise DomainError(f"travel time must be > 0, got {travel_time_s}")
    speed = (link.length_m / travel_time_s) * MPH_PER_MPS
    if link.speed_limit_mph is not None:
        cap = link.speed_limit_mph + SPEED_CAP_OVER_LIMIT_MPH
        if speed > cap:
            log.warning("link %s: speed %.1f mph capped at %.1f", link.link_id, speed, cap)
            speed = cap
    return speed


def capacity_for(link: RoadLink, params: TrafficParams) -> float:
    if link.capacity_vph is not None and link.capacity_vph > 0:
        return link.capacity_vph
    defaults = params.capacity_defaults or DEFAULT_CAPACITY_BY_CLASS
    if link.functional_class is not None and link.functional_class in defaults:
        return float(defaults[link.functional_class])
    return FALLBACK_CAPACITY_VPH


def derive_state(link: RoadLink, params: TrafficParams) -> LinkTrafficState:
    """Full traffic derivation for one link.

    Free-flow time comes from the link's free-flow speed when present,
    otherwise from the posted limit, otherwise a 30 mph fallback.
    """
    ffs = link.free_flow_speed_mph or link.speed_limit_mph or 30.0
    t0 = link.length_m / (ffs / MPH_PER_MPS)
    flow = peak_hour_flow(link.aadt or 0.0, params)
    capacity = capacity_for(link, params)
    t_a = bpr_travel_time(t0, flow, capacity, params)
    return LinkTrafficState(
        peak_hour_flow_vph=flow,
        free_flow_time_s=t0,
        travel_time_s=t_a,
        congested_speed_mph=congested_speed_mph(link, t_a),
        v_over_c=flow / capacity,
    )
