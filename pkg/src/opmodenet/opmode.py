"""Vehicle-specific power, the 23 operating-mode bins, link distributions,
and the average-speed drive-cycle baseline.

The bin table ships as data (data/opmode_bins.csv) and is the single source
of truth for the speed/VSP breakpoints; braking and idle are special rules
evaluated before the table lookup.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .attribution import LinkSecondRecord
from .errors import ConfigurationError, DomainError, ValidationError
from .geo import MPH_PER_MPS

CANONICAL_BINS = [0, 1, 11, 12, 13, 14, 15, 16, 21, 22, 23, 24, 25, 27, 28, 29, 30, 33, 35, 37, 38, 39, 40]
BIN_INDEX = {b: i for i, b in enumerate(CANONICAL_BINS)}
N_BINS = len(CANONICAL_BINS)

# Module grouping used by the network heads: braking/idle, low speed,
# moderate speed, high speed.
MODULE_BINS = [
    [0, 1],
    [11, 12, 13, 14, 15, 16],
    [21, 22, 23, 24, 25, 27, 28, 29, 30],
    [33, 35, 37, 38, 39, 40],
]

BRAKING_ACCEL_MPHPS = -2.0
BRAKING_HISTORY_MPHPS = -1.0
IDLE_SPEED_MPH = 1.0


@dataclass(frozen=True)
class VspCoefficients:
    """Road-load coefficients for the VSP formula, light-duty defaults."""

    a_kws_m: float = 0.156461
    b_kws2_m2: float = 0.002002
    c_kws3_m3: float = 0.000493
    mass_t: float = 1.4788
    g: float = 9.81

    def __post_init__(self):
        if self.mass_t <= 0:
            raise DomainError("mass must be > 0")
        if min(self.a_kws_m, self.b_kws2_m2, self.c_kws3_m3) < 0:
            raise DomainError("road-load coefficients must be >= 0")


DEFAULT_LDV = VspCoefficients()


def vsp_kw_per_tonne(
    speed_mps: float, accel_mps2: float, grade: float, coeffs: VspCoefficients = DEFAULT_LDV
) -> float:
    """Tractive power demand per unit mass, kW/tonne."""
    if speed_mps < 0:
        raise DomainError(f"speed must be >= 0, got {speed_mps}")
    v = speed_mps
    road_load = (coeffs.a_kws_m * v + coeffs.b_kws2_m2 * v**2 + coeffs.c_kws3_m3 * v**3) / coeffs.mass_t
    return road_load + v * (accel_mps2 + coeffs.g * grade)


@dataclass(frozen=True)
class BinRule:
    bin_id: int
    speed_lo: float
    speed_hi: float
    vsp_lo: float
    vsp_hi: float
    special_rule: str


def _bundled(name: str) -> Path:
    return Path(str(resources.files("opmodenet") / "data" / name))


def load_bin_table(path: str | Path | None = None) -> list[BinRule]:
    path = Path(path) if path is not None else _bundled("opmode_bins.csv")
    rules = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rules.append(
                BinRule(
                    bin_id=int(row["bin_id"]),
                    speed_lo=float(row["speed_lo"]) if row["speed_lo"] else -math.inf,
                    speed_hi=float(row["speed_hi"]) if row["speed_hi"] else math.inf,
                    vsp_lo=float(row["vsp_lo"]) if row["vsp_lo"] else -math.inf,
                    vsp_hi=float(row["vsp_hi"]) if row["vsp_hi"] else math.inf,
                    special_rule=row["special_rule"].strip(),
                )
            )
    ids = sorted(r.bin_id for r in rules)
    if ids != sorted(CANONICAL_BINS):
        raise ValidationError(f"bin table ids {ids} do not match the canonical set")
    return rules


_DEFAULT_TABLE: list[BinRule] | None = None


def _default_table() -> list[BinRule]:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = load_bin_table()
    return _DEFAULT_TABLE


def classify(
    speed_mph: float,
    accel_mphps: float,
    accel_history: tuple[float, ...] = (),
    vsp: float = 0.0,
    table: list[BinRule] | None = None,
) -> int:
    """Operating-mode bin for one second of driving.

    Braking takes precedence: a hard deceleration, or three consecutive
    seconds (this one plus the two in `accel_history`) below -1 mph/s. Idle
    next, then the speed-class / VSP table lookup.
    """
    if not all(map(math.isfinite, (speed_mph, accel_mphps, vsp))):
        raise DomainError("classify requires finite inputs")
    table = table if table is not None else _default_table()
    if accel_mphps <= BRAKING_ACCEL_MPHPS or (
        len(accel_history) >= 2
        and accel_mphps < BRAKING_HISTORY_MPHPS
        and all(a < BRAKING_HISTORY_MPHPS for a in accel_history[-2:])
    ):
        return 0
    if speed_mph < IDLE_SPEED_MPH:
        return 1
    for rule in table:
        if rule.special_rule:
            continue
        if rule.speed_lo <= speed_mph < rule.speed_hi and rule.vsp_lo <= vsp < rule.vsp_hi:
            return rule.bin_id
    raise DomainError(f"no bin for speed={speed_mph}, vsp={vsp}")  # unreachable for a total table


@dataclass
class OpModeDistribution:
    """Probability vector over the 23 canonical bins."""

    fractions: np.ndarray
    support_seconds: int = 0

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=float)
        if self.fractions.shape != (N_BINS,):
            raise ValidationError(f"expected {N_BINS} fractions, got {self.fractions.shape}")
        if np.any(self.fractions < 0):
            raise ValidationError("fractions must be non-negative")
        if self.support_seconds > 0 and abs(self.fractions.sum() - 1.0) > 1e-9:
            raise ValidationError(f"fractions sum to {self.fractions.sum()}, not 1")

    def fraction(self, bin_id: int) -> float:
        return float(self.fractions[BIN_INDEX[bin_id]])


def classify_records(
    records: list[LinkSecondRecord], coeffs: VspCoefficients = DEFAULT_LDV
) -> list[int]:
    """Classify a time-ordered record list, tracking the braking history.

    History resets whenever the record timestamps are not consecutive
    seconds (records from different traces on the same link).
    """
    ordered = sorted(records, key=lambda r: r.t)
    bins = []
    history: list[float] = []
    prev_t = None
    for rec in ordered:
        if prev_t is None or abs(rec.t - prev_t - 1.0) > 1e-6:
            history = []
        v = rec.speed_mph / MPH_PER_MPS
        a = rec.accel_mphps / MPH_PER_MPS
        vsp = vsp_kw_per_tonne(max(v, 0.0), a, rec.grade, coeffs)
        bins.append(classify(rec.speed_mph, rec.accel_mphps, tuple(history), vsp))
        history = (history + [rec.accel_mphps])[-2:]
        prev_t = rec.t
    return bins


def distribution(
    records: list[LinkSecondRecord], coeffs: VspCoefficients = DEFAULT_LDV
) -> OpModeDistribution:
    """Ground-truth distribution for one link from its second records."""
    if not records:
        raise DomainError("cannot compute a distribution from zero records")
    counts = np.zeros(N_BINS)
    for b in classify_records(records, coeffs):
        counts[BIN_INDEX[b]] += 1
    return OpModeDistribution(counts / counts.sum(), support_seconds=len(records))


@dataclass
class DriveCycle:
    """Reference per-second speed trace standing in for real driving at a
    given average speed."""

    cycle_id: str
    road_type: str
    speed_trace_mph: np.ndarray
    mean_speed_mph: float = field(init=False)

    def __post_init__(self):
        self.speed_trace_mph = np.asarray(self.speed_trace_mph, dtype=float)
        if len(self.speed_trace_mph) < 60:
            raise ValidationError(f"cycle {self.cycle_id}: trace shorter than 60 s")
        self.mean_speed_mph = float(self.speed_trace_mph.mean())


def cycle_distribution(cycle: DriveCycle, coeffs: VspCoefficients = DEFAULT_LDV) -> OpModeDistribution:
    """Operating-mode distribution of a drive cycle at zero grade."""
    speeds = cycle.speed_trace_mph
    accels = np.diff(speeds, prepend=speeds[0])  # mph/s on the 1 s trace
    records = [
        LinkSecondRecord("cycle", float(i), float(v), float(a), 0.0)
        for i, (v, a) in enumerate(zip(speeds, accels))
    ]
    return distribution(records, coeffs)


def load_cycle_library(directory: str | Path | None = None) -> list[DriveCycle]:
    """Load the drive-cycle library: manifest.csv plus one CSV per cycle."""
    directory = Path(directory) if directory is not None else _bundled("cycles")
    manifest = directory / "manifest.csv"
    if not manifest.exists():
        raise ConfigurationError(f"cycle manifest not found: {manifest}")
    cycles = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            trace_path = directory / f"{row['cycle_id']}.csv"
            speeds = []
            with open(trace_path, newline="") as tf:
                for trow in csv.DictReader(tf):
                    speeds.append(float(trow["speed_mph"]))
            cycles.append(DriveCycle(row["cycle_id"], row["road_type"], np.array(speeds)))
    return cycles


def baseline_from_avg_speed(
    avg_speed_mph: float,
    road_type: str,
    library: list[DriveCycle],
    coeffs: VspCoefficients = DEFAULT_LDV,
    _cache: dict | None = None,
) -> OpModeDistribution:
    """Default-method distribution: interpolate the two road-type cycles
    whose mean speeds bracket the link's average speed.

    Outside the library's speed range the extreme cycle is used unchanged.
    This approximates the reference tool's internal cycle selection; the
    bundled synthetic library is a stand-in and real cycles drop in via the
    same CSV layout.
    """
    matching = sorted(
        (c for c in library if c.road_type == road_type), key=lambda c: c.mean_speed_mph
    )
    if not matching:
        raise ConfigurationError(f"no drive cycles for road type {road_type!r}")

    def dist_of(cycle: DriveCycle) -> np.ndarray:
        if _cache is not None:
            if cycle.cycle_id not in _cache:
                _cache[cycle.cycle_id] = cycle_distribution(cycle, coeffs).fractions
            return _cache[cycle.cycle_id]
        return cycle_distribution(cycle, coeffs).fractions

    if avg_speed_mph <= matching[0].mean_speed_mph:
        return OpModeDistribution(dist_of(matching[0]), support_seconds=len(matching[0].speed_trace_mph))
    if avg_speed_mph >= matching[-1].mean_speed_mph:
        return OpModeDistribution(dist_of(matching[-1]), support_seconds=len(matching[-1].speed_trace_mph))
    for lo, hi in zip(matching[:-1], matching[1:]):
        if lo.mean_speed_mph <= avg_speed_mph <= hi.mean_speed_mph:
            span = hi.mean_speed_mph - lo.mean_speed_mph
            w = 0.0 if span == 0 else (avg_speed_mph - lo.mean_speed_mph) / span
            mixed = (1.0 - w) * dist_of(lo) + w * dist_of(hi)
            mixed = mixed / mixed.sum()
            return OpModeDistribution(mixed, support_seconds=len(lo.speed_trace_mph))
    raise ConfigurationError("unreachable: cycle bracketing failed")  # pragma: no cover
