"""
Conformance of a recorded capacity trace to its [rho_g, rho_M] bounds.

m1: fraction of slots a token bucket with burst rho*tau*x marks non-conforming.
m2: mean excess (max bound) or deficit (min bound) bits per window of G slots.
m3: mean length of runs of consecutive violating windows.
"""
import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Sequence, Tuple

import numpy as np

from src.common.errors import EmptyReportError, InvalidArgumentError
from src.env.flow import STAT_SMOOTHING
from src.models.tbrm import RateConstraint

# cut covering the cold start of the engine averages, in time constants 1/smoothing
WARMUP_TIME_CONSTANTS = 5.0


def warmup_slots(time_constants: float = WARMUP_TIME_CONSTANTS, smoothing: float = STAT_SMOOTHING) -> int:
    """Slots the per-slot exponential averages need to forget their initial values."""
    if time_constants < 0:
        raise InvalidArgumentError(f"warm-up must be >= 0 time constants, got {time_constants}")
    if not 0 < smoothing <= 1:
        raise InvalidArgumentError(f"smoothing must lie in (0, 1], got {smoothing}")
    return int(math.ceil(round(time_constants / smoothing, 9)))


WARMUP_SLOTS = warmup_slots()


class BoundPair(NamedTuple):
    max: float
    min: float
    max_disabled: bool = False
    min_disabled: bool = False


@dataclass(frozen=True)
class CapacityTrace:
    rates: np.ndarray
    tau: float
    constraint: RateConstraint

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float).reshape(-1)
        if self.tau <= 0:
            raise InvalidArgumentError(f"tau must be > 0, got {self.tau}")
        if np.any(rates < 0) or np.any(rates > float(self.constraint.cmax) * (1 + 1e-12)):
            raise InvalidArgumentError("trace rates must lie in [0, cmax]")
        object.__setattr__(self, "rates", rates)

    @property
    def rho_g(self) -> float:
        return float(self.constraint.rho_g)

    @property
    def rho_M(self) -> float:
        return float(self.constraint.rho_M)

    @property
    def lower_enabled(self) -> bool:
        return bool(self.constraint.lower_enabled)

    @property
    def upper_enabled(self) -> bool:
        return bool(self.constraint.upper_enabled)

    def after_warmup(self, warmup: int = WARMUP_SLOTS) -> "CapacityTrace":
        return CapacityTrace(rates=self.rates[warmup:], tau=self.tau, constraint=self.constraint)


def bucket_levels(drift: np.ndarray) -> np.ndarray:
    """b(t+1) = max(0, b(t) + drift(t)) from b(0) = 0; entry t is b(t+1)."""
    return np.fromiter(itertools.accumulate(drift, lambda b, d: max(0.0, b + d), initial=0.0),
                       dtype=float, count=drift.size + 1)[1:]


def excess_levels(trace: CapacityTrace) -> np.ndarray:
    return bucket_levels((trace.rates - trace.rho_M) * trace.tau)


def deficit_levels(trace: CapacityTrace) -> np.ndarray:
    return bucket_levels((trace.rho_g - trace.rates) * trace.tau)


def m1(trace: CapacityTrace, x: float) -> BoundPair:
    """A slot is non-conforming when its bucket level, after the slot, exceeds rho*tau*x."""
    if x <= 0:
        raise InvalidArgumentError(f"burst multiplier must be > 0, got {x}")
    if trace.rates.size == 0:
        raise EmptyReportError("trace has no slots")
    fraction_max = fraction_min = 0.0
    if trace.upper_enabled:
        fraction_max = float(np.mean(excess_levels(trace) > trace.rho_M * trace.tau * x))
    if trace.lower_enabled:
        fraction_min = float(np.mean(deficit_levels(trace) > trace.rho_g * trace.tau * x))
    return BoundPair(fraction_max, fraction_min, not trace.upper_enabled, not trace.lower_enabled)


def window_excess(trace: CapacityTrace, G: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-window (excess over rho_M, deficit under rho_g) in bits, trailing partial window dropped."""
    if G < 1:
        raise InvalidArgumentError(f"window size must be >= 1, got {G}")
    W = trace.rates.size // G
    if W == 0:
        raise EmptyReportError(f"trace of {trace.rates.size} slots is shorter than a window of {G}")
    reserved = (trace.rates[:W * G] * trace.tau).reshape(W, G).sum(axis=1)
    excess = np.maximum(reserved - trace.rho_M * G * trace.tau, 0.0) if trace.upper_enabled else np.zeros(W)
    deficit = np.maximum(trace.rho_g * G * trace.tau - reserved, 0.0) if trace.lower_enabled else np.zeros(W)
    return excess, deficit


def m2(trace: CapacityTrace, G: int) -> BoundPair:
    excess, deficit = window_excess(trace, G)
    return BoundPair(float(excess.mean()), float(deficit.mean()), not trace.upper_enabled, not trace.lower_enabled)


def mean_streak(flags: Sequence[bool]) -> float:
    """Mean length of maximal runs of True, 0 when there are none."""
    flags = np.asarray(flags, dtype=bool)
    if not flags.any():
        return 0.0
    padded = np.concatenate([[False], flags, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    return float((ends - starts).mean())


def m3(trace: CapacityTrace, G: int) -> BoundPair:
    excess, deficit = window_excess(trace, G)
    return BoundPair(mean_streak(excess > 0), mean_streak(deficit > 0),
                     not trace.upper_enabled, not trace.lower_enabled)


@dataclass
class MetricsReport:
    m1_max: Dict[float, float] = field(default_factory=dict)
    m1_min: Dict[float, float] = field(default_factory=dict)
    m2_max: Dict[int, float] = field(default_factory=dict)
    m2_min: Dict[int, float] = field(default_factory=dict)
    m3_max: Dict[int, float] = field(default_factory=dict)
    m3_min: Dict[int, float] = field(default_factory=dict)
    max_disabled: bool = False
    min_disabled: bool = False


def compute_report(trace: CapacityTrace, x_max: Sequence[float], x_min: Sequence[float],
                   windows: Sequence[int], warmup: int = WARMUP_SLOTS) -> MetricsReport:
    """
    All three metrics for both bounds after the warm-up cut. A disabled bound is
    reported as NaN; windows longer than the remaining trace are skipped.
    """
    trace = trace.after_warmup(warmup)
    if trace.rates.size == 0:
        raise EmptyReportError(f"no slots left after a warm-up of {warmup}")
    if any(x <= 0 for x in list(x_max) + list(x_min)):
        raise InvalidArgumentError("burst multipliers must be > 0")
    report = MetricsReport(max_disabled=not trace.upper_enabled, min_disabled=not trace.lower_enabled)
    nan = float("nan")
    # the bucket trajectory does not depend on x, only the threshold does
    excess = excess_levels(trace) if trace.upper_enabled else None
    deficit = deficit_levels(trace) if trace.lower_enabled else None
    for x in x_max:
        report.m1_max[float(x)] = nan if excess is None else float(np.mean(excess > trace.rho_M * trace.tau * x))
    for x in x_min:
        report.m1_min[float(x)] = nan if deficit is None else float(np.mean(deficit > trace.rho_g * trace.tau * x))
    for G in windows:
        if G > trace.rates.size:
            continue
        over, under = window_excess(trace, int(G))
        report.m2_max[int(G)] = nan if report.max_disabled else float(over.mean())
        report.m2_min[int(G)] = nan if report.min_disabled else float(under.mean())
        report.m3_max[int(G)] = nan if report.max_disabled else mean_streak(over > 0)
        report.m3_min[int(G)] = nan if report.min_disabled else mean_streak(under > 0)
    return report
