import functools
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol

import numpy as np

from src.common.errors import InvalidArgumentError
from src.common.utils import resolve_path
from src.data.trace import Trace, generate_pseudo_trace, read_trace

log = logging.getLogger(__name__)

# slow/fast double sine defaults, relative to the base rate
SINE_AMP1, SINE_AMP2 = 0.3, 0.1
SINE_PERIOD1 = {"Sine2VS": 60.0, "Sine2F": 8.0}
SINE_PERIOD2 = 4.0
# Pareto ON/OFF defaults
PARETO_SHAPE = 1.4
PARETO_SOURCES = 16
PARETO_MEAN_ON = 0.4
PARETO_MEAN_OFF = 1.2
PARETO_LOAD = 0.7
# SAT keeps this many worst-case slots of service queued
SAT_BACKLOG_SLOTS = 2


class TrafficKind(str, Enum):
    SINE2VS = "Sine2VS"
    SINE2F = "Sine2F"
    SELF_SIMILAR = "SelfSimilar"
    TRACE = "Trace"
    SAT = "SAT"


@dataclass(frozen=True)
class TrafficSpec:
    kind: TrafficKind
    params: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0


class TrafficSource(Protocol):
    def arrivals(self, t: int, queue_bits: float) -> float:
        """Bits arriving during slot t, given the queue left after service in that slot."""


def sine2_arrivals(base_rate: float, amp1: float, period1: float, amp2: float, period2: float,
                   t_seconds: float, tau: float) -> float:
    rate = (base_rate + amp1 * np.sin(2 * np.pi * t_seconds / period1)
            + amp2 * np.sin(2 * np.pi * t_seconds / period2))
    return max(0.0, float(tau * rate))


def sat_arrivals(flow_queue_bits: float, cmax: float, tau: float) -> float:
    target = SAT_BACKLOG_SLOTS * cmax * tau + cmax * tau
    return max(0.0, target - flow_queue_bits)


def trace_arrivals(trace: Trace, t: int) -> float:
    return float(trace.volumes[t % len(trace)])


class ParetoOnOff:
    """
    Superposition of ON/OFF sources with Pareto distributed period lengths.
    Each source owns a child generator and draws its periods in fixed blocks,
    so the ON count at any slot does not depend on the order of queries.
    """

    BLOCK = 256

    def __init__(self, n_sources: int, shape: float, mean_on: float, mean_off: float, seed: int, tau: float):
        if shape <= 1.0:
            raise InvalidArgumentError(f"Pareto shape must be > 1 for a finite mean, got {shape}")
        if n_sources < 1:
            raise InvalidArgumentError("need at least one ON/OFF source")
        if mean_on <= 0 or mean_off <= 0 or tau <= 0:
            raise InvalidArgumentError("mean ON/OFF durations and tau must be > 0")
        self.n_sources = n_sources
        self.shape = shape
        self.mean_on, self.mean_off = mean_on, mean_off
        self.tau = tau
        p_on = mean_on / (mean_on + mean_off)
        self._rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_sources)]
        self._starts_on = [bool(rng.random() < p_on) for rng in self._rngs]
        self._ends: List[np.ndarray] = [np.zeros(0) for _ in range(n_sources)]

    def _pareto(self, rng: np.random.Generator, mean: float) -> np.ndarray:
        scale = mean * (self.shape - 1.0) / self.shape
        return scale * (1.0 + rng.pareto(self.shape, self.BLOCK))

    def _extend(self, i: int, until: float) -> None:
        rng = self._rngs[i]
        while self._ends[i].size == 0 or self._ends[i][-1] <= until:
            on, off = self._pareto(rng, self.mean_on), self._pareto(rng, self.mean_off)
            pairs = np.column_stack([on, off] if self._starts_on[i] else [off, on]).reshape(-1)
            last = self._ends[i][-1] if self._ends[i].size else 0.0
            self._ends[i] = np.concatenate([self._ends[i], last + np.cumsum(pairs)])

    def on_count(self, t: int) -> int:
        return int(self.series(np.array([t]))[0])

    def series(self, slots: np.ndarray) -> np.ndarray:
        """Number of ON sources at the start of each given slot."""
        times = np.asarray(slots, dtype=float) * self.tau
        count = np.zeros(times.shape, dtype=np.int64)
        for i in range(self.n_sources):
            self._extend(i, float(times.max()) if times.size else 0.0)
            completed = np.searchsorted(self._ends[i], times, side="right")
            count += (completed % 2 == 0) == self._starts_on[i]
        return count


@functools.lru_cache(maxsize=64)
def _pareto_process(n_sources: int, shape: float, mean_on: float, mean_off: float, seed: int,
                    tau: float) -> ParetoOnOff:
    return ParetoOnOff(n_sources, shape, mean_on, mean_off, seed, tau)


def selfsimilar_arrivals(n_sources: int, pareto_shape: float, on_rate: float, mean_on: float, mean_off: float,
                         seed: int, t: int, tau: float) -> float:
    process = _pareto_process(n_sources, pareto_shape, mean_on, mean_off, seed, tau)
    return float(tau * on_rate * process.on_count(t))


class Sine2Source:
    def __init__(self, base_rate: float, amp1: float, period1: float, amp2: float, period2: float, tau: float):
        if not base_rate >= amp1 + amp2 >= 0 or amp1 < 0 or amp2 < 0:
            raise InvalidArgumentError("sine traffic needs base_rate >= amp1 + amp2 >= 0")
        if period1 <= 0 or period2 <= 0:
            raise InvalidArgumentError("sine periods must be > 0")
        self.base_rate, self.amp1, self.period1, self.amp2, self.period2 = base_rate, amp1, period1, amp2, period2
        self.tau = tau

    def arrivals(self, t: int, queue_bits: float) -> float:
        return sine2_arrivals(self.base_rate, self.amp1, self.period1, self.amp2, self.period2, t * self.tau, self.tau)


class SelfSimilarSource:
    def __init__(self, n_sources: int, pareto_shape: float, on_rate: float, mean_on: float, mean_off: float,
                 seed: int, tau: float):
        if on_rate < 0:
            raise InvalidArgumentError("on_rate must be >= 0")
        # one process per source object, no sharing through the cache
        self.process = ParetoOnOff(n_sources, pareto_shape, mean_on, mean_off, seed, tau)
        self.on_rate = on_rate
        self.tau = tau

    @property
    def mean_rate(self) -> float:
        p = self.process
        return p.n_sources * self.on_rate * p.mean_on / (p.mean_on + p.mean_off)

    def arrivals(self, t: int, queue_bits: float) -> float:
        return float(self.tau * self.on_rate * self.process.on_count(t))


class SatSource:
    def __init__(self, cmax: float, tau: float):
        self.cmax, self.tau = cmax, tau

    def arrivals(self, t: int, queue_bits: float) -> float:
        return sat_arrivals(queue_bits, self.cmax, self.tau)


class TraceSource:
    def __init__(self, trace: Trace):
        self.trace = trace

    def arrivals(self, t: int, queue_bits: float) -> float:
        return trace_arrivals(self.trace, t)


def _midpoint(rho_g: float, rho_M: float, cmax: float) -> float:
    upper = rho_M if np.isfinite(rho_M) and rho_M > 0 else cmax
    return (rho_g + min(upper, cmax)) / 2


def build_source(spec: TrafficSpec, tau: float, cmax: float, rho_g: float, rho_M: float,
                 horizon: int, base_dir: Optional[Path] = None) -> TrafficSource:
    """Instantiate a source from its spec, filling unset parameters with the scenario defaults."""
    kind = TrafficKind(spec.kind)
    params = dict(spec.params)
    if kind in (TrafficKind.SINE2VS, TrafficKind.SINE2F):
        base = float(params.get("base_rate", _midpoint(rho_g, rho_M, cmax)))
        source = Sine2Source(base_rate=base,
                             amp1=float(params.get("amp1", SINE_AMP1 * base)),
                             period1=float(params.get("period1", SINE_PERIOD1[kind.value])),
                             amp2=float(params.get("amp2", SINE_AMP2 * base)),
                             period2=float(params.get("period2", SINE_PERIOD2)),
                             tau=tau)
        mean = source.base_rate
    elif kind is TrafficKind.SELF_SIMILAR:
        n_sources = int(params.get("n_sources", PARETO_SOURCES))
        mean_on = float(params.get("mean_on", PARETO_MEAN_ON))
        mean_off = float(params.get("mean_off", PARETO_MEAN_OFF))
        p_on = mean_on / (mean_on + mean_off)
        default_on_rate = PARETO_LOAD * min(rho_M, cmax) / (n_sources * p_on)
        source = SelfSimilarSource(n_sources=n_sources,
                                   pareto_shape=float(params.get("pareto_shape", PARETO_SHAPE)),
                                   on_rate=float(params.get("on_rate", default_on_rate)),
                                   mean_on=mean_on, mean_off=mean_off, seed=spec.seed, tau=tau)
        mean = source.mean_rate
    elif kind is TrafficKind.TRACE:
        if "path" in params:
            path = resolve_path(params["path"], base_dir)
            trace = read_trace(path)
            if trace.tau is not None and not np.isclose(trace.tau, tau):
                log.warning("%s was recorded with tau=%g, replaying it at tau=%g", path, trace.tau, tau)
        else:
            trace = generate_pseudo_trace(mean_rate=float(params.get("mean_rate", _midpoint(rho_g, rho_M, cmax))),
                                          tau=tau, n_slots=max(horizon, 1), seed=spec.seed,
                                          frame_sigma=float(params.get("frame_sigma", 0.8)),
                                          name=str(params.get("name", "pseudo")))
        source = TraceSource(trace)
        mean = float(trace.volumes.mean()) / tau
    else:
        return SatSource(cmax, tau)
    if not np.isfinite(mean) or mean > cmax:
        raise InvalidArgumentError(f"{kind.value} mean offered rate {mean:.4g} exceeds capacity {cmax:.4g}")
    return source
