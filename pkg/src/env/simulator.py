import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np

from src.common.errors import InvalidArgumentError
from src.data.traffic import TrafficSource, TrafficSpec, build_source
from src.env.flow import STAT_SMOOTHING, FlowState
from src.models.rate_region import RateRegion, UtilityEntry
from src.models.schedulers import FlowObservables, SchedulerKind, SigmoidDelayUtility, base_weights
from src.models.solver import SolverMethod, solve
from src.models.tbrm import (ALPHAS, OMEGA_SMOOTHING, SIGMA_MULTIPLIER, RateConstraint, TbrmMode, TbrmState,
                             modified_weights, phi_and_exponent, update_omega_bar, update_tokens)

log = logging.getLogger(__name__)


@dataclass
class SimConfig:
    region: RateRegion
    traffic: Sequence[TrafficSpec]
    rho_g: np.ndarray
    rho_M: np.ndarray
    delay_bound: np.ndarray
    violation_prob: np.ndarray
    scheduler: SchedulerKind = SchedulerKind.MW
    tau: float = 0.05
    horizon: int = 12000
    seed: int = 1
    tbrm_enabled: bool = True
    tbrm_mode: TbrmMode = TbrmMode.MULTIPLICATIVE
    tbrm_alpha: str = "linear"
    sigma_g_mult: Optional[np.ndarray] = None
    sigma_M_mult: Optional[np.ndarray] = None
    solver_method: SolverMethod = SolverMethod.CLOSED_FORM
    smoothing: float = STAT_SMOOTHING
    omega_smoothing: float = OMEGA_SMOOTHING
    name: str = "sim"
    base_dir: Optional[Path] = None

    def __post_init__(self):
        n = self.region.n_users
        self.rho_g = self._per_user(self.rho_g, "rho_g")
        self.rho_M = self._per_user(self.rho_M, "rho_M")
        self.delay_bound = self._per_user(self.delay_bound, "delay_bound")
        self.violation_prob = self._per_user(self.violation_prob, "violation_prob")
        self.sigma_g_mult = self._per_user(SIGMA_MULTIPLIER if self.sigma_g_mult is None else self.sigma_g_mult,
                                           "sigma_g_mult")
        self.sigma_M_mult = self._per_user(SIGMA_MULTIPLIER if self.sigma_M_mult is None else self.sigma_M_mult,
                                           "sigma_M_mult")
        self.scheduler = SchedulerKind(self.scheduler)
        self.tbrm_mode = TbrmMode(self.tbrm_mode)
        self.solver_method = SolverMethod(self.solver_method)
        if len(self.traffic) != n:
            raise InvalidArgumentError(f"expected {n} traffic specs, got {len(self.traffic)}")
        self.validate()

    def _per_user(self, value, name: str) -> np.ndarray:
        arr = np.broadcast_to(np.asarray(value, dtype=float), (self.region.n_users,)).copy()
        if np.any(np.isnan(arr)):
            raise InvalidArgumentError(f"{name} contains NaN")
        return arr

    @property
    def n_users(self) -> int:
        return self.region.n_users

    @property
    def constraint(self) -> RateConstraint:
        return RateConstraint(rho_g=self.rho_g, rho_M=self.rho_M, cmax=self.region.cmax)

    def validate(self) -> None:
        if not self.tau > 0:
            raise InvalidArgumentError(f"tau must be > 0, got {self.tau}")
        if self.horizon < 0:
            raise InvalidArgumentError(f"horizon must be >= 0, got {self.horizon}")
        if np.any(self.delay_bound <= 0):
            raise InvalidArgumentError("delay bounds must be > 0")
        if np.any((self.violation_prob <= 0) | (self.violation_prob >= 1)):
            raise InvalidArgumentError("violation probabilities must lie in (0, 1)")
        if np.any(self.sigma_g_mult <= 0) or np.any(self.sigma_M_mult <= 0):
            raise InvalidArgumentError("sigma multipliers must be > 0")
        if self.tbrm_alpha not in ALPHAS:
            raise InvalidArgumentError(f"unknown alpha '{self.tbrm_alpha}', expected one of {sorted(ALPHAS)}")
        self.constraint.validate()


@dataclass
class SlotRecord:
    t: int
    assigned_rate: np.ndarray
    served_bits: np.ndarray
    arrival_bits: np.ndarray
    queue_start: np.ndarray
    queue_bits: np.ndarray
    hol_delay: np.ndarray
    base_weight: np.ndarray
    eff_weight: np.ndarray
    k_g: np.ndarray
    k_M: np.ndarray
    degenerate: bool = False


class Simulator:
    """
    Slotted loop: the allocation requested at the end of slot t-1 is applied in slot t,
    queues are served and refilled, then weights for slot t+1 are computed and the
    NUM problem is solved.
    """

    def __init__(self, config: SimConfig, sources: Optional[Sequence[TrafficSource]] = None):
        self.config = config
        n = config.n_users
        cmax = config.region.cmax
        if sources is None:
            sources = [build_source(self._seeded(spec, i), config.tau, float(cmax[i]), float(config.rho_g[i]),
                                    float(config.rho_M[i]), config.horizon, config.base_dir)
                       for i, spec in enumerate(config.traffic)]
        if len(sources) != n:
            raise InvalidArgumentError(f"expected {n} traffic sources, got {len(sources)}")
        self.sources = list(sources)
        self.flows = [FlowState(float(c), config.tau, config.smoothing) for c in cmax]
        self.constraint = config.constraint
        self.tbrm = TbrmState.initial(self.constraint, config.tau, config.sigma_g_mult, config.sigma_M_mult)
        self.class_utility = SigmoidDelayUtility(config.delay_bound)
        self.alpha = ALPHAS[config.tbrm_alpha]
        # nothing was requested before slot 0
        self.pending = np.zeros(n)
        self.n_degenerate = 0

    def _seeded(self, spec: TrafficSpec, user: int) -> TrafficSpec:
        seed = int(np.random.SeedSequence([self.config.seed, user, spec.seed]).generate_state(1)[0])
        return TrafficSpec(kind=spec.kind, params=spec.params, seed=seed)

    def observables(self, t: int) -> FlowObservables:
        cfg = self.config
        return FlowObservables(
            queue_bits=np.array([f.queue_bits for f in self.flows]),
            hol_delay=np.array([f.hol_delay(t) for f in self.flows]),
            avg_rate=np.array([f.avg_rate for f in self.flows]),
            avg_waiting=np.array([f.avg_waiting for f in self.flows]),
            avg_arrival_rate=np.array([f.avg_arrival_rate for f in self.flows]),
            delay_bound=cfg.delay_bound,
            violation_prob=cfg.violation_prob,
        )

    def solver_weights(self, base: np.ndarray, weights: np.ndarray) -> np.ndarray:
        cfg = self.config
        if np.all(np.isfinite(weights)):
            return weights
        if cfg.tbrm_mode is TbrmMode.ADDITIVE:
            return np.nan_to_num(weights, nan=0.0, posinf=np.finfo(float).max)
        # exp overflow: only ratios matter to the argmax, rescale in log space
        phi, exponent = phi_and_exponent(self.tbrm, base)
        positive = phi > 0
        if not positive.any():
            return np.zeros_like(phi)
        logs = np.where(positive, np.log(np.where(positive, phi, 1.0)) + exponent, -np.inf)
        return np.where(positive, np.exp(logs - logs.max()), 0.0)

    def step(self, t: int) -> SlotRecord:
        cfg = self.config
        rates = np.clip(self.pending, 0.0, cfg.region.cmax)
        n = cfg.n_users
        served, arrivals, queue_start = np.zeros(n), np.zeros(n), np.zeros(n)
        for i, (flow, source) in enumerate(zip(self.flows, self.sources)):
            queue_start[i] = flow.queue_bits
            served[i], sample = flow.serve(float(rates[i]), t)
            arrivals[i] = source.arrivals(t, flow.queue_bits)
            flow.enqueue(arrivals[i], t)
            flow.update_statistics(float(rates[i]), arrivals[i], sample)

        self.tbrm = update_tokens(self.tbrm, self.constraint, rates, cfg.tau)
        obs = self.observables(t + 1)
        base, form = base_weights(cfg.scheduler, obs, self.class_utility)
        self.tbrm = update_omega_bar(self.tbrm, base, cfg.omega_smoothing)
        eff = base.copy()
        if cfg.tbrm_enabled:
            with np.errstate(over="ignore", invalid="ignore"):
                eff = modified_weights(self.tbrm, base, cfg.tbrm_mode, self.alpha)
        weights = self.solver_weights(base, eff)
        allocation = solve(cfg.region, [UtilityEntry(form, float(w)) for w in weights], cfg.solver_method)
        if allocation.degenerate:
            self.n_degenerate += 1
            log.debug("slot %d: degenerate objective, all weights zero", t)
        self.pending = np.clip(allocation.rates, 0.0, cfg.region.cmax)

        return SlotRecord(t=t, assigned_rate=rates, served_bits=served, arrival_bits=arrivals,
                          queue_start=queue_start, queue_bits=np.array([f.queue_bits for f in self.flows]),
                          hol_delay=obs.hol_delay, base_weight=base, eff_weight=eff,
                          k_g=self.tbrm.k_g.copy(), k_M=self.tbrm.k_M.copy(), degenerate=allocation.degenerate)

    def records(self) -> Iterator[SlotRecord]:
        for t in range(self.config.horizon):
            yield self.step(t)
        if self.n_degenerate:
            log.warning("%s: %d of %d slots had an all-zero objective", self.config.name,
                        self.n_degenerate, self.config.horizon)


def run(config: SimConfig, sources: Optional[Sequence[TrafficSource]] = None) -> List[SlotRecord]:
    return list(Simulator(config, sources).records())
