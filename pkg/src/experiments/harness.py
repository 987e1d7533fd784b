"""
Experiment orchestration: runs (scenario, scheduler, tbrm) jobs on a pool of
worker processes and writes the rate, metric and aggregate CSVs.
"""
import logging
import queue
from dataclasses import dataclass, replace
from multiprocessing import Process, Queue
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from omegaconf import DictConfig
from tqdm import tqdm

from src.common.errors import InvalidArgumentError
from src.common.utils import PROJECT_ROOT
from src.data.trace import write_trace
from src.data.traffic import TraceSource
from src.env.simulator import SimConfig, SlotRecord, Simulator
from src.experiments.scenario import load_scenario
from src.metrics.conformance import (WARMUP_SLOTS, WARMUP_TIME_CONSTANTS, CapacityTrace, MetricsReport,
                                     compute_report, warmup_slots)
from src.models.schedulers import SchedulerKind
from src.models.tbrm import RateConstraint

log = logging.getLogger(__name__)

RATE_COLUMNS = ["slot", "user", "assigned_rate_bps", "served_bits", "queue_bits", "hol_s",
                "k_g_bits", "k_M_bits", "base_weight", "eff_weight"]
METRIC_NAMES = ("m1", "m2", "m3")
BOUNDS = ("max", "min")
AGGREGATE_HEADER = "# mean over (scheduler, scenario, user) tuples with equal weight; disabled bounds excluded"
SCENARIO_DIR = PROJECT_ROOT / "conf" / "scenario"


@dataclass(frozen=True)
class MetricGrids:
    x_max: Tuple[float, ...]
    x_min: Tuple[float, ...]
    windows: Tuple[int, ...]
    warmup: int = WARMUP_SLOTS

    @classmethod
    def from_ranges(cls, x_max: Tuple[float, float, float], x_min: Tuple[float, float, float],
                    windows: Tuple[int, int], warmup: int = WARMUP_SLOTS) -> "MetricGrids":
        return cls(x_max=tuple(float_range(*x_max)), x_min=tuple(float_range(*x_min)),
                   windows=tuple(range(int(windows[0]), int(windows[1]) + 1)), warmup=warmup)

    def grid(self, metric: str, bound: str) -> Tuple:
        if metric == "m1":
            return self.x_max if bound == "max" else self.x_min
        return self.windows


def float_range(start: float, stop: float, step: float) -> List[float]:
    """Inclusive arithmetic grid, rounded so that 0.05-steps print cleanly."""
    if step <= 0 or stop < start:
        raise InvalidArgumentError(f"bad grid start={start} stop={stop} step={step}")
    n = int(round((stop - start) / step)) + 1
    return [round(v, 10) for v in np.linspace(start, stop, n)]


def log_grid(start: float, stop: float, num: int) -> List[float]:
    if start <= 0 or stop <= 0 or num < 1:
        raise InvalidArgumentError(f"bad log grid start={start} stop={stop} num={num}")
    return [float(v) for v in np.logspace(np.log10(start), np.log10(stop), num)]


@dataclass(frozen=True)
class Job:
    job_id: int
    scenario: str
    config: SimConfig
    write_rates: bool = False
    label: str = ""


@dataclass
class JobResult:
    job_id: int
    scenario: str
    scheduler: SchedulerKind
    tbrm_enabled: bool
    reports: List[MetricsReport]
    rates: Optional[pd.DataFrame] = None
    label: str = ""


def resolve_scenario(name: str, scenario_dir: Optional[Path] = None) -> Path:
    """A preset name (scenario1) or a path to a scenario file."""
    path = Path(name)
    if path.suffix in (".yaml", ".yml", ".json") and path.exists():
        return path
    return Path(scenario_dir or SCENARIO_DIR) / f"{name}.yaml"


def records_frame(records: Sequence[SlotRecord]) -> pd.DataFrame:
    """Per-slot records in long format, one row per (slot, user)."""
    if not records:
        return pd.DataFrame(columns=RATE_COLUMNS)
    n = records[0].assigned_rate.size

    def stack(attr: str) -> np.ndarray:
        return np.stack([getattr(r, attr) for r in records]).reshape(-1)

    return pd.DataFrame({
        "slot": np.repeat([r.t for r in records], n),
        "user": np.tile(np.arange(n), len(records)),
        "assigned_rate_bps": stack("assigned_rate"),
        "served_bits": stack("served_bits"),
        "queue_bits": stack("queue_bits"),
        "hol_s": stack("hol_delay"),
        "k_g_bits": stack("k_g"),
        "k_M_bits": stack("k_M"),
        "base_weight": stack("base_weight"),
        "eff_weight": stack("eff_weight"),
    }, columns=RATE_COLUMNS)


def user_reports(rates: np.ndarray, config: SimConfig, grids: MetricGrids) -> List[MetricsReport]:
    """rates has shape (horizon, n_users)."""
    reports = []
    for i in range(config.n_users):
        constraint = RateConstraint(rho_g=float(config.rho_g[i]), rho_M=float(config.rho_M[i]),
                                    cmax=float(config.region.cmax[i]))
        trace = CapacityTrace(rates=rates[:, i], tau=config.tau, constraint=constraint)
        reports.append(compute_report(trace, grids.x_max, grids.x_min, grids.windows, grids.warmup))
    return reports


def execute(job: Job, grids: MetricGrids) -> JobResult:
    records = list(Simulator(job.config).records())
    rates = np.stack([r.assigned_rate for r in records]) if records else np.zeros((0, job.config.n_users))
    return JobResult(job_id=job.job_id, scenario=job.scenario, scheduler=job.config.scheduler,
                     tbrm_enabled=job.config.tbrm_enabled, reports=user_reports(rates, job.config, grids),
                     rates=records_frame(records) if job.write_rates else None, label=job.label)


################################################################################
#                           Worker routine                                     #
################################################################################
def worker_routine(p_queue: Queue, r_queue: Queue, e_queue: Queue, grids: MetricGrids) -> None:
    """
    Pulls jobs from p_queue, runs them and pushes (job_id, result) to r_queue.
    A failing job pushes (job_id, exception) so the parent can re-raise it.
    As soon as e_queue is non empty, the worker terminates.
    """
    while e_queue.empty():
        try:
            job = p_queue.get(timeout=.1)
        except queue.Empty:
            continue
        try:
            r_queue.put((job.job_id, execute(job, grids)))
        except Exception as e:  # noqa: BLE001 re-raised by the parent
            r_queue.put((job.job_id, e))


def run_jobs(jobs: Sequence[Job], grids: MetricGrids, n_workers: int = 1, desc: str = "jobs") -> List[JobResult]:
    """Results are returned in job order whatever the number of workers."""
    if n_workers < 1:
        raise InvalidArgumentError(f"n_workers must be >= 1, got {n_workers}")
    results: Dict[int, JobResult] = {}
    if n_workers == 1 or len(jobs) <= 1:
        for job in tqdm(jobs, desc=desc):
            results[job.job_id] = execute(job, grids)
    else:
        p_queue, r_queue, e_queue = Queue(), Queue(), Queue()
        for job in jobs:
            p_queue.put(job)
        workers = [Process(target=worker_routine, args=(p_queue, r_queue, e_queue, grids), daemon=True)
                   for _ in range(min(n_workers, len(jobs)))]
        for w in workers:
            w.start()
        try:
            for _ in tqdm(range(len(jobs)), desc=desc):
                job_id, result = r_queue.get()
                if isinstance(result, Exception):
                    raise result
                log.debug("job %d done", job_id)
                results[job_id] = result
        finally:
            e_queue.put("EOP")
            for w in workers:
                w.join(timeout=5)
                if w.is_alive():
                    w.terminate()
    return [results[job.job_id] for job in jobs]


################################################################################
#                           CSV assembly                                       #
################################################################################
def metric_value(report: MetricsReport, metric: str, bound: str, param) -> float:
    return getattr(report, f"{metric}_{bound}").get(param, float("nan"))


def metric_rows(results: Iterable[JobResult], grids: MetricGrids, metric: str, bound: str,
                scheduler: SchedulerKind) -> pd.DataFrame:
    rows = []
    for result in results:
        if result.scheduler is not scheduler:
            continue
        for user, report in enumerate(result.reports):
            for param in grids.grid(metric, bound):
                rows.append({"scenario": result.scenario, "user": user, "tbrm": int(result.tbrm_enabled),
                             "param": param, "value": metric_value(report, metric, bound, param)})
    return pd.DataFrame(rows, columns=["scenario", "user", "tbrm", "param", "value"])


def aggregate_rows(results: Sequence[JobResult], grids: MetricGrids) -> pd.DataFrame:
    rows = []
    for metric in METRIC_NAMES:
        for bound in BOUNDS:
            for tbrm in sorted({r.tbrm_enabled for r in results}, reverse=True):
                for param in grids.grid(metric, bound):
                    values = [metric_value(report, metric, bound, param)
                              for r in results if r.tbrm_enabled == tbrm for report in r.reports]
                    finite = [v for v in values if np.isfinite(v)]
                    rows.append({"metric": metric, "bound": bound, "tbrm": int(tbrm), "param": param,
                                 "value": float(np.mean(finite)) if finite else float("nan"),
                                 "n": len(finite)})
    return pd.DataFrame(rows, columns=["metric", "bound", "tbrm", "param", "value", "n"])


def write_csv(frame: pd.DataFrame, path: Path, comment: Optional[str] = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if comment:
            f.write(comment + "\n")
        frame.to_csv(f, index=False, lineterminator="\n")
    return path


def rates_filename(scenario: str, scheduler: SchedulerKind, tbrm_enabled: bool) -> str:
    return f"rates_{scenario}_{scheduler.value}_tbrm{'on' if tbrm_enabled else 'off'}.csv"


################################################################################
#                           Studies                                            #
################################################################################
def regular_jobs(configs: Dict[str, SimConfig], schedulers: Sequence[SchedulerKind],
                 tbrm_flags: Sequence[bool], write_rates: bool = True) -> List[Job]:
    jobs = []
    for scenario, base in configs.items():
        for scheduler in schedulers:
            for flag in tbrm_flags:
                config = replace(base, scheduler=SchedulerKind(scheduler), tbrm_enabled=bool(flag))
                jobs.append(Job(job_id=len(jobs), scenario=scenario, config=config, write_rates=write_rates,
                                label=f"{scenario}/{config.scheduler.value}/tbrm={int(flag)}"))
    return jobs


def run_regular(configs: Dict[str, SimConfig], schedulers: Sequence[SchedulerKind], grids: MetricGrids,
                output_dir: Path, tbrm_flags: Sequence[bool] = (True, False), n_workers: int = 1,
                write_rates: bool = True) -> List[Path]:
    """
    Every (scenario, scheduler, tbrm flag) run: rate CSVs, one metric CSV per
    (metric, bound, scheduler) and the scheduler-averaged aggregate.
    """
    if not schedulers:
        raise InvalidArgumentError("no schedulers selected")
    output_dir = Path(output_dir)
    results = run_jobs(regular_jobs(configs, schedulers, tbrm_flags, write_rates), grids, n_workers, "regular")
    written = []
    for result in results:
        if result.rates is not None:
            written.append(write_csv(result.rates, output_dir / "rates" / rates_filename(
                result.scenario, result.scheduler, result.tbrm_enabled)))
    for metric in METRIC_NAMES:
        for bound in BOUNDS:
            for scheduler in schedulers:
                scheduler = SchedulerKind(scheduler)
                frame = metric_rows(results, grids, metric, bound, scheduler)
                written.append(write_csv(frame, output_dir / "metrics" / f"{metric}_{bound}_{scheduler.value}.csv"))
    written.append(write_csv(aggregate_rows(results, grids), output_dir / "aggregate.csv", AGGREGATE_HEADER))
    log.info("wrote %d files to %s", len(written), output_dir)
    return written


def export_traces(configs: Dict[str, SimConfig], output_dir: Path) -> List[Path]:
    """
    Write the volumes every trace-driven user replays, seeded as in a run, so the
    run can be repeated from files with params.path.
    """
    written = []
    for scenario, config in configs.items():
        for user, source in enumerate(Simulator(config).sources):
            if isinstance(source, TraceSource):
                name = f"{scenario}_user{user}_{source.trace.name}.txt"
                written.append(write_trace(Path(output_dir) / "traces" / name, source.trace))
    log.info("wrote %d trace(s) to %s", len(written), Path(output_dir) / "traces")
    return written


def _sweep_frame(results: Sequence[JobResult], keys: Sequence[Tuple[str, float]], column: str,
                 report_x: Tuple[float, float], report_window: int) -> pd.DataFrame:
    """One row per (scheduler, swept value): metrics averaged over scenarios and users."""
    grouped: Dict[Tuple[str, float], List[MetricsReport]] = {}
    for result, key in zip(results, keys):
        grouped.setdefault(key, []).extend(result.reports)
    rows = []
    for (scheduler, value), reports in grouped.items():
        def mean(attr: str, param) -> float:
            finite = [v for v in (getattr(r, attr).get(param, np.nan) for r in reports) if np.isfinite(v)]
            return float(np.mean(finite)) if finite else float("nan")

        rows.append({"scheduler": scheduler, column: value,
                     "m1_max": mean("m1_max", report_x[0]), "m1_min": mean("m1_min", report_x[1]),
                     "m2_max": mean("m2_max", report_window), "m2_min": mean("m2_min", report_window),
                     "m3_max": mean("m3_max", report_window), "m3_min": mean("m3_min", report_window)})
    return pd.DataFrame(rows, columns=["scheduler", column, "m1_max", "m1_min", "m2_max", "m2_min",
                                       "m3_max", "m3_min"])


def sweep_sigma(configs: Dict[str, SimConfig], schedulers: Sequence[SchedulerKind], multipliers: Sequence[float],
                output_dir: Path, report_x: Tuple[float, float] = (5.0, 0.5), report_window: int = 1,
                warmup: int = WARMUP_SLOTS, n_workers: int = 1) -> Path:
    """TBRM runs with sigma_g = i*tau*rho_g and sigma_M = i*tau*rho_M for every multiplier i."""
    if not multipliers:
        raise InvalidArgumentError("no sigma multipliers given")
    if any(not i > 0 for i in multipliers):
        raise InvalidArgumentError(f"sigma multipliers must be > 0, got {list(multipliers)}")
    grids = MetricGrids(x_max=(report_x[0],), x_min=(report_x[1],), windows=(report_window,), warmup=warmup)
    jobs, keys = [], []
    for scheduler in schedulers:
        scheduler = SchedulerKind(scheduler)
        for i in multipliers:
            for scenario, base in configs.items():
                config = replace(base, scheduler=scheduler, tbrm_enabled=True,
                                 sigma_g_mult=np.full(base.n_users, float(i)),
                                 sigma_M_mult=np.full(base.n_users, float(i)))
                jobs.append(Job(job_id=len(jobs), scenario=scenario, config=config,
                                label=f"{scenario}/{scheduler.value}/sigma={i:g}"))
                keys.append((scheduler.value, float(i)))
    results = run_jobs(jobs, grids, n_workers, "sweep_sigma")
    path = write_csv(_sweep_frame(results, keys, "sigma_mult", report_x, report_window),
                     Path(output_dir) / "sweep_sigma.csv")
    log.info("wrote %s", path)
    return path


def with_tau(config: SimConfig, tau: float) -> SimConfig:
    """
    Same simulated duration at a new slot length. The metric warm-up stays in slots:
    the engine averages settle after a fixed number of slots whatever tau is.
    """
    horizon = int(round(config.horizon * config.tau / tau))
    return replace(config, tau=float(tau), horizon=horizon)


def sweep_tau(configs: Dict[str, SimConfig], schedulers: Sequence[SchedulerKind], taus: Sequence[float],
              output_dir: Path, report_x: Tuple[float, float] = (5.0, 0.5), report_window: int = 1,
              warmup: int = WARMUP_SLOTS, n_workers: int = 1) -> Path:
    """TBRM runs per slot length; sigma keeps its multiplier, so sigma = 5*tau*rho by default."""
    if not taus:
        raise InvalidArgumentError("no slot lengths given")
    if any(not tau > 0 for tau in taus):
        raise InvalidArgumentError(f"slot lengths must be > 0, got {list(taus)}")
    grids = MetricGrids(x_max=(report_x[0],), x_min=(report_x[1],), windows=(report_window,), warmup=warmup)
    jobs, keys = [], []
    for scheduler in schedulers:
        scheduler = SchedulerKind(scheduler)
        for tau in taus:
            for scenario, base in configs.items():
                config = replace(with_tau(base, tau), scheduler=scheduler, tbrm_enabled=True)
                jobs.append(Job(job_id=len(jobs), scenario=scenario, config=config,
                                label=f"{scenario}/{scheduler.value}/tau={tau:g}"))
                keys.append((scheduler.value, float(tau)))
    results = run_jobs(jobs, grids, n_workers, "sweep_tau")
    path = write_csv(_sweep_frame(results, keys, "tau", report_x, report_window), Path(output_dir) / "sweep_tau.csv")
    log.info("wrote %s", path)
    return path


def metrics_from_csv(rates_csv: Path, config: SimConfig, grids: MetricGrids, output: Path) -> Path:
    """Recompute the metric report of a saved rate CSV against the bounds of `config`."""
    frame = pd.read_csv(rates_csv, comment="#")
    missing = [c for c in ("slot", "user", "assigned_rate_bps") if c not in frame.columns]
    if missing:
        raise InvalidArgumentError(f"{rates_csv} lacks column(s) {missing}")
    rates = frame.pivot(index="slot", columns="user", values="assigned_rate_bps").sort_index()
    if rates.shape[1] != config.n_users:
        raise InvalidArgumentError(f"{rates_csv} has {rates.shape[1]} users, scenario has {config.n_users}")
    reports = user_reports(rates.to_numpy(dtype=float), config, grids)
    rows = []
    for user, report in enumerate(reports):
        for metric in METRIC_NAMES:
            for bound in BOUNDS:
                for param in grids.grid(metric, bound):
                    rows.append({"user": user, "metric": metric, "bound": bound, "param": param,
                                 "value": metric_value(report, metric, bound, param)})
    path = write_csv(pd.DataFrame(rows, columns=["user", "metric", "bound", "param", "value"]), Path(output))
    log.info("wrote %s", path)
    return path


def load_configs(names: Sequence[str], scenario_dir: Optional[Path] = None, **overrides) -> Dict[str, SimConfig]:
    configs = {}
    for name in names:
        path = resolve_scenario(str(name), scenario_dir)
        config = load_scenario(path, **overrides)
        configs[config.name] = config
    return configs


################################################################################
#                           Hydra glue                                         #
################################################################################
def configs_from_cfg(cfg: DictConfig) -> Dict[str, SimConfig]:
    sim = cfg.sim
    overrides = {"tau": sim.tau, "horizon": sim.horizon, "seed": sim.seed, "tbrm_mode": sim.tbrm_mode,
                 "tbrm_alpha": sim.tbrm_alpha, "solver_method": sim.solver_method}
    scenario_dir = Path(sim.scenario_dir) if sim.scenario_dir else None
    return load_configs(list(sim.scenarios), scenario_dir, **overrides)


def warmup_from_cfg(cfg: DictConfig) -> int:
    """metrics.warmup in slots when set, else metrics.warmup_time_constants of the engine averages."""
    m = cfg.metrics
    if m.get("warmup") is not None:
        return int(m.warmup)
    return warmup_slots(float(m.get("warmup_time_constants", WARMUP_TIME_CONSTANTS)))


def grids_from_cfg(cfg: DictConfig) -> MetricGrids:
    m = cfg.metrics
    return MetricGrids.from_ranges(tuple(m.x_max), tuple(m.x_min), tuple(m.windows), warmup_from_cfg(cfg))
