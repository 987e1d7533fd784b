"""Recompute the metric report of a saved rate CSV: metrics.rates_csv=<path> metrics.scenario=<name>."""
import logging
from pathlib import Path

import hydra
from omegaconf import DictConfig

from src.common.errors import InvalidArgumentError
from src.common.utils import PROJECT_ROOT
from src.experiments.harness import grids_from_cfg, load_configs, metrics_from_csv

log = logging.getLogger(__name__)


@hydra.main(version_base=None, config_path=str(PROJECT_ROOT / "conf/sim"), config_name="config")
def main(cfg: DictConfig):
    if not cfg.metrics.rates_csv:
        raise InvalidArgumentError("metrics.rates_csv is required")
    scenario_dir = Path(cfg.sim.scenario_dir) if cfg.sim.scenario_dir else None
    (config,) = load_configs([cfg.metrics.scenario], scenario_dir, tau=cfg.sim.tau).values()
    metrics_from_csv(Path(cfg.metrics.rates_csv), config, grids_from_cfg(cfg), Path(cfg.metrics.output))


if __name__ == "__main__":
    main()
