import logging
from pathlib import Path

import hydra
from omegaconf import DictConfig

from src.common.utils import PROJECT_ROOT
from src.experiments.harness import configs_from_cfg, log_grid, sweep_sigma, warmup_from_cfg

log = logging.getLogger(__name__)


@hydra.main(version_base=None, config_path=str(PROJECT_ROOT / "conf/sim"), config_name="config")
def main(cfg: DictConfig):
    start, stop, num = cfg.sweep.sigma
    multipliers = log_grid(float(start), float(stop), int(num))
    log.info("sigma sweep over %s", ", ".join(f"{i:.3g}" for i in multipliers))
    m = cfg.metrics
    sweep_sigma(configs_from_cfg(cfg), list(cfg.sim.schedulers), multipliers, Path(cfg.sim.output_dir),
                report_x=(float(m.report_x_max), float(m.report_x_min)), report_window=int(m.report_window),
                warmup=warmup_from_cfg(cfg), n_workers=int(cfg.sim.n_workers))


if __name__ == "__main__":
    main()
