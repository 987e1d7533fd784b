import logging
from pathlib import Path

import hydra
from omegaconf import DictConfig

from src.common.utils import PROJECT_ROOT
from src.experiments.harness import configs_from_cfg, sweep_tau, warmup_from_cfg

log = logging.getLogger(__name__)


@hydra.main(version_base=None, config_path=str(PROJECT_ROOT / "conf/sim"), config_name="config")
def main(cfg: DictConfig):
    taus = [float(t) for t in cfg.sweep.taus]
    log.info("tau sweep over %s s", taus)
    m = cfg.metrics
    sweep_tau(configs_from_cfg(cfg), list(cfg.sim.schedulers), taus, Path(cfg.sim.output_dir),
              report_x=(float(m.report_x_max), float(m.report_x_min)), report_window=int(m.report_window),
              warmup=warmup_from_cfg(cfg), n_workers=int(cfg.sim.n_workers))


if __name__ == "__main__":
    main()
