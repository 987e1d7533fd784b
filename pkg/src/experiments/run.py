import logging
from pathlib import Path

import hydra
from omegaconf import DictConfig, OmegaConf

from src.common.utils import PROJECT_ROOT
from src.experiments.harness import configs_from_cfg, export_traces, grids_from_cfg, run_regular

log = logging.getLogger(__name__)


@hydra.main(version_base=None, config_path=str(PROJECT_ROOT / "conf/sim"), config_name="config")
def main(cfg: DictConfig):
    log.debug("config:\n%s", OmegaConf.to_yaml(cfg))
    configs = configs_from_cfg(cfg)
    if cfg.sim.get("write_traces", False):
        export_traces(configs, Path(cfg.sim.output_dir))
    log.info("regular study: %d scenario(s) x %d scheduler(s) x tbrm %s", len(configs),
             len(cfg.sim.schedulers), list(cfg.sim.tbrm))
    run_regular(configs, list(cfg.sim.schedulers), grids_from_cfg(cfg), Path(cfg.sim.output_dir),
                tbrm_flags=[bool(f) for f in cfg.sim.tbrm], n_workers=int(cfg.sim.n_workers),
                write_rates=bool(cfg.sim.write_rates))


if __name__ == "__main__":
    main()
