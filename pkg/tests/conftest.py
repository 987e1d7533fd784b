import numpy as np
import pytest

from src.data.traffic import TrafficKind, TrafficSpec
from src.env.simulator import SimConfig
from src.models.rate_region import RateRegion
from src.models.schedulers import FlowObservables


@pytest.fixture
def make_obs():
    def _make(**kw):
        values = dict(queue_bits=0.0, hol_delay=0.0, avg_rate=1e6, avg_waiting=0.0, avg_arrival_rate=1e6,
                      delay_bound=0.5, violation_prob=0.05)
        values.update(kw)
        return FlowObservables(**values)
    return _make


@pytest.fixture
def make_config():
    """Small SimConfig: n users at 400 Mbps, gamma 0.5, every bound disabled unless given."""
    def _make(n=2, traffic=TrafficKind.SAT, rho_g=0.0, rho_M=None, cmax=400e6, gamma=0.5, horizon=100, **kw):
        specs = traffic if isinstance(traffic, (list, tuple)) else [TrafficSpec(kind=traffic)] * n
        return SimConfig(
            region=RateRegion(cmax=np.full(n, cmax), gamma=gamma),
            traffic=specs,
            rho_g=rho_g,
            rho_M=cmax if rho_M is None else rho_M,
            delay_bound=0.5,
            violation_prob=0.05,
            horizon=horizon,
            **kw,
        )
    return _make
