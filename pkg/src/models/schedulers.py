from dataclasses import dataclass, fields
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from src.models.rate_region import UtilityForm

# MDV slack floor (seconds)
MDV_SLACK_FLOOR = 1e-3
# default MDU sigmoid steepness is this constant divided by the delay bound
MDU_STEEPNESS = 10.0

Scalar = Union[float, np.ndarray]


class SchedulerKind(str, Enum):
    MW = "MW"
    MLWDF = "MLWDF"
    EXPPF = "EXPPF"
    MDU = "MDU"
    MD = "MD"
    MDV = "MDV"

    @property
    def form(self) -> UtilityForm:
        if self in (SchedulerKind.MD, SchedulerKind.MDV):
            return UtilityForm.RECIPROCAL
        return UtilityForm.LINEAR


@dataclass(frozen=True)
class FlowObservables:
    """
    Snapshot of what a scheduler may look at for one user.
    Fields may also hold equally shaped numpy arrays, one entry per user,
    every weight function below then works elementwise.
    """
    queue_bits: Scalar
    hol_delay: Scalar
    avg_rate: Scalar
    avg_waiting: Scalar
    avg_arrival_rate: Scalar
    delay_bound: Scalar
    violation_prob: Scalar

    @classmethod
    def stack(cls, observables: Sequence["FlowObservables"]) -> "FlowObservables":
        return cls(**{f.name: np.array([getattr(o, f.name) for o in observables], dtype=float)
                      for f in fields(cls)})

    @property
    def alpha(self) -> Scalar:
        return -np.log(self.violation_prob) / self.delay_bound


class SigmoidDelayUtility:
    """u(U) = 1 / (1 + exp(a (U - T))), a traffic class losing value as waiting exceeds T."""

    def __init__(self, delay_bound: Scalar, steepness: Optional[Scalar] = None):
        self.delay_bound = delay_bound
        self.steepness = MDU_STEEPNESS / np.asarray(delay_bound) if steepness is None else steepness

    def _z(self, waiting: Scalar) -> Scalar:
        return self.steepness * (np.asarray(waiting, dtype=float) - self.delay_bound)

    def __call__(self, waiting: Scalar) -> Scalar:
        return expit(-self._z(waiting))

    def derivative(self, waiting: Scalar) -> Scalar:
        z = self._z(waiting)
        return -self.steepness * expit(z) * expit(-z)


def mw_weight(obs: FlowObservables) -> Scalar:
    return obs.queue_bits


def mlwdf_weight(obs: FlowObservables) -> Scalar:
    return obs.alpha * obs.hol_delay / obs.avg_rate


def exppf_weights(all_obs: Union[FlowObservables, Sequence[FlowObservables]]) -> np.ndarray:
    # chi couples all users, so the weights are computed together
    obs = all_obs if isinstance(all_obs, FlowObservables) else FlowObservables.stack(all_obs)
    a_hol = np.atleast_1d(np.asarray(obs.alpha * obs.hol_delay, dtype=float))
    chi = float(np.mean(a_hol))
    return np.exp((a_hol - chi) / (1.0 + np.sqrt(chi))) / np.atleast_1d(obs.avg_rate)


def mdu_weight(obs: FlowObservables, class_utility: Optional[Callable] = None) -> Scalar:
    if class_utility is None:
        class_utility = SigmoidDelayUtility(obs.delay_bound)
    derivative = getattr(class_utility, "derivative", None)
    if derivative is None:
        raise TypeError("class_utility must expose derivative(waiting)")
    return np.abs(derivative(obs.avg_waiting)) / obs.avg_arrival_rate


def md_weight(obs: FlowObservables) -> Scalar:
    return obs.queue_bits


def mdv_weight(obs: FlowObservables) -> Scalar:
    return obs.queue_bits / np.maximum(obs.delay_bound - obs.hol_delay, MDV_SLACK_FLOOR)


def base_weights(kind: SchedulerKind, obs: FlowObservables,
                 class_utility: Optional[Callable] = None) -> Tuple[np.ndarray, UtilityForm]:
    """Per-user base weights for a batched observable snapshot, plus the utility form to use."""
    kind = SchedulerKind(kind)
    if kind is SchedulerKind.MW:
        weights = mw_weight(obs)
    elif kind is SchedulerKind.MLWDF:
        weights = mlwdf_weight(obs)
    elif kind is SchedulerKind.EXPPF:
        weights = exppf_weights(obs)
    elif kind is SchedulerKind.MDU:
        weights = mdu_weight(obs, class_utility)
    elif kind is SchedulerKind.MD:
        weights = md_weight(obs)
    else:
        weights = mdv_weight(obs)
    return np.atleast_1d(np.asarray(weights, dtype=float)), kind.form
