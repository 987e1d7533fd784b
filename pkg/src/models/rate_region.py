from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from src.common.errors import InvalidArgumentError

# the rate region is the positive orthant of a deformed n-sphere:
# gamma=-1 gives the simplex face, gamma=0 the sphere, gamma=1 the hypercube corner.
HALF_PI = np.pi / 2
# reciprocal utilities are evaluated with r >= R_MIN_FRACTION * min(cmax)
R_MIN_FRACTION = 1e-6


class UtilityForm(str, Enum):
    LINEAR = "linear"
    RECIPROCAL = "reciprocal"


@dataclass(frozen=True)
class UtilityEntry:
    """One user's term of the NUM objective: weight*r or -weight/r."""
    form: UtilityForm
    weight: float

    def __post_init__(self):
        if not np.isfinite(self.weight) or self.weight < 0:
            raise InvalidArgumentError(f"utility weight must be finite and >= 0, got {self.weight}")


@dataclass(frozen=True)
class RateRegion:
    cmax: np.ndarray
    gamma: float

    def __post_init__(self):
        cmax = np.asarray(self.cmax, dtype=float).reshape(-1)
        if cmax.size < 1:
            raise InvalidArgumentError("a rate region needs at least one user")
        if not np.all(np.isfinite(cmax)) or np.any(cmax <= 0):
            raise InvalidArgumentError(f"all maximum capacities must be finite and > 0, got {cmax}")
        if not -1.0 <= self.gamma <= 1.0:
            raise InvalidArgumentError(f"gamma must lie in [-1, 1], got {self.gamma}")
        cmax.setflags(write=False)
        object.__setattr__(self, "cmax", cmax)

    @property
    def n_users(self) -> int:
        return int(self.cmax.size)

    @property
    def r_min(self) -> float:
        return R_MIN_FRACTION * float(self.cmax.min())

    @property
    def exponent(self) -> float:
        return 1.0 - self.gamma

    @property
    def norm_order(self) -> float:
        """p such that the boundary is sum((r/cmax)**p) == 1 (inf for gamma=1)."""
        if self.gamma >= 1.0:
            return np.inf
        return 2.0 / (1.0 - self.gamma)


@dataclass(frozen=True)
class Allocation:
    rates: np.ndarray
    objective: float
    angles: Optional[np.ndarray] = None
    degenerate: bool = False
    n_evaluations: int = 0


def point_from_angles(region: RateRegion, angles: Sequence[float]) -> np.ndarray:
    """
    Map an angle vector of length N-1 in [0, pi/2] to a boundary point of the region.
    A leading batch dimension is accepted: angles of shape (M, N-1) give rates of shape (M, N).
    """
    phi = np.asarray(angles, dtype=float)
    if phi.ndim == 0 or phi.shape[-1] != region.n_users - 1:
        raise InvalidArgumentError(
            f"expected {region.n_users - 1} angles for {region.n_users} users, got shape {phi.shape}")
    if np.any(phi < 0.0) or np.any(phi > HALF_PI) or not np.all(np.isfinite(phi)):
        raise InvalidArgumentError("every angle must lie in [0, pi/2]")
    return _map_angles(region, phi)


def _map_angles(region: RateRegion, phi: np.ndarray) -> np.ndarray:
    # unchecked version used by the optimizers
    batch = phi.shape[:-1]
    sines = np.sin(phi)
    prefix = np.concatenate([np.ones(batch + (1,)), np.cumprod(sines, axis=-1)], axis=-1)
    cosines = np.concatenate([np.cos(phi), np.ones(batch + (1,))], axis=-1)
    # cos(pi/2) is 6e-17 in floating point, snap it so boundary users get exactly 0
    cosines[np.abs(cosines) < 1e-15] = 0.0
    unit = np.clip(prefix * cosines, 0.0, 1.0)
    return region.cmax * unit ** region.exponent


def angles_from_point(region: RateRegion, rates: Sequence[float]) -> np.ndarray:
    """Inverse of point_from_angles for points on the region boundary."""
    r = np.asarray(rates, dtype=float)
    if r.shape != (region.n_users,):
        raise InvalidArgumentError(f"expected {region.n_users} rates, got shape {r.shape}")
    n = region.n_users
    if n == 1:
        return np.zeros(0)
    if region.exponent == 0.0:
        # every angle maps to the hypercube corner
        return np.full(n - 1, np.pi / 4)
    x = np.clip(r / region.cmax, 0.0, None) ** (1.0 / region.exponent)
    angles = np.empty(n - 1)
    for i in range(n - 1):
        tail = np.sqrt(np.sum(x[i + 1:] ** 2))
        angles[i] = np.arctan2(tail, x[i])
    return np.clip(angles, 0.0, HALF_PI)


def entries_to_arrays(entries: Sequence[UtilityEntry]) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (weights, reciprocal_mask)."""
    weights = np.array([e.weight for e in entries], dtype=float)
    reciprocal = np.array([UtilityForm(e.form) is UtilityForm.RECIPROCAL for e in entries], dtype=bool)
    return weights, reciprocal


def objective_value(region: RateRegion, rates: np.ndarray, weights: np.ndarray, reciprocal: np.ndarray) -> np.ndarray:
    """Sum of f(r)*w over users; works on a batch of rate vectors."""
    linear_part = np.where(reciprocal, 0.0, weights * rates)
    clamped = np.maximum(rates, region.r_min)
    reciprocal_part = np.where(reciprocal, -weights / clamped, 0.0)
    return np.sum(linear_part + reciprocal_part, axis=-1)
