import itertools
import logging
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import direct, minimize

from src.common.errors import InvalidArgumentError, UnsupportedDimensionError
from src.models.rate_region import (HALF_PI, Allocation, RateRegion, UtilityEntry, _map_angles,
                                    angles_from_point, entries_to_arrays, objective_value)

log = logging.getLogger(__name__)

# global phase budget per angle dimension and local phase limits
DIRECT_EVALS_PER_DIM = 500
COBYLA_MAX_ITER = 200
COBYLA_TOL = 1e-6
ORACLE_MAX_USERS = 4
ORACLE_MIN_STEPS = 100


class SolverMethod(str, Enum):
    DIRECT_COBYLA = "direct_cobyla"
    CLOSED_FORM = "closed_form"


def _check_entries(region: RateRegion, utilities: Sequence[UtilityEntry]):
    if len(utilities) != region.n_users:
        raise InvalidArgumentError(f"expected {region.n_users} utility entries, got {len(utilities)}")
    return entries_to_arrays(utilities)


def _degenerate(region: RateRegion) -> Allocation:
    angles = np.zeros(region.n_users - 1)
    return Allocation(rates=_map_angles(region, angles), objective=0.0, angles=angles, degenerate=True)


def _objective_scale(region: RateRegion, weights: np.ndarray, reciprocal: np.ndarray) -> float:
    # one positive constant for all users so the argmax is untouched
    magnitudes = np.where(reciprocal, weights / region.cmax, weights * region.cmax)
    return float(magnitudes.max())


def solve_num(region: RateRegion, utilities: Sequence[UtilityEntry]) -> Allocation:
    """
    Maximize sum_n f(r^n) w^n over the region.
    A locally biased DIRECT search over the angle box is refined with COBYLA;
    the better of the two points is returned.
    """
    weights, reciprocal = _check_entries(region, utilities)
    if not np.any(weights > 0):
        return _degenerate(region)
    n_angles = region.n_users - 1
    if n_angles == 0:
        rates = region.cmax.copy()
        return Allocation(rates=rates, objective=float(objective_value(region, rates, weights, reciprocal)),
                          angles=np.zeros(0), n_evaluations=1)

    scale = _objective_scale(region, weights, reciprocal)

    def negative_objective(angles: np.ndarray) -> float:
        rates = _map_angles(region, np.asarray(angles, dtype=float))
        return -float(objective_value(region, rates, weights, reciprocal)) / scale

    bounds = [(0.0, HALF_PI)] * n_angles
    budget = DIRECT_EVALS_PER_DIM * n_angles
    coarse = direct(negative_objective, bounds, maxfun=budget, maxiter=budget,
                    locally_biased=True, eps=1e-4, vol_tol=1e-16, len_tol=1e-6)
    best_x, best_f = np.clip(coarse.x, 0.0, HALF_PI), float(coarse.fun)
    n_evaluations = int(coarse.nfev)

    box = [{"type": "ineq", "fun": lambda a: np.asarray(a)},
           {"type": "ineq", "fun": lambda a: HALF_PI - np.asarray(a)}]
    refined = minimize(negative_objective, best_x, method="COBYLA", constraints=box, tol=COBYLA_TOL,
                       options={"maxiter": COBYLA_MAX_ITER, "rhobeg": 0.05})
    n_evaluations += int(getattr(refined, "nfev", 0))
    refined_x = np.clip(refined.x, 0.0, HALF_PI)
    refined_f = negative_objective(refined_x)
    if refined_f < best_f:
        best_x, best_f = refined_x, refined_f

    rates = _map_angles(region, best_x)
    return Allocation(rates=rates, objective=float(objective_value(region, rates, weights, reciprocal)),
                      angles=best_x, n_evaluations=n_evaluations)


def grid_oracle_solve(region: RateRegion, utilities: Sequence[UtilityEntry], steps: int) -> Allocation:
    """Brute force over a uniform angle grid with `steps` points per dimension."""
    if region.n_users > ORACLE_MAX_USERS:
        raise UnsupportedDimensionError(f"grid oracle supports at most {ORACLE_MAX_USERS} users")
    if steps < ORACLE_MIN_STEPS:
        raise InvalidArgumentError(f"grid oracle needs at least {ORACLE_MIN_STEPS} steps, got {steps}")
    weights, reciprocal = _check_entries(region, utilities)
    n_angles = region.n_users - 1
    if n_angles == 0:
        rates = region.cmax.copy()
        return Allocation(rates=rates, objective=float(objective_value(region, rates, weights, reciprocal)),
                          angles=np.zeros(0), degenerate=not np.any(weights > 0), n_evaluations=1)

    axis = np.linspace(0.0, HALF_PI, steps)
    if n_angles > 1:
        inner = np.array(list(itertools.product(axis, repeat=n_angles - 1)))
    else:
        inner = np.zeros((1, 0))
    best_angles, best_value = None, -np.inf
    # chunk over the first angle to bound memory
    for first in axis:
        chunk = np.hstack([np.full((inner.shape[0], 1), first), inner])
        values = objective_value(region, _map_angles(region, chunk), weights, reciprocal)
        idx = int(np.argmax(values))
        if values[idx] > best_value:
            best_value, best_angles = float(values[idx]), chunk[idx]
    rates = _map_angles(region, best_angles)
    return Allocation(rates=rates, objective=best_value, angles=best_angles,
                      degenerate=not np.any(weights > 0), n_evaluations=steps ** n_angles)


def solve_closed_form(region: RateRegion, utilities: Sequence[UtilityEntry]) -> Allocation:
    """
    Exact optimum when every entry has the same form.
    The boundary is sum((r/cmax)**p) == 1 with p = 2/(1-gamma); linear utilities
    are maximized by the dual-norm point and reciprocal ones by the KKT point
    y ~ (w/cmax)**(1/(p+1)). Mixed forms fall back to solve_num.
    """
    weights, reciprocal = _check_entries(region, utilities)
    if not np.any(weights > 0):
        return _degenerate(region)
    if reciprocal.any() and not reciprocal.all():
        return solve_num(region, utilities)

    p = region.norm_order
    if np.isinf(p):
        unit = np.ones(region.n_users)
    elif reciprocal.all():
        b = weights / region.cmax
        z = (b / b.max()) ** (1.0 / (p + 1.0))
        unit = z / np.sum(z ** p) ** (1.0 / p)
    elif p == 1.0:
        unit = np.zeros(region.n_users)
        unit[int(np.argmax(weights * region.cmax))] = 1.0
    else:
        a = weights * region.cmax
        z = (a / a.max()) ** (1.0 / (p - 1.0))
        unit = z / np.sum(z ** p) ** (1.0 / p)

    rates = region.cmax * np.clip(unit, 0.0, 1.0)
    return Allocation(rates=rates, objective=float(objective_value(region, rates, weights, reciprocal)),
                      angles=angles_from_point(region, rates), n_evaluations=1)


def solve(region: RateRegion, utilities: Sequence[UtilityEntry], method: SolverMethod) -> Allocation:
    if SolverMethod(method) is SolverMethod.CLOSED_FORM:
        return solve_closed_form(region, utilities)
    return solve_num(region, utilities)
