from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Tuple, Union

import numpy as np

from src.common.errors import InvalidArgumentError

# smoothing of the positive-weight aggregate and the threshold factor on max(w)
OMEGA_SMOOTHING = 0.05
EPSILON_FACTOR = 1e-5
# sigma = SIGMA_MULTIPLIER * tau * rho unless configured otherwise
SIGMA_MULTIPLIER = 5.0

Vector = Union[float, np.ndarray]


class TbrmMode(str, Enum):
    MULTIPLICATIVE = "multiplicative"
    ADDITIVE = "additive"


def alpha_linear(x: Vector) -> Vector:
    return x


def alpha_cubic(x: Vector) -> Vector:
    return np.power(x, 3)


ALPHAS = {"linear": alpha_linear, "cubic": alpha_cubic}


@dataclass(frozen=True)
class RateConstraint:
    """
    Per-user [rho_g, rho_M] bounds. rho_g == 0 disables the lower bound and
    rho_M >= cmax disables the upper one. Fields may be per-user arrays.
    """
    rho_g: Vector
    rho_M: Vector
    cmax: Vector

    @property
    def lower_enabled(self) -> Vector:
        return np.asarray(self.rho_g) > 0

    @property
    def upper_enabled(self) -> Vector:
        return np.asarray(self.rho_M) < np.asarray(self.cmax)

    def validate(self) -> None:
        rho_g, rho_M, cmax = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (self.rho_g, self.rho_M, self.cmax))
        if np.any(rho_g < 0):
            raise InvalidArgumentError("guaranteed rate must be >= 0")
        both = (rho_g > 0) & (rho_M < cmax)
        if np.any(both & (rho_g > rho_M)):
            raise InvalidArgumentError("guaranteed rate exceeds maximal rate")
        if np.any(rho_g > cmax):
            raise InvalidArgumentError("guaranteed rate exceeds the user capacity")


@dataclass(frozen=True)
class TbrmState:
    k_g: np.ndarray
    k_M: np.ndarray
    sigma_g: np.ndarray
    sigma_M: np.ndarray
    omega_bar: float = 0.0
    epsilon_threshold: float = 0.0

    @classmethod
    def initial(cls, constraint: RateConstraint, tau: float,
                sigma_g_mult: Vector = SIGMA_MULTIPLIER, sigma_M_mult: Vector = SIGMA_MULTIPLIER) -> "TbrmState":
        """Zero tokens and sigma = mult * tau * rho; a disabled bound gets sigma = inf."""
        if tau <= 0:
            raise InvalidArgumentError(f"tau must be > 0, got {tau}")
        rho_g = np.atleast_1d(np.asarray(constraint.rho_g, dtype=float))
        rho_M = np.atleast_1d(np.asarray(constraint.rho_M, dtype=float))
        lower = np.atleast_1d(constraint.lower_enabled)
        upper = np.atleast_1d(constraint.upper_enabled)
        sigma_g = np.where(lower, np.asarray(sigma_g_mult, dtype=float) * tau * rho_g, np.inf)
        sigma_M = np.where(upper, np.asarray(sigma_M_mult, dtype=float) * tau * np.where(upper, rho_M, 0.0), np.inf)
        if np.any(sigma_g <= 0) or np.any(sigma_M <= 0):
            raise InvalidArgumentError("burst parameters must be > 0 for active bounds")
        zeros = np.zeros(rho_g.shape)
        return cls(k_g=zeros, k_M=zeros.copy(), sigma_g=sigma_g, sigma_M=sigma_M)

    def token_ratios(self) -> Tuple[np.ndarray, np.ndarray]:
        # a disabled bound contributes exactly 0, never inf/inf
        g = np.where(np.isinf(self.sigma_g), 0.0, self.k_g / np.where(np.isinf(self.sigma_g), 1.0, self.sigma_g))
        m = np.where(np.isinf(self.sigma_M), 0.0, self.k_M / np.where(np.isinf(self.sigma_M), 1.0, self.sigma_M))
        return g, m


def update_tokens(state: TbrmState, constraint: RateConstraint, assigned_rate: Vector, tau: float) -> TbrmState:
    """Guaranteed bucket k_g >= 0 fills with a service deficit, maximal bucket k_M <= 0 drains with excess."""
    rate = np.asarray(assigned_rate, dtype=float)
    rho_M = np.where(constraint.upper_enabled, constraint.rho_M, constraint.cmax)
    k_g = np.maximum(0.0, state.k_g + (np.asarray(constraint.rho_g, dtype=float) - rate) * tau)
    k_M = np.minimum(0.0, state.k_M + (np.asarray(rho_M, dtype=float) - rate) * tau)
    return replace(state, k_g=k_g, k_M=k_M)


def phi_and_exponent(state: TbrmState, base_weight: Vector) -> Tuple[np.ndarray, np.ndarray]:
    """phi is omega_bar for weights at or below epsilon while tokens are outstanding, else the weight."""
    g, m = state.token_ratios()
    exponent = g + m
    base = np.asarray(base_weight, dtype=float)
    phi = np.where((base <= state.epsilon_threshold) & (exponent != 0.0), state.omega_bar, base)
    return phi, exponent


def effective_weight(state: TbrmState, base_weight: Vector) -> np.ndarray:
    """phi * exp(k_g/sigma_g + k_M/sigma_M)."""
    phi, exponent = phi_and_exponent(state, base_weight)
    return phi * np.exp(exponent)


def additive_effective_weight(state: TbrmState, base_weight: Vector, alpha: Callable[[Vector], Vector],
                              beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (base_weight, offset) with offset = (alpha(k_g/sigma_g) + alpha(k_M/sigma_M)) * beta."""
    g, m = state.token_ratios()
    offset = (alpha(g) + alpha(m)) * beta
    return np.asarray(base_weight, dtype=float), np.asarray(offset, dtype=float)


def update_omega_bar(state: TbrmState, base_weights: Vector, smoothing: float = OMEGA_SMOOTHING) -> TbrmState:
    weights = np.atleast_1d(np.asarray(base_weights, dtype=float))
    positive_sum = float(weights[weights > 0].sum())
    omega_bar = (1.0 - smoothing) * state.omega_bar + smoothing * positive_sum
    epsilon = float(weights.max()) * EPSILON_FACTOR if weights.size else 0.0
    return replace(state, omega_bar=omega_bar, epsilon_threshold=epsilon)


def modified_weights(state: TbrmState, base: np.ndarray, mode: TbrmMode,
                     alpha: Callable[[Vector], Vector] = alpha_linear) -> np.ndarray:
    """Weights fed to the NUM solver for either TBRM form."""
    if TbrmMode(mode) is TbrmMode.MULTIPLICATIVE:
        return effective_weight(state, base)
    weights, offset = additive_effective_weight(state, base, alpha, state.omega_bar)
    # a negative weight and a zero weight have the same maximizer (no service)
    return np.maximum(weights + offset, 0.0)
