"""Rate-to-utility maps for the four application classes."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError


class AppClass(str, enum.Enum):
    ELASTIC = "ELASTIC"
    HARD_REAL_TIME = "HARD_REAL_TIME"
    DELAY_ADAPTIVE = "DELAY_ADAPTIVE"
    RATE_ADAPTIVE = "RATE_ADAPTIVE"


@dataclass(frozen=True)
class UtilitySpec:
    """Application class plus its parameters (rates in bit/s).

    ELASTIC uses ``r0`` and ``r_max``; HARD_REAL_TIME uses ``threshold``;
    the two sigmoid classes use steepness ``a`` (per bit/s) and knee ``b``.
    """

    app_class: AppClass
    r0: float = 1e6
    r_max: float = 20e6
    threshold: float = 1e6
    a: float = 1e-5
    b: float = 5e5

    def __post_init__(self):
        object.__setattr__(self, "app_class", AppClass(self.app_class))
        if self.app_class is AppClass.ELASTIC and not (self.r0 > 0 and self.r_max > 0):
            raise DomainError("elastic utility needs r0 > 0 and r_max > 0")
        if self.app_class in (AppClass.DELAY_ADAPTIVE, AppClass.RATE_ADAPTIVE) and not self.a > 0:
            raise DomainError("sigmoid utility needs a > 0")

    @classmethod
    def elastic(cls, r0: float, r_max: float) -> "UtilitySpec":
        return cls(AppClass.ELASTIC, r0=r0, r_max=r_max)

    @classmethod
    def hard_real_time(cls, threshold: float) -> "UtilitySpec":
        return cls(AppClass.HARD_REAL_TIME, threshold=threshold)

    @classmethod
    def delay_adaptive(cls, a: float, b: float) -> "UtilitySpec":
        return cls(AppClass.DELAY_ADAPTIVE, a=a, b=b)

    @classmethod
    def rate_adaptive(cls, a: float, b: float) -> "UtilitySpec":
        return cls(AppClass.RATE_ADAPTIVE, a=a, b=b)

    def params(self) -> dict[str, float]:
        if self.app_class is AppClass.ELASTIC:
            return {"r0": self.r0, "r_max": self.r_max}
        if self.app_class is AppClass.HARD_REAL_TIME:
            return {"threshold": self.threshold}
        return {"a": self.a, "b": self.b}

    @property
    def sigmoid_offset(self) -> float:
        """Logistic value at zero rate, removed by the affine normalisation."""
        return float(expit(-self.a * self.b))


def eval_utility(spec: UtilitySpec, rate):
    r = np.asarray(rate, dtype=float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise DomainError("rate must be non-negative")
    cls = spec.app_class
    if cls is AppClass.ELASTIC:
        u = np.log1p(r / spec.r0) / math.log1p(spec.r_max / spec.r0)
        u = np.minimum(u, 1.0)
    elif cls is AppClass.HARD_REAL_TIME:
        u = np.where(r >= spec.threshold, 1.0, 0.0)
    else:
        off = spec.sigmoid_offset
        u = (expit(spec.a * (r - spec.b)) - off) / (1.0 - off)
        u = np.clip(u, 0.0, 1.0)
    return float(u) if u.ndim == 0 else u


def marginal_utility(spec: UtilitySpec, rate, delta):
    d = np.asarray(delta, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError("delta must be positive")
    return eval_utility(spec, np.asarray(rate, dtype=float) + d) - eval_utility(spec, rate)


def utility_sweep(spec: UtilitySpec, r_hi: float, points: int = 101) -> np.ndarray:
    """(rate, utility) table over [0, r_hi]."""
    rates = np.linspace(0.0, r_hi, points)
    return np.column_stack([rates, eval_utility(spec, rates)])
