from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import InvalidRate, InvalidSpec, MarginSeriesTooShort
from survival_core import SurvivalCurve


@dataclass(frozen=True)
class DiscountSpec:
    monthly_rate: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.monthly_rate) and self.monthly_rate >= 0):
            raise InvalidRate(self.monthly_rate)

    def factors(self, length):
        # end of period: the first projected month is discounted once
        if self.monthly_rate == 0:
            return np.ones(length)
        return (1.0 + self.monthly_rate) ** -np.arange(1, length + 1, dtype=float)


@dataclass(frozen=True, eq=False)
class MarginSpec:
    constant: Optional[float] = None
    series: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.constant is None) == (self.series is None):
            raise InvalidSpec('a margin is either constant or a per-period series')

    @classmethod
    def constant_margin(cls, margin):
        return cls(constant=float(margin))

    @classmethod
    def per_period(cls, series):
        return cls(series=np.asarray(series, dtype=float))

    def values(self, length):
        if self.series is None:
            return np.full(length, self.constant)
        if len(self.series) < length:
            raise MarginSeriesTooShort(length, len(self.series))
        return self.series[:length]


def clv(survival_path, margins, discount=DiscountSpec()):
    """
    sum over t = 1..L of p_t * M_t * (1 + r)^-t, with p_t = survival_path[t - 1]
    """
    p = np.asarray(survival_path.values if isinstance(survival_path, SurvivalCurve) else survival_path, dtype=float)
    if len(p) == 0:
        return 0.0
    return float(np.sum(p * margins.values(len(p)) * discount.factors(len(p))))


def clv_constant(ert_months, margin):
    if ert_months < 0:
        raise InvalidSpec('expected remaining tenure must be >= 0, got {}'.format(ert_months))
    return margin * ert_months


def clv_batch(survival, margins, discount=DiscountSpec()):
    # one constant margin per row of a survival matrix
    weighted = survival * discount.factors(survival.shape[1])[None, :]
    return weighted.sum(axis=1) * np.asarray(margins, dtype=float)


def annual_to_monthly_rate(annual_rate):
    if not (np.isfinite(annual_rate) and annual_rate >= 0):
        raise InvalidRate(annual_rate)
    return (1.0 + annual_rate) ** (1.0 / 12.0) - 1.0
