import numpy as np
import pytest

from errors import InvalidRate, InvalidSpec, MarginSeriesTooShort
from survival_core import SurvivalCurve
from valuation import DiscountSpec, MarginSpec, annual_to_monthly_rate, clv, clv_batch, clv_constant


def test_clv_undiscounted():
    assert clv(np.array([0.9, 0.72]), MarginSpec.constant_margin(10)) == pytest.approx(16.2, abs=1e-12)


def test_clv_discounted():
    value = clv(SurvivalCurve(np.array([0.9, 0.81])), MarginSpec.constant_margin(10), DiscountSpec(0.05))
    assert value == pytest.approx(15.9184, abs=1e-4)


def test_clv_of_empty_path():
    assert clv(np.array([]), MarginSpec.constant_margin(10)) == 0.0


def test_margin_series():
    margins = MarginSpec.per_period([10, 20, 30])
    assert clv(np.array([1.0, 0.5]), margins) == pytest.approx(20.0)
    with pytest.raises(MarginSeriesTooShort) as err:
        clv(np.array([1.0, 0.9, 0.8, 0.7]), margins)
    assert err.value.needed == 4 and err.value.got == 3


def test_clv_constant():
    assert clv_constant(9.0, 10) == 90.0
    assert clv_constant(0.0, 10) == 0.0
    with pytest.raises(InvalidSpec):
        clv_constant(-1.0, 10)


def test_constant_margin_matches_expected_tenure():
    path = np.cumprod(np.full(200, 0.93))
    value = clv(path, MarginSpec.constant_margin(12.5))
    assert value == pytest.approx(clv_constant(path.sum(), 12.5), rel=1e-9)


def test_clv_properties():
    path = np.cumprod(np.linspace(0.99, 0.8, 50))
    values = [clv(path, MarginSpec.constant_margin(10), DiscountSpec(r)) for r in (0.0, 0.005, 0.01, 0.05)]
    assert all(np.diff(values) < 0)
    assert clv(path, MarginSpec.constant_margin(30)) == pytest.approx(3 * values[0], rel=1e-12)
    assert clv(path, MarginSpec.constant_margin(-10)) < 0


def test_clv_batch_matches_rows():
    survival = np.array([[0.9, 0.81, 0.0], [0.5, 0.25, 0.125]])
    discount = DiscountSpec(0.01)
    values = clv_batch(survival, [10, 4], discount)
    assert values[0] == pytest.approx(clv(survival[0, :2], MarginSpec.constant_margin(10), discount), rel=1e-12)
    assert values[1] == pytest.approx(clv(survival[1], MarginSpec.constant_margin(4), discount), rel=1e-12)


def test_annual_to_monthly_rate():
    assert annual_to_monthly_rate(0) == 0.0
    assert annual_to_monthly_rate(1.01 ** 12 - 1) == pytest.approx(0.01, abs=1e-9)
    monthly = annual_to_monthly_rate(1.0)
    assert monthly == pytest.approx(2 ** (1 / 12) - 1, abs=1e-6)
    assert (1 + monthly) ** 12 == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(InvalidRate):
        annual_to_monthly_rate(-0.1)


def test_discount_validated():
    with pytest.raises(InvalidRate):
        DiscountSpec(-0.01)
    with pytest.raises(InvalidRate):
        DiscountSpec(float('nan'))
    assert DiscountSpec(0.0).factors(3).tolist() == [1.0, 1.0, 1.0]
