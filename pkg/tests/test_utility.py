import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ltem2m.errors import DomainError
from ltem2m.utility import AppClass, UtilitySpec, eval_utility, marginal_utility, utility_sweep

ELASTIC = UtilitySpec.elastic(r0=1e5, r_max=20e6)
HRT = UtilitySpec.hard_real_time(threshold=1e6)
DELAY = UtilitySpec.delay_adaptive(a=5e-5, b=4e5)
RATE = UtilitySpec.rate_adaptive(a=3e-5, b=1e5)
ALL = [ELASTIC, HRT, DELAY, RATE]

rates = st.floats(0.0, 5e7, allow_nan=False)


def test_hard_real_time_step():
    assert eval_utility(HRT, 999_999.0) == 0.0
    assert eval_utility(HRT, 1e6) == 1.0


@pytest.mark.parametrize("spec", [ELASTIC, DELAY, RATE])
def test_zero_rate_gives_zero(spec):
    assert eval_utility(spec, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_sigmoid_midpoint():
    # with a sharp knee the normalisation offset is negligible
    steep = UtilitySpec.rate_adaptive(a=1e-4, b=5e5)
    assert eval_utility(steep, 5e5) == pytest.approx(0.5, abs=1e-6)
    # in general the midpoint value is (1/2 - offset) / (1 - offset)
    off = 1.0 / (1.0 + math.exp(RATE.a * RATE.b))
    assert eval_utility(RATE, RATE.b) == pytest.approx((0.5 - off) / (1 - off), abs=1e-12)


def test_elastic_closed_form_and_cap():
    r = 3e6
    assert eval_utility(ELASTIC, r) == pytest.approx(math.log(1 + r / 1e5) / math.log(1 + 200))
    assert eval_utility(ELASTIC, 20e6) == pytest.approx(1.0)
    assert eval_utility(ELASTIC, 80e6) == 1.0


@pytest.mark.parametrize("spec", ALL)
def test_negative_rate_rejected(spec):
    with pytest.raises(DomainError):
        eval_utility(spec, -1.0)


def test_bad_delta_rejected():
    with pytest.raises(DomainError):
        marginal_utility(ELASTIC, 1e6, 0.0)


def test_invalid_spec_parameters():
    with pytest.raises(DomainError):
        UtilitySpec.elastic(r0=0.0, r_max=1e6)
    with pytest.raises(DomainError):
        UtilitySpec.rate_adaptive(a=0.0, b=1e5)


@pytest.mark.parametrize("spec", ALL)
@given(r=rates, d=st.floats(1.0, 1e7))
def test_monotone_and_bounded(spec, r, d):
    u0, u1 = eval_utility(spec, r), eval_utility(spec, r + d)
    assert 0.0 <= u0 <= 1.0 and 0.0 <= u1 <= 1.0
    assert u1 >= u0


@given(r1=rates, gap=st.floats(0.0, 1e7), d=st.floats(1.0, 1e6))
def test_elastic_concave(r1, gap, d):
    r2 = r1 + gap
    assert marginal_utility(ELASTIC, r1, d) >= marginal_utility(ELASTIC, r2, d) - 1e-12


def test_elastic_marginal_shrinks():
    assert marginal_utility(ELASTIC, 1e5, 1e5) > marginal_utility(ELASTIC, 5e6, 1e5)


def test_hard_real_time_marginal_only_across_threshold():
    assert marginal_utility(HRT, 5e5, 1e5) == 0.0
    assert marginal_utility(HRT, 9.5e5, 1e5) == 1.0
    assert marginal_utility(HRT, 2e6, 1e5) == 0.0


@pytest.mark.parametrize("spec", ALL)
@given(r=rates, d1=st.floats(1.0, 1e6), d2=st.floats(1.0, 1e6))
def test_marginal_telescopes(spec, r, d1, d2):
    lhs = marginal_utility(spec, r, d1 + d2)
    rhs = marginal_utility(spec, r, d1) + marginal_utility(spec, r + d1, d2)
    assert lhs == pytest.approx(rhs, abs=1e-9)


@pytest.mark.parametrize("spec", [DELAY, RATE])
def test_sigmoid_has_one_inflection(spec):
    table = utility_sweep(spec, 10 * spec.b, 401)
    second = np.diff(table[:, 1], 2)
    signs = np.sign(second[np.abs(second) > 1e-12])
    assert np.count_nonzero(np.diff(signs)) == 1


@pytest.mark.parametrize("spec", ALL)
def test_range_over_ten_times_normalisation(spec):
    top = {AppClass.ELASTIC: spec.r_max, AppClass.HARD_REAL_TIME: spec.threshold}.get(spec.app_class, spec.b)
    u = utility_sweep(spec, 10 * top, 1001)[:, 1]
    assert np.all((u >= 0) & (u <= 1))


def test_sweep_shape_and_vectorised_eval():
    table = utility_sweep(RATE, 1e6, 11)
    assert table.shape == (11, 2)
    assert np.allclose(table[:, 1], [eval_utility(RATE, r) for r in table[:, 0]])
