import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltem2m.channel import LinkKind, Transmission
from ltem2m.errors import CapacityError, ContractViolation, DomainError
from ltem2m.scheduler import (AllocationMatrix, GatewayReservation, ResourceGrid, SchedulingProblem,
                              SlotRole, brute_force_schedule, estimate_backhaul_rbs, evaluate_objective,
                              max_utility_schedule, schedule_access_slot, schedule_backhaul_slot)
from ltem2m.utility import UtilitySpec, eval_utility, marginal_utility

UNIT_ELASTIC = UtilitySpec.elastic(r0=1.0, r_max=10.0)
UE_SPEC = UtilitySpec.elastic(r0=1e5, r_max=20e6)
MTCD_SPEC = UtilitySpec.rate_adaptive(a=3e-5, b=1e5)


def problem(h_rates, m_rates=(), lam=1.0, h_spec=UNIT_ELASTIC, m_spec=UNIT_ELASTIC, **kw):
    h = np.atleast_2d(np.asarray(h_rates, dtype=float)) if len(h_rates) else np.zeros((0, 0))
    m = np.atleast_2d(np.asarray(m_rates, dtype=float)) if len(m_rates) else np.zeros((0, 0))
    k = h.shape[1] if len(h_rates) else m.shape[1]
    h = h.reshape(len(h_rates), k)
    m = m.reshape(len(m_rates), k)
    return SchedulingProblem(list(range(len(h))), [h_spec] * len(h), h,
                             list(range(100, 100 + len(m))), [m_spec] * len(m), m, lam, **kw)


# backhaul sizing

@pytest.mark.parametrize("total, per_rb, expected", [(0, 250e3, 0), (1e6, 250e3, 4), (1.01e6, 250e3, 5)])
def test_backhaul_examples(total, per_rb, expected):
    assert estimate_backhaul_rbs(total, per_rb) == expected


def test_backhaul_cap_and_errors():
    assert estimate_backhaul_rbs(1e9, 1e3, num_rbs=50) == 50
    with pytest.raises(DomainError):
        estimate_backhaul_rbs(1e6, 0.0)
    with pytest.raises(DomainError):
        estimate_backhaul_rbs(-1.0, 1e5)


def test_backhaul_matches_integer_arithmetic():
    rng = np.random.default_rng(7)
    for _ in range(100):
        per_rb = int(rng.integers(1, 2_000_000))
        total = int(rng.integers(0, 50_000_000))
        expected = -(-total // per_rb)
        assert estimate_backhaul_rbs(total, per_rb) == expected


# greedy schedule

def test_diagonal_rates_split_rbs():
    p = problem([[1, 0], [0, 1]])
    g = max_utility_schedule(p)
    assert list(g.owner) == [0, 1]
    assert g.objective == pytest.approx(brute_force_schedule(p).objective, abs=1e-12)


def test_lambda_zero_prefers_ue():
    p = problem([[1e6]], [[1e6]], lam=0.0, h_spec=UE_SPEC, m_spec=MTCD_SPEC)
    assert list(max_utility_schedule(p).owner) == [0]


def test_saturated_users_leave_rbs_idle():
    p = problem([[5.0, 5.0, 5.0]], base_rates=np.array([20.0]))
    r = max_utility_schedule(p)
    assert np.all(r.owner == -1)
    assert r.objective == pytest.approx(1.0)


def test_empty_rb_set():
    p = SchedulingProblem([0], [UE_SPEC], np.zeros((1, 0)), [], [], np.zeros((0, 0)), 0.5, rbs=[])
    r = max_utility_schedule(p)
    assert len(r.owner) == 0 and r.objective == 0.0


def test_invalid_problem():
    with pytest.raises(DomainError):
        problem([[1.0]], lam=1.5)
    with pytest.raises(DomainError):
        problem([[-1.0]])


def test_lowest_id_wins_ties():
    p = problem([[1.0], [1.0]])
    assert list(max_utility_schedule(p).owner) == [0]


# exhaustive oracle

def test_brute_force_single_user():
    r = brute_force_schedule(problem([[2.0]]))
    assert list(r.owner) == [0]


def test_brute_force_symmetric_matches_greedy():
    p = problem([[1, 1], [1, 1]])
    assert brute_force_schedule(p).objective == pytest.approx(max_utility_schedule(p).objective, abs=1e-12)


def test_hard_real_time_pooling_gap():
    hrt = UtilitySpec.hard_real_time(threshold=2.0)
    p = problem([[1, 1], [1, 1]], h_spec=hrt)
    best = brute_force_schedule(p)
    assert best.objective == 1.0
    assert len(set(best.owner)) == 1 and best.owner[0] >= 0
    assert max_utility_schedule(p).objective == 0.0


def test_brute_force_guard():
    p = problem(np.ones((9, 7)))
    with pytest.raises(CapacityError):
        brute_force_schedule(p)


def _random_problem(rng, specs_h, specs_m, flat=False):
    nh = int(rng.integers(1, 3))
    nm = int(rng.integers(0, 4 - nh))
    k = int(rng.integers(1, 5))
    h = rng.uniform(0, 3e6, (nh, k))
    m = rng.uniform(0, 3e5, (nm, k))
    if flat:
        h, m = np.repeat(h[:, :1], k, 1), np.repeat(m[:, :1], k, 1)
    sh = [specs_h[int(rng.integers(len(specs_h)))] for _ in range(nh)]
    sm = [specs_m[int(rng.integers(len(specs_m)))] for _ in range(nm)]
    return SchedulingProblem(list(range(nh)), sh, h, list(range(10, 10 + nm)), sm, m, float(rng.uniform()))


def test_greedy_exact_for_elastic_flat_instances():
    rng = np.random.default_rng(11)
    specs = [UE_SPEC, UtilitySpec.elastic(r0=5e4, r_max=5e6)]
    for _ in range(300):
        p = _random_problem(rng, specs, specs, flat=True)
        assert max_utility_schedule(p).objective == pytest.approx(brute_force_schedule(p).objective, abs=1e-9)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_objective_recomputes(seed):
    rng = np.random.default_rng(seed)
    p = _random_problem(rng, [UE_SPEC, UtilitySpec.hard_real_time(1e6)], [MTCD_SPEC, UE_SPEC])
    r = max_utility_schedule(p)
    assert evaluate_objective(p, r.owner) == pytest.approx(r.objective, abs=1e-9)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_idle_iff_no_positive_marginal(seed):
    rng = np.random.default_rng(seed)
    p = _random_problem(rng, [UE_SPEC, UtilitySpec.hard_real_time(1e6)], [MTCD_SPEC])
    r = max_utility_schedule(p)
    acc = p.base_rates.copy()
    ids = list(p.user_ids)
    for k, o in enumerate(r.owner):
        gains = [w * marginal_utility(s, acc[u], p.rates[u, k])
                 for u, (s, w) in enumerate(zip(p.specs, p.weights))]
        if o < 0:
            assert max(gains) <= 0
        else:
            assert max(gains) > 0
            acc[ids.index(o)] += p.rates[ids.index(o), k]


@settings(max_examples=100)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_m2m_share_grows_with_lambda_on_flat_channels(seed):
    rng = np.random.default_rng(seed)
    nh, nm, k = (int(x) for x in rng.integers(1, [4, 4, 9]))
    h = np.repeat(rng.uniform(0, 2e6, (nh, 1)), k, 1)
    m = np.repeat(rng.uniform(0, 2e5, (nm, 1)), k, 1)
    counts = []
    for lam in np.linspace(0, 1, 11):
        p = SchedulingProblem(list(range(nh)), [UE_SPEC] * nh, h,
                              list(range(10, 10 + nm)), [MTCD_SPEC] * nm, m, float(lam))
        counts.append(int(np.sum(max_utility_schedule(p).owner >= 10)))
    assert counts == sorted(counts)


def test_greedy_can_miss_on_frequency_selective_rates():
    # RB 0 is good for both users, RB 1 only for user 0: greedy hands RB 0 to user 0
    p = problem([[10.0, 9.0], [9.0, 0.0]])
    assert max_utility_schedule(p).objective < brute_force_schedule(p).objective


# slot placement

def test_grid_roles_alternate():
    g = ResourceGrid(num_rbs=4, num_slots=6)
    assert g.roles == [SlotRole.BACKHAUL, SlotRole.ACCESS] * 3


def test_duplicate_enb_grant_rejected():
    a = AllocationMatrix(ResourceGrid(4))
    a.assign(Transmission(LinkKind.ENB_UE, 0, 5, 1, 2, 32.0))
    with pytest.raises(ContractViolation):
        a.assign(Transmission(LinkKind.ENB_MTCD, 0, 6, 1, 2, 32.0))


def _sector_problem(rbs, lam=0.8):
    k = len(rbs)
    return SchedulingProblem([10, 11], [UE_SPEC] * 2, np.full((2, k), 4e5),
                             [20], [MTCD_SPEC], np.full((1, k), 2e5), lam, rbs=list(rbs))


def test_backhaul_slot_keeps_gateway_rbs_orthogonal():
    grid = ResourceGrid(6)
    a = AllocationMatrix(grid)
    res = [GatewayReservation(0, 30, (0, 1)), GatewayReservation(1, 31, (0,))]
    probs = {0: _sector_problem(range(2, 6)), 1: _sector_problem(range(1, 6))}
    out = schedule_backhaul_slot(a, 0, probs, res, {0: 32.0, 1: 32.0})
    assert set(out) == {0, 1}
    assert a.orthogonality_violations({0: [0, 1], 1: [0]}) == []
    assert {r.kind for r in a.holders(0, 0)} == {LinkKind.ENB_MTCG}


def test_backhaul_problem_overlapping_reservation_rejected():
    a = AllocationMatrix(ResourceGrid(4))
    with pytest.raises(ContractViolation):
        schedule_backhaul_slot(a, 0, {0: _sector_problem(range(4))}, [GatewayReservation(0, 30, (1,))], {0: 32.0})


def test_orthogonality_check_flags_shared_gateway_rb():
    a = AllocationMatrix(ResourceGrid(4))
    a.assign(Transmission(LinkKind.ENB_MTCG, 0, 30, 0, 1, 32.0))
    a.assign(Transmission(LinkKind.ENB_UE, 0, 10, 0, 2, 32.0))
    assert a.orthogonality_violations({0: [1]}) == []
    assert a.orthogonality_violations({0: [1, 2]})


@pytest.mark.parametrize("fn, slot", [(schedule_backhaul_slot, 1), (schedule_access_slot, 0)])
def test_slot_role_guard(fn, slot):
    a = AllocationMatrix(ResourceGrid(4))
    with pytest.raises(ContractViolation):
        if fn is schedule_backhaul_slot:
            fn(a, slot, {}, [], {})
        else:
            fn(a, slot, {}, {})


def test_access_slot_without_gateways_is_plain_schedule():
    a = AllocationMatrix(ResourceGrid(4))
    p = _sector_problem(range(4))
    out = schedule_access_slot(a, 1, {0: p}, {0: 32.0})
    assert list(out[0].owner) == list(max_utility_schedule(p).owner)
    assert all(r.kind in (LinkKind.ENB_UE, LinkKind.ENB_MTCD) for r in a.records())


def test_gateways_in_different_sectors_reuse_rbs():
    a = AllocationMatrix(ResourceGrid(4))
    res = [GatewayReservation(0, 30, (0, 1), receivers=(40, 41)), GatewayReservation(1, 31, (0,), receivers=(42,))]
    pairs = [(50, 51, [2, 3], 14.0)]
    schedule_access_slot(a, 1, {}, {}, res, {30: 14.0, 31: 14.0}, pairs)
    tx_on_rb0 = {r.tx for r in a.holders(1, 0)}
    assert tx_on_rb0 == {30, 31}
    assert len(a.holders(1, 0)) == 3  # both receivers of gateway 30 plus 42
    assert {r.rb for r in a.records() if r.kind is LinkKind.MTCD_MTCD} == {2, 3}


def test_allocation_dump(tmp_path):
    a = AllocationMatrix(ResourceGrid(2))
    a.assign(Transmission(LinkKind.ENB_UE, 0, 5, 1, 1, 32.0))
    path = tmp_path / "alloc.csv"
    a.dump(path)
    assert path.read_text().splitlines() == ["slot,rb,kind,tx,rx", "1,1,ENB_UE,0,5"]
