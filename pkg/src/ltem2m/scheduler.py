"""Backhaul/access partition, backhaul RB sizing and MAX-Utility scheduling."""
from __future__ import annotations

import csv
import enum
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .channel import LinkKind, Transmission
from .errors import CapacityError, ContractViolation, DomainError
from .utility import UtilitySpec, eval_utility

BRUTE_FORCE_LIMIT = 10 ** 6


class SlotRole(str, enum.Enum):
    BACKHAUL = "BACKHAUL"
    ACCESS = "ACCESS"


@dataclass(frozen=True)
class ResourceGrid:
    """RBs x slots; even slots are backhaul, odd slots access."""

    num_rbs: int = 50
    num_slots: int = 2

    def slot_role(self, slot: int) -> SlotRole:
        if not 0 <= slot < self.num_slots:
            raise IndexError(f"slot {slot} outside grid of {self.num_slots}")
        return SlotRole.BACKHAUL if slot % 2 == 0 else SlotRole.ACCESS

    @property
    def roles(self) -> list[SlotRole]:
        return [self.slot_role(t) for t in range(self.num_slots)]


class AllocationMatrix:
    """Every transmission placed on the grid, indexed by (slot, RB)."""

    def __init__(self, grid: ResourceGrid):
        self.grid = grid
        self._cells: dict[tuple[int, int], list[Transmission]] = defaultdict(list)
        self._enb: dict[tuple[int, int, int], Transmission] = {}

    def assign(self, rec: Transmission) -> None:
        if not 0 <= rec.rb < self.grid.num_rbs:
            raise IndexError(f"RB {rec.rb} outside grid")
        self.grid.slot_role(rec.slot)
        if rec.kind.from_enb:
            key = (rec.slot, rec.rb, rec.tx)
            if key in self._enb:
                raise ContractViolation(f"sector {rec.tx} already transmits on slot {rec.slot} RB {rec.rb}")
            self._enb[key] = rec
        self._cells[(rec.slot, rec.rb)].append(rec)

    def holders(self, slot: int, rb: int) -> list[Transmission]:
        return list(self._cells.get((slot, rb), ()))

    def records(self) -> list[Transmission]:
        out = []
        for key in sorted(self._cells):
            out.extend(self._cells[key])
        return out

    def enb_activity(self, num_sectors: int) -> np.ndarray:
        """Boolean (num_sectors, num_slots, num_rbs): sector transmits on the RB."""
        act = np.zeros((num_sectors, self.grid.num_slots, self.grid.num_rbs), dtype=bool)
        for slot, rb, tx in self._enb:
            act[tx, slot, rb] = True
        return act

    def orthogonality_violations(self, reserved: Optional[Mapping[int, Iterable[int]]] = None) -> list[str]:
        """Backhaul-slot checks for eNB-to-MTCG grants.

        Each such RB must carry exactly one gateway and no other eNB link of
        the same sector; ``reserved`` (sector -> RBs) must not be granted to
        any other eNB link of that sector.
        """
        problems = []
        for (slot, rb), recs in sorted(self._cells.items()):
            if self.grid.slot_role(slot) is not SlotRole.BACKHAUL:
                continue
            by_sector: dict[int, list[Transmission]] = defaultdict(list)
            for r in recs:
                if r.kind.from_enb:
                    by_sector[r.tx].append(r)
            for sector, lst in by_sector.items():
                gw = [r for r in lst if r.kind is LinkKind.ENB_MTCG]
                if gw and (len(gw) != 1 or len(lst) != 1):
                    problems.append(f"slot {slot} RB {rb} sector {sector}: gateway RB shared by {lst}")
        if reserved:
            for slot in range(self.grid.num_slots):
                if self.grid.slot_role(slot) is not SlotRole.BACKHAUL:
                    continue
                for sector, rbs in reserved.items():
                    for rb in rbs:
                        rec = self._enb.get((slot, rb, sector))
                        if rec is not None and rec.kind is not LinkKind.ENB_MTCG:
                            problems.append(f"slot {slot} RB {rb} sector {sector}: reserved RB granted to {rec}")
        return problems

    def dump(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "rb", "kind", "tx", "rx"])
            for r in self.records():
                w.writerow([r.slot, r.rb, r.kind.value, r.tx, r.rx])


def estimate_backhaul_rbs(total_mtcd_rate: float, avg_rate_per_rb: float,
                          num_rbs: Optional[int] = None) -> int:
    """ceil(total / per-RB rate), capped at ``num_rbs``."""
    if not avg_rate_per_rb > 0:
        raise DomainError("average rate per RB must be positive")
    if total_mtcd_rate < 0:
        raise DomainError("total MTCD rate must be non-negative")
    need = math.ceil(Fraction(total_mtcd_rate) / Fraction(avg_rate_per_rb))
    return need if num_rbs is None else min(need, num_rbs)


@dataclass
class SchedulingProblem:
    """One sector's MAX-Utility instance.

    Rates are per user per resource (bit/s contributed by holding it);
    ``base_rates`` carries rate already accumulated earlier in the window.
    """

    h2h_ids: Sequence[int]
    h2h_specs: Sequence[UtilitySpec]
    h2h_rates: np.ndarray
    m2m_ids: Sequence[int]
    m2m_specs: Sequence[UtilitySpec]
    m2m_rates: np.ndarray
    lam: float
    rbs: Optional[Sequence[int]] = None
    base_rates: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1] (got {self.lam})")
        nh, nm = len(self.h2h_ids), len(self.m2m_ids)
        h = np.asarray(self.h2h_rates, dtype=float)
        m = np.asarray(self.m2m_rates, dtype=float)
        if self.rbs is not None:
            k = len(self.rbs)
        elif nh or nm:
            k = (h.size // nh) if nh else (m.size // nm)
        else:
            k = 0
        self.rbs = list(range(k)) if self.rbs is None else list(self.rbs)
        self.h2h_rates = h.reshape(nh, k)
        self.m2m_rates = m.reshape(nm, k)
        if self.h2h_rates.shape[1] != k or self.m2m_rates.shape[1] != k:
            raise ValueError("rate matrices must have one column per RB")
        if len(self.h2h_specs) != nh or len(self.m2m_specs) != nm:
            raise ValueError("one UtilitySpec per user is required")
        if np.any(self.h2h_rates < 0) or np.any(self.m2m_rates < 0):
            raise DomainError("rates must be non-negative")
        if self.base_rates is None:
            self.base_rates = np.zeros(nh + nm)
        self.base_rates = np.asarray(self.base_rates, dtype=float)

    @property
    def num_rbs(self) -> int:
        return len(self.rbs)

    @property
    def user_ids(self) -> np.ndarray:
        return np.array(list(self.h2h_ids) + list(self.m2m_ids), dtype=int)

    @property
    def specs(self) -> list[UtilitySpec]:
        return list(self.h2h_specs) + list(self.m2m_specs)

    @property
    def rates(self) -> np.ndarray:
        return np.vstack([self.h2h_rates, self.m2m_rates])

    @property
    def weights(self) -> np.ndarray:
        return np.array([1.0] * len(self.h2h_ids) + [self.lam] * len(self.m2m_ids))


@dataclass
class ScheduleResult:
    owner: np.ndarray  # node id per RB position, -1 when idle
    user_rates: np.ndarray  # accumulated rate per user (h2h then m2m)
    objective: float
    rbs: list[int] = field(default_factory=list)

    def granted(self, node_id: int) -> list[int]:
        return [rb for rb, o in zip(self.rbs, self.owner) if o == node_id]

    def matrix(self, user_ids: Sequence[int]) -> np.ndarray:
        """Binary users x RBs form of the allocation."""
        ids = np.asarray(user_ids)
        return (self.owner[None, :] == ids[:, None]).astype(int)


def _utilities(specs: Sequence[UtilitySpec], rates: np.ndarray) -> np.ndarray:
    out = np.empty(len(specs))
    groups: dict[UtilitySpec, list[int]] = defaultdict(list)
    for i, s in enumerate(specs):
        groups[s].append(i)
    for spec, idx in groups.items():
        out[idx] = eval_utility(spec, rates[idx])
    return out


def evaluate_objective(problem: SchedulingProblem, owner: Sequence[int]) -> float:
    """Sum of H2H utilities plus lambda times the M2M utilities for ``owner``."""
    ids = list(problem.user_ids)
    rates = problem.rates
    acc = problem.base_rates.copy()
    for k, o in enumerate(owner):
        if o >= 0:
            u = ids.index(o)
            acc[u] += rates[u, k]
    util = _utilities(problem.specs, acc)
    nh = len(problem.h2h_ids)
    return float(util[:nh].sum() + problem.lam * util[nh:].sum())


def max_utility_schedule(problem: SchedulingProblem) -> ScheduleResult:
    """Greedy per-RB MAX-Utility allocation.

    RBs are visited in order; each goes to the user with the largest
    lambda-weighted marginal utility given its accumulated rate (lowest node
    id on ties) and stays idle when no marginal is positive.
    """
    ids = problem.user_ids
    specs = problem.specs
    rates = problem.rates
    w = problem.weights
    acc = problem.base_rates.copy()
    owner = np.full(problem.num_rbs, -1, dtype=int)
    if len(ids):
        current = _utilities(specs, acc)
        for k in range(problem.num_rbs):
            cand = acc + rates[:, k]
            after = _utilities(specs, cand)
            gain = w * (after - current)
            best = gain.max()
            if not best > 0:
                continue
            u = min(np.flatnonzero(gain == best), key=lambda i: ids[i])
            owner[k] = ids[u]
            acc[u] = cand[u]
            current[u] = after[u]
        util = current
    else:
        util = np.zeros(0)
    nh = len(problem.h2h_ids)
    objective = float(util[:nh].sum() + problem.lam * util[nh:].sum())
    return ScheduleResult(owner, acc, objective, list(problem.rbs))


def brute_force_schedule(problem: SchedulingProblem) -> ScheduleResult:
    """Exhaustive optimum over every RB-to-user-or-idle assignment."""
    n_users = len(problem.user_ids)
    k = problem.num_rbs
    if (n_users + 1) ** k > BRUTE_FORCE_LIMIT:
        raise CapacityError(f"{(n_users + 1) ** k} assignments exceed the enumeration limit")
    ids = problem.user_ids
    rates = problem.rates
    specs = problem.specs
    w = problem.weights
    best_obj, best_owner, best_acc = -math.inf, None, None
    for choice in itertools.product(range(-1, n_users), repeat=k):
        acc = problem.base_rates.copy()
        for rb, u in enumerate(choice):
            if u >= 0:
                acc[u] += rates[u, rb]
        obj = float(np.dot(w, _utilities(specs, acc))) if n_users else 0.0
        if obj > best_obj:
            best_obj, best_owner, best_acc = obj, choice, acc
    owner = np.array([ids[u] if u >= 0 else -1 for u in best_owner], dtype=int)
    return ScheduleResult(owner, best_acc, best_obj, list(problem.rbs))


def _place_enb_grants(allocation: AllocationMatrix, slot: int, sector: int,
                      problem: SchedulingProblem, result: ScheduleResult, power_dbm: float) -> None:
    m2m = set(problem.m2m_ids)
    for rb, o in zip(result.rbs, result.owner):
        if o >= 0:
            kind = LinkKind.ENB_MTCD if o in m2m else LinkKind.ENB_UE
            allocation.assign(Transmission(kind, sector, int(o), slot, int(rb), power_dbm))


@dataclass(frozen=True)
class GatewayReservation:
    """RBs reserved for one gateway and the devices it relays to."""

    sector: int
    mtcg: int
    rbs: tuple[int, ...]
    receivers: tuple[int, ...] = ()


def schedule_backhaul_slot(allocation: AllocationMatrix, slot: int,
                           problems: Mapping[int, SchedulingProblem],
                           reservations: Sequence[GatewayReservation],
                           enb_power_dbm: Mapping[int, float]) -> dict[int, ScheduleResult]:
    """Orthogonal gateway grants first, then MAX-Utility on each sector's remaining RBs."""
    if allocation.grid.slot_role(slot) is not SlotRole.BACKHAUL:
        raise ContractViolation(f"slot {slot} is not a backhaul slot")
    for res in reservations:
        for rb in res.rbs:
            allocation.assign(Transmission(LinkKind.ENB_MTCG, res.sector, res.mtcg, slot, rb,
                                           enb_power_dbm[res.sector]))
    out = {}
    for sector, prob in sorted(problems.items()):
        taken = {rb for r in reservations if r.sector == sector for rb in r.rbs}
        if taken & set(prob.rbs):
            raise ContractViolation(f"sector {sector} problem includes reserved RBs")
        result = max_utility_schedule(prob)
        _place_enb_grants(allocation, slot, sector, prob, result, enb_power_dbm[sector])
        out[sector] = result
    return out


def schedule_access_slot(allocation: AllocationMatrix, slot: int,
                         problems: Mapping[int, SchedulingProblem],
                         enb_power_dbm: Mapping[int, float],
                         reservations: Sequence[GatewayReservation] = (),
                         gateway_power_dbm: Optional[Mapping[int, float]] = None,
                         pair_links: Sequence[tuple[int, int, Sequence[int], float]] = ()
                         ) -> dict[int, ScheduleResult]:
    """Place every access-slot transmission.

    eNB links are scheduled by MAX-Utility over the sector problems; each
    gateway transmits on all of its reserved RBs, time-shared among its
    receivers (reuse across gateways allowed); ``pair_links`` are
    (tx, rx, rbs, power) tuples produced by the pair channel allocator.
    """
    if allocation.grid.slot_role(slot) is not SlotRole.ACCESS:
        raise ContractViolation(f"slot {slot} is not an access slot")
    out = {}
    for sector, prob in sorted(problems.items()):
        result = max_utility_schedule(prob)
        _place_enb_grants(allocation, slot, sector, prob, result, enb_power_dbm[sector])
        out[sector] = result
    for res in reservations:
        if not res.receivers:
            continue
        power = gateway_power_dbm[res.mtcg] if gateway_power_dbm else 0.0
        for rb in res.rbs:
            for rx in res.receivers:
                allocation.assign(Transmission(LinkKind.MTCG_MTCD, res.mtcg, rx, slot, rb, power))
    for tx, rx, rbs, power in pair_links:
        for rb in rbs:
            allocation.assign(Transmission(LinkKind.MTCD_MTCD, tx, rx, slot, int(rb), power))
    return out
