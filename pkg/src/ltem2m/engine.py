"""Monte-Carlo drops, campaigns and their statistics."""
from __future__ import annotations

import csv
import dataclasses
import functools
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .channel import (ChannelState, LinkBudgetConstants, LinkKind, Transmission, db_to_linear,
                      linear_to_db, rate_per_rb, sample_shadowing, Shadowing)
from .config import AllocationMode, DropConfig, PairPower
from .errors import DomainError
from .graphalloc import build_interference_graph, full_reuse_assign, run_distributed_coloring
from .scheduler import (AllocationMatrix, GatewayReservation, ResourceGrid, SchedulingProblem,
                        estimate_backhaul_rbs, schedule_access_slot, schedule_backhaul_slot)
from .topology import (NetworkLayout, Node, NodeKind, apply_duty_cycle, build_layout, place_mtcds,
                       place_mtcgs, place_ues)
from .utility import eval_utility

POPULATIONS = ("H2H", "M2M", "PAIR", "RELAY")
BACKHAUL_SLOT, ACCESS_SLOT = 0, 1

# Independent random streams per drop; a population's draws never depend on
# the size of another population, so paired comparisons share geometry.
_STREAMS = {"ue": 0, "mtcd": 1, "duty": 2, "shadow_ue": 3, "shadow_mtcd": 4,
            "shadow_mtcg": 5, "coloring": 6}


def drop_rng(seed: int, drop: int, stream: str, sub: int = 0) -> np.random.Generator:
    """Counter-based generator for (master seed, drop index, stream, sub-stream)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(drop, _STREAMS[stream], sub)))


@functools.lru_cache(maxsize=8)
def _layout(cfg_layout) -> NetworkLayout:
    return build_layout(cfg_layout.num_sites, cfg_layout.isd, cfg_layout.wraparound,
                        block_distance=cfg_layout.block_distance, block_azimuth=cfg_layout.block_azimuth,
                        apartment_size=cfg_layout.apartment_size, stripe_gap=cfg_layout.stripe_gap)


def stat_sectors(layout: NetworkLayout) -> list[int]:
    """Sectors whose users feed the statistics: all with wraparound, else the centre site."""
    if layout.wraparound:
        return [s.id for s in layout.sectors]
    return [s.id for s in layout.sectors if s.site == 0]


@dataclass
class DropDetails:
    nodes: list[Node]
    channel: ChannelState
    allocation: AllocationMatrix
    record_sinr_db: dict[Transmission, float]
    reservations: list[GatewayReservation]
    pair_colors: dict[int, tuple[int, ...]]  # pair tx -> held RBs


@dataclass
class DropResult:
    drop: int
    samples: list[tuple[str, int, float, float]]  # (population, node id, rate, utility)
    objective: float  # mean over statistics sectors of the weighted cell utility
    sector_objectives: dict[int, float]
    scheduled_objective: float  # scheduler's own objective on estimated rates
    reserved_rbs: dict[int, int]
    violations: list[str]
    coloring_conflicts: int
    details: Optional[DropDetails] = None


def _estimate_sinr_db(power_lin: np.ndarray, serving: np.ndarray, noise_lin: float) -> np.ndarray:
    """Full-load estimate: every other sector transmits on every RB."""
    cols = np.arange(power_lin.shape[1])
    signal = power_lin[serving, cols]
    interference = power_lin.sum(axis=0) - signal
    return linear_to_db(signal / (noise_lin + interference))


def run_drop(config: DropConfig, drop: int, *, keep_details: bool = False) -> DropResult:
    """One snapshot: place, duty-cycle, shadow, reserve, schedule, colour, evaluate."""
    cfg = config
    layout = _layout(cfg.layout)
    S = layout.num_sectors
    pop, ch = cfg.population, cfg.channel
    consts = LinkBudgetConstants(noise_figure_db=ch.noise_figure_db,
                                 thermal_noise_density_dbm_per_hz=ch.thermal_noise_density_dbm_per_hz,
                                 rb_bandwidth_hz=ch.rb_bandwidth_hz, alpha=ch.rate_alpha,
                                 eta_max=ch.rate_eta_max, sinr_min_db=ch.sinr_min_db)

    ues = place_ues(layout, pop.ues_per_sector, drop_rng(cfg.seed, drop, "ue"),
                    first_id=S, min_distance=pop.min_distance)
    ues = [_radio(n, ch.device_antenna_gain_dbi, ch.mtcd_tx_power_dbm) for n in ues]
    mtcds = place_mtcds(layout, pop.outdoor_mtcds_per_sector, pop.indoor_pairs_per_block,
                        drop_rng(cfg.seed, drop, "mtcd"), first_id=S + len(ues),
                        min_distance=pop.min_distance)
    mtcds = [_radio(n, ch.device_antenna_gain_dbi, ch.mtcd_tx_power_dbm) for n in mtcds]
    mtcds = apply_duty_cycle(mtcds, cfg.duty, drop_rng(cfg.seed, drop, "duty"))
    mtcgs = place_mtcgs(layout, pop.mtcgs_per_sector, first_id=S + len(ues) + len(mtcds),
                        tx_power=ch.mtcg_tx_power_dbm, antenna_gain=ch.mtcg_antenna_gain_dbi)
    if ch.enb_tx_power_dbm != layout.sectors[0].max_tx_power or \
            ch.enb_antenna_gain_dbi != layout.sectors[0].antenna_gain:
        layout = dataclasses.replace(layout, sectors=list(
            dataclasses.replace(s, max_tx_power=ch.enb_tx_power_dbm, antenna_gain=ch.enb_antenna_gain_dbi)
            for s in layout.sectors))

    active_mtcds = [n for n in mtcds if n.active]
    shadowing = Shadowing.merge([
        sample_shadowing(layout, ues, ch.shadowing_std_db, ch.shadowing_inter_site_corr,
                         drop_rng(cfg.seed, drop, "shadow_ue")),
        sample_shadowing(layout, mtcds, ch.shadowing_std_db, ch.shadowing_inter_site_corr,
                         drop_rng(cfg.seed, drop, "shadow_mtcd")),
        sample_shadowing(layout, mtcgs, ch.shadowing_std_db, ch.shadowing_inter_site_corr,
                         drop_rng(cfg.seed, drop, "shadow_mtcg")),
    ])
    nodes = ues + mtcds + mtcgs
    channel = ChannelState(layout, nodes, shadowing, consts, num_rbs=ch.num_rbs,
                           penetration_loss_db=ch.penetration_loss_db,
                           d2d_breakpoint_m=ch.d2d_breakpoint_m, macro_floor_km=ch.macro_floor_m / 1000.0)
    noise_lin = float(db_to_linear(consts.noise_dbm_per_rb))
    enb_power = {s.id: channel.enb_power_per_rb(s.id) for s in layout.sectors}

    outdoor = [n for n in active_mtcds if not n.indoor]
    indoor = [n for n in active_mtcds if n.indoor]
    receivers = ues + outdoor + indoor + mtcgs
    col = {n.id: j for j, n in enumerate(receivers)}
    gain_db = channel.sector_gain_matrix([n.id for n in receivers])
    power_db = gain_db + np.array([enb_power[s] for s in range(S)])[:, None]
    power_lin = db_to_linear(power_db)
    serving = np.array([n.serving_sector for n in receivers], dtype=int)
    est_sinr = _estimate_sinr_db(power_lin, serving, noise_lin) if receivers else np.zeros(0)
    est_rate = rate_per_rb(est_sinr, consts) if receivers else np.zeros(0)
    est_rate = np.atleast_1d(est_rate)

    # gateway reservations, sized from the gateway's own estimated link quality
    gw_by_sector: dict[int, list[Node]] = defaultdict(list)
    for g in mtcgs:
        gw_by_sector[g.serving_sector].append(g)
    # indoor devices of a sector are shared round-robin among its gateways
    relay_groups: dict[int, list[int]] = defaultdict(list)
    seen_in_sector: dict[int, int] = defaultdict(int)
    for n in indoor:
        gws = gw_by_sector.get(n.serving_sector)
        if gws:
            relay_groups[gws[seen_in_sector[n.serving_sector] % len(gws)].id].append(n.id)
            seen_in_sector[n.serving_sector] += 1
    reservations: list[GatewayReservation] = []
    reserved: dict[int, list[int]] = defaultdict(list)
    for g in mtcgs:
        group = relay_groups.get(g.id, [])
        demand = len(group) * cfg.scheduler.mtcd_demand_bps
        per_rb = float(est_rate[col[g.id]])
        left = ch.num_rbs - len(reserved[g.serving_sector])
        k = estimate_backhaul_rbs(demand, per_rb, left) if per_rb > 0 else 0
        start = len(reserved[g.serving_sector])
        rbs = tuple(range(start, start + k))
        reserved[g.serving_sector].extend(rbs)
        reservations.append(GatewayReservation(g.serving_sector, g.id, rbs, tuple(group)))

    # per-sector scheduling problems on estimated (flat) per-RB rates
    grid = ResourceGrid(ch.num_rbs, 2)
    allocation = AllocationMatrix(grid)
    spec = cfg.utility
    by_sector_h: dict[int, list[Node]] = defaultdict(list)
    by_sector_m: dict[int, list[Node]] = defaultdict(list)
    for n in ues:
        by_sector_h[n.serving_sector].append(n)
    for n in outdoor:
        by_sector_m[n.serving_sector].append(n)

    def problem(sector: int, rbs: list[int], base=None) -> SchedulingProblem:
        h, m = by_sector_h[sector], by_sector_m[sector]
        hr = np.repeat(est_rate[[col[n.id] for n in h]][:, None], len(rbs), axis=1) if h else np.zeros((0, len(rbs)))
        mr = np.repeat(est_rate[[col[n.id] for n in m]][:, None], len(rbs), axis=1) if m else np.zeros((0, len(rbs)))
        return SchedulingProblem([n.id for n in h], [spec.ue] * len(h), hr,
                                 [n.id for n in m], [spec.mtcd] * len(m), mr, cfg.lam, rbs, base)

    bh_problems = {s: problem(s, [k for k in range(ch.num_rbs) if k not in set(reserved[s])])
                   for s in range(S)}
    bh = schedule_backhaul_slot(allocation, BACKHAUL_SLOT, bh_problems, reservations, enb_power)

    # pair colouring, one interference graph per apartment block
    pairs_by_block: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for n in indoor:
        if n.pair_peer is not None and n.id < n.pair_peer:
            b = _block_of(layout, n)
            pairs_by_block[b].append((n.id, n.pair_peer))
    pair_power = {}
    pair_colors: dict[int, tuple[int, ...]] = {}
    conflicts = 0
    for b in sorted(pairs_by_block):
        pairs = pairs_by_block[b]
        site_sectors = [s.id for s in layout.sectors if s.site == b]  # block b sits in site b
        first = max(len(reserved[s]) for s in site_sectors)
        colors = list(range(first, ch.num_rbs))
        if cfg.graphalloc.num_colors is not None:
            colors = colors[:cfg.graphalloc.num_colors]
        if not colors:
            for tx, _ in pairs:
                pair_colors[tx] = ()
            continue
        g = channel.d2d_gain_matrix([p[0] for p in pairs], [p[1] for p in pairs])
        if cfg.allocation_mode is AllocationMode.GRAPH_BASED:
            graph = build_interference_graph(pairs, g, cfg.graphalloc.threshold_db)
            res = run_distributed_coloring(graph, len(colors), cfg.graphalloc.iterations,
                                           drop_rng(cfg.seed, drop, "coloring", b), cfg.graphalloc.p0)
            held = res.state.held
            conflicts += res.conflicts
        else:
            held = full_reuse_assign(pairs, len(colors)).held
        for i, (tx, _) in enumerate(pairs):
            pair_colors[tx] = tuple(colors[c] for c in np.flatnonzero(held[i]))
    for n in indoor:
        if n.id in pair_colors:
            k = len(pair_colors[n.id])
            split = cfg.graphalloc.pair_power is PairPower.SPLIT and k > 0
            pair_power[n.id] = n.max_tx_power - (10.0 * math.log10(k) if split else 0.0)
    pair_links = [(tx, channel.nodes[tx].pair_peer, pair_colors[tx], pair_power[tx]) for tx in sorted(pair_colors)]

    ac_problems = {s: problem(s, list(range(ch.num_rbs)), bh[s].user_rates) for s in range(S)}
    gw_power = {g.id: g.max_tx_power for g in mtcgs}
    ac = schedule_access_slot(allocation, ACCESS_SLOT, ac_problems, enb_power, reservations, gw_power, pair_links)
    scheduled_objective = float(sum(r.objective for r in ac.values()))

    # final evaluation under the committed allocation
    act = allocation.enb_activity(S).reshape(S, -1).astype(float)
    enb_interf = power_lin.T @ act if receivers else np.zeros((0, act.shape[1]))  # (receivers, slot*rb)
    records = allocation.records()
    d2d_tx = sorted({r.tx for r in records if r.kind is LinkKind.MTCD_MTCD})
    d2d_rx = sorted({r.rx for r in records if r.kind is LinkKind.MTCD_MTCD})
    relay_rx = sorted({r.rx for r in records if r.kind is LinkKind.MTCG_MTCD})
    d2d_gain = channel.d2d_gain_matrix(d2d_tx, d2d_rx)
    gw_ids = [g.id for g in mtcgs]
    gw_gain = channel.d2d_gain_matrix(gw_ids, relay_rx)
    tx_idx = {t: i for i, t in enumerate(d2d_tx)}
    rx_idx = {t: i for i, t in enumerate(d2d_rx)}
    relay_idx = {t: i for i, t in enumerate(relay_rx)}
    gw_idx = {t: i for i, t in enumerate(gw_ids)}
    pair_on_rb: dict[tuple[int, int], list[Transmission]] = defaultdict(list)
    for r in records:
        if r.kind is LinkKind.MTCD_MTCD:
            pair_on_rb[(r.slot, r.rb)].append(r)

    group_size = {res.mtcg: len(res.receivers) for res in reservations}
    rates: dict[tuple[bool, int], float] = defaultdict(float)
    record_sinr: dict[Transmission, float] = {}
    for r in records:
        cell = r.slot * ch.num_rbs + r.rb
        if r.kind.from_enb:
            j = col[r.rx]
            signal = power_lin[r.tx, j]
            interf = enb_interf[j, cell] - signal
        else:
            j = col[r.rx]
            if r.kind is LinkKind.MTCG_MTCD:
                signal = db_to_linear(r.power_dbm + gw_gain[gw_idx[r.tx], relay_idx[r.rx]])
                interf = enb_interf[j, cell]
            else:
                signal = db_to_linear(r.power_dbm + d2d_gain[tx_idx[r.tx], rx_idx[r.rx]])
                interf = enb_interf[j, cell]
                for o in pair_on_rb[(r.slot, r.rb)]:
                    if o.tx != r.tx:
                        interf += db_to_linear(o.power_dbm + d2d_gain[tx_idx[o.tx], rx_idx[r.rx]])
        sinr = float(linear_to_db(signal / (noise_lin + max(interf, 0.0))))
        record_sinr[r] = sinr
        if r.kind is LinkKind.MTCG_MTCD:
            rates[(False, r.rx)] += float(rate_per_rb(sinr, consts)) / group_size[r.tx]
        elif r.kind is not LinkKind.ENB_MTCG:
            rates[(r.kind is LinkKind.MTCD_MTCD, r.rx)] += float(rate_per_rb(sinr, consts))

    stats = set(stat_sectors(layout))
    samples: list[tuple[str, int, float, float]] = []
    sector_obj = {s: 0.0 for s in sorted(stats)}
    for n in ues:
        rate = rates.get((False, n.id), 0.0)
        u = eval_utility(spec.ue, rate)
        if n.serving_sector in stats:
            samples.append(("H2H", n.id, rate, u))
            sector_obj[n.serving_sector] += u
    for n in outdoor:
        rate = rates.get((False, n.id), 0.0)
        u = eval_utility(spec.mtcd, rate)
        if n.serving_sector in stats:
            samples.append(("M2M", n.id, rate, u))
            sector_obj[n.serving_sector] += cfg.lam * u
    for tx in sorted(pair_colors):
        rx = channel.nodes[tx].pair_peer
        held = len(pair_colors[tx])
        per_rb = rates.get((True, rx), 0.0) / held if held else 0.0
        if channel.nodes[rx].serving_sector in stats:
            samples.append(("PAIR", tx, per_rb, eval_utility(spec.pair, per_rb)))
    for res in reservations:
        if res.sector not in stats:
            continue
        for rx in res.receivers:
            rate = rates.get((False, rx), 0.0)
            samples.append(("RELAY", rx, rate, eval_utility(spec.mtcd, rate)))
    order = {p: i for i, p in enumerate(POPULATIONS)}
    samples.sort(key=lambda s: (order[s[0]], s[1]))
    objective = float(np.mean(list(sector_obj.values()))) if sector_obj else 0.0

    violations = allocation.orthogonality_violations({s: v for s, v in reserved.items()})
    details = None
    if keep_details:
        details = DropDetails(nodes, channel, allocation, record_sinr, reservations, pair_colors)
    return DropResult(drop, samples, objective, sector_obj, scheduled_objective,
                      {s: len(v) for s, v in sorted(reserved.items())}, violations, conflicts, details)


def _radio(node: Node, antenna_gain: float, tx_power: float) -> Node:
    if node.antenna_gain == antenna_gain and node.max_tx_power == tx_power:
        return node
    return dataclasses.replace(node, antenna_gain=antenna_gain, max_tx_power=tx_power)


def _block_of(layout: NetworkLayout, node: Node) -> int:
    for b, block in enumerate(layout.apartment_blocks):
        if block.contains(node.x, node.y):
            return b
    raise DomainError(f"indoor node {node.id} lies outside every apartment block")


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class CdfTable:
    values: np.ndarray  # sorted samples
    probs: np.ndarray  # empirical CDF at each sorted sample

    def percentile(self, p: float) -> float:
        """Lower empirical quantile: smallest sample x with CDF(x) >= p."""
        if not 0.0 <= p <= 1.0:
            raise DomainError("percentile level must lie in [0, 1]")
        n = len(self.values)
        idx = max(math.ceil(p * n - 1e-9) - 1, 0)
        return float(self.values[idx])


def compute_cdf(samples: Iterable[float]) -> CdfTable:
    x = np.sort(np.asarray(list(samples), dtype=float))
    if x.size == 0:
        raise DomainError("CDF needs at least one sample")
    return CdfTable(x, np.arange(1, x.size + 1) / x.size)


PERCENTILES = (10, 50, 90)


@dataclass
class MetricsReport:
    label: str
    lam: float
    samples: dict[str, np.ndarray]  # utilities per population
    raw: list[tuple[int, str, int, float, float]]  # (drop, population, node, rate, utility)
    cdfs: dict[str, CdfTable]
    percentiles: dict[str, dict[int, float]]
    aggregate_cell_utility: float
    objective_trace: list[float]
    violations: list[str] = field(default_factory=list)
    reserved_rbs: list[dict[int, int]] = field(default_factory=list)

    def percentile(self, population: str, p: int) -> float:
        return self.percentiles[population][p]


def summarize(results: Sequence[DropResult], label: str = "", lam: float = float("nan")) -> MetricsReport:
    results = sorted(results, key=lambda r: r.drop)
    raw = [(r.drop, *s) for r in results for s in r.samples]
    samples = {p: np.array([s[4] for s in raw if s[1] == p]) for p in POPULATIONS}
    samples = {p: v for p, v in samples.items() if v.size}
    cdfs = {p: compute_cdf(v) for p, v in samples.items()}
    pct = {p: {q: c.percentile(q / 100) for q in PERCENTILES} for p, c in cdfs.items()}
    trace = [r.objective for r in results]
    violations = [f"drop {r.drop}: {v}" for r in results for v in r.violations]
    return MetricsReport(label, lam, samples, raw, cdfs, pct, float(np.mean(trace)), trace,
                         violations, [r.reserved_rbs for r in results])


def _drop_worker(config: DropConfig, drop: int) -> DropResult:
    return run_drop(config, drop)


def run_campaign(config: DropConfig, workers: int = 1, label: str = "") -> MetricsReport:
    """All drops of ``config``; drop k uses streams derived from (seed, k) only."""
    drops = range(config.num_drops)
    if workers <= 1:
        results = [run_drop(config, d) for d in drops]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(functools.partial(_drop_worker, config), drops,
                                    chunksize=max(1, config.num_drops // (4 * workers))))
    return summarize(results, label, config.lam)


# ---------------------------------------------------------------- file formats

SAMPLE_COLUMNS = ["campaign", "lambda", "drop", "population", "node_id", "rate_bps", "utility"]
CDF_COLUMNS = ["campaign", "population", "utility", "cdf"]


def write_samples_csv(path: Path | str, reports: Sequence[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for rep in reports:
            for drop, population, node, rate, util in rep.raw:
                w.writerow([rep.label, repr(rep.lam), drop, population, node, repr(rate), repr(util)])


def write_cdf_csv(path: Path | str, reports: Sequence[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDF_COLUMNS)
        for rep in reports:
            for population, cdf in rep.cdfs.items():
                for x, p in zip(cdf.values, cdf.probs):
                    w.writerow([rep.label, population, repr(float(x)), repr(float(p))])


def summary_items(rep: MetricsReport) -> list[tuple[str, str]]:
    items = [(f"{rep.label}.lambda", repr(rep.lam)),
             (f"{rep.label}.drops", str(len(rep.objective_trace))),
             (f"{rep.label}.aggregate_cell_utility", repr(rep.aggregate_cell_utility)),
             (f"{rep.label}.orthogonality_violations", str(len(rep.violations)))]
    for population, pct in rep.percentiles.items():
        items.append((f"{rep.label}.{population}.samples", str(rep.samples[population].size)))
        for q, v in pct.items():
            items.append((f"{rep.label}.{population}.p{q}", repr(v)))
    return items


def write_summary(path: Path | str, items: Iterable[tuple[str, str]]) -> None:
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k} = {v}\n")


def read_summary(path: Path | str) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise DomainError(f"malformed summary line: {line!r}")
        out[key] = value
    return out
