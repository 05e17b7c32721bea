"""Propagation, shadowing, antenna pattern, SINR and link adaptation."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ContractViolation, DomainError
from .topology import NetworkLayout, Node, NodeKind


class LinkKind(str, enum.Enum):
    ENB_UE = "ENB_UE"
    ENB_MTCD = "ENB_MTCD"
    ENB_MTCG = "ENB_MTCG"
    MTCG_MTCD = "MTCG_MTCD"
    MTCD_MTCD = "MTCD_MTCD"

    @property
    def from_enb(self) -> bool:
        return self in (LinkKind.ENB_UE, LinkKind.ENB_MTCD, LinkKind.ENB_MTCG)


@dataclass(frozen=True)
class Transmission:
    """One transmitter occupying one RB of one slot towards one receiver."""

    kind: LinkKind
    tx: int
    rx: int
    slot: int
    rb: int
    power_dbm: float


@dataclass(frozen=True)
class LinkBudgetConstants:
    noise_figure_db: float = 9.0
    thermal_noise_density_dbm_per_hz: float = -174.0
    rb_bandwidth_hz: float = 180e3
    # link adaptation: rate = B * min(alpha * log2(1 + sinr), eta_max), zero below sinr_min
    alpha: float = 0.75
    eta_max: float = 6.0
    sinr_min_db: float = -10.0

    @property
    def noise_dbm_per_rb(self) -> float:
        return (self.thermal_noise_density_dbm_per_hz + 10.0 * math.log10(self.rb_bandwidth_hz)
                + self.noise_figure_db)


def db_to_linear(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def pathloss_macro(distance_km, floor_km: float = 0.01):
    """128.1 + 37.6 log10(R), R in km, distances clamped to ``floor_km``."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError("macro pathloss needs a positive distance")
    d = np.maximum(d, floor_km)
    out = 128.1 + 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def pathloss_mtcd_mtcd(distance_m, los: Optional[bool] = None, breakpoint: float = 0.3):
    """Device-to-device loss, R in metres.

    LOS branch 38.5 + 20 log10(R) below ``breakpoint``, NLOS 48.9 + 40 log10(R)
    otherwise. ``los`` overrides the distance rule when given.
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError("device-to-device pathloss needs a positive distance")
    use_los = d < breakpoint if los is None else np.full(d.shape, bool(los))
    out = np.where(use_los, 38.5 + 20.0 * np.log10(d), 48.9 + 40.0 * np.log10(d))
    return float(out) if out.ndim == 0 else out


def antenna_gain(sector_boresight, angle_to_rx, peak_dbi: float = 14.0,
                 theta_3db: float = 70.0, max_attenuation: float = 25.0):
    """Horizontal parabolic sector pattern with front-to-back floor."""
    theta = np.asarray(angle_to_rx, dtype=float) - np.asarray(sector_boresight, dtype=float)
    theta = -np.mod(-theta + 180.0, 360.0) + 180.0  # (-180, 180]
    out = peak_dbi - np.minimum(12.0 * (theta / theta_3db) ** 2, max_attenuation)
    return float(out) if out.ndim == 0 else out


def rate_per_rb(sinr_db, constants: LinkBudgetConstants = LinkBudgetConstants()):
    sinr_db = np.asarray(sinr_db, dtype=float)
    se = np.minimum(constants.alpha * np.log2(1.0 + db_to_linear(sinr_db)), constants.eta_max)
    out = np.where(sinr_db < constants.sinr_min_db, 0.0, constants.rb_bandwidth_hz * se)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Shadowing:
    """Per (site, receiver) macro shadowing in dB; sectors of a site share it."""

    node_ids: np.ndarray
    values: np.ndarray  # (num_sites, num_receivers)

    def column(self, node_id: int) -> int:
        idx = np.flatnonzero(self.node_ids == node_id)
        if len(idx) == 0:
            raise KeyError(f"no shadowing sampled for node {node_id}")
        return int(idx[0])

    def value(self, site: int, node_id: int) -> float:
        return float(self.values[site, self.column(node_id)])

    @staticmethod
    def merge(parts: Iterable["Shadowing"]) -> "Shadowing":
        parts = list(parts)
        if not parts:
            return Shadowing(np.zeros(0, dtype=int), np.zeros((0, 0)))
        return Shadowing(np.concatenate([p.node_ids for p in parts]),
                         np.concatenate([p.values for p in parts], axis=1))


def sample_shadowing(layout: NetworkLayout, receivers: Sequence[Node], sigma_db: float,
                     inter_site_corr: float, rng: np.random.Generator) -> Shadowing:
    """sqrt(rho) * common + sqrt(1 - rho) * per-site, both N(0, sigma^2)."""
    if not 0.0 <= inter_site_corr <= 1.0:
        raise DomainError("inter_site_corr must lie in [0, 1]")
    n = len(receivers)
    draws = rng.standard_normal((n, layout.num_sites + 1)) * sigma_db
    common = draws[:, :1]
    per_site = draws[:, 1:]
    vals = math.sqrt(inter_site_corr) * common + math.sqrt(1.0 - inter_site_corr) * per_site
    return Shadowing(np.array([r.id for r in receivers], dtype=int), vals.T.copy())


@dataclass(frozen=True)
class LinkComponents:
    pathloss_db: float
    shadowing_db: float
    antenna_db: float
    penetration_db: float

    @property
    def gain_db(self) -> float:
        return self.antenna_db - self.pathloss_db - self.shadowing_db - self.penetration_db


class ChannelState:
    """Large-scale channel of one drop. Immutable once constructed."""

    def __init__(self, layout: NetworkLayout, nodes: Iterable[Node], shadowing: Shadowing,
                 constants: LinkBudgetConstants = LinkBudgetConstants(), *,
                 num_rbs: int = 50, penetration_loss_db: float = 20.0,
                 d2d_breakpoint_m: float = 0.3, macro_floor_km: float = 0.01):
        self.layout = layout
        self.constants = constants
        self.num_rbs = num_rbs
        self.penetration_loss_db = penetration_loss_db
        self.d2d_breakpoint_m = d2d_breakpoint_m
        self.macro_floor_km = macro_floor_km
        self.shadowing = shadowing
        self.nodes = {s.id: s for s in layout.sectors}
        self.nodes.update({n.id: n for n in nodes})
        self._shadow_col = {int(i): c for c, i in enumerate(shadowing.node_ids)}

    @property
    def noise_dbm(self) -> float:
        return self.constants.noise_dbm_per_rb

    def enb_power_per_rb(self, sector_id: int) -> float:
        return self.nodes[sector_id].max_tx_power - 10.0 * math.log10(self.num_rbs)

    def link_components(self, tx_id: int, rx_id: int) -> LinkComponents:
        tx, rx = self.nodes[tx_id], self.nodes[rx_id]
        if tx.kind is NodeKind.ENB_SECTOR:
            vec = self.layout.site_vectors(np.array([rx.position]))[tx.site, 0]
            dist = float(np.hypot(*vec))
            ang = math.degrees(math.atan2(vec[1], vec[0]))
            ant = antenna_gain(tx.boresight, ang, peak_dbi=tx.antenna_gain) + rx.antenna_gain
            col = self._shadow_col.get(rx.id)
            shadow = 0.0 if col is None else float(self.shadowing.values[tx.site, col])
            pen = self.penetration_loss_db if rx.indoor else 0.0
            return LinkComponents(pathloss_macro(dist / 1000.0, self.macro_floor_km), shadow, ant, pen)
        if tx.kind in (NodeKind.MTCD, NodeKind.MTCG):
            dist = math.hypot(tx.x - rx.x, tx.y - rx.y)
            pl = pathloss_mtcd_mtcd(dist, breakpoint=self.d2d_breakpoint_m)
            return LinkComponents(pl, 0.0, tx.antenna_gain + rx.antenna_gain, 0.0)
        raise ValueError(f"{tx.kind.value} nodes do not transmit in the downlink model")

    def link_gain_db(self, tx_id: int, rx_id: int) -> float:
        return self.link_components(tx_id, rx_id).gain_db

    def rx_power_dbm(self, record: Transmission, rx_id: Optional[int] = None) -> float:
        return record.power_dbm + self.link_gain_db(record.tx, record.rx if rx_id is None else rx_id)

    def sector_gain_matrix(self, rx_ids: Sequence[int]) -> np.ndarray:
        """Gains (dB) from every sector to each receiver, shape (num_sectors, len(rx_ids))."""
        rx = [self.nodes[i] for i in rx_ids]
        if not rx:
            return np.zeros((self.layout.num_sectors, 0))
        pts = np.array([n.position for n in rx])
        vec = self.layout.site_vectors(pts)
        dist_km = np.hypot(vec[..., 0], vec[..., 1]) / 1000.0
        pl = pathloss_macro(dist_km, self.macro_floor_km)
        ang = np.degrees(np.arctan2(vec[..., 1], vec[..., 0]))
        cols = [self._shadow_col.get(i) for i in rx_ids]
        shadow = np.zeros((self.layout.num_sites, len(rx)))
        for j, c in enumerate(cols):
            if c is not None:
                shadow[:, j] = self.shadowing.values[:, c]
        pen = np.array([self.penetration_loss_db if n.indoor else 0.0 for n in rx])
        rx_gain = np.array([n.antenna_gain for n in rx])
        out = np.empty((self.layout.num_sectors, len(rx)))
        for sec in self.layout.sectors:
            s = sec.site
            out[sec.id] = (antenna_gain(sec.boresight, ang[s], peak_dbi=sec.antenna_gain) + rx_gain
                           - pl[s] - shadow[s] - pen)
        return out

    def d2d_gain_matrix(self, tx_ids: Sequence[int], rx_ids: Sequence[int]) -> np.ndarray:
        """Gains (dB) between device transmitters and receivers, shape (len(tx), len(rx))."""
        if len(tx_ids) == 0 or len(rx_ids) == 0:
            return np.zeros((len(tx_ids), len(rx_ids)))
        tx = np.array([self.nodes[i].position for i in tx_ids])
        rx = np.array([self.nodes[i].position for i in rx_ids])
        d = np.hypot(tx[:, None, 0] - rx[None, :, 0], tx[:, None, 1] - rx[None, :, 1])
        g_tx = np.array([self.nodes[i].antenna_gain for i in tx_ids])
        g_rx = np.array([self.nodes[i].antenna_gain for i in rx_ids])
        return g_tx[:, None] + g_rx[None, :] - pathloss_mtcd_mtcd(d, breakpoint=self.d2d_breakpoint_m)


def interferes_with(interferer: LinkKind, victim: LinkKind) -> bool:
    """Asymmetric interference rules of the partition model.

    Device-to-device links only disturb other device-to-device receivers and
    gateway-to-device transmissions are neglected as interferers.
    """
    if interferer is LinkKind.MTCG_MTCD:
        return False
    if interferer is LinkKind.MTCD_MTCD:
        return victim is LinkKind.MTCD_MTCD
    return True


def sinr_per_rb(rx: Node | int, serving: Transmission, grid_assignment, channel: ChannelState,
                constants: Optional[LinkBudgetConstants] = None) -> float:
    """SINR (dB) of ``serving`` at ``rx`` given everything else on the same RB.

    ``grid_assignment`` must provide ``holders(slot, rb)``.
    """
    constants = channel.constants if constants is None else constants
    rx_id = rx if isinstance(rx, int) else rx.id
    holders = list(grid_assignment.holders(serving.slot, serving.rb))
    if serving not in holders:
        raise ContractViolation(f"RB {serving.rb} of slot {serving.slot} is not held by {serving}")
    signal = db_to_linear(channel.rx_power_dbm(serving, rx_id))
    interference = 0.0
    counted = {serving.tx}
    for rec in holders:
        if rec.tx in counted or not interferes_with(rec.kind, serving.kind):
            continue
        counted.add(rec.tx)
        interference += db_to_linear(channel.rx_power_dbm(rec, rx_id))
    noise = db_to_linear(constants.noise_dbm_per_rb)
    return float(linear_to_db(signal / (noise + interference)))


def write_link_dump(path: Path | str, links: Iterable[tuple[int, int, float]], channel: ChannelState) -> None:
    """Flat per-link records: tx, rx, pathloss, shadowing, antenna, rx power.

    ``links`` yields (tx_id, rx_id, tx_power_dbm_per_rb).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tx", "rx", "pathloss_db", "shadowing_db", "antenna_db", "rx_power_dbm"])
        for tx, rx, p in links:
            c = channel.link_components(tx, rx)
            w.writerow([tx, rx, repr(c.pathloss_db), repr(c.shadowing_db), repr(c.antenna_db),
                        repr(p + c.gain_db)])
