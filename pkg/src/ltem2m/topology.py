"""Hexagonal macro layout, dual-stripe apartment blocks and node placement."""
from __future__ import annotations

import csv
import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError

ENB_TX_POWER_DBM = 46.0
ENB_ANTENNA_GAIN_DBI = 14.0
MTCD_TX_POWER_DBM = 14.0
UE_ANTENNA_GAIN_DBI = 0.0

SECTOR_BORESIGHTS = (30.0, 150.0, 270.0)
# number of hex rings for each supported site count
_RINGS = {1: 0, 7: 1, 19: 2}


class NodeKind(str, enum.Enum):
    ENB_SECTOR = "ENB_SECTOR"
    UE = "UE"
    MTCD = "MTCD"
    MTCG = "MTCG"


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    x: float
    y: float
    max_tx_power: float
    antenna_gain: float
    active: bool = True
    serving_sector: Optional[int] = None
    pair_peer: Optional[int] = None
    indoor: bool = False
    site: Optional[int] = None
    boresight: Optional[float] = None

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class ApartmentBlock:
    """Two stripes of 1 x rows x columns apartments separated by a street.

    Stripe 0 spans y in [0, rows*size), the street is ``stripe_gap`` wide and
    stripe 1 sits above it; all coordinates are offset by ``origin``.
    """

    origin: tuple[float, float]
    stripes: int = 2
    floors_per_stripe: int = 1
    rows: int = 4
    columns: int = 10
    apartment_size: float = 10.0
    stripe_gap: float = 10.0

    @property
    def width(self) -> float:
        return self.columns * self.apartment_size

    @property
    def stripe_depth(self) -> float:
        return self.rows * self.apartment_size

    @property
    def height(self) -> float:
        return self.stripes * self.stripe_depth + (self.stripes - 1) * self.stripe_gap

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.origin[0] + self.width / 2, self.origin[1] + self.height / 2)

    @property
    def num_apartments(self) -> int:
        return self.stripes * self.floors_per_stripe * self.rows * self.columns

    def apartments(self) -> np.ndarray:
        """Lower-left corners of every apartment, shape (num_apartments, 2)."""
        corners = []
        for s in range(self.stripes):
            y0 = self.origin[1] + s * (self.stripe_depth + self.stripe_gap)
            for _floor in range(self.floors_per_stripe):
                for r in range(self.rows):
                    for c in range(self.columns):
                        corners.append((self.origin[0] + c * self.apartment_size,
                                        y0 + r * self.apartment_size))
        return np.array(corners, dtype=float)

    def stripe_rects(self) -> list[tuple[float, float, float, float]]:
        rects = []
        for s in range(self.stripes):
            y0 = self.origin[1] + s * (self.stripe_depth + self.stripe_gap)
            rects.append((self.origin[0], y0, self.origin[0] + self.width, y0 + self.stripe_depth))
        return rects

    def contains(self, x: float, y: float) -> bool:
        return any(x0 <= x <= x1 and y0 <= y <= y1 for x0, y0, x1, y1 in self.stripe_rects())


@dataclass
class NetworkLayout:
    sites: np.ndarray
    sector_orientations: np.ndarray
    isd: float
    apartment_blocks: list[ApartmentBlock]
    wraparound: bool = False
    sectors: list[Node] = field(default_factory=list)

    @property
    def num_sites(self) -> int:
        return len(self.sites)

    @property
    def num_sectors(self) -> int:
        return len(self.sectors)

    @property
    def cell_radius(self) -> float:
        return self.isd / math.sqrt(3.0)

    def site_of_sector(self, sector_id: int) -> int:
        return self.sectors[sector_id].site

    def wrap_offsets(self) -> np.ndarray:
        """Translation vectors of the wraparound images (first row is zero)."""
        offsets = [(0.0, 0.0)]
        if self.wraparound:
            k = _RINGS[self.num_sites]
            # cluster translation in axial coordinates is (k + 1, k)
            base = np.array([(k + 1) + k / 2.0, k * math.sqrt(3.0) / 2.0]) * self.isd
            for i in range(6):
                a = math.radians(60.0 * i)
                rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
                offsets.append(tuple(rot @ base))
        return np.array(offsets, dtype=float)

    def site_vectors(self, points: np.ndarray) -> np.ndarray:
        """Vectors from every site (nearest wraparound image) to every point.

        Returns shape (num_sites, num_points, 2).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        images = self.sites[:, None, :] + self.wrap_offsets()[None, :, :]  # (S, W, 2)
        vec = points[None, None, :, :] - images[:, :, None, :]  # (S, W, P, 2)
        d2 = np.sum(vec ** 2, axis=-1)
        best = np.argmin(d2, axis=1)  # (S, P)
        s_idx = np.arange(len(self.sites))[:, None]
        p_idx = np.arange(points.shape[0])[None, :]
        return vec[s_idx, best, p_idx]

    def site_distance(self, i: int, j: int) -> float:
        v = self.site_vectors(self.sites[j:j + 1])[i, 0]
        return float(np.hypot(*v))


def _hex_sites(num_sites: int, isd: float) -> np.ndarray:
    rings = _RINGS[num_sites]
    coords = []
    for q in range(-rings, rings + 1):
        for r in range(-rings, rings + 1):
            if abs(q + r) <= rings:
                coords.append((q, r))
    pts = np.array([(isd * (q + r / 2.0), isd * r * math.sqrt(3.0) / 2.0) for q, r in coords])
    ring = np.array([max(abs(q), abs(r), abs(q + r)) for q, r in coords])
    ang = np.mod(np.degrees(np.arctan2(pts[:, 1], pts[:, 0])), 360.0)
    order = np.lexsort((np.round(ang, 9), ring))
    pts = pts[order]
    pts[np.abs(pts) < 1e-9] = 0.0
    return pts


def build_layout(num_sites: int = 19, isd: float = 500.0, wraparound: bool = False, *,
                 block_distance: float = 0.3, block_azimuth: float = 30.0,
                 apartment_size: float = 10.0, stripe_gap: float = 10.0) -> NetworkLayout:
    """Hexagonal grid of 3-sector sites, one apartment block per site.

    The block centroid is placed ``block_distance * isd`` from its site along
    ``block_azimuth`` degrees.
    """
    if num_sites not in _RINGS:
        raise ConfigError(f"num_sites must be one of 1, 7, 19 (got {num_sites})")
    if not isd > 0:
        raise ConfigError(f"isd must be positive (got {isd})")
    if wraparound and num_sites == 1:
        raise ConfigError("wraparound needs at least 7 sites")

    sites = _hex_sites(num_sites, isd)
    orientations = np.tile(np.array(SECTOR_BORESIGHTS), (num_sites, 1))
    blocks = []
    sectors = []
    for s, (sx, sy) in enumerate(sites):
        proto = ApartmentBlock(origin=(0.0, 0.0), apartment_size=apartment_size, stripe_gap=stripe_gap)
        a = math.radians(block_azimuth)
        cx = sx + block_distance * isd * math.cos(a)
        cy = sy + block_distance * isd * math.sin(a)
        blocks.append(dataclasses.replace(proto, origin=(cx - proto.width / 2, cy - proto.height / 2)))
        for b in orientations[s]:
            sectors.append(Node(id=len(sectors), kind=NodeKind.ENB_SECTOR, x=float(sx), y=float(sy),
                                max_tx_power=ENB_TX_POWER_DBM, antenna_gain=ENB_ANTENNA_GAIN_DBI,
                                site=s, boresight=float(b)))
    return NetworkLayout(sites=sites, sector_orientations=orientations, isd=float(isd),
                         apartment_blocks=blocks, wraparound=wraparound, sectors=sectors)


def strongest_sector(layout: NetworkLayout, points: np.ndarray) -> np.ndarray:
    """Sector with the largest mean received power (pathloss + antenna, no shadowing)."""
    from .channel import antenna_gain, pathloss_macro

    points = np.atleast_2d(np.asarray(points, dtype=float))
    vec = layout.site_vectors(points)  # (S, P, 2)
    dist_km = np.hypot(vec[..., 0], vec[..., 1]) / 1000.0
    pl = pathloss_macro(dist_km)
    ang = np.degrees(np.arctan2(vec[..., 1], vec[..., 0]))
    power = np.empty((layout.num_sectors, points.shape[0]))
    for sec in layout.sectors:
        power[sec.id] = antenna_gain(sec.boresight, ang[sec.site]) - pl[sec.site]
    # argmax returns the first maximum, i.e. the lowest sector id on ties
    return np.argmax(power, axis=0)


def _sample_sector_points(layout: NetworkLayout, per_sector: int, rng: np.random.Generator,
                          min_distance: float) -> np.ndarray:
    n = layout.num_sectors * per_sector
    if n == 0:
        return np.zeros((0, 2))
    r_max = layout.cell_radius
    u = rng.random(n)
    v = rng.random(n)
    radius = np.sqrt(u * (r_max ** 2 - min_distance ** 2) + min_distance ** 2)
    bores = np.repeat([s.boresight for s in layout.sectors], per_sector)
    centers = np.repeat([[s.x, s.y] for s in layout.sectors], per_sector, axis=0)
    theta = np.radians(bores + (v - 0.5) * 120.0)
    return centers + np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])


def place_ues(layout: NetworkLayout, per_sector: int, rng: np.random.Generator, *,
              first_id: Optional[int] = None, min_distance: float = 35.0) -> list[Node]:
    if per_sector < 0:
        raise ConfigError("per_sector must be >= 0")
    first_id = layout.num_sectors if first_id is None else first_id
    pts = _sample_sector_points(layout, per_sector, rng, min_distance)
    if len(pts) == 0:
        return []
    serving = strongest_sector(layout, pts)
    return [Node(id=first_id + i, kind=NodeKind.UE, x=float(p[0]), y=float(p[1]),
                 max_tx_power=MTCD_TX_POWER_DBM, antenna_gain=UE_ANTENNA_GAIN_DBI,
                 serving_sector=int(serving[i]))
            for i, p in enumerate(pts)]


def place_mtcds(layout: NetworkLayout, outdoor_per_sector: int, indoor_pairs_per_block: int,
                rng: np.random.Generator, *, first_id: Optional[int] = None,
                min_distance: float = 35.0) -> list[Node]:
    """Outdoor MTCDs uniform per sector, then indoor pairs sharing an apartment.

    Each indoor pair occupies its own apartment, drawn without replacement.
    """
    if outdoor_per_sector < 0 or indoor_pairs_per_block < 0:
        raise ConfigError("MTCD counts must be >= 0")
    for block in layout.apartment_blocks:
        if indoor_pairs_per_block > block.num_apartments:
            raise ConfigError(f"indoor_pairs_per_block={indoor_pairs_per_block} exceeds the "
                              f"{block.num_apartments} apartments of a block")
    next_id = layout.num_sectors if first_id is None else first_id
    nodes: list[Node] = []

    pts = _sample_sector_points(layout, outdoor_per_sector, rng, min_distance)
    if len(pts):
        serving = strongest_sector(layout, pts)
        for i, p in enumerate(pts):
            nodes.append(Node(id=next_id, kind=NodeKind.MTCD, x=float(p[0]), y=float(p[1]),
                              max_tx_power=MTCD_TX_POWER_DBM, antenna_gain=UE_ANTENNA_GAIN_DBI,
                              serving_sector=int(serving[i])))
            next_id += 1

    if indoor_pairs_per_block == 0:
        return nodes
    pair_pts = []
    for block in layout.apartment_blocks:
        corners = block.apartments()
        chosen = rng.choice(len(corners), size=indoor_pairs_per_block, replace=False)
        offsets = rng.random((indoor_pairs_per_block, 2, 2)) * block.apartment_size
        pair_pts.append(corners[chosen][:, None, :] + offsets)
    pair_pts = np.concatenate(pair_pts).reshape(-1, 2)
    serving = strongest_sector(layout, pair_pts)
    for i in range(0, len(pair_pts), 2):
        a, b = next_id, next_id + 1
        for j, (me, peer) in enumerate(((a, b), (b, a))):
            p = pair_pts[i + j]
            nodes.append(Node(id=me, kind=NodeKind.MTCD, x=float(p[0]), y=float(p[1]),
                              max_tx_power=MTCD_TX_POWER_DBM, antenna_gain=UE_ANTENNA_GAIN_DBI,
                              serving_sector=int(serving[i + j]), pair_peer=peer, indoor=True))
        next_id += 2
    return nodes


def place_mtcgs(layout: NetworkLayout, per_sector: int, rng: Optional[np.random.Generator] = None, *,
                first_id: Optional[int] = None, tx_power: float = MTCD_TX_POWER_DBM,
                antenna_gain: float = UE_ANTENNA_GAIN_DBI) -> list[Node]:
    """Gateways at the apartment-block centroid of each sector's site.

    Placement is deterministic; ``rng`` is accepted for interface symmetry.
    """
    if per_sector < 0:
        raise ConfigError("per_sector must be >= 0")
    next_id = layout.num_sectors if first_id is None else first_id
    nodes = []
    for sec in layout.sectors:
        cx, cy = layout.apartment_blocks[sec.site].centroid
        for _ in range(per_sector):
            nodes.append(Node(id=next_id, kind=NodeKind.MTCG, x=cx, y=cy, max_tx_power=tx_power,
                              antenna_gain=antenna_gain, serving_sector=sec.id))
            next_id += 1
    return nodes


def apply_duty_cycle(nodes: Iterable[Node], duty: float, rng: np.random.Generator) -> list[Node]:
    """Independently activate each MTCD (or each MTCD pair) with probability ``duty``."""
    if not 0.0 <= duty <= 1.0:
        raise ConfigError(f"duty must be in [0, 1] (got {duty})")
    nodes = list(nodes)
    units: list[list[int]] = []
    seen: dict[int, int] = {}
    for idx, n in enumerate(nodes):
        if n.kind is not NodeKind.MTCD:
            continue
        if n.pair_peer is not None and n.pair_peer in seen:
            units[seen[n.pair_peer]].append(idx)
            continue
        seen[n.id] = len(units)
        units.append([idx])
    draws = rng.random(len(units))
    out = list(nodes)
    for unit, u in zip(units, draws):
        on = bool(u < duty)
        for idx in unit:
            out[idx] = dataclasses.replace(nodes[idx], active=on)
    return out


def write_node_roster(path: Path | str, nodes: Iterable[Node]) -> None:
    """One node per line: id, kind, x, y, sector, peer."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "kind", "x", "y", "sector", "peer"])
        for n in nodes:
            sector = n.id if n.kind is NodeKind.ENB_SECTOR else n.serving_sector
            w.writerow([n.id, n.kind.value, repr(n.x), repr(n.y),
                        "" if sector is None else sector,
                        "" if n.pair_peer is None else n.pair_peer])
