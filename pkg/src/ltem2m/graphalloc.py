"""Distributed interference-graph colouring for device-to-device pairs."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class InterferenceGraph:
    vertices: tuple[int, ...]  # pair ids (transmitter node ids)
    edges: frozenset[tuple[int, int]]  # vertex index pairs (i < j)
    gain_threshold_db: float = 30.0

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.vertices]
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbors()], dtype=int)

    def edge_set(self) -> set[frozenset[int]]:
        """Edges expressed on pair ids, independent of vertex order."""
        return {frozenset((self.vertices[i], self.vertices[j])) for i, j in self.edges}

    def write_adjacency(self, path: Path | str) -> None:
        adj = self.neighbors()
        with open(path, "w") as fh:
            for i, v in enumerate(self.vertices):
                fh.write(" ".join([str(v)] + [str(self.vertices[j]) for j in adj[i]]) + "\n")


def graph_from_edges(num_vertices: int, edges, threshold_db: float = 30.0) -> InterferenceGraph:
    norm = frozenset((min(i, j), max(i, j)) for i, j in edges if i != j)
    return InterferenceGraph(tuple(range(num_vertices)), norm, threshold_db)


def build_interference_graph(pairs: Sequence[tuple[int, int]], gain_db: np.ndarray,
                             threshold_db: float = 30.0) -> InterferenceGraph:
    """Edge between two pairs when either cross link comes within ``threshold_db``
    of the victim's serving link.

    ``pairs`` lists (tx, rx) node ids; ``gain_db[a, b]`` is the gain from the
    transmitter of pair ``a`` to the receiver of pair ``b``.
    """
    n = len(pairs)
    gain_db = np.asarray(gain_db, dtype=float).reshape(n, n)
    serving = np.diag(gain_db)
    # margin[a, b]: serving gain of victim b minus interference from a
    margin = serving[None, :] - gain_db
    close = margin < threshold_db
    close = close | close.T
    edges = frozenset((i, j) for i in range(n) for j in range(i + 1, n) if close[i, j])
    return InterferenceGraph(tuple(p[0] for p in pairs), edges, threshold_db)


@dataclass
class ColoringState:
    held: np.ndarray  # bool (num_vertices, num_colors)
    activation_prob: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def num_colors(self) -> int:
        return self.held.shape[1]

    def colors_of(self, v: int) -> set[int]:
        return set(np.flatnonzero(self.held[v]).tolist())

    def copy(self) -> "ColoringState":
        return ColoringState(self.held.copy(), self.activation_prob.copy())


def conflict_counts(graph: InterferenceGraph, state: ColoringState) -> tuple[int, int]:
    """(edge-colour incidences, edges sharing at least one colour)."""
    incid = 0
    edges = 0
    for i, j in graph.edges:
        shared = int(np.count_nonzero(state.held[i] & state.held[j]))
        incid += shared
        edges += shared > 0
    return incid, edges


def _neighbor_color_counts(state: ColoringState, adj: list[int]) -> np.ndarray:
    if not adj:
        return np.zeros(state.num_colors, dtype=int)
    return state.held[adj].sum(axis=0)


def local_color_step(vertex: int, state: ColoringState, rng: np.random.Generator,
                     neighbors: Optional[list[list[int]]] = None,
                     graph: Optional[InterferenceGraph] = None) -> np.ndarray:
    """Re-choose the vertex's colours to minimise conflicts with its neighbours.

    Slots are filled from the least-conflicted colours upwards with ties broken
    at random. A vertex whose held colours are all conflict-free keeps them.
    Returns the new boolean colour row.
    """
    if neighbors is None:
        neighbors = graph.neighbors()
    counts = _neighbor_color_counts(state, neighbors[vertex])
    row = state.held[vertex]
    k = int(row.sum())
    if k == 0 or not counts[row].any():
        return row.copy()
    new = np.zeros_like(row)
    remaining = k
    for level in np.unique(counts):
        cands = np.flatnonzero(counts == level)
        pick = rng.permutation(cands)[:remaining]
        new[pick] = True
        remaining -= len(pick)
        if remaining == 0:
            break
    return new


def can_improve(vertex: int, state: ColoringState, neighbors: list[list[int]]) -> bool:
    """True when a conflicted vertex has an unheld colour no worse than a held one."""
    counts = _neighbor_color_counts(state, neighbors[vertex])
    row = state.held[vertex]
    if not row.any() or not counts[row].any() or row.all():
        return False
    return bool(counts[~row].min() <= counts[row].max())


def activation_probability(degree: int, max_degree: int, held: int, num_colors: int, p0: float) -> float:
    return p0 * (1.0 - degree / (max_degree + 1.0)) * (1.0 - held / num_colors)


def maybe_activate_extra_channel(vertex: int, state: ColoringState, rng: np.random.Generator,
                                 neighbors: list[list[int]], max_degree: int, p0: float) -> np.ndarray:
    """Possibly acquire one more colour, the least conflicted one not yet held."""
    row = state.held[vertex].copy()
    held = int(row.sum())
    c = state.num_colors
    if held >= c:
        return row
    p = activation_probability(len(neighbors[vertex]), max_degree, held, c, p0)
    if not rng.random() < p:
        return row
    counts = _neighbor_color_counts(state, neighbors[vertex]).astype(float)
    counts[row] = np.inf
    cands = np.flatnonzero(counts == counts.min())
    row[rng.choice(cands)] = True
    return row


@dataclass
class ColoringResult:
    state: ColoringState
    conflicts: int  # edge-colour incidences of the final state
    conflicting_edges: int
    trace: list[int]  # incidences after each round's recolouring phase
    rounds: int

    @property
    def best_conflicts(self) -> int:
        return min(self.trace) if self.trace else self.conflicts


def initial_coloring(num_vertices: int, num_colors: int, rng: np.random.Generator) -> ColoringState:
    held = np.zeros((num_vertices, num_colors), dtype=bool)
    if num_colors:
        held[np.arange(num_vertices), rng.integers(0, num_colors, size=num_vertices)] = True
    return ColoringState(held, np.zeros(num_vertices))


def run_distributed_coloring(graph: InterferenceGraph, num_colors: int, iterations: int,
                             rng: np.random.Generator, p0: float = 0.5) -> ColoringResult:
    """Synchronous min-conflict colouring with probabilistic extra channels.

    Each round every vertex reads the previous round's published colours.
    Only vertices with an equal-or-better alternative recolour, and of two
    such neighbours sharing a colour only the one with the larger fresh random
    priority moves, which rules out lock-step oscillation.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n = graph.num_vertices
    state = initial_coloring(n, num_colors, rng)
    if n == 0 or num_colors == 0:
        return ColoringResult(state, 0, 0, [0], 0)
    adj = graph.neighbors()
    max_deg = max((len(a) for a in adj), default=0)
    trace = []
    rounds = 0
    for _ in range(iterations):
        rounds += 1
        snapshot = state.copy()
        changed = False
        new_held = snapshot.held.copy()
        unsettled = [can_improve(v, snapshot, adj) for v in range(n)]
        priority = rng.random(n)
        for v in range(n):
            if not unsettled[v]:
                continue
            changed = True
            rivals = [u for u in adj[v] if unsettled[u] and (snapshot.held[u] & snapshot.held[v]).any()]
            if all(priority[v] > priority[u] for u in rivals):
                new_held[v] = local_color_step(v, snapshot, rng, adj)
        state.held = new_held
        trace.append(conflict_counts(graph, state)[0])
        if p0 > 0:
            published = state.copy()
            grown = published.held.copy()
            for v in range(n):
                row = maybe_activate_extra_channel(v, published, rng, adj, max_deg, p0)
                if row.sum() != published.held[v].sum():
                    grown[v] = row
                    changed = True
            state.held = grown
        state.activation_prob = np.array([
            activation_probability(len(adj[v]), max_deg, int(state.held[v].sum()), num_colors, p0)
            for v in range(n)])
        if not changed:
            break
    incid, edges = conflict_counts(graph, state)
    return ColoringResult(state, incid, edges, trace, rounds)


def full_reuse_assign(pairs: Sequence, num_colors: int) -> ColoringState:
    n = len(pairs)
    return ColoringState(np.ones((n, num_colors), dtype=bool), np.zeros(n))


def write_conflict_trace(path: Path | str, trace: Sequence[int]) -> None:
    with open(path, "w") as fh:
        fh.write("round,conflicts\n")
        for r, c in enumerate(trace, start=1):
            fh.write(f"{r},{c}\n")
