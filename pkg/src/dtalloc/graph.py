"""Weighted graphs, switching schedules, Laplacians and spectra.

A :class:`WeightedGraph` is immutable.  Undirected graphs keep each
unordered pair once (``i < j``); directed graphs keep arcs ``(i, j, w)``
meaning agent ``i`` transmits to agent ``j`` with weight ``w``, so that
``i`` is an in-neighbour of ``j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DirectedUnbalanced, InvalidRange

__all__ = [
    "WeightedGraph",
    "NetworkSchedule",
    "SpectralSummary",
    "laplacian",
    "spectral_summary",
    "union_graph",
    "schedule_spectrum",
    "check_uniform_connectivity",
    "is_connected",
    "is_weight_balanced",
    "generate_erdos_renyi",
    "connected_erdos_renyi",
    "cycle_graph",
    "complete_graph",
    "path_graph",
    "alternating_matchings",
    "random_switching_schedule",
    "normalize_max_degree",
    "read_graph",
    "write_graph",
    "format_graph",
    "parse_graph",
]

ZERO_EIG = 1e-8


@dataclass(frozen=True)
class WeightedGraph:
    n: int
    edges: tuple[tuple[int, int, float], ...] = ()
    directed: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise InvalidRange(f"graph needs at least one node, got n={self.n}")
        merged: dict[tuple[int, int], float] = {}
        for i, j, w in self.edges:
            i, j, w = int(i), int(j), float(w)
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise InvalidRange(f"edge ({i}, {j}) out of range for n={self.n}")
            if i == j:
                raise InvalidRange(f"self-loop at node {i}")
            if not (w > 0 and math.isfinite(w)):
                raise InvalidRange(f"edge ({i}, {j}) has non-positive weight {w}")
            key = (i, j) if self.directed else (min(i, j), max(i, j))
            if key in merged and merged[key] != w:
                raise InvalidRange(
                    f"edge {key} listed twice with different weights "
                    f"{merged[key]} and {w}"
                    + ("" if self.directed else " (undirected weights must be symmetric)")
                )
            merged[key] = w
        object.__setattr__(
            self, "edges", tuple((i, j, w) for (i, j), w in sorted(merged.items()))
        )

    @cached_property
    def src(self) -> np.ndarray:
        return np.array([e[0] for e in self.edges], dtype=np.intp)

    @cached_property
    def dst(self) -> np.ndarray:
        return np.array([e[1] for e in self.edges], dtype=np.intp)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([e[2] for e in self.edges], dtype=float)

    @cached_property
    def neighbors(self) -> dict[int, list[tuple[int, float]]]:
        """In-neighbour lists ``{i: [(j, W_ij), ...]}`` sorted by ``j``."""
        adj: dict[int, list[tuple[int, float]]] = {i: [] for i in range(self.n)}
        for i, j, w in self.edges:
            adj[j].append((i, w))
            if not self.directed:
                adj[i].append((j, w))
        for lst in adj.values():
            lst.sort()
        return adj

    def weight_matrix(self) -> np.ndarray:
        """Dense ``W`` with ``W[i, j]`` the weight of the link ``j -> i``."""
        W = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            W[j, i] = w
            if not self.directed:
                W[i, j] = w
        return W

    def weighted_degree(self) -> np.ndarray:
        return self.weight_matrix().sum(axis=1)

    def scaled(self, factor: float) -> WeightedGraph:
        return WeightedGraph(self.n, tuple((i, j, w * factor) for i, j, w in self.edges), self.directed)

    @property
    def num_edges(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class SpectralSummary:
    lambda2: float
    lambdaN: float


@dataclass(frozen=True)
class NetworkSchedule:
    """Cyclic sequence of ``(duration_steps, graph)`` snapshots."""

    snapshots: tuple[tuple[int, WeightedGraph], ...]
    window_B: int = 1

    def __post_init__(self):
        snaps = tuple((int(d), g) for d, g in self.snapshots)
        if not snaps:
            raise InvalidRange("schedule needs at least one snapshot")
        if any(d < 1 for d, _ in snaps):
            raise InvalidRange("snapshot durations must be positive integers")
        if len({g.n for _, g in snaps}) != 1:
            raise InvalidRange("all snapshots must share the same node count")
        if self.window_B < 1:
            raise InvalidRange("window_B must be a positive integer")
        object.__setattr__(self, "snapshots", snaps)

    @classmethod
    def static(cls, graph: WeightedGraph) -> NetworkSchedule:
        return cls(((1, graph),), 1)

    @property
    def n(self) -> int:
        return self.snapshots[0][1].n

    @property
    def period(self) -> int:
        return sum(d for d, _ in self.snapshots)

    @property
    def is_static(self) -> bool:
        return len(self.snapshots) == 1

    @cached_property
    def _bounds(self) -> np.ndarray:
        return np.cumsum([d for d, _ in self.snapshots])

    def index_at(self, k: int) -> int:
        return int(np.searchsorted(self._bounds, k % self.period, side="right"))

    def graph_at(self, k: int) -> WeightedGraph:
        """Snapshot active at step ``k`` (0-based, wraps around)."""
        return self.snapshots[self.index_at(k)][1]

    @property
    def min_duration(self) -> int:
        return min(d for d, _ in self.snapshots)


def laplacian(g: WeightedGraph) -> np.ndarray:
    """``L = diag(W 1) - W`` using in-neighbour weights."""
    W = g.weight_matrix()
    return np.diag(W.sum(axis=1)) - W


def _symmetric_laplacian(g: WeightedGraph) -> np.ndarray:
    L = laplacian(g)
    if g.directed:
        if not is_weight_balanced(g):
            raise DirectedUnbalanced("directed graph is not weight-balanced")
        L = 0.5 * (L + L.T)
    return L


def spectral_summary(g: WeightedGraph) -> SpectralSummary:
    """Fiedler value and largest Laplacian eigenvalue.

    Directed graphs must be weight-balanced and are handled through the
    symmetric part ``(L + L^T) / 2``.  A disconnected graph has
    ``lambda2 == 0``.
    """
    L = _symmetric_laplacian(g)
    eig = np.linalg.eigvalsh(L)
    lam_n = max(float(eig[-1]), 0.0)
    if not is_connected(g):
        return SpectralSummary(0.0, lam_n)
    nonzero = eig[eig > ZERO_EIG]
    lam2 = float(nonzero[0]) if nonzero.size else 0.0
    return SpectralSummary(lam2, lam_n)


def union_graph(graphs: Iterable[WeightedGraph]) -> WeightedGraph:
    """Edge union; a link present in several graphs keeps its largest weight."""
    graphs = list(graphs)
    n, directed = graphs[0].n, graphs[0].directed
    merged: dict[tuple[int, int], float] = {}
    for g in graphs:
        for i, j, w in g.edges:
            merged[(i, j)] = max(w, merged.get((i, j), 0.0))
    return WeightedGraph(n, tuple((i, j, w) for (i, j), w in merged.items()), directed)


def _window_sets(s: NetworkSchedule, B: int) -> list[tuple[int, frozenset[int]]]:
    """Distinct sets of snapshot indices covered by ``[t, t+B)`` over one period."""
    out, seen = [], set()
    for t in range(s.period):
        covered = frozenset(s.index_at(k) for k in range(t, t + B))
        if covered not in seen:
            seen.add(covered)
            out.append((t, covered))
    return out


def schedule_spectrum(s: NetworkSchedule, mode: str = "union") -> SpectralSummary:
    """Spectrum used for step-size bounds on a schedule.

    ``mode="union"`` takes the union graph of every window of ``window_B``
    steps and reports the smallest Fiedler value and largest top eigenvalue
    across windows.  ``mode="snapshot"`` does the same over individual
    snapshots.
    """
    if mode == "union":
        graphs = [union_graph(s.snapshots[i][1] for i in sorted(c)) for _, c in _window_sets(s, s.window_B)]
    elif mode == "snapshot":
        graphs = [g for _, g in s.snapshots]
    else:
        raise ValueError(f"unknown spectrum mode {mode!r}")
    sums = [spectral_summary(g) for g in graphs]
    return SpectralSummary(min(x.lambda2 for x in sums), max(x.lambdaN for x in sums))


def _find(parent: list[int], a: int) -> int:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def _connected_edges(n: int, pairs: Iterable[tuple[int, int]]) -> bool:
    parent = list(range(n))
    comps = n
    for i, j in pairs:
        ri, rj = _find(parent, i), _find(parent, j)
        if ri != rj:
            parent[ri] = rj
            comps -= 1
    return comps == 1


def is_connected(g: WeightedGraph) -> bool:
    """Weak connectivity via union-find."""
    return _connected_edges(g.n, ((i, j) for i, j, _ in g.edges))


def check_uniform_connectivity(s: NetworkSchedule) -> tuple[bool, int | None]:
    """Whether every window of ``window_B`` steps has a connected edge union.

    Returns ``(True, None)`` or ``(False, t)`` with ``t`` the first failing
    window start within one period.
    """
    for t, covered in _window_sets(s, s.window_B):
        pairs = ((i, j) for c in covered for i, j, _ in s.snapshots[c][1].edges)
        if not _connected_edges(s.n, pairs):
            return False, t
    return True, None


def is_weight_balanced(g: WeightedGraph, rtol: float = 1e-12) -> bool:
    in_w = np.zeros(g.n)
    out_w = np.zeros(g.n)
    for i, j, w in g.edges:
        out_w[i] += w
        in_w[j] += w
        if not g.directed:
            out_w[j] += w
            in_w[i] += w
    scale = np.maximum(np.maximum(in_w, out_w), 1e-300)
    return bool(np.all(np.abs(in_w - out_w) <= rtol * scale))


def generate_erdos_renyi(
    n: int, p: float, weight_range: tuple[float, float], seed: int
) -> WeightedGraph:
    """Undirected G(n, p) with symmetric weights drawn from ``U[lo, hi]``."""
    lo, hi = weight_range
    if not (0 < lo <= hi):
        raise InvalidRange(f"weight range must satisfy 0 < lo <= hi, got {weight_range}")
    if not (0 < p <= 1):
        raise InvalidRange(f"link probability must lie in (0, 1], got {p}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    w = rng.uniform(lo, hi, size=iu.size)
    edges = tuple((int(i), int(j), float(x)) for i, j, x in zip(iu[keep], ju[keep], w[keep]))
    return WeightedGraph(n, edges)


def connected_erdos_renyi(
    n: int, p: float, weight_range: tuple[float, float], seed: int, max_tries: int = 1000
) -> WeightedGraph:
    """First connected draw of :func:`generate_erdos_renyi` over seeds ``seed, seed+1, ...``."""
    for t in range(max_tries):
        g = generate_erdos_renyi(n, p, weight_range, seed + t)
        if is_connected(g):
            return g
    raise InvalidRange(f"no connected G({n}, {p}) within {max_tries} draws")


def cycle_graph(n: int, weight: float = 1.0) -> WeightedGraph:
    return WeightedGraph(n, tuple((i, (i + 1) % n, weight) for i in range(n)))


def path_graph(n: int, weight: float = 1.0) -> WeightedGraph:
    return WeightedGraph(n, tuple((i, i + 1, weight) for i in range(n - 1)))


def complete_graph(n: int, weight: float = 1.0) -> WeightedGraph:
    return WeightedGraph(n, tuple((i, j, weight) for i in range(n) for j in range(i + 1, n)))


def alternating_matchings(n: int, duration: int = 1, weight: float = 1.0) -> NetworkSchedule:
    """Two perfect matchings on an even cycle; each alone is disconnected for n > 2.

    Their union is the cycle, so the schedule is uniformly connected with
    ``B = 2 * duration``.
    """
    if n % 2 or n < 2:
        raise InvalidRange("alternating matchings need an even n >= 2")
    even = WeightedGraph(n, tuple((i, i + 1, weight) for i in range(0, n, 2)))
    odd = WeightedGraph(n, tuple((i, (i + 1) % n, weight) for i in range(1, n, 2)))
    return NetworkSchedule(((duration, even), (duration, odd)), window_B=2 * duration)


def random_switching_schedule(
    n: int,
    num_snapshots: int,
    duration: int,
    p: float,
    weight_range: tuple[float, float],
    seed: int,
) -> NetworkSchedule:
    """Random schedule that is disconnected at every snapshot but whose union is connected.

    A connected Erdos-Renyi graph is drawn and its edges are dealt at random
    into ``num_snapshots`` groups.  Any window of ``num_snapshots * duration``
    steps covers every group, so that is the reported ``window_B``.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        base = connected_erdos_renyi(n, p, weight_range, int(rng.integers(2**31)))
        label = rng.integers(num_snapshots, size=base.num_edges)
        groups = [
            WeightedGraph(n, tuple(e for e, l in zip(base.edges, label) if l == s))
            for s in range(num_snapshots)
        ]
        if not any(is_connected(g) for g in groups):
            return NetworkSchedule(
                tuple((duration, g) for g in groups), window_B=num_snapshots * duration
            )
    raise InvalidRange("could not build a schedule with disconnected snapshots")


def normalize_max_degree(g: WeightedGraph, target: float = 1.0) -> WeightedGraph:
    """Scale all weights so the largest weighted degree equals ``target``."""
    top = float(g.weighted_degree().max()) if g.edges else 0.0
    return g if top == 0 else g.scaled(target / top)


def format_graph(g: WeightedGraph) -> str:
    lines = [f"n {g.n} directed {int(g.directed)}"]
    lines += [f"{i} {j} {w!r}" for i, j, w in g.edges]
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> WeightedGraph:
    """Parse the ``n <count> directed <0|1>`` + ``i j w`` line format.

    Blank lines and ``#`` comments are ignored.
    """
    rows = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
    rows = [r for r in rows if r]
    if not rows or len(rows[0]) != 4 or rows[0][0] != "n" or rows[0][2] != "directed":
        raise InvalidRange("graph header must read 'n <count> directed <0|1>'")
    n, directed = int(rows[0][1]), rows[0][3] == "1"
    edges = []
    for r in rows[1:]:
        if len(r) != 3:
            raise InvalidRange(f"bad edge line {' '.join(r)!r}")
        edges.append((int(r[0]), int(r[1]), float(r[2])))
    return WeightedGraph(n, tuple(edges), directed)


def read_graph(path: str | Path) -> WeightedGraph:
    return parse_graph(Path(path).read_text())


def write_graph(g: WeightedGraph, path: str | Path) -> None:
    Path(path).write_text(format_graph(g))
