"""Incremental Gilbert graph for a single trial.

Points are inserted one at a time; two points are adjacent iff their Euclidean
distance is at most 1.  All five hereditary statistics are kept current so the
event check after each insertion is O(1).
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

from .core import Window


class EventKind(str, enum.Enum):
    EDGE_COUNT = "edge_count"
    MAX_DEGREE = "max_degree"
    MAX_COMPONENT = "max_component"
    MAX_CLIQUE = "max_clique"
    TRIANGLE_COUNT = "triangle_count"

    @classmethod
    def parse(cls, text: str) -> "EventKind":
        key = text.strip().lower().replace("-", "_")
        aliases = {"ec": "edge_count", "md": "max_degree", "mcc": "max_component",
                   "mcs": "max_clique", "ntg": "triangle_count", "edges": "edge_count",
                   "degree": "max_degree", "component": "max_component",
                   "clique": "max_clique", "triangles": "triangle_count"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class EventSpec:
    """Hereditary event ``A``.

    EdgeCount, MaxDegree and TriangleCount require their statistic to be at
    most ``ell``; MaxComponent and MaxClique allow sizes up to ``ell + 1``.
    """

    kind: EventKind
    ell: int

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if int(self.ell) != self.ell or self.ell < 0:
            raise ValueError(f"threshold must be a nonnegative integer, got {self.ell!r}")

    @property
    def limit(self) -> int:
        if self.kind in (EventKind.MAX_COMPONENT, EventKind.MAX_CLIQUE):
            return self.ell + 1
        return self.ell

    def holds(self, value: int) -> bool:
        return value <= self.limit


class UpdateSummary(NamedTuple):
    index: int
    new_edges: int
    still_in_A: bool


def _cliques_within(candidates: set, adj: list) -> list:
    """Maximal cliques of the subgraph induced on ``candidates`` (Tomita pivoting)."""
    out = []

    def expand(r, p, x):
        if not p and not x:
            out.append(r)
            return
        pivot = max(p | x, key=lambda u: len(p & adj[u]))
        for v in list(p - adj[pivot]):
            nv = adj[v]
            expand(r + [v], p & nv, x & nv)
            p.discard(v)
            x.add(v)

    expand([], set(candidates), set())
    return out


class GraphState:
    """Mutable per-trial graph with running statistics."""

    def __init__(self, spec: EventSpec, window: Window | None = None):
        self.spec = spec
        self.window = window
        self.points: list[tuple[float, ...]] = []
        self.adjacency: list[list[int]] = []
        self._adj: list[set[int]] = []
        self.degrees: list[int] = []
        self.edge_count = 0
        self.triangle_count = 0
        self.max_degree = 0
        self.max_component = 0
        self.max_clique = 0
        self._parent: list[int] = []
        self._size: list[int] = []
        self.clique_watch: list[tuple[int, ...]] = []
        self.in_A = True
        self._buckets: dict = {}
        self._stencil = None

    # union-find -------------------------------------------------------
    def find(self, i: int) -> int:
        parent = self._parent
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def _union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]
        return ra

    def component_size(self, i: int) -> int:
        return self._size[self.find(i)]

    def component_members(self, i: int) -> list[int]:
        seen = {i}
        stack = [i]
        while stack:
            u = stack.pop()
            for v in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return sorted(seen)

    # neighbor search ----------------------------------------------------
    def neighbors_of(self, p) -> list[int]:
        """Indices of stored points within unit distance of ``p``."""
        if self._stencil is None:
            self._stencil = list(itertools.product((-1, 0, 1), repeat=len(p)))
        base = [math.floor(x) for x in p]
        pts = self.points
        found = []
        get = self._buckets.get
        dist = math.dist
        if len(base) == 2:
            b0, b1 = base
            for o0, o1 in self._stencil:
                bucket = get((b0 + o0, b1 + o1))
                if bucket:
                    for j in bucket:
                        if dist(p, pts[j]) <= 1.0:
                            found.append(j)
        else:
            for off in self._stencil:
                bucket = get(tuple(b + o for b, o in zip(base, off)))
                if bucket:
                    for j in bucket:
                        if dist(p, pts[j]) <= 1.0:
                            found.append(j)
        return found

    # insertion -----------------------------------------------------------
    def add_point(self, p) -> UpdateSummary:
        p = tuple(float(x) for x in p)
        if self.window is not None and not self.window.contains(p):
            raise ValueError(f"point {p} lies outside {self.window}")
        nbrs = self.neighbors_of(p)
        i = len(self.points)
        nset = set(nbrs)
        adj = self._adj

        # Triangles closed by i are the edges already present inside N(i).
        if len(nbrs) > 1:
            self.triangle_count += sum(len(adj[j] & nset) for j in nbrs) // 2

        clique_nbhd = None
        track_cliques = self.spec.kind is EventKind.MAX_CLIQUE and self.in_A
        if track_cliques or len(nbrs) + 1 > self.max_clique:
            clique_nbhd = _cliques_within(nset, adj) if nbrs else [[]]

        self.points.append(p)
        self.adjacency.append(nbrs)
        adj.append(nset)
        self.degrees.append(len(nbrs))
        self._parent.append(i)
        self._size.append(1)
        key = tuple(math.floor(x) for x in p)
        self._buckets.setdefault(key, []).append(i)

        degrees = self.degrees
        md = max(self.max_degree, len(nbrs))
        for j in nbrs:
            self.adjacency[j].append(i)
            adj[j].add(i)
            degrees[j] += 1
            if degrees[j] > md:
                md = degrees[j]
            self._union(i, j)
        self.max_degree = md
        self.edge_count += len(nbrs)
        self.max_component = max(self.max_component, self.component_size(i))

        if clique_nbhd is not None:
            largest = max(len(c) for c in clique_nbhd) + 1
            if largest > self.max_clique:
                self.max_clique = largest
            if track_cliques and largest <= self.spec.ell + 1:
                # Inside A, every ell-clique of N(i) is maximal there.
                ell = self.spec.ell
                for c in clique_nbhd:
                    if len(c) == ell:
                        self.clique_watch.append(tuple(sorted(c)) + (i,))

        was_in = self.in_A
        self.in_A = was_in and self.spec.holds(self.statistic(self.spec.kind))
        return UpdateSummary(i, len(nbrs), self.in_A)

    def statistic(self, kind: EventKind) -> int:
        kind = EventKind(kind)
        if kind is EventKind.EDGE_COUNT:
            return self.edge_count
        if kind is EventKind.MAX_DEGREE:
            return self.max_degree
        if kind is EventKind.MAX_COMPONENT:
            return self.max_component
        if kind is EventKind.MAX_CLIQUE:
            return self.max_clique
        return self.triangle_count

    def __len__(self):
        return len(self.points)

    def copy(self) -> "GraphState":
        new = GraphState.__new__(GraphState)
        new.spec = self.spec
        new.window = self.window
        new.points = list(self.points)
        new.adjacency = [list(a) for a in self.adjacency]
        new._adj = [set(a) for a in self._adj]
        new.degrees = list(self.degrees)
        new.edge_count = self.edge_count
        new.triangle_count = self.triangle_count
        new.max_degree = self.max_degree
        new.max_component = self.max_component
        new.max_clique = self.max_clique
        new._parent = list(self._parent)
        new._size = list(self._size)
        new.clique_watch = list(self.clique_watch)
        new.in_A = self.in_A
        new._buckets = {k: list(v) for k, v in self._buckets.items()}
        new._stencil = self._stencil
        return new


def new_state(spec: EventSpec, window: Window | None = None) -> GraphState:
    return GraphState(spec, window)


def add_point(state: GraphState, p) -> UpdateSummary:
    return state.add_point(p)


def statistic(state: GraphState, kind: EventKind) -> int:
    return state.statistic(kind)
