"""Grid inner approximation of blocking regions.

The window is cut into ``K^d`` equal cells.  A cell is blocked once any point
placed in it is certain to push the configuration out of the event, so the
importance sampler only ever draws from the free cells.
"""

from __future__ import annotations

import functools
import itertools
import math
import warnings

import numpy as np

from .core import RngStream, Window
from .graph import EventKind, EventSpec, GraphState


def cells_are_neighbors(delta, h: float, d: int | None = None) -> bool:
    """True iff two cells at index offset ``delta`` have sup-distance at most 1."""
    if not h > 0:
        raise ValueError("cell edge must be positive")
    if d is not None and len(delta) != d:
        raise ValueError("offset length does not match dimension")
    return h * math.sqrt(sum((abs(x) + 1) ** 2 for x in delta)) <= 1.0


@functools.lru_cache(maxsize=64)
def neighbor_offsets(h: float, d: int) -> np.ndarray:
    """All index offsets (including zero, when allowed) of neighboring cells."""
    reach = max(int(math.floor(1.0 / h)), 0)
    rng = range(-reach, reach + 1)
    offs = [delta for delta in itertools.product(rng, repeat=d) if cells_are_neighbors(delta, h)]
    arr = np.array(offs, dtype=np.int64).reshape(-1, d)
    arr.flags.writeable = False
    return arr


def cell_of(p, h: float, K: int) -> tuple[int, ...]:
    return tuple(min(int(math.floor(x / h)), K - 1) for x in p)


class GridBlocker:
    """Per-trial blocking state on a ``K^d`` grid.

    ``free`` holds the unblocked cell ids densely in ``free[:n_free]`` and
    ``pos`` maps a cell id back to its slot, so blocking and uniform sampling
    are both O(1) per cell.  Blocking is monotone within a trial.
    """

    def __init__(self, w: Window, K: int, spec: EventSpec):
        if int(K) != K or K < 1:
            raise ValueError(f"K must be a positive integer, got {K!r}")
        self.window = w
        self.K = int(K)
        self.d = w.d
        self.h = w.lam / self.K
        self.spec = spec
        if self.h > 0.5:
            warnings.warn(f"cell edge {self.h:g} > 0.5: grid blocking is degenerate", stacklevel=3)
        self.n_cells = self.K ** self.d
        self.strides = np.array([self.K ** (self.d - 1 - j) for j in range(self.d)], dtype=np.int64)
        self._stride_list = self.strides.tolist()
        self.offsets = neighbor_offsets(self.h, self.d)
        self.flat_offsets = self.offsets @ self.strides
        self.reach = int(np.max(np.abs(self.offsets))) if len(self.offsets) else 0
        side = 2 * self.reach + 1
        self._offset_mask = np.zeros((side,) * self.d, dtype=bool)
        if len(self.offsets):
            self._offset_mask[tuple((self.offsets + self.reach).T)] = True
        self.order = np.zeros(self.n_cells, dtype=np.int32)
        self.blocked = np.zeros(self.n_cells, dtype=bool)
        self._arange = np.arange(self.n_cells, dtype=np.int64)
        self.free = self._arange.copy()
        self.pos = self._arange.copy()
        self.fault_rng: np.random.Generator | None = None
        self.reset()

    def reset(self):
        self.order.fill(0)
        self.blocked.fill(False)
        self.free[:] = self._arange
        self.pos[:] = self._arange
        self.n_free = self.n_cells
        self.point_cells: list[tuple[int, ...]] = []
        self.blocked_volume_trace: list[float] = []
        self._last_ec = 0
        self._degree_done: set[int] = set()
        self._watch_cursor = 0
        self._triangles_active = False

    # geometry -------------------------------------------------------------
    @property
    def n_blocked(self) -> int:
        return self.n_cells - self.n_free

    @property
    def blocked_volume(self) -> float:
        return self.n_blocked * self.h ** self.d

    def cell_of(self, p) -> tuple[int, ...]:
        return cell_of(p, self.h, self.K)

    def flat_index(self, cell) -> int:
        return int(np.dot(cell, self.strides))

    def unflatten(self, flat: int) -> tuple[int, ...]:
        out = []
        for s in self.strides:
            q, flat = divmod(flat, int(s))
            out.append(q)
        return tuple(out)

    def _neighbor_coords(self, cell) -> np.ndarray:
        coords = np.asarray(cell, dtype=np.int64) + self.offsets
        inside = np.all((coords >= 0) & (coords < self.K), axis=1)
        return coords[inside]

    def neighbor_cells(self, cell) -> np.ndarray:
        """Flat ids of every cell ``C'`` with ``C' ~ cell``."""
        lo, hi = self.reach, self.K - self.reach
        if all(lo <= x < hi for x in cell):
            flat = 0
            for x, s in zip(cell, self._stride_list):
                flat += x * s
            return flat + self.flat_offsets
        return self._neighbor_coords(cell) @ self.strides

    def common_neighbor_cells(self, cells) -> np.ndarray:
        """Flat ids of the cells that neighbor every cell in ``cells``."""
        coords = self._neighbor_coords(cells[0])
        for other in cells[1:]:
            delta = coords - np.asarray(other, dtype=np.int64)
            ok = np.all(np.abs(delta) <= self.reach, axis=1)
            coords = coords[ok]
            delta = delta[ok] + self.reach
            coords = coords[self._offset_mask[tuple(delta.T)]]
            if not len(coords):
                break
        return coords @ self.strides

    # blocking ---------------------------------------------------------------
    def block(self, cells) -> int:
        """Block the given (distinct) flat cell ids; returns how many were newly blocked."""
        cells = np.asarray(cells, dtype=np.int64)
        cells = cells[~self.blocked[cells]]
        k = len(cells)
        if k == 0:
            return 0
        self.blocked[cells] = True
        cut = self.n_free - k
        slots = self.pos[cells]
        holes = slots[slots < cut]
        tail = self.free[cut:self.n_free]
        movers = tail[~self.blocked[tail]]
        self.free[holes] = movers
        self.pos[movers] = holes
        self.pos[cells] = -1
        self.n_free = cut
        return k

    def update(self, state: GraphState, p_new) -> int:
        """Account for the point just added to ``state`` and extend the blocked set."""
        i = len(state) - 1
        c = self.cell_of(p_new)
        self.point_cells.append(c)
        nb = self.neighbor_cells(c)
        self.order[nb] += 1
        kind = self.spec.kind
        ell = self.spec.ell
        newly = 0

        if kind is EventKind.EDGE_COUNT:
            threshold = ell - state.edge_count
            if state.edge_count != self._last_ec:
                self._last_ec = state.edge_count
                newly += self.block(np.flatnonzero(self.order > threshold))
            else:
                newly += self.block(nb[self.order[nb] > threshold])

        elif kind is EventKind.MAX_DEGREE:
            newly += self.block(nb[self.order[nb] > ell])
            for j in [i, *state.adjacency[i]]:
                if state.degrees[j] >= ell and j not in self._degree_done:
                    self._degree_done.add(j)
                    newly += self.block(self.neighbor_cells(self.point_cells[j]))

        elif kind is EventKind.MAX_COMPONENT:
            if state.component_size(i) == ell + 1:
                for j in state.component_members(i):
                    newly += self.block(self.neighbor_cells(self.point_cells[j]))

        elif kind is EventKind.MAX_CLIQUE:
            watch = state.clique_watch
            for clique in watch[self._watch_cursor:]:
                newly += self.block(self.common_neighbor_cells([self.point_cells[j] for j in clique]))
            self._watch_cursor = len(watch)

        elif kind is EventKind.TRIANGLE_COUNT:
            if state.triangle_count == ell:
                if self._triangles_active:
                    pairs = [(j, i) for j in state.adjacency[i]]
                else:
                    self._triangles_active = True
                    pairs = [(a, b) for b in range(i + 1) for a in state.adjacency[b] if a < b]
                for a, b in pairs:
                    newly += self.block(self.common_neighbor_cells([self.point_cells[a], self.point_cells[b]]))

        if self.fault_rng is not None and self.n_free:
            # Deliberately unsound: blocks a random free cell and its neighborhood.
            # Only used to check that the verification suite notices.
            victim = int(self.free[int(self.fault_rng.integers(self.n_free))])
            newly += self.block(self.neighbor_cells(self.unflatten(victim)))

        self.blocked_volume_trace.append(self.blocked_volume)
        return newly

    # sampling -----------------------------------------------------------------
    def sample_free_point(self, rng: RngStream):
        """Uniform point over the free cells, or None when the grid is fully blocked."""
        n = self.n_free
        if n == 0:
            return None
        u = rng.uniforms(self.d + 1)
        flat = int(self.free[min(int(u[0] * n), n - 1)])
        h = self.h
        if self.d == 2:
            r, s = divmod(flat, self.K)
            return ((r + u[1]) * h, (s + u[2]) * h)
        cell = self.unflatten(flat)
        return tuple((c + x) * h for c, x in zip(cell, u[1:]))

    def likelihood_factor(self, w: Window | None = None) -> float:
        """``1 - Vol(B) / Vol(W)`` for the current blocked set."""
        return self.n_free / self.n_cells

    def recompute_order(self) -> np.ndarray:
        order = np.zeros(self.n_cells, dtype=np.int64)
        for c in self.point_cells:
            order[self.neighbor_cells(c)] += 1
        return order


def make_grid(w: Window, K: int, spec: EventSpec) -> GridBlocker:
    return GridBlocker(w, K, spec)


def update_blocking(b: GridBlocker, state: GraphState, p_new) -> int:
    return b.update(state, p_new)


def sample_free_point(b: GridBlocker, rng: RngStream):
    return b.sample_free_point(rng)


def likelihood_factor(b: GridBlocker, w: Window | None = None) -> float:
    return b.likelihood_factor(w)
