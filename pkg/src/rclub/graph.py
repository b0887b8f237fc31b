"""Deletion-only user graph.

The connected components of the graph are the inferred user clusters.  The
graph starts complete and only ever loses edges; component labels are
recomputed lazily (one BFS sweep) on the first query after a deletion.

Adjacency is a dense boolean ``u x u`` matrix so the round-loop kernels can
edit it directly.  Memory is O(u^2) bytes, about 25 MB at u = 5000.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, jit
from .errors import InvalidArgument


@jit
def _label_bfs(adj, labels):
    """Label components by BFS; component ids follow their smallest member."""
    u = adj.shape[0]
    labels[:] = -1
    queue = np.empty(u, dtype=np.int64)
    ncomp = 0
    for root in range(u):
        if labels[root] >= 0:
            continue
        labels[root] = ncomp
        head = 0
        tail = 1
        queue[0] = root
        while head < tail:
            v = queue[head]
            head += 1
            row = adj[v]
            for w in range(u):
                if row[w] and labels[w] < 0:
                    labels[w] = ncomp
                    queue[tail] = w
                    tail += 1
        ncomp += 1
    return ncomp


def _label_frontier(adj, labels):
    """Vectorised frontier-expansion labelling (numpy path)."""
    u = adj.shape[0]
    labels[:] = -1
    ncomp = 0
    for root in range(u):
        if labels[root] >= 0:
            continue
        member = np.zeros(u, dtype=bool)
        member[root] = True
        frontier = member.copy()
        while frontier.any():
            reached = adj[frontier].any(axis=0)
            frontier = reached & ~member
            member |= reached
        labels[member] = ncomp
        ncomp += 1
    return ncomp


label_components = _label_bfs if USE_NUMBA else _label_frontier


class UserGraph:
    """Undirected graph over users ``0..u-1`` supporting edge deletion only."""

    def __init__(self, adj: np.ndarray):
        adj = np.ascontiguousarray(adj, dtype=np.bool_)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise InvalidArgument("adjacency must be a non-empty square matrix")
        if np.any(np.diag(adj)) or not np.array_equal(adj, adj.T):
            raise InvalidArgument("adjacency must be symmetric with an empty diagonal")
        self.adj = adj
        self.labels = np.full(adj.shape[0], -1, dtype=np.int64)
        # [labels stale, derived per-component data stale]; an array so
        # jitted kernels can flip the flags in place
        self.dirty = np.ones(2, dtype=np.bool_)

    @classmethod
    def complete(cls, u: int) -> "UserGraph":
        if int(u) != u or u < 1:
            raise InvalidArgument(f"user count must be >= 1, got {u!r}")
        adj = np.ones((int(u), int(u)), dtype=np.bool_)
        np.fill_diagonal(adj, False)
        return cls(adj)

    @property
    def n_users(self) -> int:
        return self.adj.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adj.sum()) // 2

    def _check(self, i: int) -> int:
        if int(i) != i or not 0 <= i < self.n_users:
            raise InvalidArgument(f"user id {i!r} out of range [0, {self.n_users})")
        return int(i)

    def has_edge(self, i: int, l: int) -> bool:
        return bool(self.adj[self._check(i), self._check(l)])

    def delete_edge(self, i: int, l: int) -> "UserGraph":
        i, l = self._check(i), self._check(l)
        if i == l:
            raise InvalidArgument("self-loops do not exist")
        if self.adj[i, l]:
            self.adj[i, l] = False
            self.adj[l, i] = False
            self.dirty[:] = True
        return self

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adj[self._check(i)])

    def refresh(self) -> np.ndarray:
        """Recompute labels if a deletion happened since the last query."""
        if self.dirty[0]:
            label_components(self.adj, self.labels)
            self.dirty[0] = False
        return self.labels

    @property
    def n_components(self) -> int:
        return int(self.refresh().max()) + 1

    def component_of(self, i: int) -> set[int]:
        i = self._check(i)
        labels = self.refresh()
        return set(np.flatnonzero(labels == labels[i]).tolist())

    def components(self) -> list[np.ndarray]:
        labels = self.refresh()
        return [np.flatnonzero(labels == c) for c in range(int(labels.max()) + 1)]
