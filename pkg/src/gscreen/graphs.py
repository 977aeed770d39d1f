"""Graph of strong dependence, connected-subgraph listing and components."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import RegularizedGram


class EnumerationAbort(RuntimeError):
    """Raised when the number of candidate subgraphs exceeds the cap."""


@dataclass(frozen=True)
class Gosd:
    """Undirected graph on ``p`` nodes stored as sorted neighbour tuples."""

    p: int
    adjacency: tuple[tuple[int, ...], ...]

    @property
    def K(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, nb in enumerate(self.adjacency) for j in nb if i < j]

    @classmethod
    def from_edges(cls, p: int, edges) -> "Gosd":
        nbrs = [set() for _ in range(p)]
        for i, j in edges:
            if i == j:
                continue
            nbrs[i].add(j)
            nbrs[j].add(i)
        return cls(p=p, adjacency=tuple(tuple(sorted(s)) for s in nbrs))

    @classmethod
    def from_pattern(cls, A) -> "Gosd":
        """Edges wherever a square (dense or sparse) matrix is nonzero off the diagonal."""
        coo = A.tocoo() if hasattr(A, "tocoo") else None
        if coo is not None:
            rows, cols = coo.row, coo.col
            keep = coo.data != 0
            rows, cols = rows[keep], cols[keep]
        else:
            rows, cols = np.nonzero(np.asarray(A))
        p = A.shape[0]
        return cls.from_edges(p, zip(rows.tolist(), cols.tolist()))


def build_gosd(reg: RegularizedGram) -> Gosd:
    """Edge ``(i, j)`` iff ``i != j`` and the regularized Gram stores ``(i, j)``."""
    return Gosd.from_pattern(reg.matrix)


def enumerate_connected_subgraphs(g: Gosd, m0: int, cap: int = 10**8) -> list[tuple[int, ...]]:
    """All connected vertex sets of size at most ``m0``.

    Sets are grown from their smallest vertex ``v`` using only vertices larger
    than ``v`` and, at each step, only vertices that are new exclusive
    neighbours of the last added vertex, so each set is produced exactly once.
    Output is sorted by size, then lexicographically.
    """
    if m0 < 1:
        raise ValueError("m0 must be >= 1")
    adj = g.adjacency
    out: list[tuple[int, ...]] = []

    def extend(sub, ext, closed, v):
        out.append(sub)
        if len(out) > cap:
            raise EnumerationAbort(
                f"more than {cap} connected subgraphs; the GOSD is not sparse enough"
            )
        if len(sub) == m0:
            return
        ext = list(ext)
        while ext:
            w = ext.pop()
            new = [u for u in adj[w] if u > v and u not in closed]
            extend(sub + (w,), ext + new, closed | set(new), v)

    for v in range(g.p):
        start = [u for u in adj[v] if u > v]
        extend((v,), start, set(start) | {v}, v)

    return sorted((tuple(sorted(s)) for s in out), key=lambda s: (len(s), s))


def count_bound(p: int, m0: int, K: int) -> float:
    """Upper bound ``p m0 (e K)^m0`` on the number of connected subgraphs."""
    return p * m0 * (np.e * K) ** m0


def components_of(g: Gosd, subset) -> list[tuple[int, ...]]:
    """Connected components of the subgraph induced by ``subset``, ordered by smallest member."""
    members = set(int(i) for i in subset)
    seen: set[int] = set()
    comps = []
    for s in sorted(members):
        if s in seen:
            continue
        comp = [s]
        seen.add(s)
        queue = [s]
        while queue:
            i = queue.pop()
            for j in g.adjacency[i]:
                if j in members and j not in seen:
                    seen.add(j)
                    comp.append(j)
                    queue.append(j)
        comps.append(tuple(sorted(comp)))
    return comps


def is_connected(g: Gosd, vertices) -> bool:
    vs = tuple(vertices)
    return len(vs) > 0 and len(components_of(g, vs)) == 1


def write_edge_list(g: Gosd, path) -> None:
    """Two-column CSV of edges with 1-based node labels."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j"])
        for i, j in g.edges():
            w.writerow([i + 1, j + 1])
