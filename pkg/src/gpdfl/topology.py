"""Communication graphs. Every neighbourhood includes the client itself."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

KINDS = ("full", "line", "ring", "star", "grid")


@dataclass(frozen=True)
class Topology:
    kind: str
    n: int
    neighbors: tuple[tuple[int, ...], ...]

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        for i, nb in enumerate(self.neighbors):
            a[i, list(nb)] = True
        return a

    def is_connected(self, members=None) -> bool:
        members = set(range(self.n)) if members is None else set(members)
        if not members:
            return False
        start = min(members)
        seen = {start}
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in self.neighbors[i]:
                if j in members and j not in seen:
                    seen.add(j)
                    queue.append(j)
        return seen == members


def grid_shape(n: int) -> tuple[int, int]:
    """Most square rows x cols factorisation of n with both sides >= 2."""
    for rows in range(int(np.sqrt(n)), 1, -1):
        if n % rows == 0 and n // rows >= 2:
            return rows, n // rows
    raise ConfigurationError(f"grid topology cannot hold n={n} clients", "topology.kind")


def build(kind: str, n: int, rows: int | None = None, cols: int | None = None) -> Topology:
    if kind not in KINDS:
        raise ConfigurationError(f"unknown topology {kind!r}; expected one of {KINDS}", "topology.kind")
    if n < 2:
        raise ConfigurationError("need at least two clients", "n_clients")
    edges: set[tuple[int, int]] = set()
    if kind == "full":
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)}
    elif kind in ("line", "ring"):
        edges = {(i, i + 1) for i in range(n - 1)}
        if kind == "ring" and n > 2:
            edges.add((0, n - 1))
    elif kind == "star":
        edges = {(0, j) for j in range(1, n)}
    else:
        if rows is None or cols is None:
            rows, cols = grid_shape(n)
        if rows < 2 or cols < 2 or rows * cols != n:
            raise ConfigurationError(f"grid {rows}x{cols} does not hold n={n} clients", "topology.kind")
        for r in range(rows):
            for c in range(cols):
                k = r * cols + c
                if c + 1 < cols:
                    edges.add((k, k + 1))
                if r + 1 < rows:
                    edges.add((k, k + cols))
    nbrs: list[set[int]] = [{i} for i in range(n)]
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    return Topology(kind, n, tuple(tuple(sorted(s)) for s in nbrs))


def initial_weights(topology: Topology, members=None) -> np.ndarray:
    """Uniform 1/|N_i| rows, zero outside the neighbourhood.

    ``members`` restricts the graph to a subset of clients (rows of
    non-members are left at zero).
    """
    members = set(range(topology.n)) if members is None else set(members)
    w = np.zeros((topology.n, topology.n))
    for i in sorted(members):
        nb = [j for j in topology.neighbors[i] if j in members]
        w[i, nb] = 1.0 / len(nb)
    return w
