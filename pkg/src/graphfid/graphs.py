"""Periodic regular graphs used as graph-state layouts.

Every builder returns the same immutable :class:`Graph`.  2D vertices are
indexed row-major, ``v = x + nx * y``; 3D vertices layer-major,
``v = x + nx * (y + ny * z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class Graph:
    n: int
    edges: tuple[tuple[int, int], ...]
    descriptor: str = "custom"
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"graph needs at least one vertex, got n={self.n}")
        canon = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
            e = (min(i, j), max(i, j))
            if e in canon:
                raise ValueError(f"duplicate edge {e}")
            canon.add(e)
        edges = tuple(sorted(canon))
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in edges:
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(a)) for a in adj))

    @property
    def degrees(self) -> list[int]:
        return [len(a) for a in self.neighbors]

    def is_regular(self, d: int) -> bool:
        return all(len(a) == d for a in self.neighbors)

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(offsets, indices) arrays for the neighbor lists, as used by the MC kernel."""
        offsets = np.zeros(self.n + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(self.degrees)
        indices = np.fromiter(
            (j for a in self.neighbors for j in a), dtype=np.int64, count=int(offsets[-1])
        )
        return offsets, indices

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        offsets, indices = self.csr
        data = np.ones(len(indices), dtype=np.int64)
        return sparse.csr_matrix((data, indices, offsets), shape=(self.n, self.n))

    @cached_property
    def neighbor_masks(self) -> tuple[int, ...]:
        """Bit mask of N(i) for each vertex i (bit j set iff j is a neighbor)."""
        masks = []
        for a in self.neighbors:
            m = 0
            for j in a:
                m |= 1 << j
            masks.append(m)
        return tuple(masks)

    def edge_list_text(self) -> str:
        """Two-column edge list, one edge per line, for debugging."""
        lines = [f"# {self.descriptor} n={self.n}"]
        lines += [f"{i} {j}" for i, j in self.edges]
        return "\n".join(lines) + "\n"


def _require_regular(g: Graph, d: int) -> Graph:
    # periodic wrap on tiny lattices can merge offsets into duplicate edges
    if not g.is_regular(d):
        raise ValueError(f"{g.descriptor}: construction is not {d}-regular at this size")
    return g


def build_ring(n: int) -> Graph:
    """1D cluster state on a periodic ring of even length n >= 4."""
    if n < 4 or n % 2:
        raise ValueError(f"1d-cluster needs an even number of qubits n >= 4, got n={n}")
    edges = [(i, (i + 1) % n) for i in range(n)]
    return _require_regular(Graph(n, tuple(edges), f"1d-cluster:{n}"), 2)


def _layout_2d(d: int):
    # (dx, dy, when): bond (x, y) -> (x+dx, y+dy) exists iff when(x, y).
    # Offsets only point forward so each edge is generated once.
    right = (1, 0, lambda x, y: True)
    up = (0, 1, lambda x, y: True)
    slash = (1, 1, lambda x, y: True)
    if d == 3:
        # brick wall: horizontal bonds only where x + y is even
        return [(1, 0, lambda x, y: (x + y) % 2 == 0), up]
    if d == 4:
        return [right, up]
    if d == 5:
        return [right, up, (1, 1, lambda x, y: x % 2 == 0)]
    if d == 6:
        return [right, up, slash]
    if d == 7:
        # "\" diagonal of the plaquette whose lower-left corner is (x, y-1)
        return [right, up, slash, (1, -1, lambda x, y: x % 2 == 0)]
    if d == 8:
        return [right, up, slash, (1, -1, lambda x, y: True)]
    raise ValueError(f"2D degree must be in 3..8, got d={d}")


_LAYOUT_TAG = {3: "brickwall", 4: "square", 5: "square+alt-slash", 6: "triangular",
               7: "triangular+alt-backslash", 8: "square+both-diagonals"}


def _check_2d(d: int, nx: int, ny: int) -> None:
    if d not in _LAYOUT_TAG:
        raise ValueError(f"2D degree must be in 3..8, got d={d}")
    if nx < 3 or ny < 3:
        raise ValueError(f"periodic 2D lattice needs nx, ny >= 3, got {nx}x{ny}")
    if d % 2 and nx % 2:
        raise ValueError(f"d={d} is odd: nx must be even under periodic boundaries, got nx={nx}")


def _edges_2d(d: int, nx: int, ny: int, base: int = 0) -> list[tuple[int, int]]:
    edges = []
    for y in range(ny):
        for x in range(nx):
            v = base + x + nx * y
            for dx, dy, when in _layout_2d(d):
                if when(x, y):
                    w = base + (x + dx) % nx + nx * ((y + dy) % ny)
                    edges.append((v, w))
    return edges


def build_2d_regular(d: int, nx: int, ny: int) -> Graph:
    _check_2d(d, nx, ny)
    desc = f"2d-regular:d={d}:{nx}x{ny}:periodic:{_LAYOUT_TAG[d]}"
    return _require_regular(Graph(nx * ny, tuple(_edges_2d(d, nx, ny)), desc), d)


def build_3d_stack(d2: int, nx: int, ny: int, nz: int) -> Graph:
    """Stack nz periodic 2D d2-regular layers and bond each vertex to its
    counterparts in the layers above and below (degree d2 + 2)."""
    if d2 not in (3, 4, 5, 6):
        raise ValueError(f"3D stacking supports layer degree 3..6, got d2={d2}")
    _check_2d(d2, nx, ny)
    if nz < 3:
        raise ValueError(f"periodic stacking needs nz >= 3, got nz={nz}")
    layer = nx * ny
    edges = []
    for z in range(nz):
        edges += _edges_2d(d2, nx, ny, base=z * layer)
        up = ((z + 1) % nz) * layer
        edges += [(z * layer + v, up + v) for v in range(layer)]
    desc = f"3d-regular:d={d2 + 2}:{nx}x{ny}x{nz}:periodic:{_LAYOUT_TAG[d2]}-stack"
    return _require_regular(Graph(layer * nz, tuple(edges), desc), d2 + 2)


def build_complete(n: int) -> Graph:
    if n < 1:
        raise ValueError(f"complete graph needs n >= 1, got n={n}")
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return Graph(n, tuple(edges), f"complete:{n}")
