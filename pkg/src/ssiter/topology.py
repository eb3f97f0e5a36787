"""Weighted communication graphs: circle, unit disc, or loaded from a file."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ssiter.errors import DominanceViolated, ZeroDiagonal
from ssiter.linalg import as_matrix, is_normalized_diag_dominant, read_matrix


def _adjacency_from(w: np.ndarray) -> tuple[tuple[int, ...], ...]:
    n = w.shape[0]
    adj = []
    for i in range(n):
        row = np.flatnonzero(w[i] != 0.0)
        adj.append(tuple(int(j) for j in row if j != i))
    return tuple(adj)


def _is_connected(w: np.ndarray) -> bool:
    support = (w != 0.0).astype(np.int8)
    ncomp, _ = connected_components(csr_matrix(support), directed=True, connection="weak")
    return ncomp == 1


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """The system matrix W together with the neighbour lists N(p_i).

    ``adjacency[i]`` lists the j != i with w_ij != 0 in ascending order, i.e.
    the nodes whose outputs p_i's update reads. Support need not be
    symmetric.
    """

    w: np.ndarray
    adjacency: tuple[tuple[int, ...], ...]
    dominant: bool
    connected: bool
    kind: str = "matrix"
    params: dict = field(default_factory=dict)
    positions: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def num_edges(self) -> int:
        return sum(len(a) for a in self.adjacency)

    def readers(self, j: int) -> tuple[int, ...]:
        """Nodes i whose update depends on p_j (w_ij != 0, i != j)."""
        col = np.flatnonzero(self.w[:, j] != 0.0)
        return tuple(int(i) for i in col if i != j)


def graph_from_matrix(w, kind: str = "matrix", params: dict | None = None,
                      positions: np.ndarray | None = None) -> WeightedGraph:
    w = as_matrix(w)
    w.setflags(write=False)
    return WeightedGraph(
        w=w,
        adjacency=_adjacency_from(w),
        dominant=is_normalized_diag_dominant(w),
        connected=_is_connected(w),
        kind=kind,
        params=dict(params or {}),
        positions=positions,
    )


def build_circle(n: int, diag: float = 3.0, off: float = -1.0) -> WeightedGraph:
    """Ring where every node is tied to its left and right neighbour."""
    if n < 3:
        raise ValueError(f"circle needs n >= 3, got {n}")
    if off == 0:
        raise ValueError("off-diagonal weight must be nonzero")
    if not (abs(diag) >= 1 and abs(diag) > 2 * abs(off)):
        raise DominanceViolated(
            f"circle weights diag={diag}, off={off} are not normalized diagonally dominant")
    w = np.zeros((n, n))
    idx = np.arange(n)
    w[idx, idx] = diag
    w[idx, (idx + 1) % n] = off
    w[idx, (idx - 1) % n] = off
    return graph_from_matrix(w, kind="circle", params={"n": n, "diag": diag, "off": off})


def build_unit_disc(n: int, side: float = 10.0, radius: float = 1.0,
                    dominance_ratio: float = 0.97, seed: int = 0) -> WeightedGraph:
    """Random geometric graph on [0, side]^2 with per-edge random weights.

    Off-diagonal weights are uniform in [-1, 1], drawn independently for each
    direction of an edge. Each diagonal is max(1, row_abs_sum / ratio), so
    every row of B sums (in absolute value) to at most ``dominance_ratio``.
    A disconnected result is kept; ``connected`` is False and a warning is
    emitted.
    """
    if n < 2:
        raise ValueError(f"unit disc needs n >= 2, got {n}")
    if side <= 0:
        raise ValueError("side must be positive")
    if not 0.0 < dominance_ratio < 1.0:
        raise ValueError("dominance_ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, side, size=(n, 2))
    weights = rng.uniform(-1.0, 1.0, size=(n, n))

    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    edges = dist <= radius
    np.fill_diagonal(edges, False)

    w = np.where(edges, weights, 0.0)
    rowsum = np.sum(np.abs(w), axis=1)
    d = np.maximum(1.0, rowsum / dominance_ratio)
    # ratio < 1 already makes this strict; guard the degenerate rounding case
    tie = d <= rowsum
    d[tie] = np.nextafter(rowsum[tie], np.inf)
    w[np.arange(n), np.arange(n)] = d

    g = graph_from_matrix(
        w, kind="unit-disc",
        params={"n": n, "side": side, "radius": radius,
                "dominance_ratio": dominance_ratio, "seed": seed},
        positions=pos,
    )
    if not g.connected:
        warnings.warn(f"unit-disc graph (n={n}, seed={seed}) is disconnected", stacklevel=2)
    return g


def load_graph(path) -> WeightedGraph:
    """Read a graph from the matrix text format.

    Non-dominant matrices load fine (``dominant`` is False); the bound
    checkers refuse them later.
    """
    return graph_from_matrix(read_matrix(path), kind="file", params={"path": str(path)})


@dataclass(frozen=True, eq=False)
class NodeWeights:
    """What each node knows locally: its own input weight and its neighbours'.

    ``neighbor_weight[i][k]`` belongs to neighbour ``adjacency[i][k]``.
    """

    self_weight: np.ndarray
    neighbor_weight: tuple[np.ndarray, ...]
    adjacency: tuple[tuple[int, ...], ...]

    @cached_property
    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour indices and weights padded to the max degree.

        Padding slots point at the node itself with weight 0.0, so adding
        them never changes a sum. Column k holds each node's k-th neighbour
        in ascending index order.
        """
        n = self.self_weight.shape[0]
        dmax = max((len(a) for a in self.adjacency), default=0)
        idx = np.repeat(np.arange(n)[:, None], dmax, axis=1)
        wts = np.zeros((n, dmax))
        for i, adj in enumerate(self.adjacency):
            idx[i, :len(adj)] = adj
            wts[i, :len(adj)] = self.neighbor_weight[i]
        return idx, wts

    def weight(self, i: int, j: int) -> float:
        try:
            k = self.adjacency[i].index(j)
        except ValueError:
            return 0.0
        return float(self.neighbor_weight[i][k])


def node_weights(g: WeightedGraph) -> NodeWeights:
    d = np.diag(g.w)
    zero = np.flatnonzero(d == 0.0)
    if zero.size:
        raise ZeroDiagonal(int(zero[0]))
    self_w = 1.0 / d
    nbr = []
    for i, adj in enumerate(g.adjacency):
        cols = np.asarray(adj, dtype=np.intp)
        # same expression as jacobi_split's B, so entries agree bit-for-bit
        nbr.append(-(g.w[i, cols] / d[i]))
    return NodeWeights(self_weight=self_w, neighbor_weight=tuple(nbr), adjacency=g.adjacency)
