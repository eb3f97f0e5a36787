"""Synchronous SS-Iterative: every round each node sets its output to
w_ii * I_i + sum_j w_ij * O_j(previous round).

Message passing is modelled by double buffering: round r+1 only ever reads
the outputs of round r, which is exactly what the send/receive phases of a
synchronous round deliver.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ssiter.errors import DimensionMismatch
from ssiter.inputs import InputSequence
from ssiter.linalg import as_vector
from ssiter.topology import NodeWeights, WeightedGraph, node_weights


@dataclass(frozen=True)
class Configuration:
    outputs: np.ndarray
    round_index: int = 0

    @property
    def n(self) -> int:
        return self.outputs.shape[0]


@dataclass(frozen=True)
class RunTrace:
    """``outputs[0]`` is the initial configuration, ``outputs[r]`` is O(r)
    and ``inputs[r-1]`` is the I(r) consumed to produce it."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def initial(self) -> Configuration:
        return Configuration(self.outputs[0], 0)

    @property
    def final(self) -> Configuration:
        return Configuration(self.outputs[-1], len(self))

    def configuration(self, r: int) -> Configuration:
        return Configuration(self.outputs[r], r)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["round", "node", "input", "output"])
        for i, o in enumerate(self.outputs[0]):
            wr.writerow([0, i, "", repr(float(o))])
        for r in range(1, len(self) + 1):
            for i in range(self.outputs.shape[1]):
                wr.writerow([r, i, repr(float(self.inputs[r - 1, i])), repr(float(self.outputs[r, i]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _local_update(self_w: np.ndarray, idx: np.ndarray, wts: np.ndarray,
                  inp: np.ndarray, prev: np.ndarray) -> np.ndarray:
    # Fixed order per node: own input first, then neighbours by ascending index.
    out = self_w * inp
    for k in range(idx.shape[1]):
        out += wts[:, k] * prev[idx[:, k]]
    return out


def sync_round(g: WeightedGraph, weights: NodeWeights, inp, prev: Configuration) -> Configuration:
    """One synchronous round of SS-Iterative.

    Node i reads only its own input and the previous outputs of the nodes in
    its neighbour list; the update is vectorised across nodes, not across
    the matrix.
    """
    inp = as_vector(inp, g.n)
    if prev.n != g.n:
        raise DimensionMismatch(f"configuration has {prev.n} nodes, graph has {g.n}")
    idx, wts = weights.padded
    out = _local_update(weights.self_weight, idx, wts, inp, np.asarray(prev.outputs, dtype=np.float64))
    return Configuration(out, prev.round_index + 1)


def run_sync(g: WeightedGraph, seq, initial, weights: NodeWeights | None = None) -> RunTrace:
    """Apply one round per input vector of ``seq`` starting from ``initial``."""
    vectors = seq.vectors if isinstance(seq, InputSequence) else np.asarray(seq, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != g.n:
        raise DimensionMismatch(f"input sequence shape {vectors.shape} does not fit n={g.n}")
    if vectors.shape[0] < 1:
        raise ValueError("input sequence must contain at least one vector")
    if weights is None:
        weights = node_weights(g)
    start = initial.outputs if isinstance(initial, Configuration) else initial
    start = as_vector(start, g.n)

    idx, wts = weights.padded
    self_w = weights.self_weight
    outputs = np.empty((vectors.shape[0] + 1, g.n))
    outputs[0] = start
    for r in range(vectors.shape[0]):
        outputs[r + 1] = _local_update(self_w, idx, wts, vectors[r], outputs[r])
    return RunTrace(inputs=np.array(vectors), outputs=outputs)
