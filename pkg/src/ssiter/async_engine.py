"""Asynchronous SS-Iterative over shared read/write registers.

Each node runs the loop

    02-03  for each reader j: write O_i to R(i, j)
    04     O_i := w_ii * I_i
    05-07  for each neighbour j: read R(j, i) and add w_ij * R(j, i) to O_i

forever. One atomic step is one register write, one register read (with its
accumulate), or the line-04 input read. A node's *published* output is the
value of O_i at the end of its last complete sweep; partial sums in the
middle of the read phase are never reported.

Registers are addressed by read slot: slot e in the CSR row of reader i holds
R(j, i) for j = ``read_src[e]``. Writer j reaches its slots through
``write_slot``. For symmetric support this is exactly the register set of
the loop above; for one-directional dependencies a node only writes to the
nodes that actually read it.

The hot loop is a numba kernel; :func:`async_step` is the same transition in
plain Python and is used to cross-check the kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from ssiter.errors import DimensionMismatch
from ssiter.linalg import as_vector
from ssiter.topology import NodeWeights, WeightedGraph, node_weights

LINE_WRITE = 3
LINE_INPUT = 4
LINE_READ = 6

CHUNK = 1 << 16
INPUT_WINDOW = 4096

# kernel status codes
_DONE = 0
_NEED_INPUT = 1
_STOPPED = 2


@dataclass(frozen=True, eq=False)
class AsyncLayout:
    n: int
    self_w: np.ndarray
    read_ptr: np.ndarray
    read_src: np.ndarray
    read_w: np.ndarray
    write_ptr: np.ndarray
    write_slot: np.ndarray
    n_writes: np.ndarray
    sweep_len: np.ndarray

    @property
    def num_registers(self) -> int:
        return self.read_src.shape[0]

    def register(self, writer: int, reader: int) -> int:
        """Slot index of R(writer, reader)."""
        lo, hi = self.read_ptr[reader], self.read_ptr[reader + 1]
        hits = np.flatnonzero(self.read_src[lo:hi] == writer)
        if hits.size == 0:
            raise KeyError(f"no register R({writer}, {reader})")
        return int(lo + hits[0])

    def reader_of(self, slot: int) -> int:
        return int(np.searchsorted(self.read_ptr, slot, side="right") - 1)

    @classmethod
    def from_graph(cls, g: WeightedGraph, weights: NodeWeights | None = None) -> "AsyncLayout":
        if weights is None:
            weights = node_weights(g)
        n = g.n
        read_ptr = np.zeros(n + 1, dtype=np.int64)
        for i, adj in enumerate(g.adjacency):
            read_ptr[i + 1] = read_ptr[i] + len(adj)
        read_src = np.array([j for adj in g.adjacency for j in adj], dtype=np.int64)
        read_w = (np.concatenate(weights.neighbor_weight) if read_src.size
                  else np.zeros(0))
        reader_of = np.repeat(np.arange(n), np.diff(read_ptr))
        # writer j's slots, ordered by ascending reader
        order = np.lexsort((reader_of, read_src))
        write_slot = order.astype(np.int64)
        n_writes = np.bincount(read_src, minlength=n).astype(np.int64)
        write_ptr = np.concatenate([[0], np.cumsum(n_writes)]).astype(np.int64)
        n_reads = np.diff(read_ptr)
        sweep_len = (n_writes + 1 + n_reads).astype(np.int64)
        return cls(n=n, self_w=np.array(weights.self_weight, dtype=np.float64),
                   read_ptr=read_ptr, read_src=read_src, read_w=np.array(read_w, dtype=np.float64),
                   write_ptr=write_ptr, write_slot=write_slot, n_writes=n_writes,
                   sweep_len=sweep_len)


@dataclass(eq=False)
class AsyncState:
    """Everything a transient fault could corrupt, plus bookkeeping.

    ``acc`` is the local variable O_i, ``out`` the published output, ``pc``
    the position inside the current sweep. ``reg_wstep`` is the step index of
    the last write to each register (-1 for the initial contents) and
    ``reg_wround`` the round it happened in (0 for the initial contents).
    """

    pc: np.ndarray
    acc: np.ndarray
    out: np.ndarray
    regs: np.ndarray
    reg_wstep: np.ndarray
    reg_wround: np.ndarray
    sweeps: np.ndarray
    sweep_start: np.ndarray
    done: np.ndarray
    # step, rounds completed, last boundary step, nodes done this round, stale reads
    counters: np.ndarray = field(default_factory=lambda: np.array([0, 0, -1, 0, 0], dtype=np.int64))

    @property
    def step(self) -> int:
        return int(self.counters[0])

    @property
    def rounds_completed(self) -> int:
        return int(self.counters[1])

    @property
    def stale_reads(self) -> int:
        return int(self.counters[4])

    def copy(self) -> "AsyncState":
        return AsyncState(*(np.array(getattr(self, f)) for f in
                            ("pc", "acc", "out", "regs", "reg_wstep", "reg_wround",
                             "sweeps", "sweep_start", "done", "counters")))


def initial_state(layout: AsyncLayout, outputs, registers=None, pcs=None) -> AsyncState:
    """Arbitrary starting configuration.

    ``registers`` defaults to the writers' outputs. ``pcs`` may place a node
    anywhere inside its write phase (0 <= pc <= n_writes); a partially
    accumulated read phase is not a meaningful starting point because the
    accumulator would mix garbage with fresh terms.
    """
    n = layout.n
    outputs = as_vector(outputs, n)
    if registers is None:
        regs = outputs[layout.read_src].copy()
    else:
        regs = as_vector(registers, layout.num_registers).copy()
    if pcs is None:
        pc = np.zeros(n, dtype=np.int64)
    else:
        pc = np.array(pcs, dtype=np.int64).reshape(n)
        if np.any(pc < 0) or np.any(pc > layout.n_writes):
            raise ValueError("initial program counters must lie in the write phase")
    sweep_start = np.full(n, -1, dtype=np.int64)
    return AsyncState(
        pc=pc, acc=outputs.copy(), out=outputs.copy(), regs=regs,
        reg_wstep=np.full(layout.num_registers, -1, dtype=np.int64),
        reg_wround=np.zeros(layout.num_registers, dtype=np.int64),
        sweeps=np.zeros(n, dtype=np.int64),
        sweep_start=sweep_start,
        done=np.zeros(n, dtype=np.bool_),
    )


def initial_errors(layout: AsyncLayout, state: AsyncState, u) -> float:
    """z for the async envelope: worst initial error over outputs and registers.

    A register R(j, i) stands in for O_j, so its error is measured against u_j.
    """
    u = as_vector(u, layout.n)
    errs = [np.max(np.abs(state.out - u), initial=0.0), np.max(np.abs(state.acc - u), initial=0.0)]
    if layout.num_registers:
        errs.append(np.max(np.abs(state.regs - u[layout.read_src])))
    return float(max(errs))


def _complete_sweep(state: AsyncState, i: int, t: int, boundaries: list | None,
                    boundary_out: list | None) -> None:
    state.out[i] = state.acc[i]
    state.pc[i] = 0
    c = state.counters
    if state.sweep_start[i] > c[2] and not state.done[i]:
        state.done[i] = True
        c[3] += 1
        if c[3] == state.done.shape[0]:
            c[1] += 1
            c[2] = t
            c[3] = 0
            state.done[:] = False
            if boundaries is not None:
                boundaries.append(t)
            if boundary_out is not None:
                boundary_out.append(state.out.copy())


def async_step(layout: AsyncLayout, state: AsyncState, node: int, inputs,
               boundaries: list | None = None, boundary_out: list | None = None) -> tuple:
    """Advance ``node`` by one atomic step, in place.

    ``inputs`` is anything with ``row(k)`` (1-based); node i's k-th line-04
    execution reads ``inputs.row(k)[i]``. Returns the log entry
    (step, node, line, slot, value, source_write_step).
    """
    i = int(node)
    t = int(state.counters[0])
    p = int(state.pc[i])
    nw = int(layout.n_writes[i])
    cur_round = int(state.counters[1]) + 1
    if p == 0:
        state.sweep_start[i] = t
    src = -1
    if p < nw:
        e = int(layout.write_slot[layout.write_ptr[i] + p])
        state.regs[e] = state.acc[i]
        state.reg_wstep[e] = t
        state.reg_wround[e] = cur_round
        line, slot, value = LINE_WRITE, e, float(state.acc[i])
    elif p == nw:
        k = int(state.sweeps[i]) + 1
        x = float(inputs.row(k)[i])
        state.acc[i] = layout.self_w[i] * x
        state.sweeps[i] = k
        line, slot, value = LINE_INPUT, k, x
    else:
        e = int(layout.read_ptr[i] + (p - nw - 1))
        src = int(state.reg_wstep[e])
        if state.reg_wround[e] < cur_round - 1:
            state.counters[4] += 1
        state.acc[i] = state.acc[i] + layout.read_w[e] * state.regs[e]
        line, slot, value = LINE_READ, e, float(state.regs[e])
    state.pc[i] = p + 1
    state.counters[0] = t + 1
    if state.pc[i] == layout.sweep_len[i]:
        _complete_sweep(state, i, t, boundaries, boundary_out)
    return t, i, line, slot, value, src


@njit(cache=True)
def _kernel(sched, self_w, read_ptr, read_w, write_ptr, write_slot, n_writes, sweep_len,
            pc, acc, out, regs, reg_wstep, reg_wround, sweeps, sweep_start, done, counters,
            inbuf, in_base, in_rows,
            b_steps, b_out, b_count,
            log_on, lg_node, lg_line, lg_slot, lg_val, lg_src, lg_count, stop_round):
    n = pc.shape[0]
    for s in range(sched.shape[0]):
        i = sched[s]
        p = pc[i]
        nw = n_writes[i]
        if p == nw:
            k = sweeps[i] + 1
            if k - in_base[i] >= in_rows[i]:
                return _NEED_INPUT, s
        t = counters[0]
        cur_round = counters[1] + 1
        if p == 0:
            sweep_start[i] = t
        src = -1
        if p < nw:
            e = write_slot[write_ptr[i] + p]
            regs[e] = acc[i]
            reg_wstep[e] = t
            reg_wround[e] = cur_round
            line = 3
            slot = e
            val = acc[i]
        elif p == nw:
            k = sweeps[i] + 1
            x = inbuf[i, k - in_base[i]]
            acc[i] = self_w[i] * x
            sweeps[i] = k
            line = 4
            slot = k
            val = x
        else:
            e = read_ptr[i] + (p - nw - 1)
            src = reg_wstep[e]
            if reg_wround[e] < cur_round - 1:
                counters[4] += 1
            acc[i] = acc[i] + read_w[e] * regs[e]
            line = 6
            slot = e
            val = regs[e]
        pc[i] = p + 1
        counters[0] = t + 1
        if log_on:
            c = lg_count[0]
            lg_node[c] = i
            lg_line[c] = line
            lg_slot[c] = slot
            lg_val[c] = val
            lg_src[c] = src
            lg_count[0] = c + 1
        if pc[i] == sweep_len[i]:
            out[i] = acc[i]
            pc[i] = 0
            if sweep_start[i] > counters[2] and not done[i]:
                done[i] = True
                counters[3] += 1
                if counters[3] == n:
                    counters[1] += 1
                    counters[2] = t
                    counters[3] = 0
                    for j in range(n):
                        done[j] = False
                    bc = b_count[0]
                    b_steps[bc] = t
                    for j in range(n):
                        b_out[bc, j] = out[j]
                    b_count[0] = bc + 1
                    if stop_round >= 0 and counters[1] >= stop_round:
                        return _STOPPED, s + 1
    return _DONE, sched.shape[0]


@njit(cache=True)
def _fair_chunk(cands, deadline, ring, t0, window, out):
    for s in range(out.shape[0]):
        t = t0 + s
        slot = t % window
        x = ring[slot]
        if x >= 0:
            pick = x
        else:
            pick = cands[s]
            ring[deadline[pick] % window] = -1
        deadline[pick] = t + window
        ring[slot] = pick
        out[s] = pick


class Schedule:
    """Which node takes each atomic step.

    ``round-robin`` cycles through the nodes one atomic step at a time.
    ``random-fair`` picks uniformly at random but forces a node whose
    deadline has come, so every window of ``fair_window * n`` consecutive
    steps contains every node. Deadlines start staggered (node i is due by
    step W - n + i), which keeps them distinct and makes the forcing rule
    always satisfiable. ``fair_window=1`` degenerates to round robin.
    """

    def __init__(self, n: int, policy: str = "random-fair", fair_window: int = 5, seed: int = 0):
        if policy not in ("round-robin", "random-fair"):
            raise ValueError(f"unknown schedule policy {policy!r}")
        if fair_window < 1:
            raise ValueError("fair_window must be >= 1")
        self.n = n
        self.policy = policy
        self.fair_window = fair_window
        self.seed = seed
        self._t = 0
        self._window = fair_window * n
        self._deadline = np.arange(n, dtype=np.int64) + (self._window - n)
        self._ring = np.full(self._window, -1, dtype=np.int64)
        self._ring[self._deadline % self._window] = np.arange(n)
        self._rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C4ED]))
        self._buf = np.zeros(0, dtype=np.int64)

    @property
    def window(self) -> int:
        return self._window

    def _fill(self) -> np.ndarray:
        t0 = self._t
        out = np.empty(CHUNK, dtype=np.int64)
        if self.policy == "round-robin":
            out[:] = (np.arange(CHUNK, dtype=np.int64) + t0) % self.n
        else:
            cands = self._rng.integers(0, self.n, size=CHUNK, dtype=np.int64)
            _fair_chunk(cands, self._deadline, self._ring, t0, self._window, out)
        self._t += CHUNK
        return out

    def take(self, m: int) -> np.ndarray:
        while self._buf.shape[0] < m:
            self._buf = np.concatenate([self._buf, self._fill()])
        head, self._buf = self._buf[:m], self._buf[m:]
        return head

    def give_back(self, ids: np.ndarray) -> None:
        self._buf = np.concatenate([ids, self._buf])


@dataclass(eq=False)
class AsyncTrace:
    layout: AsyncLayout
    initial: AsyncState
    final: AsyncState
    total_steps: int
    boundary_steps: np.ndarray
    boundary_outputs: np.ndarray
    log: dict | None = None
    snapshots: dict = field(default_factory=dict)

    @property
    def rounds(self) -> int:
        return int(self.boundary_steps.shape[0])

    def outputs_at_rounds(self) -> np.ndarray:
        """Row k is the published output vector at the end of round k; row 0 is initial."""
        return np.vstack([self.initial.out[None, :], self.boundary_outputs])

    def step_log_csv(self, path=None) -> str:
        if self.log is None:
            raise ValueError("run was not recorded with record_log=True")
        lg = self.log
        lines = ["step,node,line,target,value"]
        names = {LINE_WRITE: "R", LINE_READ: "R"}
        for t in range(lg["node"].shape[0]):
            line = int(lg["line"][t])
            slot = int(lg["slot"][t])
            if line == LINE_INPUT:
                target = f"O{int(lg['node'][t])}"
            else:
                writer = int(self.layout.read_src[slot])
                reader = self.layout.reader_of(slot)
                target = f"{names[line]}({writer};{reader})"
            lines.append(f"{t},{int(lg['node'][t])},{line:02d},{target},{float(lg['value'][t])!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


class _InputWindow:
    """Per-node sliding windows over the input rows.

    Nodes with short sweeps run ahead of nodes with long ones, so each node
    keeps its own window of upcoming samples.
    """

    def __init__(self, inputs, n: int):
        self.inputs = inputs
        self.n = n
        self.base = np.ones(n, dtype=np.int64)
        self.rows = np.zeros(n, dtype=np.int64)
        self.buf = np.zeros((n, INPUT_WINDOW))
        self.limit = len(inputs) if hasattr(inputs, "__len__") else None

    def refill(self, node: int, needed_from: int) -> None:
        stop = needed_from + INPUT_WINDOW
        if self.limit is not None:
            if needed_from > self.limit:
                raise IndexError(
                    f"async run needs input row {needed_from} for node {node} "
                    f"but the sequence has {self.limit}")
            stop = min(stop, self.limit + 1)
        block = self.inputs.rows(needed_from, stop)
        if block.shape[1] != self.n:
            raise DimensionMismatch(f"inputs have dimension {block.shape[1]}, graph has {self.n}")
        self.base[node] = needed_from
        self.rows[node] = stop - needed_from
        self.buf[node, :stop - needed_from] = block[:, node]


def run_async(g: WeightedGraph, inputs, state: AsyncState, schedule: Schedule, total_steps: int,
              weights: NodeWeights | None = None, record_log: bool = False,
              snapshot_steps=(), until_round: int | None = None) -> AsyncTrace:
    """Run ``total_steps`` atomic steps of the register algorithm.

    With ``until_round`` the run stops right after the step that closes that
    round (counted over the state's whole history), or after ``total_steps``,
    whichever comes first.

    ``inputs`` is an InputModel or InputSequence (anything with ``rows``).
    ``state`` is copied, never mutated. Snapshots are taken *before* the step
    with the given index, i.e. after that many steps have been executed.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    layout = AsyncLayout.from_graph(g, weights)
    if schedule.n != g.n:
        raise DimensionMismatch("schedule and graph disagree on the number of nodes")
    init = state.copy()
    st = state.copy()
    window = _InputWindow(inputs, g.n)

    b_steps: list[np.ndarray] = []
    b_outs: list[np.ndarray] = []
    logs: dict[str, list] = {k: [] for k in ("node", "line", "slot", "value", "src")}
    snaps = sorted({int(s) for s in snapshot_steps if 0 <= int(s) <= total_steps})
    snapshots = {}

    start_step = st.step
    done_steps = 0
    while done_steps < total_steps:
        while snaps and snaps[0] <= done_steps:
            snapshots[snaps.pop(0)] = st.copy()
        stop = min(total_steps, done_steps + CHUNK)
        if snaps:
            stop = min(stop, snaps[0])
        m = stop - done_steps
        sched = schedule.take(m)
        cap = m // g.n + 2
        bs = np.empty(cap, dtype=np.int64)
        bo = np.empty((cap, g.n))
        bc = np.zeros(1, dtype=np.int64)
        lsize = m if record_log else 0
        lg = (np.empty(lsize, dtype=np.int64), np.empty(lsize, dtype=np.int8),
              np.empty(lsize, dtype=np.int64), np.empty(lsize), np.empty(lsize, dtype=np.int64))
        lc = np.zeros(1, dtype=np.int64)
        status, used = _kernel(
            sched, layout.self_w, layout.read_ptr, layout.read_w, layout.write_ptr,
            layout.write_slot, layout.n_writes, layout.sweep_len,
            st.pc, st.acc, st.out, st.regs, st.reg_wstep, st.reg_wround, st.sweeps,
            st.sweep_start, st.done, st.counters,
            window.buf, window.base, window.rows,
            bs, bo, bc, record_log, *lg, lc, -1 if until_round is None else int(until_round))
        b_steps.append(bs[:bc[0]].copy())
        b_outs.append(bo[:bc[0]].copy())
        if record_log:
            for key, arr in zip(("node", "line", "slot", "value", "src"), lg):
                logs[key].append(arr[:lc[0]].copy())
        done_steps += used
        if status == _STOPPED:
            schedule.give_back(sched[used:])
            break
        if status == _NEED_INPUT:
            schedule.give_back(sched[used:])
            node = int(sched[used])
            window.refill(node, int(st.sweeps[node]) + 1)
    while snaps and snaps[0] <= done_steps:
        snapshots[snaps.pop(0)] = st.copy()

    boundary_steps = np.concatenate(b_steps) if b_steps else np.zeros(0, dtype=np.int64)
    boundary_outputs = np.vstack(b_outs) if b_outs else np.zeros((0, g.n))
    log = None
    if record_log:
        log = {k: np.concatenate(v) for k, v in logs.items()}
        log["step"] = np.arange(start_step, start_step + done_steps, dtype=np.int64)
    return AsyncTrace(layout=layout, initial=init, final=st, total_steps=done_steps,
                      boundary_steps=boundary_steps, boundary_outputs=boundary_outputs,
                      log=log, snapshots=snapshots)


def round_length_bound(layout: AsyncLayout, schedule: Schedule) -> int:
    """Upper bound on the steps one round can take under ``schedule``.

    A node may have just started a sweep when the previous round closed; that
    sweep does not count, so up to 2L - 1 of its own steps fall in the round,
    and the schedule grants at least one step per window.
    """
    longest = int(layout.sweep_len.max())
    if schedule.policy == "round-robin":
        return (2 * longest - 1) * layout.n
    return (2 * longest - 1) * schedule.window


def run_async_rounds(g: WeightedGraph, inputs, state: AsyncState, schedule: Schedule, rounds: int,
                     weights: NodeWeights | None = None, record_log: bool = False) -> AsyncTrace:
    """Run until ``rounds`` more rounds have closed, then stop."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    layout = AsyncLayout.from_graph(g, weights)
    budget = (rounds + 1) * round_length_bound(layout, schedule)
    target = state.rounds_completed + rounds
    trace = run_async(g, inputs, state, schedule, budget, weights=weights,
                      record_log=record_log, until_round=target)
    if trace.final.rounds_completed < target:
        raise RuntimeError("schedule did not close the requested rounds within its fairness bound")
    return trace


def detect_rounds(trace: AsyncTrace) -> np.ndarray:
    """Round boundaries recomputed from the step log alone.

    A round closes at the first step at which every node has completed a
    full sweep (lines 02-07) that started after the previous boundary.
    Returns the step indices of the closing steps.
    """
    if trace.log is None:
        raise ValueError("detect_rounds needs a trace recorded with record_log=True")
    lay = trace.layout
    nodes = trace.log["node"]
    steps = trace.log["step"]
    pc = trace.initial.pc.copy()
    started = trace.initial.sweep_start.copy()
    last = int(trace.initial.counters[2])
    completed = {int(i) for i in np.flatnonzero(trace.initial.done)}
    out = []
    for t, i in zip(steps.tolist(), nodes.tolist()):
        if pc[i] == 0:
            started[i] = t
        pc[i] += 1
        if pc[i] == lay.sweep_len[i]:
            pc[i] = 0
            if started[i] > last:
                completed.add(i)
                if len(completed) == lay.n:
                    out.append(t)
                    last = t
                    completed = set()
    return np.array(out, dtype=np.int64)


def round_of_steps(boundaries: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Round index (1-based) of each step; step -1 (initial contents) maps to 0."""
    steps = np.asarray(steps)
    r = np.searchsorted(boundaries, steps, side="left") + 1
    return np.where(steps < 0, 0, r)


def staleness_violations(trace: AsyncTrace, boundaries: np.ndarray | None = None) -> int:
    """Count reads whose source write is more than one round older than the read."""
    if trace.log is None:
        raise ValueError("staleness check needs a trace recorded with record_log=True")
    if boundaries is None:
        boundaries = detect_rounds(trace)
    reads = trace.log["line"] == LINE_READ
    read_round = round_of_steps(boundaries, trace.log["step"][reads])
    write_round = round_of_steps(boundaries, trace.log["src"][reads])
    return int(np.sum(write_round < read_round - 1))


def update_times(trace: AsyncTrace, node: int) -> np.ndarray:
    """Steps at which ``node`` wrote a fresh value to its registers (T^i)."""
    lg = trace.log
    mask = (lg["node"] == node) & (lg["line"] == LINE_WRITE)
    return lg["step"][mask]


def last_read_times(trace: AsyncTrace, node: int) -> dict[int, np.ndarray]:
    """For each neighbour j, (read step, source write step) pairs seen by ``node``."""
    lg = trace.log
    lay = trace.layout
    mask = (lg["node"] == node) & (lg["line"] == LINE_READ)
    res: dict[int, list] = {}
    for t, slot, src in zip(lg["step"][mask], lg["slot"][mask], lg["src"][mask]):
        res.setdefault(int(lay.read_src[slot]), []).append((int(t), int(src)))
    return {j: np.array(v, dtype=np.int64) for j, v in res.items()}
