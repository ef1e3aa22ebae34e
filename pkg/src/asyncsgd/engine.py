"""Execution engine: server/node state machines, audits, and the serial oracle.

Two backends share the same algorithm semantics:

* event-driven (default) -- a single-threaded discrete-event scheduler with a
  seeded priority queue and seeded message delays.  Fully deterministic for a
  given (config, seed), which is what makes the delay audits possible.
* threaded -- real threads and queues, for wall-clock smoke runs only.

The server applies eta_bar_i-scaled round updates to the global model v_hat
and broadcasts (v_hat, k) once round k has been received from every node.
Each node runs local SGD on its shard, gated so that the staleness of its
local model never exceeds the configured delay function.
"""
from __future__ import annotations

import bisect
import heapq
import math
import queue as queue_mod
import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import rng
from .data import AssignmentTable, Partition
from .problems import Problem, grad
from .schedules import (DelayFunction, SampleSchedule, StepSchedule,
                        PER_ITERATION, eval_delay, round_step, sample_size)

GATE_LAG = "lag"  # wait while i > k + d
GATE_TAU = "tau"  # wait while tau(t_glob) < t_delay

BACKEND_EVENT = "event"
BACKEND_THREADED = "threaded"


class EngineError(RuntimeError):
    pass


class DeadlockError(EngineError):
    """All nodes gated with no message in flight."""


class NonFiniteError(EngineError):
    """The model left the representable range."""


# ---------------------------------------------------------------------------
# The ordering map rho
# ---------------------------------------------------------------------------

def rho(table: AssignmentTable, c: int, i: int, h: int) -> int:
    """Global iteration index t of the h-th local step of node c in round i.

    t = sum of earlier row lengths + position of the (h+1)-th occurrence of
    c in row i.
    """
    cum, _occ, pos = table.index()
    if not (0 <= i < table.rounds):
        raise IndexError(f"round {i} out of range")
    by_node = pos[i].get(c)
    if by_node is None or not (0 <= h < len(by_node)):
        raise IndexError(f"label (c={c}, i={i}, h={h}) out of range")
    return int(cum[i] + by_node[h])


def rho_inverse(table: AssignmentTable, t: int):
    """Inverse of rho: global index t back to the label (c, i, h)."""
    cum, occ, _pos = table.index()
    if not (0 <= t < cum[-1]):
        raise IndexError(f"t={t} out of range")
    i = bisect.bisect_right(cum, t) - 1
    off = t - int(cum[i])
    return int(table.rows[i][off]), i, int(occ[i][off])


# ---------------------------------------------------------------------------
# Trace records
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class GradRecord:
    """One gradient computation, with everything the audits need."""

    c: int
    i: int
    h: int
    eta: float
    t_glob: int
    t_delay: int
    bcast_id: int   # broadcast applied to the local model (0 = initial w0)
    acc_round: int  # first local round whose own updates survive in w_hat
    g: Optional[np.ndarray] = None  # only with record_gradients


@dataclass(slots=True)
class BroadcastInfo:
    """Content identifier of broadcast number `bcast_id`.

    The broadcast model contains every update of rounds < k plus the round
    updates listed in `extras` (pairs (i, c) with i >= k already applied).
    """

    bcast_id: int
    k: int
    extras: frozenset


@dataclass
class RunTrace:
    table: AssignmentTable
    sample_sched: SampleSchedule
    records: List[GradRecord] = field(default_factory=list)
    broadcasts: List[BroadcastInfo] = field(default_factory=list)

    def broadcast(self, bcast_id: int) -> BroadcastInfo:
        # id 0 is the initial model (k=0, nothing included)
        return self.broadcasts[bcast_id]


@dataclass
class RunResult:
    w_final: np.ndarray
    v_hat: np.ndarray
    k_final: int
    grads: int
    messages: int
    rounds_completed: dict
    checkpoints: list            # (k, t, model copy) per completed round k
    trace: Optional[RunTrace]
    iterates: list = field(default_factory=list)
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# Serial SGD oracle
# ---------------------------------------------------------------------------

def serial_sgd(problem: Problem, dataset, step_fn: Callable[[int], float],
               K: int, gen: np.random.Generator,
               w0: Optional[np.ndarray] = None,
               record_iterates: bool = False):
    """Plain single-threaded SGD: w_{t+1} = w_t - eta_t * grad f(w_t; xi_t).

    Returns the final iterate, or (final, [w_1 .. w_K]) when recording.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    w = np.zeros(problem.dim) if w0 is None else w0.astype(float).copy()
    history = []
    M = len(dataset)
    for t in range(K):
        x, y = dataset.sample(int(gen.integers(0, M)))
        w = w - step_fn(t) * grad(problem, w, x, y)
        if record_iterates:
            history.append(w.copy())
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("serial SGD produced non-finite iterates")
    return (w, history) if record_iterates else w


def make_step_fn(steps: StepSchedule, samples: SampleSchedule):
    """Per-iteration step function eta(t) matching the round schedule.

    Iteration t gets the round step of the round that contains t, which is
    exactly what a distributed run applies to that gradient.
    """
    def step(t: int) -> float:
        i = 0
        while samples.prefix_sum(i + 1) <= t:
            i += 1
        return round_step(steps, samples, i)
    return step


# ---------------------------------------------------------------------------
# Event-driven backend
# ---------------------------------------------------------------------------

class _Node:
    __slots__ = ("c", "i", "h", "s_ic", "w", "U", "k", "gen", "bcast_id",
                 "acc_round", "waiting", "done_rounds")

    def __init__(self, c: int, dim: int, w0: np.ndarray,
                 gen: np.random.Generator):
        self.c = c
        self.i = 0
        self.h = 0
        self.s_ic = 0
        self.w = w0.copy()
        self.U = np.zeros(dim)
        self.k = 0
        self.gen = gen
        self.bcast_id = 0
        self.acc_round = 0
        self.waiting = False
        self.done_rounds = 0


def run(problem: Problem, partition: Partition, table: AssignmentTable,
        samples: SampleSchedule, steps: StepSchedule,
        delay_fn: Optional[DelayFunction], K: int, seed: int,
        gate: str = GATE_LAG, d: int = 1,
        w0: Optional[np.ndarray] = None,
        checkpoint_interval: int = 1,
        record_trace: bool = True,
        record_gradients: bool = False,
        record_iterates: bool = False,
        audit_ledger: bool = False) -> RunResult:
    """Deterministic event-driven execution of the full protocol.

    Stops after exactly K gradient computations across all nodes.  The
    returned final model is the serialized recursion's w_K: the server
    model with all in-flight and unsent round updates flushed in node-major
    order.
    """
    if K < 1:
        raise EngineError("gradient budget K must be >= 1")
    if gate not in (GATE_LAG, GATE_TAU):
        raise EngineError(f"unknown gate {gate!r}")
    if gate == GATE_TAU and delay_fn is None:
        raise EngineError("the tau gate needs a delay function")

    n = partition.n
    dim = problem.dim
    base_w = np.zeros(dim) if w0 is None else np.asarray(w0, dtype=float)
    per_iter = steps.mode == PER_ITERATION

    inter = rng.stream(seed, rng.INTERLEAVE)
    nodes = [_Node(c, dim, base_w, rng.stream(seed, rng.NODE_SAMPLING, c))
             for c in range(1, n + 1)]
    for nd in nodes:
        nd.s_ic = int(np.sum(table.rows[0] == nd.c)) if table.rounds else 0

    v_hat = base_w.copy()
    k_srv = 0
    H: set = set()            # applied (i, c) pairs with i >= k_srv
    pending: dict = {}        # (i, c) -> scaled payload, sent but not applied
    applied: dict = {}        # audit-ledger copy of applied scaled payloads
    trace = RunTrace(table=table, sample_sched=samples) if record_trace else None
    if trace is not None:
        trace.broadcasts.append(BroadcastInfo(0, 0, frozenset()))
    checkpoints = []
    round_eta = {}            # round -> eta_bar cache

    def eta_bar(i: int) -> float:
        e = round_eta.get(i)
        if e is None:
            e = round_step(steps, samples, i)
            round_eta[i] = e
        return e

    grads = 0
    messages = 0
    bcast_seq = 0
    iterates: list = []
    heap: list = []
    seq = 0

    def push(time: float, kind: str, payload) -> None:
        nonlocal seq
        heapq.heappush(heap, (time, inter.random(), seq, kind, payload))
        seq += 1

    def delay_draw(i: int) -> int:
        return int(inter.integers(0, 2 * max(sample_size(samples, i), 1) + 1))

    def check_ledger() -> None:
        total = base_w.copy()
        for p in applied.values():
            total -= p
        err = np.linalg.norm(v_hat - total)
        scale = max(1.0, float(np.linalg.norm(v_hat)))
        if err > 1e-9 * scale:
            raise EngineError(f"server ledger invariant broken: |v - sum| "
                              f"= {err:.3e}")

    def server_apply(time: float, msg) -> None:
        nonlocal k_srv, bcast_seq
        i, c, payload = msg
        v_hat[:] = v_hat - payload
        H.add((i, c))
        if audit_ledger:
            applied[(i, c)] = payload
            check_ledger()
        pending.pop((i, c), None)
        if not np.all(np.isfinite(v_hat)):
            raise NonFiniteError(f"server model non-finite after round {i} "
                                 f"from node {c}")
        # emit broadcasts for every newly completed round
        while all((k_srv, cc) in H for cc in range(1, n + 1)):
            for cc in range(1, n + 1):
                H.discard((k_srv, cc))
            k_srv += 1
            bcast_seq += 1
            if trace is not None:
                trace.broadcasts.append(
                    BroadcastInfo(bcast_seq, k_srv, frozenset(H)))
            if checkpoint_interval and k_srv % checkpoint_interval == 0:
                checkpoints.append((k_srv, samples.prefix_sum(k_srv),
                                    v_hat.copy()))
            snapshot = v_hat.copy()
            for cc in range(1, n + 1):
                push(time + 1 + delay_draw(k_srv),
                     "bcast", (cc, bcast_seq, k_srv, snapshot))

    def gate_blocked(nd: _Node) -> bool:
        if gate == GATE_LAG:
            return nd.i > nd.k + d
        t_glob = samples.prefix_sum(nd.i + 1) - (nd.s_ic - nd.h) - 1
        t_delay = (samples.prefix_sum(nd.i + 1) - samples.prefix_sum(nd.k)
                   - (nd.s_ic - nd.h))
        return eval_delay(delay_fn, float(max(t_glob, 0))) < t_delay

    def node_step(time: float, nd: _Node) -> None:
        nonlocal grads, messages
        if nd.h >= nd.s_ic:
            # round finished (possibly empty): ship U and advance
            if per_iter:
                payload = nd.U.copy()
            else:
                payload = eta_bar(nd.i) * nd.U
            if not np.all(np.isfinite(payload)):
                raise NonFiniteError(f"node {nd.c} produced a non-finite "
                                     f"round update in round {nd.i}")
            pending[(nd.i, nd.c)] = payload
            messages += 1
            push(time + 1 + delay_draw(nd.i), "update", (nd.i, nd.c, payload))
            nd.done_rounds += 1
            nd.i += 1
            if nd.i >= table.rounds:
                raise EngineError("assignment table exhausted before the "
                                  "gradient budget; build more rounds")
            nd.h = 0
            nd.s_ic = int(np.sum(table.rows[nd.i] == nd.c))
            nd.U = np.zeros(dim)
            push(time + 1, "node", nd.c)
            return
        if gate_blocked(nd):
            nd.waiting = True
            return
        # one gradient computation
        local = partition.local(nd.c)
        x, y = local.sample(int(nd.gen.integers(0, len(local))))
        g = grad(problem, nd.w, x, y)
        if per_iter:
            t_iter = samples.prefix_sum(nd.i) + n * nd.h
            from .schedules import per_iteration_step
            eta = per_iteration_step(steps, t_iter)
        else:
            eta = eta_bar(nd.i)
        if trace is not None:
            t_glob = samples.prefix_sum(nd.i + 1) - (nd.s_ic - nd.h) - 1
            t_delay = (samples.prefix_sum(nd.i + 1)
                       - samples.prefix_sum(nd.k) - (nd.s_ic - nd.h))
            trace.records.append(GradRecord(
                c=nd.c, i=nd.i, h=nd.h, eta=eta, t_glob=t_glob,
                t_delay=t_delay, bcast_id=nd.bcast_id,
                acc_round=nd.acc_round,
                g=g.copy() if record_gradients else None))
        if per_iter:
            nd.U = nd.U + eta * g
        else:
            nd.U = nd.U + g
        nd.w = nd.w - eta * g
        if record_iterates:
            iterates.append(nd.w.copy())
        nd.h += 1
        grads += 1
        if grads < K:
            push(time + 1, "node", nd.c)

    def node_receive(time: float, nd: _Node, bcast_id: int, kb: int,
                     model: np.ndarray) -> None:
        if kb <= nd.k:
            return
        nd.k = kb
        if n > 1:
            # replace the local model, re-applying the current partial round
            if per_iter:
                nd.w = model - nd.U
            else:
                nd.w = model - eta_bar(nd.i) * nd.U
            nd.bcast_id = bcast_id
            nd.acc_round = nd.i
        # with a single node every aggregated update is the node's own, so
        # replacement is a mathematical no-op; skipping it keeps the iterate
        # stream bit-identical to serial SGD
        if nd.waiting:
            nd.waiting = False
            push(time + 1, "node", nd.c)

    for nd in nodes:
        push(0.0, "node", nd.c)

    while grads < K:
        if not heap:
            stuck = {nd.c: {"round": nd.i, "k": nd.k, "waiting": nd.waiting}
                     for nd in nodes}
            raise DeadlockError(
                f"no runnable events with {grads}/{K} gradients done; "
                f"server k={k_srv}, nodes={stuck}")
        time, _prio, _seq, kind, payload = heapq.heappop(heap)
        if kind == "node":
            node_step(time, nodes[payload - 1])
        elif kind == "update":
            server_apply(time, payload)
        else:
            c, bid, kb, model = payload
            node_receive(time, nodes[c - 1], bid, kb, model)

    # serialize: flush in-flight round updates and unsent partials; with a
    # single node its local model already is the exact serial iterate
    if n == 1:
        w_final = nodes[0].w.copy()
    else:
        w_final = v_hat.copy()
        for key in sorted(pending):
            w_final -= pending[key]
        for nd in nodes:
            if nd.h > 0:
                w_final -= nd.U if per_iter else eta_bar(nd.i) * nd.U
    if not np.all(np.isfinite(w_final)):
        raise NonFiniteError("final model non-finite")

    return RunResult(
        w_final=w_final, v_hat=v_hat, k_final=k_srv, grads=grads,
        messages=messages,
        rounds_completed={nd.c: nd.done_rounds for nd in nodes},
        checkpoints=checkpoints, trace=trace, iterates=iterates)


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------

def audit_consistency(trace: RunTrace, df: DelayFunction):
    """Check the staleness contract on every recorded gradient.

    For the gradient at global index t, every update with index strictly
    below t - ceil(tau(t)) must have been included in the local model that
    the gradient was computed on.  Returns (True, None) or (False, first
    violating t).
    """
    table = trace.table
    pfx = trace.sample_sched.prefix_sum
    for rec in trace.records:
        t = rho(table, rec.c, rec.i, rec.h)
        tau = eval_delay(df, float(t))
        upper = t - math.ceil(tau)
        if upper <= 0:
            continue
        info = trace.broadcast(rec.bcast_id)
        base = pfx(info.k)
        for t_prime in range(base, upper):
            cp, ip, hp = rho_inverse(table, t_prime)
            if (ip, cp) in info.extras:
                continue
            if cp == rec.c and (rec.acc_round <= ip < rec.i
                                or (ip == rec.i and hp < rec.h)):
                continue
            return False, t
    return True, None


def audit_gate_invariant(trace: RunTrace, df: DelayFunction):
    """Check t_delay <= tau(t_glob) for every recorded gradient."""
    for rec in trace.records:
        if rec.t_delay > eval_delay(df, float(max(rec.t_glob, 0))):
            return False, rec
    return True, None


def audit_gate_equivalence(run_kwargs: dict, df: DelayFunction) -> bool:
    """Run one seeded configuration under both gates.

    True when the lag gate never admits a gradient that the tau-comparison
    invariant forbids (and the tau gate trivially satisfies it too).
    """
    for gate in (GATE_LAG, GATE_TAU):
        res = run(gate=gate, delay_fn=df, record_trace=True, **run_kwargs)
        ok, _bad = audit_gate_invariant(res.trace, df)
        if not ok:
            return False
    return True


def round_block_sums(trace: RunTrace, upto_round: int) -> dict:
    """Per-round scaled gradient sums reconstructed from a gradient trace.

    Needs record_gradients.  Returns {round: sum of eta * g over the round's
    contiguous global block}, for complete rounds below upto_round.
    """
    sums: dict = {}
    for rec in trace.records:
        if rec.i >= upto_round:
            continue
        if rec.g is None:
            raise EngineError("trace was recorded without gradients")
        if rec.i not in sums:
            sums[rec.i] = np.zeros_like(rec.g)
        sums[rec.i] += rec.eta * rec.g
    return sums


# ---------------------------------------------------------------------------
# Threaded backend (wall-clock smoke runs only)
# ---------------------------------------------------------------------------

def run_threaded(problem: Problem, partition: Partition,
                 table: AssignmentTable, samples: SampleSchedule,
                 steps: StepSchedule, K: int, seed: int, d: int = 1,
                 timeout: float = 60.0) -> RunResult:
    """Real threads and queues; same protocol, no trace, lag gate only.

    Nondeterministic by nature: used to check that the protocol also
    terminates under genuine concurrency, and to measure wall time.
    """
    import time as time_mod

    n = partition.n
    dim = problem.dim
    per_iter = steps.mode == PER_ITERATION
    update_q: queue_mod.Queue = queue_mod.Queue()
    inboxes = [queue_mod.Queue() for _ in range(n)]
    stop = threading.Event()
    lock = threading.Lock()
    counters = {"grads": 0, "messages": 0}
    errors: list = []

    def eta_bar(i: int) -> float:
        return round_step(steps, samples, i)

    v_hat = np.zeros(dim)
    state = {"k": 0, "H": set()}

    def server() -> None:
        while not stop.is_set():
            try:
                i, c, payload = update_q.get(timeout=0.05)
            except queue_mod.Empty:
                continue
            v_hat[:] = v_hat - payload
            state["H"].add((i, c))
            while all((state["k"], cc) in state["H"]
                      for cc in range(1, n + 1)):
                for cc in range(1, n + 1):
                    state["H"].discard((state["k"], cc))
                state["k"] += 1
                snap = v_hat.copy()
                for box in inboxes:
                    box.put((snap, state["k"]))

    def node(c: int) -> None:
        gen = rng.stream(seed, rng.NODE_SAMPLING, c)
        local = partition.local(c)
        w = np.zeros(dim)
        k = 0
        try:
            for i in range(table.rounds):
                if stop.is_set():
                    return
                s_ic = int(np.sum(table.rows[i] == c))
                U = np.zeros(dim)
                for h in range(s_ic):
                    while i > k + d and not stop.is_set():
                        try:
                            model, kb = inboxes[c - 1].get(timeout=0.05)
                        except queue_mod.Empty:
                            continue
                        if kb > k:
                            k = kb
                            if n > 1:
                                w = model - eta_bar(i) * U
                    if stop.is_set():
                        return
                    # drain without blocking so fresh models are still used
                    while True:
                        try:
                            model, kb = inboxes[c - 1].get_nowait()
                        except queue_mod.Empty:
                            break
                        if kb > k:
                            k = kb
                            if n > 1:
                                w = model - eta_bar(i) * U
                    x, y = local.sample(int(gen.integers(0, len(local))))
                    g = grad(problem, w, x, y)
                    eta = eta_bar(i)
                    U = U + g
                    w = w - eta * g
                    with lock:
                        counters["grads"] += 1
                        if counters["grads"] >= K:
                            stop.set()
                update_q.put((i, c, (U * eta_bar(i)) if not per_iter else U))
                with lock:
                    counters["messages"] += 1
            raise EngineError("assignment table exhausted")
        except Exception as exc:  # surfaced to the caller below
            errors.append(exc)
            stop.set()

    t0 = time_mod.monotonic()
    threads = [threading.Thread(target=server, daemon=True)]
    threads += [threading.Thread(target=node, args=(c,), daemon=True)
                for c in range(1, n + 1)]
    for th in threads:
        th.start()
    deadline = t0 + timeout
    while not stop.is_set():
        if time_mod.monotonic() > deadline:
            stop.set()
            raise DeadlockError(f"threaded run exceeded {timeout}s with "
                                f"{counters['grads']}/{K} gradients")
        stop.wait(0.02)
    for th in threads[1:]:
        th.join(timeout=5.0)
    threads[0].join(timeout=5.0)
    if errors:
        raise errors[0]
    if not np.all(np.isfinite(v_hat)):
        raise NonFiniteError("threaded run produced a non-finite model")
    return RunResult(w_final=v_hat.copy(), v_hat=v_hat.copy(),
                     k_final=state["k"], grads=counters["grads"],
                     messages=counters["messages"], rounds_completed={},
                     checkpoints=[], trace=None,
                     wall_time=time_mod.monotonic() - t0)
