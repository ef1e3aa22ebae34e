"""Data-set ingestion, node partitioning, and the round assignment table.

The assignment table realizes the setup phase: entry a(i, t) = c means the
t-th sample slot of round i belongs to compute node c (nodes are numbered
1..n).  Per-node round sizes s_{i,c} are the occurrence counts in row i.
Everything here is regenerable bit-identically from (seed, config) via the
named Philox streams in :mod:`asyncsgd.rng`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import rng
from .schedules import SampleSchedule, sample_size

UNBIASED = "unbiased"
BIASED_BY_LABEL = "biased_by_label"


class DataFormatError(ValueError):
    """Raised for malformed input data files."""


@dataclass
class DataSet:
    """Dense feature matrix plus {0,1} labels."""

    X: np.ndarray
    y: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or len(self.X) == 0:
            raise DataFormatError("data set must be a non-empty 2-d matrix")
        if len(self.X) != len(self.y):
            raise DataFormatError("feature/label length mismatch")
        if not np.all(np.isfinite(self.X)):
            raise DataFormatError("non-finite feature values")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def sample(self, idx: int):
        return self.X[idx], float(self.y[idx])

    def subset(self, indices: np.ndarray) -> "LocalView":
        return LocalView(self, np.asarray(indices, dtype=np.int64))


@dataclass
class LocalView:
    """Immutable view of a node's local data (index set into the parent)."""

    parent: DataSet
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def X(self) -> np.ndarray:
        return self.parent.X[self.indices]

    @property
    def y(self) -> np.ndarray:
        return self.parent.y[self.indices]

    @property
    def dim(self) -> int:
        return self.parent.dim

    def sample(self, idx: int):
        return self.parent.sample(int(self.indices[idx]))


def parse_libsvm(source, name: str = "") -> DataSet:
    """Parse LIBSVM text ("<label> <idx>:<val> ...", 1-based ascending).

    Labels in {-1,+1} or {0,1} are normalized to {0,1}.  Vectors are padded
    with zeros to the maximum feature index seen anywhere in the file.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [ln.decode() if isinstance(ln, bytes) else ln for ln in source]
    rows: List[dict] = []
    labels: List[int] = []
    max_idx = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            raw = float(parts[0])
        except ValueError:
            raise DataFormatError(f"line {lineno}: bad label {parts[0]!r}")
        if raw in (1.0, +1.0):
            label = 1
        elif raw in (-1.0, 0.0):
            label = 0
        else:
            raise DataFormatError(f"line {lineno}: label {raw} not binary")
        feats = {}
        prev = 0
        for tok in parts[1:]:
            try:
                idx_s, val_s = tok.split(":", 1)
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise DataFormatError(f"line {lineno}: bad feature {tok!r}")
            if idx <= prev:
                raise DataFormatError(
                    f"line {lineno}: non-ascending index {idx}")
            prev = idx
            feats[idx] = val
        max_idx = max(max_idx, prev)
        rows.append(feats)
        labels.append(label)
    if not rows:
        raise DataFormatError("empty input")
    X = np.zeros((len(rows), max_idx))
    for r, feats in enumerate(rows):
        for idx, val in feats.items():
            X[r, idx - 1] = val
    return DataSet(X=X, y=np.asarray(labels, dtype=np.int8), name=name)


def load_libsvm(path: str) -> DataSet:
    with open(path) as fh:
        return parse_libsvm(fh, name=path)


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

@dataclass
class Partition:
    """Disjoint per-node views of the parent data set."""

    parent: DataSet
    locals: List[LocalView]
    mode: str
    p: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return len(self.locals)

    def local(self, c: int) -> LocalView:
        """Local data of node c (1-based, matching the algorithms)."""
        return self.locals[c - 1]

    def summary(self) -> str:
        info = {
            "mode": self.mode,
            "p": self.p.tolist(),
            "sizes": [len(v) for v in self.locals],
            "label_histograms": [
                {"0": int(np.sum(v.y == 0)), "1": int(np.sum(v.y == 1))}
                for v in self.locals
            ],
        }
        return json.dumps(info, sort_keys=True)


def _proportional_sizes(M: int, p: np.ndarray) -> List[int]:
    """Largest-remainder apportionment of M items with weights p."""
    raw = p * M
    sizes = np.floor(raw).astype(int)
    rem = raw - sizes
    for idx in np.argsort(-rem)[: M - int(sizes.sum())]:
        sizes[idx] += 1
    return sizes.tolist()


def partition(ds: DataSet, n: int, mode: str = UNBIASED,
              p: Optional[Sequence[float]] = None, seed: int = 0) -> Partition:
    """Split a data set into n disjoint local views.

    Unbiased: seeded shuffle then contiguous blocks of sizes proportional
    to p.  BiasedByLabel: sort by label and hand label groups to nodes (for
    n larger than the number of labels, each label group is further split
    by a seeded shuffle).
    """
    if n < 1:
        raise ValueError("need at least one node")
    if p is None:
        pv = np.full(n, 1.0 / n)
    else:
        pv = np.asarray(p, dtype=float)
        if len(pv) != n or np.any(pv <= 0) or abs(pv.sum() - 1.0) > 1e-9:
            raise ValueError("p must be a length-n probability vector > 0")
    gen = rng.stream(seed, rng.PARTITION)
    if mode == UNBIASED:
        perm = gen.permutation(len(ds))
        sizes = _proportional_sizes(len(ds), pv)
        views, start = [], 0
        for sz in sizes:
            views.append(ds.subset(perm[start:start + sz]))
            start += sz
    elif mode == BIASED_BY_LABEL:
        label_groups = [np.flatnonzero(ds.y == lbl) for lbl in (0, 1)]
        label_groups = [g for g in label_groups if len(g)]
        if n <= len(label_groups):
            # one label (or label group) per node, round-robin leftovers
            buckets: List[list] = [[] for _ in range(n)]
            for gi, grp in enumerate(label_groups):
                buckets[gi % n].extend(grp.tolist())
            views = [ds.subset(np.asarray(b, dtype=np.int64)) for b in buckets]
        else:
            # labels are insufficient: split each label group by a seeded
            # shuffle, spreading the n nodes across groups
            node_groups = [[] for _ in range(n)]
            per_group = _proportional_sizes(n, np.array(
                [len(g) / len(ds) for g in label_groups]))
            node_id = 0
            for grp, cnt in zip(label_groups, per_group):
                if cnt == 0:
                    raise ValueError("n exceeds distinct usable label groups")
                shuffled = grp[gen.permutation(len(grp))]
                chunks = np.array_split(shuffled, cnt)
                for ch in chunks:
                    node_groups[node_id] = ch
                    node_id += 1
            views = [ds.subset(np.asarray(g, dtype=np.int64))
                     for g in node_groups]
        if any(len(v) == 0 for v in views):
            raise ValueError("n exceeds distinct usable groups for "
                             "biased-by-label partitioning")
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    return Partition(parent=ds, locals=views, mode=mode, p=pv, seed=seed)


# ---------------------------------------------------------------------------
# Assignment table
# ---------------------------------------------------------------------------

@dataclass
class AssignmentTable:
    """Rows of node ids a(i, t) in {1..n}; row i has exactly s_i entries."""

    rows: List[np.ndarray]
    n: int
    p: np.ndarray
    seed: int
    # derived indices (built lazily): per-row cumulative offsets, per-row
    # occurrence counters and per-(row, node) position lists
    _cum: Optional[np.ndarray] = field(default=None, repr=False)
    _occ: Optional[List[np.ndarray]] = field(default=None, repr=False)
    _pos: Optional[List[dict]] = field(default=None, repr=False)

    @property
    def rounds(self) -> int:
        return len(self.rows)

    def row(self, i: int) -> np.ndarray:
        return self.rows[i]

    def _build_index(self) -> None:
        cum = np.zeros(len(self.rows) + 1, dtype=np.int64)
        occ, pos = [], []
        for i, row in enumerate(self.rows):
            cum[i + 1] = cum[i] + len(row)
            counters = {}
            o = np.empty(len(row), dtype=np.int64)
            by_node: dict = {}
            for t, c in enumerate(row):
                c = int(c)
                k = counters.get(c, 0)
                o[t] = k
                counters[c] = k + 1
                by_node.setdefault(c, []).append(t)
            occ.append(o)
            pos.append({c: np.asarray(v, dtype=np.int64)
                        for c, v in by_node.items()})
        self._cum, self._occ, self._pos = cum, occ, pos

    def index(self):
        if self._cum is None:
            self._build_index()
        return self._cum, self._occ, self._pos


def per_node_sizes(table: AssignmentTable, i: int, c: int) -> int:
    """s_{i,c} = |{t : a(i,t) = c}|."""
    return int(np.sum(table.rows[i] == c))


def build_assignment(sched: SampleSchedule, p: Sequence[float], n: int,
                     rounds: int, seed: int,
                     deterministic_split: bool = False) -> AssignmentTable:
    """Draw the a(i, t) table: s_i categorical draws over p per round.

    With deterministic_split the per-node counts are fixed to the
    largest-remainder rounding of p_c * s_i and only the within-row order
    is randomized.
    """
    if rounds < 1:
        raise ValueError("need at least one round")
    pv = np.asarray(p, dtype=float)
    if len(pv) != n or np.any(pv < 0) or abs(pv.sum() - 1.0) > 1e-9:
        raise ValueError("p must be a length-n probability vector")
    gen = rng.stream(seed, rng.ASSIGNMENT)
    rows = []
    nodes = np.arange(1, n + 1)
    for i in range(rounds):
        s_i = sample_size(sched, i)
        if s_i == 0:
            rows.append(np.empty(0, dtype=np.int64))
            continue
        if deterministic_split:
            counts = _proportional_sizes(s_i, pv)
            row = np.repeat(nodes, counts)
            gen.shuffle(row)
        else:
            row = gen.choice(nodes, size=s_i, p=pv)
        rows.append(row.astype(np.int64))
    return AssignmentTable(rows=rows, n=n, p=pv, seed=seed)


def draw_sample(local: LocalView, gen: np.random.Generator):
    """Uniform draw from a node's local view; advances the node stream."""
    if len(local) == 0:
        raise ValueError("cannot sample from an empty local view")
    return local.sample(int(gen.integers(0, len(local))))


# ---------------------------------------------------------------------------
# Synthetic data sets (used by tests and the experiment suites)
# ---------------------------------------------------------------------------

def synthetic_quadratic(M: int, dim: int, seed: int = 0,
                        scale: float = 1.0) -> DataSet:
    """Gaussian feature cloud for the quadratic-mean problem."""
    gen = rng.stream(seed, "synthetic-quadratic")
    X = gen.normal(0.0, scale, size=(M, dim))
    y = (X[:, 0] > 0).astype(np.int8)  # labels unused by the problem
    return DataSet(X=X, y=y, name=f"quadratic-{M}x{dim}")


def synthetic_logistic(M: int, dim: int, seed: int = 0,
                       separation: float = 2.0, noise: float = 1.5,
                       center_seed: Optional[int] = None) -> DataSet:
    """Two overlapping Gaussian clusters with balanced binary labels.

    center_seed pins the cluster geometry independently of the sampling
    seed, so train and held-out sets can share one distribution.
    """
    gen = rng.stream(seed, "synthetic-logistic")
    center_gen = gen if center_seed is None \
        else rng.stream(center_seed, "synthetic-logistic-center")
    half = M // 2
    center = center_gen.normal(0.0, 1.0, size=dim)
    center *= separation / np.linalg.norm(center)
    X0 = gen.normal(0.0, noise, size=(half, dim)) - center
    X1 = gen.normal(0.0, noise, size=(M - half, dim)) + center
    X = np.vstack([X0, X1])
    y = np.concatenate([np.zeros(half, dtype=np.int8),
                        np.ones(M - half, dtype=np.int8)])
    perm = gen.permutation(M)
    return DataSet(X=X[perm], y=y[perm], name=f"logistic-{M}x{dim}")
