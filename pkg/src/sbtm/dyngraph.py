"""Discrete-time dynamic networks: storage, ingestion, filtering and block cells.

Snapshots share one global node index. A node that is inactive at step ``t``
has an all-zero row and column in ``W^t``. Steps are 1-based in every public
function (``t=1`` is the first snapshot) to match the model's notation;
arrays are 0-based internally.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class NetworkError(ValueError):
    """Raised for malformed or empty network data."""


class EdgeListParseError(NetworkError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line.rstrip()!r}")
        self.lineno = lineno


@dataclass(frozen=True)
class DynamicNetwork:
    """Aligned sequence of binary adjacency snapshots.

    ``snapshots`` has shape ``(T, N, N)`` and dtype ``int8``; ``activity`` has
    shape ``(T, N)``. Undirected networks are stored symmetrically.
    """

    snapshots: np.ndarray
    node_ids: tuple
    activity: np.ndarray
    directed: bool = True

    def __post_init__(self):
        W = np.asarray(self.snapshots, dtype=np.int8)
        if W.ndim != 3 or W.shape[1] != W.shape[2]:
            raise NetworkError(f"snapshots must be (T, N, N), got {W.shape}")
        act = np.asarray(self.activity, dtype=bool)
        if act.shape != W.shape[:2]:
            raise NetworkError("activity shape does not match snapshots")
        if len(self.node_ids) != W.shape[1]:
            raise NetworkError("node_ids length does not match snapshots")
        if np.any((W != 0) & (W != 1)):
            raise NetworkError("snapshots must be 0/1")
        idx = np.arange(W.shape[1])
        if np.any(W[:, idx, idx]):
            raise NetworkError("self-edges are not allowed")
        inactive = ~act
        if np.any(W.any(axis=2) & inactive) or np.any(W.any(axis=1) & inactive):
            raise NetworkError("inactive nodes must have empty rows and columns")
        if not self.directed and np.any(W != W.transpose(0, 2, 1)):
            raise NetworkError("undirected snapshots must be symmetric")
        W.setflags(write=False)
        act.setflags(write=False)
        object.__setattr__(self, "snapshots", W)
        object.__setattr__(self, "activity", act)
        object.__setattr__(self, "node_ids", tuple(self.node_ids))

    @property
    def T(self) -> int:
        return self.snapshots.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.snapshots.shape[1]

    def W(self, t: int) -> np.ndarray:
        """Adjacency matrix at 1-based step ``t``."""
        return self.snapshots[t - 1]

    def active(self, t: int) -> np.ndarray:
        return self.activity[t - 1]

    def density(self, t: int) -> float:
        n = int(self.active(t).sum())
        if n < 2:
            return 0.0
        return float(self.W(t).sum()) / (n * (n - 1))

    def subset(self, keep: np.ndarray) -> "DynamicNetwork":
        keep = np.asarray(keep, dtype=bool)
        idx = np.flatnonzero(keep)
        return DynamicNetwork(
            self.snapshots[:, idx][:, :, idx],
            tuple(self.node_ids[i] for i in idx),
            self.activity[:, idx],
            self.directed,
        )

    @classmethod
    def from_snapshots(cls, snapshots, activity=None, node_ids=None, directed=True):
        """Build from raw matrices; nodes with any edge at ``t`` are active."""
        W = np.asarray(snapshots, dtype=np.int8)
        if activity is None:
            activity = W.any(axis=2) | W.any(axis=1)
        if node_ids is None:
            node_ids = tuple(range(W.shape[1]))
        return cls(W, tuple(node_ids), np.asarray(activity, dtype=bool), directed)


@dataclass(frozen=True)
class ClassSequence:
    """Per-step class labels ``c^t``; 0 marks an inactive node, else 1..k."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 2:
            raise ValueError("labels must have shape (T, N)")
        if lab.size and (lab.min() < 0 or lab.max() > self.k):
            raise ValueError(f"labels must lie in 0..{self.k}")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def T(self) -> int:
        return self.labels.shape[0]

    def at(self, t: int) -> np.ndarray:
        return self.labels[t - 1]

    def check_consistent(self, net: DynamicNetwork) -> None:
        if self.labels.shape != net.activity.shape:
            raise ValueError("class sequence shape does not match network")
        if np.any((self.labels == 0) == net.activity):
            raise ValueError("class 0 must coincide exactly with inactive nodes")


# ---------------------------------------------------------------------------
# ingestion


_DURATION_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*([smhdw]?)\s*$")
_UNIT_SECONDS = {"": 1, "s": 1, "m": 60, "h": 3600, "d": 86400, "w": 604800}


def parse_duration(value) -> float:
    """Window length as a number, or a string such as ``"90d"`` / ``"12h"``.

    Suffixed values are converted to seconds, which is the unit used for
    ISO-8601 timestamps.
    """
    if isinstance(value, (int, float)):
        return float(value)
    m = _DURATION_RE.match(str(value))
    if not m:
        raise ValueError(f"cannot parse duration {value!r}")
    return float(m.group(1)) * _UNIT_SECONDS[m.group(2)]


def parse_timestamp(text: str) -> float:
    text = text.strip()
    try:
        return float(int(text))
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    return dt.timestamp()


def _sort_ids(ids: Iterable[str]) -> list:
    ids = list(ids)
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


def _read_records(lines: Iterable[str]):
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 3:
            parts = line.split()
        if len(parts) != 3:
            raise EdgeListParseError(lineno, line, "expected timestamp, src, dst")
        try:
            ts = parse_timestamp(parts[0])
        except ValueError:
            raise EdgeListParseError(lineno, line, "bad timestamp") from None
        src, dst = parts[1].strip(), parts[2].strip()
        if not src or not dst:
            raise EdgeListParseError(lineno, line, "empty node id")
        yield lineno, ts, src, dst


def load_temporal_edges(
    stream: Iterable[str],
    window,
    origin: float | None = None,
    directed: bool = True,
    activity_stream: Iterable[str] | None = None,
    complete_windows_only: bool = False,
) -> DynamicNetwork:
    """Bucket ``timestamp<TAB>src<TAB>dst`` records into consecutive windows.

    An edge exists at step ``t`` iff at least one event falls in window ``t``.
    A node is active at ``t`` iff it takes part in an event in that window or
    is listed in ``activity_stream`` (``timestamp<TAB>node`` lines).
    Events before ``origin`` are dropped. With ``complete_windows_only`` a
    trailing window that ends after the last event is discarded.
    """
    window = parse_duration(window)
    if not window > 0:
        raise ValueError("window length must be positive")
    records = list(_read_records(stream))
    if not records:
        raise NetworkError("no events in edge stream")
    sidecar = []
    if activity_stream is not None:
        for lineno, line in enumerate(activity_stream, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise EdgeListParseError(lineno, line, "expected timestamp, node")
            try:
                sidecar.append((parse_timestamp(parts[0]), parts[1]))
            except ValueError:
                raise EdgeListParseError(lineno, line, "bad timestamp") from None

    times = np.array([r[1] for r in records])
    if origin is None:
        origin = float(times.min())
    steps = np.floor((times - origin) / window).astype(np.int64)
    keep = steps >= 0
    if not keep.all():
        log.warning("dropped %d events before origin", int((~keep).sum()))
    if not keep.any():
        raise NetworkError("no events at or after origin")
    T = int(steps[keep].max()) + 1
    if complete_windows_only:
        last = float(times.max())
        while T > 0 and origin + T * window > last:
            T -= 1
        if T == 0:
            raise NetworkError("no complete window in edge stream")
        keep &= steps < T

    ids = set()
    for (_, _, s, d), ok in zip(records, keep):
        if ok:
            ids.update((s, d))
    side = [(int(math.floor((ts - origin) / window)), n) for ts, n in sidecar]
    side = [(t, n) for t, n in side if 0 <= t < T]
    ids.update(n for _, n in side)
    node_ids = _sort_ids(ids)
    index = {n: i for i, n in enumerate(node_ids)}
    N = len(node_ids)

    W = np.zeros((T, N, N), dtype=np.int8)
    act = np.zeros((T, N), dtype=bool)
    n_self = 0
    for (_, _, s, d), t, ok in zip(records, steps, keep):
        if not ok:
            continue
        i, j = index[s], index[d]
        act[t, i] = act[t, j] = True
        if i == j:
            n_self += 1
            continue
        W[t, i, j] = 1
        if not directed:
            W[t, j, i] = 1
    for t, n in side:
        act[t, index[n]] = True
    if n_self:
        log.warning("ignored %d self-edge events", n_self)
    return DynamicNetwork(W, tuple(node_ids), act, directed)


def write_temporal_edges(net: DynamicNetwork, fh, window=1, origin: float = 0.0) -> None:
    """Emit one event per edge per step at the start of its window."""
    window = parse_duration(window)
    for t in range(1, net.T + 1):
        W = net.W(t)
        ii, jj = np.nonzero(W if net.directed else np.triu(W))
        ts = origin + (t - 1) * window
        ts_txt = str(int(ts)) if float(ts).is_integer() else repr(ts)
        for i, j in zip(ii, jj):
            fh.write(f"{ts_txt}\t{net.node_ids[i]}\t{net.node_ids[j]}\n")


# ---------------------------------------------------------------------------
# on-disk network directory


def save_network(net: DynamicNetwork, path: str) -> None:
    """Write ``meta.json``, ``snapshots.tsv`` (``t i j``) and ``activity.tsv``."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "T": net.T,
        "n_nodes": net.n_nodes,
        "directed": net.directed,
        "node_ids": [str(n) for n in net.node_ids],
    }
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
    with open(os.path.join(path, "snapshots.tsv"), "w") as fh:
        for t in range(1, net.T + 1):
            W = net.W(t)
            ii, jj = np.nonzero(W if net.directed else np.triu(W))
            for i, j in zip(ii, jj):
                fh.write(f"{t}\t{i}\t{j}\n")
    with open(os.path.join(path, "activity.tsv"), "w") as fh:
        for t in range(1, net.T + 1):
            for i in np.flatnonzero(net.active(t)):
                fh.write(f"{t}\t{i}\n")


def _read_table(path):
    with warnings.catch_warnings():
        # an empty table is valid (no edges); loadtxt warns about it
        warnings.simplefilter("ignore", UserWarning)
        return np.loadtxt(path, dtype=np.int64, ndmin=2)


def load_network(path: str) -> DynamicNetwork:
    try:
        with open(os.path.join(path, "meta.json")) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise NetworkError(f"no network at {path}") from None
    T, N, directed = meta["T"], meta["n_nodes"], meta["directed"]
    W = np.zeros((T, N, N), dtype=np.int8)
    act = np.zeros((T, N), dtype=bool)
    snap = _read_table(os.path.join(path, "snapshots.tsv"))
    if snap.size:
        W[snap[:, 0] - 1, snap[:, 1], snap[:, 2]] = 1
        if not directed:
            W[snap[:, 0] - 1, snap[:, 2], snap[:, 1]] = 1
    acts = _read_table(os.path.join(path, "activity.tsv"))
    if acts.size:
        act[acts[:, 0] - 1, acts[:, 1]] = True
    return DynamicNetwork(W, tuple(meta["node_ids"]), act, directed)


def save_classes(classes: ClassSequence, path: str, node_ids: Sequence | None = None) -> None:
    """CSV with columns ``t,node_id,class``; inactive nodes are written as 0."""
    T, N = classes.labels.shape
    node_ids = node_ids if node_ids is not None else range(N)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "node_id", "class"])
        for t in range(T):
            for nid, c in zip(node_ids, classes.labels[t]):
                w.writerow([t + 1, nid, int(c)])


def load_classes(path: str, k: int | None = None) -> ClassSequence:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["t"]), row["node_id"], int(row["class"])))
    if not rows:
        raise NetworkError(f"empty class file {path}")
    T = max(r[0] for r in rows)
    order = list(dict.fromkeys(r[1] for r in rows))
    index = {n: i for i, n in enumerate(order)}
    lab = np.zeros((T, len(order)), dtype=np.int64)
    for t, n, c in rows:
        lab[t - 1, index[n]] = c
    return ClassSequence(lab, int(k if k is not None else lab.max()))


# ---------------------------------------------------------------------------
# preprocessing


def activity_filter(
    net: DynamicNetwork,
    min_active: int = 0,
    min_degree: int = 0,
    degree_mode: str = "union",
    order: str = "joint",
) -> DynamicNetwork:
    """Drop nodes active in fewer than ``min_active`` steps or with aggregate
    in- or out-degree below ``min_degree``.

    ``degree_mode="union"`` counts distinct neighbours in the union graph over
    all steps; ``"sum"`` counts edge-steps. ``order`` is ``"joint"`` (both
    criteria evaluated on the input, applied once), ``"activity-first"`` or
    ``"degree-first"`` (sequential, degree recomputed after the first pass).
    """
    if min_active < 0 or min_degree < 0:
        raise ValueError("thresholds must be non-negative")
    if degree_mode not in ("union", "sum"):
        raise ValueError(f"unknown degree_mode {degree_mode!r}")

    def active_ok(n: DynamicNetwork):
        return n.activity.sum(axis=0) >= min_active

    def degree_ok(n: DynamicNetwork):
        if degree_mode == "union":
            agg = n.snapshots.any(axis=0)
        else:
            agg = n.snapshots.sum(axis=0, dtype=np.int64)
        return (agg.sum(axis=1) >= min_degree) & (agg.sum(axis=0) >= min_degree)

    if order == "joint":
        out = net.subset(active_ok(net) & degree_ok(net))
    elif order == "activity-first":
        out = net.subset(active_ok(net))
        out = out.subset(degree_ok(out))
    elif order == "degree-first":
        out = net.subset(degree_ok(net))
        out = out.subset(active_ok(out))
    else:
        raise ValueError(f"unknown filter order {order!r}")
    if out.n_nodes == 0:
        raise NetworkError("activity filter removed every node")
    return out


# ---------------------------------------------------------------------------
# block cells


@dataclass(frozen=True)
class BlockCells:
    """Active pairs at step ``t`` grouped by current classes and previous edge.

    Per-pair arrays are aligned: ``src[p], dst[p]`` is the pair, ``a, b`` its
    current classes (1..k), ``a_prev, b_prev`` its classes at ``t-1`` (0 for a
    node absent then) and ``u`` the previous edge state. Undirected cells only
    hold unordered pairs, oriented so that ``a <= b``.
    """

    t: int
    k: int
    directed: bool
    src: np.ndarray
    dst: np.ndarray
    a: np.ndarray
    b: np.ndarray
    a_prev: np.ndarray
    b_prev: np.ndarray
    u: np.ndarray
    counts: np.ndarray = field(repr=False)

    def members(self, a: int, b: int, u: int) -> np.ndarray:
        """Indices into the pair arrays belonging to cell ``B_ab^{t|u}``."""
        return np.flatnonzero((self.a == a) & (self.b == b) & (self.u == u))

    def pairs(self, a: int, b: int, u: int) -> list:
        m = self.members(a, b, u)
        return list(zip(self.src[m].tolist(), self.dst[m].tolist()))

    def n(self, a: int, b: int, u: int) -> int:
        return int(self.counts[u, a - 1, b - 1])

    @property
    def n_pairs(self) -> int:
        return self.src.size


def active_pairs(active: np.ndarray, directed: bool):
    idx = np.flatnonzero(active)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    mask = ii != jj if directed else ii < jj
    return ii[mask], jj[mask]


def orient_pairs(a, b, ap, bp, directed: bool):
    """Canonical orientation for undirected pairs: ``a <= b``, and
    ``a_prev <= b_prev`` when ``a == b``. Identity for directed networks."""
    if directed:
        return a, b, ap, bp
    swap = (a > b) | ((a == b) & (ap > bp))
    return (
        np.where(swap, b, a),
        np.where(swap, a, b),
        np.where(swap, bp, ap),
        np.where(swap, ap, bp),
    )


def block_cells(net: DynamicNetwork, classes: ClassSequence, t: int) -> BlockCells:
    if t < 2:
        raise ValueError("block cells need a previous step (t >= 2)")
    if t > net.T:
        raise ValueError(f"t={t} beyond T={net.T}")
    c = classes.at(t)
    cp = classes.at(t - 1)
    active = net.active(t)
    if np.any((c == 0) == active):
        raise ValueError("classes inconsistent with activity at t")
    ii, jj = active_pairs(active, net.directed)
    u = net.W(t - 1)[ii, jj].astype(np.int64)
    a, b, ap, bp = orient_pairs(c[ii], c[jj], cp[ii], cp[jj], net.directed)
    # the source/target orientation follows the class orientation
    if not net.directed:
        swap = (c[ii] > c[jj]) | ((c[ii] == c[jj]) & (cp[ii] > cp[jj]))
        ii, jj = np.where(swap, jj, ii), np.where(swap, ii, jj)
    k = classes.k
    counts = np.zeros((2, k, k), dtype=np.int64)
    np.add.at(counts, (u, a - 1, b - 1), 1)
    return BlockCells(t, k, net.directed, ii, jj, a, b, ap, bp, u, counts)


# ---------------------------------------------------------------------------
# edge durations


def run_lengths(x: np.ndarray) -> list:
    """Lengths of maximal runs of ones in a 0/1 sequence."""
    x = np.asarray(x, dtype=np.int8)
    padded = np.concatenate(([0], x, [0]))
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return (ends - starts).tolist()


def edge_durations(net: DynamicNetwork) -> Counter:
    """Multiset of maximal run lengths over all pairs (one orientation per
    undirected pair). Runs touching the first or last step are not censored."""
    W = net.snapshots
    if not net.directed:
        W = W * np.triu(np.ones(W.shape[1:], dtype=np.int8), 1)
    T = W.shape[0]
    flat = W.reshape(T, -1)
    cols = np.flatnonzero(flat.any(axis=0))
    seq = flat[:, cols].T
    padded = np.zeros((seq.shape[0], T + 2), dtype=np.int8)
    padded[:, 1:-1] = seq
    d = np.diff(padded, axis=1)
    starts = np.nonzero(d == 1)
    ends = np.nonzero(d == -1)
    # nonzero scans row-major, so starts and ends pair up in order
    lengths = ends[1] - starts[1]
    return Counter(lengths.tolist())


def write_durations(durations: Counter, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["duration", "count"])
        for d in sorted(durations):
            w.writerow([d, durations[d]])
