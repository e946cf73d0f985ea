"""Inside/outside queries against a failure-surface point cloud.

A query stress is compared with the k nearest cloud points: it is outside
the envelope when its norm reaches the neighbors' mean norm less a margin
``alpha * sigma_range``, where ``sigma_range`` spans all components of all
cloud points.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import kdtree
from .errors import DimensionMismatch, EmptyCloud, KTooLarge, ParseError

SNAPSHOT_MAGIC = b"PCFCDB"
SNAPSHOT_VERSION = 1


class Decision(Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class QueryParams:
    k: int = 4
    epsilon: float = 0.0
    alpha: float = 0.1
    r: float = 2.0
    aggregate: str = "mean"  # or "idw": inverse-distance weighted

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.r >= 1.0:
            raise ValueError("Minkowski order r must be >= 1")
        if self.aggregate not in ("mean", "idw"):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")


@dataclass(frozen=True, eq=False)
class PointCloudDB:
    points: np.ndarray  # (N, d), read-only
    tree: kdtree.KDTree
    norms: np.ndarray  # L2 norm of each point
    sigma_max: float
    sigma_min: float

    @property
    def sigma_range(self) -> float:
        return self.sigma_max - self.sigma_min

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    l2_query: float
    l2_avg_neighbors: float
    margin: float  # alpha * sigma_range
    neighbor_ids: tuple[int, ...]
    neighbor_distances: tuple[float, ...]

    @property
    def outside(self) -> bool:
        return self.decision is Decision.OUTSIDE


@dataclass(frozen=True, eq=False)
class BatchVerdict:
    outside: np.ndarray  # (M,) bool
    l2_query: np.ndarray
    l2_avg_neighbors: np.ndarray
    margin: float
    neighbor_ids: np.ndarray  # (M, k)
    neighbor_distances: np.ndarray

    def __len__(self) -> int:
        return len(self.outside)


def _as_matrix(points) -> np.ndarray:
    if hasattr(points, "array") and callable(points.array):
        points = points.array()
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
    else:
        rows = [np.asarray(p, dtype=float).ravel() for p in points]
        if not rows:
            raise EmptyCloud("point cloud is empty")
        if len({len(r) for r in rows}) != 1:
            raise DimensionMismatch("points do not share one dimension")
        arr = np.vstack(rows)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected an (N, d) array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptyCloud("point cloud is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point cloud contains non-finite values")
    return arr


def build(points) -> PointCloudDB:
    """Index an (N, d) cloud; accepts arrays, sequences of vectors or a FailureSurface."""
    arr = np.array(_as_matrix(points), dtype=np.float64, order="C")
    arr.setflags(write=False)
    norms = np.sqrt(np.einsum("ij,ij->i", arr, arr))
    norms.setflags(write=False)
    return PointCloudDB(arr, kdtree.build_tree(arr), norms, float(arr.max()), float(arr.min()))


def _check_query(db: PointCloudDB, q, k):
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.shape[-1] != db.dimension:
        raise DimensionMismatch(f"query dimension {q.shape[-1]} != cloud dimension {db.dimension}")
    if k > db.n:
        raise KTooLarge(f"k={k} exceeds the {db.n} points in the cloud")
    if k < 1:
        raise ValueError("k must be >= 1")
    return q


def knn(db: PointCloudDB, q, k: int, epsilon: float = 0.0) -> list[tuple[int, float]]:
    """k nearest (index, Euclidean distance) pairs in ascending order."""
    q = _check_query(db, q, k)
    idx, d2 = kdtree.query(db.tree, q, k, epsilon)
    return [(int(i), math.sqrt(d)) for i, d in zip(idx, d2)]


def knn_batch(db: PointCloudDB, Q, k: int, epsilon: float = 0.0):
    """Vectorized :func:`knn` for an (M, d) array; returns (indices, distances)."""
    Q = _check_query(db, np.atleast_2d(Q), k)
    idx, d2 = kdtree.query_batch(db.tree, Q, k, epsilon)
    return idx, np.sqrt(d2)


def minkowski_norm(v, r: float = 2.0) -> float:
    if not r >= 1.0:
        raise ValueError("Minkowski order r must be >= 1")
    a = np.abs(np.asarray(v, dtype=float))
    if math.isinf(r):
        return float(a.max(initial=0.0))
    if r == 2.0:
        return float(np.sqrt(np.sum(a * a)))
    return float(np.sum(a**r) ** (1.0 / r))


def _norms(db: PointCloudDB, r: float) -> np.ndarray:
    if r == 2.0:
        return db.norms
    if math.isinf(r):
        return np.abs(db.points).max(axis=1)
    return np.sum(np.abs(db.points) ** r, axis=1) ** (1.0 / r)


def _aggregate(neighbor_norms, dist, how):
    if how == "mean":
        return neighbor_norms.mean(axis=-1)
    with np.errstate(divide="ignore"):
        w = 1.0 / dist
    exact = np.isinf(w)
    # a coincident neighbor takes all the weight
    w = np.where(exact.any(axis=-1, keepdims=True), exact.astype(float), w)
    return np.sum(w * neighbor_norms, axis=-1) / np.sum(w, axis=-1)


def classify(db: PointCloudDB, q, params: QueryParams = QueryParams()) -> Verdict:
    q = _check_query(db, q, params.k)
    margin = params.alpha * db.sigma_range
    if params.r == 2.0 and params.aggregate == "mean":
        outside, l2q, l2avg, idx, d2 = kdtree.mean_norm_verdict(
            db.tree, db.norms, q, params.k, float(params.epsilon), margin
        )
        return Verdict(
            Decision.OUTSIDE if outside else Decision.INSIDE, l2q, l2avg, margin,
            tuple(idx.tolist()), tuple(np.sqrt(d2).tolist()),
        )
    idx, d2 = kdtree.query(db.tree, q, params.k, params.epsilon)
    dist = np.sqrt(d2)
    l2q = minkowski_norm(q, params.r)
    l2avg = float(_aggregate(_norms(db, params.r)[idx], dist, params.aggregate))
    decision = Decision.OUTSIDE if l2q >= l2avg - margin else Decision.INSIDE
    return Verdict(decision, l2q, l2avg, margin, tuple(map(int, idx)), tuple(map(float, dist)))


def classify_batch(db: PointCloudDB, Q, params: QueryParams = QueryParams()) -> BatchVerdict:
    """Same rule as :func:`classify`, applied to every row of an (M, d) array."""
    Q = _check_query(db, np.atleast_2d(Q), params.k)
    idx, d2 = kdtree.query_batch(db.tree, Q, params.k, params.epsilon)
    dist = np.sqrt(d2)
    if params.r == 2.0:
        l2q = np.sqrt(np.einsum("ij,ij->i", Q, Q))
    else:
        l2q = np.array([minkowski_norm(row, params.r) for row in Q])
    l2avg = _aggregate(_norms(db, params.r)[idx], dist, params.aggregate)
    margin = params.alpha * db.sigma_range
    return BatchVerdict(l2q >= l2avg - margin, l2q, l2avg, margin, idx, dist)


# ----------------------------------------------------------------------------
# snapshot: magic, u16 version, sha256 of payload, payload (npy of points)
# ----------------------------------------------------------------------------


def save_db(db: PointCloudDB, path) -> None:
    buf = io.BytesIO()
    np.save(buf, np.asarray(db.points), allow_pickle=False)
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    Path(path).write_bytes(SNAPSHOT_MAGIC + struct.pack("<H", SNAPSHOT_VERSION) + digest + payload)


def load_db(path) -> PointCloudDB:
    blob = Path(path).read_bytes()
    head = len(SNAPSHOT_MAGIC)
    if blob[:head] != SNAPSHOT_MAGIC:
        raise ParseError(f"{path} is not a point-cloud snapshot")
    (version,) = struct.unpack("<H", blob[head : head + 2])
    if version != SNAPSHOT_VERSION:
        raise ParseError(f"unsupported snapshot version {version}")
    digest, payload = blob[head + 2 : head + 34], blob[head + 34 :]
    if hashlib.sha256(payload).digest() != digest:
        raise ParseError(f"{path}: checksum mismatch")
    return build(np.load(io.BytesIO(payload), allow_pickle=False))
