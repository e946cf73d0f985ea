"""Static kd-tree with exact and (1 + eps)-approximate k-nearest-neighbor search.

The tree is built once in numpy (median split along the widest dimension of
each cell's bounding box) and searched by numba kernels.  Search is
best-bin-first over a small explicit stack: a cell is skipped when its
squared distance to the query, inflated by (1 + eps)^2, exceeds the current
k-th best.  With eps = 0 the answer is exact, and equal distances are
ordered by the smaller point index.
"""

from __future__ import annotations

from typing import NamedTuple

import numba
import numpy as np

LEAF_SIZE = 8


class KDTree(NamedTuple):
    points: np.ndarray  # (N, d) in tree order
    perm: np.ndarray  # tree position -> original index
    start: np.ndarray  # per node, range into ``points``
    end: np.ndarray
    left: np.ndarray  # child node ids, -1 for leaves
    right: np.ndarray
    lo: np.ndarray  # (n_nodes, d) bounding boxes
    hi: np.ndarray
    depth: int


def build_tree(points: np.ndarray, leaf_size: int = LEAF_SIZE) -> KDTree:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n, d = pts.shape
    perm = np.arange(n, dtype=np.int64)
    start, end, left, right, lo, hi = [], [], [], [], [], []

    def new_node(s, e):
        sub = pts[perm[s:e]]
        start.append(s)
        end.append(e)
        left.append(-1)
        right.append(-1)
        lo.append(sub.min(axis=0))
        hi.append(sub.max(axis=0))
        return len(start) - 1

    root = new_node(0, n)
    todo = [(root, 0)]
    max_depth = 0
    while todo:
        node, depth = todo.pop()
        max_depth = max(max_depth, depth)
        s, e = start[node], end[node]
        if e - s <= leaf_size:
            continue
        dim = int(np.argmax(hi[node] - lo[node]))
        if hi[node][dim] == lo[node][dim]:
            continue  # all points coincide
        seg = perm[s:e]
        order = np.lexsort((seg, pts[seg, dim]))  # by coordinate, then index
        perm[s:e] = seg[order]
        mid = s + (e - s) // 2
        a, b = new_node(s, mid), new_node(mid, e)
        left[node], right[node] = a, b
        todo.append((b, depth + 1))
        todo.append((a, depth + 1))

    return KDTree(
        np.ascontiguousarray(pts[perm]),
        perm,
        np.array(start, dtype=np.int64),
        np.array(end, dtype=np.int64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(lo, dtype=np.float64),
        np.array(hi, dtype=np.float64),
        max_depth,
    )


@numba.njit(cache=True, inline="always")
def _box_d2(q, lo, hi):
    acc = 0.0
    for j in range(q.shape[0]):
        if q[j] < lo[j]:
            t = lo[j] - q[j]
            acc += t * t
        elif q[j] > hi[j]:
            t = q[j] - hi[j]
            acc += t * t
    return acc


@numba.njit(cache=True)
def _search(q, k, eps, pts, perm, start, end, left, right, lo, hi, depth, out_idx, out_d2):
    INF = np.inf
    for i in range(k):
        out_d2[i] = INF
        out_idx[i] = -1
    inflate = (1.0 + eps) * (1.0 + eps)
    stack_node = np.empty(2 * depth + 4, dtype=np.int64)
    stack_rd = np.empty(2 * depth + 4, dtype=np.float64)
    sp = 0
    stack_node[0] = 0
    stack_rd[0] = _box_d2(q, lo[0], hi[0])
    sp = 1
    d = q.shape[0]
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        if stack_rd[sp] * inflate > out_d2[k - 1]:
            continue
        if left[node] < 0:
            for t in range(start[node], end[node]):
                acc = 0.0
                for j in range(d):
                    diff = q[j] - pts[t, j]
                    acc += diff * diff
                idx = perm[t]
                worst = out_d2[k - 1]
                if acc < worst or (acc == worst and idx < out_idx[k - 1]):
                    # insertion into the sorted (d2, idx) list
                    pos = k - 1
                    while pos > 0 and (
                        acc < out_d2[pos - 1] or (acc == out_d2[pos - 1] and idx < out_idx[pos - 1])
                    ):
                        out_d2[pos] = out_d2[pos - 1]
                        out_idx[pos] = out_idx[pos - 1]
                        pos -= 1
                    out_d2[pos] = acc
                    out_idx[pos] = idx
            continue
        a = left[node]
        b = right[node]
        ra = _box_d2(q, lo[a], hi[a])
        rb = _box_d2(q, lo[b], hi[b])
        if ra <= rb:
            near, far, rn, rf = a, b, ra, rb
        else:
            near, far, rn, rf = b, a, rb, ra
        if rf * inflate <= out_d2[k - 1]:
            stack_node[sp] = far
            stack_rd[sp] = rf
            sp += 1
        if rn * inflate <= out_d2[k - 1]:
            stack_node[sp] = near
            stack_rd[sp] = rn
            sp += 1


@numba.njit(cache=True)
def _search_batch(Q, k, eps, pts, perm, start, end, left, right, lo, hi, depth, out_idx, out_d2):
    for i in range(Q.shape[0]):
        _search(Q[i], k, eps, pts, perm, start, end, left, right, lo, hi, depth, out_idx[i], out_d2[i])


@numba.njit(cache=True)
def _mean_norm_verdict(q, k, eps, margin, norms, pts, perm, start, end, left, right, lo, hi, depth, out_idx, out_d2):
    _search(q, k, eps, pts, perm, start, end, left, right, lo, hi, depth, out_idx, out_d2)
    acc = 0.0
    for j in range(q.shape[0]):
        acc += q[j] * q[j]
    l2q = np.sqrt(acc)
    avg = 0.0
    for i in range(k):
        avg += norms[out_idx[i]]
    avg /= k
    return l2q >= avg - margin, l2q, avg


def mean_norm_verdict(tree: KDTree, norms, q, k, eps, margin):
    """Fused search plus Euclidean-norm comparison for one query."""
    idx = np.empty(k, dtype=np.int64)
    d2 = np.empty(k, dtype=np.float64)
    outside, l2q, avg = _mean_norm_verdict(
        q, k, eps, margin, norms, tree.points, tree.perm, tree.start, tree.end,
        tree.left, tree.right, tree.lo, tree.hi, tree.depth, idx, d2,
    )
    return outside, l2q, avg, idx, d2


def query(tree: KDTree, q: np.ndarray, k: int, eps: float = 0.0):
    """Indices and squared distances of the k nearest points, ascending."""
    idx = np.empty(k, dtype=np.int64)
    d2 = np.empty(k, dtype=np.float64)
    _search(
        np.ascontiguousarray(q, dtype=np.float64), k, float(eps), tree.points, tree.perm,
        tree.start, tree.end, tree.left, tree.right, tree.lo, tree.hi, tree.depth, idx, d2,
    )
    return idx, d2


def query_batch(tree: KDTree, Q: np.ndarray, k: int, eps: float = 0.0):
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    idx = np.empty((len(Q), k), dtype=np.int64)
    d2 = np.empty((len(Q), k), dtype=np.float64)
    _search_batch(
        Q, k, float(eps), tree.points, tree.perm, tree.start, tree.end,
        tree.left, tree.right, tree.lo, tree.hi, tree.depth, idx, d2,
    )
    return idx, d2
