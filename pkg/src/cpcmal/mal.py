"""Medoid-based active learning.

Pipeline: pairwise distance matrix -> farthest-first seeding ->
alternating k-medoids -> query the medoids of the largest clusters first.
All ties break toward the lowest sample index.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import InputError, ShapeError
from .featmat import as_array

METRICS = ("euclidean", "cosine")
POLICIES = ("medoid_labels", "cluster_labels")
SMALL_N = 16  # below this k_medoids restarts from every possible first pick


@dataclass
class AffinityMatrix:
    distances: np.ndarray
    metric: str

    @property
    def n(self) -> int:
        return self.distances.shape[0]


@dataclass
class ClusteringResult:
    medoids: np.ndarray  # sample index of each cluster's medoid
    labels: np.ndarray  # cluster id per sample
    sizes: np.ndarray
    cost: float
    iterations: int
    converged: bool
    metric: str = ""
    cost_history: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.medoids.size


@dataclass
class QueryPlan:
    indices: np.ndarray  # in query order
    policy: str
    budget: int
    n_medoids: int = 0  # leading entries that are cluster medoids


def affinity(matrix, metric: str = "euclidean") -> AffinityMatrix:
    """Pairwise Euclidean or cosine (1 - cos) distances."""
    x = as_array(matrix)
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}; choose from {METRICS}")
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("affinity needs at least 2 rows")
    if metric == "euclidean":
        d = squareform(pdist(x, "euclidean"))
    else:
        norms = np.linalg.norm(x, axis=1)
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise InputError(f"row {int(bad[0])} has zero norm; cosine distance undefined")
        # 1 - cos(a, b) = |a/|a| - b/|b||^2 / 2, exact zero for parallel rows
        d = squareform(pdist(x / norms[:, None], "sqeuclidean")) / 2.0
        np.clip(d, 0.0, 2.0, out=d)
    return AffinityMatrix(d, metric)


def auto_metric(dim: int) -> str:
    return "euclidean" if dim == 2 else "cosine"


def _distances(A) -> np.ndarray:
    d = A.distances if isinstance(A, AffinityMatrix) else np.asarray(A, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ShapeError(f"distance matrix must be square, got {d.shape}")
    return d


def farthest_first(A, k: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Random first pick, then repeatedly the point farthest from the picked set."""
    d = _distances(A)
    N = d.shape[0]
    if not 1 <= k <= N:
        raise InputError(f"cannot pick {k} seeds from {N} samples")
    return _farthest_from(d, k, int(np.random.default_rng(seed).integers(N)))


def _farthest_from(d: np.ndarray, k: int, first: int) -> np.ndarray:
    N = d.shape[0]
    picks = [first]
    min_dist = d[first].copy()
    taken = np.zeros(N, dtype=bool)
    taken[picks[0]] = True
    for _ in range(k - 1):
        nxt = int(np.argmax(np.where(taken, -np.inf, min_dist)))
        picks.append(nxt)
        taken[nxt] = True
        np.minimum(min_dist, d[nxt], out=min_dist)
    return np.array(picks)


def _assign(d: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    # ties go to the medoid with the lowest sample index
    order = np.argsort(medoids, kind="stable")
    labels = order[np.argmin(d[:, medoids[order]], axis=1)]
    labels[medoids] = np.arange(medoids.size)
    return labels


def _update(d: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    out = np.empty(k, dtype=int)
    members_by = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[members_by], np.arange(k + 1))
    for j in range(k):
        members = members_by[bounds[j] : bounds[j + 1]]  # ascending sample order
        out[j] = members[np.argmin(d[np.ix_(members, members)].sum(axis=1))]
    return out


def _near_second(d: np.ndarray, medoids: np.ndarray):
    """Nearest and second-nearest medoid distance per row, with medoid positions."""
    dm = d[:, medoids]
    rows = np.arange(d.shape[0])
    pos = np.argmin(dm, axis=1)
    near = dm[rows, pos]
    if medoids.size == 1:
        return near, np.full_like(near, np.inf), pos, np.full_like(pos, -1)
    dm[rows, pos] = np.inf
    spos = np.argmin(dm, axis=1)
    return near, dm[rows, spos], pos, spos


def _swap_pass(d: np.ndarray, medoids: np.ndarray, tol: float) -> bool:
    """One eager sweep of medoid/non-medoid swaps; True if any swap lowered the cost.

    The cost change of swapping medoid j for candidate x is
    ``sum_o min(d_ox, near_o) - near_o`` plus, over the members of j,
    ``min(d_ox, second_o) - min(d_ox, near_o)``, so each candidate costs O(N).
    """
    N, k = d.shape[0], medoids.size
    is_medoid = np.zeros(N, dtype=bool)
    is_medoid[medoids] = True
    near, second, pos, spos = _near_second(d, medoids)
    swapped = False
    for x in range(N):
        if is_medoid[x]:
            continue
        dx = d[x]
        a = np.minimum(dx, near)
        delta = (a - near).sum() + np.bincount(pos, weights=np.minimum(dx, second) - a, minlength=k)
        j = int(np.argmin(delta))
        if delta[j] >= -tol:
            continue
        is_medoid[medoids[j]] = False
        medoids[j] = x
        is_medoid[x] = True
        swapped = True
        # rows that had j among their two nearest are recomputed, the rest only compare with x
        redo = (pos == j) | (spos == j)
        keep = ~redo
        closer = keep & (dx < near)
        second[closer], spos[closer] = near[closer], pos[closer]
        near[closer], pos[closer] = dx[closer], j
        mid = keep & ~closer & (dx < second)
        second[mid], spos[mid] = dx[mid], j
        rows = np.flatnonzero(redo)
        if rows.size:
            n2, s2, p2, q2 = _near_second(d[rows], medoids)
            near[rows], second[rows], pos[rows], spos[rows] = n2, s2, p2, q2
    return swapped


def k_medoids(A, k: int, seed: int | np.random.Generator = 0, max_iter: int = 100,
              init: Sequence[int] | None = None, swap: bool = True, n_init: int | None = None) -> ClusteringResult:
    """Alternate nearest-medoid assignment and within-cluster medoid updates.

    Starts from farthest-first seeds (or ``init``) and alternates until the
    assignment no longer changes. With ``swap`` the alternating fixed point
    is then polished by PAM-style medoid/non-medoid swaps, and the two
    phases repeat until neither lowers the cost. ``max_iter`` bounds the
    total number of alternating updates plus swap sweeps.

    ``n_init > 1`` restarts from farthest-first seeds grown from distinct
    random first picks (the first restart matches ``farthest_first(A, k,
    seed)``) and keeps the cheapest result, earliest on ties. By default
    every first pick is tried when N <= SMALL_N, otherwise only one.
    """
    d = _distances(A)
    N = d.shape[0]
    if not 1 <= k <= N:
        raise InputError(f"cannot form {k} clusters from {N} samples")
    if init is not None:
        medoids = np.asarray(init, dtype=int).copy()
        if medoids.size != k or np.unique(medoids).size != k:
            raise InputError("initial medoids must be k distinct indices")
        return _cluster(A, d, medoids, max_iter, swap)
    if n_init is None:
        n_init = N if N <= SMALL_N else 1
    if n_init < 1:
        raise InputError("n_init must be at least 1")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(N))
    others = [i for i in rng.permutation(N) if i != first]
    best = None
    for start in [first] + others[: n_init - 1]:
        res = _cluster(A, d, _farthest_from(d, k, int(start)), max_iter, swap)
        if best is None or res.cost < best.cost:
            best = res
    return best


def _cluster(A, d: np.ndarray, medoids: np.ndarray, max_iter: int, swap: bool) -> ClusteringResult:
    N, k = d.shape[0], medoids.size

    def cost_of(labels):
        return float(d[np.arange(N), medoids[labels]].sum())

    labels = _assign(d, medoids)
    costs = [cost_of(labels)]
    converged = False
    it = 0
    while it < max_iter:
        # alternating phase
        stable = False
        while it < max_iter:
            it += 1
            new_medoids = _update(d, labels, k)
            if np.array_equal(new_medoids, medoids):
                stable = True
                break
            medoids = new_medoids
            new_labels = _assign(d, medoids)
            costs.append(cost_of(new_labels))
            if np.array_equal(new_labels, labels):
                stable = True
                break
            labels = new_labels
        if not stable or not swap or k == N:
            converged = stable
            break
        # swap phase
        tol = 1e-12 * max(costs[-1], 1.0)
        changed = False
        while it < max_iter:
            it += 1
            if not _swap_pass(d, medoids, tol):
                break
            changed = True
            labels = _assign(d, medoids)
            costs.append(cost_of(labels))
        else:
            break
        if not changed:
            converged = True
            break
    sizes = np.bincount(labels, minlength=k)
    metric = A.metric if isinstance(A, AffinityMatrix) else ""
    return ClusteringResult(medoids, labels, sizes, costs[-1], it, converged, metric, costs)


def default_k(n: int) -> int:
    """round(N / 3), at least 1."""
    return max(1, int(np.floor(n / 3.0 + 0.5)))


def query_plan(clusters: ClusteringResult, budget: int, policy: str = "medoid_labels",
               seed: int | np.random.Generator = 0) -> QueryPlan:
    """Medoids by descending cluster size, then seeded random fill if the budget exceeds k."""
    if budget < 1:
        raise InputError(f"budget must be at least 1, got {budget}")
    if policy not in POLICIES:
        raise InputError(f"unknown label policy {policy!r}; choose from {POLICIES}")
    N = clusters.labels.size
    order = sorted(range(clusters.k), key=lambda j: (-clusters.sizes[j], j))
    n_med = min(budget, clusters.k)
    picks = [int(clusters.medoids[j]) for j in order[:n_med]]
    extra = min(budget, N) - n_med
    if extra > 0:
        rest = np.setdiff1d(np.arange(N), clusters.medoids)
        rng = np.random.default_rng(seed)
        picks.extend(int(i) for i in rng.permutation(rest)[:extra])
    return QueryPlan(np.array(picks, dtype=int), policy, int(budget), n_med)


def random_plan(n: int, budget: int, seed: int | np.random.Generator = 0) -> QueryPlan:
    """Uniform random sampling baseline."""
    if budget < 1:
        raise InputError(f"budget must be at least 1, got {budget}")
    rng = np.random.default_rng(seed)
    return QueryPlan(rng.permutation(n)[: min(budget, n)], "medoid_labels", int(budget), 0)


def _lookup(oracle, i: int):
    try:
        value = oracle[i]
    except (KeyError, IndexError):
        raise InputError(f"oracle has no label for sample {i}") from None
    if value is None:
        raise InputError(f"oracle has no label for sample {i}")
    return value


def assign_labels(plan: QueryPlan, clusters: ClusteringResult | None, oracle: Mapping | Sequence | np.ndarray):
    """Resolve queried samples to a labeled training set.

    Returns ``(indices, labels)`` sorted by sample index. Under
    ``cluster_labels`` every member of a queried medoid's cluster inherits
    the medoid's label; extra non-medoid queries always carry their own label.
    """
    labeled: dict[int, object] = {}
    propagate = plan.policy == "cluster_labels" and clusters is not None
    for pos, i in enumerate(plan.indices):
        i = int(i)
        label = _lookup(oracle, i)
        if propagate and pos < plan.n_medoids:
            for m in np.flatnonzero(clusters.labels == clusters.labels[i]):
                labeled.setdefault(int(m), label)
            labeled[i] = label
    for pos, i in enumerate(plan.indices):
        if not (propagate and pos < plan.n_medoids):
            labeled[int(i)] = _lookup(oracle, int(i))
    idx = np.array(sorted(labeled), dtype=int)
    return idx, np.array([labeled[i] for i in idx])


# -- affinity cache ------------------------------------------------------------

_AFF_MAGIC = b"CPCMALAF"


def save_affinity(path, A: AffinityMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(_AFF_MAGIC)
        fh.write(struct.pack("<Q16s", A.n, A.metric.encode()))
        fh.write(np.ascontiguousarray(A.distances, dtype="<f8").tobytes())


def load_affinity(path) -> AffinityMatrix:
    data = Path(path).read_bytes()
    if data[:8] != _AFF_MAGIC:
        raise InputError(f"{path} is not an affinity cache")
    n, metric = struct.unpack_from("<Q16s", data, 8)
    body = np.frombuffer(data, dtype="<f8", offset=32)
    if body.size != n * n:
        raise InputError(f"{path}: expected {n * n} distances, found {body.size}")
    return AffinityMatrix(body.reshape(n, n).copy(), metric.rstrip(b"\0").decode())
