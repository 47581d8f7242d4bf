"""Euclidean TSP instances, exact solvers, heuristics and tour utilities."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kernels

__all__ = [
    "TspInstance",
    "Tour",
    "InvalidTourError",
    "SolverLimitError",
    "HELD_KARP_CAP",
    "BRUTE_FORCE_CAP",
    "EXACT_MATCHING_CAP",
    "derive_seed",
    "generate_instance",
    "distance_matrix",
    "tour_length",
    "held_karp",
    "brute_force",
    "christofides",
    "nearest_neighbor",
    "canonicalize_tour",
    "solve",
    "SOLVERS",
    "generate_dataset",
]

HELD_KARP_CAP = 20
BRUTE_FORCE_CAP = 10
EXACT_MATCHING_CAP = 16


class InvalidTourError(ValueError):
    pass


class SolverLimitError(RuntimeError):
    """Instance too large for the requested exact method."""


@dataclass(frozen=True)
class TspInstance:
    points: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"points must have shape (n >= 2, 2), got {pts.shape}")
        if np.any(pts < 0) or np.any(pts > 1):
            raise ValueError("city coordinates must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Tour:
    order: np.ndarray
    length: float
    info: dict = field(default_factory=dict, compare=False)


def derive_seed(base: int, *keys: int) -> int:
    """Deterministic 63-bit child seed for ``(base, *keys)``."""
    state = np.random.SeedSequence(base, spawn_key=tuple(int(k) for k in keys)).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


def generate_instance(n: int, seed: int) -> TspInstance:
    """n uniform cities in the unit square from a Philox stream keyed by (seed, n)."""
    if n < 2:
        raise ValueError(f"an instance needs at least 2 cities, got {n}")
    key = np.array([seed % 2**64, n], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return TspInstance(rng.random((n, 2)), seed)


def distance_matrix(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.ascontiguousarray(np.sqrt((diff * diff).sum(axis=-1)))


def _points(instance) -> np.ndarray:
    return instance.points if isinstance(instance, TspInstance) else np.asarray(instance, dtype=np.float64)


def _validate(order, n: int) -> np.ndarray:
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise InvalidTourError(f"order must be a permutation of range({n}), got {order.tolist()}")
    return order


def tour_length(instance, order) -> float:
    """Closed-cycle Euclidean length, return edge included."""
    pts = np.ascontiguousarray(_points(instance))
    order = _validate(order, pts.shape[0])
    return float(kernels.closed_tour_length(pts, np.ascontiguousarray(order, dtype=np.int64)))


def _tour(instance, order, **info) -> Tour:
    order = np.asarray(order, dtype=np.int64)
    return Tour(order, tour_length(instance, order), info)


def held_karp(instance, cap: int = HELD_KARP_CAP) -> Tour:
    """Exact tour by dynamic programming over (visited set, last city)."""
    pts = _points(instance)
    n = pts.shape[0]
    if n > cap:
        raise SolverLimitError(
            f"Held-Karp needs O(2^n n) memory; n={n} exceeds the cap of {cap}. "
            "Use christofides or nearest_neighbor for larger instances."
        )
    if n == 2:
        return _tour(instance, [0, 1], solver="held-karp")
    _, order = kernels.held_karp(distance_matrix(pts))
    return _tour(instance, order, solver="held-karp")


def brute_force(instance, cap: int = BRUTE_FORCE_CAP) -> Tour:
    """Exact tour by enumerating all orders that start at city 0."""
    pts = _points(instance)
    n = pts.shape[0]
    if n > cap:
        raise SolverLimitError(f"brute force enumerates (n-1)! tours; n={n} exceeds the cap of {cap}")
    dist = distance_matrix(pts)
    perms = np.array(list(itertools.permutations(range(1, n))), dtype=np.int64)
    total = dist[0, perms[:, 0]]
    for k in range(n - 2):
        total = total + dist[perms[:, k], perms[:, k + 1]]
    total = total + dist[perms[:, -1], 0]
    best = int(np.argmin(total))
    return _tour(instance, np.concatenate([[0], perms[best]]), solver="brute")


def _minimum_spanning_tree(dist: np.ndarray) -> list[tuple[int, int]]:
    n = dist.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = dist[0].copy()
    link = np.zeros(n, dtype=np.int64)
    edges = []
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        v = int(np.argmin(cand))
        edges.append((int(link[v]), v))
        in_tree[v] = True
        closer = dist[v] < best
        best = np.where(closer, dist[v], best)
        link = np.where(closer, v, link)
    return edges


def _greedy_matching(dist: np.ndarray, nodes: list[int]) -> list[tuple[int, int]]:
    pairs = sorted(
        (dist[a, b], a, b) for idx, a in enumerate(nodes) for b in nodes[idx + 1 :]
    )
    used: set[int] = set()
    out = []
    for _, a, b in pairs:
        if a not in used and b not in used:
            used.update((a, b))
            out.append((a, b))
    return out


def _euler_circuit(n: int, edges: list[tuple[int, int]], start: int = 0) -> list[int]:
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for e, (a, b) in enumerate(edges):
        adj[a].append((b, e))
        adj[b].append((a, e))
    for lst in adj:
        lst.sort(reverse=True)  # pop() yields lowest neighbour first
    used = [False] * len(edges)
    stack, circuit = [start], []
    while stack:
        v = stack[-1]
        while adj[v] and used[adj[v][-1][1]]:
            adj[v].pop()
        if adj[v]:
            w, e = adj[v].pop()
            used[e] = True
            stack.append(w)
        else:
            circuit.append(stack.pop())
    return circuit[::-1]


def christofides(instance, exact_matching_cap: int = EXACT_MATCHING_CAP) -> Tour:
    """MST + min-weight matching of odd vertices + Euler circuit shortcut.

    The matching is exact while the odd set has at most
    ``exact_matching_cap`` vertices, greedy beyond; ``info["matching"]``
    records which ("exact" or "approximate").
    """
    pts = _points(instance)
    n = pts.shape[0]
    if n < 3:
        raise ValueError(f"christofides needs n >= 3, got {n}")
    dist = distance_matrix(pts)
    tree = _minimum_spanning_tree(dist)
    degree = np.zeros(n, dtype=np.int64)
    for a, b in tree:
        degree[a] += 1
        degree[b] += 1
    odd = [int(v) for v in np.flatnonzero(degree % 2)]
    if len(odd) <= exact_matching_cap:
        sub = np.ascontiguousarray(dist[np.ix_(odd, odd)])
        _, local = kernels.matching(sub)
        matched = [(odd[i], odd[j]) for i, j in local]
        kind = "exact"
    else:
        matched = _greedy_matching(dist, odd)
        kind = "approximate"
    circuit = _euler_circuit(n, tree + matched)
    seen: set[int] = set()
    order = [v for v in circuit if not (v in seen or seen.add(v))]
    return _tour(instance, order, solver="christofides", matching=kind)


def nearest_neighbor(instance, start_index: int = 0) -> Tour:
    """Greedy tour: always move to the closest unvisited city (lowest index on ties)."""
    pts = _points(instance)
    n = pts.shape[0]
    if not 0 <= start_index < n:
        raise IndexError(f"start_index {start_index} out of range for {n} cities")
    dist = distance_matrix(pts)
    visited = np.zeros(n, dtype=bool)
    order = [start_index]
    visited[start_index] = True
    for _ in range(n - 1):
        cur = order[-1]
        nxt = int(np.argmin(np.where(visited, np.inf, dist[cur])))
        order.append(nxt)
        visited[nxt] = True
    return _tour(instance, order, solver="nearest-neighbor")


def canonicalize_tour(instance, order) -> np.ndarray:
    """Pick one of the 2n rotations/reflections of a cycle, based on content.

    The tour starts at the lexicographically smallest (x, y) city and heads
    toward whichever neighbour is lexicographically smaller. Equivalently
    the chosen representative has the smallest coordinate sequence; exact
    coordinate ties fall through to later cities and finally to indices.
    """
    pts = _points(instance)
    n = pts.shape[0]
    order = _validate(order, n)
    keys = [tuple(map(float, p)) for p in pts]
    best = None
    for seq in (order, order[::-1]):
        for r in range(n):
            cand = np.roll(seq, -r)
            key = ([keys[c] for c in cand], cand.tolist())
            if best is None or key < best[0]:
                best = (key, cand)
    return np.array(best[1], dtype=np.int64)


SOLVERS = {
    "held-karp": held_karp,
    "brute": brute_force,
    "christofides": christofides,
    "nearest-neighbor": nearest_neighbor,
}


def solve(instance, solver: str = "held-karp") -> Tour:
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    return fn(instance)


def _labelled(args):
    n, seed, solver = args
    inst = generate_instance(n, seed)
    tour = solve(inst, solver)
    return inst, canonicalize_tour(inst, tour.order)


def generate_dataset(n_min: int, n_max: int, count_per_n: int, seed: int, solver: str = "held-karp",
                     threads: int = 1, progress=None):
    """Labelled instances for every n in [n_min, n_max], canonical targets.

    Instance k of size n uses seed ``derive_seed(seed, n, k)``, so the
    output does not depend on ``threads``. Yields ``OrderingExample``s.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .data import OrderingExample

    cap = {"held-karp": HELD_KARP_CAP, "brute": BRUTE_FORCE_CAP}.get(solver)
    if cap is not None and n_max > cap:
        raise SolverLimitError(f"solver {solver!r} is capped at n={cap}; got --n-max {n_max}. Use christofides.")
    if solver == "christofides" and n_min < 3:
        raise ValueError("christofides needs n >= 3")
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}")
    if n_min < 2 or n_max < n_min:
        raise ValueError(f"invalid size range [{n_min}, {n_max}]")
    jobs = [(n, derive_seed(seed, n, k), solver) for n in range(n_min, n_max + 1) for k in range(count_per_n)]
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    results = pool.map(_labelled, jobs, chunksize=64) if pool else map(_labelled, jobs)
    try:
        for done, ((n, s, _), (inst, order)) in enumerate(zip(jobs, results), 1):
            if progress is not None:
                progress(done, len(jobs))
            yield OrderingExample(inst.points, order, {"seed": s, "solver": solver})
    finally:
        if pool:
            pool.shutdown()
