"""Small, deterministic k-means.

Lloyd iterations from k-means++ seeds (finished with Hartigan single-point
transfers), several restarts, silhouette-based choice of k. Inputs here are
tiny (one point per failure category), so the implementation favours exact
reproducibility over speed: random numbers come from SplitMix64 with
restart ``r`` seeded by ``seed + r``, and every sum goes through
:func:`math.fsum`, which makes centroids and inertia independent of point
order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

MASK64 = (1 << 64) - 1

DEFAULT_SEED = 42
DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6

Point = tuple[float, ...]


class ClusteringError(ValueError):
    pass


class KTooLarge(ClusteringError):
    pass


class InvalidK(ClusteringError):
    pass


class TooFewPoints(ClusteringError):
    pass


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014). Output is identical in any language."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        return min(int(self.random() * n), n - 1)


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: tuple[Point, ...]
    assignments: tuple[int, ...]
    inertia: float
    seed: int
    silhouette: Optional[float] = None
    n_iter: int = 0
    restart: int = 0
    history: tuple[float, ...] = field(default=(), repr=False)

    def relabel(self, order: Sequence[int]) -> "ClusterModel":
        """Renumber clusters so that old cluster ``order[i]`` becomes ``i``."""
        new_id = {old: new for new, old in enumerate(order)}
        return replace(
            self,
            centroids=tuple(self.centroids[old] for old in order),
            assignments=tuple(new_id[a] for a in self.assignments),
        )

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "restart": self.restart,
            "n_iter": self.n_iter,
            "inertia": self.inertia,
            "silhouette": self.silhouette,
            "centroids": [list(c) for c in self.centroids],
            "assignments": list(self.assignments),
        }


def as_points(ps) -> tuple[Point, ...]:
    points = tuple(tuple(float(x) for x in p) for p in ps)
    if points:
        d = len(points[0])
        if d == 0:
            raise ClusteringError("points must have at least one dimension")
        for p in points:
            if len(p) != d:
                raise ClusteringError("points must share one dimension")
            if not all(math.isfinite(x) for x in p):
                raise ClusteringError("points must be finite")
    return points


def sq_dist(a: Point, b: Point) -> float:
    return math.fsum((x - y) * (x - y) for x, y in zip(a, b))


def _mean(points: Sequence[Point]) -> Point:
    n = len(points)
    return tuple(math.fsum(col) / n for col in zip(*points))


def inertia_of(points: Sequence[Point], centroids: Sequence[Point], assignments: Sequence[int]) -> float:
    return math.fsum(sq_dist(p, centroids[a]) for p, a in zip(points, assignments))


def kmeans_plus_plus(points: Sequence[Point], k: int, rng: SplitMix64) -> list[Point]:
    n = len(points)
    centers = [points[rng.below(n)]]
    d2 = [sq_dist(p, centers[0]) for p in points]
    while len(centers) < k:
        total = math.fsum(d2)
        if total <= 0.0:
            idx = rng.below(n)
        else:
            target = rng.random() * total
            acc, idx = 0.0, n - 1
            for i, w in enumerate(d2):
                acc += w
                if acc > target and w > 0.0:
                    idx = i
                    break
            while d2[idx] == 0.0:  # rounding pushed us onto a chosen point
                idx -= 1
        centers.append(points[idx])
        d2 = [min(old, sq_dist(p, points[idx])) for old, p in zip(d2, points)]
    return centers


def _assign(points, centroids) -> list[int]:
    out = []
    for p in points:
        best, best_d = 0, sq_dist(p, centroids[0])
        for j in range(1, len(centroids)):
            d = sq_dist(p, centroids[j])
            if d < best_d:
                best, best_d = j, d
        out.append(best)
    return out


def _repair_empty(points, centroids, assign, k) -> None:
    """Give each empty cluster the point farthest from its own centroid."""
    sizes = [0] * k
    for a in assign:
        sizes[a] += 1
    for j in range(k):
        if sizes[j]:
            continue
        far, far_d = -1, -1.0
        for i, p in enumerate(points):
            if sizes[assign[i]] > 1:
                d = sq_dist(p, centroids[assign[i]])
                if d > far_d:
                    far, far_d = i, d
        sizes[assign[far]] -= 1
        assign[far] = j
        sizes[j] = 1
        centroids[j] = points[far]


def _hartigan_pass(points, assign, k) -> bool:
    """Move single points between clusters while that strictly lowers inertia.

    Moving x from cluster a (size n_a) to b changes inertia by
    n_b/(n_b+1)*|x-c_b|^2 - n_a/(n_a-1)*|x-c_a|^2. Lloyd's assignment step
    ignores the size factors, so it can stop where such a move still helps.
    """
    members = [[] for _ in range(k)]
    for i, a in enumerate(assign):
        members[a].append(i)
    centroids = [_mean([points[i] for i in m]) for m in members]
    moved = False
    for i, p in enumerate(points):
        a = assign[i]
        n_a = len(members[a])
        if n_a == 1:
            continue
        leave = n_a / (n_a - 1) * sq_dist(p, centroids[a])
        best, best_cost = a, leave
        for b in range(k):
            if b != a:
                n_b = len(members[b])
                cost = n_b / (n_b + 1) * sq_dist(p, centroids[b])
                if cost < best_cost:
                    best, best_cost = b, cost
        # relative margin keeps rounding noise from cycling points
        if best != a and best_cost < leave * (1.0 - 1e-12):
            members[a].remove(i)
            members[best].append(i)
            assign[i] = best
            centroids[a] = _mean([points[j] for j in members[a]])
            centroids[best] = _mean([points[j] for j in members[best]])
            moved = True
    return moved


def _lloyd(points, centroids, max_iter, tol):
    """Lloyd iterations, polished by Hartigan transfers once they settle.

    Returns centroids, assignments, the inertia after every assignment step
    (non-increasing) and the number of iterations used.
    """
    k = len(centroids)
    centroids = list(centroids)
    history = []
    assign: list[int] = []
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        new_assign = _assign(points, centroids)
        _repair_empty(points, centroids, new_assign, k)
        history.append(inertia_of(points, centroids, new_assign))
        members = [[] for _ in range(k)]
        for p, a in zip(points, new_assign):
            members[a].append(p)
        new_centroids = [_mean(m) for m in members]
        shift = max(math.sqrt(sq_dist(a, b)) for a, b in zip(centroids, new_centroids))
        stable = new_assign == assign
        assign, centroids = new_assign, new_centroids
        if stable or shift < tol:
            if not _hartigan_pass(points, assign, k):
                break
            members = [[] for _ in range(k)]
            for p, a in zip(points, assign):
                members[a].append(p)
            centroids = [_mean(m) for m in members]
            history.append(inertia_of(points, centroids, assign))
    return centroids, assign, history, n_iter


def kmeans_fit(
    ps,
    k: int,
    seed: int = DEFAULT_SEED,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> ClusterModel:
    """Best-of-``restarts`` k-means; ties in inertia go to the earliest restart."""
    points = as_points(ps)
    n = len(points)
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    if k > n:
        raise KTooLarge(f"k={k} exceeds the number of points ({n})")
    if restarts < 1 or max_iter < 1 or not tol > 0:
        raise ClusteringError("restarts and max_iter must be >= 1 and tol > 0")

    best = None
    for r in range(restarts):
        rng = SplitMix64(seed + r)
        init = kmeans_plus_plus(points, k, rng)
        centroids, assign, history, n_iter = _lloyd(points, init, max_iter, tol)
        inertia = inertia_of(points, centroids, assign)
        if best is None or inertia < best.inertia:
            best = ClusterModel(
                k=k,
                centroids=tuple(centroids),
                assignments=tuple(assign),
                inertia=inertia,
                seed=seed,
                n_iter=n_iter,
                restart=r,
                history=tuple(history),
            )
    if 2 <= k <= n - 1:
        best = replace(best, silhouette=silhouette(points, best.assignments))
    return best


def silhouette(ps, assignments: Sequence[int]) -> float:
    """Mean silhouette coefficient; singleton clusters contribute 0."""
    points = as_points(ps)
    n = len(points)
    if len(assignments) != n:
        raise InvalidK("one assignment per point required")
    k = max(assignments) + 1 if n else 0
    if not 2 <= k <= n - 1:
        raise InvalidK(f"silhouette needs 2 <= k <= n-1 (k={k}, n={n})")
    sizes = [0] * k
    for a in assignments:
        if a < 0:
            raise InvalidK("negative cluster index")
        sizes[a] += 1
    if not all(sizes):
        raise InvalidK("every cluster must be nonempty")

    scores = []
    for i, p in enumerate(points):
        own = assignments[i]
        if sizes[own] == 1:
            scores.append(0.0)
            continue
        by_cluster: list[list[float]] = [[] for _ in range(k)]
        for j, q in enumerate(points):
            if j != i:
                by_cluster[assignments[j]].append(math.dist(p, q))
        a = math.fsum(by_cluster[own]) / (sizes[own] - 1)
        b = min(math.fsum(by_cluster[c]) / sizes[c] for c in range(k) if c != own)
        m = max(a, b)
        scores.append((b - a) / m if m > 0 else 0.0)
    return math.fsum(scores) / n


def select_k(
    ps,
    k_min: int = 2,
    k_max: Optional[int] = None,
    seed: int = DEFAULT_SEED,
    restarts: int = DEFAULT_RESTARTS,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> tuple[int, ClusterModel]:
    """Fit every k in ``[k_min, k_max]`` and keep the best silhouette (smaller k on ties)."""
    points = as_points(ps)
    n = len(points)
    if n < 3:
        raise TooFewPoints(f"automatic k needs at least 3 points, got {n}")
    if k_max is None:
        k_max = min(8, n - 1)
    k_max = min(k_max, n - 1)
    if k_min < 2 or k_min > k_max:
        raise InvalidK(f"empty k range [{k_min}, {k_max}]")
    best: Optional[ClusterModel] = None
    for k in range(k_min, k_max + 1):
        model = kmeans_fit(points, k, seed=seed, restarts=restarts, max_iter=max_iter, tol=tol)
        if best is None or model.silhouette > best.silhouette:
            best = model
    return best.k, best
