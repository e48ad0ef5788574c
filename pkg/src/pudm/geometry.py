"""Geometric kernels on (N, 3) point arrays.

Everything here is plain numpy and side-effect free; randomness is always
passed in as a ``numpy.random.Generator``.
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError

DEDUP_TOL = 1e-9
_CHUNK = 2048


def as_cloud(points, name="cloud"):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"{name}: expected shape (N, 3), got {pts.shape}")
    if len(pts) == 0:
        raise ValidationError(f"{name}: empty point cloud")
    if not np.all(np.isfinite(pts)):
        raise ValidationError(f"{name}: non-finite coordinates")
    return pts


@dataclass(frozen=True)
class NormalizationRecord:
    centroid: np.ndarray
    scale: float

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - self.centroid) / self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) * self.scale + self.centroid


def normalize(points):
    """Center on the centroid and scale so the farthest point has norm 1."""
    pts = as_cloud(points)
    centroid = pts.mean(axis=0)
    radius = float(np.linalg.norm(pts - centroid, axis=1).max())
    # coincident points leave a rounding-level radius; treat it as zero
    tiny = 1e-12 * max(1.0, float(np.abs(centroid).max()))
    scale = radius if radius > tiny else 1.0
    rec = NormalizationRecord(centroid=centroid, scale=scale)
    return rec.apply(pts), rec


def denormalize(points, record):
    return record.invert(points)


def farthest_point_sample(points, m, seed=0):
    """Greedy max-min subset of ``m`` indices starting at ``seed``.

    Ties go to the lowest index. Already-selected points are never picked
    again, so ``m == n`` always yields a permutation even with duplicates.
    """
    pts = as_cloud(points)
    n = len(pts)
    if not 1 <= m <= n:
        raise ValidationError(f"farthest_point_sample: need 1 <= m <= {n}, got m={m}")
    if not 0 <= seed < n:
        raise ValidationError(f"farthest_point_sample: seed {seed} out of range for {n} points")
    idx = np.empty(m, dtype=np.int64)
    idx[0] = seed
    dist = ((pts - pts[seed]) ** 2).sum(axis=1)
    dist[seed] = -1.0
    for j in range(1, m):
        nxt = int(np.argmax(dist))
        idx[j] = nxt
        dist = np.minimum(dist, ((pts - pts[nxt]) ** 2).sum(axis=1))
        dist[idx[: j + 1]] = -1.0
    return idx


def pairwise_sq_dists(a, b):
    # explicit differences rather than the |a|^2+|b|^2-2ab expansion: exact ties stay ties
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def knn(reference, queries, k, return_dists=False):
    """Indices (Q, k) of the ``k`` nearest reference points for each query.

    Rows are in ascending distance; equal distances keep the lower index first.
    """
    ref = as_cloud(reference, "reference")
    qry = as_cloud(queries, "queries")
    if not 1 <= k <= len(ref):
        raise ValidationError(f"knn: need 1 <= k <= {len(ref)}, got k={k}")
    out = np.empty((len(qry), k), dtype=np.int64)
    dout = np.empty((len(qry), k), dtype=np.float64)
    for start in range(0, len(qry), _CHUNK):
        d = pairwise_sq_dists(qry[start:start + _CHUNK], ref)
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        out[start:start + _CHUNK] = order
        dout[start:start + _CHUNK] = np.take_along_axis(d, order, axis=1)
    if return_dists:
        return out, dout
    return out


def interpolation_weights(coarse, fine, k=3, floor=1e-8):
    """Inverse-squared-distance weights of the ``k`` nearest coarse points.

    Returns ``(idx, w)`` with shapes (M_fine, k'), where k' = min(k, M_coarse)
    and each row of ``w`` sums to 1. Distances are floored at ``floor`` so a
    fine point sitting on a coarse point gets (numerically) all its weight.
    """
    k = min(k, len(coarse))
    idx, d2 = knn(coarse, fine, k, return_dists=True)
    dist = np.maximum(np.sqrt(d2), floor)
    w = 1.0 / dist ** 2
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def dedup(points, tol=DEDUP_TOL):
    """Drop points within ``tol`` of an earlier point, keeping first occurrences."""
    pts = np.asarray(points, dtype=np.float64)
    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return pts
    keep = np.ones(len(pts), dtype=bool)
    keep[pairs.max(axis=1)] = False
    return pts[keep]


def _midpoint_round(pts, k):
    kk = min(k + 1, len(pts))  # +1: the point itself is its own first neighbour
    nbr = knn(pts, pts, kk)
    mids = 0.5 * (pts[:, None, :] + pts[nbr])
    return dedup(np.concatenate([pts, mids.reshape(-1, 3)]))


def midpoint_interpolate(points, rate, k=8):
    """Densify to exactly ``rate * n`` points from neighbour midpoints.

    The candidate pool is the input plus midpoints to each point's ``k``
    nearest neighbours; the pool is regrown from itself until it is large
    enough, then farthest point sampling (seed 0) trims it to size.
    """
    pts = as_cloud(points)
    if int(rate) != rate or rate < 1:
        raise ValidationError(f"midpoint_interpolate: rate must be an integer >= 1, got {rate}")
    if k < 1:
        raise ValidationError(f"midpoint_interpolate: k must be >= 1, got {k}")
    rate = int(rate)
    if rate == 1:
        return pts.copy()
    target = rate * len(pts)
    pool = dedup(pts)
    while len(pool) < target:
        grown = _midpoint_round(pool, k)
        if len(grown) == len(pool):
            raise ValidationError("midpoint_interpolate: cannot densify a cloud of coincident points")
        pool = grown
    return pool[farthest_point_sample(pool, target, seed=0)]


def perturb(points, tau, kind, rng):
    """Additive noise: N(0, tau^2) for ``gaussian``, U[-tau, tau] for ``uniform``."""
    pts = as_cloud(points)
    if tau < 0:
        raise ValidationError(f"perturb: noise level must be >= 0, got {tau}")
    if kind == "gaussian":
        noise = rng.standard_normal(pts.shape)
    elif kind == "uniform":
        noise = rng.uniform(-1.0, 1.0, pts.shape)
    else:
        raise ValidationError(f"perturb: unknown noise kind {kind!r}")
    if tau == 0:
        return pts.copy()
    return pts + tau * noise
