"""Two-view epipolar geometry on camera-normalized coordinates.

Conventions
-----------
A correspondence set is an (n, 4) float64 array; row i is ``(x, y, x', y')``
with ``(x, y)`` in the first view and ``(x', y')`` in the second.  Points obey
``x2 = R x1 + t`` between the camera frames, so the essential matrix is
``E = [t]x R`` and satisfies ``x'^T E x = 0`` on noise-free inliers.

Essential matrices are kept at unit Frobenius norm.  Translations are unit
direction vectors; the baseline length is not observable from E.

The symmetric epipolar distance here is the squared algebraic error divided by
the squared line normals of both views (a first-order geometric error).  Both
the scalar and the vectorized form are written so that reversing the views and
transposing E reproduces the forward result bit for bit, which downstream
label generation relies on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AmbiguousCheiralityError,
    DegenerateWeightsError,
    DimMismatchError,
    NoInliersError,
    RankDeficientError,
    TooFewCorrespondencesError,
)

Array = np.ndarray

EPIPOLAR_EPS = 1e-12
WEIGHT_FLOOR = 1e-8
RANK_GAP = 1e-12
GRAD_GAP = 1e-9
_SQRT2 = float(np.sqrt(2.0))


@dataclass
class Pose:
    """Relative pose of view 2 with respect to view 1."""

    r: Array
    t: Array

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)


def cross_matrix(t: Array) -> Array:
    """Skew-symmetric matrix such that cross_matrix(t) @ v == cross(t, v)."""
    t = np.asarray(t, dtype=np.float64)
    return np.array([[0.0, -t[2], t[1]],
                     [t[2], 0.0, -t[0]],
                     [-t[1], t[0], 0.0]])


def rotation_about_axis(axis: Array, angle_rad: float) -> Array:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = cross_matrix(a)
    return np.eye(3) + np.sin(angle_rad) * k + (1.0 - np.cos(angle_rad)) * (k @ k)


def essential_from_pose(pose: Pose) -> Array:
    """E = [t]x R, scaled to unit Frobenius norm."""
    e = cross_matrix(pose.t) @ pose.r
    norm = np.linalg.norm(e)
    if norm == 0.0:
        raise ValueError("zero translation gives no essential matrix")
    return e / norm


def reverse(coords: Array) -> Array:
    """Swap the two views of every correspondence row."""
    coords = np.asarray(coords, dtype=np.float64)
    return coords[:, [2, 3, 0, 1]]


def homogenize(coords: Array) -> tuple[Array, Array]:
    """Split an (n, 4) set into homogeneous (n, 3) view-1 / view-2 points."""
    coords = np.asarray(coords, dtype=np.float64)
    ones = np.ones((coords.shape[0], 1))
    x1 = np.concatenate([coords[:, 0:2], ones], axis=1)
    x2 = np.concatenate([coords[:, 2:4], ones], axis=1)
    return x1, x2


def sym_epipolar_distance(row: Array, e: Array, eps: float = EPIPOLAR_EPS) -> float:
    """Symmetric epipolar distance of a single correspondence.

    Evaluated with scalar arithmetic in an order symmetric under view
    reversal: calling this with ``(reverse(row), e.T)`` returns the exact
    same float.
    """
    x, y, u, v = (float(row[0]), float(row[1]), float(row[2]), float(row[3]))
    # a = E x1, b = E^T x2, expanded by hand so both call directions execute
    # the same multiply/add sequence.
    a0 = e[0, 0] * x + e[0, 1] * y + e[0, 2]
    a1 = e[1, 0] * x + e[1, 1] * y + e[1, 2]
    a2 = e[2, 0] * x + e[2, 1] * y + e[2, 2]
    b0 = e[0, 0] * u + e[1, 0] * v + e[2, 0]
    b1 = e[0, 1] * u + e[1, 1] * v + e[2, 1]
    b2 = e[0, 2] * u + e[1, 2] * v + e[2, 2]
    num = 0.5 * ((u * a0 + v * a1 + a2) + (x * b0 + y * b1 + b2))
    den = (a0 * a0 + a1 * a1) + (b0 * b0 + b1 * b1) + eps
    return float(num * num / den)


def residuals(coords: Array, e: Array, eps: float = EPIPOLAR_EPS) -> Array:
    """Vector of symmetric epipolar distances for all rows.

    Matches :func:`sym_epipolar_distance` row by row up to rounding, and is
    exactly invariant under ``(reverse(coords), e.T)``.
    """
    x1, x2 = homogenize(coords)
    e = np.asarray(e, dtype=np.float64)
    a = x1 @ np.ascontiguousarray(e.T)   # rows: (E x1)^T
    b = x2 @ np.ascontiguousarray(e)     # rows: (E^T x2)^T
    num = 0.5 * ((x2 * a).sum(axis=1) + (x1 * b).sum(axis=1))
    den = (a[:, 0] ** 2 + a[:, 1] ** 2) + (b[:, 0] ** 2 + b[:, 1] ** 2) + eps
    return num * num / den


def _design_matrix(coords: Array) -> Array:
    """(n, 9) rows X_i with X_i . vec(E) = x'^T E x (row-major vec)."""
    x, y = coords[:, 0], coords[:, 1]
    u, v = coords[:, 2], coords[:, 3]
    one = np.ones_like(x)
    return np.column_stack([u * x, u * y, u, v * x, v * y, v, x, y, one])


def _solve_eight_point(coords: Array, weights: Array) -> tuple[Array, dict]:
    """Weighted eight-point solve; returns (E, cache for the gradient)."""
    coords = np.asarray(coords, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n = coords.shape[0]
    if coords.ndim != 2 or coords.shape[1] != 4:
        raise DimMismatchError(f"expected (n, 4) correspondences, got {coords.shape}")
    if w.shape != (n,):
        raise DimMismatchError(f"weights shape {w.shape} does not match {n} rows")
    if n < 8:
        raise TooFewCorrespondencesError(f"need at least 8 rows, got {n}")
    if int(np.sum(w > WEIGHT_FLOOR)) < 8:
        raise DegenerateWeightsError("fewer than 8 weights above 1e-8")

    wsum = float(w.sum())
    wn = w / wsum
    x_mat = _design_matrix(coords)
    m = (x_mat * wn[:, None]).T @ x_mat
    m = 0.5 * (m + m.T)
    lam, q = np.linalg.eigh(m)
    if lam[1] - lam[0] < RANK_GAP:
        raise RankDeficientError("two smallest eigenvalues coincide")
    vec = q[:, 0]
    if vec[np.argmax(np.abs(vec))] < 0.0:
        vec = -vec
    m3 = vec.reshape(3, 3)
    u_svd, s_svd, vt_svd = np.linalg.svd(m3)
    e = (u_svd[:, :2] @ vt_svd[:2, :]) / _SQRT2
    sign = 1.0
    if e.flat[np.argmax(np.abs(e))] < 0.0:
        e = -e
        sign = -1.0
    cache = {"x": x_mat, "wn": wn, "wsum": wsum, "lam": lam, "q": q, "vec": vec,
             "u": u_svd, "s": s_svd, "vt": vt_svd, "sign": sign}
    return e, cache


def weighted_eight_point(coords: Array, weights: Array) -> Array:
    """Essential matrix from weighted correspondences.

    Minimizes the weighted algebraic error: the eigenvector of ``X^T W X``
    with smallest eigenvalue (weights normalized to sum one), reshaped to 3x3
    and projected onto the essential manifold by fixing the singular values
    to ``(1, 1, 0) / sqrt(2)``.  The sign is canonicalized so the largest
    magnitude entry is positive.
    """
    e, _ = _solve_eight_point(coords, weights)
    return e


def eight_point_grad_w(cache: dict, grad_e: Array) -> Array:
    """Gradient of a scalar through :func:`weighted_eight_point` onto weights.

    Combines the first-order eigenvector perturbation of ``X^T W X`` with the
    differential of the rank-2 projection.  The projection differential is
    assembled from the SVD with denominators ``s1+s2``, ``s1^2-s3^2`` and
    ``s2^2-s3^2``, which stay well conditioned near the essential manifold
    (the usual ``1/(s1^2-s2^2)`` factor cancels exactly for fixed singular
    values ``(1, 1, 0)``).  Returns zeros when the spectral gap of the normal
    matrix (or the projection's own gap) falls below 1e-9, so near-degenerate
    solves contribute no gradient instead of an exploding one.
    """
    lam = cache["lam"]
    s = cache["s"]
    n = cache["x"].shape[0]
    if lam[1] - lam[0] < GRAD_GAP or s[1] ** 2 - s[2] ** 2 < GRAD_GAP:
        return np.zeros(n)

    g = cache["sign"] * np.asarray(grad_e, dtype=np.float64)
    u_svd, vt_svd = cache["u"], cache["vt"]
    gbar = u_svd.T @ g @ vt_svd.T
    s1, s2, s3 = s
    k = np.zeros((3, 3))
    c12 = (gbar[0, 1] - gbar[1, 0]) / (s1 + s2)
    k[0, 1] = c12
    k[1, 0] = -c12
    d13 = s1 * s1 - s3 * s3
    k[0, 2] = (gbar[0, 2] * s1 + gbar[2, 0] * s3) / d13
    k[2, 0] = (gbar[0, 2] * s3 + gbar[2, 0] * s1) / d13
    d23 = s2 * s2 - s3 * s3
    k[1, 2] = (gbar[1, 2] * s2 + gbar[2, 1] * s3) / d23
    k[2, 1] = (gbar[1, 2] * s3 + gbar[2, 1] * s2) / d23
    g_vec = ((u_svd @ k @ vt_svd) / _SQRT2).ravel()

    # eigenvector perturbation of the normal matrix
    q, vec = cache["q"], cache["vec"]
    coeff = q.T @ g_vec
    c = np.zeros(9)
    c[1:] = coeff[1:] / (lam[0] - lam[1:])
    qc = q @ c
    x_mat = cache["x"]
    z = (x_mat @ qc) * (x_mat @ vec)
    # through the weight normalization w / sum(w)
    return (z - np.dot(cache["wn"], z)) / cache["wsum"]


def triangulate(coords: Array, r: Array, t: Array) -> Array:
    """Linear (DLT) triangulation of all rows under ``x2 = R x1 + t``.

    Returns (n, 3) points in the first camera frame; rows that triangulate
    to infinity come back non-finite rather than raising.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    p1 = np.concatenate([np.eye(3), np.zeros((3, 1))], axis=1)
    p2 = np.concatenate([r, t.reshape(3, 1)], axis=1)
    a = np.empty((n, 4, 4))
    a[:, 0] = coords[:, 0, None] * p1[2] - p1[0]
    a[:, 1] = coords[:, 1, None] * p1[2] - p1[1]
    a[:, 2] = coords[:, 2, None] * p2[2] - p2[0]
    a[:, 3] = coords[:, 3, None] * p2[2] - p2[1]
    _, _, vt = np.linalg.svd(a)
    hom = vt[:, 3, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        pts = hom[:, :3] / hom[:, 3, None]
    return pts


_W_DECOMP = np.array([[0.0, -1.0, 0.0],
                      [1.0, 0.0, 0.0],
                      [0.0, 0.0, 1.0]])


def recover_pose(e: Array, coords: Array, mask: Array) -> Pose:
    """Pick the (R, t) factorization of E that puts the masked rows in front.

    All four candidate decompositions are triangulated on the rows selected
    by ``mask``; the candidate with the most points at positive depth in both
    views wins.  An exact tie between the two best candidates is refused.
    """
    coords = np.asarray(coords, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    sel = coords[mask]
    if sel.shape[0] == 0:
        raise NoInliersError("empty inlier mask")
    u_svd, _, vt_svd = np.linalg.svd(np.asarray(e, dtype=np.float64))
    if np.linalg.det(u_svd) < 0.0:
        u_svd = -u_svd
    if np.linalg.det(vt_svd) < 0.0:
        vt_svd = -vt_svd
    r1 = u_svd @ _W_DECOMP @ vt_svd
    r2 = u_svd @ _W_DECOMP.T @ vt_svd
    t = u_svd[:, 2]
    candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)]
    counts = []
    for r_cand, t_cand in candidates:
        pts = triangulate(sel, r_cand, t_cand)
        ok = np.isfinite(pts).all(axis=1)
        z1 = pts[:, 2]
        z2 = (pts @ r_cand.T + t_cand)[:, 2]
        counts.append(int(np.sum(ok & (z1 > 0.0) & (z2 > 0.0))))
    order = np.argsort(counts)
    if counts[order[-1]] == counts[order[-2]]:
        raise AmbiguousCheiralityError(f"tied cheirality counts {sorted(counts)}")
    best = candidates[order[-1]]
    return Pose(r=best[0], t=best[1])


def rotation_error_deg(ra: Array, rb: Array) -> float:
    """Geodesic angle between two rotations, in degrees."""
    cosang = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))


def translation_error_deg(ta: Array, tb: Array) -> float:
    """Angle between two translation directions, sign-insensitive, degrees."""
    a = np.asarray(ta, dtype=np.float64)
    b = np.asarray(tb, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    cosang = np.abs(np.dot(a, b))
    return float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
