"""Kinematic primitives on R^d and SE(d) for d in {2, 3}.

The dimension is never a module-level constant: every function infers it from
the shapes it receives, so the same code path serves planar and spatial
frameworks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

UNIT_TOL = 1e-9
RENORM_TOL = 1e-6


class CoincidentPositionsError(ValueError):
    """Two robots occupy the same position, so a bearing is undefined."""


def rot_dim(d: int) -> int:
    """Dimension d' = d(d-1)/2 of so(d)."""
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    return d * (d - 1) // 2


def _dim_from_rot(n: int) -> int:
    if n == 1:
        return 2
    if n == 3:
        return 3
    raise ValueError(f"an so(d) coordinate vector has 1 or 3 entries, got {n}")


def skew(x) -> np.ndarray:
    """Map x in R^{d'} to S(x) in so(d).

    A length-1 input (or a scalar) yields the planar generator, so that
    ``skew(x) @ y == x * [-y2, y1]``; a 3-vector yields the cross-product matrix.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    d = _dim_from_rot(x.size)
    if d == 2:
        return np.array([[0.0, -x[0]], [x[0], 0.0]])
    return np.array([
        [0.0, -x[2], x[1]],
        [x[2], 0.0, -x[0]],
        [-x[1], x[0], 0.0],
    ])


def unskew(M, tol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`skew`; rejects inputs that are not skew-symmetric."""
    M = np.asarray(M, dtype=float)
    if M.shape not in ((2, 2), (3, 3)):
        raise ValueError(f"expected a 2x2 or 3x3 matrix, got shape {M.shape}")
    asym = np.linalg.norm(M + M.T)
    if asym > tol:
        raise ValueError(f"matrix is not skew-symmetric (|M + M^T| = {asym:.3e})")
    if M.shape[0] == 2:
        return np.array([0.5 * (M[1, 0] - M[0, 1])])
    return 0.5 * np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])


def unskew_outer(a, b) -> np.ndarray:
    """unskew(a b^T - b a^T) without forming the matrix.

    For d = 3 this is ``b x a``; for d = 2 it is the scalar ``b1 a2 - b2 a1``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] == 2:
        return (b[..., 0] * a[..., 1] - b[..., 1] * a[..., 0])[..., None]
    return np.cross(b, a)


def exp_so(omega) -> np.ndarray:
    """Closed-form matrix exponential of S(omega)."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float)).reshape(-1)
    d = _dim_from_rot(omega.size)
    if d == 2:
        c, s = np.cos(omega[0]), np.sin(omega[0])
        return np.array([[c, -s], [s, c]])
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-8:
        # second-order Taylor; error O(theta^3) is below double precision here
        return np.eye(3) + K + 0.5 * (K @ K)
    return (np.eye(3) + (np.sin(theta) / theta) * K
            + ((1.0 - np.cos(theta)) / theta ** 2) * (K @ K))


def rotation_step(R, omega, dt: float) -> np.ndarray:
    """Integrate R' = R S(omega) exactly over ``dt`` (body-frame angular rate)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    R = np.asarray(R, dtype=float)
    return R @ exp_so(np.asarray(omega, dtype=float) * dt)


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation matrix (polar factor with det = +1)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.eye(U.shape[0])
    D[-1, -1] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def bearing_and_distance(p_i, p_j):
    """Unit bearing from p_i toward p_j and the distance between them."""
    diff = np.asarray(p_j, dtype=float) - np.asarray(p_i, dtype=float)
    dist = float(np.linalg.norm(diff))
    if dist == 0.0:
        raise CoincidentPositionsError("bearing between coincident points is undefined")
    return diff / dist, dist


def as_unit(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    n = np.linalg.norm(beta)
    if abs(n - 1.0) <= UNIT_TOL:
        return beta
    if abs(n - 1.0) <= RENORM_TOL:
        return beta / n
    raise ValueError(f"expected a unit vector, got norm {n:.9g}")


def projection(beta) -> np.ndarray:
    """Orthogonal projector I - beta beta^T onto the complement of ``beta``."""
    beta = as_unit(beta)
    return np.eye(beta.size) - np.outer(beta, beta)


def so_gradient_quadratic(R, x, y) -> np.ndarray:
    """Body-frame Riemannian gradient of f(R) = x^T R y on SO(d).

    Returns unskew(R^T x y^T - y x^T R) under the metric <A, B> = tr(A^T B)/2,
    i.e. the coordinates g with d/dh f(R exp(h S(e_l))) = g_l.
    """
    R = np.asarray(R, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return unskew_outer(R.T @ x, y)


def random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    """Rotation drawn as the exponential of a random skew matrix."""
    if d == 2:
        return exp_so(rng.uniform(-np.pi, np.pi, size=1))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_so(axis * rng.uniform(0.0, np.pi))


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.orientation, dtype=float)
        if np.linalg.norm(R.T @ R - np.eye(R.shape[0])) > 1e-6 or np.linalg.det(R) <= 0:
            raise ValueError("orientation is not a rotation matrix")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", orthonormalize(R))


@dataclass
class JointState:
    """Stacked positions (N, d) and, optionally, orientations (N, d, d)."""

    positions: np.ndarray
    rotations: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] not in (2, 3):
            raise ValueError(f"positions must have shape (N, 2|3), got {self.positions.shape}")
        if self.rotations is not None:
            self.rotations = np.array(self.rotations, dtype=float)
            n, d = self.positions.shape
            if self.rotations.shape != (n, d, d):
                raise ValueError("rotations must have shape (N, d, d)")
        if self.n > 1 and min_pairwise_distance(self.positions) <= 0.0:
            raise CoincidentPositionsError("robot positions must be pairwise distinct")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def pose(self, i: int) -> Pose:
        if self.rotations is None:
            raise ValueError("state has no orientations")
        return Pose(self.positions[i], self.rotations[i])

    @classmethod
    def from_poses(cls, poses) -> "JointState":
        poses = list(poses)
        return cls(np.array([q.position for q in poses]),
                   np.array([q.orientation for q in poses]))


def min_pairwise_distance(p) -> float:
    p = np.asarray(p, dtype=float)
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    dist[np.diag_indices(p.shape[0])] = np.inf
    return float(dist.min())
