"""Angle and bearing rigidity of directed frameworks.

Vertices are zero-based here; file formats and the CLI use one-based labels
and convert at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .geometry import JointState, rot_dim, skew

RANK_RTOL = 1e-10
EIG_RTOL = 1e-13


class DegenerateFrameworkError(ValueError):
    """Raised where a result only holds for non-degenerate frameworks."""


class Lemma1PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class DirectedGraph:
    """Directed sensing graph; edge (i, j) means robot i observes robot j."""

    n_vertices: int
    edges: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        seen = set()
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n_vertices and 0 <= j < self.n_vertices):
                raise ValueError(f"edge ({i}, {j}) outside 0..{self.n_vertices - 1}")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_mask(cls, mask) -> "DirectedGraph":
        mask = np.asarray(mask, dtype=bool)
        ii, jj = np.nonzero(mask)
        return cls(mask.shape[0], tuple(zip(ii.tolist(), jj.tolist())))

    @classmethod
    def complete(cls, n: int) -> "DirectedGraph":
        return cls(n, tuple((i, j) for i in range(n) for j in range(n) if i != j))

    @property
    def edge_array(self) -> np.ndarray:
        return np.array(self.edges, dtype=np.int64).reshape(-1, 2)

    def mask(self) -> np.ndarray:
        m = np.zeros((self.n_vertices, self.n_vertices), dtype=bool)
        for i, j in self.edges:
            m[i, j] = True
        return m

    def out_neighbors(self, i: int) -> List[int]:
        return sorted(j for a, j in self.edges if a == i)

    def out_degrees(self) -> np.ndarray:
        return self.mask().sum(axis=1)


def angle_set(graph: DirectedGraph) -> np.ndarray:
    """All triples (i, j, k), j < k, with both j and k observed by i.

    Returned as an int64 array of shape (T, 3) in lexicographic order.
    """
    return np.asarray(kernels.triples_from_mask(graph.mask()), dtype=np.int64).reshape(-1, 3)


@dataclass
class Framework:
    graph: DirectedGraph
    state: JointState

    def __post_init__(self):
        if self.state.n != self.graph.n_vertices:
            raise ValueError("state and graph disagree on the number of robots")

    @property
    def positions(self) -> np.ndarray:
        return self.state.positions

    @property
    def rotations(self) -> Optional[np.ndarray]:
        return self.state.rotations

    @property
    def d(self) -> int:
        return self.state.d

    @property
    def n(self) -> int:
        return self.state.n

    def angles(self) -> np.ndarray:
        return angle_set(self.graph)


def _require_rotations(fw: Framework) -> np.ndarray:
    if fw.rotations is None:
        raise ValueError("bearing rigidity needs orientations; the framework has none")
    return fw.rotations


# --------------------------------------------------------------------------
# measurement functions and their differentials
# --------------------------------------------------------------------------

def bearing_function(fw: Framework) -> np.ndarray:
    """Body-frame bearings R_i^T (p_j - p_i)/d_ij, one row per edge."""
    R = _require_rotations(fw)
    e = fw.graph.edge_array
    x = fw.positions[e[:, 1]] - fw.positions[e[:, 0]]
    dist = np.linalg.norm(x, axis=1)
    if np.any(dist == 0.0):
        from .geometry import CoincidentPositionsError
        raise CoincidentPositionsError("coincident endpoints on an edge")
    return np.einsum("eab,ea->eb", R[e[:, 0]], x / dist[:, None])


def angle_function(p, triples) -> np.ndarray:
    """Cosines beta_ij . beta_ik for every triple."""
    p = np.asarray(p, dtype=float)
    return kernels.angle_values(p, np.asarray(triples, dtype=np.int64).reshape(-1, 3))


def bearing_rigidity_matrix(fw: Framework) -> np.ndarray:
    """d|E| x (d + d')N differential of the bearing function.

    Columns are ordered [v_1..v_N, omega_1..omega_N]; omega is the world-frame
    angular velocity (R_i' = S(omega_i) R_i).
    """
    R = _require_rotations(fw)
    return kernels.bearing_matrix(fw.positions, R, fw.graph.edge_array)


def angle_rigidity_matrix(p, triples) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return kernels.angle_matrix(p, np.asarray(triples, dtype=np.int64).reshape(-1, 3))


def trivial_basis_angle(p) -> np.ndarray:
    """(dN) x (d + d' + 1) basis of translations, rotations and scaling."""
    p = np.asarray(p, dtype=float)
    n, d = p.shape
    dr = rot_dim(d)
    cols = []
    for l in range(d):
        e = np.zeros(d)
        e[l] = 1.0
        cols.append(np.tile(e, n))
    for l in range(dr):
        e = np.zeros(dr)
        e[l] = 1.0
        cols.append((p @ skew(e).T).reshape(-1))
    cols.append(p.reshape(-1).copy())
    return np.stack(cols, axis=1)


def trivial_basis_bearing(p) -> np.ndarray:
    """((d + d')N) x (d + d' + 1) basis of similarity motions in SE(d)."""
    p = np.asarray(p, dtype=float)
    n, d = p.shape
    dr = rot_dim(d)
    top = trivial_basis_angle(p)
    bottom = np.zeros((dr * n, d + dr + 1))
    for l in range(dr):
        e = np.zeros(dr)
        e[l] = 1.0
        bottom[:, d + l] = np.tile(e, n)
    return np.vstack([top, bottom])


# --------------------------------------------------------------------------
# rank tests and the rigidity eigenvalue
# --------------------------------------------------------------------------

def rank_threshold(singular_values, shape, rtol: float = RANK_RTOL) -> float:
    smax = singular_values[0] if len(singular_values) else 0.0
    return smax * max(shape) * rtol


def numerical_rank(M, rtol: float = RANK_RTOL) -> int:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rank_threshold(s, M.shape, rtol)))


def trivial_dim(d: int) -> int:
    return d + rot_dim(d) + 1


def eigen_index(d: int) -> int:
    """One-based index of the rigidity eigenvalue: 5 in the plane, 8 in space."""
    return trivial_dim(d) + 1


def is_inf_angle_rigid(p, triples, rtol: float = RANK_RTOL) -> Tuple[bool, int]:
    p = np.asarray(p, dtype=float)
    n, d = p.shape
    r = numerical_rank(angle_rigidity_matrix(p, triples), rtol)
    return r == d * n - trivial_dim(d), r


def is_inf_bearing_rigid(fw: Framework, rtol: float = RANK_RTOL) -> Tuple[bool, int]:
    d, n = fw.d, fw.n
    r = numerical_rank(bearing_rigidity_matrix(fw), rtol)
    return r == (d + rot_dim(d)) * n - trivial_dim(d), r


def eigen_tolerance(eigenvalues, rtol: float = EIG_RTOL) -> float:
    """Threshold separating zero from positive eigenvalues of a PSD matrix."""
    lam = np.asarray(eigenvalues)
    if lam.size == 0:
        return 0.0
    return max(float(lam[-1]), 0.0) * lam.size * rtol


def _eigen_pick(M, d):
    n_dof = M.shape[0]
    idx = eigen_index(d) - 1
    if n_dof <= idx:
        raise ValueError(f"need at least {idx + 1} coordinates, framework has {n_dof}")
    return idx


def rigidity_eigenvalue(p, triples) -> float:
    """(d + d' + 2)-th smallest eigenvalue of A^T A (clipped at zero)."""
    p = np.asarray(p, dtype=float)
    d = p.shape[1]
    A = angle_rigidity_matrix(p, triples)
    M = A.T @ A
    idx = _eigen_pick(M, d)
    return max(float(np.linalg.eigvalsh(M)[idx]), 0.0)


def rigidity_eigenvalue_verdict(p, triples, rtol: float = EIG_RTOL) -> Tuple[float, bool]:
    """Rigidity eigenvalue and whether it is numerically positive."""
    p = np.asarray(p, dtype=float)
    A = angle_rigidity_matrix(p, triples)
    lam = np.linalg.eigvalsh(A.T @ A)
    idx = _eigen_pick(A.T @ A, p.shape[1])
    value = max(float(lam[idx]), 0.0)
    return value, value > eigen_tolerance(lam, rtol)


# --------------------------------------------------------------------------
# degeneracy and the IBR <-> IAR equivalence
# --------------------------------------------------------------------------

def bearing_span_dims(p, graph: DirectedGraph, rtol: float = RANK_RTOL) -> List[int]:
    """dim span{beta_ij : j observed by i} for every vertex i."""
    p = np.asarray(p, dtype=float)
    dims = []
    for i in range(graph.n_vertices):
        nb = graph.out_neighbors(i)
        if not nb:
            dims.append(0)
            continue
        x = p[nb] - p[i]
        dims.append(numerical_rank(x / np.linalg.norm(x, axis=1)[:, None], rtol))
    return dims


def bearing_span_margins(p, graph: DirectedGraph) -> np.ndarray:
    """Smallest relevant singular value of each vertex's stacked bearings.

    For |O_i| >= d this is the d-th singular value; otherwise the |O_i|-th.
    Vertices without out-neighbours get +inf.
    """
    p = np.asarray(p, dtype=float)
    d = p.shape[1]
    out = np.full(graph.n_vertices, np.inf)
    for i in range(graph.n_vertices):
        nb = graph.out_neighbors(i)
        if not nb:
            continue
        x = p[nb] - p[i]
        s = np.linalg.svd(x / np.linalg.norm(x, axis=1)[:, None], compute_uv=False)
        out[i] = s[min(len(nb), d) - 1]
    return out


def is_degenerate(p, graph: DirectedGraph, rtol: float = RANK_RTOL) -> Tuple[bool, List[int]]:
    p = np.asarray(p, dtype=float)
    d = p.shape[1]
    dims = bearing_span_dims(p, graph, rtol)
    deg = graph.out_degrees()
    flag = any(deg[i] >= d and dims[i] <= d - 1 for i in range(graph.n_vertices))
    return flag, dims


@dataclass(frozen=True)
class Theorem1Verdict:
    ibr: bool
    iar: bool
    min_span_ok: bool
    consistent: bool


def check_theorem1(fw: Framework, rtol: float = RANK_RTOL) -> Theorem1Verdict:
    """Compare IBR against (IAR and every bearing span of dim >= d - 1)."""
    degenerate, dims = is_degenerate(fw.positions, fw.graph, rtol)
    if degenerate:
        raise DegenerateFrameworkError("the equivalence is only stated for non-degenerate frameworks")
    d = fw.d
    ibr, _ = is_inf_bearing_rigid(fw, rtol)
    iar, _ = is_inf_angle_rigid(fw.positions, fw.angles(), rtol)
    span_ok = all(k >= d - 1 for k in dims)
    return Theorem1Verdict(ibr, iar, span_ok, ibr == (iar and span_ok))


@dataclass
class RigidityReport:
    rank_angle: int
    eigenvalue: float
    is_iar: bool
    is_degenerate: bool
    per_vertex_bearing_span_dim: List[int]
    rank_bearing: Optional[int] = None
    is_ibr: Optional[bool] = None
    eigen_index: int = field(default=0)

    def to_dict(self) -> dict:
        out = {
            "rank_angle": self.rank_angle,
            "eigen_index": self.eigen_index,
            "eigenvalue": self.eigenvalue,
            "is_iar": self.is_iar,
            "is_degenerate": self.is_degenerate,
            "per_vertex_bearing_span_dim": list(self.per_vertex_bearing_span_dim),
        }
        if self.is_ibr is not None:
            out["rank_bearing"] = self.rank_bearing
            out["is_ibr"] = self.is_ibr
        return out


def analyze(fw: Framework, rtol: float = RANK_RTOL) -> RigidityReport:
    """Ranks, eigenvalue, rigidity verdicts and degeneracy of one framework."""
    triples = fw.angles()
    iar, rank_a = is_inf_angle_rigid(fw.positions, triples, rtol)
    try:
        lam = rigidity_eigenvalue(fw.positions, triples)
    except ValueError:
        lam = float("nan")
    degenerate, dims = is_degenerate(fw.positions, fw.graph, rtol)
    report = RigidityReport(rank_a, lam, iar, degenerate, dims, eigen_index=eigen_index(fw.d))
    if fw.rotations is not None:
        report.is_ibr, report.rank_bearing = is_inf_bearing_rigid(fw, rtol)
    return report


# --------------------------------------------------------------------------
# two skew-symmetric equations in one unknown
# --------------------------------------------------------------------------

def lemma1_condition(z1, z2, y1, y2) -> float:
    """(S(z1) y1 - S(z2) y2) . S(z1) z2; zero iff the pair of equations is solvable."""
    z1, z2, y1, y2 = (np.asarray(v, dtype=float) for v in (z1, z2, y1, y2))
    return float((np.cross(z1, y1) - np.cross(z2, y2)) @ np.cross(z1, z2))


def _check_lemma1(z1, z2, y1, y2, tol):
    for name, v in (("z1", z1), ("z2", z2), ("y1", y1), ("y2", y2)):
        if v.shape != (3,):
            raise Lemma1PreconditionError(f"{name} must be a 3-vector")
    if abs(np.linalg.norm(z1) - 1) > tol or abs(np.linalg.norm(z2) - 1) > tol:
        raise Lemma1PreconditionError("z1 and z2 must be unit vectors")
    if np.linalg.norm(np.cross(z1, z2)) <= tol:
        raise Lemma1PreconditionError("z1 must differ from +-z2")
    if abs(z1 @ y1) > tol:
        raise Lemma1PreconditionError("y1 must be orthogonal to z1")
    if abs(z2 @ y2) > tol:
        raise Lemma1PreconditionError("y2 must be orthogonal to z2")


def lemma1_solve(z1, z2, y1, y2, tol: float = 1e-9) -> Optional[np.ndarray]:
    """Solve S(z1) x = y1, S(z2) x = y2; return None when no solution exists.

    Minimum-norm least squares on the stacked 6x3 system; a candidate is
    accepted only if both residuals are below ``tol``.
    """
    z1, z2, y1, y2 = (np.asarray(v, dtype=float) for v in (z1, z2, y1, y2))
    _check_lemma1(z1, z2, y1, y2, tol)
    M = np.vstack([skew(z1), skew(z2)])
    x, *_ = np.linalg.lstsq(M, np.concatenate([y1, y2]), rcond=None)
    r1 = np.linalg.norm(skew(z1) @ x - y1)
    r2 = np.linalg.norm(skew(z2) @ x - y2)
    if r1 < tol and r2 < tol:
        return x
    return None
