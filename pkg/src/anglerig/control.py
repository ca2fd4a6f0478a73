"""Rigidity-maintenance, collision-avoidance and target-tracking control.

Every robot has single-integrator dynamics in its own body frame,
``p_i' = R_i u_i`` and ``R_i' = R_i S(omega_i)``. The composite input is a
gain-weighted sum of three actions:

* rigidity: descent of ``-log(lambda~)``, where ``lambda~`` is the first
  non-trivial eigenvalue of the weighted angle rigidity matrix;
* collision: descent of ``sum over sensed edges ((d_ij - rho_r) / d_ij)^2``;
* mission: ascent of ``mu_r sigma_r(d) + mu_f sigma_f(zeta)`` toward a target.

Two evaluation paths exist. :func:`rigidity_controls` and friends evaluate the
whole team in one vectorized kernel call; :func:`rigidity_control` and
:func:`collision_control` evaluate a single robot from body-frame data in its
:class:`LocalView` plus messages produced by the robots that observe it. The
two paths agree to rounding error and the tests hold them to that.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import kernels
from .geometry import JointState, rot_dim
from .rigidity import DirectedGraph, eigen_index, eigen_tolerance

EIG_FLOOR = 1e-12
GAP_WARN = 1e-8
U_MAX = 10.0


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraParams:
    """Sensing range (m) and cosine of the half field of view; axis is body e1."""

    rho_r: float = 30.0
    rho_f: float = 0.5

    def __post_init__(self):
        if not self.rho_r > 0:
            raise ValueError("rho_r must be positive")
        if not 0.0 <= self.rho_f < 1.0:
            raise ValueError("rho_f must lie in [0, 1)")


@dataclass(frozen=True)
class WeightParams:
    """Ramp limits of the range factor (a_r, b_r) and the FOV factor (a_f, b_f)."""

    a_r: float
    b_r: float
    a_f: float
    b_f: float

    def validate(self, cam: CameraParams) -> None:
        errs = []
        if not 0.0 <= self.a_r < self.b_r <= cam.rho_r:
            errs.append(f"need 0 <= a_r < b_r <= rho_r, got a_r={self.a_r}, b_r={self.b_r}, "
                        f"rho_r={cam.rho_r}")
        if not cam.rho_f <= self.a_f < self.b_f <= 1.0:
            errs.append(f"need rho_f <= a_f < b_f <= 1, got a_f={self.a_f}, b_f={self.b_f}, "
                        f"rho_f={cam.rho_f}")
        if errs:
            raise ValueError("; ".join(errs))

    @classmethod
    def from_camera(cls, cam: CameraParams, range_frac: float = 0.8,
                    fov_frac: float = 1.4) -> "WeightParams":
        """a_r = range_frac rho_r, b_r = rho_r, a_f = rho_f, b_f = fov_frac rho_f."""
        wp = cls(range_frac * cam.rho_r, cam.rho_r, cam.rho_f, min(1.0, fov_frac * cam.rho_f))
        wp.validate(cam)
        return wp

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return float(self.a_r), float(self.b_r), float(self.a_f), float(self.b_f)


@dataclass(frozen=True)
class Gains:
    gamma_r: float = 5.0
    gamma_c: float = 1.0
    gamma_m: float = 25.0
    gamma_r_rot: float = 0.5
    gamma_m_rot: float = 2.5
    mu_r: float = 6.0
    mu_f: float = 1.0
    rho_t: float = 20.0

    def __post_init__(self):
        bad = [k for k, v in self.__dict__.items() if not v > 0]
        if bad:
            raise ValueError(f"gains must be strictly positive: {', '.join(bad)}")


@dataclass
class ControlInput:
    """Body-frame linear velocity (d,) and angular velocity (d',)."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float).reshape(-1)
        self.angular = np.asarray(self.angular, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(self.linear)) and np.all(np.isfinite(self.angular))):
            raise ValueError("control input has non-finite entries")

    @classmethod
    def zero(cls, d: int) -> "ControlInput":
        return cls(np.zeros(d), np.zeros(rot_dim(d)))

    def __add__(self, other: "ControlInput") -> "ControlInput":
        return ControlInput(self.linear + other.linear, self.angular + other.angular)

    def scaled(self, lin: float, ang: float) -> "ControlInput":
        return ControlInput(lin * self.linear, ang * self.angular)


@dataclass
class RigidityEigenpair:
    eigenvalue: float
    eigenvector: np.ndarray          # unit (d N,) vector
    multiplicity_gap: float
    triples: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    tolerance: float = 0.0           # below this the eigenvalue is numerically zero

    def blocks(self, d: int) -> np.ndarray:
        """Eigenvector reshaped to per-robot world-frame blocks (N, d)."""
        return self.eigenvector.reshape(-1, d)


# --------------------------------------------------------------------------
# sensing graph and weights
# --------------------------------------------------------------------------

def _arrays(state: JointState):
    if state.rotations is None:
        raise ValueError("control requires orientations")
    return state.positions, state.rotations


def sensing_mask(p, R, cam: CameraParams) -> np.ndarray:
    return kernels.sensing_mask(p, R, float(cam.rho_r), float(cam.rho_f))


def sensing_edges(state: JointState, cam: CameraParams) -> DirectedGraph:
    """Directed graph with (i, j) iff j is in range and strictly inside i's cone."""
    p, R = _arrays(state)
    return DirectedGraph.from_mask(sensing_mask(p, R, cam))


def smoothstep(x, a: float, b: float):
    """C1 cosine ramp from 0 at ``a`` to 1 at ``b``."""
    if not a < b:
        raise ValueError("smoothstep needs a < b")
    out = kernels.sigma(x, a, b)
    return float(out) if np.ndim(out) == 0 else out


def smoothstep_deriv(x, a: float, b: float):
    if not a < b:
        raise ValueError("smoothstep needs a < b")
    out = kernels.dsigma(x, a, b)
    return float(out) if np.ndim(out) == 0 else out


def angle_weight(i: int, j: int, k: int, state: JointState, cam: CameraParams,
                 wp: WeightParams) -> float:
    """Weight of angle (i, j, k); zero when either edge is not sensed."""
    p, R = _arrays(state)
    mask = sensing_mask(p, R, cam)
    if j == k or not (mask[i, j] and mask[i, k]):
        return 0.0
    tri = np.array([[i, min(j, k), max(j, k)]], dtype=np.int64)
    return float(kernels.angle_weights(p, R, tri, *wp.as_tuple())[0])


def _fix_sign(v: np.ndarray) -> np.ndarray:
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def eigenpair_from_gram(M: np.ndarray, d: int, triples, weights) -> RigidityEigenpair:
    vals, vecs = np.linalg.eigh(M)
    k = eigen_index(d) - 1
    lam = max(float(vals[k]), 0.0)
    gap = float(vals[k] - vals[k - 1])
    if k + 1 < vals.size:
        gap = min(gap, float(vals[k + 1] - vals[k]))
    return RigidityEigenpair(lam, _fix_sign(vecs[:, k].copy()), gap, triples, weights,
                             eigen_tolerance(vals))


def weighted_rigidity_arrays(p, R, cam: CameraParams, wp: WeightParams) -> RigidityEigenpair:
    """Eigenpair of sum_t w_t A_t^T A_t over the angles of the sensing graph."""
    p = np.ascontiguousarray(p, dtype=float)
    R = np.ascontiguousarray(R, dtype=float)
    n, d = p.shape
    if n * d < eigen_index(d):
        raise ValueError("too few robots for a non-trivial rigidity eigenvalue")
    triples = kernels.triples_from_mask(sensing_mask(p, R, cam))
    w = kernels.angle_weights(p, R, triples, *wp.as_tuple())
    M = kernels.weighted_gram(p, triples, w)
    return eigenpair_from_gram(M, d, triples, w)


def weighted_rigidity(state: JointState, cam: CameraParams, wp: WeightParams) -> RigidityEigenpair:
    p, R = _arrays(state)
    return weighted_rigidity_arrays(p, R, cam, wp)


def scaled_rigidity_eigenvalue(p, triples, verdict: bool = False):
    """Unweighted eigenvalue with every angle scaled by d_ij d_ik.

    This is the weighted matrix with all range and FOV factors equal to one,
    so it bounds the weighted eigenvalue from above. With ``verdict`` the
    numerical positivity test is returned as well.
    """
    p = np.asarray(p, dtype=float)
    n, d = p.shape
    if triples.shape[0] == 0:
        return (0.0, False) if verdict else 0.0
    i, j, k = triples.T
    w = np.linalg.norm(p[j] - p[i], axis=1) * np.linalg.norm(p[k] - p[i], axis=1)
    M = kernels.weighted_gram(p, np.ascontiguousarray(triples), w)
    vals = np.linalg.eigvalsh(M)
    lam = max(float(vals[eigen_index(d) - 1]), 0.0)
    if verdict:
        return lam, lam > eigen_tolerance(vals)
    return lam


# --------------------------------------------------------------------------
# team-wide (vectorized) evaluation
# --------------------------------------------------------------------------

def _clamp_rows(u: np.ndarray, limit: float) -> np.ndarray:
    norms = np.linalg.norm(u, axis=1)
    scale = np.where(norms > limit, limit / np.maximum(norms, 1e-300), 1.0)
    return u * scale[:, None]


def rigidity_controls(p, R, eig: RigidityEigenpair, wp: WeightParams,
                      u_max: float = U_MAX) -> Tuple[np.ndarray, np.ndarray, bool]:
    """Body-frame descent directions of -log(lambda~) for every robot.

    Returns (u (N, d), omega (N, d'), clamped). Below the eigenvalue floor the
    1/lambda~ factor is replaced by 1/floor and linear inputs are clipped to
    ``u_max``.
    """
    p = np.ascontiguousarray(p, dtype=float)
    R = np.ascontiguousarray(R, dtype=float)
    n, d = p.shape
    nu = np.ascontiguousarray(eig.blocks(d))
    gp, gR = kernels.rigidity_gradient(p, R, eig.triples, nu, *wp.as_tuple())
    lam = eig.eigenvalue
    clamped = lam < EIG_FLOOR
    lam = max(lam, EIG_FLOOR)
    u = np.einsum("iar,ia->ir", R, gp) / lam
    om = gR / lam
    if clamped:
        u = _clamp_rows(u, u_max)
        om = _clamp_rows(om, u_max)
    return u, om, clamped


def collision_controls(p, R, mask, rho_r: float) -> np.ndarray:
    """Body-frame collision-avoidance input for every robot (N, d)."""
    g = kernels.collision_flow(np.ascontiguousarray(p, dtype=float), mask, float(rho_r))
    return np.einsum("iar,ia->ir", R, g)


def mission_controls(p, R, targets, gains: Gains):
    """Body-frame mission input and robot-target repulsion for every robot.

    ``targets`` is (N, d): the target position assigned to each robot.
    Returns (u_m (N, d), omega_m (N, d'), u_target_collision (N, d)).
    """
    p = np.ascontiguousarray(p, dtype=float)
    targets = np.ascontiguousarray(targets, dtype=float)
    if np.any(np.linalg.norm(targets - p, axis=1) == 0.0):
        raise ValueError("a robot coincides with its target")
    return kernels.mission_flow(p, np.ascontiguousarray(R, dtype=float), targets,
                                float(gains.mu_r), float(gains.mu_f), float(gains.rho_t))


class RigidityController:
    """Team-wide rigidity action with hold-over across non-simple eigenvalues.

    When the eigen-gap drops below ``GAP_WARN`` the eigenvector, and therefore
    the gradient, is not well defined; the previous action is reused and the
    ``gap_warning`` flag is raised for that evaluation.
    """

    def __init__(self, cam: CameraParams, wp: WeightParams, u_max: float = U_MAX):
        wp.validate(cam)
        self.cam, self.wp, self.u_max = cam, wp, u_max
        self._last: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self._primed = None

    def reset(self) -> None:
        self._last = None
        self._primed = None

    def eigenpair(self, p, R) -> RigidityEigenpair:
        """Eigenpair at (p, R); reused if the same arrays were evaluated last."""
        if self._primed is not None and self._primed[0] is p and self._primed[1] is R:
            return self._primed[2]
        eig = weighted_rigidity_arrays(p, R, self.cam, self.wp)
        self._primed = (p, R, eig)
        return eig

    def __call__(self, p, R):
        eig = self.eigenpair(p, R)
        flags = {"gap_warning": False, "clamped": False}
        if eig.multiplicity_gap < GAP_WARN and self._last is not None:
            flags["gap_warning"] = True
            u, om = self._last
            return u.copy(), om.copy(), eig, flags
        if eig.multiplicity_gap < GAP_WARN:
            flags["gap_warning"] = True
        u, om, flags["clamped"] = rigidity_controls(p, R, eig, self.wp, self.u_max)
        self._last = (u, om)
        return u, om, eig, flags


# --------------------------------------------------------------------------
# per-robot (decentralized) evaluation
# --------------------------------------------------------------------------

@dataclass
class LocalView:
    """What robot ``index`` knows: its own body-frame measurements and the
    eigen data handed to it (lambda~, its own block, its neighbours' blocks).

    Every vector is in the body frame of the robot it belongs to: ``nu_self``
    in i's frame, ``nu_nb[j]`` in j's frame. ``rel_rot[j]`` is R_ij = R_i^T R_j.
    """

    index: int
    eigenvalue: float
    nu_self: np.ndarray
    bearings: Dict[int, np.ndarray]
    distances: Dict[int, float]
    rel_rot: Dict[int, np.ndarray]
    nu_nb: Dict[int, np.ndarray]

    @property
    def d(self) -> int:
        return self.nu_self.size

    @property
    def neighbors(self) -> List[int]:
        return sorted(self.bearings)


def local_view(i: int, state: JointState, graph: DirectedGraph,
               eig: Optional[RigidityEigenpair] = None) -> LocalView:
    """Assemble robot i's view from ground truth (R_ij taken from truth)."""
    p, R = _arrays(state)
    d = state.d
    nu = eig.blocks(d) if eig is not None else np.zeros_like(p)
    bearings, dists, rel, nb = {}, {}, {}, {}
    for j in graph.out_neighbors(i):
        x = p[j] - p[i]
        dist = float(np.linalg.norm(x))
        bearings[j] = R[i].T @ (x / dist)
        dists[j] = dist
        rel[j] = R[i].T @ R[j]
        nb[j] = R[j].T @ nu[j]
    lam = eig.eigenvalue if eig is not None else 0.0
    return LocalView(i, lam, R[i].T @ nu[i], bearings, dists, rel, nb)


def _edge_terms(beta, dist, wp: WeightParams):
    """Edge factor g = d (1 - sigma_r) sigma_f and its body-frame observer gradient."""
    ar, br, af, bf = wp.as_tuple()
    zeta = beta[0]
    wr = 1.0 - kernels.sigma(dist, ar, br)
    dwr = -kernels.dsigma(dist, ar, br)
    wf = kernels.sigma(zeta, af, bf)
    dwf = kernels.dsigma(zeta, af, bf)
    g = dist * wr * wf
    e1 = np.zeros_like(beta)
    e1[0] = 1.0
    # gradient of g w.r.t. the observer position, in the observer's frame
    grad_obs = -(wr + dist * dwr) * wf * beta - wr * dwf * (e1 - beta * zeta)
    # body so(d) gradient of g w.r.t. the observer orientation
    if beta.size == 2:
        rot = np.array([beta[1]])
    else:
        rot = np.array([0.0, -beta[2], beta[1]])
    return float(g), grad_obs, dist * wr * dwf * rot


def _triple(view: LocalView, j: int, k: int, wp: WeightParams):
    """Body-frame quantities of one angle (i, j, k) measured by ``view``.

    Returns (w, s, dw_i, dw_j, dw_k, ds_i, ds_j, ds_k, dw_rot) where d*_x is
    the gradient w.r.t. p_x expressed in the observer's frame.
    """
    bj, bk = view.bearings[j], view.bearings[k]
    dj, dk = view.distances[j], view.distances[k]
    gj, Gj, rj = _edge_terms(bj, dj, wp)
    gk, Gk, rk = _edge_terms(bk, dk, wp)
    w = gj * gk
    c = float(bj @ bk)
    a = view.rel_rot[j] @ view.nu_nb[j] - view.nu_self
    b = view.rel_rot[k] @ view.nu_nb[k] - view.nu_self
    s = float((bk - c * bj) @ a / dj + (bj - c * bk) @ b / dk)
    Pa = a - bj * (bj @ a)
    Pb = b - bk * (bk @ b)
    Da = ((bk - c * bj) * (bj @ a) + bj * (bk @ Pa) + c * Pa) / dj ** 2
    Db = ((bj - c * bk) * (bk @ b) + bk * (bj @ Pb) + c * Pb) / dk ** 2
    PPb = Pb - bj * (bj @ Pb)
    PPa = Pa - bk * (bk @ Pa)
    ds_j = -Da + PPb / (dj * dk)
    ds_k = PPa / (dj * dk) - Db
    dw_i = gk * Gj + gj * Gk
    dw_rot = gk * rj + gj * rk
    return w, s, dw_i, -gk * Gj, -gj * Gk, -(ds_j + ds_k), ds_j, ds_k, dw_rot


def _pairs(view: LocalView):
    nb = view.neighbors
    for a in range(len(nb)):
        for b in range(a + 1, len(nb)):
            yield nb[a], nb[b]


def rigidity_shared_terms(view: LocalView, wp: WeightParams) -> Dict[int, np.ndarray]:
    """Messages from observer ``view.index`` to each robot it senses.

    Entry j is robot j's share of grad_{p_j} lambda~ from the angles measured
    here, already rotated into j's body frame.
    """
    out: Dict[int, np.ndarray] = {j: np.zeros(view.d) for j in view.neighbors}
    for j, k in _pairs(view):
        w, s, _, dw_j, dw_k, _, ds_j, ds_k, _ = _triple(view, j, k, wp)
        if w == 0.0:
            continue
        out[j] += s * s * dw_j + 2.0 * w * s * ds_j
        out[k] += s * s * dw_k + 2.0 * w * s * ds_k
    return {j: view.rel_rot[j].T @ v for j, v in out.items()}


def rigidity_control(view: LocalView, inbox: Dict[int, np.ndarray], wp: WeightParams,
                     u_max: float = U_MAX) -> Tuple[ControlInput, bool]:
    """Robot i's rigidity action from its view and the messages it received.

    ``inbox`` maps observer j to the vector j sent to i. Returns the
    body-frame descent input of -log(lambda~) and whether it was clamped.
    """
    g = np.zeros(view.d)
    g_rot = np.zeros(rot_dim(view.d))
    for j, k in _pairs(view):
        w, s, dw_i, _, _, ds_i, _, _, dw_rot = _triple(view, j, k, wp)
        if w == 0.0:
            continue
        g += s * s * dw_i + 2.0 * w * s * ds_i
        g_rot += s * s * dw_rot
    for msg in inbox.values():
        g = g + msg
    lam = view.eigenvalue
    clamped = lam < EIG_FLOOR
    lam = max(lam, EIG_FLOOR)
    u, om = g / lam, g_rot / lam
    if clamped:
        u = _clamp_rows(u[None], u_max)[0]
        om = _clamp_rows(om[None], u_max)[0]
    return ControlInput(u, om), clamped


def collision_shared_terms(view: LocalView, rho_r: float) -> Dict[int, np.ndarray]:
    """Observer-side collision messages, each in the receiving robot's frame."""
    out = {}
    for j in view.neighbors:
        dist = view.distances[j]
        coef = 2.0 * rho_r * (dist - rho_r) / dist ** 3
        out[j] = -coef * (view.rel_rot[j].T @ view.bearings[j])
    return out


def collision_control(view: LocalView, inbox: Dict[int, np.ndarray], rho_r: float) -> np.ndarray:
    """Robot i's collision-avoidance input (body frame)."""
    u = np.zeros(view.d)
    for j in view.neighbors:
        dist = view.distances[j]
        u += 2.0 * rho_r * (dist - rho_r) / dist ** 3 * view.bearings[j]
    for msg in inbox.values():
        u = u + msg
    return u


def mission_control(position, rotation, target, gains: Gains) -> Tuple[ControlInput, np.ndarray]:
    """Single-robot mission action and robot-target repulsion (body frame)."""
    p = np.asarray(position, dtype=float)[None]
    R = np.asarray(rotation, dtype=float)[None]
    q = np.asarray(target, dtype=float)[None]
    u, om, uc = mission_controls(p, R, q, gains)
    return ControlInput(u[0], om[0]), uc[0]


def composite_control(gains: Gains, rigidity: Optional[ControlInput] = None,
                      collision=None, mission: Optional[ControlInput] = None,
                      target_collision=None, d: Optional[int] = None) -> ControlInput:
    """Gain-weighted sum of the component actions; missing components count as zero.

    Robot-target repulsion shares the collision gain.
    """
    parts = [x for x in (rigidity, mission) if x is not None]
    if d is None:
        if parts:
            d = parts[0].linear.size
        elif collision is not None:
            d = np.asarray(collision).size
        elif target_collision is not None:
            d = np.asarray(target_collision).size
        else:
            raise ValueError("cannot infer dimension from empty components")
    out = ControlInput.zero(d)
    if rigidity is not None:
        out = out + rigidity.scaled(gains.gamma_r, gains.gamma_r_rot)
    if mission is not None:
        out = out + mission.scaled(gains.gamma_m, gains.gamma_m_rot)
    if collision is not None:
        out = out + ControlInput(gains.gamma_c * np.asarray(collision, dtype=float), np.zeros(rot_dim(d)))
    if target_collision is not None:
        out = out + ControlInput(gains.gamma_c * np.asarray(target_collision, dtype=float),
                                 np.zeros(rot_dim(d)))
    return out


def decentralized_controls(state: JointState, graph: DirectedGraph, eig: RigidityEigenpair,
                           cam: CameraParams, wp: WeightParams,
                           u_max: float = U_MAX) -> Tuple[List[ControlInput], List[np.ndarray]]:
    """Two-phase evaluation: every observer publishes, then every robot finalizes.

    Returns per-robot rigidity inputs (unscaled) and collision inputs.
    """
    views = [local_view(i, state, graph, eig) for i in range(state.n)]
    rig_in: List[Dict[int, np.ndarray]] = [{} for _ in views]
    col_in: List[Dict[int, np.ndarray]] = [{} for _ in views]
    for v in views:
        for j, msg in rigidity_shared_terms(v, wp).items():
            rig_in[j][v.index] = msg
        for j, msg in collision_shared_terms(v, cam.rho_r).items():
            col_in[j][v.index] = msg
    rig = [rigidity_control(v, rig_in[v.index], wp, u_max)[0] for v in views]
    col = [collision_control(v, col_in[v.index], cam.rho_r) for v in views]
    return rig, col
