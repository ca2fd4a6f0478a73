"""Analytic derivatives versus finite differences.

Each check family draws random states, evaluates one analytic Jacobian or
gradient and compares it with a fourth-order central difference of the
underlying scalar or vector function. Errors are relative, measured on the
whole stacked derivative (all robots at once).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from . import kernels
from . import control as ctl
from .geometry import JointState, exp_so, random_rotation, rot_dim
from .localization import EstimatorState, Measurements, localization_cost, localization_gradient
from .rigidity import (DirectedGraph, Framework, angle_function, angle_rigidity_matrix,
                       angle_set, bearing_function, bearing_rigidity_matrix)

TOL_EXACT = 1e-6
TOL_EIGEN = 1e-4
MIN_GAP = 1e-6


def central_diff(f: Callable[[float], np.ndarray], h: float) -> np.ndarray:
    """Derivative at 0 of a one-parameter function, O(h^4) stencil."""
    return (8.0 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12.0 * h)


def rel_err(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=float).ravel()
    b = np.asarray(numeric, dtype=float).ravel()
    scale = max(np.linalg.norm(b), np.linalg.norm(a))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def position_gradient(f, p, h):
    """Finite-difference gradient of scalar f w.r.t. every entry of p."""
    g = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        def shifted(t, idx=idx):
            q = p.copy()
            q[idx] += t
            return np.asarray(f(q))
        g[idx] = central_diff(shifted, h)
    return g


def rotation_gradient(f, R, h):
    """Body-frame so(d) gradient of scalar f w.r.t. every orientation."""
    n, d, _ = R.shape
    dr = rot_dim(d)
    g = np.zeros((n, dr))
    for i in range(n):
        for l in range(dr):
            e = np.zeros(dr)
            e[l] = 1.0

            def shifted(t, i=i, e=e):
                Q = R.copy()
                Q[i] = R[i] @ exp_so(t * e)
                return np.asarray(f(Q))
            g[i, l] = central_diff(shifted, h)
    return g


# --------------------------------------------------------------------------
# random states
# --------------------------------------------------------------------------

def aimed_rotation(direction, rng=None, jitter: float = 0.0) -> np.ndarray:
    """Rotation whose first column is ``direction`` (completed against the last axis)."""
    e = np.asarray(direction, dtype=float)
    d = e.size
    norm = np.linalg.norm(e)
    if norm < 1e-12:
        e = np.eye(d)[0]
    else:
        e = e / norm
    if d == 2:
        R = np.array([[e[0], -e[1]], [e[1], e[0]]])
    else:
        up = np.array([0.0, 0.0, 1.0])
        if abs(e @ up) > 0.95:
            up = np.array([0.0, 1.0, 0.0])
        y = np.cross(up, e)
        y /= np.linalg.norm(y)
        R = np.column_stack([e, y, np.cross(e, y)])
    if jitter > 0 and rng is not None:
        R = R @ exp_so(rng.normal(scale=jitter, size=rot_dim(d)))
    return R


def random_camera_state(rng, n: int, d: int, side: float = 25.0, jitter: float = 0.35):
    """Positions in a cube, cameras aimed near the barycenter."""
    p = rng.uniform(0.0, side, size=(n, d))
    c = p.mean(axis=0)
    R = np.array([aimed_rotation(c - p[i], rng, jitter) for i in range(n)])
    return p, R


def _random_framework(rng, d):
    n = int(rng.integers(3, 7))
    p = rng.normal(size=(n, d)) * 5.0
    m = rng.uniform(size=(n, n)) < 0.7
    np.fill_diagonal(m, False)
    for i in range(n):
        if not m[i].any():
            m[i, (i + 1) % n] = True
    R = np.array([random_rotation(rng, d) for _ in range(n)])
    return Framework(DirectedGraph.from_mask(m), JointState(p, R))


# --------------------------------------------------------------------------
# families; each returns (analytic, numeric)
# --------------------------------------------------------------------------

def _angle_jacobian(rng, d):
    fw = _random_framework(rng, d)
    T = angle_set(fw.graph)
    while T.shape[0] == 0:
        fw = _random_framework(rng, d)
        T = angle_set(fw.graph)
    p = fw.positions
    A = angle_rigidity_matrix(p, T)
    cols = []
    for idx in np.ndindex(p.shape):
        def f(t, idx=idx):
            q = p.copy()
            q[idx] += t
            return angle_function(q, T)
        cols.append(central_diff(f, 1e-3))
    return A, np.stack(cols, axis=1)


def _bearing_jacobian(rng, d):
    fw = _random_framework(rng, d)
    p, R = fw.positions, fw.rotations
    B = bearing_rigidity_matrix(fw)
    cols = []
    for idx in np.ndindex(p.shape):
        def f(t, idx=idx):
            q = p.copy()
            q[idx] += t
            return bearing_function(Framework(fw.graph, JointState(q, R))).ravel()
        cols.append(central_diff(f, 1e-3))
    dr = rot_dim(d)
    for i in range(fw.n):
        for l in range(dr):
            e = np.zeros(dr)
            e[l] = 1.0

            def f(t, i=i, e=e):
                Q = R.copy()
                Q[i] = exp_so(t * e) @ R[i]     # world-frame angular velocity
                return bearing_function(Framework(fw.graph, JointState(p, Q))).ravel()
            cols.append(central_diff(f, 1e-3))
    return B, np.stack(cols, axis=1)


def _localization(rng, d):
    fw = _random_framework(rng, d)
    T = angle_set(fw.graph)
    p = fw.positions
    meas = Measurements.from_truth(p, T, (0, 1))
    est = p + rng.normal(scale=1.0, size=p.shape)
    state = EstimatorState(est, gamma_a=float(rng.uniform(1, 1000)), gamma_s=float(rng.uniform(0.01, 1)))
    g = position_gradient(lambda q: localization_cost(q, meas, state.gamma_a, state.gamma_s), est, 1e-4)
    return localization_gradient(state, meas), -g


def _collision(rng, d):
    cam = ctl.CameraParams(30.0, 0.5)
    p, R = random_camera_state(rng, int(rng.integers(3, 8)), d)
    mask = ctl.sensing_mask(p, R, cam)
    ii, jj = np.nonzero(mask)

    def cost(q):
        dist = np.linalg.norm(q[jj] - q[ii], axis=1)
        return float(np.sum(((dist - cam.rho_r) / dist) ** 2))
    g = position_gradient(cost, p, 1e-3)
    u = ctl.collision_controls(p, R, mask, cam.rho_r)
    return np.einsum("iab,ib->ia", R, u), -g


def _mission_parts(rng, d):
    gains = ctl.Gains(mu_r=float(rng.uniform(0.5, 8)), mu_f=float(rng.uniform(0.5, 2)),
                      rho_t=float(rng.uniform(10, 30)))
    n = int(rng.integers(1, 5))
    p, R = random_camera_state(rng, n, d, jitter=0.0)
    q = p + rng.normal(size=(n, d)) * rng.uniform(3, 25)
    for i in range(n):
        R[i] = random_rotation(rng, d)

    def cost(pp, RR):
        x = q - pp
        dist = np.linalg.norm(x, axis=1)
        zeta = np.einsum("ia,ia->i", RR[:, :, 0], x) / dist
        rep = np.where(dist < gains.rho_t, ((dist - gains.rho_t) / dist) ** 2, 0.0)
        return float(np.sum(gains.mu_r * kernels.sigma(dist, 0.0, gains.rho_t)
                            - gains.mu_f * kernels.sigma(zeta, -1.0, 1.0) + rep))
    u, om, uc = ctl.mission_controls(p, R, q, gains)
    gp = position_gradient(lambda pp: cost(pp, R), p, 1e-4)
    gr = rotation_gradient(lambda RR: cost(p, RR), R, 1e-4)
    return np.einsum("iab,ib->ia", R, u + uc), -gp, om, -gr


def _mission_linear(rng, d):
    a, b, _, _ = _mission_parts(rng, d)
    return a, b


def _mission_angular(rng, d):
    _, _, a, b = _mission_parts(rng, d)
    return a, b


def _eligible_rigidity_state(rng, d, cam, wp):
    while True:
        n = int(rng.integers(4 if d == 3 else 3, 8))
        p, R = random_camera_state(rng, n, d)
        if n * d < ctl.eigen_index(d):
            continue
        eig = ctl.weighted_rigidity_arrays(p, R, cam, wp)
        if eig.eigenvalue > MIN_GAP and eig.multiplicity_gap > MIN_GAP:
            return p, R, eig


def _rigidity_parts(rng, d, want_rotation):
    cam = ctl.CameraParams(30.0, 0.5)
    wp = ctl.WeightParams.from_camera(cam)
    p, R, eig = _eligible_rigidity_state(rng, d, cam, wp)
    u, om, _ = ctl.rigidity_controls(p, R, eig, wp)

    def logl(pp, RR):
        return np.log(ctl.weighted_rigidity_arrays(pp, RR, cam, wp).eigenvalue)
    if want_rotation:
        return om, rotation_gradient(lambda RR: logl(p, RR), R, 1e-4)
    g = position_gradient(lambda pp: logl(pp, R), p, 1e-4)
    return u, np.einsum("iab,ia->ib", R, g)


def _rigidity_linear(rng, d):
    return _rigidity_parts(rng, d, False)


def _rigidity_angular(rng, d):
    return _rigidity_parts(rng, d, True)


@dataclass(frozen=True)
class Family:
    name: str
    run: Callable
    threshold: float


FAMILIES = (
    Family("angle_jacobian", _angle_jacobian, TOL_EXACT),
    Family("bearing_jacobian", _bearing_jacobian, TOL_EXACT),
    Family("localization_gradient", _localization, TOL_EXACT),
    Family("collision_gradient", _collision, TOL_EXACT),
    Family("mission_linear", _mission_linear, TOL_EXACT),
    Family("mission_angular", _mission_angular, TOL_EXACT),
    Family("rigidity_linear", _rigidity_linear, TOL_EIGEN),
    Family("rigidity_angular", _rigidity_angular, TOL_EIGEN),
)


@dataclass
class FamilyResult:
    name: str
    trials: int
    worst: float
    threshold: float
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0


def run_family(fam: Family, trials: int, seed: int, fault: bool = False) -> FamilyResult:
    """Run ``trials`` checks alternating d = 2 and d = 3.

    ``fault`` flips the sign of the analytic side, a negative control that
    every family must fail.
    """
    rng = np.random.default_rng(seed)
    worst, fails = 0.0, 0
    for t in range(trials):
        d = 2 + (t % 2)
        a, b = fam.run(rng, d)
        if fault:
            a = -np.asarray(a)
        e = rel_err(a, b)
        worst = max(worst, e)
        fails += int(not e < fam.threshold)
    return FamilyResult(fam.name, trials, worst, fam.threshold, fails)


def run_all(trials: int, seed: int, fault: Optional[str] = None,
            families=None) -> Dict[str, FamilyResult]:
    """All families with independent seeds derived from ``seed``."""
    out = {}
    for n, fam in enumerate(FAMILIES):
        if families is not None and fam.name not in families:
            continue
        out[fam.name] = run_family(fam, trials, seed + 1000 * n,
                                   fault=(fault == fam.name or fault == "all"))
    return out
