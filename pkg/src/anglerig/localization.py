"""Angle-based position estimation under switching sensing graphs.

Each robot integrates the negative gradient of

    L(p_hat) = gamma_a/2 |alpha(p_hat) - alpha_measured|^2
               + gamma_s/4 (|p_hat_iota - p_hat_kappa|^2 - d_iota_kappa^2)^2

where the angle residual runs over the currently active graph and one robot
(iota) measures its distance to one neighbour (kappa) to fix the scale.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .rigidity import DirectedGraph, angle_set, is_inf_angle_rigid


@dataclass
class Measurements:
    """Measured angle cosines (aligned with ``triples``) plus one distance."""

    triples: np.ndarray
    angles: np.ndarray
    scale_edge: Tuple[int, int] = (0, 1)
    scale_distance: float = 1.0

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.angles = np.asarray(self.angles, dtype=float).reshape(-1)
        if self.angles.shape[0] != self.triples.shape[0]:
            raise ValueError("one measured angle per triple is required")
        if np.any(np.abs(self.angles) > 1.0):
            raise ValueError("angle cosines must lie in [-1, 1]")
        if not self.scale_distance > 0:
            raise ValueError("scale distance must be positive")

    @classmethod
    def from_truth(cls, p, triples, scale_edge=(0, 1), noise_std: float = 0.0,
                   rng: Optional[np.random.Generator] = None) -> "Measurements":
        p = np.asarray(p, dtype=float)
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        alpha = kernels.angle_values(p, triples)
        if noise_std > 0:
            rng = rng if rng is not None else np.random.default_rng()
            alpha = np.clip(alpha + rng.normal(scale=noise_std, size=alpha.shape), -1.0, 1.0)
        i, k = scale_edge
        return cls(triples, alpha, (int(i), int(k)), float(np.linalg.norm(p[k] - p[i])))


@dataclass
class EstimatorState:
    estimates: np.ndarray
    gamma_a: float = 1000.0
    gamma_s: float = 0.05

    def __post_init__(self):
        self.estimates = np.array(self.estimates, dtype=float)
        if not (self.gamma_a > 0 and self.gamma_s > 0):
            raise ValueError("estimator gains must be strictly positive")


@dataclass
class SwitchingSchedule:
    """Piecewise-constant choice among ``graphs``; ``signal`` holds (t_switch, index)."""

    graphs: List[DirectedGraph]
    signal: List[Tuple[float, int]] = field(default_factory=lambda: [(0.0, 0)])

    def __post_init__(self):
        if not self.graphs:
            raise ValueError("schedule needs at least one graph")
        self.signal = sorted((float(t), int(m)) for t, m in self.signal)
        if not self.signal or self.signal[0][0] > 0.0:
            raise ValueError("switching signal must define the graph at t = 0")
        for _, m in self.signal:
            if not 0 <= m < len(self.graphs):
                raise ValueError(f"graph index {m} out of range")
        times = [t for t, _ in self.signal]
        if len(set(times)) != len(times):
            raise ValueError("duplicate switching times")

    def index_at(self, t: float) -> int:
        idx = self.signal[0][1]
        for ts, m in self.signal:
            if ts <= t + 1e-12:
                idx = m
            else:
                break
        return idx

    def min_dwell(self) -> float:
        times = [t for t, _ in self.signal]
        return float(np.min(np.diff(times))) if len(times) > 1 else np.inf

    @classmethod
    def periodic(cls, graphs, dwell: float, t_end: float, order=None, rng=None):
        """Cycle through ``graphs`` (or a random order) with a fixed dwell time."""
        m = len(graphs)
        signal = []
        t, step = 0.0, 0
        prev = -1
        while t < t_end:
            if rng is not None:
                choices = [q for q in range(m) if q != prev] or [0]
                idx = int(rng.choice(choices))
            else:
                idx = (order[step % len(order)] if order else step % m)
            signal.append((t, idx))
            prev = idx
            t += dwell
            step += 1
        return cls(list(graphs), signal)


# --------------------------------------------------------------------------
# cost and gradient flow
# --------------------------------------------------------------------------

def localization_cost(estimates, meas: Measurements, gamma_a: float, gamma_s: float) -> float:
    ph = np.asarray(estimates, dtype=float)
    res = kernels.angle_values(ph, meas.triples) - meas.angles
    i, k = meas.scale_edge
    dh2 = float(np.sum((ph[k] - ph[i]) ** 2))
    return 0.5 * gamma_a * float(res @ res) + 0.25 * gamma_s * (dh2 - meas.scale_distance ** 2) ** 2


def localization_gradient(state: EstimatorState, meas: Measurements) -> np.ndarray:
    """Time derivative of the estimates, i.e. minus the cost gradient, (N, d)."""
    iota, kappa = meas.scale_edge
    return kernels.localization_flow(
        state.estimates, meas.triples, meas.angles, iota, kappa,
        meas.scale_distance, float(state.gamma_a), float(state.gamma_s))


def observer_messages(j: int, own_estimate, neighbor_estimates: Dict[int, np.ndarray],
                      own_triples, own_angles, gamma_a: float) -> Dict[int, np.ndarray]:
    """Terms robot ``j`` sends to each robot it observes.

    For every angle (j, a, b) measured by j, the observed robot a receives
    gamma_a (alpha_hat - alpha) P_ja beta_jb / d_ja, and symmetrically for b.
    """
    out: Dict[int, np.ndarray] = {}
    pj = np.asarray(own_estimate, dtype=float)
    for (jj, a, b), alpha in zip(np.asarray(own_triples).reshape(-1, 3), own_angles):
        assert jj == j
        xa = neighbor_estimates[a] - pj
        xb = neighbor_estimates[b] - pj
        da, db = np.linalg.norm(xa), np.linalg.norm(xb)
        ba, bb = xa / da, xb / db
        c = ba @ bb
        res = gamma_a * (c - alpha)
        out[a] = out.get(a, 0.0) + res * (bb - c * ba) / da
        out[b] = out.get(b, 0.0) + res * (ba - c * bb) / db
    return out


def robot_flow(i: int, own_estimate, neighbor_estimates: Dict[int, np.ndarray],
               own_triples, own_angles, inbox: Sequence[np.ndarray], gamma_a: float,
               scale_term: Optional[np.ndarray] = None) -> np.ndarray:
    """Estimator velocity of robot ``i`` from its local view only.

    ``neighbor_estimates`` must contain exactly the robots i observes;
    ``inbox`` holds the messages produced by :func:`observer_messages` of the
    robots that observe i; ``scale_term`` is the distance-correction share.
    """
    pi = np.asarray(own_estimate, dtype=float)
    v = np.zeros_like(pi)
    for (ii, j, k), alpha in zip(np.asarray(own_triples).reshape(-1, 3), own_angles):
        assert ii == i
        xj = neighbor_estimates[j] - pi
        xk = neighbor_estimates[k] - pi
        dj, dk = np.linalg.norm(xj), np.linalg.norm(xk)
        bj, bk = xj / dj, xk / dk
        c = bj @ bk
        v += gamma_a * (c - alpha) * ((bk - c * bj) / dj + (bj - c * bk) / dk)
    for msg in inbox:
        v -= msg
    if scale_term is not None:
        v += scale_term
    return v


def decentralized_flow(state: EstimatorState, meas: Measurements) -> np.ndarray:
    """Two-phase evaluation: observers publish messages, then each robot updates."""
    ph = state.estimates
    n = ph.shape[0]
    T = meas.triples
    per_robot = [np.flatnonzero(T[:, 0] == i) for i in range(n)]

    def view(i):
        nb = sorted(set(T[per_robot[i], 1].tolist()) | set(T[per_robot[i], 2].tolist()))
        return {j: ph[j].copy() for j in nb}

    inbox: Dict[int, List[np.ndarray]] = {i: [] for i in range(n)}
    for j in range(n):
        rows = per_robot[j]
        for target, msg in observer_messages(j, ph[j], view(j), T[rows], meas.angles[rows],
                                             state.gamma_a).items():
            inbox[target].append(msg)

    iota, kappa = meas.scale_edge
    x = ph[iota] - ph[kappa]
    f = state.gamma_s * (x @ x - meas.scale_distance ** 2)
    scale = {iota: -f * x, kappa: f * x}
    out = np.zeros_like(ph)
    for i in range(n):
        rows = per_robot[i]
        out[i] = robot_flow(i, ph[i], view(i), T[rows], meas.angles[rows], inbox[i],
                            state.gamma_a, scale.get(i))
    return out


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


RK4_STABILITY = 2.0   # conservative share of RK4's real-axis limit (about 2.785)


def flow_stiffness(estimates, meas: Measurements, gamma_a: float, gamma_s: float) -> float:
    """Upper estimate of the largest Hessian eigenvalue of the estimator cost.

    Uses the Gauss-Newton part of the angle term, padded by 50 percent for the
    curvature of the residuals, plus an exact bound for the scale term.
    """
    ph = np.asarray(estimates, dtype=float)
    lam = 0.0
    if meas.triples.shape[0]:
        A = kernels.angle_matrix(ph, meas.triples)
        lam = 1.5 * gamma_a * float(np.linalg.norm(A, 2)) ** 2
    iota, kappa = meas.scale_edge
    x = ph[iota] - ph[kappa]
    r2 = float(x @ x)
    lam += 2.0 * gamma_s * (2.0 * r2 + abs(r2 - meas.scale_distance ** 2))
    return lam


def estimator_step(state: EstimatorState, meas: Measurements, dt: float,
                   method: str = "rk4", substeps="auto") -> EstimatorState:
    """Advance the estimates by ``dt`` along the gradient flow.

    With ``substeps="auto"`` the step is split so that every sub-step stays
    inside the explicit integrator's stability region; an integer forces a
    fixed split.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    iota, kappa = meas.scale_edge
    args = (meas.triples, meas.angles, iota, kappa, meas.scale_distance,
            float(state.gamma_a), float(state.gamma_s))

    def f(x):
        return kernels.localization_flow(x, *args)

    if substeps == "auto":
        limit = RK4_STABILITY if method == "rk4" else 1.0
        lam = flow_stiffness(state.estimates, meas, state.gamma_a, state.gamma_s)
        m = max(1, int(np.ceil(dt * lam / limit)))
    else:
        m = int(substeps)
        if m < 1:
            raise ValueError("substeps must be >= 1")
    h = dt / m
    x = state.estimates
    for _ in range(m):
        if method == "rk4":
            x = _rk4(f, x, h)
        elif method == "euler":
            x = x + h * f(x)
        else:
            raise ValueError(f"unknown integrator {method!r}")
    return replace(state, estimates=x)


# --------------------------------------------------------------------------
# error metric modulo the unobservable rigid motion
# --------------------------------------------------------------------------

def rigid_align(p_hat, p):
    """(Q, r) in SE(d) minimising sum |Q p_i + r - p_hat_i|^2 (Kabsch, det Q = +1)."""
    p_hat = np.asarray(p_hat, dtype=float)
    p = np.asarray(p, dtype=float)
    if p_hat.shape != p.shape:
        raise ValueError("point sets must have equal shapes")
    mu_h = p_hat.mean(axis=0)
    mu = p.mean(axis=0)
    H = (p - mu).T @ (p_hat - mu_h)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(p.shape[1])
    D[-1, -1] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    Q = Vt.T @ D @ U.T
    return Q, mu_h - Q @ mu


def aligned_errors(p_hat, p) -> np.ndarray:
    """Per-robot residuals after optimal rigid alignment of ``p`` onto ``p_hat``."""
    Q, r = rigid_align(p_hat, p)
    return np.linalg.norm(np.asarray(p) @ Q.T + r - np.asarray(p_hat), axis=1)


def alignment_error(p_hat, p) -> float:
    e = aligned_errors(p_hat, p)
    return float(np.sqrt(np.sum(e ** 2)))


# --------------------------------------------------------------------------
# fixed-truth runs
# --------------------------------------------------------------------------

@dataclass
class LocalizationTrace:
    t: np.ndarray
    errors: np.ndarray          # (steps, N) per-robot aligned error
    total: np.ndarray           # (steps,) alignment error
    graph_index: np.ndarray
    warnings: List[str] = field(default_factory=list)


def run_localization(p_true, schedule: SwitchingSchedule, init, gamma_a: float = 1000.0,
                     gamma_s: float = 0.05, dt: float = 1e-2, t_end: float = 60.0,
                     scale_edge=(0, 1), method: str = "rk4", noise_std: float = 0.0,
                     rng: Optional[np.random.Generator] = None,
                     record_every: int = 1) -> LocalizationTrace:
    """Integrate the estimator with fixed true positions and a switching graph."""
    p_true = np.asarray(p_true, dtype=float)
    if schedule.min_dwell() < dt:
        raise ValueError("dwell times shorter than dt cannot be represented")
    notes = []
    triples = [angle_set(g) for g in schedule.graphs]
    for m, (g, T) in enumerate(zip(schedule.graphs, triples)):
        if not is_inf_angle_rigid(p_true, T)[0]:
            notes.append(f"graph {m + 1} is not infinitesimally angle rigid at the true positions")
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    meas_cache = {}

    def measurements(m):
        if noise_std > 0 or m not in meas_cache:
            meas_cache[m] = Measurements.from_truth(p_true, triples[m], scale_edge, noise_std, rng)
        return meas_cache[m]

    state = EstimatorState(np.array(init, dtype=float), gamma_a, gamma_s)
    n_steps = int(np.floor(t_end / dt + 1e-9))
    ts, errs, tot, idx = [], [], [], []
    for s in range(n_steps + 1):
        t = s * dt
        m = schedule.index_at(t)
        if s % record_every == 0 or s == n_steps:
            e = aligned_errors(state.estimates, p_true)
            ts.append(t)
            errs.append(e)
            tot.append(float(np.sqrt(e @ e)))
            idx.append(m)
        if s < n_steps:
            state = estimator_step(state, measurements(m), dt, method)
    return LocalizationTrace(np.array(ts), np.array(errs), np.array(tot), np.array(idx), notes)


def fit_exponential_decay(t, err, floor: float = 1e-10, start_frac: float = 0.5):
    """Least-squares line through log(err) over the decay segment.

    The segment starts once the error has fallen below ``start_frac`` of its
    initial value and stops when it reaches ``floor``. Returns (rate, r2, t0, t1).
    """
    t = np.asarray(t, dtype=float)
    err = np.asarray(err, dtype=float)
    below = np.flatnonzero(err <= start_frac * err[0])
    if below.size == 0:
        return 0.0, 0.0, float(t[0]), float(t[-1])
    i0 = below[0]
    floor_hit = np.flatnonzero(err[i0:] <= floor)
    i1 = i0 + (floor_hit[0] if floor_hit.size else err.size - i0)
    if i1 - i0 < 3:
        return 0.0, 0.0, float(t[i0]), float(t[min(i1, t.size - 1)])
    x, y = t[i0:i1], np.log(err[i0:i1])
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = np.sum((y - (slope * x + intercept)) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2), float(x[0]), float(x[-1])


# --------------------------------------------------------------------------
# config-driven experiment (fixed truth, switching graphs)
# --------------------------------------------------------------------------

LOCALIZE_DEFAULTS = {
    "d": 3,
    "n_robots": 5,
    "seed": 0,
    "positions": None,                  # explicit (N, d) truth, else random in the cube
    "center": None,
    "side": 40.0,
    "graphs": None,                     # explicit one-based edge lists, else random IAR graphs
    "n_graphs": 3,
    "edge_prob": 0.75,
    "dwell": 1.0,
    "switching": "cyclic",              # or "random"
    "gamma_a": 1000.0,
    "gamma_s": 0.05,
    "scale_edge": [1, 2],
    "init_noise_std": 2.0,
    "dt": 0.01,
    "t_end": 60.0,
    "method": "rk4",
    "record_every": 10,
    "fit_floor": 1e-10,
}


@dataclass
class LocalizeResult:
    config: dict
    truth: np.ndarray
    graphs: List[DirectedGraph]
    trace: LocalizationTrace
    rate: float
    r2: float
    fit_window: Tuple[float, float]

    def summary(self) -> dict:
        return {
            "initial_error": float(self.trace.total[0]),
            "final_error": float(self.trace.total[-1]),
            "final_error_per_robot": [float(x) for x in self.trace.errors[-1]],
            "decay_rate": self.rate,
            "decay_r2": self.r2,
            "fit_window": list(self.fit_window),
            "graphs": [[[i + 1, j + 1] for i, j in g.edges] for g in self.graphs],
            "warnings": list(self.trace.warnings),
        }


def _random_iar_graphs(rng, p, count, prob, max_tries=10000):
    n = p.shape[0]
    graphs = []
    for _ in range(max_tries):
        if len(graphs) == count:
            break
        m = rng.uniform(size=(n, n)) < prob
        np.fill_diagonal(m, False)
        g = DirectedGraph.from_mask(m)
        if is_inf_angle_rigid(p, angle_set(g))[0]:
            graphs.append(g)
    if len(graphs) < count:
        raise RuntimeError("could not draw enough infinitesimally angle rigid graphs")
    return graphs


def run_localize_config(data: dict) -> LocalizeResult:
    """Fixed-truth localization run described by a JSON-style dict."""
    unknown = set(data) - set(LOCALIZE_DEFAULTS) - {"name"}
    if unknown:
        raise ValueError(f"unknown localize config keys: {sorted(unknown)}")
    cfg = {**LOCALIZE_DEFAULTS, **data}
    d, n = int(cfg["d"]), int(cfg["n_robots"])
    rng = np.random.default_rng([int(cfg["seed"]), 0])
    if cfg["positions"] is not None:
        p = np.asarray(cfg["positions"], dtype=float)
        if p.shape != (n, d):
            raise ValueError(f"positions must have shape ({n}, {d})")
    else:
        c = np.zeros(d) if cfg["center"] is None else np.asarray(cfg["center"], dtype=float)
        p = c + rng.uniform(-0.5, 0.5, size=(n, d)) * float(cfg["side"])
    if cfg["graphs"] is not None:
        graphs = [DirectedGraph(n, tuple((int(i) - 1, int(j) - 1) for i, j in e)) for e in cfg["graphs"]]
    else:
        graphs = _random_iar_graphs(rng, p, int(cfg["n_graphs"]), float(cfg["edge_prob"]))
    sw_rng = np.random.default_rng([int(cfg["seed"]), 1]) if cfg["switching"] == "random" else None
    schedule = SwitchingSchedule.periodic(graphs, float(cfg["dwell"]), float(cfg["t_end"]), rng=sw_rng)
    noise_rng = np.random.default_rng([int(cfg["seed"]), 2])
    init = p + noise_rng.normal(scale=float(cfg["init_noise_std"]), size=p.shape)
    se = tuple(int(k) - 1 for k in cfg["scale_edge"])
    trace = run_localization(p, schedule, init, float(cfg["gamma_a"]), float(cfg["gamma_s"]),
                             dt=float(cfg["dt"]), t_end=float(cfg["t_end"]), scale_edge=se,
                             method=cfg["method"], record_every=int(cfg["record_every"]))
    rate, r2, t0, t1 = fit_exponential_decay(trace.t, trace.total, floor=float(cfg["fit_floor"]))
    return LocalizeResult(cfg, p, graphs, trace, rate, r2, (t0, t1))
