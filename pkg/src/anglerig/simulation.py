"""Scenario execution: robots, targets, controller and co-running estimator.

A scenario is described by a JSON-compatible dict (see :class:`ScenarioConfig`).
Robot indices and target indices in config files are one-based; everything in
memory is zero-based.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from . import control as ctl
from . import kernels
from .geometry import JointState, exp_so, random_rotation, rot_dim
from .gradcheck import aimed_rotation
from .localization import EstimatorState, Measurements, aligned_errors, estimator_step
from .rigidity import (DirectedGraph, Framework, check_theorem1, bearing_span_margins,
                       angle_rigidity_matrix, bearing_rigidity_matrix, eigen_index)

COLLISION_ABORT = 1e-3
AMBIGUOUS_BAND = (1e-12, 1e-5)
SEED_OFFSETS = {"placement": 0, "estimator": 1, "orientation": 2}


class ConfigError(ValueError):
    """Invalid scenario configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: List[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


# --------------------------------------------------------------------------
# targets
# --------------------------------------------------------------------------

class TargetTrajectory:
    """Continuous target path: ``fixed``, ``waypoint-spline`` or ``sphere-lissajous``."""

    KINDS = ("fixed", "waypoint-spline", "sphere-lissajous")

    def __init__(self, kind: str, params: dict, d: int):
        if kind not in self.KINDS:
            raise ConfigError([f"unknown target kind {kind!r}; expected one of {self.KINDS}"])
        self.kind, self.params, self.d = kind, dict(params), d
        if kind == "fixed":
            self._fixed = self._vec("position")
        elif kind == "waypoint-spline":
            times = np.asarray(params.get("times", []), dtype=float)
            pts = np.asarray(params.get("points", []), dtype=float)
            if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
                raise ConfigError(["waypoint-spline needs >= 2 strictly increasing times"])
            if pts.shape != (times.size, d):
                raise ConfigError([f"waypoint-spline points must have shape ({times.size}, {d})"])
            self._spline = CubicSpline(times, pts, axis=0, bc_type=params.get("bc", "clamped"))
            self._span = (times[0], times[-1])
        else:
            self._center = self._vec("center")
            self._radius = float(params.get("radius", 0.0))
            if not self._radius > 0:
                raise ConfigError(["sphere-lissajous radius must be positive"])

    def _vec(self, key):
        v = np.asarray(self.params.get(key, []), dtype=float)
        if v.shape != (self.d,):
            raise ConfigError([f"target {key} must be a {self.d}-vector"])
        return v

    def position(self, t: float) -> np.ndarray:
        if self.kind == "fixed":
            return self._fixed.copy()
        if self.kind == "waypoint-spline":
            return self._spline(min(max(t, self._span[0]), self._span[1]))
        q = self.params
        az = q.get("azimuth_rate", 0.1) * t + q.get("azimuth_phase", 0.0)
        if self.d == 2:
            return self._center + self._radius * np.array([math.cos(az), math.sin(az)])
        el = q.get("elevation_amplitude", 0.6) * math.sin(
            q.get("elevation_rate", 0.17) * t + q.get("elevation_phase", 0.0))
        return self._center + self._radius * np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

DEFAULTS = {
    "d": 3,
    "seed": 0,
    "placement": {"center": None, "side": 40.0, "aim": "barycenter", "min_separation": 1.0,
                  "require_rigid_start": False},
    "camera": {"rho_r": 30.0, "rho_f": 0.5},
    "weights": None,
    "gains": {},
    "controls": {"rigidity": True, "collision": True, "mission": True},
    "localization": {"enabled": True, "gamma_a": 1000.0, "gamma_s": 0.05,
                     "scale_edge": [1, 2], "init_noise_std": 2.0},
    "targets": [],
    "assignment": None,
    "integrator": {"method": "rk4", "dt": 0.01, "t_end": 150.0},
    "u_max": ctl.U_MAX,
}

REQUIRED = ("n_robots",)


@dataclass
class ScenarioConfig:
    name: str
    d: int
    n_robots: int
    seed: int
    center: np.ndarray
    side: float
    aim: str
    min_separation: float
    require_rigid_start: bool
    camera: ctl.CameraParams
    weights: ctl.WeightParams
    gains: ctl.Gains
    controls: Dict[str, bool]
    localization: dict
    targets: List[TargetTrajectory]
    assignment: np.ndarray          # zero-based target per robot
    method: str
    dt: float
    t_end: float
    u_max: float
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.dt + 1e-9))

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        errs: List[str] = []
        for key in REQUIRED:
            if key not in data:
                errs.append(f"missing required field '{key}'")
        if errs:
            raise ConfigError(errs)
        cfg = copy.deepcopy(DEFAULTS)
        for key, val in data.items():
            if isinstance(cfg.get(key), dict) and isinstance(val, dict):
                cfg[key].update(val)
            else:
                cfg[key] = copy.deepcopy(val)
        d, n = cfg["d"], cfg["n_robots"]
        if d not in (2, 3):
            errs.append(f"d must be 2 or 3, got {d}")
            d = 3
        if not isinstance(n, int) or n < 1:
            errs.append(f"n_robots must be a positive integer, got {n}")
            n = 1
        pl = cfg["placement"]
        center = np.zeros(d) if pl["center"] is None else np.asarray(pl["center"], dtype=float)
        if center.shape != (d,):
            errs.append(f"placement.center must be a {d}-vector")
        if not pl["side"] > 0:
            errs.append("placement.side must be positive")
        if pl["aim"] not in ("barycenter", "random"):
            errs.append("placement.aim must be 'barycenter' or 'random'")
        cam = wp = gains = None
        try:
            cam = ctl.CameraParams(**cfg["camera"])
        except (TypeError, ValueError) as exc:
            errs.append(f"camera: {exc}")
        if cam is not None:
            try:
                wp = (ctl.WeightParams.from_camera(cam) if cfg["weights"] is None
                      else ctl.WeightParams(**cfg["weights"]))
                wp.validate(cam)
            except (TypeError, ValueError) as exc:
                errs.append(f"weights: {exc}")
        try:
            gains = ctl.Gains(**cfg["gains"])
        except (TypeError, ValueError) as exc:
            errs.append(f"gains: {exc}")
        unknown = set(cfg["controls"]) - {"rigidity", "collision", "mission"}
        if unknown:
            errs.append(f"controls: unknown keys {sorted(unknown)}")
        loc = cfg["localization"]
        se = loc.get("scale_edge", [1, 2])
        if loc.get("enabled", True) and (len(se) != 2 or se[0] == se[1] or not all(1 <= k <= n for k in se)):
            errs.append(f"localization.scale_edge must name two distinct robots in 1..{n}")
        if not (loc.get("gamma_a", 0) > 0 and loc.get("gamma_s", 0) > 0):
            errs.append("localization gains must be positive")
        if loc.get("init_noise_std", 0) < 0:
            errs.append("localization.init_noise_std must be >= 0")
        targets = []
        for m, tcfg in enumerate(cfg["targets"]):
            tcfg = dict(tcfg)
            try:
                targets.append(TargetTrajectory(tcfg.pop("kind", "fixed"), tcfg, d))
            except ConfigError as exc:
                errs.extend(f"targets[{m + 1}]: {e}" for e in exc.errors)
        assign = cfg["assignment"]
        if cfg["controls"].get("mission", True):
            if assign is None or len(assign) != n:
                errs.append(f"assignment must list a target (1..{len(targets)}) for each of {n} robots")
            elif not all(isinstance(a, int) and 1 <= a <= len(targets) for a in assign):
                errs.append("assignment refers to a missing target")
        assignment = (np.asarray(assign, dtype=np.int64) - 1 if assign is not None
                      else np.zeros(n, dtype=np.int64))
        integ = cfg["integrator"]
        if integ.get("method") not in ("rk4", "euler"):
            errs.append("integrator.method must be 'rk4' or 'euler'")
        if not integ.get("dt", 0) > 0:
            errs.append("integrator.dt must be positive")
        if not integ.get("t_end", -1) >= 0:
            errs.append("integrator.t_end must be >= 0")
        if not cfg["u_max"] > 0:
            errs.append("u_max must be positive")
        if errs:
            raise ConfigError(errs)
        return cls(cfg.get("name", "scenario"), d, n, int(cfg["seed"]), center, float(pl["side"]),
                   pl["aim"], float(pl["min_separation"]), bool(pl["require_rigid_start"]), cam, wp, gains, dict(cfg["controls"]),
                   dict(loc), targets, assignment, integ["method"], float(integ["dt"]),
                   float(integ["t_end"]), float(cfg["u_max"]), raw=cfg)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def resolved(self) -> dict:
        """Fully expanded config, suitable for re-running."""
        out = copy.deepcopy(self.raw)
        out["weights"] = {"a_r": self.weights.a_r, "b_r": self.weights.b_r,
                          "a_f": self.weights.a_f, "b_f": self.weights.b_f}
        out["gains"] = dict(self.gains.__dict__)
        out["name"] = self.name
        out["seed"] = self.seed
        return out

    def with_seed(self, seed: int) -> "ScenarioConfig":
        data = self.resolved()
        data["seed"] = int(seed)
        return ScenarioConfig.from_dict(data)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``scenario_a``, ``scenario_b``, ``localize``)."""
    path = Path(__file__).parent / "configs" / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(path)
    return path


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def _rng(cfg: ScenarioConfig, stream: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, SEED_OFFSETS[stream]])


def initialize(cfg: ScenarioConfig):
    """Seeded placement in the cube, cameras aimed at the barycenter, noisy estimates."""
    rng = _rng(cfg, "placement")
    rr = _rng(cfg, "orientation")
    half = 0.5 * cfg.side
    for _ in range(10000):
        p = cfg.center + rng.uniform(-half, half, size=(cfg.n_robots, cfg.d))
        if cfg.n_robots > 1 and _min_dist(p) < cfg.min_separation:
            continue
        bc = p.mean(axis=0)
        if cfg.aim == "barycenter":
            R = np.array([aimed_rotation(bc - p[i]) for i in range(cfg.n_robots)])
        else:
            R = np.array([random_rotation(rr, cfg.d) for _ in range(cfg.n_robots)])
        if cfg.require_rigid_start:
            eig = ctl.weighted_rigidity_arrays(p, R, cfg.camera, cfg.weights)
            if not eig.eigenvalue > eig.tolerance:
                continue
        break
    else:
        raise ConfigError(["could not draw an initial placement meeting the placement constraints"])
    state = JointState(p, R)
    est = None
    if cfg.localization.get("enabled", True):
        noise = float(cfg.localization.get("init_noise_std", 0.0))
        er = _rng(cfg, "estimator")
        est = EstimatorState(p + er.normal(scale=noise, size=p.shape) if noise > 0 else p.copy(),
                             float(cfg.localization["gamma_a"]), float(cfg.localization["gamma_s"]))
    graph = DirectedGraph.from_mask(ctl.sensing_mask(p, R, cfg.camera))
    return state, est, graph


def _min_dist(p) -> float:
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    return float(dist.min())


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------

class ControlField:
    """Composite body-frame inputs as a function of (p, R, t)."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rig = ctl.RigidityController(cfg.camera, cfg.weights, cfg.u_max)
        self.flags = {"gap_warning": False, "clamped": False}
        self.last_eig: Optional[ctl.RigidityEigenpair] = None
        self._target_cache: Dict[float, np.ndarray] = {}

    def targets_at(self, t: float) -> np.ndarray:
        hit = self._target_cache.get(t)
        if hit is None:
            pos = np.array([tr.position(t) for tr in self.cfg.targets])
            hit = pos[self.cfg.assignment]
            if len(self._target_cache) > 4:
                self._target_cache.clear()
            self._target_cache[t] = hit
        return hit

    def __call__(self, p, R, t):
        cfg, g = self.cfg, self.cfg.gains
        n, d = p.shape
        u = np.zeros((n, d))
        om = np.zeros((n, rot_dim(d)))
        on = cfg.controls
        if on.get("rigidity", True):
            ur, wr, eig, fl = self.rig(p, R)
            self.last_eig = eig
            for k in self.flags:
                self.flags[k] |= fl[k]
            u += g.gamma_r * ur
            om += g.gamma_r_rot * wr
        if on.get("collision", True):
            mask = ctl.sensing_mask(p, R, cfg.camera)
            u += g.gamma_c * ctl.collision_controls(p, R, mask, cfg.camera.rho_r)
        if on.get("mission", True) and cfg.targets:
            um, wm, uc = ctl.mission_controls(p, R, self.targets_at(t), g)
            u += g.gamma_m * um + g.gamma_c * uc
            om += g.gamma_m_rot * wm
        return u, om


def _so_exp_rows(R, theta):
    return kernels.right_exp(np.ascontiguousarray(R), np.ascontiguousarray(theta, dtype=float))


def integrate_step(f, p, R, t, dt, method="rk4"):
    """One step of p' = R u, R' = R S(omega); Runge-Kutta-Munthe-Kaas for RK4."""
    if method == "euler":
        u, om = f(p, R, t)
        return p + dt * np.einsum("iab,ib->ia", R, u), _so_exp_rows(R, dt * om)
    if method != "rk4":
        raise ValueError(f"unknown integrator {method!r}")
    n = p.shape[0]
    ks_p, ks_th = [], []
    theta = np.zeros((n, rot_dim(p.shape[1])))
    for c, wgt in ((0.0, None), (0.5, 0), (0.5, 1), (1.0, 2)):
        if wgt is None:
            ps, Rs = p, R
        else:
            theta = c * dt * ks_th[wgt]
            ps = p + c * dt * ks_p[wgt]
            Rs = _so_exp_rows(R, theta)
        u, om = f(ps, Rs, t + c * dt)
        ks_p.append(np.einsum("iab,ib->ia", Rs, u))
        ks_th.append(kernels.dexpinv(np.ascontiguousarray(theta), np.ascontiguousarray(om)))
    dp = (ks_p[0] + 2 * ks_p[1] + 2 * ks_p[2] + ks_p[3]) / 6.0
    dth = (ks_th[0] + 2 * ks_th[1] + 2 * ks_th[2] + ks_th[3]) / 6.0
    return p + dt * dp, _so_exp_rows(R, dt * dth)


# --------------------------------------------------------------------------
# trace
# --------------------------------------------------------------------------

FLAG_GAP = 1
FLAG_CLAMP = 2
FLAG_ESTIMATOR_NON_IAR = 4


@dataclass
class SimTrace:
    t: np.ndarray
    positions: np.ndarray          # (steps, N, d)
    rotations: np.ndarray          # (steps, N, d, d)
    edges: List[np.ndarray]        # one-based (i, j) pairs per step
    lambda8: np.ndarray
    lambda8_weighted: np.ndarray
    aim_deg: np.ndarray            # (steps, N)
    loc_err: np.ndarray            # (steps, N)
    flags: np.ndarray              # bitmask per step
    aborted: bool = False
    abort: Optional[dict] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def n_edges(self) -> np.ndarray:
        return np.array([len(e) for e in self.edges])

    def csv_header(self) -> List[str]:
        n = self.aim_deg.shape[1]
        return (["t", "lambda8", "lambda8_weighted"] + [f"aim_deg_{i + 1}" for i in range(n)]
                + [f"loc_err_{i + 1}" for i in range(n)] + ["n_edges", "flags"])

    def write_csv(self, path) -> None:
        ne = self.n_edges
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(self.csv_header()) + "\n")
            for s in range(self.t.size):
                vals = [self.t[s], self.lambda8[s], self.lambda8_weighted[s],
                        *self.aim_deg[s], *self.loc_err[s]]
                fh.write(",".join(f"{v:.9g}" for v in vals) + f",{ne[s]},{self.flags[s]}\n")

    def summary(self) -> dict:
        third = self.t >= (2.0 / 3.0) * self.t[-1] if self.t.size else self.t
        out = {
            "steps": int(self.t.size),
            "t_final": float(self.t[-1]) if self.t.size else 0.0,
            "aborted": self.aborted,
            "abort": self.abort,
            "lambda8_min": float(np.min(self.lambda8)) if self.t.size else None,
            "lambda8_positive_throughout": bool(np.all(self.lambda8 > 0)),
            "lambda8_weighted_min": float(np.min(self.lambda8_weighted)) if self.t.size else None,
            "aim_deg_final": _list(self.aim_deg[-1]) if self.t.size else [],
            "aim_deg_max_final_third": _list(self.aim_deg[third].max(axis=0)) if self.t.size else [],
            "loc_err_final": _list(self.loc_err[-1]) if self.t.size else [],
            "min_pairwise_distance": float(min(_min_dist(p) for p in self.positions))
            if self.positions.shape[1] > 1 else None,
            "gap_warning_steps": int(np.sum(self.flags & FLAG_GAP > 0)),
            "clamp_steps": int(np.sum(self.flags & FLAG_CLAMP > 0)),
            "estimator_non_iar_steps": int(np.sum(self.flags & FLAG_ESTIMATOR_NON_IAR > 0)),
            "warnings": list(self.warnings),
        }
        return out


def _list(a):
    return [None if not np.isfinite(x) else float(x) for x in np.asarray(a, dtype=float)]


def aim_angles_deg(p, R, targets) -> np.ndarray:
    x = targets - p
    zeta = np.einsum("ia,ia->i", R[:, :, 0], x) / np.linalg.norm(x, axis=1)
    return np.degrees(np.arccos(np.clip(zeta, -1.0, 1.0)))


# --------------------------------------------------------------------------
# stepping
# --------------------------------------------------------------------------

class Simulation:
    """Owns the state, the control field and the estimator of one run."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        state, self.est, _ = initialize(cfg)
        self.p, self.R = state.positions, state.rotations
        self.t = 0.0
        self.steps = 0
        self.field = ControlField(cfg)
        se = cfg.localization.get("scale_edge", [1, 2])
        self.scale_edge = (int(se[0]) - 1, int(se[1]) - 1)

    def measure(self):
        """Sensing mask and angle set at the current pose."""
        mask = ctl.sensing_mask(self.p, self.R, self.cfg.camera)
        return mask, kernels.triples_from_mask(mask)

    def estimator_update(self, triples) -> None:
        """One estimator step with angles measured at the current true pose."""
        if self.est is not None:
            meas = Measurements.from_truth(self.p, triples, self.scale_edge)
            self.est = estimator_step(self.est, meas, self.cfg.dt)

    def metrics(self, mask, triples):
        cfg = self.cfg
        p, R = self.p, self.R
        if p.size >= eigen_index(cfg.d):
            lam, lam_ok = ctl.scaled_rigidity_eigenvalue(p, triples, verdict=True)
            eig = self.field.rig.eigenpair(p, R)
            lam_w = eig.eigenvalue if eig.eigenvalue > eig.tolerance else 0.0
        else:
            lam, lam_ok, lam_w = 0.0, False, 0.0
        if cfg.targets:
            aim = aim_angles_deg(p, R, self.field.targets_at(self.t))
        else:
            aim = np.full(cfg.n_robots, np.nan)
        err = (aligned_errors(self.est.estimates, p) if self.est is not None
               else np.full(cfg.n_robots, np.nan))
        ii, jj = np.nonzero(mask)
        return (lam if lam_ok else 0.0), lam_w, aim, err, np.stack([ii + 1, jj + 1], axis=1)

    def step(self):
        """Advance by one dt; returns an abort record or None."""
        cfg = self.cfg
        p, R = integrate_step(self.field, self.p, self.R, self.t, cfg.dt, cfg.method)
        self.t = self.t + cfg.dt
        self.steps += 1
        dmin = _min_dist(p) if cfg.n_robots > 1 else np.inf
        self.p, self.R = p, R
        if not np.all(np.isfinite(p)) or dmin < COLLISION_ABORT:
            return {"t": self.t, "min_distance": dmin,
                    "reason": "collision" if np.isfinite(dmin) else "non-finite state"}
        return None


def run(cfg: ScenarioConfig, progress=None) -> SimTrace:
    """Integrate the scenario to ``t_end``; an abort returns the partial trace."""
    sim = Simulation(cfg)
    n_steps = cfg.n_steps
    n, d = cfg.n_robots, cfg.d
    T = n_steps + 1
    ts = np.zeros(T)
    P = np.zeros((T, n, d))
    Rs = np.zeros((T, n, d, d))
    lam = np.zeros(T)
    lam_w = np.zeros(T)
    aim = np.zeros((T, n))
    err = np.zeros((T, n))
    flags = np.zeros(T, dtype=np.int64)
    edges: List[np.ndarray] = []
    warnings: List[str] = []
    abort = None
    last = 0
    for s in range(T):
        if s > 0:
            sim.field.flags = {"gap_warning": False, "clamped": False}
            abort = sim.step()
            if abort is not None:
                break
        mask, triples = sim.measure()
        if s > 0:
            sim.estimator_update(triples)
            if sim.est is not None and not np.all(np.isfinite(sim.est.estimates)):
                abort = {"t": sim.t, "reason": "estimator diverged"}
                break
            fl = sim.field.flags
            flags[s] |= FLAG_GAP * fl["gap_warning"] | FLAG_CLAMP * fl["clamped"]
        l8, l8w, a, e, E = sim.metrics(mask, triples)
        if sim.est is not None and l8 <= 0.0:
            flags[s] |= FLAG_ESTIMATOR_NON_IAR
        ts[s] = s * cfg.dt
        P[s], Rs[s] = sim.p, sim.R
        lam[s], lam_w[s], aim[s], err[s] = l8, l8w, a, e
        edges.append(E)
        last = s
        if progress is not None:
            progress(s, T)
    k = last + 1
    if np.any(flags[:k] & FLAG_CLAMP):
        warnings.append("rigidity input clamped at the eigenvalue floor")
    if np.any(flags[:k] & FLAG_GAP):
        warnings.append("non-simple rigidity eigenvalue; previous gradient reused")
    return SimTrace(ts[:k], P[:k], Rs[:k], edges, lam[:k], lam_w[:k], aim[:k], err[:k],
                    flags[:k], aborted=abort is not None, abort=abort, warnings=warnings)


# --------------------------------------------------------------------------
# random frameworks for the Monte-Carlo suites
# --------------------------------------------------------------------------

class ResampleLimitError(RuntimeError):
    pass


def _ambiguous(M, band=AMBIGUOUS_BAND) -> bool:
    if M.size == 0:
        return False
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return False
    r = s / s[0]
    return bool(np.any((r > band[0]) & (r < band[1])))


def random_framework(seed, n: int, d: int, degree_range: Tuple[int, int],
                     margin: float = 1e-3, max_tries: int = 1000,
                     rng: Optional[np.random.Generator] = None) -> Framework:
    """Uniform positions in the unit cube, random orientations and out-neighbours.

    Draws whose bearing spans are nearly degenerate (smallest relevant
    singular value < ``margin``) or whose rigidity matrices have a singular
    value ratio inside :data:`AMBIGUOUS_BAND` are rejected and redrawn.
    """
    lo, hi = degree_range
    if not 1 <= lo <= hi <= n - 1:
        raise ValueError(f"degree range must satisfy 1 <= lo <= hi <= N-1, got {degree_range}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    for _ in range(max_tries):
        p = rng.uniform(size=(n, d))
        edges = []
        for i in range(n):
            k = int(rng.integers(lo, hi + 1))
            others = [j for j in range(n) if j != i]
            edges.extend((i, int(j)) for j in rng.choice(others, size=k, replace=False))
        g = DirectedGraph(n, tuple(edges))
        if bearing_span_margins(p, g).min() < margin:
            continue
        R = np.array([random_rotation(rng, d) for _ in range(n)])
        fw = Framework(g, JointState(p, R))
        if _ambiguous(angle_rigidity_matrix(p, fw.angles())) or _ambiguous(bearing_rigidity_matrix(fw)):
            continue
        return fw
    raise ResampleLimitError(f"no acceptable framework after {max_tries} draws")


@dataclass
class Theorem1Stats:
    trials: int = 0
    inconsistencies: int = 0
    counts: Dict[str, int] = field(default_factory=dict)

    def add(self, key: str) -> None:
        self.counts[key] = self.counts.get(key, 0) + 1


def theorem1_experiment(trials: int, d: int, seed: int, n_range=(3, 7)) -> Theorem1Stats:
    """Monte-Carlo comparison of IBR with (IAR and bearing spans of dim >= d-1)."""
    rng = np.random.default_rng(seed)
    stats = Theorem1Stats()
    for _ in range(trials):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        lo = int(rng.integers(1, n))
        fw = random_framework(None, n, d, (lo, n - 1), rng=rng)
        v = check_theorem1(fw)
        stats.trials += 1
        if v.ibr:
            key = "ibr_and_iar_span_ok" if v.iar and v.min_span_ok else "ibr_only"
        elif not v.iar:
            key = "not_ibr_not_iar"
        elif not v.min_span_ok:
            key = "not_ibr_span_fail"
        else:
            key = "not_ibr_but_iar_span_ok"
        stats.add(key)
        stats.inconsistencies += int(not v.consistent)
    return stats
