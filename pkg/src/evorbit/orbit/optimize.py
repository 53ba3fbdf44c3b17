"""
Joint refinement of orbit parameters and landmarks.

Levenberg-Marquardt on Huber-robustified reprojection residuals. Orbit
columns of the Jacobian come from central differences; landmark columns are
differenced for all points at once since each residual depends on a single
landmark. The normal equations are reduced onto the orbit block with a Schur
complement over the 3x3 landmark blocks.

Local parameterisation of the orbit block: [r (optional)], f, a rotation
increment of R0, a rotation increment of the (u, v, n) frame, c. The frame
increment keeps n and u unit and orthogonal by construction; the radius is
held fixed by default to remove the monocular scale freedom.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInitialization
from ..geometry import nearest_rotation, so3_exp
from .init import PoseSet
from .model import CameraIntrinsics, Observations, OrbitParams, residuals, rms_reprojection
from .triangulate import triangulate_landmarks

log = logging.getLogger(__name__)


@dataclass
class OptimizerOptions:
    huber_delta: float = 2.0  # px
    sigma: float = 1.0  # px, isotropic measurement noise
    max_iters: int = 200
    ftol: float = 1e-10  # relative cost decrease
    gtol: float = 1e-10  # gradient inf-norm
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    lambda_min: float = 1e-12
    lambda_max: float = 1e16
    fix_radius: bool = True
    residual_cap: float = 1e3
    fd_step: float = 1e-6
    continuation: bool = True
    first_horizon_revs: float = 1.0
    retriangulate: bool = True

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__})


@dataclass
class Reconstruction:
    orbit: OrbitParams
    landmarks: np.ndarray
    intrinsics: CameraIntrinsics
    times: np.ndarray = None  # window times the poses are derived at
    active: np.ndarray = None  # landmarks constrained by the solve
    rms_reprojection: float = float("nan")
    converged: bool = False
    iterations: int = 0
    cost: float = float("nan")
    initial_cost: float = float("nan")
    cost_history: list = field(default_factory=list)
    stage_histories: list = field(default_factory=list)
    raw_poses: PoseSet = None  # unconstrained poses (e.g. imported SfM), if any

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64).reshape(-1, 3)
        if self.active is None:
            self.active = np.all(np.isfinite(self.landmarks), axis=1)
        if self.times is None:
            self.times = np.zeros(0)

    @property
    def poses(self) -> PoseSet:
        """Imported poses when present, otherwise derived from the orbit at ``times``."""
        if self.raw_poses is not None:
            return self.raw_poses
        return PoseSet.from_orbit(self.times, self.orbit)

    def camera_poses(self, times):
        return PoseSet.from_orbit(times, self.orbit)

    def residuals(self, obs: Observations):
        return residuals(self.orbit, self.landmarks, obs, self.intrinsics)[0]


def huber_cost(s, delta):
    quad = s <= delta
    return np.where(quad, 0.5 * s * s, delta * (s - 0.5 * delta))


def huber_weight(s, delta):
    return np.where(s <= delta, 1.0, delta / np.maximum(s, 1e-300))


class _Problem:
    """Residual, cost and Jacobian evaluation for one observation subset."""

    def __init__(self, obs: Observations, K: CameraIntrinsics, opts: OptimizerOptions):
        self.obs = obs
        self.K = K
        self.opts = opts
        self.n_orbit = 10 if opts.fix_radius else 11

    def res(self, orbit, X):
        r, _ = residuals(orbit, X, self.obs, self.K, self.opts.residual_cap)
        return r / self.opts.sigma

    def cost_of(self, r):
        s = np.linalg.norm(r, axis=1)
        return float(np.sum(huber_cost(s, self.opts.huber_delta)))

    def cost(self, orbit, X):
        return self.cost_of(self.res(orbit, X))

    def retract(self, orbit: OrbitParams, d):
        i = 0
        r = orbit.r
        if not self.opts.fix_radius:
            r = r + d[0]
            i = 1
        f = orbit.f + d[i]
        R0 = nearest_rotation(so3_exp(d[i + 1:i + 4]) @ orbit.R0)
        F = nearest_rotation(orbit.frame @ so3_exp(d[i + 4:i + 7]).T)
        c = orbit.c + d[i + 7:i + 10]
        return OrbitParams(r, f, R0, F[2], F[0], c)

    def orbit_steps(self, orbit):
        h = self.opts.fd_step
        steps = []
        if not self.opts.fix_radius:
            steps.append(h * max(1.0, abs(orbit.r)))
        steps.append(h * max(1.0, abs(orbit.f)))
        steps += [h] * 6
        steps += [h * max(1.0, abs(x)) for x in orbit.c]
        return np.array(steps)

    def jacobians(self, orbit, X):
        M = len(self.obs)
        Jo = np.empty((M, 2, self.n_orbit))
        for j, h in enumerate(self.orbit_steps(orbit)):
            e = np.zeros(self.n_orbit)
            e[j] = h
            Jo[:, :, j] = (self.res(self.retract(orbit, e), X)
                           - self.res(self.retract(orbit, -e), X)) / (2 * h)
        Jl = np.empty((M, 2, 3))
        for a in range(3):
            h = self.opts.fd_step * np.maximum(1.0, np.abs(X[:, a]))
            Xp = X.copy()
            Xm = X.copy()
            Xp[:, a] += h
            Xm[:, a] -= h
            Jl[:, :, a] = (self.res(orbit, Xp) - self.res(orbit, Xm)) / (2 * h[self.obs.point])[:, None]
        return Jo, Jl


def _damped(H, lam):
    d = np.diagonal(H, axis1=-2, axis2=-1)
    floor = 1e-12 * max(float(np.max(d, initial=0.0)), 1e-300)
    eye = np.eye(H.shape[-1])
    return H + lam * np.maximum(d, floor)[..., None] * eye


def levenberg_marquardt(orbit: OrbitParams, X, obs: Observations, K: CameraIntrinsics,
                        opts: OptimizerOptions, points=None):
    """Minimise the robust cost over the orbit and the landmarks in ``points``.

    Landmarks outside ``points`` (and their observations) are ignored.
    Returns (orbit, X, info) with the accepted-cost history in ``info``.
    """
    X = np.array(X, dtype=np.float64)
    n_pts = len(X)
    if points is None:
        points = np.unique(obs.point)
    points = np.asarray(points, dtype=np.int64)
    keep = np.isin(obs.point, points)
    obs = obs.select(keep)
    prob = _Problem(obs, K, opts)
    no = prob.n_orbit
    pidx = obs.point

    r = prob.res(orbit, X)
    cost = prob.cost_of(r)
    history = [cost]
    info = {"converged": False, "iterations": 0, "history": history, "reason": ""}
    if not np.isfinite(cost):
        raise InvalidInitialization("non-finite cost at the initial estimate")
    if len(obs) == 0:
        info.update(converged=True, reason="no observations")
        return orbit, X, info

    lam = opts.lambda_init
    for it in range(opts.max_iters):
        info["iterations"] = it + 1
        s = np.linalg.norm(r, axis=1)
        w = huber_weight(s, opts.huber_delta)
        Jo, Jl = prob.jacobians(orbit, X)
        wJo = Jo * w[:, None, None]
        wJl = Jl * w[:, None, None]
        Hoo = np.einsum("mka,mkb->ab", wJo, Jo)
        go = np.einsum("mka,mk->a", wJo, r)
        Hol = np.zeros((n_pts, no, 3))
        Hll = np.zeros((n_pts, 3, 3))
        gl = np.zeros((n_pts, 3))
        np.add.at(Hol, pidx, np.einsum("mka,mkb->mab", wJo, Jl))
        np.add.at(Hll, pidx, np.einsum("mka,mkb->mab", wJl, Jl))
        np.add.at(gl, pidx, np.einsum("mka,mk->ma", wJl, r))
        gnorm = max(np.abs(go).max(), np.abs(gl[points]).max(initial=0.0))
        if gnorm < opts.gtol or cost == 0.0:
            info.update(converged=True, reason="gradient")
            break

        accepted = False
        while True:
            Hll_d = _damped(Hll[points], lam)
            try:
                Hll_inv = np.linalg.inv(Hll_d)
                HolP = Hol[points]
                W = np.einsum("pab,pbc->pac", HolP, Hll_inv)
                S = _damped(Hoo, lam) - np.einsum("pab,pcb->ac", W, HolP)
                rhs = -go + np.einsum("pab,pb->a", W, gl[points])
                d_orbit = np.linalg.solve(S, rhs)
                d_pts = -np.einsum("pab,pb->pa", Hll_inv,
                                   gl[points] + np.einsum("pba,b->pa", HolP, d_orbit))
                ok = np.all(np.isfinite(d_orbit)) and np.all(np.isfinite(d_pts))
            except np.linalg.LinAlgError:
                ok = False
            if ok:
                cand_orbit = prob.retract(orbit, d_orbit)
                cand_X = X.copy()
                cand_X[points] += d_pts
                cand_r = prob.res(cand_orbit, cand_X)
                cand_cost = prob.cost_of(cand_r)
                if np.isfinite(cand_cost) and cand_cost < cost:
                    rel = (cost - cand_cost) / cost
                    orbit, X, r, cost = cand_orbit, cand_X, cand_r, cand_cost
                    history.append(cost)
                    lam = max(lam * opts.lambda_down, opts.lambda_min)
                    accepted = True
                    break
            lam *= opts.lambda_up
            if lam > opts.lambda_max:
                break
        if not accepted:
            info.update(converged=True, reason="no descent step")
            break
        if rel < opts.ftol:
            info.update(converged=True, reason="relative decrease")
            break
    else:
        info["reason"] = "max_iters"
    info["lambda"] = lam
    return orbit, X, info


def _usable_points(obs: Observations, X):
    counts = np.bincount(obs.point, minlength=len(X))
    finite = np.all(np.isfinite(X), axis=1)
    return np.flatnonzero((counts >= 2) & finite)


def _horizons(obs, f, opts):
    span = float(obs.t.max() - obs.t.min())
    if not opts.continuation or f <= 0:
        return [np.inf]
    h = opts.first_horizon_revs / f
    out = []
    while h < span:
        out.append(h)
        h *= 2.0
    return out + [np.inf]


def optimize(init: Reconstruction, obs: Observations, opts: OptimizerOptions = None) -> Reconstruction:
    """Refine ``init`` against ``obs``; see module docstring for the model.

    With ``opts.continuation`` the solve first uses observations from the
    first ``first_horizon_revs`` revolutions and doubles the time horizon
    until all are in, which keeps the spin-rate phase error small while the
    rate is still uncertain. Landmarks entering a stage are re-triangulated
    under the current orbit when ``opts.retriangulate`` is set. The result
    never has a higher full-problem cost than ``init``.
    """
    opts = opts or OptimizerOptions()
    K = init.intrinsics
    orbit0 = init.orbit.normalized()
    X0 = np.array(init.landmarks, dtype=np.float64)
    if len(obs) == 0:
        raise InvalidInitialization("no observations")

    # points with too few views or no position cannot be refined
    counts = np.bincount(obs.point, minlength=len(X0))
    candidates = np.flatnonzero(counts >= 2)
    if opts.retriangulate and opts.continuation:
        missing = candidates[~np.all(np.isfinite(X0[candidates]), axis=1)]
        if len(missing):
            X0[missing] = triangulate_landmarks(orbit0, K, obs, len(X0), points=missing)[missing]
    usable = _usable_points(obs, X0)
    full_obs = obs.select(np.isin(obs.point, usable))
    full = _Problem(full_obs, K, opts)
    cost0 = full.cost(orbit0, X0)
    if not np.isfinite(cost0):
        raise InvalidInitialization("non-finite cost at the initial estimate")

    def finish(orbit, X, info, stages):
        active = np.zeros(len(X), dtype=bool)
        active[usable] = True
        res = residuals(orbit, X, full_obs, K)[0]
        return Reconstruction(orbit, X, K, np.unique(obs.t), active,
                              rms_reprojection=rms_reprojection(res),
                              converged=bool(info["converged"]), iterations=int(info["iterations"]),
                              cost=full.cost(orbit, X), initial_cost=cost0,
                              cost_history=list(info["history"]), stage_histories=stages)

    # already stationary: leave the estimate untouched
    r0 = full.res(orbit0, X0)
    if cost0 == 0.0 or _gradient_norm(full, orbit0, X0, r0, usable) < opts.gtol:
        return finish(orbit0, X0, {"converged": True, "iterations": 0, "history": [cost0]}, [])

    orbit, X = orbit0, X0.copy()
    stages = []
    entered = np.zeros(len(X), dtype=bool)
    t_min = float(full_obs.t.min())
    info = None
    for horizon in _horizons(full_obs, orbit0.f, opts):
        sel = full_obs.t <= t_min + horizon
        stage_obs = full_obs.select(sel)
        pts = np.flatnonzero(np.bincount(stage_obs.point, minlength=len(X)) >= 2)
        if len(pts) == 0:
            continue
        new = pts[~entered[pts]]
        if opts.retriangulate and opts.continuation and len(new):
            tri = triangulate_landmarks(orbit, K, stage_obs, len(X), points=new)
            good = new[np.all(np.isfinite(tri[new]), axis=1)]
            X[good] = tri[good]
        entered[pts] = True
        orbit, X, info = levenberg_marquardt(orbit, X, stage_obs, K, opts, pts)
        stages.append({"horizon": float(horizon), "observations": int(len(stage_obs)),
                       "points": int(len(pts)), "iterations": info["iterations"],
                       "history": list(info["history"]), "reason": info["reason"]})
        log.debug("stage horizon=%.3g obs=%d cost=%.6g", horizon, len(stage_obs), info["history"][-1])

    if info is None or full.cost(orbit, X) > cost0:
        # continuation went astray; plain solve from the initial estimate
        orbit, X, info = levenberg_marquardt(orbit0, X0, full_obs, K, opts, usable)
        stages.append({"horizon": float("inf"), "observations": int(len(full_obs)),
                       "points": int(len(usable)), "iterations": info["iterations"],
                       "history": list(info["history"]), "reason": "fallback " + info["reason"]})
    return finish(orbit, X, info, stages)


def _gradient_norm(prob: _Problem, orbit, X, r, points):
    s = np.linalg.norm(r, axis=1)
    w = huber_weight(s, prob.opts.huber_delta)
    Jo, Jl = prob.jacobians(orbit, X)
    go = np.einsum("mka,mk->a", Jo * w[:, None, None], r)
    gl = np.zeros((len(X), 3))
    np.add.at(gl, prob.obs.point, np.einsum("mka,mk->ma", Jl * w[:, None, None], r))
    return max(np.abs(go).max(), np.abs(gl[points]).max(initial=0.0))


def cost_gradient(orbit, X, obs, K, opts=None):
    """Robust cost and its gradient in the local parameterisation.

    Gradient layout: orbit block (see module docstring) then landmarks
    flattened row-major.
    """
    opts = opts or OptimizerOptions()
    prob = _Problem(obs, K, opts)
    r = prob.res(orbit, X)
    s = np.linalg.norm(r, axis=1)
    w = huber_weight(s, opts.huber_delta)
    Jo, Jl = prob.jacobians(orbit, X)
    go = np.einsum("mka,mk->a", Jo * w[:, None, None], r)
    gl = np.zeros((len(X), 3))
    np.add.at(gl, obs.point, np.einsum("mka,mk->ma", Jl * w[:, None, None], r))
    return prob.cost_of(r), np.concatenate([go, gl.ravel()])


def retract_state(orbit, X, d, opts=None):
    """Apply a local-parameter step ``d`` (layout as in :func:`cost_gradient`)."""
    opts = opts or OptimizerOptions()
    prob = _Problem(None, None, opts)
    no = prob.n_orbit
    return prob.retract(orbit, d[:no]), np.asarray(X) + d[no:].reshape(-1, 3)
