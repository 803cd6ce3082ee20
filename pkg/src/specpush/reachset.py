"""Approximate reachable set of the object from one resting pose.

Pipeline: sample fingertip placements on the object boundary, linearize
the inverse dynamics at each, pool the spectral directions, drop pulls and
pushes into the environment, cluster, normalize and roll each survivor out
under PD tracking in the full simulator.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _sim
from .dynamics import T_REST, T_SETTLE_MAX, V_REST, Configuration, SceneModel, contact_forces, settle_trace
from .geometry import Pose2, rotate, sample_surface_point, transform_point
from .invdyn import InfeasibleLinearization, a_matrix, linearize, retained_rank, spectrum


class NoValidGrasp(RuntimeError):
    pass


class EmptyReachableSet(RuntimeError):
    pass


class Termination(enum.Enum):
    CONTACT_LOST = "ContactLost"
    STOPPED = "Stopped"
    ROTATION_LIMIT = "RotationLimit"
    TIMEOUT = "Timeout"


_TERM = {
    _sim.TERM_CONTACT_LOST: Termination.CONTACT_LOST,
    _sim.TERM_STOPPED: Termination.STOPPED,
    _sim.TERM_ROTATION: Termination.ROTATION_LIMIT,
    _sim.TERM_TIMEOUT: Termination.TIMEOUT,
}


@dataclass(frozen=True)
class ReachParams:
    n_grasps: int = 100
    n_clusters: int = 9
    t_proj: float = 2.0
    t_track: float = 0.4
    kp: float = 5000.0
    kd: float = 500.0
    dt_action: float = 1e-2
    dt_settle: float = 1e-3
    dt: float = 1e-3
    d_contact: float = 1e-3
    v_stopped: float = 1e-2
    phi_max: float = 2.5
    t_max: float = 10.0
    c_fingertip: float = -0.1
    c_env: float = -0.3
    c_ratio: float = 0.05
    c_eig: float = 1e-6
    w_translation: float = 40.5
    w_rotation: float = 0.405
    eps_fd: float = 1e-4
    rcond: float = 1e-8
    feasibility_tol: float = 1e-2
    # PD setpoint inset used while settling the held fingertip, so the
    # linearization sees a loaded (smooth) contact
    grasp_press: float = 1.5e-6
    # step of that held settle
    dt_hold: float = 1e-2
    # gap below which an environment pair counts as an active contact
    env_contact_gap: float = 1e-4
    use_filter: bool = True
    use_kmeans: bool = True
    random_dirs: bool = False
    workers: int = 1

    @property
    def W(self) -> np.ndarray:
        return np.diag([self.w_translation, self.w_translation, self.w_rotation])

    @property
    def w_diag(self) -> np.ndarray:
        return np.array([self.w_translation, self.w_translation, self.w_rotation])


@dataclass(frozen=True)
class Grasp:
    contact_point_body: np.ndarray
    outward_normal_body: np.ndarray
    finger_config: np.ndarray

    def normal_world(self, q_o: Pose2) -> np.ndarray:
        return rotate(q_o.theta, self.outward_normal_body)


@dataclass(frozen=True)
class MotionProposal:
    grasp: Grasp
    object_velocity: np.ndarray
    finger_velocity: np.ndarray
    sigma: float
    index: int = 0


@dataclass(frozen=True)
class TrajectorySegment:
    """One PD rollout (states at dt_action) plus its finger-free settle tail.

    State rows are [q (5), qdot (5)]. ``setpoints`` rows are
    [step_index, x, y], the PD target switched in before that step.
    """

    states: np.ndarray
    settle_tail: np.ndarray
    proposal: MotionProposal | None
    termination: Termination
    setpoints: np.ndarray
    dt_action: float
    dt_settle: float
    settle_timed_out: bool = False
    # largest unconverged Newton residual over the rollout [N]
    solver_residual: float = 0.0

    def __len__(self):
        return len(self.states)

    @property
    def start(self) -> Configuration:
        return Configuration.from_row(self.states[0])

    @property
    def final(self) -> Configuration:
        rows = self.settle_tail if len(self.settle_tail) else self.states
        return Configuration.from_row(rows[-1])

    @property
    def final_pose(self) -> Pose2:
        return self.final.q_o

    def all_states(self) -> np.ndarray:
        return np.vstack([self.states, self.settle_tail]) if len(self.settle_tail) else self.states

    def com_path(self) -> np.ndarray:
        return self.all_states()[:, 2:4]

    def path_length(self) -> float:
        p = self.com_path()
        return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))

    def truncated(self, scene: SceneModel, index: int, params: "ReachParams") -> "TrajectorySegment":
        """Rollout prefix up to state ``index`` followed by a fresh settle tail."""
        if index >= len(self.states) - 1:
            return self
        states = self.states[: index + 1]
        tail, timed_out = settle_tail(scene, states[-1], params)
        sp = self.setpoints[self.setpoints[:, 0] < index]
        return replace(self, states=states, settle_tail=tail, setpoints=sp, settle_timed_out=timed_out)


def settle_tail(scene: SceneModel, row, params: ReachParams):
    row = np.asarray(row, dtype=float)
    out = np.empty((int(round(T_SETTLE_MAX / params.dt_settle)) + 1, 10))
    n, timed_out, _ = _sim.settle_kernel(scene.packed, row[:5].copy(), row[5:].copy(), params.dt_settle, False,
                                         params.kp, params.kd, V_REST, T_REST, T_SETTLE_MAX, out)
    return out[:n].copy(), bool(timed_out)


def _finger_clearance(scene: SceneModel, p) -> float:
    """Minimum signed distance from a fingertip at ``p`` to the environment."""
    S = scene.packed
    q = np.array([p[0], p[1], 1e9, 1e9, 0.0])
    nv = max(S[1].shape[0], 1)
    cp = np.empty((_sim.MAXC, 2))
    cn = np.empty((_sim.MAXC, 2))
    cd = np.empty(_sim.MAXC)
    ct = np.empty(_sim.MAXC, dtype=np.int64)
    ce = np.empty(_sim.MAXC, dtype=np.int64)
    n = _sim.detect(S, q, True, np.empty((nv, 2)), cp, cn, cd, ct, ce, 1.0)
    depths = [cd[i] for i in range(n) if ct[i] == _sim.CT_FINGER_ENV]
    return -max(depths) if depths else math.inf


def sample_grasps(scene: SceneModel, q_o: Pose2, n: int, rng: np.random.Generator, gap: float = 0.0) -> list[Grasp]:
    """Up to ``n`` fingertip placements touching the object, clear of the environment."""
    if n < 1:
        raise ValueError("n must be >= 1")
    r = scene.fingertip_radius
    out = []
    attempts = 0
    while len(out) < n and attempts < 10 * n:
        attempts += 1
        p, nrm = sample_surface_point(scene.object_shape, float(rng.random()))
        pw = transform_point(q_o, p)
        nw = rotate(q_o.theta, nrm)
        finger = pw + (r + gap) * nw
        if _finger_clearance(scene, finger) < 0.0:
            continue
        out.append(Grasp(p, nrm, finger))
    if not out:
        raise NoValidGrasp("no valid grasp")
    return out


def grasp_configuration(grasp: Grasp, q_o: Pose2, press: float = 0.0) -> Configuration:
    nw = rotate(q_o.theta, grasp.outward_normal_body)
    return Configuration(grasp.finger_config - press * nw, q_o)


def linearized_map(scene: SceneModel, grasp: Grasp, q_o: Pose2, params: ReachParams):
    """Settle with the finger held against the object and return A, or None."""
    c = grasp_configuration(grasp, q_o, params.grasp_press)
    states, _ = settle_trace(scene, c, True, dt=params.dt_hold, kp=params.kp, kd=params.kd)
    if len(states):
        c = Configuration.from_row(states[-1])
    try:
        jac = linearize(scene, c, params.dt, params.eps_fd, params.feasibility_tol)
    except InfeasibleLinearization:
        return None
    return a_matrix(jac, params.rcond)


def propose(scene: SceneModel, grasp: Grasp, q_o: Pose2, params: ReachParams = ReachParams(),
            rng: np.random.Generator | None = None) -> list[MotionProposal]:
    """Spectral (or, for the random-direction ablation, random) proposals at one grasp.

    Every singular pair is emitted with both signs.
    """
    A = linearized_map(scene, grasp, q_o, params)
    if A is None or not np.any(A):
        return []
    out = []
    if params.random_dirs:
        if rng is None:
            raise ValueError("random directions need an rng")
        for _ in range(retained_rank(A, params.c_eig)):
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            fv = v[:2] / max(np.linalg.norm(v[:2]), 1e-12)
            for sgn in (1.0, -1.0):
                out.append(MotionProposal(grasp, sgn * v, sgn * fv, 0.0))
        return out
    for el in spectrum(A, params.c_eig):
        for sgn in (1.0, -1.0):
            out.append(MotionProposal(grasp, sgn * el.object_dir, sgn * el.finger_dir, el.sigma))
    return out


def active_environment_normals(scene: SceneModel, q_o: Pose2, gap: float = 1e-4) -> np.ndarray:
    """Environment-into-object normals of touching or penetrating pairs."""
    cfs = contact_forces(scene, Configuration(np.zeros(2), q_o), with_finger=False, include_separated=gap)
    normals = [c.normal for c in cfs.contacts if c.pair[0] == "object"]
    return np.array(normals).reshape(-1, 2)


def motion_ratio(v: np.ndarray, char_length: float) -> float:
    rot = abs(v[2])
    trans = float(np.linalg.norm(v[:2])) * char_length
    if rot == 0.0:
        return math.inf if trans > 0 else 0.0
    return trans / rot


def filter_proposals(scene: SceneModel, proposals: list[MotionProposal], q_o: Pose2,
                     params: ReachParams = ReachParams()) -> list[MotionProposal]:
    """Drop fingertip pulls and translation-dominant pushes into the environment."""
    normals = active_environment_normals(scene, q_o, params.env_contact_gap)
    L = scene.bounding_radius
    kept = []
    for p in proposals:
        fv = np.asarray(p.finger_velocity, dtype=float)
        fn = np.linalg.norm(fv)
        if fn == 0.0:
            continue
        inward = -p.grasp.normal_world(q_o)
        if fv @ inward / fn < params.c_fingertip:
            continue
        v = np.asarray(p.object_velocity, dtype=float)
        vt = np.linalg.norm(v[:2])
        if len(normals) and vt > 0.0 and motion_ratio(v, L) > params.c_ratio:
            if np.any(normals @ (v[:2] / vt) < params.c_env):
                continue
        kept.append(p)
    return kept


def kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100):
    """k-means++ seeding followed by Lloyd iterations; returns (centers, labels)."""
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = X[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers, labels


def cluster(proposals: list[MotionProposal], k: int, rng: np.random.Generator, W=None) -> list[MotionProposal]:
    """Reduce to at most ``k`` medoid proposals, clustering in the W-weighted metric."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(proposals) <= k:
        return list(proposals)
    w = np.ones(3) if W is None else np.sqrt(np.diag(np.asarray(W, dtype=float)))
    X = np.array([p.object_velocity for p in proposals]) * w
    centers, labels = kmeans_pp(X, k, rng)
    picks = []
    for j in range(k):
        members = np.flatnonzero(labels == j)
        if len(members) == 0:
            continue
        d = np.sum((X[members] - centers[j]) ** 2, axis=1)
        picks.append(int(members[np.argmin(d)]))
    return [proposals[i] for i in sorted(picks)]


def normalize(proposals: list[MotionProposal], W) -> list[MotionProposal]:
    """Scale each object velocity to unit W-norm; zero velocities are dropped."""
    W = np.asarray(W, dtype=float)
    out = []
    for p in proposals:
        v = np.asarray(p.object_velocity, dtype=float)
        nrm2 = float(v @ W @ v)
        if not nrm2 > 0.0:
            continue
        out.append(replace(p, object_velocity=v / math.sqrt(nrm2)))
    return out


def pd_rollout(scene: SceneModel, proposal: MotionProposal, q_o: Pose2, params: ReachParams = ReachParams()) -> TrajectorySegment:
    """Track the proposal with the fingertip PD loop, then settle without the finger."""
    q0 = np.concatenate([proposal.grasp.finger_config, q_o.as_array()])
    n_max = int(round(params.t_max / params.dt_action))
    n_track = max(1, int(round(params.t_track / params.dt_action)))
    states = np.empty((n_max + 1, 10))
    setpoints = np.empty((n_max // n_track + 2, 3))
    n, nsp, reason, rmax = _sim.rollout_kernel(
        scene.packed, q0, np.asarray(proposal.object_velocity, dtype=float), params.w_diag, params.dt_action,
        n_track, params.t_proj, n_max, params.d_contact, params.v_stopped, params.phi_max, params.kp, params.kd,
        states, setpoints)
    states = states[:n].copy()
    tail, timed_out = settle_tail(scene, states[-1], params)
    return TrajectorySegment(states, tail, proposal, _TERM[reason], setpoints[:nsp].copy(),
                             params.dt_action, params.dt_settle, timed_out, float(rmax))


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def reachable_set(scene: SceneModel, q_o: Pose2, params: ReachParams, rng: np.random.Generator) -> list[TrajectorySegment]:
    """Rollout segments approximating the set of object motions from ``q_o``.

    All random draws happen on the calling thread in a fixed order, so the
    result does not depend on ``params.workers``.
    """
    grasps = sample_grasps(scene, q_o, params.n_grasps, rng)
    rngs = rng.spawn(len(grasps)) if params.random_dirs else [None] * len(grasps)
    per_grasp = _map(lambda gr: propose(scene, gr[0], q_o, params, gr[1]), list(zip(grasps, rngs)), params.workers)
    pooled = [replace(p, index=i) for i, p in enumerate(p for ps in per_grasp for p in ps)]
    if params.use_filter:
        pooled = filter_proposals(scene, pooled, q_o, params)
    if params.use_kmeans:
        pooled = cluster(pooled, params.n_clusters, rng, params.W)
    pooled = normalize(pooled, params.W)
    if not pooled:
        raise EmptyReachableSet("empty reachable set")
    return _map(lambda p: pd_rollout(scene, p, q_o, params), pooled, params.workers)
