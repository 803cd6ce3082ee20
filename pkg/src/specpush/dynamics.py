"""Planar rigid-body simulation: one free object, one force-driven fingertip.

Contact is compliant: f_n = k_c * depth * max(0, 1 + d_c * penetration_rate)
with tanh-regularized Coulomb friction. The fingertip is a point mass whose
weight is carried by its actuator, so gravity acts on the object only; it
collides with the environment without friction.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _sim
from .geometry import Circle, ConvexPolygon, GeometryError, Pose2, Shape

N_A = 2
N_O = 3
N_Q = N_A + N_O

# settle termination
V_REST = 1e-3
T_REST = 0.1
T_SETTLE_MAX = 2.0


class SettleTimeout(UserWarning):
    pass


class ActuationOverflow(FloatingPointError):
    pass


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 1e4
    dissipation: float = 100.0
    slip_velocity: float = 1e-3

    def __post_init__(self):
        for name in ("stiffness", "dissipation", "slip_velocity"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive")


@dataclass(frozen=True)
class SceneModel:
    object_shape: Shape
    object_mass: float
    object_inertia: float
    fingertip_radius: float = 0.01
    environment: tuple = ()
    gravity: float = 9.81
    contact: ContactParams = field(default_factory=ContactParams)
    friction_object_env: float = 0.5
    friction_object_finger: float = 0.5
    finger_mass: float = 0.01
    # actuator force limit [N]; 0 disables saturation
    finger_force_limit: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "environment", tuple((s, p) for s, p in self.environment))
        for name in ("object_mass", "object_inertia", "fingertip_radius", "finger_mass"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive")
        for name in ("friction_object_env", "friction_object_finger", "finger_force_limit"):
            if getattr(self, name) < 0:
                raise GeometryError(f"{name} must be non-negative")
        if not math.isfinite(self.gravity):
            raise GeometryError("gravity must be finite")

    @property
    def bounding_radius(self) -> float:
        return self.object_shape.bounding_radius

    @property
    def equilibrium_penetration(self) -> float:
        """Single-contact rest penetration m*g/k_c."""
        return self.object_mass * self.gravity / self.contact.stiffness

    def finger_shape(self) -> Circle:
        return Circle(self.fingertip_radius)

    @cached_property
    def packed(self):
        obj = self.object_shape
        P = np.zeros(_sim.NP)
        P[_sim.P_MASS] = self.object_mass
        P[_sim.P_INERTIA] = self.object_inertia
        P[_sim.P_FMASS] = self.finger_mass
        P[_sim.P_K] = self.contact.stiffness
        P[_sim.P_D] = self.contact.dissipation
        P[_sim.P_VSLIP] = self.contact.slip_velocity
        P[_sim.P_MU_ENV] = self.friction_object_env
        P[_sim.P_MU_FINGER] = self.friction_object_finger
        P[_sim.P_G] = self.gravity
        P[_sim.P_RF] = self.fingertip_radius
        P[_sim.P_UMAX] = self.finger_force_limit
        if isinstance(obj, Circle):
            P[_sim.P_OBJKIND] = 0.0
            P[_sim.P_OBJR] = obj.radius
            obj_verts = np.zeros((1, 2))
        else:
            P[_sim.P_OBJKIND] = 1.0
            obj_verts = obj.array()
        P[_sim.P_OBJBOUND] = obj.bounding_radius
        n_env = len(self.environment)
        vmax = max([len(s.vertices) for s, _ in self.environment if isinstance(s, ConvexPolygon)] + [1])
        env_kind = np.zeros(n_env, dtype=np.int64)
        env_verts = np.zeros((n_env, vmax, 2))
        env_nv = np.zeros(n_env, dtype=np.int64)
        env_circ = np.zeros((n_env, 4))
        from .geometry import polygon_world

        for e, (shape, pose) in enumerate(self.environment):
            if isinstance(shape, Circle):
                env_kind[e] = 0
                env_circ[e] = (pose.x, pose.y, shape.radius, shape.radius)
            else:
                w = polygon_world(shape, pose)
                env_kind[e] = 1
                env_nv[e] = len(w)
                env_verts[e, : len(w)] = w
                center = w.mean(axis=0)
                env_circ[e] = (center[0], center[1], 0.0, float(np.max(np.linalg.norm(w - center, axis=1))))
        return (P, obj_verts, env_kind, env_verts, env_nv, env_circ)


@dataclass(frozen=True)
class Configuration:
    q_a: np.ndarray
    q_o: Pose2
    qdot_a: np.ndarray = field(default_factory=lambda: np.zeros(2))
    qdot_o: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "q_a", np.asarray(self.q_a, dtype=float).reshape(2))
        object.__setattr__(self, "qdot_a", np.asarray(self.qdot_a, dtype=float).reshape(2))
        object.__setattr__(self, "qdot_o", np.asarray(self.qdot_o, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.q_a)) and np.all(np.isfinite(self.qdot_a)) and np.all(np.isfinite(self.qdot_o))):
            raise ValueError("configuration must be finite")

    @property
    def q(self) -> np.ndarray:
        return np.concatenate([self.q_a, self.q_o.as_array()])

    @property
    def qdot(self) -> np.ndarray:
        return np.concatenate([self.qdot_a, self.qdot_o])

    def as_row(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    @classmethod
    def from_arrays(cls, q, qdot=None) -> "Configuration":
        q = np.asarray(q, dtype=float)
        qdot = np.zeros(5) if qdot is None else np.asarray(qdot, dtype=float)
        return cls(q[:2].copy(), Pose2.from_array(q[2:5]), qdot[:2].copy(), qdot[2:5].copy())

    @classmethod
    def from_row(cls, row) -> "Configuration":
        row = np.asarray(row, dtype=float)
        return cls.from_arrays(row[:5], row[5:10])

    def with_velocity_zeroed(self) -> "Configuration":
        return Configuration(self.q_a, self.q_o)


@dataclass(frozen=True)
class Contact:
    pair: tuple  # ("object", "env", i) | ("object", "finger") | ("finger", "env", i)
    force: np.ndarray  # on body A, world frame [N]
    point: np.ndarray
    normal: np.ndarray
    depth: float
    jacobian: np.ndarray  # 2 x 5


@dataclass(frozen=True)
class ContactForceSet:
    contacts: tuple

    def generalized(self) -> np.ndarray:
        out = np.zeros(N_Q)
        for c in self.contacts:
            out += c.jacobian.T @ c.force
        return out

    def __len__(self):
        return len(self.contacts)


_PAIR_NAMES = {_sim.CT_OBJ_ENV: "object/env", _sim.CT_OBJ_FINGER: "object/finger", _sim.CT_FINGER_ENV: "finger/env"}


def _buffers(scene):
    nv = max(scene.packed[1].shape[0], 1)
    return (
        np.empty((nv, 2)),
        np.empty((_sim.MAXC, 2)),
        np.empty((_sim.MAXC, 2)),
        np.empty(_sim.MAXC),
        np.empty(_sim.MAXC, dtype=np.int64),
        np.empty(_sim.MAXC, dtype=np.int64),
    )


def contact_forces(scene: SceneModel, c: Configuration, with_finger: bool = True, include_separated: float = 0.0) -> ContactForceSet:
    """Contact forces at configuration ``c``.

    Pairs closer than ``include_separated`` are listed with zero force,
    which is how callers discover touching-but-unloaded contacts.
    """
    S = scene.packed
    q, v = c.q, c.qdot
    objw, cp, cn, cd, ct, ce = _buffers(scene)
    n = _sim.detect(S, q, with_finger, objw, cp, cn, cd, ct, ce, include_separated)
    J = np.empty((2, 5))
    f = np.empty(2)
    out = []
    for i in range(n):
        _sim.contact_jacobian(ct[i], cp[i, 0], cp[i, 1], q, J)
        _sim.contact_force(S[0], ct[i], cd[i], cn[i, 0], cn[i, 1], J, v, f)
        name = _PAIR_NAMES[int(ct[i])]
        pair = tuple(name.split("/")) + ((int(ce[i]),) if ce[i] >= 0 else ())
        out.append(Contact(pair, f.copy(), cp[i].copy(), cn[i].copy(), float(cd[i]), J.copy()))
    return ContactForceSet(tuple(out))


def mass_matrix(scene: SceneModel) -> np.ndarray:
    m, mf = scene.object_mass, scene.finger_mass
    return np.diag([mf, mf, m, m, scene.object_inertia])


def bias(scene: SceneModel, c: Configuration | None = None) -> np.ndarray:
    """Gravity/Coriolis vector k(q, qdot) on the left-hand side of the dynamics.

    Planar pose coordinates carry no Coriolis terms; the fingertip is
    gravity-compensated.
    """
    return np.array([0.0, 0.0, 0.0, scene.object_mass * scene.gravity, 0.0])


def pd_fingertip_force(c: Configuration, setpoint, kp: float, kd: float) -> np.ndarray:
    """Stabilizing PD law u = -kp (q_a - p_w) - kd qdot_a."""
    if kp <= 0 or kd <= 0:
        raise ValueError("gains must be positive")
    return -kp * (c.q_a - np.asarray(setpoint, dtype=float)) - kd * c.qdot_a


def _advance(scene, c, dt, mode, aux, kp=0.0, kd=0.0, with_finger=True):
    q, v = c.q, c.qdot
    qn = np.empty(5)
    vn = np.empty(5)
    aux = np.asarray(aux, dtype=float)
    resid, _ = _sim.be_step(scene.packed, q, v, float(dt), mode, aux, float(kp), float(kd), with_finger, qn, vn)
    if not (np.all(np.isfinite(qn)) and np.all(np.isfinite(vn))):
        raise ActuationOverflow("actuation overflow")
    return Configuration.from_arrays(qn, vn), resid


def step(scene: SceneModel, c: Configuration, u, dt: float, with_finger: bool = True) -> Configuration:
    """Advance one step under fingertip force ``u`` (backward Euler)."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ActuationOverflow("actuation overflow")
    return _advance(scene, c, dt, _sim.MODE_FORCE, u, with_finger=with_finger)[0]


def step_pd(scene: SceneModel, c: Configuration, setpoint, kp: float, kd: float, dt: float) -> Configuration:
    """Advance one step with the PD law evaluated implicitly at the step end."""
    return _advance(scene, c, dt, _sim.MODE_PD, setpoint, kp, kd)[0]


def step_kinematic(scene: SceneModel, c: Configuration, finger_velocity, dt: float) -> Configuration:
    """Advance one step with the fingertip velocity prescribed."""
    return _advance(scene, c, dt, _sim.MODE_KINEMATIC, finger_velocity)[0]


def settle_trace(scene: SceneModel, c: Configuration, with_finger: bool, dt: float = 1e-3, kp: float = 5000.0, kd: float = 500.0,
                 v_rest: float = V_REST, t_rest: float = T_REST, t_max: float = T_SETTLE_MAX):
    """Run the settle loop and return (states array (n, 10), timed_out)."""
    out = np.empty((int(round(t_max / dt)) + 1, 10))
    n, timed_out, _ = _sim.settle_kernel(scene.packed, c.q, c.qdot, dt, with_finger, kp, kd, v_rest, t_rest, t_max, out)
    return out[:n].copy(), bool(timed_out)


def settle(scene: SceneModel, c: Configuration, with_finger: bool = False, **kw) -> Configuration:
    """Bring the object to rest.

    With the finger removed the integration step is the settle step; with
    the finger held, a PD loop keeps it at its current position. Emits
    ``SettleTimeout`` if the object is still moving at the time limit.
    """
    states, timed_out = settle_trace(scene, c, with_finger, **kw)
    if timed_out:
        warnings.warn("settle timeout", SettleTimeout, stacklevel=2)
    if len(states) == 0:
        return c.with_velocity_zeroed()
    return Configuration.from_row(states[-1])


def mechanical_energy(scene: SceneModel, c: Configuration, with_finger: bool = True) -> float:
    """Kinetic + gravitational + elastic contact energy."""
    M = mass_matrix(scene)
    v = c.qdot.copy()
    if not with_finger:
        v[:2] = 0.0
    ke = 0.5 * v @ M @ v
    pe = scene.object_mass * scene.gravity * c.q_o.y
    elastic = sum(0.5 * scene.contact.stiffness * ct.depth ** 2 for ct in contact_forces(scene, c, with_finger).contacts)
    return float(ke + pe + elastic)
