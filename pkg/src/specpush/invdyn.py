"""Inverse-dynamics residual, its velocity linearization and spectrum.

The residual h is the generalized force the object would need from an
external agent to follow (q, qdot, qddot). Around a resting point the
map from fingertip velocity to feasible object velocity is

    A = -pinv(dh/dqdot_o) @ dh/dqdot_a

and its singular vectors give orthogonal, actuatable object motions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _sim
from .dynamics import N_A, N_O, Configuration, SceneModel, mass_matrix

OBJECT_ROWS = slice(N_A, N_A + N_O)


class InfeasibleLinearization(ValueError):
    pass


@dataclass(frozen=True)
class ResidualJacobians:
    D_a: np.ndarray
    D_o: np.ndarray
    base_residual: np.ndarray
    dt_lin: float


@dataclass(frozen=True)
class BasisElement:
    sigma: float
    object_dir: np.ndarray
    finger_dir: np.ndarray


@dataclass(frozen=True)
class SpectralBasis:
    elements: tuple

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([e.sigma for e in self.elements])


class _Workspace:
    def __init__(self, scene):
        nv = max(scene.packed[1].shape[0], 1)
        self.S = scene.packed
        self.M = np.diag(mass_matrix(scene)).copy()
        self.F = np.empty(5)
        self.K = np.empty((5, 5))
        self.bufs = (
            np.empty((nv, 2)),
            np.empty((_sim.MAXC, 2)),
            np.empty((_sim.MAXC, 2)),
            np.empty(_sim.MAXC),
            np.empty(_sim.MAXC, dtype=np.int64),
            np.empty(_sim.MAXC, dtype=np.int64),
        )

    def tau(self, q, qdot, qddot, with_finger):
        _sim.generalized_forces(self.S, q, qdot, with_finger, False, self.F, self.K, self.K, *self.bufs)
        return self.M * qddot - self.F


def tau_ext(scene: SceneModel, q, qdot, qddot, with_finger: bool = True) -> np.ndarray:
    """External generalized force M qddot + k(q, qdot) - sum J^T lambda."""
    q = np.asarray(q, dtype=float)
    return _Workspace(scene).tau(q, np.asarray(qdot, dtype=float), np.asarray(qddot, dtype=float), with_finger)


def residual_h(scene: SceneModel, q, qdot, qddot, with_finger: bool = True) -> np.ndarray:
    """Object rows of tau_ext; zero for dynamically feasible motion."""
    return tau_ext(scene, q, qdot, qddot, with_finger)[OBJECT_ROWS]


def replay_residuals(scene: SceneModel, states: np.ndarray, dt: float, with_finger: bool = True, prev=None) -> np.ndarray:
    """Object-row residuals along a logged trajectory.

    Row k pairs states k and k+1 (or ``prev`` and state 0): the residual is
    evaluated at the later state with the backward difference acceleration,
    the discretization the simulator integrates. Returns an (m, 3) array.
    """
    states = np.asarray(states, dtype=float)
    if prev is not None:
        states = np.vstack([np.asarray(prev, dtype=float)[None], states])
    ws = _Workspace(scene)
    out = np.empty((max(len(states) - 1, 0), N_O))
    for k in range(len(states) - 1):
        q1, v1 = states[k + 1, :5], states[k + 1, 5:]
        v0 = states[k, 5:]
        out[k] = ws.tau(q1, v1, (v1 - v0) / dt, with_finger)[OBJECT_ROWS]
    return out


def linearize(scene: SceneModel, c0: Configuration, dt_lin: float = 1e-3, eps_fd: float = 1e-4,
              feasibility_tol: float = 1e-2, with_finger: bool = True) -> ResidualJacobians:
    """Central-difference Jacobians of the one-step residual around a rest point.

    The probed map is g(qdot) = h(q0 + dt_lin*qdot, qdot, qdot/dt_lin): a
    velocity qdot reached by constant acceleration over dt_lin, with the
    configuration advanced consistently with the integrator.
    """
    if eps_fd <= 0:
        raise ValueError("eps_fd must be positive")
    ws = _Workspace(scene)
    q0 = c0.q
    zero = np.zeros(5)
    base = ws.tau(q0, zero, zero, with_finger)[OBJECT_ROWS].copy()
    if np.linalg.norm(base) > feasibility_tol:
        raise InfeasibleLinearization(f"infeasible linearization point: |h| = {np.linalg.norm(base):.3e} N")
    cols = np.empty((N_O, 5))
    for j in range(5):
        if not with_finger and j < N_A:
            cols[:, j] = 0.0
            continue
        e = np.zeros(5)
        e[j] = eps_fd
        gp = ws.tau(q0 + dt_lin * e, e, e / dt_lin, with_finger)[OBJECT_ROWS]
        gm = ws.tau(q0 - dt_lin * e, -e, -e / dt_lin, with_finger)[OBJECT_ROWS]
        cols[:, j] = (gp - gm) / (2.0 * eps_fd)
    return ResidualJacobians(cols[:, :N_A].copy(), cols[:, N_A:].copy(), base, dt_lin)


def a_matrix(jac: ResidualJacobians, rcond: float = 1e-8) -> np.ndarray:
    """Object-velocity response to fingertip velocity, A = -pinv(D_o) D_a."""
    if not np.any(jac.D_a):
        return np.zeros_like(jac.D_a)
    return -np.linalg.pinv(jac.D_o, rcond=rcond) @ jac.D_a


def retained_rank(A: np.ndarray, c_eig: float = 1e-6) -> int:
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.sum(s ** 2 >= c_eig * s[0] ** 2))


def spectrum(A: np.ndarray, c_eig: float = 1e-6) -> SpectralBasis:
    """Singular triplets of A with sigma^2 / sigma_max^2 >= c_eig, descending."""
    A = np.asarray(A, dtype=float)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return SpectralBasis(())
    keep = s ** 2 >= c_eig * s[0] ** 2
    return SpectralBasis(tuple(BasisElement(float(s[i]), U[:, i].copy(), Vt[i].copy()) for i in range(len(s)) if keep[i]))
