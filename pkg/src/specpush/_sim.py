"""Compiled simulation kernels.

State layout: q = [finger_x, finger_y, obj_x, obj_y, obj_theta] and v the
matching velocities. A packed scene is a tuple
``(P, obj_verts, env_kind, env_verts, env_nv, env_circ)`` built by
``dynamics.SceneModel.packed``.

Integration is backward Euler solved by damped Newton iterations, so a
logged pair (x_k, x_{k+1}) satisfies the equations of motion evaluated at
x_{k+1} up to the Newton tolerance.
"""
import math

import numpy as np
from numba import njit

from .geometry import circle_circle, circle_polygon, point_polygon, world_vertices

# P indices
P_MASS, P_INERTIA, P_FMASS, P_K, P_D, P_VSLIP, P_MU_ENV, P_MU_FINGER, P_G, P_RF, P_UMAX, P_OBJKIND, P_OBJR, P_OBJBOUND = range(14)
NP = 14

MAXC = 64

CT_OBJ_ENV = 0
CT_OBJ_FINGER = 1
CT_FINGER_ENV = 2

MODE_FORCE = 0
MODE_PD = 1
MODE_KINEMATIC = 2

NEWTON_TOL = 1e-9
NEWTON_MAXIT = 150
NEWTON_FIRST_MAXIT = 40
NEWTON_SUBSTEPS = 8
NEWTON_FD_AFTER = 6

TERM_NONE = -1
TERM_CONTACT_LOST = 0
TERM_STOPPED = 1
TERM_ROTATION = 2
TERM_TIMEOUT = 3


@njit(cache=True, nogil=True)
def _add(cp, cn, cd, ct, ce, c, px, py, nx, ny, depth, typ, env):
    if c >= MAXC:
        return c
    cp[c, 0] = px
    cp[c, 1] = py
    cn[c, 0] = nx
    cn[c, 1] = ny
    cd[c] = depth
    ct[c] = typ
    ce[c] = env
    return c + 1


@njit(cache=True, nogil=True)
def detect(S, q, finger_on, objw, cp, cn, cd, ct, ce, include_touching):
    """Fill contact buffers; returns the number of contacts.

    Normals point from body B (environment or finger) into body A (object
    or, for finger/environment pairs, the finger). With include_touching,
    pairs with small positive gap (< include_touching) are also reported
    with negative depth; the force law ignores them.
    """
    P, obj_verts, env_kind, env_verts, env_nv, env_circ = S
    thr = include_touching
    ox = q[2]
    oy = q[3]
    th = q[4]
    poly_obj = P[P_OBJKIND] > 0.5
    nv = obj_verts.shape[0]
    if poly_obj:
        world_vertices(obj_verts, ox, oy, th, objw)
    rf = P[P_RF]
    robj = P[P_OBJR]
    bound = P[P_OBJBOUND]
    c = 0
    for e in range(env_kind.shape[0]):
        dx = env_circ[e, 0] - ox
        dy = env_circ[e, 1] - oy
        reach = bound + env_circ[e, 3] + 0.05
        if dx * dx + dy * dy > reach * reach:
            continue
        if env_kind[e] == 0:
            er = env_circ[e, 2]
            if poly_obj:
                sd, wex, wey, wox, woy, nx, ny = circle_polygon(env_circ[e, 0], env_circ[e, 1], er, objw, nv)
                if sd < thr:
                    c = _add(cp, cn, cd, ct, ce, c, 0.5 * (wex + wox), 0.5 * (wey + woy), -nx, -ny, -sd, CT_OBJ_ENV, e)
            else:
                sd, wax, way, wbx, wby, nx, ny = circle_circle(ox, oy, robj, env_circ[e, 0], env_circ[e, 1], er)
                if sd < thr:
                    c = _add(cp, cn, cd, ct, ce, c, 0.5 * (wax + wbx), 0.5 * (way + wby), nx, ny, -sd, CT_OBJ_ENV, e)
        else:
            ne = env_nv[e]
            ev = env_verts[e]
            if poly_obj:
                for k in range(nv):
                    sd, qx, qy, nx, ny = point_polygon(objw[k, 0], objw[k, 1], ev, ne)
                    if sd < thr:
                        c = _add(cp, cn, cd, ct, ce, c, objw[k, 0], objw[k, 1], nx, ny, -sd, CT_OBJ_ENV, e)
                for k in range(ne):
                    sd, qx, qy, nx, ny = point_polygon(ev[k, 0], ev[k, 1], objw, nv)
                    if sd < thr:
                        c = _add(cp, cn, cd, ct, ce, c, ev[k, 0], ev[k, 1], -nx, -ny, -sd, CT_OBJ_ENV, e)
            else:
                sd, wax, way, wbx, wby, nx, ny = circle_polygon(ox, oy, robj, ev, ne)
                if sd < thr:
                    c = _add(cp, cn, cd, ct, ce, c, 0.5 * (wax + wbx), 0.5 * (way + wby), nx, ny, -sd, CT_OBJ_ENV, e)
    if finger_on:
        fx = q[0]
        fy = q[1]
        if poly_obj:
            sd, wfx, wfy, wox, woy, nx, ny = circle_polygon(fx, fy, rf, objw, nv)
            if sd < thr:
                c = _add(cp, cn, cd, ct, ce, c, 0.5 * (wfx + wox), 0.5 * (wfy + woy), -nx, -ny, -sd, CT_OBJ_FINGER, -1)
        else:
            sd, wax, way, wbx, wby, nx, ny = circle_circle(ox, oy, robj, fx, fy, rf)
            if sd < thr:
                c = _add(cp, cn, cd, ct, ce, c, 0.5 * (wax + wbx), 0.5 * (way + wby), nx, ny, -sd, CT_OBJ_FINGER, -1)
        for e in range(env_kind.shape[0]):
            dx = env_circ[e, 0] - fx
            dy = env_circ[e, 1] - fy
            reach = rf + env_circ[e, 3] + 0.05
            if dx * dx + dy * dy > reach * reach:
                continue
            if env_kind[e] == 0:
                sd, wax, way, wbx, wby, nx, ny = circle_circle(fx, fy, rf, env_circ[e, 0], env_circ[e, 1], env_circ[e, 2])
            else:
                sd, wax, way, wbx, wby, nx, ny = circle_polygon(fx, fy, rf, env_verts[e], env_nv[e])
            if sd < thr:
                c = _add(cp, cn, cd, ct, ce, c, 0.5 * (wax + wbx), 0.5 * (way + wby), nx, ny, -sd, CT_FINGER_ENV, e)
    return c


@njit(cache=True, nogil=True)
def contact_jacobian(typ, px, py, q, J):
    """2x5 map from generalized velocity to A-minus-B point velocity."""
    for i in range(2):
        for j in range(5):
            J[i, j] = 0.0
    if typ == CT_FINGER_ENV:
        J[0, 0] = 1.0
        J[1, 1] = 1.0
        return
    J[0, 2] = 1.0
    J[1, 3] = 1.0
    J[0, 4] = -(py - q[3])
    J[1, 4] = px - q[2]
    if typ == CT_OBJ_FINGER:
        J[0, 0] = -1.0
        J[1, 1] = -1.0


@njit(cache=True, nogil=True)
def pair_friction(P, typ):
    """Friction coefficient of a contact type; finger/environment pairs slide freely."""
    if typ == CT_OBJ_FINGER:
        return P[P_MU_FINGER]
    if typ == CT_OBJ_ENV:
        return P[P_MU_ENV]
    return 0.0


@njit(cache=True, nogil=True)
def contact_force(P, typ, depth, nx, ny, J, v, out):
    """Normal/tangential contact force on body A; returns (fn, ft, vt, xdot_pen)."""
    tx = -ny
    ty = nx
    vrx = 0.0
    vry = 0.0
    for j in range(5):
        vrx += J[0, j] * v[j]
        vry += J[1, j] * v[j]
    xdot = -(nx * vrx + ny * vry)
    vt = tx * vrx + ty * vry
    mu = pair_friction(P, typ)
    fn = 0.0
    ft = 0.0
    if depth > 0.0:
        damp = 1.0 + P[P_D] * xdot
        if damp > 0.0:
            fn = P[P_K] * depth * damp
        ft = -mu * fn * math.tanh(vt / P[P_VSLIP])
    out[0] = fn * nx + ft * tx
    out[1] = fn * ny + ft * ty
    return fn, ft, vt, xdot


@njit(cache=True, nogil=True)
def generalized_forces(S, q, v, finger_on, want_jac, F, Kv, Kq, objw, cp, cn, cd, ct, ce):
    """F = sum_i J_i^T lambda_i - bias, plus approximate d/dv and d/dq."""
    P = S[0]
    for i in range(5):
        F[i] = 0.0
        if want_jac:
            for j in range(5):
                Kv[i, j] = 0.0
                Kq[i, j] = 0.0
    F[3] -= P[P_MASS] * P[P_G]
    nc = detect(S, q, finger_on, objw, cp, cn, cd, ct, ce, 0.0)
    J = np.empty((2, 5))
    f = np.empty(2)
    gn = np.empty(5)
    gt = np.empty(5)
    for c in range(nc):
        typ = ct[c]
        nx = cn[c, 0]
        ny = cn[c, 1]
        tx = -ny
        ty = nx
        contact_jacobian(typ, cp[c, 0], cp[c, 1], q, J)
        fn, ft, vt, xdot = contact_force(P, typ, cd[c], nx, ny, J, v, f)
        for j in range(5):
            F[j] += J[0, j] * f[0] + J[1, j] * f[1]
        if not want_jac:
            continue
        mu = pair_friction(P, typ)
        damp = 1.0 + P[P_D] * xdot
        th = math.tanh(vt / P[P_VSLIP])
        sech2 = 1.0 - th * th
        active = damp > 0.0
        # velocity derivative: normal damping and regularized friction
        for j in range(5):
            nJ = nx * J[0, j] + ny * J[1, j]
            tJ = tx * J[0, j] + ty * J[1, j]
            dfn = -P[P_K] * cd[c] * P[P_D] * nJ if active else 0.0
            dft = -mu * (th * dfn + fn * sech2 / P[P_VSLIP] * tJ)
            gn[j] = dfn
            gt[j] = dft
        for i in range(5):
            wi_n = J[0, i] * nx + J[1, i] * ny
            wi_t = J[0, i] * tx + J[1, i] * ty
            for j in range(5):
                Kv[i, j] += wi_n * gn[j] + wi_t * gt[j]
        # position derivative with frozen normal and lever arm
        for j in range(5):
            nJ = nx * J[0, j] + ny * J[1, j]
            dfn = -P[P_K] * damp * nJ if active else 0.0
            gn[j] = dfn
            gt[j] = -mu * th * dfn
        for i in range(5):
            wi_n = J[0, i] * nx + J[1, i] * ny
            wi_t = J[0, i] * tx + J[1, i] * ty
            for j in range(5):
                Kq[i, j] += wi_n * gn[j] + wi_t * gt[j]
    return nc


@njit(cache=True, nogil=True)
def _pd_force(P, qa0, qa1, va0, va1, sp, kp, kd, dt, want_jac, out, dU):
    """Implicit PD force at the end-of-step finger state, with norm saturation."""
    r0 = -kp * (qa0 - sp[0]) - kd * va0
    r1 = -kp * (qa1 - sp[1]) - kd * va1
    g = kd + dt * kp
    nrm = math.sqrt(r0 * r0 + r1 * r1)
    umax = P[P_UMAX]
    if umax > 0.0 and nrm > umax:
        s = umax / nrm
        out[0] = r0 * s
        out[1] = r1 * s
        if want_jac:
            h0 = r0 / nrm
            h1 = r1 / nrm
            dU[0, 0] = -g * s * (1.0 - h0 * h0)
            dU[0, 1] = g * s * h0 * h1
            dU[1, 0] = g * s * h0 * h1
            dU[1, 1] = -g * s * (1.0 - h1 * h1)
    else:
        out[0] = r0
        out[1] = r1
        if want_jac:
            dU[0, 0] = -g
            dU[0, 1] = 0.0
            dU[1, 0] = 0.0
            dU[1, 1] = -g


@njit(cache=True, nogil=True)
def _residual(S, q, v, vn, qn, dt, mode, aux, kp, kd, finger_on, want_jac, R, Jac, F, Kv, Kq, objw, cp, cn, cd, ct, ce):
    P = S[0]
    for i in range(5):
        qn[i] = q[i] + dt * vn[i]
    generalized_forces(S, qn, vn, finger_on, want_jac, F, Kv, Kq, objw, cp, cn, cd, ct, ce)
    u = np.zeros(2)
    dU = np.zeros((2, 2))
    if finger_on and mode == MODE_FORCE:
        u[0] = aux[0]
        u[1] = aux[1]
    elif finger_on and mode == MODE_PD:
        _pd_force(P, qn[0], qn[1], vn[0], vn[1], aux, kp, kd, dt, want_jac, u, dU)
    m = np.empty(5)
    m[0] = P[P_FMASS]
    m[1] = P[P_FMASS]
    m[2] = P[P_MASS]
    m[3] = P[P_MASS]
    m[4] = P[P_INERTIA]
    rmax = 0.0
    for i in range(5):
        fi = F[i]
        if i < 2:
            fi += u[i]
        R[i] = m[i] * (vn[i] - v[i]) - dt * fi
    if want_jac:
        for i in range(5):
            for j in range(5):
                Jac[i, j] = -dt * (Kv[i, j] + dt * Kq[i, j])
            Jac[i, i] += m[i]
        for i in range(2):
            for j in range(2):
                Jac[i, j] -= dt * dU[i, j]
    return rmax


@njit(cache=True, nogil=True)
def _newton(S, q, v, dt, mode, aux, kp, kd, finger_on, lo, vn, qn, maxit, fd_after):
    """Damped Newton on the backward-Euler residual, starting from ``vn``.

    Rows below ``lo`` are held fixed. Returns (max residual force [N], iterations).
    """
    nv_obj = S[1].shape[0]
    objw = np.empty((max(nv_obj, 1), 2))
    cp = np.empty((MAXC, 2))
    cn = np.empty((MAXC, 2))
    cd = np.empty(MAXC)
    ct = np.empty(MAXC, dtype=np.int64)
    ce = np.empty(MAXC, dtype=np.int64)
    F = np.empty(5)
    Kv = np.empty((5, 5))
    Kq = np.empty((5, 5))
    R = np.empty(5)
    Jac = np.empty((5, 5))
    Rt = np.empty(5)
    vt = np.empty(5)
    qt = np.empty(5)
    nfree = 5 - lo
    A = np.empty((nfree, nfree))
    b = np.empty(nfree)
    _residual(S, q, v, vn, qn, dt, mode, aux, kp, kd, finger_on, True, R, Jac, F, Kv, Kq, objw, cp, cn, cd, ct, ce)
    norm = 0.0
    for i in range(lo, 5):
        norm = max(norm, abs(R[i]))
    it = 0
    while norm / dt > NEWTON_TOL and it < maxit:
        it += 1
        if it > fd_after:
            # the frozen-geometry Jacobian stalls near corners and impacts
            for j in range(lo, 5):
                for i in range(5):
                    vt[i] = vn[i]
                h = 1e-8 * max(1.0, abs(vn[j]))
                vt[j] += h
                _residual(S, q, v, vt, qt, dt, mode, aux, kp, kd, finger_on, False, Rt, Kv, F, Kv, Kq, objw, cp, cn, cd, ct, ce)
                for i in range(lo, 5):
                    Jac[i, j] = (Rt[i] - R[i]) / h
        for i in range(nfree):
            b[i] = -R[lo + i]
            for j in range(nfree):
                A[i, j] = Jac[lo + i, lo + j]
        dv = np.linalg.solve(A, b)
        alpha = 1.0
        for _ in range(30):
            for i in range(5):
                vt[i] = vn[i]
            for i in range(nfree):
                vt[lo + i] = vn[lo + i] + alpha * dv[i]
            _residual(S, q, v, vt, qt, dt, mode, aux, kp, kd, finger_on, False, Rt, Kv, F, Kv, Kq, objw, cp, cn, cd, ct, ce)
            nt = 0.0
            for i in range(lo, 5):
                nt = max(nt, abs(Rt[i]))
            if nt < norm * (1.0 - 1e-4 * alpha):
                break
            alpha *= 0.5
        for i in range(5):
            vn[i] = vt[i]
        _residual(S, q, v, vn, qn, dt, mode, aux, kp, kd, finger_on, True, R, Jac, F, Kv, Kq, objw, cp, cn, cd, ct, ce)
        norm = 0.0
        for i in range(lo, 5):
            norm = max(norm, abs(R[i]))
    return norm / dt, it


@njit(cache=True, nogil=True)
def _substep_guess(S, q, v, dt, mode, aux, kp, kd, finger_on, lo, free_finger, v_init, nsub, out):
    """Average velocity over ``nsub`` backward-Euler substeps."""
    qs = q.copy()
    vs = v.copy()
    qsn = np.empty(5)
    vsn = np.empty(5)
    h = dt / nsub
    for _ in range(nsub):
        for i in range(5):
            vsn[i] = vs[i]
        vsn[3] = vs[3] - h * S[0][P_G]
        if not free_finger:
            vsn[0] = v_init[0]
            vsn[1] = v_init[1]
        _newton(S, qs, vs, h, mode, aux, kp, kd, finger_on, lo, vsn, qsn, NEWTON_MAXIT, 0)
        for i in range(5):
            qs[i] = qsn[i]
            vs[i] = vsn[i]
    for i in range(lo, 5):
        out[i] = (qs[i] - q[i]) / dt


@njit(cache=True, nogil=True)
def _finish(q, dt, vn, qn, free_finger, finger_on, mode):
    """End-of-step configuration; a frozen finger keeps its position."""
    for i in range(5):
        qn[i] = q[i] + dt * vn[i]
    if not free_finger and not (finger_on and mode == MODE_KINEMATIC):
        qn[0] = q[0]
        qn[1] = q[1]


@njit(cache=True, nogil=True)
def be_step(S, q, v, dt, mode, aux, kp, kd, finger_on, qn, vn):
    """One backward-Euler step; returns (max residual force [N], iterations).

    mode MODE_FORCE: aux is the actuator force; MODE_PD: aux is the PD
    setpoint; MODE_KINEMATIC: aux is the prescribed finger velocity. With
    finger_on false the finger is frozen and ignored by contact.
    """
    free_finger = finger_on and (mode == MODE_FORCE or mode == MODE_PD)
    lo = 0 if free_finger else 2
    for i in range(5):
        vn[i] = v[i]
    if not free_finger:
        if finger_on and mode == MODE_KINEMATIC:
            vn[0] = aux[0]
            vn[1] = aux[1]
        else:
            vn[0] = 0.0
            vn[1] = 0.0
    # predictor: unconstrained gravity step for the object
    vn[3] = v[3] - dt * S[0][P_G]
    v_init = vn.copy()
    r, it = _newton(S, q, v, dt, mode, aux, kp, kd, finger_on, lo, vn, qn, NEWTON_FIRST_MAXIT, NEWTON_FD_AFTER)
    if r <= NEWTON_TOL:
        _finish(q, dt, vn, qn, free_finger, finger_on, mode)
        return r, it
    # fallbacks with finite-difference Jacobians: restart from rest, then
    # warm starts from 2, 4 and 8 substeps; keep the best if none converges
    best_r = r
    best_v = vn.copy()
    for attempt in range(4):
        for i in range(5):
            vn[i] = v_init[i]
        if attempt == 0:
            for i in range(lo, 5):
                vn[i] = 0.0
        else:
            nsub = 2 ** attempt
            _substep_guess(S, q, v, dt, mode, aux, kp, kd, finger_on, lo, free_finger, v_init, nsub, vn)
        r, it2 = _newton(S, q, v, dt, mode, aux, kp, kd, finger_on, lo, vn, qn, NEWTON_MAXIT, 0)
        it += it2
        if r < best_r:
            best_r = r
            for i in range(5):
                best_v[i] = vn[i]
        if r <= NEWTON_TOL:
            break
    for i in range(5):
        vn[i] = best_v[i]
    _finish(q, dt, vn, qn, free_finger, finger_on, mode)
    return best_r, it


@njit(cache=True, nogil=True)
def object_speed(P, v):
    """Mixed speed: max of COM speed and bounding-radius-scaled spin."""
    lin = math.sqrt(v[2] * v[2] + v[3] * v[3])
    ang = abs(v[4]) * P[P_OBJBOUND]
    return max(lin, ang)


@njit(cache=True, nogil=True)
def settle_kernel(S, q0, v0, dt, hold_finger, kp, kd, v_rest, t_rest, t_max, out):
    """Simulate until the object rests for t_rest or t_max elapses.

    Writes each post-step state (q, v) into ``out`` rows 0..n-1 and returns
    (n, timed_out, max_residual). The last row has velocities zeroed.
    """
    P = S[0]
    q = q0.copy()
    v = v0.copy()
    qn = np.empty(5)
    vn = np.empty(5)
    sp = np.empty(2)
    sp[0] = q0[0]
    sp[1] = q0[1]
    if not hold_finger:
        v[0] = 0.0
        v[1] = 0.0
    n_max = int(round(t_max / dt))
    n_rest = int(round(t_rest / dt))
    rest = 0
    n = 0
    rmax = 0.0
    timed_out = True
    while n < n_max:
        if hold_finger:
            r, it = be_step(S, q, v, dt, MODE_PD, sp, kp, kd, True, qn, vn)
        else:
            r, it = be_step(S, q, v, dt, MODE_FORCE, sp, kp, kd, False, qn, vn)
        rmax = max(rmax, r)
        for i in range(5):
            q[i] = qn[i]
            v[i] = vn[i]
            out[n, i] = q[i]
            out[n, 5 + i] = v[i]
        n += 1
        if object_speed(P, v) < v_rest:
            rest += 1
        else:
            rest = 0
        if rest >= n_rest:
            timed_out = False
            break
    if n > 0:
        for i in range(5):
            out[n - 1, 5 + i] = 0.0
    return n, timed_out, rmax


@njit(cache=True, nogil=True)
def finger_witness(S, q, objw):
    """Nearest finger/object pair: (sd, witness on object, outward normal there)."""
    P, obj_verts = S[0], S[1]
    rf = P[P_RF]
    if P[P_OBJKIND] > 0.5:
        world_vertices(obj_verts, q[2], q[3], q[4], objw)
        sd, wfx, wfy, wox, woy, nx, ny = circle_polygon(q[0], q[1], rf, objw, obj_verts.shape[0])
        return sd, wox, woy, nx, ny
    sd, wax, way, wbx, wby, nx, ny = circle_circle(q[2], q[3], P[P_OBJR], q[0], q[1], rf)
    return sd, wax, way, -nx, -ny


@njit(cache=True, nogil=True)
def rollout_kernel(S, q0, vprop, wdiag, dt, n_track, t_proj, n_max, d_contact, v_stopped, phi_max, kp, kd, states, setpoints):
    """PD-tracked rollout of one object velocity proposal.

    Returns (n_states, n_setpoints, reason, max_residual). ``states`` rows
    are [q, v]; ``setpoints`` rows are [step_index, x, y].
    """
    P = S[0]
    objw = np.empty((max(S[1].shape[0], 1), 2))
    q = q0.copy()
    v = np.zeros(5)
    qn = np.empty(5)
    vn = np.empty(5)
    sp = np.empty(2)
    for i in range(5):
        states[0, i] = q[i]
        states[0, 5 + i] = 0.0
    ref = math.sqrt(wdiag[0] * vprop[0] ** 2 + wdiag[1] * vprop[1] ** 2 + wdiag[2] * vprop[2] ** 2)
    rot = 0.0
    k = 0
    nsp = 0
    rmax = 0.0
    reason = TERM_NONE
    while reason == TERM_NONE:
        if k % n_track == 0:
            sd, wx, wy, nx, ny = finger_witness(S, q, objw)
            c = math.cos(q[4])
            s = math.sin(q[4])
            # contact point and outward normal in the body frame
            bx = c * (wx - q[2]) + s * (wy - q[3])
            by = -s * (wx - q[2]) + c * (wy - q[3])
            bnx = c * nx + s * ny
            bny = -s * nx + c * ny
            px = q[2] + vprop[0] * t_proj
            py = q[3] + vprop[1] * t_proj
            pt = q[4] + vprop[2] * t_proj
            c2 = math.cos(pt)
            s2 = math.sin(pt)
            rf = P[P_RF]
            sp[0] = px + c2 * bx - s2 * by + rf * (c2 * bnx - s2 * bny)
            sp[1] = py + s2 * bx + c2 * by + rf * (s2 * bnx + c2 * bny)
            setpoints[nsp, 0] = k
            setpoints[nsp, 1] = sp[0]
            setpoints[nsp, 2] = sp[1]
            nsp += 1
        r, it = be_step(S, q, v, dt, MODE_PD, sp, kp, kd, True, qn, vn)
        rmax = max(rmax, r)
        rot += abs(qn[4] - q[4])
        for i in range(5):
            q[i] = qn[i]
            v[i] = vn[i]
        k += 1
        for i in range(5):
            states[k, i] = q[i]
            states[k, 5 + i] = v[i]
        sd, wx, wy, nx, ny = finger_witness(S, q, objw)
        wspeed = math.sqrt(wdiag[0] * v[2] ** 2 + wdiag[1] * v[3] ** 2 + wdiag[2] * v[4] ** 2)
        if sd > d_contact:
            reason = TERM_CONTACT_LOST
        elif rot > phi_max:
            reason = TERM_ROTATION
        elif k >= n_track and wspeed < v_stopped * ref:
            reason = TERM_STOPPED
        elif k >= n_max:
            reason = TERM_TIMEOUT
    return k + 1, nsp, reason, rmax


@njit(cache=True, nogil=True)
def replay_rollout_kernel(S, q0, setpoints, nsp, n_steps, dt, kp, kd, states):
    """Re-run a rollout from its stored setpoint schedule."""
    q = q0.copy()
    v = np.zeros(5)
    qn = np.empty(5)
    vn = np.empty(5)
    sp = np.empty(2)
    for i in range(5):
        states[0, i] = q[i]
        states[0, 5 + i] = 0.0
    j = 0
    for k in range(n_steps):
        while j < nsp and setpoints[j, 0] <= k:
            sp[0] = setpoints[j, 1]
            sp[1] = setpoints[j, 2]
            j += 1
        be_step(S, q, v, dt, MODE_PD, sp, kp, kd, True, qn, vn)
        for i in range(5):
            q[i] = qn[i]
            v[i] = vn[i]
            states[k + 1, i] = q[i]
            states[k + 1, 5 + i] = v[i]
