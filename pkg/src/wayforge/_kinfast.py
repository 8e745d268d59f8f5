"""Numba kernels for the serial-chain kinematics hot loops.

Kept free of Python objects: plain float64/int64 arrays in, arrays out.
The damped-least-squares solve uses a hand-rolled 6x6 Cholesky (the normal
matrix is SPD by construction), which also keeps the arithmetic free of
pivot choices so mirrored problems produce exactly sign-mirrored iterates.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _apply_joint_rotation(R, axis, angle):
    """In-place right-multiply R by a rotation about a local axis (0=x,1=y,2=z)."""
    c = np.cos(angle)
    s = np.sin(angle)
    if axis == 2:
        for r in range(3):
            a = R[r, 0]
            b = R[r, 1]
            R[r, 0] = a * c + b * s
            R[r, 1] = -a * s + b * c
    elif axis == 1:
        for r in range(3):
            a = R[r, 0]
            b = R[r, 2]
            R[r, 0] = a * c - b * s
            R[r, 2] = a * s + b * c
    else:
        for r in range(3):
            a = R[r, 1]
            b = R[r, 2]
            R[r, 1] = a * c + b * s
            R[r, 2] = -a * s + b * c


@njit(cache=True)
def fk_chain(base_p, base_R, axes, lengths, q, p_out, R_out, origins, world_axes):
    """Forward kinematics; also records joint origins and world axes for the Jacobian."""
    n = axes.shape[0]
    for r in range(3):
        p_out[r] = base_p[r]
        for cidx in range(3):
            R_out[r, cidx] = base_R[r, cidx]
    for i in range(n):
        ax = axes[i]
        for r in range(3):
            origins[i, r] = p_out[r]
            world_axes[i, r] = R_out[r, ax]
        _apply_joint_rotation(R_out, ax, q[i])
        for r in range(3):
            p_out[r] = p_out[r] + R_out[r, 2] * lengths[i]


@njit(cache=True)
def _rotation_error(R_target, R_cur, e_rot):
    """Rotation vector of R_target @ R_cur^T, written into e_rot."""
    # E = R_target @ R_cur^T
    E = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            acc = 0.0
            for k in range(3):
                acc += R_target[r, k] * R_cur[c, k]
            E[r, c] = acc
    tr = E[0, 0] + E[1, 1] + E[2, 2]
    ct = 0.5 * (tr - 1.0)
    if ct > 1.0:
        ct = 1.0
    elif ct < -1.0:
        ct = -1.0
    theta = np.arccos(ct)
    vx = E[2, 1] - E[1, 2]
    vy = E[0, 2] - E[2, 0]
    vz = E[1, 0] - E[0, 1]
    if theta < 1e-7:
        e_rot[0] = 0.5 * vx
        e_rot[1] = 0.5 * vy
        e_rot[2] = 0.5 * vz
    elif theta > np.pi - 1e-5:
        # near pi: extract axis from the diagonal
        dx = np.sqrt(max(0.0, (E[0, 0] + 1.0) * 0.5))
        dy = np.sqrt(max(0.0, (E[1, 1] + 1.0) * 0.5))
        dz = np.sqrt(max(0.0, (E[2, 2] + 1.0) * 0.5))
        if dx >= dy and dx >= dz:
            if dx < 1e-12:
                dx = 1e-12
            ay = (E[0, 1] + E[1, 0]) / (4.0 * dx)
            az = (E[0, 2] + E[2, 0]) / (4.0 * dx)
            axv, ayv, azv = dx, ay, az
        elif dy >= dz:
            if dy < 1e-12:
                dy = 1e-12
            axv = (E[0, 1] + E[1, 0]) / (4.0 * dy)
            azv = (E[1, 2] + E[2, 1]) / (4.0 * dy)
            ayv = dy
        else:
            if dz < 1e-12:
                dz = 1e-12
            axv = (E[0, 2] + E[2, 0]) / (4.0 * dz)
            ayv = (E[1, 2] + E[2, 1]) / (4.0 * dz)
            azv = dz
        if vx * axv + vy * ayv + vz * azv < 0.0:
            axv, ayv, azv = -axv, -ayv, -azv
        nrm = np.sqrt(axv * axv + ayv * ayv + azv * azv)
        if nrm < 1e-12:
            nrm = 1.0
        e_rot[0] = theta * axv / nrm
        e_rot[1] = theta * ayv / nrm
        e_rot[2] = theta * azv / nrm
    else:
        scale = theta / (2.0 * np.sin(theta))
        e_rot[0] = scale * vx
        e_rot[1] = scale * vy
        e_rot[2] = scale * vz
    return theta


@njit(cache=True)
def _solve_spd6(A, b, x):
    """Solve A x = b for SPD 6x6 A via Cholesky (no pivoting)."""
    L = np.zeros((6, 6))
    for i in range(6):
        for j in range(i + 1):
            acc = A[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            if i == j:
                L[i, j] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    y = np.zeros(6)
    for i in range(6):
        acc = b[i]
        for k in range(i):
            acc -= L[i, k] * y[k]
        y[i] = acc / L[i, i]
    for i in range(5, -1, -1):
        acc = y[i]
        for k in range(i + 1, 6):
            acc -= L[k, i] * x[k]
        x[i] = acc / L[i, i]


@njit(cache=True)
def _pose_error(base_p, base_R, axes, lengths, q, target_p, target_R, p, R, origins, world_axes, e):
    """FK at q and the stacked 6-vector pose error; returns (pos_err, ori_err)."""
    fk_chain(base_p, base_R, axes, lengths, q, p, R, origins, world_axes)
    pe = 0.0
    for r in range(3):
        e[r] = target_p[r] - p[r]
        pe += e[r] * e[r]
    pe = np.sqrt(pe)
    e_rot = np.empty(3)
    oe = _rotation_error(target_R, R, e_rot)
    for r in range(3):
        e[3 + r] = e_rot[r]
    return pe, oe


ROT_ERROR_WEIGHT = 0.5  # meters-per-radian scale mixing orientation into the DLS error


@njit(cache=True)
def ik_dls(
    base_p,
    base_R,
    axes,
    lengths,
    limits,
    q_seed,
    target_p,
    target_R,
    damping,
    max_iters,
    step_clamp,
    pos_tol,
    ori_tol,
):
    """Damped least squares IK with adaptive (Levenberg-Marquardt style) damping.

    Steps that increase the weighted error are rejected and retried with
    higher damping; max_iters bounds the number of Jacobian evaluations.
    Returns (q, pos_err, ori_err, iterations, converged).
    """
    n = axes.shape[0]
    w = ROT_ERROR_WEIGHT
    q = q_seed.copy()
    q_try = np.empty(n)
    p = np.empty(3)
    R = np.empty((3, 3))
    origins = np.empty((n, 3))
    world_axes = np.empty((n, 3))
    e = np.empty(6)
    e_try = np.empty(6)
    J = np.empty((6, n))
    A = np.empty((6, 6))
    x = np.empty(6)
    lam = damping
    pe, oe = _pose_error(base_p, base_R, axes, lengths, q, target_p, target_R, p, R, origins, world_axes, e)
    best_q = q.copy()
    best_pe = pe
    best_oe = oe
    for it in range(max_iters + 1):
        if pe < pos_tol and oe < ori_tol:
            return q, pe, oe, it, True
        if it == max_iters:
            break
        # geometric Jacobian at the current configuration
        for j in range(n):
            axx = world_axes[j, 0]
            axy = world_axes[j, 1]
            axz = world_axes[j, 2]
            rx = p[0] - origins[j, 0]
            ry = p[1] - origins[j, 1]
            rz = p[2] - origins[j, 2]
            J[0, j] = axy * rz - axz * ry
            J[1, j] = axz * rx - axx * rz
            J[2, j] = axx * ry - axy * rx
            J[3, j] = axx
            J[4, j] = axy
            J[5, j] = axz
        # exact linearization of the rotation-vector error: premultiply the
        # angular rows by the inverse right Jacobian of SO(3) at e_rot
        theta = np.sqrt(e[3] ** 2 + e[4] ** 2 + e[5] ** 2)
        if theta < 1e-4:
            cc = 1.0 / 12.0
        else:
            th = theta
            if th > np.pi - 1e-3:
                th = np.pi - 1e-3
            cc = 1.0 / (th * th) - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th))
        kx, ky, kz = e[3], e[4], e[5]
        # A = I + 0.5*K + cc*K^2 with K = [e_rot]x
        a00 = 1.0 + cc * (-(ky * ky + kz * kz))
        a01 = 0.5 * (-kz) + cc * (kx * ky)
        a02 = 0.5 * ky + cc * (kx * kz)
        a10 = 0.5 * kz + cc * (kx * ky)
        a11 = 1.0 + cc * (-(kx * kx + kz * kz))
        a12 = 0.5 * (-kx) + cc * (ky * kz)
        a20 = 0.5 * (-ky) + cc * (kx * kz)
        a21 = 0.5 * kx + cc * (ky * kz)
        a22 = 1.0 + cc * (-(kx * kx + ky * ky))
        for j in range(n):
            r3 = J[3, j]
            r4 = J[4, j]
            r5 = J[5, j]
            J[3, j] = w * (a00 * r3 + a01 * r4 + a02 * r5)
            J[4, j] = w * (a10 * r3 + a11 * r4 + a12 * r5)
            J[5, j] = w * (a20 * r3 + a21 * r4 + a22 * r5)
        e[3] *= w
        e[4] *= w
        e[5] *= w
        cost = e[0] ** 2 + e[1] ** 2 + e[2] ** 2 + e[3] ** 2 + e[4] ** 2 + e[5] ** 2
        accepted = False
        for _attempt in range(5):
            lam2 = lam * lam
            for r in range(6):
                for c in range(6):
                    acc = 0.0
                    for k in range(n):
                        acc += J[r, k] * J[c, k]
                    A[r, c] = acc
                A[r, r] += lam2
            _solve_spd6(A, e, x)
            for j in range(n):
                dq = 0.0
                for r in range(6):
                    dq += J[r, j] * x[r]
                if dq > step_clamp:
                    dq = step_clamp
                elif dq < -step_clamp:
                    dq = -step_clamp
                qj = q[j] + dq
                if qj < limits[j, 0]:
                    qj = limits[j, 0]
                elif qj > limits[j, 1]:
                    qj = limits[j, 1]
                q_try[j] = qj
            pe_t, oe_t = _pose_error(
                base_p, base_R, axes, lengths, q_try, target_p, target_R, p, R, origins, world_axes, e_try
            )
            cost_t = (
                e_try[0] ** 2 + e_try[1] ** 2 + e_try[2] ** 2
                + (w * e_try[3]) ** 2 + (w * e_try[4]) ** 2 + (w * e_try[5]) ** 2
            )
            if cost_t < cost:
                # accept; the FK caches already hold q_try
                for k in range(n):
                    q[k] = q_try[k]
                for r in range(6):
                    e[r] = e_try[r]
                pe = pe_t
                oe = oe_t
                lam *= 0.5
                if lam < damping:
                    lam = damping
                accepted = True
                break
            lam *= 5.0
            if lam > 1e2:
                lam = 1e2
        if not accepted:
            # no productive step at this damping ladder; restore caches at q
            pe, oe = _pose_error(
                base_p, base_R, axes, lengths, q, target_p, target_R, p, R, origins, world_axes, e
            )
        if pe + oe < best_pe + best_oe:
            best_pe = pe
            best_oe = oe
            for k in range(n):
                best_q[k] = q[k]
    return best_q, best_pe, best_oe, max_iters, False


@njit(cache=True)
def ik_with_restarts(
    base_p,
    base_R,
    axes,
    lengths,
    limits,
    q_seed,
    restarts,
    target_p,
    target_R,
    damping,
    max_iters,
    step_clamp,
    pos_tol,
    ori_tol,
):
    """IK from a seed, falling back to fixed perturbed seeds on failure.

    Perturbations touch only mirror-invariant joints so left/right solves of
    mirrored problems stay exactly sign-symmetric.
    """
    q, pe, oe, it, ok = ik_dls(
        base_p, base_R, axes, lengths, limits, q_seed, target_p, target_R,
        damping, max_iters, step_clamp, pos_tol, ori_tol,
    )
    if ok:
        return q, pe, oe, it, True
    best_q, best_pe, best_oe = q, pe, oe
    n = axes.shape[0]
    seed2 = np.empty(n)
    for r in range(restarts.shape[0]):
        for k in range(n):
            s = q_seed[k] + restarts[r, k]
            if s < limits[k, 0]:
                s = limits[k, 0]
            elif s > limits[k, 1]:
                s = limits[k, 1]
            seed2[k] = s
        q, pe, oe, it, ok = ik_dls(
            base_p, base_R, axes, lengths, limits, seed2, target_p, target_R,
            damping, max_iters, step_clamp, pos_tol, ori_tol,
        )
        if ok:
            return q, pe, oe, it, True
        if pe + oe < best_pe + best_oe:
            best_q, best_pe, best_oe = q, pe, oe
    return best_q, best_pe, best_oe, max_iters, False


@njit(cache=True)
def trajectory_ik_scan(
    base_p,
    base_R,
    axes,
    lengths,
    limits,
    q_start,
    restarts,
    targets_p,
    targets_R,
    reach,
    damping,
    max_iters,
    step_clamp,
    pos_tol,
    ori_tol,
    q_out,
):
    """Solve IK along a waypoint sequence, seeding each solve with the last solution.

    Returns the first failing waypoint index, or -1 if every waypoint solves.
    """
    n_wp = targets_p.shape[0]
    seed = q_start.copy()
    for i in range(n_wp):
        dx = targets_p[i, 0] - base_p[0]
        dy = targets_p[i, 1] - base_p[1]
        dz = targets_p[i, 2] - base_p[2]
        if np.sqrt(dx * dx + dy * dy + dz * dz) > reach:
            return i
        q, pe, oe, it, ok = ik_with_restarts(
            base_p, base_R, axes, lengths, limits, seed, restarts,
            targets_p[i], targets_R[i], damping, max_iters, step_clamp, pos_tol, ori_tol,
        )
        if not ok:
            return i
        for k in range(axes.shape[0]):
            q_out[i, k] = q[k]
            seed[k] = q[k]
    return -1
