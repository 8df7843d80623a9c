"""Numba kernels for batched contact stepping and MPC rollout scoring.

These mirror the numpy reference path in `dynamics` (same candidate layout,
facet construction and projected Gauss-Seidel solve) element by element, so a
batch row behaves identically to a single-state step up to float op ordering.
Facets live in fixed slots (candidate * n_d + j), which lets rollout steps
warm-start the impulse solve from the previous step's solution.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _quat_rotate(qw, qx, qy, qz, vx, vy, vz):
    # v + 2 w (qv x v) + 2 qv x (qv x v)
    tx = 2.0 * (qy * vz - qz * vy)
    ty = 2.0 * (qz * vx - qx * vz)
    tz = 2.0 * (qx * vy - qy * vx)
    rx = vx + qw * tx + (qy * tz - qz * ty)
    ry = vy + qw * ty + (qz * tx - qx * tz)
    rz = vz + qw * tz + (qx * ty - qy * tx)
    return rx, ry, rz


@njit(cache=True, inline="always")
def _quat_rotate_inv(qw, qx, qy, qz, vx, vy, vz):
    return _quat_rotate(qw, -qx, -qy, -qz, vx, vy, vz)


@njit(cache=True, inline="always")
def _quat_mul(aw, ax, ay, az, bw, bx, by, bz):
    w = aw * bw - ax * bx - ay * by - az * bz
    x = aw * bx + bw * ax + ay * bz - az * by
    y = aw * by + bw * ay + az * bx - ax * bz
    z = aw * bz + bw * az + ax * by - ay * bx
    return w, x, y, z


@njit(cache=True, inline="always")
def _quat_exp(wx, wy, wz):
    angle = np.sqrt(wx * wx + wy * wy + wz * wz)
    half = 0.5 * angle
    if angle < 1e-12:
        s = 0.5
    else:
        s = np.sin(half) / angle
    return np.cos(half), s * wx, s * wy, s * wz


@njit(cache=True)
def _element_step(
    p,
    q,
    ee,
    u,
    wrench,
    centers,
    halfs,
    corners,
    pnormals,
    poffsets,
    mass,
    h,
    mu,
    n_d,
    max_gap,
    ee_window,
    ee_radius,
    gravity,
    robot_gain,
    kappa,
    max_sweeps,
    tol,
    J,
    phi,
    dirs,
    active,
    lam,
    gaps_out,
    forces_out,
):
    """Advance one system in place.

    Facet arrays use fixed slots (candidate * n_d + j); ``lam`` may carry a
    warm start from the previous step and is zeroed on inactive slots.
    """
    nb = centers.shape[0]
    ncg = corners.shape[0]
    npl = pnormals.shape[0]
    n_cand = nb + npl * ncg
    scale = 1.0 / np.sqrt(1.0 + mu * mu)

    qw, qx, qy, qz = q[0], q[1], q[2], q[3]

    # ee in the object frame
    dx_, dy_, dz_ = ee[0] - p[0], ee[1] - p[1], ee[2] - p[2]
    ex, ey, ez = _quat_rotate_inv(qw, qx, qy, qz, dx_, dy_, dz_)

    n_active = 0
    for c in range(n_cand):
        if c < nb:
            bi = c
            relx = ex - centers[bi, 0]
            rely = ey - centers[bi, 1]
            relz = ez - centers[bi, 2]
            hx, hy, hz = halfs[bi, 0], halfs[bi, 1], halfs[bi, 2]
            cx = min(max(relx, -hx), hx)
            cy = min(max(rely, -hy), hy)
            cz = min(max(relz, -hz), hz)
            ddx, ddy, ddz = relx - cx, rely - cy, relz - cz
            dist = np.sqrt(ddx * ddx + ddy * ddy + ddz * ddz)
            if dist > 0.0:
                sdf = dist
                nlx, nly, nlz = ddx / dist, ddy / dist, ddz / dist
                sx, sy, sz = cx, cy, cz
            else:
                mx = hx - abs(relx)
                my = hy - abs(rely)
                mz = hz - abs(relz)
                sx, sy, sz = relx, rely, relz
                if mx <= my and mx <= mz:
                    sdf = -mx
                    nlx = 1.0 if relx >= 0 else -1.0
                    nly = 0.0
                    nlz = 0.0
                    sx = nlx * hx
                elif my <= mz:
                    sdf = -my
                    nlx = 0.0
                    nly = 1.0 if rely >= 0 else -1.0
                    nlz = 0.0
                    sy = nly * hy
                else:
                    sdf = -mz
                    nlx = 0.0
                    nly = 0.0
                    nlz = 1.0 if relz >= 0 else -1.0
                    sz = nlz * hz
            gap = sdf - ee_radius
            lx = centers[bi, 0] + sx
            ly = centers[bi, 1] + sy
            lz = centers[bi, 2] + sz
            wx_, wy_, wz_ = _quat_rotate(qw, qx, qy, qz, lx, ly, lz)
            px, py, pz = p[0] + wx_, p[1] + wy_, p[2] + wz_
            nx, ny, nz = _quat_rotate(qw, qx, qy, qz, nlx, nly, nlz)
            is_ee = True
            window = ee_window
        else:
            k = c - nb
            pi = k // ncg
            ci = k - pi * ncg
            lx, ly, lz = corners[ci, 0], corners[ci, 1], corners[ci, 2]
            wx_, wy_, wz_ = _quat_rotate(qw, qx, qy, qz, lx, ly, lz)
            px, py, pz = p[0] + wx_, p[1] + wy_, p[2] + wz_
            nx, ny, nz = pnormals[pi, 0], pnormals[pi, 1], pnormals[pi, 2]
            gap = nx * px + ny * py + nz * pz - poffsets[pi]
            is_ee = False
            window = max_gap

        if gaps_out is not None:
            gaps_out[c] = gap
        base = c * n_d
        if gap > window:
            for j in range(n_d):
                active[base + j] = False
                lam[base + j] = 0.0
            continue

        # deterministic tangent basis
        if abs(nx) > 0.9:
            rx, ry, rz = 0.0, 1.0, 0.0
        else:
            rx, ry, rz = 1.0, 0.0, 0.0
        t1x = ny * rz - nz * ry
        t1y = nz * rx - nx * rz
        t1z = nx * ry - ny * rx
        tn = np.sqrt(t1x * t1x + t1y * t1y + t1z * t1z)
        t1x, t1y, t1z = t1x / tn, t1y / tn, t1z / tn
        t2x = ny * t1z - nz * t1y
        t2y = nz * t1x - nx * t1z
        t2z = nx * t1y - ny * t1x

        rvx, rvy, rvz = px - p[0], py - p[1], pz - p[2]
        for j in range(n_d):
            a = 2.0 * np.pi * j / n_d
            ca, sa = np.cos(a), np.sin(a)
            tx = ca * t1x + sa * t2x
            ty = ca * t1y + sa * t2y
            tz = ca * t1z + sa * t2z
            edx = (nx + mu * tx) * scale
            edy = (ny + mu * ty) * scale
            edz = (nz + mu * tz) * scale
            crx = rvy * edz - rvz * edy
            cry = rvz * edx - rvx * edz
            crz = rvx * edy - rvy * edx
            f = base + j
            if is_ee:
                J[f, 0] = -edx
                J[f, 1] = -edy
                J[f, 2] = -edz
                J[f, 3] = -crx
                J[f, 4] = -cry
                J[f, 5] = -crz
                J[f, 6] = edx
                J[f, 7] = edy
                J[f, 8] = edz
            else:
                J[f, 0] = edx
                J[f, 1] = edy
                J[f, 2] = edz
                J[f, 3] = crx
                J[f, 4] = cry
                J[f, 5] = crz
                J[f, 6] = 0.0
                J[f, 7] = 0.0
                J[f, 8] = 0.0
            phi[f] = gap * (nx * edx + ny * edy + nz * edz)
            dirs[f, 0] = edx
            dirs[f, 1] = edy
            dirs[f, 2] = edz
            active[f] = True
            n_active += 1

    # free velocity (object gravity + external wrench + robot spring)
    v = np.empty(9)
    v[0] = h * wrench[0] / mass[0]
    v[1] = h * wrench[1] / mass[1]
    v[2] = h * (wrench[2] - mass[2] * gravity) / mass[2]
    v[3] = h * wrench[3] / mass[3]
    v[4] = h * wrench[4] / mass[4]
    v[5] = h * wrench[5] / mass[5]
    v[6] = h * robot_gain * u[0] / mass[6]
    v[7] = h * robot_gain * u[1] / mass[7]
    v[8] = h * robot_gain * u[2] / mass[8]

    max_f = n_cand * n_d
    if n_active > 0:
        # apply warm-start impulses to the velocity before sweeping
        for f in range(max_f):
            if active[f] and lam[f] != 0.0:
                for cidx in range(9):
                    v[cidx] += J[f, cidx] * lam[f] / mass[cidx]
        for _ in range(max_sweeps):
            max_delta = 0.0
            for f in range(max_f):
                if not active[f]:
                    continue
                d = 0.0
                s = phi[f]
                for cidx in range(9):
                    d += J[f, cidx] * J[f, cidx] / mass[cidx]
                    s += h * J[f, cidx] * v[cidx]
                lu = (-kappa * (s - h * d * lam[f])) / (1.0 + kappa * h * d)
                ln = lu if lu > 0.0 else 0.0
                delta = ln - lam[f]
                if delta != 0.0:
                    lam[f] = ln
                    for cidx in range(9):
                        v[cidx] += J[f, cidx] * delta / mass[cidx]
                    if delta < 0.0:
                        delta = -delta
                    if delta > max_delta:
                        max_delta = delta
            if max_delta < tol:
                break
        if forces_out is not None:
            for f in range(max_f):
                if active[f] and lam[f] != 0.0:
                    c = f // n_d
                    forces_out[c, 0] += lam[f] * dirs[f, 0] / h
                    forces_out[c, 1] += lam[f] * dirs[f, 1] / h
                    forces_out[c, 2] += lam[f] * dirs[f, 2] / h

    # integrate
    p[0] += h * v[0]
    p[1] += h * v[1]
    p[2] += h * v[2]
    ew, ex_, ey_, ez_ = _quat_exp(h * v[3], h * v[4], h * v[5])
    nw, nx_, ny_, nz_ = _quat_mul(ew, ex_, ey_, ez_, qw, qx, qy, qz)
    norm = np.sqrt(nw * nw + nx_ * nx_ + ny_ * ny_ + nz_ * nz_)
    q[0], q[1], q[2], q[3] = nw / norm, nx_ / norm, ny_ / norm, nz_ / norm
    ee[0] += h * v[6]
    ee[1] += h * v[7]
    ee[2] += h * v[8]


@njit(cache=True, parallel=True)
def step_kernel(
    p,
    q,
    ee,
    U,
    wrench,
    centers,
    halfs,
    corners,
    pnormals,
    poffsets,
    mass,
    h,
    mu,
    n_d,
    max_gap,
    ee_window,
    ee_radius,
    gravity,
    robot_gain,
    kappa,
    max_sweeps,
    tol,
    gaps_out,
    lam_out,
    forces_out,
):
    """One step for a batch; writes states in place plus diagnostics."""
    B = p.shape[0]
    nb = centers.shape[0]
    n_cand = nb + pnormals.shape[0] * corners.shape[0]
    max_f = n_cand * n_d
    for b in prange(B):
        J = np.empty((max_f, 9))
        phi = np.empty(max_f)
        dirs = np.empty((max_f, 3))
        active = np.zeros(max_f, dtype=np.bool_)
        lam_out[b, :] = 0.0
        forces_out[b, :, :] = 0.0
        _element_step(
            p[b],
            q[b],
            ee[b],
            U[b],
            wrench[b],
            centers,
            halfs,
            corners,
            pnormals,
            poffsets,
            mass,
            h,
            mu,
            n_d,
            max_gap,
            ee_window,
            ee_radius,
            gravity,
            robot_gain,
            kappa,
            max_sweeps,
            tol,
            J,
            phi,
            dirs,
            active,
            lam_out[b],
            gaps_out[b],
            forces_out[b],
        )


@njit(cache=True, parallel=True)
def rollout_kernel(
    p0,
    q0,
    ee0,
    seqs,
    w_c,
    point_obj,
    w_pos,
    w_ori,
    tgt_p,
    tgt_q,
    centers,
    halfs,
    corners,
    pnormals,
    poffsets,
    mass,
    h,
    mu,
    n_d,
    max_gap,
    ee_window,
    ee_radius,
    gravity,
    robot_gain,
    kappa,
    max_sweeps,
    tol,
    costs,
):
    """Total rollout cost per batch row; input states are not modified."""
    B = p0.shape[0]
    H = seqs.shape[1]
    nb = centers.shape[0]
    n_cand = nb + pnormals.shape[0] * corners.shape[0]
    max_f = n_cand * n_d
    for b in prange(B):
        p = p0[b].copy()
        q = q0[b].copy()
        ee = ee0[b].copy()
        J = np.empty((max_f, 9))
        phi = np.empty(max_f)
        dirs = np.empty((max_f, 3))
        active = np.zeros(max_f, dtype=np.bool_)
        lam = np.zeros(max_f)  # warm-started across the horizon
        wrench = np.zeros(6)
        total = 0.0
        for t in range(H):
            cx, cy, cz = _quat_rotate(
                q[0], q[1], q[2], q[3], point_obj[b, 0], point_obj[b, 1], point_obj[b, 2]
            )
            ddx = ee[0] - (p[0] + cx)
            ddy = ee[1] - (p[1] + cy)
            ddz = ee[2] - (p[2] + cz)
            total += w_c * (ddx * ddx + ddy * ddy + ddz * ddz)
            _element_step(
                p,
                q,
                ee,
                seqs[b, t],
                wrench,
                centers,
                halfs,
                corners,
                pnormals,
                poffsets,
                mass,
                h,
                mu,
                n_d,
                max_gap,
                ee_window,
                ee_radius,
                gravity,
                robot_gain,
                kappa,
                max_sweeps,
                tol,
                J,
                phi,
                dirs,
                active,
                lam,
                None,
                None,
            )
        dpx = p[0] - tgt_p[b, 0]
        dpy = p[1] - tgt_p[b, 1]
        dpz = p[2] - tgt_p[b, 2]
        dot = (
            q[0] * tgt_q[b, 0]
            + q[1] * tgt_q[b, 1]
            + q[2] * tgt_q[b, 2]
            + q[3] * tgt_q[b, 3]
        )
        costs[b] = total + w_pos[b] * (dpx * dpx + dpy * dpy + dpz * dpz) + w_ori[b] * (
            1.0 - dot * dot
        )
