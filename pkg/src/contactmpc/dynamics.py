"""Quasi-dynamic, complementarity-free contact stepping for a 9-DOF system.

The system is an object (6 DOF: position + orientation) plus an abstract
spherical end-effector point (3 DOF). One step solves

    M v+ = h * tau(u) + J~^T lambda
    lambda_j = max(-K_c * (phi~_j + h * (J~ v+)_j), 0)

where the facets j run over ``n_d`` friction-cone generators per contact
candidate, ``phi~`` are facet-scaled signed distances and ``K_c`` the
dual-cone stiffness (impulse per meter of predicted facet penetration). The
elementwise max law is evaluated at its fixed point (projected Gauss-Seidel
on the equivalent LCP), so resting and pushing are stable at the desk-scale
parameter presets. Velocities do not persist across steps (quasi-dynamic).

Parameter normalization: preset values ``K_r`` and ``K`` are per-step gains;
the robot spring applies force ``(K_r / h^2) * u`` against the robot mass
term ``M_r = K_r``, which makes the free-space step displacement exactly
``u``, and the dual-cone stiffness is ``K_c = K / h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .assets import ObjectModel
from .geometry import (
    Pose,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
)

try:
    from . import _kernels

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _kernels = None
    _HAVE_NUMBA = False

FACET_SLACK = 0.41421356237309515  # sqrt(2) - 1, worst-case polyhedral slack for n_d = 4


class DynamicsError(ValueError):
    pass


@dataclass
class DynamicsParams:
    """Stepper constants; preset files carry these under their table keys."""

    h: float = 0.01
    K_r: float = 0.01  # robot stiffness, per-step normalized (robot mass = K_r kg)
    K: float = 5.0  # dual-cone stiffness, per-step normalized
    mu: float = 0.5
    m: float = 0.2
    i: float = 0.0005
    n_d: int = 4
    max_gap: float = 0.01  # activation window for object-environment candidates
    ee_window: float = 0.05  # wider ee window: must exceed per-step ee travel
    ee_radius: float = 0.008
    gravity: float = 9.81
    pgs_max_sweeps: int = 100
    pgs_tol: float = 1e-11

    @property
    def robot_gain(self) -> float:
        """End-effector spring stiffness in N/m: tau_r = robot_gain * u."""
        return self.K_r / (self.h * self.h)

    @property
    def robot_mass(self) -> float:
        """Quasi-dynamic robot mass term, h^2 * robot_gain."""
        return self.K_r

    @property
    def cone_gain(self) -> float:
        """Dual-cone stiffness in impulse per meter of predicted penetration."""
        return self.K / self.h

    def mass_vector(self) -> np.ndarray:
        m, i, mr = self.m, self.i, self.robot_mass
        return np.array([m, m, m, i, i, i, mr, mr, mr])

    def validate(self):
        if min(self.h, self.K_r, self.K, self.m, self.i) <= 0:
            raise DynamicsError("h, K_r, K, m, i must be positive")
        if self.mu < 0 or self.n_d < 2:
            raise DynamicsError("mu must be nonnegative and n_d >= 2")


@dataclass
class SystemState:
    object_pose: Pose
    ee_position: np.ndarray

    def __post_init__(self):
        self.ee_position = np.asarray(self.ee_position, dtype=np.float64).reshape(3)
        if not (
            np.all(np.isfinite(self.ee_position))
            and np.all(np.isfinite(self.object_pose.position))
            and np.all(np.isfinite(self.object_pose.orientation))
        ):
            raise DynamicsError("state coordinates must be finite")

    def copy(self) -> "SystemState":
        return SystemState(self.object_pose.copy(), self.ee_position.copy())


@dataclass
class Contact:
    body_pair: str  # "ee-object" | "object-ground" | "object-wall"
    point: np.ndarray  # world, on the witness surface
    normal: np.ndarray  # world, unit, into the free half-space
    gap: float  # signed distance, negative = penetration
    tangent1: np.ndarray
    tangent2: np.ndarray


@dataclass
class FacetSystem:
    J_tilde: np.ndarray  # (n_facets, 9)
    phi_tilde: np.ndarray  # (n_facets,)
    facet_directions: np.ndarray  # (n_facets, 3) force generators, world


@dataclass
class EnvGeometry:
    """Environment planes (normal, offset): free space is n.x >= offset."""

    planes: tuple = (((0.0, 0.0, 1.0), 0.0),)

    def arrays(self):
        normals = np.array([p[0] for p in self.planes], dtype=np.float64)
        offsets = np.array([p[1] for p in self.planes], dtype=np.float64)
        return normals, offsets


DEFAULT_ENV = EnvGeometry()


# ---------------------------------------------------------------------------
# Batched state
# ---------------------------------------------------------------------------


@dataclass
class BatchState:
    p: np.ndarray  # (B, 3) object position
    q: np.ndarray  # (B, 4) object orientation, scalar-first
    ee: np.ndarray  # (B, 3)

    @staticmethod
    def from_state(state: SystemState, copies: int = 1) -> "BatchState":
        return BatchState(
            np.repeat(state.object_pose.position[None], copies, axis=0).copy(),
            np.repeat(state.object_pose.orientation[None], copies, axis=0).copy(),
            np.repeat(state.ee_position[None], copies, axis=0).copy(),
        )

    def state(self, b: int = 0) -> SystemState:
        return SystemState(Pose(self.p[b].copy(), self.q[b].copy()), self.ee[b].copy())

    def copy(self) -> "BatchState":
        return BatchState(self.p.copy(), self.q.copy(), self.ee.copy())

    def __len__(self) -> int:
        return self.p.shape[0]


# ---------------------------------------------------------------------------
# Contact candidates
# ---------------------------------------------------------------------------


def _tangent_basis(normals: np.ndarray):
    """Deterministic orthonormal tangent pair for unit normals (..., 3)."""
    n = normals
    ref = np.zeros_like(n)
    use_y = np.abs(n[..., 0]) > 0.9
    ref[..., 0] = np.where(use_y, 0.0, 1.0)
    ref[..., 1] = np.where(use_y, 1.0, 0.0)
    t1 = np.cross(n, ref)
    t1 = t1 / np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(n, t1)
    return t1, t2


def _closest_point_on_boxes(local: np.ndarray, centers: np.ndarray, halfs: np.ndarray):
    """Vectorized closest surface point / outward normal / signed distance.

    local: (B, nb, 3) query points in object frame.
    Returns surf (B, nb, 3), normal (B, nb, 3), sdf (B, nb).
    """
    rel = local - centers
    clamped = np.clip(rel, -halfs, halfs)
    delta = rel - clamped
    dist = np.linalg.norm(delta, axis=-1)
    outside = dist > 0.0

    # interior: push out through the nearest face
    margins = halfs - np.abs(rel)
    axis = np.argmin(margins, axis=-1)
    min_margin = np.take_along_axis(margins, axis[..., None], axis=-1)[..., 0]
    sign = np.where(np.take_along_axis(rel, axis[..., None], axis=-1)[..., 0] >= 0, 1.0, -1.0)

    surf_in = clamped.copy()
    normal_in = np.zeros_like(rel)
    b_idx, n_idx = np.meshgrid(
        np.arange(rel.shape[0]), np.arange(rel.shape[1]), indexing="ij"
    )
    half_at_axis = np.take_along_axis(
        np.broadcast_to(halfs, rel.shape), axis[..., None], axis=-1
    )[..., 0]
    surf_in[b_idx, n_idx, axis] = sign * half_at_axis
    normal_in[b_idx, n_idx, axis] = sign

    with np.errstate(invalid="ignore", divide="ignore"):
        normal_out = delta / np.where(dist[..., None] == 0.0, 1.0, dist[..., None])

    surf = np.where(outside[..., None], clamped, surf_in)
    normal = np.where(outside[..., None], normal_out, normal_in)
    sdf = np.where(outside, dist, -min_margin)
    return surf + centers, normal, sdf


class CandidateSystem:
    """Fixed-layout contact candidates for one object in one environment.

    Layout order: ee-box contacts (box order), then plane contacts
    (plane-major, box-major corner order). The layout is static, so batched
    stepping uses fixed-shape arrays with an activity mask.
    """

    def __init__(self, obj: ObjectModel, env: EnvGeometry, params: DynamicsParams):
        self.obj = obj
        self.env = env
        self.params = params
        self.corners_obj = obj.corners()  # (ncg, 3)
        self.centers = np.stack([c for c, _ in obj.boxes])  # (nb, 3)
        self.halfs = np.stack([h for _, h in obj.boxes])
        self.nb = len(obj.boxes)
        self.plane_normals, self.plane_offsets = env.arrays()
        self.np_ = self.plane_normals.shape[0]
        self.ncg = self.corners_obj.shape[0]
        self.n_ee = self.nb
        self.n_plane = self.np_ * self.ncg
        self.n_cand = self.n_ee + self.n_plane
        # body pair label per candidate
        self.pair_labels = ["ee-object"] * self.n_ee
        for pi in range(self.np_):
            label = "object-ground" if pi == 0 and abs(self.plane_offsets[0]) < 1e12 and self.plane_normals[0][2] == 1.0 else "object-wall"
            self.pair_labels += [label] * self.ncg
        self.is_ee = np.zeros(self.n_cand, dtype=bool)
        self.is_ee[: self.n_ee] = True
        self.windows = np.where(self.is_ee, params.ee_window, params.max_gap)

    def kinematics(self, bs: BatchState):
        """Per-candidate gap, witness point, normal for a batch of states.

        Returns gaps (B, nc), points (B, nc, 3), normals (B, nc, 3).
        """
        B = len(bs)
        R = quat_to_matrix(bs.q)  # (B, 3, 3)

        # ee-to-box candidates
        ee_local = np.einsum("bij,bj->bi", R.transpose(0, 2, 1), bs.ee - bs.p)  # (B,3)
        surf, n_obj, sdf = _closest_point_on_boxes(
            ee_local[:, None, :], self.centers[None], self.halfs[None]
        )
        ee_points = np.einsum("bij,bnj->bni", R, surf) + bs.p[:, None]
        ee_normals = np.einsum("bij,bnj->bni", R, n_obj)
        ee_gaps = sdf - self.params.ee_radius

        # plane-corner candidates
        corners_w = np.einsum("bij,nj->bni", R, self.corners_obj) + bs.p[:, None]  # (B,ncg,3)
        pn = self.plane_normals  # (np, 3)
        po = self.plane_offsets
        plane_gaps = np.einsum("pk,bnk->bpn", pn, corners_w) - po[None, :, None]
        plane_points = np.broadcast_to(corners_w[:, None], (B, self.np_, self.ncg, 3))
        plane_normals = np.broadcast_to(pn[None, :, None, :], (B, self.np_, self.ncg, 3))

        gaps = np.concatenate([ee_gaps, plane_gaps.reshape(B, -1)], axis=1)
        points = np.concatenate([ee_points, plane_points.reshape(B, -1, 3)], axis=1)
        normals = np.concatenate([ee_normals, plane_normals.reshape(B, -1, 3)], axis=1)
        return gaps, points, normals

    def facets(self, bs: BatchState, gaps, points, normals):
        """Facet rows, scaled distances and force directions for the batch.

        Returns J (B, nf, 9), phi (B, nf), dirs (B, nf, 3), active (B, nf).
        """
        B = len(bs)
        mu = self.params.mu
        n_d = self.params.n_d
        t1, t2 = _tangent_basis(normals)
        angles = 2.0 * np.pi * np.arange(n_d) / n_d
        tang = (
            np.cos(angles)[None, None, :, None] * t1[:, :, None, :]
            + np.sin(angles)[None, None, :, None] * t2[:, :, None, :]
        )  # (B, nc, n_d, 3)
        scale = 1.0 / np.sqrt(1.0 + mu * mu)
        dirs = (normals[:, :, None, :] + mu * tang) * scale  # unit generators

        r = points - bs.p[:, None]  # (B, nc, 3)
        r_cross_e = np.cross(np.broadcast_to(r[:, :, None, :], dirs.shape), dirs)
        J = np.zeros((B, self.n_cand, n_d, 9))
        sign = np.where(self.is_ee, -1.0, 1.0)[None, :, None, None]
        J[..., 0:3] = sign * dirs
        J[..., 3:6] = sign * r_cross_e
        J[..., 6:9] = np.where(self.is_ee[None, :, None, None], dirs, 0.0)

        phi = gaps[:, :, None] * scale * np.ones(n_d)[None, None, :]
        active = (gaps <= self.windows[None, :])[:, :, None] & np.ones(n_d, dtype=bool)
        nf = self.n_cand * n_d
        return (
            J.reshape(B, nf, 9),
            phi.reshape(B, nf),
            dirs.reshape(B, nf, 3),
            active.reshape(B, nf),
        )


# ---------------------------------------------------------------------------
# Fixed-point impulse solve
# ---------------------------------------------------------------------------


def _pgs_numpy(J, phi, active, minv, vfree, kappa, h, max_sweeps, tol):
    B, F, _ = J.shape
    lam = np.zeros((B, F))
    v = vfree.copy()
    diag = np.einsum("bfk,k,bfk->bf", J, minv, J)
    denom = 1.0 + kappa * h * diag
    for b in range(B):
        idx = np.nonzero(active[b])[0]
        if idx.size == 0:
            continue
        for _ in range(max_sweeps):
            max_delta = 0.0
            for f in idx:
                s = phi[b, f] + h * float(J[b, f] @ v[b])
                lu = (-kappa * (s - h * diag[b, f] * lam[b, f])) / denom[b, f]
                ln = lu if lu > 0.0 else 0.0
                delta = ln - lam[b, f]
                if delta != 0.0:
                    lam[b, f] = ln
                    v[b] += minv * J[b, f] * delta
                    if abs(delta) > max_delta:
                        max_delta = abs(delta)
            if max_delta < tol:
                break
    return lam, v


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


@dataclass
class StepDiagnostics:
    gaps: np.ndarray  # (B, nc)
    lam: np.ndarray  # (B, nc * n_d)
    forces: np.ndarray  # (B, nc, 3) contact force on candidate (lambda e / h)
    active: np.ndarray  # (B, nc * n_d)


def _validated_inputs(bs: BatchState, U, external_wrench):
    B = len(bs)
    U = np.ascontiguousarray(np.asarray(U, dtype=np.float64).reshape(B, 3))
    if not np.all(np.isfinite(U)):
        raise DynamicsError("command contains non-finite values")
    if external_wrench is None:
        wrench = np.zeros((B, 6))
    else:
        wrench = np.ascontiguousarray(
            np.broadcast_to(
                np.asarray(external_wrench, dtype=np.float64).reshape(-1, 6), (B, 6)
            )
        )
    return U, wrench


def _step_batch_numpy(cand, bs, U, params, wrench):
    B = len(bs)
    h = params.h
    mass = params.mass_vector()
    minv = 1.0 / mass

    tau = np.zeros((B, 9))
    tau[:, 2] = -params.m * params.gravity
    tau[:, 6:9] = params.robot_gain * U
    tau[:, 0:6] += wrench

    gaps, points, normals = cand.kinematics(bs)
    J, phi, dirs, active = cand.facets(bs, gaps, points, normals)
    vfree = h * tau * minv[None]

    lam, v = _pgs_numpy(
        J, phi, active, minv, vfree, params.cone_gain, h,
        params.pgs_max_sweeps, params.pgs_tol,
    )

    new = BatchState(
        bs.p + h * v[:, 0:3],
        quat_normalize(quat_mul(quat_from_rotvec(h * v[:, 3:6]), bs.q)),
        bs.ee + h * v[:, 6:9],
    )
    n_d = params.n_d
    forces = (
        np.einsum(
            "bnd,bndk->bnk",
            lam.reshape(B, cand.n_cand, n_d),
            dirs.reshape(B, cand.n_cand, n_d, 3),
        )
        / h
    )
    return new, StepDiagnostics(gaps=gaps, lam=lam, forces=forces, active=active)


def step_batch(
    cand: CandidateSystem,
    bs: BatchState,
    U: np.ndarray,
    params: DynamicsParams,
    external_wrench: np.ndarray | None = None,
) -> tuple[BatchState, StepDiagnostics]:
    """Advance a batch of independent systems one step under commands U (B, 3)."""
    U, wrench = _validated_inputs(bs, U, external_wrench)
    if not _HAVE_NUMBA:
        return _step_batch_numpy(cand, bs, U, params, wrench)
    B = len(bs)
    n_d = params.n_d
    gaps = np.empty((B, cand.n_cand))
    lam = np.empty((B, cand.n_cand * n_d))
    forces = np.zeros((B, cand.n_cand, 3))
    p = bs.p.copy()
    q = bs.q.copy()
    ee = bs.ee.copy()
    _kernels.step_kernel(
        p, q, ee, U, wrench,
        cand.centers, cand.halfs, cand.corners_obj,
        cand.plane_normals, cand.plane_offsets,
        params.mass_vector(), params.h, params.mu, n_d,
        params.max_gap, params.ee_window, params.ee_radius, params.gravity,
        params.robot_gain, params.cone_gain,
        params.pgs_max_sweeps, params.pgs_tol,
        gaps, lam, forces,
    )
    active = np.repeat(gaps <= cand.windows[None, :], n_d, axis=1)
    return BatchState(p, q, ee), StepDiagnostics(gaps=gaps, lam=lam, forces=forces, active=active)


def rollout_costs_batch(
    cand: CandidateSystem,
    bs: BatchState,
    seqs: np.ndarray,
    w_c: float,
    point_obj: np.ndarray,
    w_pos: np.ndarray,
    w_ori: np.ndarray,
    target_p: np.ndarray,
    target_q: np.ndarray,
    params: DynamicsParams,
) -> np.ndarray:
    """Summed running + terminal cost per batch row under nominal dynamics.

    seqs is (B, H, 3); per-row condition arrays broadcast the MPC objective.
    The input batch state is left untouched.
    """
    B = len(bs)
    seqs = np.ascontiguousarray(np.asarray(seqs, dtype=np.float64).reshape(B, -1, 3))
    if _HAVE_NUMBA:
        costs = np.empty(B)
        _kernels.rollout_kernel(
            bs.p, bs.q, bs.ee, seqs,
            float(w_c),
            np.ascontiguousarray(point_obj),
            np.ascontiguousarray(np.asarray(w_pos, dtype=np.float64)),
            np.ascontiguousarray(np.asarray(w_ori, dtype=np.float64)),
            np.ascontiguousarray(target_p),
            np.ascontiguousarray(target_q),
            cand.centers, cand.halfs, cand.corners_obj,
            cand.plane_normals, cand.plane_offsets,
            params.mass_vector(), params.h, params.mu, params.n_d,
            params.max_gap, params.ee_window, params.ee_radius, params.gravity,
            params.robot_gain, params.cone_gain,
            params.pgs_max_sweeps, params.pgs_tol,
            costs,
        )
        return costs
    cur = bs.copy()
    costs = np.zeros(B)
    for t in range(seqs.shape[1]):
        target = quat_rotate(cur.q, point_obj) + cur.p
        d = cur.ee - target
        costs += w_c * np.sum(d * d, axis=-1)
        cur, _ = _step_batch_numpy(cand, cur, seqs[:, t], params, np.zeros((B, 6)))
    dp = cur.p - target_p
    dot = np.sum(cur.q * target_q, axis=-1)
    costs += w_pos * np.sum(dp * dp, axis=-1) + w_ori * (1.0 - dot * dot)
    return costs


# --- single-state API -------------------------------------------------------


def detect_contacts(
    state: SystemState,
    obj: ObjectModel,
    env: EnvGeometry = DEFAULT_ENV,
    params: DynamicsParams = DynamicsParams(),
) -> list[Contact]:
    """Active contact candidates; ee contacts first, then plane corners."""
    cand = CandidateSystem(obj, env, params)
    bs = BatchState.from_state(state)
    gaps, points, normals = cand.kinematics(bs)
    out = []
    for c in range(cand.n_cand):
        if gaps[0, c] <= cand.windows[c]:
            n = normals[0, c]
            t1, t2 = _tangent_basis(n[None])
            out.append(
                Contact(
                    body_pair=cand.pair_labels[c],
                    point=points[0, c].copy(),
                    normal=n.copy(),
                    gap=float(gaps[0, c]),
                    tangent1=t1[0],
                    tangent2=t2[0],
                )
            )
    return out


def build_facets(
    contacts: list[Contact],
    state: SystemState,
    obj: ObjectModel,
    params: DynamicsParams,
) -> FacetSystem:
    """Dual-cone facet rows for an explicit contact list (n_d per contact)."""
    n_d = params.n_d
    mu = params.mu
    scale = 1.0 / np.sqrt(1.0 + mu * mu)
    rows, phis, dirs = [], [], []
    p_obj = state.object_pose.position
    for contact in contacts:
        n = contact.normal
        if np.linalg.norm(n) < 1e-12:
            raise DynamicsError("degenerate contact normal")
        angles = 2.0 * np.pi * np.arange(n_d) / n_d
        r = contact.point - p_obj
        is_ee = contact.body_pair == "ee-object"
        for a in angles:
            t = np.cos(a) * contact.tangent1 + np.sin(a) * contact.tangent2
            e = (n + mu * t) * scale
            row = np.zeros(9)
            sgn = -1.0 if is_ee else 1.0
            row[0:3] = sgn * e
            row[3:6] = sgn * np.cross(r, e)
            if is_ee:
                row[6:9] = e
            rows.append(row)
            phis.append(contact.gap * float(n @ e))
            dirs.append(e)
    if rows:
        return FacetSystem(np.stack(rows), np.array(phis), np.stack(dirs))
    return FacetSystem(np.zeros((0, 9)), np.zeros(0), np.zeros((0, 3)))


def comfree_step(
    state: SystemState,
    u: np.ndarray,
    params: DynamicsParams,
    obj: ObjectModel,
    env: EnvGeometry = DEFAULT_ENV,
    external_wrench: np.ndarray | None = None,
):
    """One quasi-dynamic step. Returns (next_state, facet impulses, contact forces).

    Impulses and per-contact forces are reported for the active contacts in
    detect_contacts order.
    """
    u = np.asarray(u, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(u)):
        raise DynamicsError("command contains non-finite values")
    cand = CandidateSystem(obj, env, params)
    bs = BatchState.from_state(state)
    wrench = None if external_wrench is None else np.asarray(external_wrench).reshape(1, 6)
    new, diag = step_batch(cand, bs, u[None], params, wrench)
    n_d = params.n_d
    active_cand = diag.gaps[0] <= cand.windows
    lam = diag.lam[0].reshape(cand.n_cand, n_d)[active_cand].reshape(-1)
    forces = diag.forces[0][active_cand]
    return new.state(0), lam, forces
