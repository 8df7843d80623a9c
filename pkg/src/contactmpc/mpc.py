"""Contact-implicit receding-horizon control conditioned on a contact intention.

The optimizer is predictive sampling: perturb the incumbent command sequence
with Gaussian noise, clamp to the control box, roll out through the contact
stepper, keep the cheapest sequence. The incumbent and the zero sequence are
always included, so the incumbent cost is non-increasing across iterations
and never worse than doing nothing. Only the first command of the plan is
executed; the shifted remainder warm-starts the next solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .assets import ObjectModel
from .dynamics import (
    DEFAULT_ENV,
    BatchState,
    CandidateSystem,
    DynamicsParams,
    EnvGeometry,
    SystemState,
    rollout_costs_batch,
    step_batch,
)
from .geometry import Pose, quat_rotate


class SolverFailure(RuntimeError):
    """Every sampled rollout produced a non-finite cost."""


class PresetError(ValueError):
    pass


@dataclass
class SamplerParams:
    num_samples: int = 64
    num_iterations: int = 2
    noise_scale: float | None = None  # default 0.5 * control_range_scale
    seed: int = 0


@dataclass
class MpcParams:
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    H: int = 3
    w_c: float = 0.2
    control_range_scale: float = 0.03
    T: int = 20  # control steps per decision
    sampler: SamplerParams = field(default_factory=SamplerParams)

    def noise_scale(self) -> float:
        if self.sampler.noise_scale is not None:
            return self.sampler.noise_scale
        return 0.5 * self.control_range_scale

    def validate(self):
        if self.H < 1 or self.control_range_scale <= 0:
            raise PresetError("H must be >= 1 and control_range_scale positive")
        if self.sampler.num_samples < 2:
            raise PresetError("sampler needs >= 2 samples (incumbent + zero sequence)")
        self.dynamics.validate()


@dataclass
class IntentionCondition:
    """MPC conditioning: object-frame contact point plus weighted pose subgoal."""

    contact_point_obj: np.ndarray
    w_pos: float
    w_ori: float
    target_pose: Pose

    def __post_init__(self):
        self.contact_point_obj = np.asarray(self.contact_point_obj, dtype=np.float64).reshape(3)


@dataclass
class Plan:
    u_sequence: np.ndarray  # (H, 3)
    predicted_cost: float
    predicted_states: list  # H + 1 SystemStates


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------


def running_cost(ee_pos, object_pose: Pose, intention: IntentionCondition, w_c: float) -> float:
    """Attraction of the end-effector to the world-frame contact point."""
    target = object_pose.transform(intention.contact_point_obj)
    d = np.asarray(ee_pos, dtype=np.float64) - target
    return float(w_c * (d @ d))


def terminal_cost(object_pose: Pose, intention: IntentionCondition) -> float:
    """Weighted squared position error plus quaternion alignment error."""
    dp = object_pose.position - intention.target_pose.position
    dot = float(object_pose.orientation @ intention.target_pose.orientation)
    return float(intention.w_pos * (dp @ dp) + intention.w_ori * (1.0 - dot * dot))


def _running_cost_batch(bs: BatchState, point_obj, w_c):
    target = quat_rotate(bs.q, point_obj) + bs.p
    d = bs.ee - target
    return w_c * np.sum(d * d, axis=-1)


def _terminal_cost_batch(bs: BatchState, w_pos, w_ori, target_p, target_q):
    dp = bs.p - target_p
    dot = np.sum(bs.q * target_q, axis=-1)
    return w_pos * np.sum(dp * dp, axis=-1) + w_ori * (1.0 - dot * dot)


def clamp_sequence(u_sequence: np.ndarray, scale: float) -> np.ndarray:
    return np.clip(u_sequence, -scale, scale)


def rollout_cost(
    state: SystemState,
    u_sequence: np.ndarray,
    intention: IntentionCondition,
    params: MpcParams,
    obj: ObjectModel,
    env: EnvGeometry = DEFAULT_ENV,
) -> float:
    """Total cost of one command sequence under the contact stepper."""
    u_sequence = clamp_sequence(
        np.asarray(u_sequence, dtype=np.float64).reshape(-1, 3), params.control_range_scale
    )
    if u_sequence.shape[0] != params.H:
        raise ValueError(f"sequence length {u_sequence.shape[0]} != horizon {params.H}")
    cand = CandidateSystem(obj, env, params.dynamics)
    bs = BatchState.from_state(state)
    total = 0.0
    for t in range(params.H):
        total += float(
            _running_cost_batch(bs, intention.contact_point_obj, params.w_c)[0]
        )
        bs, _ = step_batch(cand, bs, u_sequence[t][None], params.dynamics)
    total += float(
        _terminal_cost_batch(
            bs,
            intention.w_pos,
            intention.w_ori,
            intention.target_pose.position,
            intention.target_pose.orientation,
        )[0]
    )
    return total


# ---------------------------------------------------------------------------
# Batched predictive-sampling controller
# ---------------------------------------------------------------------------


class BatchedMpc:
    """Predictive-sampling MPC for a row of independent environments.

    Each row keeps its own warm-start incumbent and noise stream, so a
    one-row instance is bit-identical to the corresponding row of a wider
    batch with the same per-row seed.
    """

    def __init__(
        self,
        obj: ObjectModel,
        params: MpcParams,
        n_env: int,
        seeds,
        env: EnvGeometry = DEFAULT_ENV,
    ):
        params.validate()
        self.obj = obj
        self.params = params
        self.env = env
        self.n_env = n_env
        self.cand = CandidateSystem(obj, env, params.dynamics)
        self.rngs = [np.random.default_rng(int(s)) for s in np.atleast_1d(seeds)]
        if len(self.rngs) != n_env:
            raise ValueError("one seed per environment row required")
        self.incumbents = np.zeros((n_env, params.H, 3))
        self.failed = np.zeros(n_env, dtype=bool)

    def reset_row(self, row: int, seed: int):
        self.rngs[row] = np.random.default_rng(int(seed))
        self.incumbents[row] = 0.0

    def _rollout_costs(self, bs_flat: BatchState, seqs_flat, cond):
        point_obj, w_pos, w_ori, target_p, target_q = cond
        S = seqs_flat.shape[0] // self.n_env
        rep = lambda a: np.repeat(a, S, axis=0)
        pt, wp, wo, tp, tq = (rep(x) for x in (point_obj, w_pos, w_ori, target_p, target_q))
        return rollout_costs_batch(
            self.cand, bs_flat, seqs_flat, self.params.w_c, pt, wp, wo, tp, tq,
            self.params.dynamics,
        )

    def solve_batch(self, bstate: BatchState, cond) -> np.ndarray:
        """Run the sampler for every row; returns the incumbents (n_env, H, 3)."""
        p = self.params
        S = p.sampler.num_samples
        H = p.H
        scale = p.control_range_scale
        sigma = p.noise_scale()
        self.failed[:] = False
        for _ in range(p.sampler.num_iterations):
            noise = np.stack([rng.normal(0.0, sigma, size=(S, H, 3)) for rng in self.rngs])
            noise[:, 0] = 0.0  # keep the incumbent
            noise[:, 1] = -self.incumbents[:, None]  # keep the zero sequence
            seqs = np.clip(self.incumbents[:, None] + noise, -scale, scale)
            seqs_flat = seqs.reshape(self.n_env * S, H, 3)
            bs_flat = BatchState(
                np.repeat(bstate.p, S, axis=0),
                np.repeat(bstate.q, S, axis=0),
                np.repeat(bstate.ee, S, axis=0),
            )
            costs = self._rollout_costs(bs_flat, seqs_flat, cond).reshape(self.n_env, S)
            costs = np.where(np.isfinite(costs), costs, np.inf)
            bad = np.all(np.isinf(costs), axis=1)
            best = np.argmin(costs, axis=1)  # ties: lowest sample index
            rows = np.arange(self.n_env)
            self.incumbents = np.where(
                bad[:, None, None], np.zeros_like(self.incumbents), seqs[rows, best]
            )
            self.failed |= bad
        return self.incumbents.copy()

    def step_batch_plan(self, bstate: BatchState, cond):
        """Solve, return first actions (n_env, 3) and shift the warm start."""
        plans = self.solve_batch(bstate, cond)
        u0 = plans[:, 0].copy()
        u0[self.failed] = 0.0
        self.incumbents = np.concatenate(
            [plans[:, 1:], np.zeros((self.n_env, 1, 3))], axis=1
        )
        return u0, plans


def _condition_arrays(intention: IntentionCondition, n_env: int):
    tile = lambda a: np.repeat(np.asarray(a, dtype=np.float64)[None], n_env, axis=0)
    return (
        tile(intention.contact_point_obj),
        np.full(n_env, float(intention.w_pos)),
        np.full(n_env, float(intention.w_ori)),
        tile(intention.target_pose.position),
        tile(intention.target_pose.orientation),
    )


class MpcController:
    """Single-environment facade over the batched sampler (spec-facing API)."""

    def __init__(
        self,
        obj: ObjectModel,
        params: MpcParams,
        env: EnvGeometry = DEFAULT_ENV,
        seed: int | None = None,
    ):
        s = params.sampler.seed if seed is None else seed
        self._batched = BatchedMpc(obj, params, 1, [s], env)
        self.params = params
        self.obj = obj
        self.env = env

    @property
    def incumbent(self) -> np.ndarray:
        return self._batched.incumbents[0].copy()

    def solve(self, state: SystemState, intention: IntentionCondition) -> Plan:
        bs = BatchState.from_state(state)
        cond = _condition_arrays(intention, 1)
        plans = self._batched.solve_batch(bs, cond)
        if self._batched.failed[0]:
            raise SolverFailure("all sampled rollouts were non-finite")
        seq = plans[0]
        # replay the winning sequence for the predicted states and cost
        states = [state.copy()]
        cur = BatchState.from_state(state)
        cost = 0.0
        for t in range(self.params.H):
            cost += float(
                _running_cost_batch(cur, intention.contact_point_obj, self.params.w_c)[0]
            )
            cur, _ = step_batch(self._batched.cand, cur, seq[t][None], self.params.dynamics)
            states.append(cur.state(0))
        cost += float(
            _terminal_cost_batch(
                cur,
                intention.w_pos,
                intention.w_ori,
                intention.target_pose.position,
                intention.target_pose.orientation,
            )[0]
        )
        return Plan(u_sequence=seq, predicted_cost=cost, predicted_states=states)

    def mpc_step(self, state: SystemState, intention: IntentionCondition):
        """Solve and return (first action, plan); zero action on solver failure."""
        try:
            plan = self.solve(state, intention)
        except SolverFailure:
            zero = Plan(
                np.zeros((self.params.H, 3)), math.inf, [state.copy()]
            )
            self._batched.incumbents[0] = 0.0
            return np.zeros(3), zero
        u0 = plan.u_sequence[0].copy()
        self._batched.incumbents[0] = np.concatenate(
            [plan.u_sequence[1:], np.zeros((1, 3))], axis=0
        )
        return u0, plan


# ---------------------------------------------------------------------------
# Preset files (keys mirror the task-parameter table)
# ---------------------------------------------------------------------------

_TABLE_KEYS = ("h", "K_r", "H", "w_c", "i", "m", "control_range_scale", "K", "mu", "T")


def mpc_params_from_dict(data: dict) -> MpcParams:
    missing = [k for k in _TABLE_KEYS if k not in data]
    if missing:
        raise PresetError(f"mpc preset missing keys: {missing}")
    dyn_extra = {
        k: data[k]
        for k in ("n_d", "max_gap", "ee_radius", "gravity", "pgs_max_sweeps", "pgs_tol")
        if k in data
    }
    dynamics = DynamicsParams(
        h=float(data["h"]),
        K_r=float(data["K_r"]),
        K=float(data["K"]),
        mu=float(data["mu"]),
        m=float(data["m"]),
        i=float(data["i"]),
        **dyn_extra,
    )
    sampler = SamplerParams(**data.get("sampler", {}))
    params = MpcParams(
        dynamics=dynamics,
        H=int(data["H"]),
        w_c=float(data["w_c"]),
        control_range_scale=float(data["control_range_scale"]),
        T=int(data["T"]),
        sampler=sampler,
    )
    params.validate()
    return params


def mpc_params_to_dict(params: MpcParams) -> dict:
    d = params.dynamics
    return {
        "h": d.h,
        "K_r": d.K_r,
        "H": params.H,
        "w_c": params.w_c,
        "i": d.i,
        "m": d.m,
        "control_range_scale": params.control_range_scale,
        "K": d.K,
        "mu": d.mu,
        "T": params.T,
        "sampler": {
            "num_samples": params.sampler.num_samples,
            "num_iterations": params.sampler.num_iterations,
            "noise_scale": params.sampler.noise_scale,
            "seed": params.sampler.seed,
        },
    }


def load_mpc_preset(name_or_path) -> MpcParams:
    path = Path(str(name_or_path))
    if not path.exists():
        candidate = resources.files("contactmpc") / "presets" / f"{name_or_path}.preset"
        if Path(str(candidate)).exists():
            path = Path(str(candidate))
        else:
            raise PresetError(f"mpc preset {name_or_path!r} not found")
    with open(path, "r", encoding="utf-8") as f:
        return mpc_params_from_dict(yaml.safe_load(f))
