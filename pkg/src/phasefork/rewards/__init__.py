"""Reward hypotheses: expressions plus scale handling plus shaping wrappers.

A RewardHypothesis is an expression over a task's features with a scale
transform.  compile_for(env) lowers it to a backend-ready CompiledReward with
fresh transform state, so concurrent training runs never share mutable
state.  PotentialShaped wraps a hypothesis with gamma * phi(s') - phi(s)
where phi is a frozen value-net snapshot; the shaping term is added after
the base hypothesis' transform.
"""

from __future__ import annotations

import math
from array import array
from dataclasses import dataclass

from .._backend import pyref
from ..errors import ValidationError
from ..rng import hash_tag, derive
from . import expr as ex

CALIBRATION_EPISODES = 20


@dataclass(frozen=True)
class Identity:
    kind: str = "identity"


@dataclass(frozen=True)
class RunningNorm:
    """Online standardization (Welford); emits 0 until two samples are seen."""

    kind: str = "running_norm"


@dataclass(frozen=True)
class Matched:
    """Affine map calibrated so a uniform-random rollout trace hits the
    target moments.  Calibration is part of compile_for and is deterministic
    in the calibration seed."""

    target_mean: float
    target_std: float
    kind: str = "matched"


Transform = Identity | RunningNorm | Matched


@dataclass(frozen=True)
class RewardHypothesis:
    hid: str
    expression: ex.Expr
    transform: Transform = Identity()

    def source(self) -> str:
        return ex.show(self.expression)


@dataclass(frozen=True)
class PotentialShaped:
    """Potential-based shaping on top of a base hypothesis.

    potential holds a frozen value-net parameter snapshot (same architecture
    as the trainer's critic); gamma must match the discount used in training
    for the telescoping property to hold.
    """

    hid: str
    base: RewardHypothesis
    potential: array
    gamma: float


@dataclass(frozen=True)
class Interpolated:
    """Linear blend from h_from to h_to over updates [t_start, t_end].

    Only identity-transform endpoints are supported; stateful transforms do
    not compose with a per-step blend in a well-defined order.
    """

    hid: str
    h_from: RewardHypothesis
    h_to: RewardHypothesis
    t_start: int
    t_end: int


@dataclass(frozen=True)
class ScheduledReward:
    """Piecewise reward schedule: (start_update, hypothesis) stages.

    Stages must start at 0 and be strictly increasing.  The active stage at
    update t is the last stage with start <= t.
    """

    stages: tuple

    def __post_init__(self):
        if not self.stages:
            raise ValidationError("schedule needs at least one stage")
        starts = [s for s, _h in self.stages]
        if starts[0] != 0:
            raise ValidationError("first schedule stage must start at update 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValidationError("schedule stage starts must strictly increase")

    def active_at(self, t: int):
        cur = self.stages[0][1]
        for start, h in self.stages:
            if start <= t:
                cur = h
            else:
                break
        return cur

    def segments(self, budget: int):
        """[(start, end, hypothesis)] covering [0, budget)."""
        out = []
        for i, (start, h) in enumerate(self.stages):
            if start >= budget:
                break
            end = budget
            if i + 1 < len(self.stages):
                end = min(budget, self.stages[i + 1][0])
            out.append((start, end, h))
        return out


@dataclass
class CompiledReward:
    """Backend-ready reward: programs, blend window, transform, potential."""

    ops1: array
    consts1: array
    ops2: array
    consts2: array
    blend: array
    scale_mode: int
    scale_state: array
    potential: array
    pot_gamma: float
    label: str

    def transform_value(self, x: float) -> float:
        """Apply this instance's transform to one raw value (mutates state)."""
        return pyref.transform_apply(self.scale_mode, self.scale_state, x)


_EMPTY_Q = array("q", [])
_EMPTY_D = array("d", [])


def _fresh_scale_state() -> array:
    return array("d", [0.0, 0.0, 0.0, 1.0, 0.0])


def _calibrate(env, program: ex.Program, target_mean: float, target_std: float,
               seed_key: int):
    horizon = env.spec.horizon
    n = CALIBRATION_EPISODES
    out = pyref.make_f64(n * horizon)
    # episodes can finish early, so only a prefix of out is meaningful
    nw = pyref.random_rollout_rewards(
        env.task_id, horizon, env.params, program.ops, program.consts,
        n, seed_key, out,
    )
    total = 0.0
    for i in range(nw):
        total += out[i]
    mean = total / nw
    acc = 0.0
    for i in range(nw):
        d = out[i] - mean
        acc += d * d
    var = acc / nw
    scale = target_std / math.sqrt(var + 1e-12)
    shift = target_mean - mean * scale
    return scale, shift


def compile_for(hyp, env, calibration_seed: int = 0) -> CompiledReward:
    """Lower any hypothesis flavor for a given env; state is always fresh."""
    if isinstance(hyp, RewardHypothesis):
        prog = ex.compile_expr(hyp.expression, env.spec.feature_names)
        state = _fresh_scale_state()
        tr = hyp.transform
        if isinstance(tr, Identity):
            mode = pyref.SCALE_IDENTITY
        elif isinstance(tr, RunningNorm):
            mode = pyref.SCALE_RUNNING
        elif isinstance(tr, Matched):
            mode = pyref.SCALE_AFFINE
            cal_key = derive(calibration_seed, hash_tag("matched:" + hyp.hid))
            scale, shift = _calibrate(env, prog, tr.target_mean, tr.target_std, cal_key)
            state[3] = scale
            state[4] = shift
        else:
            raise ValidationError("unknown transform %r" % (tr,))
        return CompiledReward(
            prog.ops, prog.consts, _EMPTY_Q, _EMPTY_D,
            array("d", [0.0, 0.0]), mode, state, _EMPTY_D, 0.0, hyp.hid,
        )
    if isinstance(hyp, PotentialShaped):
        base = compile_for(hyp.base, env, calibration_seed)
        base.potential = array("d", hyp.potential)
        base.pot_gamma = hyp.gamma
        base.label = hyp.hid
        return base
    if isinstance(hyp, Interpolated):
        if not isinstance(hyp.h_from.transform, Identity) or not isinstance(
            hyp.h_to.transform, Identity
        ):
            raise ValidationError(
                "interpolation endpoints must use identity transforms"
            )
        p1 = ex.compile_expr(hyp.h_from.expression, env.spec.feature_names)
        p2 = ex.compile_expr(hyp.h_to.expression, env.spec.feature_names)
        return CompiledReward(
            p1.ops, p1.consts, p2.ops, p2.consts,
            array("d", [float(hyp.t_start), float(hyp.t_end)]),
            pyref.SCALE_IDENTITY, _fresh_scale_state(), _EMPTY_D, 0.0, hyp.hid,
        )
    raise ValidationError("cannot compile reward of type %r" % type(hyp).__name__)


def eval_reward(hyp, env, features, calibration_seed: int = 0) -> float:
    """One-off evaluation on a feature dict or vector (testing/tooling path).

    Stateful transforms get fresh state here, so this matches the first
    in-loop emission only; loops should compile once and reuse.
    """
    comp = compile_for(hyp, env, calibration_seed)
    if isinstance(features, dict):
        vec = [features[n] for n in env.spec.feature_names]
    else:
        vec = list(features)
    raw = pyref.eval_program(comp.ops1, comp.consts1, vec)
    return comp.transform_value(raw)


def pbrs_wrap(hid: str, base: RewardHypothesis, potential_params,
              gamma: float) -> PotentialShaped:
    if not 0.0 < gamma < 1.0:
        raise ValidationError("gamma must be in (0, 1)")
    return PotentialShaped(hid, base, array("d", potential_params), gamma)


# ---------------------------------------------------------------------------
# builtin hypothesis families


def _h(hid: str, src: str) -> RewardHypothesis:
    return RewardHypothesis(hid, ex.parse(src))


def builtin_family(env_name: str) -> dict:
    """Candidate hypotheses shipped for each task, keyed by id."""
    if env_name == "key_door_sparse":
        return {
            # staged shaping over the positional features.  Each stage mixes
            # the Chebyshev distance to its target corner with a small
            # Manhattan term, plus a pull toward the main diagonal (both
            # targets sit on it).  Built so the best action is a linear
            # function of (row, col) with no wall-cell exceptions: that is
            # the shape a small net's greedy argmax can hold reliably, which
            # is what fork scoring and competence read out.
            # every level is <= 0 (key-stage levels sit below carry-stage
            # levels) so that with door-open termination the return is
            # maximized by picking up and finishing as fast as possible;
            # positive levels would pay the policy to loiter
            # weights: Manhattan (0.15) must stay above the diagonal pull
            # (0.1), or the first step away from a corner scores negative and
            # the policy camps there
            "kd_early_dense": _h(
                "kd_early_dense",
                "(1.0 - has_key)"
                " * (0.0 - 0.7 - 0.35 * max(row, col) - 0.15 * (row + col))"
                " + has_key"
                " * (0.0 - 0.35 * max(1.0 - row, 1.0 - col)"
                "    - 0.15 * ((1.0 - row) + (1.0 - col)))"
                " - 0.1 * abs(row - col)",
            ),
            "kd_success": _h("kd_success", "success"),
            "kd_door_dense": _h("kd_door_dense", "dist_door"),
        }
    if env_name == "line_balance_dense":
        return {
            "lb_center_damped": _h(
                "lb_center_damped", "dist_center - 0.1 * abs(vel)"
            ),
            "lb_center_overdamped": _h(
                "lb_center_overdamped", "dist_center - 0.5 * abs(vel)"
            ),
            "lb_center_only": _h("lb_center_only", "dist_center"),
        }
    raise ValidationError("no builtin family for task %r" % env_name)


def dense_bootstrap_id(env_name: str) -> str:
    """The family member used as the conservative fallback's first stage."""
    if env_name == "key_door_sparse":
        return "kd_early_dense"
    if env_name == "line_balance_dense":
        return "lb_center_damped"
    raise ValidationError("no builtin family for task %r" % env_name)
