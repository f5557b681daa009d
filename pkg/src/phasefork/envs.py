"""Desk-scale benchmark tasks.

Two tasks, both deterministic given the episode seed:

key_door_sparse
    8x8 grid, four movement actions.  The key sits at (0, 0), the door at
    (7, 7); corner targets keep the Manhattan-distance features monotone
    along optimal routes.  Walking onto the key cell picks the key up, and
    the door opens on arrival once the key is held.  Flags persist, and an
    open door ends the episode: there is no post-goal phase, so training
    batches never fill up with steps where every action is equivalent.
    Note d_key + d_door is constant on the full grid, so the two distance
    features are affinely dependent; row and col (normalized to [0, 1]) are
    exposed as well, since with distances alone no memoryless deterministic
    policy can steer toward a corner, and evaluation here is greedy by
    contract.

line_balance_dense
    One-dimensional point mass pushed by a three-way force.  Success on a
    step means |pos| <= band.  Episode success is the fraction of in-band
    steps, so it is dense by construction.

The transition arithmetic lives in the numeric backend so training rollouts
and this module can never drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import _backend
from ._backend import pyref
from .errors import ValidationError
from .rng import Stream, derive, hash_tag

KEY_DOOR = "key_door_sparse"
LINE_BALANCE = "line_balance_dense"

_TASK_IDS = {KEY_DOOR: pyref.TASK_KEY_DOOR, LINE_BALANCE: pyref.TASK_LINE_BALANCE}

_FEATURES = {
    KEY_DOOR: ("dist_key", "dist_door", "has_key", "door_open", "success",
               "row", "col", "carry_dist_door"),
    LINE_BALANCE: ("pos", "vel", "dist_center", "success"),
}

# key_door horizon stays well under the point where random walks start to
# stumble into key-then-door by luck (rate must sit below 0.02)
_DEFAULT_HORIZON = {KEY_DOOR: 70, LINE_BALANCE: 100}
_DEFAULT_GAMMA = 0.98


@dataclass(frozen=True)
class EnvSpec:
    """Static description of a task instance."""

    name: str
    horizon: int
    gamma: float = _DEFAULT_GAMMA
    feature_names: tuple = ()
    action_count: int = 0

    def obs_dim(self) -> int:
        return len(self.feature_names)


@dataclass
class Transition:
    obs: list
    action: int
    next_obs: list
    features: dict
    success_flag: float


@dataclass
class EpisodeTrace:
    """Per-step record of one episode plus the derived success counters."""

    transitions: list = field(default_factory=list)
    consec: list = field(default_factory=list)

    def append(self, tr: Transition):
        run = self.consec[-1] if self.consec else 0
        self.consec.append(run + 1 if tr.success_flag > 0.5 else 0)
        self.transitions.append(tr)

    def consec_max_norm(self, horizon: int) -> float:
        return (max(self.consec) if self.consec else 0) / float(horizon)


class Env:
    """A task instance bound to the active numeric backend."""

    def __init__(self, spec: EnvSpec, params, task_id: int):
        self.spec = spec
        self.params = params
        self.task_id = task_id
        self._be = _backend.active

    def reset(self, seed_key: int):
        state = self._be.env_reset(self.task_id, self.params, seed_key)
        return state

    def observe(self, state) -> list:
        return list(self._be.env_obs(self.task_id, self.params, state))

    def step(self, state, action: int):
        """One transition.  Returns (new_state, Transition)."""
        if not 0 <= action < self.spec.action_count:
            raise ValidationError(
                "action %r out of range for %s" % (action, self.spec.name)
            )
        obs = self.observe(state)
        new_state, flag = self._be.env_step(self.task_id, self.params, state, action)
        nobs = self.observe(new_state)
        feats = dict(zip(self.spec.feature_names, nobs))
        return new_state, Transition(obs, action, nobs, feats, flag)

    def terminal(self, state) -> bool:
        """True once the task is finished before the horizon.

        Only key_door terminates early (open door); line_balance episodes
        always run the full horizon because the in-band flag can toggle.
        """
        return self.spec.name == KEY_DOOR and state[3] == 1.0


def make_env(name: str, horizon: int | None = None, gamma: float = _DEFAULT_GAMMA) -> Env:
    if name not in _TASK_IDS:
        raise ValidationError(
            "unknown task %r (have: %s)" % (name, ", ".join(sorted(_TASK_IDS)))
        )
    if horizon is None:
        horizon = _DEFAULT_HORIZON[name]
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    if not 0.0 < gamma < 1.0:
        raise ValidationError("gamma must be in (0, 1)")
    feats = _FEATURES[name]
    if name == KEY_DOOR:
        params = pyref.make_f64(6)
        params[0] = 8.0
        params[1] = 0.0
        params[2] = 0.0
        params[3] = 7.0
        params[4] = 7.0
        params[5] = 14.0
        action_count = pyref.KEY_DOOR_ACTIONS
    else:
        params = pyref.make_f64(7)
        params[0] = 0.1
        params[1] = 1.0
        params[2] = 0.1
        params[3] = 1.0
        params[4] = 1.0
        params[5] = 0.25
        params[6] = 0.1
        action_count = pyref.LINE_ACTIONS
    spec = EnvSpec(
        name=name,
        horizon=horizon,
        gamma=gamma,
        feature_names=feats,
        action_count=action_count,
    )
    return Env(spec, params, _TASK_IDS[name])


def episode_success(env: Env, trace: EpisodeTrace) -> float:
    """Scalar episode outcome.

    key_door: 1.0 iff the door ever opened (the flag persists, so this is the
    final flag).  line_balance: fraction of in-band steps.
    """
    if not trace.transitions:
        raise ValidationError("episode trace is empty")
    if env.spec.name == KEY_DOOR:
        return trace.transitions[-1].success_flag
    total = 0.0
    for tr in trace.transitions:
        total += tr.success_flag
    return total / env.spec.horizon


def rollout(env: Env, policy_fn, seed_key: int) -> EpisodeTrace:
    """Run one episode with policy_fn(obs, step_index) -> action."""
    state = env.reset(seed_key)
    trace = EpisodeTrace()
    obs = env.observe(state)
    for t in range(env.spec.horizon):
        a = policy_fn(obs, t)
        state, tr = env.step(state, a)
        trace.append(tr)
        obs = tr.next_obs
        if env.terminal(state):
            break
    return trace


def random_policy(env: Env, seed_key: int):
    """Uniform-random action policy on its own derived stream."""
    stream = Stream(derive(seed_key, hash_tag("random_policy")))
    na = env.spec.action_count

    def act(obs, t):
        return stream.next_below(na)

    return act


def scripted_key_door_policy(env: Env):
    """Memoryless optimal policy for key_door, reading only the feature vector.

    Walk up/left to the key corner, then down/right to the door.
    """
    names = env.spec.feature_names
    i_has = names.index("has_key")
    i_row = names.index("row")
    i_col = names.index("col")

    def act(obs, t):
        if obs[i_has] < 0.5:
            if obs[i_row] > 0.0:
                return 0
            return 2
        if obs[i_row] < 1.0:
            return 1
        return 3

    return act


def scripted_line_policy(env: Env):
    """Proportional-derivative controller that parks the mass in the band."""

    def act(obs, t):
        pos, vel = obs[0], obs[1]
        target = -pos * 2.0 - vel * 1.0
        if target > 0.05:
            return 2
        if target < -0.05:
            return 0
        return 1

    return act
