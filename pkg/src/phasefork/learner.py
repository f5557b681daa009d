"""Minimal deterministic actor-critic learner.

Small MLPs (two tanh hidden layers), clipped-surrogate policy updates with
GAE, Adam, a fixed number of episodes per update, and greedy evaluation.
Every stochastic draw comes from the checkpoint's counter-based streams, so
a (checkpoint, reward, update-count) triple fully determines the result down
to the bit, on either backend.

Checkpoints are value objects: train/clone/reset never mutate their inputs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from array import array
from dataclasses import dataclass, field, replace

from . import _backend
from ._backend import pyref
from .envs import Env
from .errors import CheckpointFormatError, ValidationError
from .rng import Stream, derive, hash_tag

HIDDEN1 = 32
HIDDEN2 = 32

_MAGIC = b"PFCK"
_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    episodes_per_update: int = 8
    epochs: int = 2
    adv_norm: bool = True

    def pack(self, gamma: float) -> array:
        return array("d", [
            gamma, self.lam, self.clip, self.lr, self.beta1, self.beta2,
            self.adam_eps, self.ent_coef, self.vf_coef,
            float(self.episodes_per_update), float(self.epochs),
            1.0 if self.adv_norm else 0.0,
        ])


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 16
    seed_root: int = 0

    def episode_keys(self) -> array:
        keys = array("Q", bytes(8 * self.n_episodes))
        for i in range(self.n_episodes):
            keys[i] = derive(self.seed_root, i)
        return keys

    def seed_fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in self.episode_keys():
            h.update(struct.pack("<Q", k))
        return h.hexdigest()[:16]


@dataclass
class Checkpoint:
    env_name: str
    horizon: int
    gamma: float
    dims: tuple  # (obs_dim, hidden1, hidden2, n_actions)
    step: int  # completed updates
    policy: array
    critic: array
    pm: array
    pv: array
    cm: array
    cv: array
    opt: array  # [adam_t, beta1_pow, beta2_pow]
    rng: array  # [master_key, action_counter, episode_counter]
    diverged: bool = False
    diverged_at: int = -1


@dataclass
class TrainLog:
    reward_mean: list = field(default_factory=list)
    critic_absmax: list = field(default_factory=list)
    diverged: bool = False
    diverged_at: int = -1


@dataclass
class EvalResult:
    success: list
    consec: list

    @property
    def success_mean(self) -> float:
        return sum(self.success) / len(self.success)

    @property
    def consec_mean(self) -> float:
        return sum(self.consec) / len(self.consec)


def _dims_for(env: Env) -> tuple:
    return (env.spec.obs_dim(), HIDDEN1, HIDDEN2, env.spec.action_count)


def _xavier_fill(params, d_in, h1, h2, d_out, stream: Stream, out_scale: float):
    """Uniform Xavier weights drawn in storage order; biases stay zero."""
    import math

    def fill(off, rows, cols, scale):
        limit = math.sqrt(6.0 / (rows + cols)) * scale
        for i in range(rows * cols):
            params[off + i] = (2.0 * stream.next_float() - 1.0) * limit

    fill(0, h1, d_in, 1.0)
    off = h1 * d_in + h1
    fill(off, h2, h1, 1.0)
    off += h2 * h1 + h2
    fill(off, d_out, h2, out_scale)


def init_checkpoint(env: Env, seed: int) -> Checkpoint:
    """Fresh learner state; the policy head starts near-uniform."""
    d, h1, h2, na = _dims_for(env)
    np_ = pyref.net_param_count(d, h1, h2, na)
    nc = pyref.net_param_count(d, h1, h2, 1)
    policy = pyref.make_f64(np_)
    critic = pyref.make_f64(nc)
    master = derive(seed, hash_tag("learner"))
    _xavier_fill(policy, d, h1, h2, na, Stream(derive(master, hash_tag("policy_init"))), 0.01)
    _xavier_fill(critic, d, h1, h2, 1, Stream(derive(master, hash_tag("critic_init"))), 1.0)
    return Checkpoint(
        env_name=env.spec.name,
        horizon=env.spec.horizon,
        gamma=env.spec.gamma,
        dims=(d, h1, h2, na),
        step=0,
        policy=policy,
        critic=critic,
        pm=pyref.make_f64(np_),
        pv=pyref.make_f64(np_),
        cm=pyref.make_f64(nc),
        cv=pyref.make_f64(nc),
        opt=array("d", [0.0, 1.0, 1.0]),
        rng=array("Q", [derive(master, hash_tag("run")), 0, 0]),
    )


def _check_binding(ck: Checkpoint, env: Env):
    if (ck.env_name, ck.horizon, ck.dims) != (
        env.spec.name, env.spec.horizon, _dims_for(env)
    ):
        raise ValidationError(
            "checkpoint bound to %s(horizon=%d, dims=%s), got %s(horizon=%d, dims=%s)"
            % (ck.env_name, ck.horizon, ck.dims,
               env.spec.name, env.spec.horizon, _dims_for(env))
        )


def clone_checkpoint(ck: Checkpoint, split_tag: int = 0) -> Checkpoint:
    """Pure copy with a split RNG stream.

    Identical (checkpoint, split_tag) pairs give identical clones; distinct
    tags give decorrelated streams.  The parent is never touched.
    """
    child_key = derive(ck.rng[0], split_tag & pyref.MASK64)
    return Checkpoint(
        env_name=ck.env_name,
        horizon=ck.horizon,
        gamma=ck.gamma,
        dims=ck.dims,
        step=ck.step,
        policy=array("d", ck.policy),
        critic=array("d", ck.critic),
        pm=array("d", ck.pm),
        pv=array("d", ck.pv),
        cm=array("d", ck.cm),
        cv=array("d", ck.cv),
        opt=array("d", ck.opt),
        rng=array("Q", [child_key, 0, 0]),
        diverged=ck.diverged,
        diverged_at=ck.diverged_at,
    )


def reset_critic(ck: Checkpoint, seed: int) -> Checkpoint:
    """Reinitialize the value net and its optimizer state, keep the actor."""
    d, h1, h2, _na = ck.dims
    nc = pyref.net_param_count(d, h1, h2, 1)
    critic = pyref.make_f64(nc)
    _xavier_fill(critic, d, h1, h2, 1,
                 Stream(derive(seed, hash_tag("critic_reset"))), 1.0)
    return replace(
        ck,
        critic=critic,
        cm=pyref.make_f64(nc),
        cv=pyref.make_f64(nc),
        policy=array("d", ck.policy),
        pm=array("d", ck.pm),
        pv=array("d", ck.pv),
        opt=array("d", ck.opt),
        rng=array("Q", ck.rng),
    )


def train(ck: Checkpoint, env: Env, compiled_reward, n_updates: int,
          cfg: TrainConfig = TrainConfig()) -> tuple:
    """Run n_updates; returns (new_checkpoint, TrainLog).

    On divergence the returned checkpoint is the state after the last
    completed update with the diverged flag set; the log still covers the
    failing update's rollout.
    """
    _check_binding(ck, env)
    if n_updates < 0:
        raise ValidationError("n_updates must be >= 0")
    new = clone_checkpoint(ck, 0)
    # a plain continuation, not a fork: keep the parent's stream position
    new.rng = array("Q", ck.rng)
    out_r = pyref.make_f64(max(n_updates, 1))
    out_v = pyref.make_f64(max(n_updates, 1))
    be = _backend.active
    rc = be.train_updates(
        new.policy, new.critic, new.pm, new.pv, new.cm, new.cv, new.opt,
        array("q", new.dims), env.task_id, env.spec.horizon, env.params,
        new.rng,
        compiled_reward.ops1, compiled_reward.consts1,
        compiled_reward.ops2, compiled_reward.consts2,
        compiled_reward.blend, compiled_reward.scale_mode,
        compiled_reward.scale_state, compiled_reward.potential,
        compiled_reward.pot_gamma,
        cfg.pack(env.spec.gamma), n_updates, ck.step,
        out_r, out_v,
    )
    log = TrainLog()
    done = n_updates if rc < 0 else rc + 1
    log.reward_mean = [out_r[i] for i in range(done)]
    log.critic_absmax = [out_v[i] for i in range(done)]
    if rc >= 0:
        log.diverged = True
        log.diverged_at = ck.step + rc
        new.diverged = True
        new.diverged_at = ck.step + rc
        new.step = ck.step + rc
    else:
        new.step = ck.step + n_updates
    return new, log


def evaluate(ck: Checkpoint, env: Env, ecfg: EvalConfig) -> EvalResult:
    """Greedy evaluation on the fixed seed set; no learner streams consumed."""
    _check_binding(ck, env)
    keys = ecfg.episode_keys()
    out_s = pyref.make_f64(ecfg.n_episodes)
    out_c = pyref.make_f64(ecfg.n_episodes)
    _backend.active.evaluate(
        ck.policy, array("q", ck.dims), env.task_id, env.spec.horizon,
        env.params, keys, out_s, out_c,
    )
    return EvalResult(list(out_s), list(out_c))


@dataclass(frozen=True)
class CompetenceProxy:
    """Mean greedy success on a pinned seed set, tagged with the set identity."""

    value: float
    n_episodes: int
    seed_fingerprint: str


def competence(ck: Checkpoint, env: Env, ecfg: EvalConfig) -> CompetenceProxy:
    res = evaluate(ck, env, ecfg)
    return CompetenceProxy(res.success_mean, ecfg.n_episodes, ecfg.seed_fingerprint())


def critic_value(ck: Checkpoint, obs) -> float:
    return pyref.critic_value(ck.critic, array("q", ck.dims), list(obs))


def policy_logits(ck: Checkpoint, obs) -> list:
    out = pyref.make_f64(ck.dims[3])
    pyref.policy_logits(ck.policy, array("q", ck.dims), list(obs), out)
    return list(out)


def critic_params_copy(ck: Checkpoint) -> array:
    return array("d", ck.critic)


# ---------------------------------------------------------------------------
# serialization: versioned length-prefixed sections, fixed little-endian


_S_META = 1
_S_ARRAYS = {
    2: "policy", 3: "critic", 4: "pm", 5: "pv", 6: "cm", 7: "cv", 8: "opt",
}
_S_RNG = 9


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    meta = {
        "env_name": ck.env_name,
        "horizon": ck.horizon,
        "gamma": ck.gamma,
        "dims": list(ck.dims),
        "step": ck.step,
        "diverged": ck.diverged,
        "diverged_at": ck.diverged_at,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [_MAGIC, struct.pack("<I", _VERSION)]

    def section(tag, payload):
        parts.append(struct.pack("<IQ", tag, len(payload)))
        parts.append(payload)

    section(_S_META, blob)
    for tag, name in sorted(_S_ARRAYS.items()):
        arr = getattr(ck, name)
        section(tag, struct.pack("<%dd" % len(arr), *arr))
    section(_S_RNG, struct.pack("<3Q", *ck.rng))
    return b"".join(parts)


def fingerprint(ck: Checkpoint) -> str:
    return hashlib.sha256(checkpoint_bytes(ck)).hexdigest()


def save_checkpoint(path, ck: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ck))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:4] != _MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != _VERSION:
        raise CheckpointFormatError("unsupported checkpoint version %d" % version)
    off = 8
    sections = {}
    while off < len(data):
        if off + 12 > len(data):
            raise CheckpointFormatError("truncated section header")
        tag, length = struct.unpack_from("<IQ", data, off)
        off += 12
        if off + length > len(data):
            raise CheckpointFormatError("truncated section payload (tag %d)" % tag)
        sections[tag] = data[off : off + length]
        off += length
    try:
        meta = json.loads(sections[_S_META].decode())
        fields = {}
        for tag, name in _S_ARRAYS.items():
            payload = sections[tag]
            fields[name] = array("d", struct.unpack("<%dd" % (len(payload) // 8), payload))
        rng = array("Q", struct.unpack("<3Q", sections[_S_RNG]))
    except (KeyError, struct.error) as exc:
        raise CheckpointFormatError("missing or malformed section: %s" % exc) from None
    ck = Checkpoint(
        env_name=meta["env_name"],
        horizon=meta["horizon"],
        gamma=meta["gamma"],
        dims=tuple(meta["dims"]),
        step=meta["step"],
        rng=rng,
        diverged=meta["diverged"],
        diverged_at=meta["diverged_at"],
        **fields,
    )
    d, h1, h2, na = ck.dims
    if len(ck.policy) != pyref.net_param_count(d, h1, h2, na) or len(
        ck.critic
    ) != pyref.net_param_count(d, h1, h2, 1):
        raise CheckpointFormatError("parameter sections do not match dims")
    return ck


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
