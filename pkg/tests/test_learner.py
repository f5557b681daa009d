"""Learner checkpoints: determinism, purity, cloning, serialization."""

import dataclasses
import random
from array import array

import pytest

from phasefork import envs, learner, rewards
from phasefork.errors import CheckpointFormatError, ValidationError
from phasefork.rewards import expr as ex


def _env(name="line_balance_dense", **kw):
    return envs.make_env(name, **kw)


def _reward(env, hid=None):
    fam = rewards.builtin_family(env.spec.name)
    return rewards.compile_for(fam[hid or sorted(fam)[0]], env, 99)


def _train(ck, env, comp, n, **cfg):
    return learner.train(ck, env, comp, n, learner.TrainConfig(**cfg))


# ---------------------------------------------------------------------------
# initialization


def test_init_deterministic():
    env = _env()
    a = learner.init_checkpoint(env, 123)
    b = learner.init_checkpoint(env, 123)
    c = learner.init_checkpoint(env, 124)
    assert learner.fingerprint(a) == learner.fingerprint(b)
    assert learner.fingerprint(a) != learner.fingerprint(c)


def test_init_policy_head_near_uniform():
    env = _env()
    ck = learner.init_checkpoint(env, 5)
    obs = env.observe(env.reset(7))
    logits = learner.policy_logits(ck, obs)
    assert len(logits) == env.spec.action_count
    assert max(abs(v) for v in logits) < 0.15


def test_init_binds_env_identity():
    env = _env("key_door_sparse")
    ck = learner.init_checkpoint(env, 5)
    assert ck.env_name == "key_door_sparse"
    assert ck.dims[0] == env.spec.obs_dim()
    assert ck.step == 0 and not ck.diverged


# ---------------------------------------------------------------------------
# training


def test_train_pure_and_deterministic():
    env = _env()
    comp = _reward(env)
    ck = learner.init_checkpoint(env, 9)
    before = learner.fingerprint(ck)
    a, loga = learner.train(ck, env, comp, 3)
    b, logb = learner.train(ck, env, comp, 3)
    assert learner.fingerprint(ck) == before  # parent untouched
    assert learner.fingerprint(a) == learner.fingerprint(b)
    assert a.step == 3
    assert loga.reward_mean == logb.reward_mean
    assert len(loga.reward_mean) == 3
    assert all(v == v for v in loga.reward_mean)


def test_train_zero_updates_is_identity():
    env = _env()
    ck = learner.init_checkpoint(env, 11)
    new, log = learner.train(ck, env, _reward(env), 0)
    assert learner.fingerprint(new) == learner.fingerprint(ck)
    assert log.reward_mean == [] and not log.diverged


def test_train_rejects_negative_count():
    env = _env()
    ck = learner.init_checkpoint(env, 1)
    with pytest.raises(ValidationError):
        learner.train(ck, env, _reward(env), -1)


def test_train_chain_matches_single_run():
    # stopping and resuming must not perturb the trajectory
    env = _env()
    ck = learner.init_checkpoint(env, 21)
    mid, _ = learner.train(ck, env, _reward(env), 2)
    resumed, _ = learner.train(mid, env, _reward(env), 3)
    straight, _ = learner.train(ck, env, _reward(env), 5)
    assert learner.fingerprint(resumed) == learner.fingerprint(straight)


def test_train_rejects_mismatched_env():
    kd = _env("key_door_sparse")
    lb = _env()
    ck = learner.init_checkpoint(kd, 3)
    with pytest.raises(ValidationError):
        learner.train(ck, lb, _reward(lb), 1)
    with pytest.raises(ValidationError):
        learner.train(ck, _env("key_door_sparse", horizon=77), _reward(kd), 1)


# ---------------------------------------------------------------------------
# cloning / critic reset


def test_clone_is_reproducible_and_tag_sensitive():
    env = _env()
    ck, _ = _train(learner.init_checkpoint(env, 2), env, _reward(env), 2)
    c1 = learner.clone_checkpoint(ck, 7)
    c2 = learner.clone_checkpoint(ck, 7)
    c3 = learner.clone_checkpoint(ck, 8)
    assert learner.fingerprint(c1) == learner.fingerprint(c2)
    assert learner.fingerprint(c1) != learner.fingerprint(c3)
    # params are carried over exactly; only the stream is re-keyed
    assert bytes(c3.policy) == bytes(ck.policy)
    assert bytes(c3.critic) == bytes(ck.critic)
    assert c3.step == ck.step
    assert list(c3.rng[1:]) == [0, 0]


def test_clones_decorrelate_training():
    env = _env()
    comp = _reward(env)
    base, _ = _train(learner.init_checkpoint(env, 2), env, comp, 1)
    fp0 = learner.fingerprint(base)
    a, _ = learner.train(learner.clone_checkpoint(base, 1), env, comp, 2)
    b, _ = learner.train(learner.clone_checkpoint(base, 2), env, comp, 2)
    assert learner.fingerprint(base) == fp0
    assert learner.fingerprint(a) != learner.fingerprint(b)


def test_reset_critic_keeps_actor():
    env = _env()
    ck, _ = _train(learner.init_checkpoint(env, 4), env, _reward(env), 2)
    r1 = learner.reset_critic(ck, 31)
    r2 = learner.reset_critic(ck, 31)
    assert learner.fingerprint(r1) == learner.fingerprint(r2)
    assert bytes(r1.policy) == bytes(ck.policy)
    assert bytes(r1.pm) == bytes(ck.pm)
    assert bytes(r1.critic) != bytes(ck.critic)
    assert max(r1.cm) == min(r1.cm) == 0.0
    assert max(r1.cv) == min(r1.cv) == 0.0


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_pure_pinned_and_bounded():
    env = _env()
    ck, _ = _train(learner.init_checkpoint(env, 6), env, _reward(env), 2)
    fp = learner.fingerprint(ck)
    ecfg = learner.EvalConfig(n_episodes=5, seed_root=77)
    r1 = learner.evaluate(ck, env, ecfg)
    r2 = learner.evaluate(ck, env, ecfg)
    assert learner.fingerprint(ck) == fp  # no streams consumed
    assert r1.success == r2.success and r1.consec == r2.consec
    assert len(r1.success) == 5
    assert all(0.0 <= s <= 1.0 for s in r1.success)
    assert all(0.0 <= c <= 1.0 for c in r1.consec)  # max run / horizon


def test_evaluate_single_episode():
    env = _env()
    ck = learner.init_checkpoint(env, 6)
    res = learner.evaluate(ck, env, learner.EvalConfig(n_episodes=1, seed_root=0))
    assert len(res.success) == 1
    assert res.success_mean == res.success[0]


def test_competence_proxy_tags_seed_set():
    env = _env()
    ck = learner.init_checkpoint(env, 6)
    e1 = learner.EvalConfig(4, 10)
    e2 = learner.EvalConfig(4, 11)
    c1 = learner.competence(ck, env, e1)
    assert c1.value == learner.evaluate(ck, env, e1).success_mean
    assert c1.n_episodes == 4
    assert c1.seed_fingerprint == e1.seed_fingerprint()
    assert c1.seed_fingerprint != learner.competence(ck, env, e2).seed_fingerprint


# ---------------------------------------------------------------------------
# divergence

_GAMMA_KD = 0.99


def _bomb_reward(env):
    # constant potential at the float ceiling: the shaping term stays finite
    # but the value targets overflow within one update
    d, h1, h2 = env.spec.obs_dim(), learner.HIDDEN1, learner.HIDDEN2
    from phasefork._backend import pyref

    pot = pyref.make_f64(pyref.net_param_count(d, h1, h2, 1))
    pot[len(pot) - 1] = 1e308
    base = rewards.builtin_family(env.spec.name)
    hyp = rewards.pbrs_wrap("bomb", base[sorted(base)[0]], pot, env.spec.gamma)
    return rewards.compile_for(hyp, env, 99)


def test_divergence_flagged_and_state_restored():
    env = _env()
    ck, _ = _train(learner.init_checkpoint(env, 13), env, _reward(env), 2)
    new, log = learner.train(ck, env, _bomb_reward(env), 4)
    assert log.diverged and new.diverged
    assert log.diverged_at == ck.step == new.diverged_at
    assert new.step == ck.step
    # parameters roll back to the last completed update
    assert bytes(new.policy) == bytes(ck.policy)
    assert bytes(new.critic) == bytes(ck.critic)
    assert not ck.diverged


def test_divergence_index_counts_from_checkpoint_step():
    env = _env()
    ck = learner.init_checkpoint(env, 13)
    new, log = learner.train(ck, env, _bomb_reward(env), 1)
    assert log.diverged_at == 0 and new.diverged_at == 0


# ---------------------------------------------------------------------------
# serialization


def test_checkpoint_roundtrip_bytes_and_file(tmp_path):
    env = _env("key_door_sparse")
    ck, _ = _train(learner.init_checkpoint(env, 17), env, _reward(env), 1)
    blob = learner.checkpoint_bytes(ck)
    back = learner.checkpoint_from_bytes(blob)
    assert learner.fingerprint(back) == learner.fingerprint(ck)
    assert back.dims == ck.dims and back.step == ck.step

    p = tmp_path / "ck.bin"
    learner.save_checkpoint(p, ck)
    assert learner.fingerprint(learner.load_checkpoint(p)) == learner.fingerprint(ck)


def test_checkpoint_rejects_bad_magic_and_version():
    env = _env()
    blob = learner.checkpoint_bytes(learner.init_checkpoint(env, 1))
    with pytest.raises(CheckpointFormatError):
        learner.checkpoint_from_bytes(b"NOPE" + blob[4:])
    with pytest.raises(CheckpointFormatError):
        learner.checkpoint_from_bytes(blob[:4] + b"\x63\x00\x00\x00" + blob[8:])
    with pytest.raises(CheckpointFormatError):
        learner.checkpoint_from_bytes(b"")


def test_checkpoint_rejects_truncation():
    env = _env()
    blob = learner.checkpoint_bytes(learner.init_checkpoint(env, 1))
    cuts = sorted(random.Random(0).sample(range(4, len(blob)), 40))
    for cut in cuts + [len(blob) - 1]:
        with pytest.raises(CheckpointFormatError):
            learner.checkpoint_from_bytes(blob[:cut])


def test_checkpoint_rejects_dim_mismatch():
    env = _env()
    ck = learner.init_checkpoint(env, 1)
    lied = dataclasses.replace(ck, dims=(ck.dims[0] + 1,) + ck.dims[1:])
    with pytest.raises(CheckpointFormatError):
        learner.checkpoint_from_bytes(learner.checkpoint_bytes(lied))


# ---------------------------------------------------------------------------
# learning makes progress


def test_competence_rises_with_dense_reward():
    env = _env("key_door_sparse")
    comp = _reward(env, "kd_early_dense")
    ecfg = learner.EvalConfig(16, 1806)
    ck = learner.init_checkpoint(env, 2024)
    c0 = learner.competence(ck, env, ecfg).value
    after, log = learner.train(ck, env, comp, 200)
    assert not log.diverged
    assert learner.competence(after, env, ecfg).value > c0
