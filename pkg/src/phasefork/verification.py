"""Shared-checkpoint fork verification.

The question answered here: at training step t, which candidate reward would
the current policy improve most under, and is that answer reliable?  Each
candidate is attached to R cloned copies of the same checkpoint, trained for
a short fork horizon, and scored by greedy evaluation.  A verdict aggregates
the repeats: modal-winner reliability, winner entropy, and a bootstrap lower
bound on the margin.  A verdict is informative only when reliability and the
margin bound both clear their thresholds; everything downstream (deployment
decisions, selector baselines) consumes only informative verdicts.

Costs are explicit: a grid over M checkpoints, K candidates, R repeats and
fork horizon L executes exactly M*K*R*L fork updates, which the profile can
audit against what actually ran.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

from . import learner, rewards, stats
from .envs import Env
from .errors import ValidationError
from .learner import Checkpoint, EvalConfig, TrainConfig
from .rng import derive, hash_tag

RHO_MIN = 0.75
MARGIN_MIN = 0.01
DEFAULT_REPEATS = 4
DEFAULT_BOOTSTRAP = 10_000
STABILITY_WINDOW = 2

# nominal per-update cost used for the deterministic wallclock_s CSV column;
# measured times stay in-memory only so emitted artifacts are reproducible
COST_UNIT_SECONDS = 1e-3


@dataclass(frozen=True)
class VerificationConfig:
    repeats: int = DEFAULT_REPEATS
    horizons: tuple = (40, 120)
    rho_min: float = RHO_MIN
    margin_min: float = MARGIN_MIN
    bootstrap_b: int = DEFAULT_BOOTSTRAP
    bootstrap_seed: int = 2977
    stability_window: int = STABILITY_WINDOW
    eval: EvalConfig = EvalConfig(16, 1806)
    train: TrainConfig = TrainConfig()
    calibration_seed: int = 5417
    reference_horizon: int | None = None

    def ref_horizon(self) -> int:
        if self.reference_horizon is not None:
            return self.reference_horizon
        return max(self.horizons)

    def validate(self):
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ValidationError("fork horizons must be positive")
        if not 0.0 < self.rho_min <= 1.0:
            raise ValidationError("rho_min must be in (0, 1]")
        if self.ref_horizon() not in self.horizons:
            raise ValidationError("reference horizon must be one of horizons")


@dataclass(frozen=True)
class ForkResult:
    checkpoint_step: int
    fork_horizon: int
    candidate_id: str
    repeat: int
    score: float
    consec: float
    diverged: bool
    executed_updates: int
    wallclock_seconds: float

    def nominal_cost_s(self) -> float:
        return self.executed_updates * COST_UNIT_SECONDS


@dataclass(frozen=True)
class Verdict:
    checkpoint_step: int
    fork_horizon: int
    modal_winner: str
    rel: float
    entropy: float
    margin_mean: float
    margin_lcb95: float
    informative: bool
    mean_scores: tuple  # ((candidate_id, mean score) sorted by id)
    n_repeats: int

    def score_of(self, cid: str) -> float:
        for k, v in self.mean_scores:
            if k == cid:
                return v
        raise KeyError(cid)


def _sorted_candidates(candidates) -> list:
    """Normalize {id: hypothesis} or [(id, hypothesis)] to a sorted list."""
    if isinstance(candidates, dict):
        items = sorted(candidates.items())
    else:
        items = sorted(candidates)
    if not items:
        raise ValidationError("no candidates to verify")
    ids = [i for i, _h in items]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate candidate ids")
    return items


def fork_verify(ck: Checkpoint, env: Env, candidates, fork_horizon: int,
                config: VerificationConfig = VerificationConfig()) -> list:
    """Train R forks per candidate from one checkpoint; never mutates ck.

    Forks that diverge keep their last finite state and are scored anyway,
    with the diverged flag raised; candidate rewards cannot crash the sweep.
    """
    config.validate()
    items = _sorted_candidates(candidates)
    out = []
    for cid, hyp in items:
        for r in range(config.repeats):
            tag = hash_tag("fork:%s:%d" % (cid, r))
            child = learner.clone_checkpoint(ck, tag)
            comp = rewards.compile_for(hyp, env, config.calibration_seed)
            t0 = time.monotonic()
            trained, log = learner.train(child, env, comp, fork_horizon,
                                         config.train)
            res = learner.evaluate(trained, env, config.eval)
            wall = time.monotonic() - t0
            out.append(ForkResult(
                checkpoint_step=ck.step,
                fork_horizon=fork_horizon,
                candidate_id=cid,
                repeat=r,
                score=res.success_mean,
                consec=res.consec_mean,
                diverged=log.diverged,
                executed_updates=trained.step - ck.step,
                wallclock_seconds=wall,
            ))
    return out


def winner_and_margin(scores: dict) -> tuple:
    """Best candidate and its lead over the runner-up.

    Ties break lexicographically by id.  A single-candidate field gets
    margin 0.0 so it can never clear the informative threshold on its own.
    """
    if not scores:
        raise ValidationError("no scores")
    ids = sorted(scores)
    winner = ids[0]
    for cid in ids[1:]:
        if scores[cid] > scores[winner]:
            winner = cid
    if len(ids) == 1:
        return winner, 0.0
    runner = None
    for cid in ids:
        if cid == winner:
            continue
        if runner is None or scores[cid] > scores[runner]:
            runner = cid
    return winner, scores[winner] - scores[runner]


def aggregate_verdict(fork_results, config: VerificationConfig = VerificationConfig()) -> Verdict:
    """Collapse the repeats of one (checkpoint, fork horizon) cell.

    Reliability is the modal-winner frequency across repeats; the margin is
    recomputed per repeat against the modal winner (so it can be negative on
    repeats the modal winner lost) and its 95% lower confidence bound comes
    from a seeded percentile bootstrap of the repeat means.
    """
    if not fork_results:
        raise ValidationError("no fork results")
    steps = {f.checkpoint_step for f in fork_results}
    horizons = {f.fork_horizon for f in fork_results}
    if len(steps) != 1 or len(horizons) != 1:
        raise ValidationError("fork results mix checkpoints or horizons")
    step = fork_results[0].checkpoint_step
    hor = fork_results[0].fork_horizon
    by_repeat: dict = {}
    for f in fork_results:
        by_repeat.setdefault(f.repeat, {})[f.candidate_id] = f.score
    repeats = sorted(by_repeat)
    cand_ids = sorted({f.candidate_id for f in fork_results})
    for r in repeats:
        if sorted(by_repeat[r]) != cand_ids:
            raise ValidationError("repeat %d is missing candidates" % r)
    n_rep = len(repeats)

    winners = []
    for r in repeats:
        w, _m = winner_and_margin(by_repeat[r])
        winners.append(w)
    counts: dict = {}
    for w in winners:
        counts[w] = counts.get(w, 0) + 1
    modal = sorted(counts)[0]
    for cid in sorted(counts):
        if counts[cid] > counts[modal]:
            modal = cid
    rel = counts[modal] / n_rep
    entropy = 0.0
    for cid in sorted(counts):
        p = counts[cid] / n_rep
        entropy -= p * math.log(p)

    margins = []
    for r in repeats:
        scores = by_repeat[r]
        if len(scores) == 1:
            margins.append(0.0)
            continue
        best_other = None
        for cid in cand_ids:
            if cid == modal:
                continue
            if best_other is None or scores[cid] > best_other:
                best_other = scores[cid]
        margins.append(scores[modal] - best_other)
    margin_mean = stats.mean(margins)
    if n_rep >= 2:
        seed = derive(config.bootstrap_seed,
                      hash_tag("verdict:%d:%d" % (step, hor)))
        lcb = stats.bootstrap_lcb(margins, config.bootstrap_b, seed)
    else:
        lcb = margins[0]
    informative = (
        n_rep >= 2 and rel >= config.rho_min and lcb > config.margin_min
    )
    mean_scores = []
    for cid in cand_ids:
        acc = 0.0
        for r in repeats:
            acc += by_repeat[r][cid]
        mean_scores.append((cid, acc / n_rep))
    return Verdict(
        checkpoint_step=step,
        fork_horizon=hor,
        modal_winner=modal,
        rel=rel,
        entropy=entropy,
        margin_mean=margin_mean,
        margin_lcb95=lcb,
        informative=informative,
        mean_scores=tuple(mean_scores),
        n_repeats=n_rep,
    )


@dataclass
class ProfileEntry:
    checkpoint_step: int
    competence: float
    verdicts: dict  # fork_horizon -> Verdict
    fork_results: list


@dataclass
class PhaseProfile:
    """Everything the deployment decision consumes, in checkpoint order."""

    env_name: str
    candidate_ids: tuple
    config: VerificationConfig
    entries: list = field(default_factory=list)

    def steps(self) -> list:
        return [e.checkpoint_step for e in self.entries]

    def verdicts_at(self, fork_horizon: int) -> list:
        out = []
        for e in self.entries:
            if fork_horizon in e.verdicts:
                out.append(e.verdicts[fork_horizon])
        return out

    def all_fork_results(self) -> list:
        out = []
        for e in self.entries:
            out.extend(e.fork_results)
        return out

    def first_informative(self, fork_horizon: int | None = None):
        """Earliest checkpoint step whose verdict is informative, or None."""
        hor = fork_horizon if fork_horizon is not None else self.config.ref_horizon()
        for v in self.verdicts_at(hor):
            if v.informative:
                return v.checkpoint_step
        return None


@dataclass(frozen=True)
class VerificationCost:
    planned_updates: int
    executed_updates: int

    def nominal_seconds(self) -> float:
        return self.executed_updates * COST_UNIT_SECONDS


def verification_cost(profile: PhaseProfile) -> VerificationCost:
    """Planned M*K*R*sum(L) update count vs what the forks actually ran."""
    cfg = profile.config
    planned = (
        len(profile.entries) * len(profile.candidate_ids) * cfg.repeats
        * sum(cfg.horizons)
    )
    executed = sum(f.executed_updates for f in profile.all_fork_results())
    return VerificationCost(planned, executed)


class CheckpointSource:
    """Checkpoint lookup for profile building: {step: Checkpoint}."""

    def __init__(self, checkpoints: dict):
        self._by_step = dict(checkpoints)

    def steps(self) -> list:
        return sorted(self._by_step)

    def checkpoint_at(self, step: int) -> Checkpoint:
        if step not in self._by_step:
            raise ValidationError(
                "no checkpoint at step %d (have: %s)" % (step, self.steps())
            )
        return self._by_step[step]


def build_phase_profile(source: CheckpointSource, steps, env: Env, candidates,
                        config: VerificationConfig = VerificationConfig()) -> PhaseProfile:
    """Fork-verify every probed checkpoint at every fork horizon."""
    config.validate()
    items = _sorted_candidates(candidates)
    profile = PhaseProfile(
        env_name=env.spec.name,
        candidate_ids=tuple(i for i, _h in items),
        config=config,
    )
    for t in sorted(steps):
        ck = source.checkpoint_at(t)
        comp = learner.competence(ck, env, config.eval)
        verdicts = {}
        all_results = []
        for hor in config.horizons:
            results = fork_verify(ck, env, items, hor, config)
            verdicts[hor] = aggregate_verdict(results, config)
            all_results.extend(results)
        profile.entries.append(ProfileEntry(t, comp.value, verdicts, all_results))
    return profile
