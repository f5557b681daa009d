"""Phase-aware deployment: turning a profile into a training plan.

decide_deployment reads the informative verdicts at the reference fork
horizon and compresses them into stable phases (a winner only counts after
holding for the stability window).  Zero stable phases fall back to the
task's dense bootstrap candidate, one phase deploys that winner outright,
and two or more become a two-stage schedule that switches at the overtaking
verdict's checkpoint step.

execute_plan runs a plan end to end with one of three switch operators:
hard swap, potential-based shaping against the pre-switch value snapshot,
or a critic reset that keeps the actor.  Selector baselines produce plans
from the same evidence under different triggers, and the held-out helpers
enforce that test seeds are only touched after a dev-phase selection is
frozen to disk.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from . import learner, metrics, rewards
from .envs import Env
from .errors import ProtocolError, ValidationError
from .learner import EvalConfig, TrainConfig
from .rng import derive, hash_tag
from .verification import PhaseProfile, VerificationConfig

EVAL_CADENCE = 10
SWITCH_OPS = ("hard", "pbrs_vold", "critic_reset")

SELECTOR_RULES = (
    "conservative_periodic",
    "moving_average",
    "naive_last",
    "one_shot_early",
    "one_shot_oracle",
)

FAILURE_MODES = (
    "never_switch",
    "switch_without_gain",
    "no_reliable_checkpoint",
    "over_conservative_trigger",
    "wrong_reward_identity",
)


@dataclass(frozen=True)
class DeploymentPlan:
    kind: str  # single | two_stage | fallback
    stage1_id: str
    stage2_id: str | None = None
    switch_step: int | None = None
    rationale: tuple = ()
    notes: tuple = ()

    def __post_init__(self):
        if self.kind not in ("single", "two_stage", "fallback"):
            raise ValidationError("unknown plan kind %r" % self.kind)
        if self.kind == "two_stage":
            if self.stage2_id is None or self.switch_step is None:
                raise ValidationError("two_stage plan needs stage2 and switch step")
        elif self.stage2_id is not None or self.switch_step is not None:
            raise ValidationError("%s plan cannot carry a switch" % self.kind)

    def to_json_dict(self) -> dict:
        return {
            "schema": "deployment_plan",
            "kind": self.kind,
            "stage1_id": self.stage1_id,
            "stage2_id": self.stage2_id,
            "switch_step": self.switch_step,
            "rationale": list(self.rationale),
            "notes": list(self.notes),
        }


@dataclass
class RunRecord:
    """One executed training run at evaluation-cadence resolution."""

    method: str
    seed: int
    curve: list = field(default_factory=list)  # (step, success_mean, consec_mean)
    reward_mean: list = field(default_factory=list)  # per update
    critic_absmax: list = field(default_factory=list)  # per update
    switch_events: list = field(default_factory=list)  # (step, op, from_id, to_id)
    diverged: bool = False
    diverged_at: int = -1

    @property
    def switch_count(self) -> int:
        return len(self.switch_events)

    def final_success(self) -> float:
        return self.curve[-1][1] if self.curve else 0.0


def _winner_sequence(profile: PhaseProfile):
    hor = profile.config.ref_horizon()
    return [v for v in profile.verdicts_at(hor) if v.informative]


def _stable_phases(verdicts, window: int):
    """Compress an informative-verdict sequence into stable phases.

    Returns [(winner, onset_step)] where onset is the first verdict of the
    phase's first stable run.  Runs shorter than the window are noise;
    adjacent stable runs of the same winner merge.
    """
    runs = []
    for v in verdicts:
        if runs and runs[-1][0] == v.modal_winner:
            runs[-1][1].append(v)
        else:
            runs.append((v.modal_winner, [v]))
    phases = []
    for winner, vs in runs:
        if len(vs) < window:
            continue
        if phases and phases[-1][0] == winner:
            continue
        phases.append((winner, vs[0].checkpoint_step))
    return phases


def decide_deployment(profile: PhaseProfile) -> DeploymentPlan:
    """Map a profile to single / two_stage / fallback (see module docstring)."""
    cfg = profile.config
    inf = _winner_sequence(profile)
    rationale = tuple(
        "t=%d winner=%s rel=%.2f lcb=%.5f" % (v.checkpoint_step, v.modal_winner,
                                              v.rel, v.margin_lcb95)
        for v in inf
    )
    fallback_id = rewards.dense_bootstrap_id(profile.env_name)
    if not inf:
        return DeploymentPlan("fallback", fallback_id,
                              rationale=("no informative verdicts",),
                              notes=("fallback_dense_bootstrap",))
    phases = _stable_phases(inf, cfg.stability_window)
    if not phases:
        return DeploymentPlan("fallback", fallback_id, rationale=rationale,
                              notes=("no stable phase",
                                     "fallback_dense_bootstrap"))
    if len(phases) == 1:
        return DeploymentPlan("single", phases[0][0], rationale=rationale)
    notes = ()
    if len(phases) > 2:
        notes = ("extra phases ignored: %s"
                 % ", ".join(w for w, _t in phases[2:]),)
    return DeploymentPlan(
        "two_stage", phases[0][0], phases[1][0], phases[1][1],
        rationale=rationale, notes=notes,
    )


@dataclass(frozen=True)
class DeployConfig:
    eval_cadence: int = EVAL_CADENCE
    eval: EvalConfig = EvalConfig(16, 1806)
    train: TrainConfig = TrainConfig()
    switch_op: str = "hard"
    calibration_seed: int = 5417

    def validate(self):
        if self.switch_op not in SWITCH_OPS:
            raise ValidationError(
                "switch op must be one of %s" % (SWITCH_OPS,)
            )
        if self.eval_cadence < 1:
            raise ValidationError("eval cadence must be >= 1")


def _eval_point(ck, env, dcfg, record):
    res = learner.evaluate(ck, env, dcfg.eval)
    record.curve.append((ck.step, res.success_mean, res.consec_mean))


def execute_plan(plan: DeploymentPlan, candidates, env: Env, seed: int,
                 budget: int, dcfg: DeployConfig = DeployConfig(),
                 method: str | None = None) -> RunRecord:
    """Train a fresh learner under the plan for `budget` updates.

    candidates maps hypothesis ids to hypotheses and must cover the plan's
    stages.  Divergence does not raise: the record carries the flag and the
    curve up to the failure, callers decide whether that is fatal.
    """
    dcfg.validate()
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    for hid in (plan.stage1_id, plan.stage2_id):
        if hid is not None and hid not in candidates:
            raise ValidationError("plan references unknown hypothesis %r" % hid)
    if plan.kind == "two_stage" and not 0 < plan.switch_step < budget:
        raise ValidationError(
            "switch step %r outside (0, budget)" % (plan.switch_step,)
        )

    record = RunRecord(method or plan.kind, seed)
    ck = learner.init_checkpoint(env, seed)
    _eval_point(ck, env, dcfg, record)

    stages = [(0, plan.stage1_id)]
    if plan.kind == "two_stage":
        stages.append((plan.switch_step, plan.stage2_id))

    comp = rewards.compile_for(candidates[plan.stage1_id], env,
                               dcfg.calibration_seed)
    boundaries = sorted({s for s, _h in stages} | {budget})
    stage_idx = 0
    while ck.step < budget and not record.diverged:
        next_boundary = budget
        for b in boundaries:
            if b > ck.step:
                next_boundary = b
                break
        # switch when entering a later stage
        if stage_idx + 1 < len(stages) and ck.step == stages[stage_idx + 1][0]:
            stage_idx += 1
            from_id = stages[stage_idx - 1][1]
            to_id = stages[stage_idx][1]
            record.switch_events.append((ck.step, dcfg.switch_op, from_id, to_id))
            hyp = candidates[to_id]
            if dcfg.switch_op == "pbrs_vold":
                pot = learner.critic_params_copy(ck)
                hyp = rewards.pbrs_wrap(
                    to_id + "+pbrs", hyp, pot, env.spec.gamma
                )
            elif dcfg.switch_op == "critic_reset":
                ck = learner.reset_critic(
                    ck, derive(seed, hash_tag("critic_reset:%d" % ck.step))
                )
            comp = rewards.compile_for(hyp, env, dcfg.calibration_seed)
        next_eval = ck.step + dcfg.eval_cadence
        stop = min(next_boundary, next_eval, budget)
        n = stop - ck.step
        ck, log = learner.train(ck, env, comp, n, dcfg.train)
        record.reward_mean.extend(log.reward_mean)
        record.critic_absmax.extend(log.critic_absmax)
        if log.diverged:
            record.diverged = True
            record.diverged_at = log.diverged_at
        if ck.step % dcfg.eval_cadence == 0 or ck.step >= budget or record.diverged:
            _eval_point(ck, env, dcfg, record)
    return record


# ---------------------------------------------------------------------------
# selector baselines


def _first_two_distinct(verdicts):
    """(first_winner, overtaker, overtake_step) from a raw verdict sequence."""
    if not verdicts:
        return None
    first = verdicts[0].modal_winner
    last_change = None
    for v in verdicts[1:]:
        if v.modal_winner != first and (
            last_change is None or v.modal_winner != last_change[0]
        ):
            last_change = (v.modal_winner, v.checkpoint_step)
    return first, last_change


def apply_selector(rule: str, profile: PhaseProfile,
                   oracle_outcomes: dict | None = None) -> DeploymentPlan:
    """Produce a plan under one of the baseline selection rules.

    one_shot_oracle needs oracle_outcomes (hypothesis id -> downstream final
    success); it deliberately uses information a deployable rule cannot have.
    """
    if rule not in SELECTOR_RULES:
        raise ValidationError("unknown selector rule %r" % rule)
    cfg = profile.config
    inf = _winner_sequence(profile)
    fallback_id = rewards.dense_bootstrap_id(profile.env_name)

    if rule == "one_shot_oracle":
        if not oracle_outcomes:
            raise ValidationError("one_shot_oracle needs downstream outcomes")
        best = sorted(oracle_outcomes)[0]
        for cid in sorted(oracle_outcomes):
            if oracle_outcomes[cid] > oracle_outcomes[best]:
                best = cid
        return DeploymentPlan("single", best, notes=("oracle",))

    if not inf:
        return DeploymentPlan("fallback", fallback_id,
                              rationale=("no informative verdicts",),
                              notes=("fallback_dense_bootstrap",))

    if rule == "one_shot_early":
        return DeploymentPlan("single", inf[0].modal_winner,
                              notes=("committed at first informative verdict",))

    if rule == "naive_last":
        first, change = _first_two_distinct(inf)
        if change is None:
            return DeploymentPlan("single", first)
        return DeploymentPlan("two_stage", first, change[0], change[1],
                              notes=("no stability requirement",))

    if rule == "moving_average":
        window = 3
        smoothed = []
        for i in range(len(inf)):
            lo = max(0, i - window + 1)
            votes: dict = {}
            for v in inf[lo : i + 1]:
                votes[v.modal_winner] = votes.get(v.modal_winner, 0) + 1
            win = sorted(votes)[0]
            for cid in sorted(votes):
                if votes[cid] > votes[win]:
                    win = cid
            smoothed.append((win, inf[i].checkpoint_step))
        phases = []
        for win, step in smoothed:
            if not phases or phases[-1][0] != win:
                phases.append((win, step))
        if len(phases) == 1:
            return DeploymentPlan("single", phases[0][0])
        return DeploymentPlan("two_stage", phases[0][0], phases[1][0],
                              phases[1][1], notes=("window=%d" % window,))

    # conservative_periodic: looks only at every other informative verdict
    # and demands unanimous repeats plus a doubled margin bound, held for
    # stability_window + 1 consecutive sampled verdicts
    sampled = inf[::2]
    strict = [
        v for v in sampled
        if v.rel == 1.0 and v.margin_lcb95 > 2.0 * cfg.margin_min
    ]
    phases = _stable_phases(strict, cfg.stability_window + 1)
    notes = ()
    full_phases = _stable_phases(inf, cfg.stability_window)
    if len(full_phases) >= 2 and len(phases) < 2:
        notes = ("strict_trigger",)
    if not phases:
        return DeploymentPlan("fallback", fallback_id, notes=notes
                              + ("fallback_dense_bootstrap",))
    if len(phases) == 1:
        return DeploymentPlan("single", phases[0][0], notes=notes)
    return DeploymentPlan("two_stage", phases[0][0], phases[1][0], phases[1][1],
                          notes=notes)


def classify_selector_failure(profile: PhaseProfile, plan: DeploymentPlan,
                              achieved=None,
                              reference_final: float | None = None) -> str | None:
    """Name the failure mode of a selector's plan, or None when sound.

    The evidence-consistent plan from decide_deployment is the yardstick.
    achieved is the executed plan's final success (a RunRecord or a float);
    reference_final, when given, is the final success of a baseline without
    the switch.  A switch that fails to beat the baseline is a gainless
    switch.
    """
    inf = _winner_sequence(profile)
    if not inf:
        return "no_reliable_checkpoint"
    ref = decide_deployment(profile)
    if ref.kind == "two_stage" and plan.kind != "two_stage":
        if "strict_trigger" in plan.notes:
            return "over_conservative_trigger"
        return "never_switch"
    if plan.kind == "two_stage":
        if ref.kind == "two_stage" and plan.stage2_id != ref.stage2_id:
            return "wrong_reward_identity"
        final = achieved.final_success() if isinstance(achieved, RunRecord) else achieved
        if final is not None and reference_final is not None and final <= reference_final:
            return "switch_without_gain"
    return None


# ---------------------------------------------------------------------------
# held-out discipline


@dataclass(frozen=True)
class SeedSplit:
    dev: tuple
    test: tuple

    def validate(self):
        if not self.dev or not self.test:
            raise ValidationError("both dev and test seed sets must be non-empty")
        overlap = set(self.dev) & set(self.test)
        if overlap:
            raise ProtocolError(
                "dev/test seed overlap: %s" % sorted(overlap)
            )


PROTOCOL_LOG = "protocol.log"
SELECTION_FILE = "selection.json"


def protocol_append(out_dir: str, kind: str, detail: str) -> int:
    """Append one protocol event with a logical sequence number.

    The counter is the line count, not a timestamp, so replaying a manifest
    into a clean directory reproduces the file byte for byte.
    """
    path = os.path.join(out_dir, PROTOCOL_LOG)
    seq = 0
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            seq = sum(1 for _ in fh)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("%04d %s %s\n" % (seq, kind, detail))
    return seq


def write_selection(out_dir: str, rule: str, split: SeedSplit,
                    dev_scores: dict, manifest_hash: str) -> str:
    """Freeze the dev-phase winner before any test seed may run."""
    split.validate()
    if rule not in dev_scores:
        raise ValidationError("selected rule %r has no dev scores" % rule)
    payload = {
        "schema": "selection",
        "rule": rule,
        "dev_seeds": list(split.dev),
        "test_seeds": list(split.test),
        "dev_scores": {k: dev_scores[k] for k in sorted(dev_scores)},
        "manifest_hash": manifest_hash,
    }
    path = os.path.join(out_dir, SELECTION_FILE)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")
    protocol_append(out_dir, "selection", "rule=%s manifest=%s" % (rule, manifest_hash))
    return path


def select_rule(dev_scores: dict) -> str:
    """Highest mean dev score wins; ties break lexicographically."""
    if not dev_scores:
        raise ValidationError("no dev scores to select from")
    best = sorted(dev_scores)[0]
    for rule in sorted(dev_scores):
        if dev_scores[rule] > dev_scores[best]:
            best = rule
    return best


def require_selection(out_dir: str, rule: str) -> dict:
    """Gate for test-phase evaluation: selection must exist and match."""
    path = os.path.join(out_dir, SELECTION_FILE)
    if not os.path.exists(path):
        raise ProtocolError(
            "test-phase evaluation requires a prior selection manifest "
            "(none found in %s)" % out_dir
        )
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("rule") != rule:
        raise ProtocolError(
            "selection manifest pins rule %r; refusing test evaluation of %r"
            % (payload.get("rule"), rule)
        )
    return payload


def check_test_seeds(out_dir: str, rule: str, seeds, split: SeedSplit) -> dict:
    """Full test-phase gate: split sanity, selection, and seed membership."""
    split.validate()
    payload = require_selection(out_dir, rule)
    for s in seeds:
        if s in split.dev:
            raise ProtocolError("seed %d is a dev seed; test reporting refused" % s)
        if s not in split.test:
            raise ProtocolError("seed %d is not in the registered test split" % s)
    protocol_append(out_dir, "test_eval", "rule=%s seeds=%s" % (rule, list(seeds)))
    return payload
