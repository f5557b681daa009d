"""Experiment manifests: one JSON file pins everything a run needs.

A manifest freezes the task, candidate set, seeds, budgets, fork grid,
methods under comparison, metric thresholds, and an evidence-status tag from
a fixed taxonomy, so that every emitted table can say exactly what kind of
claim it supports.  The canonical hash of the manifest is stamped into every
output file.

Field order in written manifests is stable (insertion order of
`to_json_dict`), and the hash is computed over a sorted-key canonical dump,
so cosmetic reordering of a hand-edited file does not change identity.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from . import envs, rewards
from .deployment import SELECTOR_RULES, SWITCH_OPS, DeployConfig, DeploymentPlan, SeedSplit
from .errors import ValidationError
from .learner import EvalConfig, TrainConfig
from .metrics import COLLAPSE_BEST, COLLAPSE_TAIL, TAIL_FRACTION
from .rewards.expr import parse_pool
from .verification import VerificationConfig

# Evidence-status taxonomy: what kind of claim a table may support.
EVIDENCE_STATUSES = (
    "locked_main",        # primary locked comparison behind the headline claim
    "reduced_main",       # reduced-protocol evidence for generated families
    "heldout_test",       # dev-selected rule evaluated on held-out seeds
    "selector_support",   # conservative online-selector support evidence
    "compute_matched",    # fairness controls with verification-matched budget
    "appendix_topup",     # mechanism-oriented top-up rows
    "extra_task_pilot",   # scope/boundary pilot only
    "oracle_upper_bound", # non-deployable reference rows
    "stress_tests",       # scope-setting stress experiments
    "historical_legacy",  # retained only for traceability
    "failed_or_blocked",  # incomplete or diverged; never used for ranking
)

DEFAULT_EVAL_CADENCE = 10


@dataclass(frozen=True)
class MethodSpec:
    """A named deployment plan plus its switch operator."""

    name: str
    plan: DeploymentPlan
    switch_op: str = "hard"

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "plan": {
                "kind": self.plan.kind,
                "stage1": self.plan.stage1_id,
                "stage2": self.plan.stage2_id,
                "switch_step": self.plan.switch_step,
            },
            "switch_op": self.switch_op,
        }


@dataclass
class ExperimentManifest:
    name: str
    task: str
    seeds: tuple
    budget: int
    evidence_status: str
    probe_steps: tuple = ()
    fork_horizons: tuple = (40, 120)
    repeats: int = 4
    reference_horizon: int | None = None
    methods: tuple = ()
    paired: tuple = ()  # ((method_a, method_b), ...)
    selectors: tuple = ()
    split: SeedSplit | None = None
    pool_file: str | None = None
    probe_candidate: str | None = None
    env_overrides: dict = field(default_factory=dict)
    eval_episodes: int = 16
    eval_seed_root: int = 1806
    eval_cadence: int = DEFAULT_EVAL_CADENCE
    train: TrainConfig = TrainConfig()
    rho_min: float = 0.75
    margin_min: float = 0.01
    bootstrap_b: int = 10_000
    bootstrap_seed: int = 2977
    stability_window: int = 2
    calibration_seed: int = 5417
    collapse_best: float = COLLAPSE_BEST
    collapse_tail: float = COLLAPSE_TAIL
    tail_fraction: float = TAIL_FRACTION
    base_dir: str = "."

    # ------------------------------------------------------------------
    def candidates(self) -> dict:
        """Hypothesis set: builtin family, or a pool file resolved to rules."""
        if self.pool_file is None:
            return rewards.builtin_family(self.task)
        path = self.pool_file
        if not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        with open(path, "r", encoding="utf-8") as fh:
            pool = parse_pool(fh.read())
        out = {}
        for pid, expression in pool:
            out[pid] = rewards.RewardHypothesis(pid, expression, rewards.Identity())
        return out

    def make_env(self) -> envs.Env:
        return envs.make_env(self.task, **self.env_overrides)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.eval_episodes, self.eval_seed_root)

    def verification_config(self) -> VerificationConfig:
        return VerificationConfig(
            repeats=self.repeats,
            horizons=tuple(self.fork_horizons),
            rho_min=self.rho_min,
            margin_min=self.margin_min,
            bootstrap_b=self.bootstrap_b,
            bootstrap_seed=self.bootstrap_seed,
            stability_window=self.stability_window,
            eval=self.eval_config(),
            train=self.train,
            calibration_seed=self.calibration_seed,
            reference_horizon=self.reference_horizon,
        )

    def deploy_config(self, switch_op: str = "hard") -> DeployConfig:
        return DeployConfig(
            eval_cadence=self.eval_cadence,
            eval=self.eval_config(),
            train=self.train,
            switch_op=switch_op,
            calibration_seed=self.calibration_seed,
        )

    def probe_hypothesis_id(self) -> str:
        if self.probe_candidate is not None:
            return self.probe_candidate
        return rewards.dense_bootstrap_id(self.task)

    # ------------------------------------------------------------------
    def to_json_dict(self) -> dict:
        d: dict = {
            "schema": "experiment",
            "name": self.name,
            "task": self.task,
            "seeds": list(self.seeds),
            "budget": self.budget,
            "evidence_status": self.evidence_status,
            "probe_steps": list(self.probe_steps),
            "fork_horizons": list(self.fork_horizons),
            "repeats": self.repeats,
            "reference_horizon": self.reference_horizon,
            "methods": [m.to_json_dict() for m in self.methods],
            "paired": [list(p) for p in self.paired],
            "selectors": list(self.selectors),
            "split": (None if self.split is None
                      else {"dev": list(self.split.dev), "test": list(self.split.test)}),
            "pool_file": self.pool_file,
            "probe_candidate": self.probe_candidate,
            "env_overrides": dict(self.env_overrides),
            "eval": {
                "episodes": self.eval_episodes,
                "seed_root": self.eval_seed_root,
                "cadence": self.eval_cadence,
            },
            "train": {
                "gae_lambda": self.train.lam,
                "clip": self.train.clip,
                "lr": self.train.lr,
                "beta1": self.train.beta1,
                "beta2": self.train.beta2,
                "adam_eps": self.train.adam_eps,
                "ent_coef": self.train.ent_coef,
                "vf_coef": self.train.vf_coef,
                "episodes_per_update": self.train.episodes_per_update,
                "epochs": self.train.epochs,
                "adv_norm": self.train.adv_norm,
            },
            "verify": {
                "rho_min": self.rho_min,
                "margin_min": self.margin_min,
                "bootstrap_b": self.bootstrap_b,
                "bootstrap_seed": self.bootstrap_seed,
                "stability_window": self.stability_window,
                "calibration_seed": self.calibration_seed,
            },
            "metric": {
                "collapse_best": self.collapse_best,
                "collapse_tail": self.collapse_tail,
                "tail_fraction": self.tail_fraction,
            },
        }
        return d

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()[:12]

    def freeze_hash(self) -> str:
        """Hash of the frozen (methods, seeds) cell set of a locked comparison."""
        payload = {
            "methods": sorted(m.name for m in self.methods),
            "seeds": sorted(self.seeds),
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def save(self, path: str) -> str:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")
        return path


# ---------------------------------------------------------------------------
# loading / validation


def _typed(d: dict, key: str, kinds, path: str, required=True, default=None):
    if key not in d or d[key] is None:
        if required:
            raise ValidationError("%s.%s: missing required field" % (path, key))
        return default
    v = d[key]
    if not isinstance(v, kinds):
        raise ValidationError(
            "%s.%s: expected %s, got %s"
            % (path, key, getattr(kinds, "__name__", kinds), type(v).__name__)
        )
    return v


def _int_list(d: dict, key: str, path: str, required=True, default=()):
    v = _typed(d, key, list, path, required, list(default))
    for i, x in enumerate(v):
        if not isinstance(x, int) or isinstance(x, bool):
            raise ValidationError("%s.%s[%d]: expected integer" % (path, key, i))
    return tuple(v)


_NAME_OK = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-"
)


def _parse_method(d: dict, idx: int) -> MethodSpec:
    path = "methods[%d]" % idx
    name = _typed(d, "name", str, path)
    if not name or not set(name) <= _NAME_OK:
        raise ValidationError(
            "%s.name: %r must be non-empty [A-Za-z0-9_.-]" % (path, name)
        )
    op = _typed(d, "switch_op", str, path, required=False, default="hard")
    if op not in SWITCH_OPS:
        raise ValidationError("%s.switch_op: %r not in %s" % (path, op, SWITCH_OPS))
    pd = _typed(d, "plan", dict, path)
    kind = _typed(pd, "kind", str, path + ".plan")
    stage1 = _typed(pd, "stage1", str, path + ".plan")
    stage2 = _typed(pd, "stage2", str, path + ".plan", required=False)
    switch_step = _typed(pd, "switch_step", int, path + ".plan", required=False)
    try:
        plan = DeploymentPlan(kind, stage1, stage2, switch_step)
    except ValidationError as e:
        raise ValidationError("%s.plan: %s" % (path, e)) from None
    return MethodSpec(name, plan, op)


def manifest_from_dict(d: dict, base_dir: str = ".") -> ExperimentManifest:
    if not isinstance(d, dict):
        raise ValidationError("manifest root must be a JSON object")
    path = "manifest"
    name = _typed(d, "name", str, path)
    task = _typed(d, "task", str, path)
    if task not in (envs.KEY_DOOR, envs.LINE_BALANCE):
        raise ValidationError(
            "manifest.task: unknown task %r (know: %s, %s)"
            % (task, envs.KEY_DOOR, envs.LINE_BALANCE)
        )
    seeds = _int_list(d, "seeds", path)
    if len(set(seeds)) != len(seeds):
        raise ValidationError("manifest.seeds: seeds must be unique")
    budget = _typed(d, "budget", int, path)
    if budget < 1:
        raise ValidationError("manifest.budget: must be >= 1")
    status = _typed(d, "evidence_status", str, path)
    if status not in EVIDENCE_STATUSES:
        raise ValidationError(
            "manifest.evidence_status: unknown status %r; taxonomy: %s"
            % (status, ", ".join(EVIDENCE_STATUSES))
        )

    probe_steps = _int_list(d, "probe_steps", path, required=False)
    for t in probe_steps:
        if not 0 < t <= budget:
            raise ValidationError(
                "manifest.probe_steps: step %d outside (0, budget]" % t
            )
    horizons = _int_list(d, "fork_horizons", path, required=False, default=(40, 120))
    repeats = _typed(d, "repeats", int, path, required=False, default=4)
    ref_hor = _typed(d, "reference_horizon", int, path, required=False)

    methods = tuple(
        _parse_method(m, i)
        for i, m in enumerate(_typed(d, "methods", list, path, required=False,
                                     default=[]))
    )
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValidationError("manifest.methods: duplicate method names")
    paired_raw = _typed(d, "paired", list, path, required=False, default=[])
    paired = []
    for i, pr in enumerate(paired_raw):
        if (not isinstance(pr, list) or len(pr) != 2
                or not all(isinstance(x, str) for x in pr)):
            raise ValidationError(
                "manifest.paired[%d]: expected [method_a, method_b]" % i
            )
        for m in pr:
            if m not in names:
                raise ValidationError(
                    "manifest.paired[%d]: unknown method %r" % (i, m)
                )
        paired.append(tuple(pr))

    selectors = tuple(_typed(d, "selectors", list, path, required=False, default=[]))
    for i, r in enumerate(selectors):
        if r not in SELECTOR_RULES:
            raise ValidationError(
                "manifest.selectors[%d]: unknown rule %r (know: %s)"
                % (i, r, ", ".join(SELECTOR_RULES))
            )

    split = None
    sd = _typed(d, "split", dict, path, required=False)
    if sd is not None:
        split = SeedSplit(_int_list(sd, "dev", "manifest.split"),
                          _int_list(sd, "test", "manifest.split"))
        split.validate()
        for s in split.dev + split.test:
            if s not in seeds:
                raise ValidationError(
                    "manifest.split: seed %d not in manifest.seeds" % s
                )

    pool_file = _typed(d, "pool_file", str, path, required=False)
    probe_candidate = _typed(d, "probe_candidate", str, path, required=False)
    env_overrides = _typed(d, "env_overrides", dict, path, required=False,
                           default={})

    ev = _typed(d, "eval", dict, path, required=False, default={})
    eval_episodes = _typed(ev, "episodes", int, "manifest.eval",
                           required=False, default=16)
    eval_seed_root = _typed(ev, "seed_root", int, "manifest.eval",
                            required=False, default=1806)
    eval_cadence = _typed(ev, "cadence", int, "manifest.eval",
                          required=False, default=DEFAULT_EVAL_CADENCE)

    tr = _typed(d, "train", dict, path, required=False, default={})
    tdef = TrainConfig()
    train = TrainConfig(
        lam=_typed(tr, "gae_lambda", (int, float), "manifest.train",
                   required=False, default=tdef.lam),
        clip=_typed(tr, "clip", (int, float), "manifest.train",
                    required=False, default=tdef.clip),
        lr=_typed(tr, "lr", (int, float), "manifest.train",
                  required=False, default=tdef.lr),
        beta1=_typed(tr, "beta1", (int, float), "manifest.train",
                     required=False, default=tdef.beta1),
        beta2=_typed(tr, "beta2", (int, float), "manifest.train",
                     required=False, default=tdef.beta2),
        adam_eps=_typed(tr, "adam_eps", (int, float), "manifest.train",
                        required=False, default=tdef.adam_eps),
        ent_coef=_typed(tr, "ent_coef", (int, float), "manifest.train",
                        required=False, default=tdef.ent_coef),
        vf_coef=_typed(tr, "vf_coef", (int, float), "manifest.train",
                       required=False, default=tdef.vf_coef),
        episodes_per_update=_typed(tr, "episodes_per_update", int,
                                   "manifest.train", required=False,
                                   default=tdef.episodes_per_update),
        epochs=_typed(tr, "epochs", int, "manifest.train",
                      required=False, default=tdef.epochs),
        adv_norm=_typed(tr, "adv_norm", bool, "manifest.train",
                        required=False, default=tdef.adv_norm),
    )

    vf = _typed(d, "verify", dict, path, required=False, default={})
    mt = _typed(d, "metric", dict, path, required=False, default={})

    m = ExperimentManifest(
        name=name,
        task=task,
        seeds=seeds,
        budget=budget,
        evidence_status=status,
        probe_steps=probe_steps,
        fork_horizons=horizons,
        repeats=repeats,
        reference_horizon=ref_hor,
        methods=methods,
        paired=tuple(paired),
        selectors=selectors,
        split=split,
        pool_file=pool_file,
        probe_candidate=probe_candidate,
        env_overrides=env_overrides,
        eval_episodes=eval_episodes,
        eval_seed_root=eval_seed_root,
        eval_cadence=eval_cadence,
        train=train,
        rho_min=_typed(vf, "rho_min", (int, float), "manifest.verify",
                       required=False, default=0.75),
        margin_min=_typed(vf, "margin_min", (int, float), "manifest.verify",
                          required=False, default=0.01),
        bootstrap_b=_typed(vf, "bootstrap_b", int, "manifest.verify",
                           required=False, default=10_000),
        bootstrap_seed=_typed(vf, "bootstrap_seed", int, "manifest.verify",
                              required=False, default=2977),
        stability_window=_typed(vf, "stability_window", int, "manifest.verify",
                                required=False, default=2),
        calibration_seed=_typed(vf, "calibration_seed", int, "manifest.verify",
                                required=False, default=5417),
        collapse_best=_typed(mt, "collapse_best", (int, float),
                             "manifest.metric", required=False,
                             default=COLLAPSE_BEST),
        collapse_tail=_typed(mt, "collapse_tail", (int, float),
                             "manifest.metric", required=False,
                             default=COLLAPSE_TAIL),
        tail_fraction=_typed(mt, "tail_fraction", (int, float),
                             "manifest.metric", required=False,
                             default=TAIL_FRACTION),
        base_dir=base_dir,
    )
    _check_candidate_compat(m)
    if ref_hor is not None and ref_hor not in horizons:
        raise ValidationError(
            "manifest.reference_horizon: %d not in fork_horizons %s"
            % (ref_hor, list(horizons))
        )
    return m


def _check_candidate_compat(m: ExperimentManifest):
    """Candidates must compile against the task's feature set up front."""
    env = m.make_env()
    cands = m.candidates()
    for cid in sorted(cands):
        try:
            rewards.compile_for(cands[cid], env, m.calibration_seed)
        except Exception as e:
            raise ValidationError(
                "manifest: candidate %r incompatible with task %s: %s"
                % (cid, m.task, e)
            ) from None
    for meth in m.methods:
        for hid in (meth.plan.stage1_id, meth.plan.stage2_id):
            if hid is not None and hid not in cands:
                raise ValidationError(
                    "manifest.methods: method %r references unknown candidate %r"
                    % (meth.name, hid)
                )
        if (meth.plan.kind == "two_stage"
                and not 0 < meth.plan.switch_step < m.budget):
            raise ValidationError(
                "manifest.methods: method %r switch step %d outside (0, budget)"
                % (meth.name, meth.plan.switch_step)
            )
    pid = m.probe_hypothesis_id()
    if pid not in cands:
        raise ValidationError(
            "manifest.probe_candidate: %r not among candidates" % pid
        )


def load_manifest(path: str) -> ExperimentManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as e:
        raise ValidationError("cannot read manifest %s: %s" % (path, e)) from None
    except json.JSONDecodeError as e:
        raise ValidationError("manifest %s is not valid JSON: %s" % (path, e)) from None
    return manifest_from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))
