"""Run orchestration: grids, locked comparisons, selectors, pool stress.

Everything here consumes an ExperimentManifest and an output directory and
emits stamped CSVs plus a protocol log.  Work fans across a thread pool in
(method, seed) or (checkpoint, horizon) cells; results are merged in
submission order, so the emitted bytes are independent of thread count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import deployment, learner, metrics, refdata, rewards, stats, verification
from .csvio import SCHEMAS, Stamp, read_csv, write_csv
from .deployment import RunRecord, protocol_append
from .errors import ProtocolError, ValidationError
from .manifest import EVIDENCE_STATUSES, ExperimentManifest
from .rng import derive, hash_tag

CHECKPOINT_DIR = "checkpoints"
CURVE_DIR = "curves"


def _fan(fn, items, threads: int):
    """Map fn over items, in parallel when threads > 1; order preserved."""
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        futures = [ex.submit(fn, it) for it in items]
        return [f.result() for f in futures]


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _stamp(m: ExperimentManifest, schema: str, root_seed: int,
           status: str | None = None) -> Stamp:
    return Stamp(schema, m.hash(), root_seed,
                 status if status is not None else m.evidence_status)


# ---------------------------------------------------------------------------
# probe training + verification grid


@dataclass
class GridOutputs:
    profile: verification.PhaseProfile
    forks_csv: str
    verdicts_csv: str
    checkpoint_paths: dict = field(default_factory=dict)


def probe_checkpoints(m: ExperimentManifest, root_seed: int,
                      out_dir: str | None = None):
    """Train the probe learner, capturing checkpoints at the probe steps.

    Returns (CheckpointSource, saved paths).  The probe uses the manifest's
    probe candidate (the dense bootstrap by default) and a seed derived from
    the root seed, so grid evidence never shares RNG with deployment runs.
    """
    if not m.probe_steps:
        raise ValidationError("manifest has no probe_steps")
    env = m.make_env()
    cands = m.candidates()
    comp_hyp = cands[m.probe_hypothesis_id()]
    seed = derive(root_seed, hash_tag("probe"))
    ck = learner.init_checkpoint(env, seed)
    compiled = rewards.compile_for(comp_hyp, env, m.calibration_seed)
    by_step = {}
    paths = {}
    for stop in sorted(m.probe_steps):
        ck, log = learner.train(ck, env, compiled, stop - ck.step, m.train)
        if log.diverged:
            raise ValidationError(
                "probe training diverged at update %d; cannot build grid"
                % log.diverged_at
            )
        by_step[stop] = ck
        if out_dir is not None:
            ck_dir = _ensure_dir(os.path.join(out_dir, CHECKPOINT_DIR))
            path = os.path.join(ck_dir, "ck_%05d.bin" % stop)
            learner.save_checkpoint(path, ck)
            paths[stop] = path
    return verification.CheckpointSource(by_step), paths


def run_verification_grid(m: ExperimentManifest, out_dir: str,
                          root_seed: int, threads: int = 1) -> GridOutputs:
    _ensure_dir(out_dir)
    env = m.make_env()
    cands = m.candidates()
    vcfg = m.verification_config()
    vcfg.validate()
    source, ck_paths = probe_checkpoints(m, root_seed, out_dir)
    steps = source.steps()

    items = sorted(cands.items())
    cells = [(t, hor) for t in steps for hor in vcfg.horizons]

    def _cell(cell):
        t, hor = cell
        return verification.fork_verify(source.checkpoint_at(t), env, items,
                                        hor, vcfg)

    cell_results = _fan(_cell, cells, threads)

    profile = verification.PhaseProfile(
        env_name=env.spec.name,
        candidate_ids=tuple(i for i, _h in items),
        config=vcfg,
    )
    by_step: dict = {}
    for (t, hor), results in zip(cells, cell_results):
        by_step.setdefault(t, {})[hor] = results
    for t in steps:
        comp = learner.competence(source.checkpoint_at(t), env, vcfg.eval)
        verdicts = {}
        all_results = []
        for hor in vcfg.horizons:
            results = by_step[t][hor]
            verdicts[hor] = verification.aggregate_verdict(results, vcfg)
            all_results.extend(results)
        profile.entries.append(
            verification.ProfileEntry(t, comp.value, verdicts, all_results)
        )

    fork_rows = []
    verdict_rows = []
    for e in profile.entries:
        for f in e.fork_results:
            fork_rows.append((
                f.checkpoint_step, f.fork_horizon, f.candidate_id, f.repeat,
                f.score, f.consec, f.diverged, f.executed_updates,
                f.nominal_cost_s(),
            ))
        for hor in vcfg.horizons:
            v = e.verdicts[hor]
            verdict_rows.append((
                v.checkpoint_step, v.fork_horizon, v.modal_winner, v.rel,
                v.entropy, v.margin_mean, v.margin_lcb95, v.informative,
                v.n_repeats, e.competence,
            ))
    forks_csv = write_csv(os.path.join(out_dir, "forks.csv"),
                          _stamp(m, "forks", root_seed), fork_rows)
    verdicts_csv = write_csv(os.path.join(out_dir, "verdicts.csv"),
                             _stamp(m, "verdicts", root_seed), verdict_rows)
    protocol_append(out_dir, "verify_grid",
                    "manifest=%s cells=%d" % (m.hash(), len(cells)))
    return GridOutputs(profile, forks_csv, verdicts_csv, ck_paths)


def run_profile(m: ExperimentManifest, out_dir: str, root_seed: int,
                threads: int = 1):
    """Verification grid plus the deployment decision derived from it."""
    grid = run_verification_grid(m, out_dir, root_seed, threads)
    plan = deployment.decide_deployment(grid.profile)
    cost = verification.verification_cost(grid.profile)
    payload = {
        "schema": "phase_profile",
        "manifest": m.hash(),
        "task": m.task,
        "entries": [
            {
                "checkpoint_step": e.checkpoint_step,
                "competence": e.competence,
                "verdicts": [
                    {
                        "fork_horizon": hor,
                        "modal_winner": e.verdicts[hor].modal_winner,
                        "rel": e.verdicts[hor].rel,
                        "entropy": e.verdicts[hor].entropy,
                        "margin_mean": e.verdicts[hor].margin_mean,
                        "margin_lcb95": e.verdicts[hor].margin_lcb95,
                        "informative": e.verdicts[hor].informative,
                    }
                    for hor in m.fork_horizons
                ],
            }
            for e in grid.profile.entries
        ],
        "cost": {
            "planned_updates": cost.planned_updates,
            "executed_updates": cost.executed_updates,
            "nominal_seconds": cost.nominal_seconds(),
        },
    }
    profile_path = os.path.join(out_dir, "profile.json")
    with open(profile_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    plan_path = os.path.join(out_dir, "plan.json")
    with open(plan_path, "w", encoding="utf-8") as fh:
        json.dump(plan.to_json_dict(), fh, indent=2)
        fh.write("\n")
    return grid, plan, profile_path, plan_path


def run_train(m: ExperimentManifest, out_dir: str, root_seed: int) -> dict:
    """Plain probe training to the full budget, with curve and checkpoints.

    Unlike locked-comparison cells, divergence here raises (exit code 4 at
    the CLI): a probe run that blows up has no salvageable artifact.
    """
    _ensure_dir(out_dir)
    env = m.make_env()
    cands = m.candidates()
    hyp = cands[m.probe_hypothesis_id()]
    plan = deployment.DeploymentPlan("single", hyp.hid)
    seed = derive(root_seed, hash_tag("probe"))
    rec = deployment.execute_plan(plan, cands, env, seed, m.budget,
                                  m.deploy_config(), method="probe")
    if rec.diverged:
        from .errors import DivergenceError
        raise DivergenceError(
            "probe training diverged at update %d" % rec.diverged_at,
            update_index=rec.diverged_at,
        )
    curve_dir = _ensure_dir(os.path.join(out_dir, CURVE_DIR))
    curve_csv = write_csv(os.path.join(curve_dir, "probe__r%d.csv" % root_seed),
                          _stamp(m, "curve", root_seed), _curve_rows(rec))
    paths = {}
    if m.probe_steps:
        _src, paths = probe_checkpoints(m, root_seed, out_dir)
    protocol_append(out_dir, "train",
                    "manifest=%s budget=%d" % (m.hash(), m.budget))
    return {"curve_csv": curve_csv, "checkpoints": paths,
            "final_success": rec.final_success()}


# ---------------------------------------------------------------------------
# locked comparison


@dataclass
class LockedOutputs:
    per_seed_csv: str
    aggregate_csv: str
    paired_csv: str
    curve_csvs: list
    records: dict  # (method, seed) -> RunRecord
    rows: list  # MetricRow


def _curve_rows(record: RunRecord):
    rows = []
    peak = 0.0
    prev = 0
    for step, succ, _consec in record.curve:
        if step > prev:
            window = record.reward_mean[prev:step]
            rm = sum(window) / len(window) if window else 0.0
            for v in record.critic_absmax[prev:step]:
                if v > peak:
                    peak = v
        else:
            rm = 0.0
        rows.append((step, succ, rm, peak))
        prev = step
    return rows


def run_locked_comparison(m: ExperimentManifest, out_dir: str, root_seed: int,
                          threads: int = 1,
                          extra_cells=None) -> LockedOutputs:
    """Execute the frozen (method x seed) grid and emit its tables.

    The cell set is fixed by the manifest's freeze hash before any training
    starts; asking for extra cells afterwards is a protocol violation, not a
    merge.  Diverged cells keep their partial metrics and are re-tagged
    failed_or_blocked rather than dropped.
    """
    if not m.methods:
        raise ValidationError("manifest has no methods to compare")
    _ensure_dir(out_dir)
    freeze = m.freeze_hash()
    protocol_append(out_dir, "freeze",
                    "manifest=%s methods_seeds=%s" % (m.hash(), freeze))
    if extra_cells:
        raise ProtocolError(
            "cells %s requested after freeze %s; locked comparisons cannot "
            "grow" % (sorted(extra_cells), freeze)
        )
    env = m.make_env()
    cands = m.candidates()
    cells = [(meth, seed) for meth in m.methods for seed in m.seeds]

    def _cell(cell):
        meth, seed = cell
        return deployment.execute_plan(
            meth.plan, cands, env, seed, m.budget,
            m.deploy_config(meth.switch_op), method=meth.name,
        )

    results = _fan(_cell, cells, threads)

    records = {}
    rows = []
    curve_csvs = []
    curve_dir = _ensure_dir(os.path.join(out_dir, CURVE_DIR))
    for (meth, seed), rec in zip(cells, results):
        records[(meth.name, seed)] = rec
        status = ("failed_or_blocked" if rec.diverged else m.evidence_status)
        rows.append(metrics.compute_metric_row(rec, status))
        path = os.path.join(curve_dir, "%s__s%d.csv" % (meth.name, seed))
        write_csv(path, _stamp(m, "curve", root_seed, status), _curve_rows(rec))
        curve_csvs.append(path)

    per_seed_rows = [
        (r.method, r.seed, r.consec_max, r.consec_auc, r.full_auc, r.tail_auc,
         r.recomputed_final, r.last5_mean, r.best_checkpoint_success,
         r.collapse, r.critic_peak_abs, r.reward_shift, r.switch_count,
         r.evidence_status)
        for r in rows
    ]
    per_seed_csv = write_csv(os.path.join(out_dir, "per_seed.csv"),
                             _stamp(m, "per_seed", root_seed), per_seed_rows)

    agg_rows = []
    by_method: dict = {}
    for r in rows:
        by_method.setdefault(r.method, []).append(r)
    for meth in m.methods:
        mrows = by_method[meth.name]
        vals = [r.consec_max for r in mrows]
        agg = stats.aggregate(
            vals, m.bootstrap_b,
            derive(root_seed, hash_tag("aggregate:%s" % meth.name)),
        )
        statuses = sorted({r.evidence_status for r in mrows})
        agg_rows.append((meth.name, agg.n, agg.mean, agg.std, agg.ci_lo,
                         agg.ci_hi, "+".join(statuses)))
    aggregate_csv = write_csv(os.path.join(out_dir, "aggregate.csv"),
                              _stamp(m, "aggregate", root_seed), agg_rows)

    paired_rows = []
    for a, b in m.paired:
        va = [r.consec_max for s in m.seeds for r in by_method[a] if r.seed == s]
        vb = [r.consec_max for s in m.seeds for r in by_method[b] if r.seed == s]
        res = stats.paired_compare(va, vb)
        paired_rows.append(("%s_vs_%s" % (a, b), res.mean_diff, res.p_value,
                            res.d_z, m.evidence_status))
    paired_csv = write_csv(os.path.join(out_dir, "paired.csv"),
                           _stamp(m, "paired", root_seed), paired_rows)
    protocol_append(out_dir, "locked_rows",
                    "cells=%d diverged=%d" % (len(cells),
                                              sum(r.diverged for r in results)))
    return LockedOutputs(per_seed_csv, aggregate_csv, paired_csv, curve_csvs,
                         records, rows)


# ---------------------------------------------------------------------------
# selector comparison


@dataclass
class SelectorOutputs:
    selectors_csv: str
    plans: dict
    finals: dict
    failures: dict
    selection_path: str | None = None


def run_selectors(m: ExperimentManifest, out_dir: str, root_seed: int,
                  threads: int = 1, freeze_selection: bool = False) -> SelectorOutputs:
    """Compare selection rules on the dev seeds of the manifest split."""
    if not m.selectors:
        raise ValidationError("manifest has no selectors")
    if m.split is None:
        raise ValidationError("selector comparison needs a dev/test split")
    _ensure_dir(out_dir)
    env = m.make_env()
    cands = m.candidates()
    grid = run_verification_grid(m, out_dir, root_seed, threads)
    profile = grid.profile

    oracle_outcomes = None
    if "one_shot_oracle" in m.selectors:
        def _cand_cell(cell):
            cid, seed = cell
            plan = deployment.DeploymentPlan("single", cid)
            rec = deployment.execute_plan(plan, cands, env, seed, m.budget,
                                          m.deploy_config(), method=cid)
            return rec.final_success()

        cand_cells = [(cid, s) for cid in sorted(cands) for s in m.split.dev]
        outs = _fan(_cand_cell, cand_cells, threads)
        oracle_outcomes = {}
        for (cid, _s), v in zip(cand_cells, outs):
            oracle_outcomes[cid] = oracle_outcomes.get(cid, 0.0) + v
        for cid in oracle_outcomes:
            oracle_outcomes[cid] /= len(m.split.dev)

    reference_plan = deployment.decide_deployment(profile)
    plans = {}
    for rule in m.selectors:
        plans[rule] = deployment.apply_selector(rule, profile, oracle_outcomes)

    def _rule_cell(cell):
        rule, seed = cell
        return deployment.execute_plan(plans[rule], cands, env, seed, m.budget,
                                       m.deploy_config(), method=rule)

    rule_cells = [(rule, s) for rule in m.selectors for s in m.split.dev]
    recs = _fan(_rule_cell, rule_cells, threads)
    finals: dict = {}
    for (rule, _s), rec in zip(rule_cells, recs):
        finals.setdefault(rule, []).append(rec.final_success())
    finals = {rule: sum(v) / len(v) for rule, v in finals.items()}

    ref_rec_final = None
    if reference_plan.kind != "two_stage":
        # reference equals a no-switch run; reuse it as the gain baseline
        ref_cells = [s for s in m.split.dev]
        ref_recs = _fan(
            lambda s: deployment.execute_plan(
                reference_plan, cands, env, s, m.budget, m.deploy_config(),
                method="reference"),
            ref_cells, threads)
        ref_rec_final = sum(r.final_success() for r in ref_recs) / len(ref_recs)
    else:
        # gain baseline: stage-1 trained straight through, no switch
        base_plan = deployment.DeploymentPlan("single",
                                              reference_plan.stage1_id)
        base_recs = _fan(
            lambda s: deployment.execute_plan(
                base_plan, cands, env, s, m.budget, m.deploy_config(),
                method="no_switch_baseline"),
            list(m.split.dev), threads)
        ref_rec_final = sum(r.final_success() for r in base_recs) / len(base_recs)

    failures = {}
    sel_rows = []
    for rule in m.selectors:
        plan = plans[rule]
        failures[rule] = deployment.classify_selector_failure(
            profile, plan, finals[rule], ref_rec_final)
        sel_rows.append((
            rule, plan.kind, plan.stage1_id, plan.stage2_id or "",
            plan.switch_step if plan.switch_step is not None else -1,
            finals[rule], failures[rule] or "", "selector_support",
        ))
    selectors_csv = write_csv(os.path.join(out_dir, "selectors.csv"),
                              _stamp(m, "selectors", root_seed,
                                     "selector_support"), sel_rows)
    selection_path = None
    if freeze_selection:
        rule = deployment.select_rule(finals)
        selection_path = deployment.write_selection(out_dir, rule, m.split,
                                                    finals, m.hash())
    return SelectorOutputs(selectors_csv, plans, finals, failures, selection_path)


def run_heldout_test(m: ExperimentManifest, out_dir: str, root_seed: int,
                     rule: str, threads: int = 1) -> str:
    """Evaluate a previously selected rule on the held-out test seeds.

    Refuses to run without a matching selection manifest in out_dir; refuses
    any seed outside the registered test split.
    """
    if m.split is None:
        raise ValidationError("held-out evaluation needs a dev/test split")
    deployment.check_test_seeds(out_dir, rule, m.split.test, m.split)
    env = m.make_env()
    cands = m.candidates()
    grid = run_verification_grid(m, out_dir, root_seed, threads)
    plan = deployment.apply_selector(rule, grid.profile)
    rows = []
    for seed in m.split.test:
        rec = deployment.execute_plan(plan, cands, env, seed, m.budget,
                                      m.deploy_config(), method=rule)
        r = metrics.compute_metric_row(rec, "heldout_test")
        rows.append((r.method, r.seed, r.consec_max, r.consec_auc, r.full_auc,
                     r.tail_auc, r.recomputed_final, r.last5_mean,
                     r.best_checkpoint_success, r.collapse, r.critic_peak_abs,
                     r.reward_shift, r.switch_count, r.evidence_status))
    path = write_csv(os.path.join(out_dir, "heldout_per_seed.csv"),
                     _stamp(m, "per_seed", root_seed, "heldout_test"), rows)
    return path


# ---------------------------------------------------------------------------
# pool stress


def run_pool_stress(m: ExperimentManifest, k_list, out_dir: str,
                    root_seed: int, threads: int = 1) -> str:
    """Local-vs-downstream ranking agreement as the candidate pool grows."""
    if not k_list:
        raise ValidationError("empty K list")
    _ensure_dir(out_dir)
    env = m.make_env()
    cands = m.candidates()
    ids_in_order = list(cands)
    if len(ids_in_order) < max(k_list):
        raise ValidationError(
            "pool has %d candidates; stress needs >= %d"
            % (len(ids_in_order), max(k_list))
        )
    vcfg = m.verification_config()
    source, _paths = probe_checkpoints(m, root_seed)
    t_star = source.steps()[-1]
    ck = source.checkpoint_at(t_star)
    hor = vcfg.ref_horizon()

    def _downstream(cell):
        cid, seed = cell
        plan = deployment.DeploymentPlan("single", cid)
        rec = deployment.execute_plan(plan, cands, env, seed, m.budget,
                                      m.deploy_config(), method=cid)
        return rec.final_success()

    down_cells = [(cid, s) for cid in ids_in_order for s in m.seeds]
    down_vals = _fan(_downstream, down_cells, threads)
    downstream: dict = {}
    for (cid, _s), v in zip(down_cells, down_vals):
        downstream[cid] = downstream.get(cid, 0.0) + v
    downstream = {cid: v / len(m.seeds) for cid, v in downstream.items()}

    def _rank_ids(scores):
        return sorted(scores, key=lambda c: (-scores[c], c))

    rows = []
    for k in k_list:
        subset = {cid: cands[cid] for cid in ids_in_order[:k]}
        results = verification.fork_verify(ck, env, sorted(subset.items()),
                                           hor, vcfg)
        verdict = verification.aggregate_verdict(results, vcfg)
        local = {cid: verdict.score_of(cid) for cid in subset}
        down_k = {cid: downstream[cid] for cid in subset}
        overhead = sum(f.executed_updates for f in results)
        rows.append((
            k,
            metrics.top1_hit(_rank_ids(local), _rank_ids(down_k)),
            metrics.hit_at_k(_rank_ids(local), _rank_ids(down_k), 3),
            metrics.ranking_spearman(local, down_k),
            overhead,
            "stress_tests",
        ))
    path = write_csv(os.path.join(out_dir, "pool_stress.csv"),
                     _stamp(m, "pool_stress", root_seed, "stress_tests"), rows)
    return path


# ---------------------------------------------------------------------------
# reference-statistics audit


def emit_reference_stats(out_dir: str, root_seed: int = 0):
    """Recompute the embedded reference tables; emit audit CSVs."""
    _ensure_dir(out_dir)
    report = refdata.reproduce_reference_stats()
    stamp_hash = refdata.checksum()[:12]
    agg_rows = [
        (a.method, a.published_mean, a.recomputed_mean, a.published_std,
         a.recomputed_std, a.ci_lo, a.ci_hi, a.published_ci_lo,
         a.published_ci_hi, a.ok)
        for a in report.aggregates
    ]
    pair_rows = [
        (p.comparison, p.published_diff, p.recomputed_diff, p.published_p,
         p.recomputed_p, p.published_dz, p.recomputed_dz, p.ok)
        for p in report.paired
    ]
    agg_csv = write_csv(
        os.path.join(out_dir, "reference_aggregates.csv"),
        Stamp("paper_aggregate", stamp_hash, root_seed, "locked_main"),
        agg_rows)
    pair_csv = write_csv(
        os.path.join(out_dir, "reference_paired.csv"),
        Stamp("paper_paired", stamp_hash, root_seed, "locked_main"),
        pair_rows)
    return report, agg_csv, pair_csv


# ---------------------------------------------------------------------------
# artifact discipline


@dataclass
class DisciplineReport:
    violations: list = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations


# schemas whose rows aggregate across inputs and must carry status explicitly
_STATUS_COLUMN_SCHEMAS = ("per_seed", "aggregate", "paired", "selectors",
                          "pool_stress")


def check_artifact_discipline(out_dir: str) -> DisciplineReport:
    """Report-only audit of an output directory's CSV discipline."""
    report = DisciplineReport()
    csv_paths = []
    for root, _dirs, files in os.walk(out_dir):
        for name in sorted(files):
            if name.endswith(".csv"):
                csv_paths.append(os.path.join(root, name))
    csv_paths.sort()
    has_selection = os.path.exists(os.path.join(out_dir,
                                                deployment.SELECTION_FILE))
    for path in csv_paths:
        rel = os.path.relpath(path, out_dir)
        try:
            stamp, header, rows = read_csv(path)
        except ValidationError as e:
            report.violations.append("%s: unreadable (%s)" % (rel, e))
            continue
        if stamp is None:
            report.violations.append("%s: missing manifest stamp" % rel)
            continue
        if not stamp.manifest_hash:
            report.violations.append("%s: empty manifest hash" % rel)
        statuses = set()
        if "evidence_status" in header:
            idx = header.index("evidence_status")
            for r in rows:
                for s in r[idx].split("+"):
                    statuses.add(s)
        else:
            if stamp.schema in _STATUS_COLUMN_SCHEMAS:
                report.violations.append(
                    "%s: schema %s lacks an evidence_status column"
                    % (rel, stamp.schema)
                )
            statuses.add(stamp.evidence_status)
        for s in sorted(statuses):
            if s and s not in EVIDENCE_STATUSES:
                report.violations.append(
                    "%s: unknown evidence status %r" % (rel, s)
                )
        if "heldout_test" in statuses and not has_selection:
            report.violations.append(
                "%s: held-out test rows without a selection manifest" % rel
            )
    return report
