"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 protocol violation, 4 training
divergence.  Every data-producing subcommand takes --manifest/--out-dir/
--root-seed/--threads and stamps its outputs with the manifest hash, so a
result directory is always traceable to the exact inputs that made it.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__, backend_name, deployment, harness, plots
from .csvio import read_csv, rows_as_dicts
from .errors import PhaseforkError, ValidationError
from .manifest import load_manifest


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="phasefork",
        description="Fork-verified reward-hypothesis deployment toolkit",
    )
    p.add_argument("--version", action="version",
                   version="phasefork %s (backend: %s)" % (__version__,
                                                           backend_name()))
    p.add_argument("--manifest", help="experiment manifest JSON")
    p.add_argument("--out-dir", default="out", help="output directory")
    p.add_argument("--root-seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", help="train the probe learner to the full budget")
    sub.add_parser("verify-grid",
                   help="fork-verify every probed checkpoint and horizon")
    sub.add_parser("profile",
                   help="verification grid plus the deployment decision")

    dep = sub.add_parser("deploy", help="execute the manifest's locked methods")
    dep.add_argument("--heldout-rule",
                     help="instead: evaluate this selector rule on the "
                          "held-out test seeds (requires a selection manifest)")

    sel = sub.add_parser("selectors",
                         help="compare selection rules on the dev seeds")
    sel.add_argument("--freeze-selection", action="store_true",
                     help="write the dev-phase selection manifest")

    ps = sub.add_parser("pool-stress",
                        help="ranking agreement as the candidate pool grows")
    ps.add_argument("--k", type=int, nargs="+", default=[3, 5, 10],
                    help="pool sizes to stress")

    st = sub.add_parser("stats",
                        help="recompute aggregates and paired tests from a "
                             "per-seed CSV")
    st.add_argument("--input", required=True, help="per_seed.csv path")

    sub.add_parser("reproduce-paper-stats",
                   help="audit the embedded reference tables end to end")
    sub.add_parser("audit", help="check artifact discipline of an out dir")
    sub.add_parser("plot", help="render SVG figures from an out dir's CSVs")
    return p


def _need_manifest(args):
    if not args.manifest:
        raise ValidationError("%s requires --manifest" % args.command)
    return load_manifest(args.manifest)


def _cmd_train(args) -> int:
    m = _need_manifest(args)
    out = harness.run_train(m, args.out_dir, args.root_seed)
    print("trained %d updates; final success %.4f"
          % (m.budget, out["final_success"]))
    print("curve: %s" % out["curve_csv"])
    for step in sorted(out["checkpoints"]):
        print("checkpoint %d: %s" % (step, out["checkpoints"][step]))
    return 0


def _cmd_verify_grid(args) -> int:
    m = _need_manifest(args)
    grid = harness.run_verification_grid(m, args.out_dir, args.root_seed,
                                         args.threads)
    n_inf = sum(
        1 for e in grid.profile.entries
        for hor in m.fork_horizons if e.verdicts[hor].informative
    )
    print("grid: %d checkpoints x %d horizons; %d informative verdicts"
          % (len(grid.profile.entries), len(m.fork_horizons), n_inf))
    print("forks: %s" % grid.forks_csv)
    print("verdicts: %s" % grid.verdicts_csv)
    return 0


def _cmd_profile(args) -> int:
    m = _need_manifest(args)
    _grid, plan, profile_path, plan_path = harness.run_profile(
        m, args.out_dir, args.root_seed, args.threads)
    if plan.kind == "two_stage":
        print("plan: two_stage %s -> %s at t=%d"
              % (plan.stage1_id, plan.stage2_id, plan.switch_step))
    else:
        print("plan: %s %s" % (plan.kind, plan.stage1_id))
    print("profile: %s" % profile_path)
    print("plan file: %s" % plan_path)
    return 0


def _cmd_deploy(args) -> int:
    m = _need_manifest(args)
    if args.heldout_rule:
        path = harness.run_heldout_test(m, args.out_dir, args.root_seed,
                                        args.heldout_rule, args.threads)
        print("held-out rows: %s" % path)
        return 0
    out = harness.run_locked_comparison(m, args.out_dir, args.root_seed,
                                        args.threads)
    print("locked comparison: %d rows" % len(out.rows))
    for path in (out.per_seed_csv, out.aggregate_csv, out.paired_csv):
        print("wrote %s" % path)
    return 0


def _cmd_selectors(args) -> int:
    m = _need_manifest(args)
    out = harness.run_selectors(m, args.out_dir, args.root_seed, args.threads,
                                freeze_selection=args.freeze_selection)
    for rule in m.selectors:
        plan = out.plans[rule]
        tag = out.failures[rule] or "ok"
        print("%-22s %-10s final %.4f  %s"
              % (rule, plan.kind, out.finals[rule], tag))
    if out.selection_path:
        print("selection: %s" % out.selection_path)
    return 0


def _cmd_pool_stress(args) -> int:
    m = _need_manifest(args)
    path = harness.run_pool_stress(m, args.k, args.out_dir, args.root_seed,
                                   args.threads)
    print("pool stress: %s" % path)
    return 0


def _cmd_stats(args) -> int:
    m = _need_manifest(args)
    from . import stats as st
    from .csvio import write_csv, Stamp
    from .rng import derive, hash_tag
    stamp_in, header, raw = read_csv(args.input)
    rows = rows_as_dicts(header, raw)
    for col in ("method", "seed", "consec_max"):
        if col not in header:
            raise ValidationError("stats input lacks column %r" % col)
    by_method: dict = {}
    for r in rows:
        by_method.setdefault(r["method"], {})[int(r["seed"])] = float(r["consec_max"])
    harness._ensure_dir(args.out_dir)
    agg_rows = []
    for name in sorted(by_method):
        vals = [by_method[name][s] for s in sorted(by_method[name])]
        agg = st.aggregate(vals, m.bootstrap_b,
                           derive(args.root_seed, hash_tag("aggregate:%s" % name)))
        agg_rows.append((name, agg.n, agg.mean, agg.std, agg.ci_lo, agg.ci_hi,
                         m.evidence_status))
    agg_csv = write_csv(os.path.join(args.out_dir, "aggregate_recomputed.csv"),
                        Stamp("aggregate", m.hash(), args.root_seed,
                              m.evidence_status), agg_rows)
    paired_rows = []
    for a, b in m.paired:
        if a not in by_method or b not in by_method:
            raise ValidationError("paired methods %r, %r not in input" % (a, b))
        seeds = sorted(set(by_method[a]) & set(by_method[b]))
        res = st.paired_compare([by_method[a][s] for s in seeds],
                                [by_method[b][s] for s in seeds])
        paired_rows.append(("%s_vs_%s" % (a, b), res.mean_diff, res.p_value,
                            res.d_z, m.evidence_status))
    paired_csv = write_csv(os.path.join(args.out_dir, "paired_recomputed.csv"),
                           Stamp("paired", m.hash(), args.root_seed,
                                 m.evidence_status), paired_rows)
    print("wrote %s" % agg_csv)
    print("wrote %s" % paired_csv)
    return 0


def _cmd_reproduce(args) -> int:
    report, agg_csv, pair_csv = harness.emit_reference_stats(args.out_dir,
                                                             args.root_seed)
    for ln in report.lines():
        print(ln)
    print("wrote %s" % agg_csv)
    print("wrote %s" % pair_csv)
    print("reference audit: %s" % ("all ok" if report.all_ok
                                   else "MISMATCHES PRESENT (see above)"))
    return 0


def _cmd_audit(args) -> int:
    report = harness.check_artifact_discipline(args.out_dir)
    if report.clean:
        print("artifact discipline: clean")
    else:
        for v in report.violations:
            print("violation: %s" % v)
        print("%d violation(s)" % len(report.violations))
    return 0


def _cmd_plot(args) -> int:
    curve_dir = os.path.join(args.out_dir, harness.CURVE_DIR)
    curves = []
    if os.path.isdir(curve_dir):
        for name in sorted(os.listdir(curve_dir)):
            if not name.endswith(".csv"):
                continue
            _stamp, header, raw = read_csv(os.path.join(curve_dir, name))
            if "step" not in header or "success" not in header:
                raise ValidationError(
                    "curve CSV %s lacks step/success columns (has: %s)"
                    % (name, ", ".join(header))
                )
            si, vi = header.index("step"), header.index("success")
            pts = [(int(r[si]), float(r[vi])) for r in raw]
            curves.append((name[:-4], pts))
    wrote = []
    if curves:
        path = os.path.join(args.out_dir, "curves.svg")
        plots.write_svg(path, plots.svg_learning_curves(curves))
        wrote.append(path)
    verdicts_csv = os.path.join(args.out_dir, "verdicts.csv")
    if os.path.exists(verdicts_csv):
        _stamp, header, raw = read_csv(verdicts_csv)
        need = ("checkpoint_step", "fork_horizon", "modal_winner", "rel",
                "informative")
        for col in need:
            if col not in header:
                raise ValidationError(
                    "verdict CSV lacks column %r (has: %s)"
                    % (col, ", ".join(header))
                )
        idx = {c: header.index(c) for c in need}
        cells = [
            (int(r[idx["checkpoint_step"]]), int(r[idx["fork_horizon"]]),
             r[idx["modal_winner"]], float(r[idx["rel"]]),
             r[idx["informative"]] == "true")
            for r in raw
        ]
        path = os.path.join(args.out_dir, "verdicts.svg")
        plots.write_svg(path, plots.svg_verdict_heatmap(cells))
        wrote.append(path)
    if not wrote:
        raise ValidationError(
            "nothing to plot in %s (no curves/ or verdicts.csv)" % args.out_dir
        )
    for path in wrote:
        print("wrote %s" % path)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "verify-grid": _cmd_verify_grid,
    "profile": _cmd_profile,
    "deploy": _cmd_deploy,
    "selectors": _cmd_selectors,
    "pool-stress": _cmd_pool_stress,
    "stats": _cmd_stats,
    "reproduce-paper-stats": _cmd_reproduce,
    "audit": _cmd_audit,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except PhaseforkError as e:
        print("error: %s" % e, file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
