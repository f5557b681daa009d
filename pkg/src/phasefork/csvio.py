"""Stamped CSV interchange.

Every file this package emits starts with a `#` stamp line embedding the
schema name, tool version, source manifest hash, root seed, and evidence
status, so any table can be traced back to the run that produced it.  Rows
are written in a deterministic order by the callers and floats are printed
with repr(), which keeps reruns bitwise identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from . import __version__
from .errors import ValidationError

STAMP_PREFIX = "# phasefork-csv"

# fixed column orders, one per schema
SCHEMAS = {
    "forks": (
        "checkpoint_step", "fork_horizon", "candidate_id", "repeat",
        "score", "consec", "diverged", "executed_updates", "wallclock_s",
    ),
    "verdicts": (
        "checkpoint_step", "fork_horizon", "modal_winner", "rel", "entropy",
        "margin_mean", "margin_lcb95", "informative", "n_repeats", "competence",
    ),
    "per_seed": (
        "method", "seed", "consec_max", "consec_auc", "full_auc", "tail_auc",
        "recomputed_final", "last5_mean", "best_checkpoint_success", "collapse",
        "critic_peak_abs", "reward_shift", "switch_count", "evidence_status",
    ),
    "aggregate": ("method", "n", "mean", "std", "ci_lo", "ci_hi", "evidence_status"),
    "paired": ("comparison", "mean_diff", "p", "d_z", "evidence_status"),
    "curve": ("step", "success", "reward_mean", "critic_peak_abs_so_far"),
    "selectors": (
        "rule", "plan_kind", "stage1", "stage2", "switch_step",
        "final_mean", "failure_mode", "evidence_status",
    ),
    "pool_stress": (
        "pool_k", "top1_hit", "hit_at_3", "spearman",
        "overhead_updates", "evidence_status",
    ),
    "paper_aggregate": (
        "method", "published_mean", "recomputed_mean", "published_std",
        "recomputed_std", "ci_lo", "ci_hi", "published_ci_lo",
        "published_ci_hi", "ok",
    ),
    "paper_paired": (
        "comparison", "published_diff", "recomputed_diff", "published_p",
        "recomputed_p", "published_dz", "recomputed_dz", "ok",
    ),
}


@dataclass(frozen=True)
class Stamp:
    schema: str
    manifest_hash: str
    root_seed: int
    evidence_status: str
    version: str = __version__

    def line(self) -> str:
        return ("%s schema=%s version=%s manifest=%s root_seed=%d "
                "evidence_status=%s" % (STAMP_PREFIX, self.schema, self.version,
                                        self.manifest_hash, self.root_seed,
                                        self.evidence_status))


def fmt_value(v) -> str:
    # bool before int: bool is an int subclass
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    s = str(v)
    if "," in s or "\n" in s or "#" in s:
        raise ValidationError("CSV field %r needs quoting; not supported" % s)
    return s


def write_csv(path: str, stamp: Stamp, rows, header=None) -> str:
    """Write a stamped CSV; header defaults to the schema's column order."""
    if header is None:
        if stamp.schema not in SCHEMAS:
            raise ValidationError("unknown CSV schema %r" % stamp.schema)
        header = SCHEMAS[stamp.schema]
    lines = [stamp.line(), ",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValidationError(
                "row width %d != header width %d in %s"
                % (len(row), len(header), os.path.basename(path))
            )
        lines.append(",".join(fmt_value(v) for v in row))
    data = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(data)
    return path


def parse_stamp(line: str) -> Stamp:
    if not line.startswith(STAMP_PREFIX):
        raise ValidationError("missing stamp line")
    fields = {}
    for tok in line[len(STAMP_PREFIX):].split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            fields[k] = v
    for key in ("schema", "version", "manifest", "root_seed", "evidence_status"):
        if key not in fields:
            raise ValidationError("stamp line missing %r" % key)
    return Stamp(
        schema=fields["schema"],
        manifest_hash=fields["manifest"],
        root_seed=int(fields["root_seed"]),
        evidence_status=fields["evidence_status"],
        version=fields["version"],
    )


def read_csv(path: str):
    """-> (stamp or None, header, rows); `#` lines beyond the stamp skipped."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = [ln.rstrip("\n") for ln in fh]
    stamp = None
    header = None
    rows = []
    for ln in raw:
        if not ln:
            continue
        if ln.startswith("#"):
            if stamp is None and ln.startswith(STAMP_PREFIX):
                stamp = parse_stamp(ln)
            continue
        cells = ln.split(",")
        if header is None:
            header = cells
        else:
            rows.append(cells)
    if header is None:
        raise ValidationError("no header row in %s" % path)
    return stamp, header, rows


def rows_as_dicts(header, rows):
    return [dict(zip(header, r)) for r in rows]
