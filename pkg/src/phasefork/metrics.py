"""Run-level and pool-level outcome metrics.

Curves are [(step, value)] samples at the evaluation cadence.  AUC metrics
use the trapezoid rule normalized by the covered step span so curves with
different budgets stay comparable.  Collapse flags runs that were once
competent but end degraded; the thresholds are part of the published
definitions and are module constants here.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError
from . import stats

COLLAPSE_BEST = 0.3
COLLAPSE_TAIL = 0.05
TAIL_FRACTION = 0.2
LAST_K = 5
REWARD_SHIFT_WINDOW = 10


def consec_max_from_flags(flags, horizon: int) -> float:
    """Longest run of successful steps, normalized by the horizon."""
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    run = 0
    best = 0
    for f in flags:
        if f > 0.5:
            run += 1
            if run > best:
                best = run
        else:
            run = 0
    return best / float(horizon)


def _trapezoid_norm(curve) -> float:
    """Trapezoid integral of a (step, value) curve normalized by its span."""
    if len(curve) == 1:
        return curve[0][1]
    area = 0.0
    for (s0, v0), (s1, v1) in zip(curve, curve[1:]):
        if s1 < s0:
            raise ValidationError("curve steps must be nondecreasing")
        area += (v0 + v1) * 0.5 * (s1 - s0)
    span = curve[-1][0] - curve[0][0]
    if span <= 0:
        return curve[-1][1]
    return area / span


@dataclass(frozen=True)
class TailMetrics:
    recomputed_final: float
    last5_mean: float
    tail_auc: float
    full_auc: float
    best: float


def tail_metrics(curve) -> TailMetrics:
    if not curve:
        raise ValidationError("empty curve")
    final = curve[-1][1]
    lastk = [v for _s, v in curve[-LAST_K:]]
    last5 = stats.mean(lastk)
    best = max(v for _s, v in curve)
    full = _trapezoid_norm(curve)
    cutoff = curve[-1][0] - TAIL_FRACTION * (curve[-1][0] - curve[0][0])
    tail = [(s, v) for s, v in curve if s >= cutoff]
    tail_auc = _trapezoid_norm(tail) if tail else final
    return TailMetrics(final, last5, tail_auc, full, best)


def collapse_indicator(curve) -> int:
    """1 when the run was once good (best >= 0.3) but ends bad (last-5 <= 0.05)."""
    tm = tail_metrics(curve)
    return 1 if (tm.best >= COLLAPSE_BEST and tm.last5_mean <= COLLAPSE_TAIL) else 0


def consec_max_over_curve(consec_curve) -> float:
    """Run-level sustained-success score: max of the consec curve."""
    if not consec_curve:
        raise ValidationError("empty curve")
    return max(v for _s, v in consec_curve)


def reward_shift(reward_means, switch_update: int,
                 window: int = REWARD_SHIFT_WINDOW) -> float:
    """|mean reward just after the switch - just before|, window-clamped."""
    if not 0 <= switch_update <= len(reward_means):
        raise ValidationError("switch index outside the run")
    before = reward_means[max(0, switch_update - window):switch_update]
    after = reward_means[switch_update:switch_update + window]
    if not before or not after:
        return 0.0
    d = stats.mean(after) - stats.mean(before)
    return d if d >= 0.0 else -d


def winner_flip_rate(verdicts) -> float:
    """Fraction of adjacent informative-verdict pairs whose winners differ.

    Verdicts must share one fork horizon and arrive sorted by checkpoint
    step; non-informative entries are skipped entirely.
    """
    horizons = {v.fork_horizon for v in verdicts}
    if len(horizons) > 1:
        raise ValidationError(
            "flip rate is defined at a fixed fork horizon (got %s)"
            % sorted(horizons)
        )
    inf = [v for v in verdicts if v.informative]
    if len(inf) < 2:
        return 0.0
    flips = 0
    for a, b in zip(inf, inf[1:]):
        if a.modal_winner != b.modal_winner:
            flips += 1
    return flips / (len(inf) - 1)


# ---------------------------------------------------------------------------
# pool-ranking agreement


def top1_hit(local_ranking, downstream_ranking) -> int:
    if not local_ranking or not downstream_ranking:
        raise ValidationError("empty ranking")
    return 1 if local_ranking[0] == downstream_ranking[0] else 0


def hit_at_k(local_ranking, downstream_ranking, k: int = 3) -> int:
    if not local_ranking or not downstream_ranking:
        raise ValidationError("empty ranking")
    return 1 if downstream_ranking[0] in local_ranking[:k] else 0


def ranking_spearman(local_scores: dict, downstream_scores: dict) -> float:
    """Spearman rho between two id -> score maps over their shared ids."""
    ids = sorted(set(local_scores) & set(downstream_scores))
    if len(ids) < 2:
        return 0.0
    return stats.spearman_rho(
        [local_scores[i] for i in ids], [downstream_scores[i] for i in ids]
    )


@dataclass(frozen=True)
class MetricRow:
    """Published per-run outcome row."""

    method: str
    seed: int
    consec_max: float
    consec_auc: float
    full_auc: float
    tail_auc: float
    recomputed_final: float
    last5_mean: float
    best_checkpoint_success: float
    collapse: int
    critic_peak_abs: float
    reward_shift: float
    switch_count: int
    evidence_status: str

    def finite(self) -> bool:
        for v in (self.consec_max, self.consec_auc, self.full_auc,
                  self.tail_auc, self.recomputed_final, self.last5_mean,
                  self.best_checkpoint_success, self.critic_peak_abs,
                  self.reward_shift):
            if v != v or v in (float("inf"), float("-inf")):
                return False
        return True


def compute_metric_row(record, evidence_status: str) -> MetricRow:
    """Distill one RunRecord into its published row."""
    curve = [(s, v) for s, v, _c in record.curve]
    consec_curve = [(s, c) for s, _v, c in record.curve]
    tm = tail_metrics(curve)
    shift = 0.0
    if record.switch_events:
        shift = reward_shift(record.reward_mean, record.switch_events[0][0])
    row = MetricRow(
        method=record.method,
        seed=record.seed,
        consec_max=consec_max_over_curve(consec_curve),
        consec_auc=_trapezoid_norm(consec_curve),
        full_auc=tm.full_auc,
        tail_auc=tm.tail_auc,
        recomputed_final=tm.recomputed_final,
        last5_mean=tm.last5_mean,
        best_checkpoint_success=tm.best,
        collapse=collapse_indicator(curve),
        critic_peak_abs=max(record.critic_absmax) if record.critic_absmax else 0.0,
        reward_shift=shift,
        switch_count=len(record.switch_events),
        evidence_status=evidence_status,
    )
    if not row.finite():
        raise ValidationError("non-finite metric row for %s/%d"
                              % (record.method, record.seed))
    return row
