"""Corpus cleaning rules.

Bug-level rules (status filter, Tukey fences, inactivity) drop whole bugs.
History-level rules rewrite a single bug's transitions and never change
the time between creation and the terminal transition: interior time that
is removed is always handed to the preceding interval.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from bugflow.errors import DataError
from bugflow.ingest import builtin_workflow, extract_stage_intervals
from bugflow.stats import resolution_time

OUTLIER_MODES = ("none", "mild", "extreme")


@dataclass(frozen=True)
class FilterConfig:
    allowed_statuses: frozenset = frozenset({"Done", "Fixed"})
    transient_threshold_seconds: int = 300
    inactivity_gap_days: int = 30
    outlier_mode: str = "none"

    def __post_init__(self):
        if self.transient_threshold_seconds <= 0:
            raise DataError("transient_threshold_seconds must be positive")
        if self.inactivity_gap_days <= 0:
            raise DataError("inactivity_gap_days must be positive")
        if self.outlier_mode not in OUTLIER_MODES:
            raise DataError(f"outlier_mode must be one of {OUTLIER_MODES}")

    @classmethod
    def from_config(cls, config):
        """Build from the ``filters`` section of a profile config (a dict)."""
        section = dict((config or {}).get("filters") or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise DataError(f"unknown filter settings: {sorted(unknown)}")
        if "allowed_statuses" in section:
            section["allowed_statuses"] = frozenset(section["allowed_statuses"])
        return cls(**section)


@dataclass
class FilterReport:
    input_count: int = 0
    kept_count: int = 0
    removed_by_rule: dict = field(default_factory=dict)
    merged_transient_states: int = 0
    merged_loops: int = 0
    dropped_undefined_states: int = 0
    truncated_tails: int = 0

    def reconciles(self):
        return self.kept_count + sum(self.removed_by_rule.values()) == self.input_count

    def to_json(self):
        return {
            "input_count": self.input_count,
            "kept_count": self.kept_count,
            "removed_by_rule": dict(sorted(self.removed_by_rule.items())),
            "merged_transient_states": self.merged_transient_states,
            "merged_loops": self.merged_loops,
            "dropped_undefined_states": self.dropped_undefined_states,
            "truncated_tails": self.truncated_tails,
        }


def _drop_report(n_in, kept, rule):
    return FilterReport(
        input_count=n_in,
        kept_count=len(kept),
        removed_by_rule={rule: n_in - len(kept)} if n_in - len(kept) else {},
    )


def chain_reports(first, second):
    """Combine the reports of two filters applied one after the other."""
    removed = Counter(first.removed_by_rule)
    removed.update(second.removed_by_rule)
    return FilterReport(
        input_count=first.input_count,
        kept_count=second.kept_count,
        removed_by_rule={k: v for k, v in removed.items() if v},
        merged_transient_states=first.merged_transient_states + second.merged_transient_states,
        merged_loops=first.merged_loops + second.merged_loops,
        dropped_undefined_states=first.dropped_undefined_states + second.dropped_undefined_states,
        truncated_tails=first.truncated_tails + second.truncated_tails,
    )


# --------------------------------------------------------------------------
# bug-level filters


def filter_resolution_status(corpus, allowed=frozenset({"Done", "Fixed"})):
    corpus = list(corpus)
    kept = [b for b in corpus if b.resolution_status in allowed]
    return kept, _drop_report(len(corpus), kept, "resolution_status")


def tukey_fences(values):
    """Return ``(q1, q3, iqr)`` using linear-interpolation quartiles."""
    values = np.asarray(values, dtype=float)
    if values.size < 4:
        raise DataError(f"need at least 4 resolution times for quartiles, got {values.size}")
    q1, q3 = np.percentile(values, [25.0, 75.0])
    return float(q1), float(q3), float(q3 - q1)


def tukey_outlier_filter(corpus, mode, terminal="Closed"):
    """Drop long-lived (and, for ``mild``, very short-lived) bugs.

    ``mild`` keeps resolution times inside the inner fences
    ``[Q1 - 1.5 IQR, Q3 + 1.5 IQR]``; ``extreme`` only drops times above the
    upper outer fence ``Q3 + 3 IQR``.
    """
    corpus = list(corpus)
    if mode == "none":
        return corpus, _drop_report(len(corpus), corpus, "tukey_none")
    if mode not in ("mild", "extreme"):
        raise DataError(f"unknown outlier mode {mode!r}")
    hours = [resolution_time(b, terminal) for b in corpus]
    q1, q3, iqr = tukey_fences(hours)
    if mode == "mild":
        lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        kept = [b for b, h in zip(corpus, hours) if lo <= h <= hi]
    else:
        hi = q3 + 3.0 * iqr
        kept = [b for b, h in zip(corpus, hours) if h <= hi]
    return kept, _drop_report(len(corpus), kept, f"tukey_{mode}")


def max_inactivity_seconds(bug, terminal="Closed"):
    cutoff = next((t.at for t in bug.transitions if t.to_state == terminal), None)
    times = sorted({bug.created_at, *bug.event_times})
    if cutoff is not None:
        times = [t for t in times if t <= cutoff]
    if len(times) < 2:
        return 0
    return int(np.max(np.diff(times)))


def inactivity_filter(corpus, gap_days=30, terminal="Closed"):
    """Drop bugs with any gap longer than ``gap_days`` between recorded edits."""
    corpus = list(corpus)
    limit = gap_days * 24 * 3600
    kept = [b for b in corpus if max_inactivity_seconds(b, terminal) <= limit]
    return kept, _drop_report(len(corpus), kept, "inactivity")


# --------------------------------------------------------------------------
# history rewrites


def _absorb_into_previous(transitions, k):
    """Remove interval ``k`` (k >= 1) and extend interval ``k - 1`` over it."""
    if k < len(transitions):
        transitions[k] = replace(transitions[k], from_state=transitions[k - 1].from_state)
    del transitions[k - 1]


def _truncate(bug, terminal):
    for k, t in enumerate(bug.transitions):
        if t.to_state == terminal:
            dropped = len(bug.transitions) - (k + 1)
            if dropped:
                return bug.with_transitions(bug.transitions[: k + 1]), dropped
            return bug, 0
    return bug, 0


def truncate_after_closed(bug, terminal="Closed"):
    """Make the terminal state absorbing: cut everything after its first entry."""
    return _truncate(bug, terminal)[0]


def _drop_undefined(bug, spec):
    intervals = extract_stage_intervals(bug, spec.initial)
    undefined = [k for k, iv in enumerate(intervals) if iv.state not in spec.states]
    if not undefined:
        return bug, 0
    if undefined[0] == 0:
        raise DataError(
            f"bug {bug.id}: first state {intervals[0].state!r} is undefined; "
            "nothing precedes it to absorb its time"
        )
    transitions = list(bug.transitions)
    for k in reversed(undefined):
        _absorb_into_previous(transitions, k)
    return bug.with_transitions(transitions), len(undefined)


def drop_undefined_states(bug, spec):
    """Remove intervals in states outside ``spec``; their time goes to the previous state."""
    return _drop_undefined(bug, spec)[0]


def _merge_transient(bug, threshold_seconds):
    intervals = extract_stage_intervals(bug)
    # the first interval and the final (open-ended) one are never merged
    short = [
        k
        for k in range(1, len(intervals) - 1)
        if intervals[k].duration_seconds < threshold_seconds
    ]
    if not short:
        return bug, 0
    transitions = list(bug.transitions)
    for k in reversed(short):
        _absorb_into_previous(transitions, k)
    return bug.with_transitions(transitions), len(short)


def merge_transient_states(bug, threshold_seconds=300):
    """Fold interior intervals shorter than the threshold into their predecessor."""
    return _merge_transient(bug, threshold_seconds)[0]


def _merge_loops(bug):
    kept = [t for t in bug.transitions if t.from_state != t.to_state]
    n = len(bug.transitions) - len(kept)
    return (bug.with_transitions(kept), n) if n else (bug, 0)


def merge_loops(bug):
    """Coalesce consecutive intervals in the same state."""
    return _merge_loops(bug)[0]


def apply_standard_pipeline(corpus, config=None, spec=None):
    """Status filter, truncation, undefined states, transient states, loops.

    Loops are merged last since the earlier rewrites can create them.
    """
    config = config or FilterConfig()
    spec = spec or builtin_workflow("standard")
    kept, report = filter_resolution_status(corpus, config.allowed_statuses)
    cleaned = []
    for bug in kept:
        bug, n = _truncate(bug, spec.terminal)
        report.truncated_tails += 1 if n else 0
        bug, n = _drop_undefined(bug, spec)
        report.dropped_undefined_states += n
        bug, n = _merge_transient(bug, config.transient_threshold_seconds)
        report.merged_transient_states += n
        bug, n = _merge_loops(bug)
        report.merged_loops += n
        cleaned.append(bug)
    return cleaned, report


def apply_outlier_filters(corpus, config, terminal="Closed", inactivity=False):
    """Optional prediction-time prefilters: Tukey fences and/or inactivity."""
    corpus = list(corpus)
    report = _drop_report(len(corpus), corpus, "none")
    if config.outlier_mode != "none":
        corpus, step = tukey_outlier_filter(corpus, config.outlier_mode, terminal)
        report = chain_reports(report, step)
    if inactivity:
        corpus, step = inactivity_filter(corpus, config.inactivity_gap_days, terminal)
        report = chain_reports(report, step)
    return corpus, report
