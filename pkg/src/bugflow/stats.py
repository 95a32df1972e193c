"""Descriptive workflow statistics over a cleaned bug corpus.

All durations are reported in hours. Medians follow the usual rule: the
middle order statistic for odd counts, the mean of the two middle ones for
even counts.
"""

from __future__ import annotations

import logging
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from bugflow.errors import NotResolvedError
from bugflow.ingest import UNASSIGNED, extract_stage_intervals

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DurationStat:
    mean_hours: float
    median_hours: float
    count: int


@dataclass(frozen=True)
class PathCount:
    path: tuple
    count: int
    fraction: float


@dataclass(frozen=True)
class OccupancyCurve:
    grid_hours: tuple
    per_state_fraction: dict


@dataclass(frozen=True)
class EntityStat:
    entity_id: str
    per_priority: dict  # priority -> (count, median_hours)

    @property
    def total(self):
        return sum(n for n, _ in self.per_priority.values())


def resolution_time(bug, terminal="Closed"):
    """Hours from creation to the first entry into ``terminal``."""
    for t in bug.transitions:
        if t.to_state == terminal:
            return (t.at - bug.created_at) / 3600.0
    raise NotResolvedError(bug.id, terminal)


def resolved_hours(corpus, terminal="Closed"):
    """``[(bug, hours)]`` for bugs that reach ``terminal``; others are skipped."""
    out = []
    for bug in corpus:
        try:
            out.append((bug, resolution_time(bug, terminal)))
        except NotResolvedError:
            continue
    return out


def resolution_status_table(corpus, priorities=(1, 2)):
    """Percentage of each resolution status within each priority stratum.

    Returns ``{(priority, status): percent}``. Empty strata are left out and
    reported through the module logger.
    """
    table = {}
    for p in sorted(priorities):
        counts = Counter(b.resolution_status for b in corpus if b.priority == p)
        total = sum(counts.values())
        if not total:
            log.warning("priority %s: no bugs, omitted from status table", p)
            continue
        for status, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            table[(p, status)] = 100.0 * n / total
    return table


def bug_path(bug, initial="Open"):
    head = bug.transitions[0].from_state if bug.transitions else initial
    return (head,) + tuple(t.to_state for t in bug.transitions)


def path_frequencies(corpus, initial="Open"):
    counts = Counter(bug_path(b, initial) for b in corpus)
    total = sum(counts.values())
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [PathCount(path, n, n / total) for path, n in ordered]


def transition_sojourns(corpus):
    """Seconds spent in ``from`` right before each observed ``from -> to`` step."""
    samples = defaultdict(list)
    for bug in corpus:
        start = bug.created_at
        for t in bug.transitions:
            samples[(t.from_state, t.to_state)].append(t.at - start)
            start = t.at
    return samples


def _duration_stat(seconds):
    # integer seconds keep the sum exact; convert only at the end
    n = len(seconds)
    return DurationStat(
        mean_hours=(sum(seconds) / n) / 3600.0,
        median_hours=statistics.median(seconds) / 3600.0,
        count=n,
    )


def transition_duration_stats(corpus):
    """``{(from, to): DurationStat}`` over every observed transition, sorted by key."""
    samples = transition_sojourns(corpus)
    return {key: _duration_stat(samples[key]) for key in sorted(samples)}


def routing_estimates(stats):
    """Empirical next-state probabilities ``n_ij / sum_j n_ij`` from duration stats."""
    totals = Counter()
    for (a, _), s in stats.items():
        totals[a] += s.count
    return {(a, b): s.count / totals[a] for (a, b), s in stats.items()}


def entity_impact(corpus, role="reporter", top_n=10, order_priority=2, terminal="Closed"):
    """Per-priority bug counts and median resolution hours of the busiest entities.

    The ``top_n`` entities with most bugs in ``role`` (ties by id) are
    returned in ascending order of their median for ``order_priority``;
    entities with no bug of that priority come last.
    """
    if role not in ("reporter", "assignee"):
        raise ValueError(f"role must be reporter or assignee, got {role!r}")
    attr = "reporter_id" if role == "reporter" else "assignee_id"
    grouped = defaultdict(lambda: defaultdict(list))
    for bug, hours in resolved_hours(corpus, terminal):
        entity = getattr(bug, attr)
        if entity == UNASSIGNED:
            continue
        grouped[entity][bug.priority].append(hours)
    ranked = sorted(grouped, key=lambda e: (-sum(len(v) for v in grouped[e].values()), e))
    if len(ranked) < top_n:
        log.warning("only %d %ss available, fewer than top_n=%d", len(ranked), role, top_n)
    chosen = []
    for entity in ranked[:top_n]:
        per = {
            p: (len(v), float(statistics.median(v)))
            for p, v in sorted(grouped[entity].items())
        }
        chosen.append(EntityStat(entity, per))

    def order_key(es):
        if order_priority in es.per_priority:
            return (0, es.per_priority[order_priority][1], es.entity_id)
        return (1, 0.0, es.entity_id)

    return sorted(chosen, key=order_key)


def median_spread(entity_stats, priority):
    """Slowest-to-fastest ratio of per-entity medians for one priority."""
    medians = [es.per_priority[priority][1] for es in entity_stats if priority in es.per_priority]
    if len(medians) < 2 or min(medians) <= 0:
        return float("nan")
    return max(medians) / min(medians)


def self_assignment_comparison(corpus, terminal="Closed"):
    """Compare self-assigned bugs against bugs handed to someone else.

    Returns ``{priority: {"self": (count, median_hours), "other": (...)}}``.
    Unassigned bugs are skipped; empty groups are omitted.
    """
    groups = defaultdict(lambda: defaultdict(list))
    skipped = 0
    for bug, hours in resolved_hours(corpus, terminal):
        if bug.assignee_id == UNASSIGNED:
            skipped += 1
            continue
        group = "self" if bug.reporter_id == bug.assignee_id else "other"
        groups[bug.priority][group].append(hours)
    if skipped:
        log.warning("%d unassigned bugs left out of the self-assignment comparison", skipped)
    out = {}
    for p in sorted(groups):
        out[p] = {}
        for g in ("self", "other"):
            values = groups[p].get(g)
            if not values:
                log.warning("priority %s: empty %r group omitted", p, g)
                continue
            out[p][g] = (len(values), float(statistics.median(values)))
    return out


def default_grid():
    """t=0 followed by 200 log-spaced points from 1 h to 10,000 h."""
    return (0.0,) + tuple(float(x) for x in np.logspace(0.0, 4.0, 200))


def occupancy_curve(corpus, grid_hours=None, terminal="Closed", initial="Open"):
    """Fraction of bugs in each state at each offset since creation.

    Once a bug first enters ``terminal`` it is counted there for good.
    """
    grid = np.asarray(default_grid() if grid_hours is None else grid_hours, dtype=float)
    offsets_s = grid * 3600.0
    corpus = list(corpus)
    states = {initial}
    per_bug = []
    for bug in corpus:
        intervals = extract_stage_intervals(bug, initial)
        names = [iv.state for iv in intervals]
        if terminal in names:
            names = names[: names.index(terminal) + 1]
        states.update(names)
        starts = np.array([iv.entered_at - bug.created_at for iv in intervals[1 : len(names)]])
        idx = np.searchsorted(starts, offsets_s, side="right")
        per_bug.append((names, idx))
    ordered = sorted(states, key=lambda s: (s != initial, s == terminal, s))
    index = {s: i for i, s in enumerate(ordered)}
    counts = np.zeros((len(ordered), grid.size))
    cols = np.arange(grid.size)
    for names, idx in per_bug:
        rows = np.array([index[s] for s in names])[idx]
        counts[rows, cols] += 1
    n = max(len(corpus), 1)
    return OccupancyCurve(
        grid_hours=tuple(float(g) for g in grid),
        per_state_fraction={s: tuple(float(v) for v in counts[index[s]] / n) for s in ordered},
    )
