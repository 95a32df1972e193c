import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bugflow import stats
from bugflow.errors import NotResolvedError
from bugflow.ingest import builtin_workflow, extract_stage_intervals
from bugflow.synth import GeneratorSpec, Sojourn, generate_corpus

from corpora import HOUR, make_bug, table_fixture

# ONAP priority-1 resolution statuses, in counts that round to one-decimal percentages
ONAP_STATUS_COUNTS = {
    "Done": 823,
    "Not a Bug": 34,
    "Duplicate": 23,
    "Unresolved": 19,
    "Won't Do": 10,
    "Cannot Reproduce": 9,
    "Not Done": 3,
    "Recommended": 1,
}
ONAP_STATUS_PERCENT = {
    "Done": 89.3,
    "Not a Bug": 3.7,
    "Duplicate": 2.5,
    "Unresolved": 2.1,
    "Won't Do": 1.1,
    "Cannot Reproduce": 1.0,
    "Not Done": 0.3,
    "Recommended": 0.1,
}


class TestResolutionTime:
    def test_direct(self):
        bug = make_bug("X", [("Open", "Closed", int(73.2 * HOUR))], created=0)
        assert stats.resolution_time(bug) == pytest.approx(73.2)

    def test_not_resolved(self):
        bug = make_bug("X", [("Open", "Resolved", HOUR)])
        with pytest.raises(NotResolvedError, match="NOT_RESOLVED"):
            stats.resolution_time(bug)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 10**6), min_size=1, max_size=8))
    def test_equals_sum_of_bounded_stages(self, gaps):
        cycle = ["In Progress", "Resolved", "Reopened"]
        steps, t, prev = [], 0, "Open"
        for k, gap in enumerate(gaps[:-1]):
            t += gap
            steps.append((prev, cycle[k % 3], t))
            prev = cycle[k % 3]
        steps.append((prev, "Closed", t + gaps[-1]))
        bug = make_bug("X", steps)
        bounded = sum(iv.duration_hours for iv in extract_stage_intervals(bug) if not iv.open_ended)
        assert stats.resolution_time(bug) == pytest.approx(bounded)


class TestStatusTable:
    def test_onap_status_shares(self):
        corpus = [make_bug(f"B{s}{i}", [], status=s) for s, n in ONAP_STATUS_COUNTS.items() for i in range(n)]
        table = stats.resolution_status_table(corpus, {1})
        assert {s: round(p, 1) for (_, s), p in table.items()} == ONAP_STATUS_PERCENT
        assert sum(table.values()) == pytest.approx(100.0)

    def test_singleton(self):
        assert stats.resolution_status_table([make_bug("X", [], status="Fixed", priority=2)], {2}) == {(2, "Fixed"): 100.0}

    def test_empty_stratum_omitted(self, caplog):
        table = stats.resolution_status_table([make_bug("X", [])], {1, 2})
        assert list(table) == [(1, "Done")]
        assert "priority 2" in caplog.text


class TestPaths:
    def test_onap_path_mix(self):
        paths = stats.path_frequencies(table_fixture())
        assert paths[0].path == ("Open", "In Progress", "Closed")
        assert paths[0].fraction == pytest.approx(0.25, abs=0.005)
        assert paths[1].path == ("Open", "Closed") and paths[1].fraction == pytest.approx(0.20)
        assert sum(p.fraction for p in paths) == pytest.approx(1.0)

    def test_singleton(self):
        (only,) = stats.path_frequencies([make_bug("X", [("Open", "Closed", 5)])])
        assert only.fraction == 1.0 and only.count == 1


class TestTransitionStats:
    def test_onap_open_closed(self):
        table = stats.transition_duration_stats(table_fixture())
        s = table[("Open", "Closed")]
        assert (s.mean_hours, s.median_hours, s.count) == (472.91, 73.2, 143)

    def test_counts_equal_transition_total(self):
        corpus = table_fixture()
        table = stats.transition_duration_stats(corpus)
        assert sum(s.count for s in table.values()) == sum(len(b.transitions) for b in corpus)

    def test_singleton(self):
        table = stats.transition_duration_stats([make_bug("X", [("Open", "Closed", 10 * HOUR)])])
        assert table == {("Open", "Closed"): stats.DurationStat(10.0, 10.0, 1)}

    def test_matches_stdlib(self):
        corpus = table_fixture()
        samples = stats.transition_sojourns(corpus)
        for key, s in stats.transition_duration_stats(corpus).items():
            assert s.mean_hours == pytest.approx(statistics.fmean(samples[key]) / 3600)
            assert s.median_hours == pytest.approx(statistics.median(samples[key]) / 3600)

    def test_routing_rows_sum_to_one(self):
        routing = stats.routing_estimates(stats.transition_duration_stats(table_fixture()))
        rows = {}
        for (a, _), p in routing.items():
            rows[a] = rows.get(a, 0.0) + p
        assert all(v == pytest.approx(1.0) for v in rows.values())


def entity_corpus():
    bugs = []
    speeds = {"fast": 1, "mid": 4, "slow": 15}
    n = 0
    for name, factor in speeds.items():
        for priority in (1, 2):
            for k in range(5 + (name == "mid")):
                hours = factor * (10 + k)
                bugs.append(make_bug(f"E{n}", [("Open", "Closed", hours * HOUR)], reporter=name, assignee="dev", priority=priority))
                n += 1
    return bugs


class TestEntities:
    def test_order_and_spread(self):
        result = stats.entity_impact(entity_corpus(), "reporter", top_n=10, order_priority=1)
        assert [e.entity_id for e in result] == ["fast", "mid", "slow"]
        assert result[0].per_priority[1] == (5, 12.0)
        assert stats.median_spread(result, 1) == pytest.approx(15.0)

    def test_top_n_by_volume(self):
        (top,) = stats.entity_impact(entity_corpus(), "reporter", top_n=1)
        assert top.entity_id == "mid" and top.total == 12

    def test_single_entity(self):
        (only,) = stats.entity_impact(entity_corpus(), "assignee")
        assert only.entity_id == "dev"

    def test_missing_order_priority_sorts_last(self):
        corpus = entity_corpus() + [make_bug("Z", [("Open", "Closed", HOUR)], reporter="p3only", priority=3)]
        result = stats.entity_impact(corpus, "reporter", order_priority=2)
        assert result[-1].entity_id == "p3only"


class TestSelfAssignment:
    def test_generator_ground_truth(self):
        wf = builtin_workflow("standard")
        spec = GeneratorSpec(
            workflow=wf,
            routing={"Open": {"Closed": 1.0}},
            sojourn={("Open", "Closed"): Sojourn("exponential", rate=0.1)},
            reporters={f"u{i}": 1.0 for i in range(5)},
            assignees={f"u{i}": 1.0 for i in range(5)},
            self_assign_prob=0.5,
            self_assign_factor=0.5,
            n_bugs=4000,
            seed=5,
        )
        bugs, _ = generate_corpus(spec)
        # the "other" draw can land on the reporter too, which pulls the ratio above 0.5
        result = stats.self_assignment_comparison(bugs)
        for groups in result.values():
            ratio = groups["self"][1] / groups["other"][1]
            assert 0.4 < ratio < 0.65
        assert sum(n for g in result.values() for n, _ in g.values()) == len(bugs)

    def test_all_self_assigned(self):
        bugs = [make_bug(f"S{i}", [("Open", "Closed", HOUR)], reporter="a", assignee="a") for i in range(3)]
        assert stats.self_assignment_comparison(bugs) == {1: {"self": (3, 1.0)}}


class TestOccupancy:
    def test_starts_open_and_terminal_monotone(self):
        curve = stats.occupancy_curve(table_fixture())
        assert curve.grid_hours[0] == 0.0
        for state, fr in curve.per_state_fraction.items():
            assert fr[0] == (1.0 if state == "Open" else 0.0)
        closed = np.array(curve.per_state_fraction["Closed"])
        assert np.all(np.diff(closed) >= 0)
        totals = np.sum([fr for fr in curve.per_state_fraction.values()], axis=0)
        assert np.allclose(totals, 1.0)

    def test_singleton(self):
        curve = stats.occupancy_curve([make_bug("X", [("Open", "Closed", 5 * HOUR)])], [0, 10])
        assert curve.per_state_fraction["Closed"] == (0.0, 1.0)

    def test_reopened_bug_stays_closed(self):
        bug = make_bug("X", [("Open", "Closed", HOUR), ("Closed", "Reopened", 2 * HOUR)])
        curve = stats.occupancy_curve([bug], [0, 1.5, 3])
        assert curve.per_state_fraction["Closed"] == (0.0, 1.0, 1.0)

    def test_censored_bug_counted(self):
        bug = make_bug("X", [("Open", "In Progress", HOUR)])
        curve = stats.occupancy_curve([bug], [0, 2])
        assert curve.per_state_fraction["In Progress"] == (0.0, 1.0)

    def test_default_grid(self):
        grid = stats.default_grid()
        assert grid[0] == 0 and grid[1] == pytest.approx(1.0) and grid[-1] == pytest.approx(1e4) and len(grid) == 201
