import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bugflow.errors import DataError
from bugflow.filters import (
    FilterConfig,
    apply_outlier_filters,
    apply_standard_pipeline,
    drop_undefined_states,
    filter_resolution_status,
    inactivity_filter,
    merge_loops,
    merge_transient_states,
    truncate_after_closed,
    tukey_fences,
    tukey_outlier_filter,
)
from bugflow.ingest import builtin_workflow
from bugflow.stats import resolution_time

from corpora import DAY, FILTER_EXPECTED_REPORT, HOUR, filter_fixture, make_bug

STANDARD = builtin_workflow("standard")


def steps_of(bug):
    return [(t.from_state, t.to_state, t.at - bug.created_at) for t in bug.transitions]


def closed_after(hours_list):
    return [make_bug(f"B{i}", [("Open", "Closed", int(h * HOUR))], created=i * DAY) for i, h in enumerate(hours_list)]


class TestResolutionStatus:
    def test_keeps_allowed(self):
        statuses = ["Done"] * 8 + ["Duplicate", "Unresolved"]
        corpus = [make_bug(f"B{i}", [], status=s) for i, s in enumerate(statuses)]
        kept, report = filter_resolution_status(corpus)
        assert len(kept) == 8
        assert report.removed_by_rule == {"resolution_status": 2}
        assert report.reconciles()

    def test_default_allowed(self):
        assert FilterConfig().allowed_statuses == {"Done", "Fixed"}

    def test_empty(self):
        kept, report = filter_resolution_status([])
        assert kept == [] and report.input_count == 0 and report.kept_count == 0


class TestRewrites:
    def test_truncate_after_closed(self):
        bug = make_bug("X", [("Open", "Closed", 5 * HOUR), ("Closed", "Reopened", 900 * HOUR), ("Reopened", "Closed", 910 * HOUR)])
        assert steps_of(truncate_after_closed(bug)) == [("Open", "Closed", 5 * HOUR)]

    def test_truncate_noops(self):
        never = make_bug("X", [("Open", "In Progress", HOUR)])
        single = make_bug("Y", [("Open", "Closed", HOUR)])
        assert truncate_after_closed(never) == never
        assert truncate_after_closed(single) == single

    def test_undefined_state_folds_into_previous(self):
        bug = make_bug("X", [("Open", "Weird", 10 * HOUR), ("Weird", "Closed", 12 * HOUR)], created=0)
        assert steps_of(drop_undefined_states(bug, STANDARD)) == [("Open", "Closed", 12 * HOUR)]

    def test_defined_states_unchanged(self):
        bug = make_bug("X", [("Open", "In Progress", HOUR), ("In Progress", "Closed", 2 * HOUR)])
        assert drop_undefined_states(bug, STANDARD) == bug

    def test_consecutive_undefined_states(self):
        bug = make_bug("X", [("Open", "In Progress", 1 * HOUR), ("In Progress", "W1", 2 * HOUR), ("W1", "W2", 3 * HOUR), ("W2", "Closed", 4 * HOUR)])
        # oracle: remove one undefined interval at a time until none are left
        expected = bug
        while any(t.to_state not in STANDARD.states for t in expected.transitions):
            k = next(i for i, t in enumerate(expected.transitions) if t.to_state not in STANDARD.states)
            ts = list(expected.transitions)
            ts[k + 1] = ts[k + 1].__class__(ts[k].from_state, ts[k + 1].to_state, ts[k + 1].at, ts[k + 1].actor_id)
            del ts[k]
            expected = expected.with_transitions(ts)
        got = drop_undefined_states(bug, STANDARD)
        assert got == expected
        assert steps_of(got) == [("Open", "In Progress", HOUR), ("In Progress", "Closed", 4 * HOUR)]

    def test_undefined_first_state_is_an_error(self):
        bug = make_bug("X", [("ToDo", "Closed", HOUR)])
        with pytest.raises(DataError, match="undefined"):
            drop_undefined_states(bug, STANDARD)

    def test_transient_state_merged(self):
        bug = make_bug("X", [("Open", "In Progress", 10 * HOUR), ("In Progress", "Closed", 10 * HOUR + 60)], created=0)
        assert steps_of(merge_transient_states(bug, 300)) == [("Open", "Closed", 10 * HOUR + 60)]

    def test_long_states_unchanged(self):
        bug = make_bug("X", [("Open", "In Progress", HOUR), ("In Progress", "Closed", HOUR + 300)])
        assert merge_transient_states(bug, 300) == bug

    def test_loops(self):
        bug = make_bug("X", [("Open", "Open", 5), ("Open", "Closed", 8)], created=0)
        assert steps_of(merge_loops(bug)) == [("Open", "Closed", 8)]
        triple = make_bug("Y", [("A", "A", 1), ("A", "A", 2), ("A", "B", 3)])
        assert steps_of(merge_loops(triple)) == [("A", "B", 3)]
        assert merge_loops(merge_loops(triple)) == merge_loops(triple)


class TestPipeline:
    def test_fixture(self):
        corpus, expected = filter_fixture()
        cleaned, report = apply_standard_pipeline(corpus, FilterConfig(), STANDARD)
        assert cleaned == expected
        assert report.to_json() == FILTER_EXPECTED_REPORT
        assert report.reconciles()

    def test_idempotent(self):
        corpus, _ = filter_fixture()
        once, _ = apply_standard_pipeline(corpus, FilterConfig(), STANDARD)
        twice, report = apply_standard_pipeline(once, FilterConfig(), STANDARD)
        assert twice == once
        assert report.to_json() == {
            "input_count": 9,
            "kept_count": 9,
            "removed_by_rule": {},
            "merged_transient_states": 0,
            "merged_loops": 0,
            "dropped_undefined_states": 0,
            "truncated_tails": 0,
        }

    def test_resolution_times_preserved(self):
        corpus, _ = filter_fixture()
        cleaned, _ = apply_standard_pipeline(corpus, FilterConfig(), STANDARD)
        before = {b.id: resolution_time(b) for b in corpus}
        assert all(resolution_time(b) == before[b.id] for b in cleaned)

    def test_config_from_profile(self):
        cfg = FilterConfig.from_config({"filters": {"transient_threshold_seconds": 60, "allowed_statuses": ["Fixed"]}})
        assert cfg.transient_threshold_seconds == 60 and cfg.allowed_statuses == {"Fixed"}
        with pytest.raises(DataError):
            FilterConfig.from_config({"filters": {"nonsense": 1}})


def quartiles(values):
    # independent oracle: the inclusive method is linear interpolation between order statistics
    q1, _, q3 = statistics.quantiles(values, n=4, method="inclusive")
    return q1, q3


class TestTukey:
    def test_fences_match_oracle(self):
        values = [1.0, 2.0, 2.0, 2.5, 3.0, 3.0, 3.0, 3.5, 961.0]
        q1, q3, iqr = tukey_fences(values)
        assert (q1, q3) == pytest.approx(quartiles(values))
        assert iqr == pytest.approx(q3 - q1)

    def test_mild_drops_large_value(self):
        corpus = closed_after(list(range(1, 21)) + [1000])
        kept, report = tukey_outlier_filter(corpus, "mild")
        assert len(kept) == 20
        assert report.removed_by_rule == {"tukey_mild": 1}

    def test_uniform_times_keep_everything(self):
        corpus = closed_after([5] * 10)
        assert len(tukey_outlier_filter(corpus, "mild")[0]) == 10
        assert len(tukey_outlier_filter(corpus, "extreme")[0]) == 10

    def test_needs_four_values(self):
        with pytest.raises(DataError):
            tukey_outlier_filter(closed_after([1, 2, 3]), "mild")

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.01, 5000), min_size=4, max_size=40))
    def test_extreme_keeps_superset_of_mild(self, hours):
        corpus = closed_after(hours)
        mild = {b.id for b in tukey_outlier_filter(corpus, "mild")[0]}
        extreme = {b.id for b in tukey_outlier_filter(corpus, "extreme")[0]}
        assert mild <= extreme

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.01, 5000), min_size=4, max_size=40))
    def test_mild_keeps_exactly_inner_fence(self, hours):
        corpus = closed_after(hours)
        actual = [resolution_time(b) for b in corpus]
        q1, q3 = quartiles(actual)
        lo, hi = q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)
        expected = {b.id for b, h in zip(corpus, actual) if lo - 1e-9 <= h <= hi + 1e-9}
        got = {b.id for b in tukey_outlier_filter(corpus, "mild")[0]}
        # values sitting on a fence up to rounding may go either way
        borderline = {b.id for b, h in zip(corpus, actual) if min(abs(h - lo), abs(h - hi)) < 1e-6}
        assert got - borderline == expected - borderline


class TestInactivity:
    def test_gap_too_long(self):
        bug = make_bug("X", [("Open", "Closed", 40 * DAY)], extra_events=[2 * DAY])
        assert inactivity_filter([bug])[0] == []

    def test_short_gaps_kept(self):
        bug = make_bug("X", [("Open", "Closed", 29 * DAY)], extra_events=[10 * DAY, 20 * DAY])
        assert inactivity_filter([bug])[0] == [bug]

    def test_default_gap(self):
        assert FilterConfig().inactivity_gap_days == 30

    def test_edits_after_closing_ignored(self):
        bug = make_bug("X", [("Open", "Closed", DAY)], extra_events=[200 * DAY])
        assert inactivity_filter([bug])[0] == [bug]

    def test_chained_outlier_report(self):
        corpus, _ = filter_fixture()
        cleaned, _ = apply_standard_pipeline(corpus, FilterConfig(), STANDARD)
        kept, report = apply_outlier_filters(cleaned, FilterConfig(outlier_mode="extreme"), inactivity=True)
        assert "B11" not in {b.id for b in kept}
        assert report.reconciles() and report.input_count == 9 and report.kept_count == 8
        assert np.isclose(sum(report.removed_by_rule.values()), 1)
