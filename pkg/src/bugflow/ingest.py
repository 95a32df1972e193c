"""Reading issue-tracker exports into validated bug records.

Export files are line-delimited JSON, one issue per line::

    {"issue_key": "ONAP-1", "issue_type": "Bug", "project": "ONAP",
     "subproject": "SO", "priority_label": "High", "reporter_id": "alice",
     "assignee_id": "bob", "created_at": "2023-01-01T10:00:00Z",
     "resolution_status": "Done", "last_update_at": 1672600000,
     "changelog": [{"field_name": "status", "from_value": "Open",
                    "to_value": "In Progress", "at": 1672570000,
                    "actor_id": "bob"}]}

Timestamps may be ISO-8601 strings or integer epoch seconds; they are
normalized to integer UTC seconds.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import yaml

from bugflow.errors import DataError

UNASSIGNED = "<unassigned>"
OPEN_ENDED = None

EXPORT_FIELDS = (
    "issue_key",
    "issue_type",
    "project",
    "subproject",
    "priority_label",
    "reporter_id",
    "assignee_id",
    "created_at",
    "resolution_status",
    "last_update_at",
    "changelog",
)
# fields that may legitimately be empty strings
_OPTIONAL_TEXT = {"subproject", "assignee_id"}
CHANGELOG_FIELDS = ("field_name", "from_value", "to_value", "at", "actor_id")


# --------------------------------------------------------------------------
# workflows and profiles


@dataclass(frozen=True)
class WorkflowSpec:
    name: str
    states: frozenset
    initial: str
    terminal: str
    allowed_transitions: frozenset

    def __post_init__(self):
        if self.initial not in self.states or self.terminal not in self.states:
            raise ValueError(f"workflow {self.name}: initial/terminal must be states")
        for a, b in self.allowed_transitions:
            if a not in self.states or b not in self.states:
                raise ValueError(f"workflow {self.name}: transition {a}->{b} uses unknown state")


def _workflow(name, states, transitions, initial="Open", terminal="Closed"):
    return WorkflowSpec(
        name=name,
        states=frozenset(states),
        initial=initial,
        terminal=terminal,
        allowed_transitions=frozenset(transitions),
    )


_STANDARD_TRANSITIONS = {
    ("Open", "In Progress"),
    ("Open", "Resolved"),
    ("Open", "Closed"),
    ("In Progress", "Open"),
    ("In Progress", "Resolved"),
    ("In Progress", "Closed"),
    ("Resolved", "Closed"),
    ("Resolved", "Reopened"),
    ("Closed", "Reopened"),
    ("Reopened", "In Progress"),
    ("Reopened", "Resolved"),
    ("Reopened", "Closed"),
}

# every (from, to) pair of the ONAP priority-1 transition table, plus the
# Open->Submitted and Submitted->Closed steps used by its common flows
_ONAP_TRANSITIONS = {
    ("Open", "Closed"),
    ("Open", "In Progress"),
    ("Open", "Delivered"),
    ("Open", "Submitted"),
    ("Delivered", "Closed"),
    ("Delivered", "Reopened"),
    ("Reopened", "Delivered"),
    ("Reopened", "In Progress"),
    ("Reopened", "Closed"),
    ("In Progress", "Submitted"),
    ("In Progress", "Open"),
    ("In Progress", "Closed"),
    ("In Progress", "Delivered"),
    ("Submitted", "Delivered"),
    ("Submitted", "In Progress"),
    ("Submitted", "Closed"),
    ("Closed", "Reopened"),
}

_APACHE_TRANSITIONS = _STANDARD_TRANSITIONS | {
    ("Open", "Patch Available"),
    ("In Progress", "Patch Available"),
    ("Reopened", "Patch Available"),
    ("Patch Available", "Open"),
    ("Patch Available", "In Progress"),
    ("Patch Available", "Resolved"),
    ("Patch Available", "Closed"),
}

_STANDARD_STATES = {"Open", "In Progress", "Resolved", "Reopened", "Closed"}

BUILTIN_WORKFLOWS = {
    "standard": _workflow("standard", _STANDARD_STATES, _STANDARD_TRANSITIONS),
    "onap": _workflow(
        "onap",
        {"Open", "In Progress", "Submitted", "Delivered", "Reopened", "Closed"},
        _ONAP_TRANSITIONS,
    ),
    "apache": _workflow("apache", _STANDARD_STATES | {"Patch Available"}, _APACHE_TRANSITIONS),
}


def builtin_workflow(name):
    """Return one of the built-in workflows: ``standard``, ``onap`` or ``apache``."""
    try:
        return BUILTIN_WORKFLOWS[name]
    except KeyError:
        valid = ", ".join(sorted(BUILTIN_WORKFLOWS))
        raise DataError(f"unknown workflow {name!r}; valid names: {valid}") from None


# Jira's stock priority schemes, old and new, plus numeric labels
DEFAULT_PRIORITY_MAP = {
    "Blocker": 1,
    "Critical": 2,
    "Major": 3,
    "Minor": 4,
    "Trivial": 5,
    "Highest": 1,
    "High": 2,
    "Medium": 3,
    "Low": 4,
    "Lowest": 5,
    **{str(p): p for p in range(1, 6)},
    **{f"P{p}": p for p in range(1, 6)},
}


@dataclass(frozen=True)
class ProjectProfile:
    workflow: WorkflowSpec
    priority_map: dict = field(default_factory=lambda: dict(DEFAULT_PRIORITY_MAP))
    allowed_issue_types: frozenset = frozenset({"Bug"})

    def __post_init__(self):
        bad = {k: v for k, v in self.priority_map.items() if v not in (1, 2, 3, 4, 5)}
        if bad:
            raise DataError(f"priority_map values must be in 1..5, got {bad}")


def workflow_from_config(value):
    if isinstance(value, str):
        return builtin_workflow(value)
    try:
        return _workflow(
            value["name"],
            value["states"],
            [tuple(t) for t in value["transitions"]],
            initial=value.get("initial", "Open"),
            terminal=value.get("terminal", "Closed"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid workflow definition: {exc}") from exc


def profile_from_config(config):
    config = config or {}
    workflow = workflow_from_config(config.get("workflow", "standard"))
    priority_map = config.get("priority_map")
    if priority_map is None:
        priority_map = dict(DEFAULT_PRIORITY_MAP)
    else:
        priority_map = {str(k): int(v) for k, v in priority_map.items()}
    types = frozenset(config.get("allowed_issue_types", ["Bug"]))
    return ProjectProfile(workflow=workflow, priority_map=priority_map, allowed_issue_types=types)


def load_config(path):
    """Read a YAML config file into a dict (empty file -> ``{}``)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise DataError(f"{path}: invalid config: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise DataError(f"{path}: config must be a mapping")
    return data


def load_profile(path):
    return profile_from_config(load_config(path))


# --------------------------------------------------------------------------
# raw export records

_TZ_NO_COLON = re.compile(r"([+-]\d\d)(\d\d)$")


def parse_timestamp(value):
    """Normalize an ISO-8601 string or epoch number to integer UTC seconds."""
    if isinstance(value, bool):
        raise ValueError("boolean is not a timestamp")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"epoch seconds must be integral, got {value}")
        return int(value)
    if isinstance(value, str):
        text = value.strip()
        if re.fullmatch(r"-?\d+", text):
            return int(text)
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        text = _TZ_NO_COLON.sub(r"\1:\2", text)
        dt = datetime.fromisoformat(text)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp() // 1)
    raise ValueError(f"unsupported timestamp {value!r}")


@dataclass(frozen=True)
class ChangelogEntry:
    field_name: str
    from_value: str
    to_value: str
    at: int
    actor_id: str


@dataclass(frozen=True)
class RawIssueRecord:
    issue_key: str
    issue_type: str
    project: str
    subproject: str
    priority_label: str
    reporter_id: str
    assignee_id: str
    created_at: int
    resolution_status: str
    last_update_at: int
    changelog: tuple = ()

    def to_json(self):
        data = {name: getattr(self, name) for name in EXPORT_FIELDS if name != "changelog"}
        data["changelog"] = [
            {name: getattr(entry, name) for name in CHANGELOG_FIELDS} for entry in self.changelog
        ]
        return data


def _raw_from_json(obj, index):
    if not isinstance(obj, dict):
        raise DataError(f"record {index}: expected an object")
    values = {}
    for name in EXPORT_FIELDS:
        if name not in obj:
            raise DataError(f"record {index}: missing {name}")
        value = obj[name]
        if name in ("created_at", "last_update_at"):
            try:
                value = parse_timestamp(value)
            except ValueError as exc:
                raise DataError(f"record {index}: bad {name}: {exc}") from None
        elif name == "changelog":
            value = _changelog_from_json(value, index)
        else:
            if value is None and name in _OPTIONAL_TEXT:
                value = ""
            if not isinstance(value, str):
                raise DataError(f"record {index}: {name} must be text")
            if not value and name not in _OPTIONAL_TEXT:
                raise DataError(f"record {index}: empty {name}")
        values[name] = value
    raw = RawIssueRecord(**values)
    _check_raw_invariants(raw, index)
    return raw


def _changelog_from_json(value, index):
    if not isinstance(value, list):
        raise DataError(f"record {index}: changelog must be a list")
    entries = []
    for pos, item in enumerate(value):
        if not isinstance(item, dict):
            raise DataError(f"record {index}: changelog[{pos}] must be an object")
        missing = [n for n in CHANGELOG_FIELDS if n not in item]
        if missing:
            raise DataError(f"record {index}: missing changelog[{pos}].{missing[0]}")
        try:
            at = parse_timestamp(item["at"])
        except ValueError as exc:
            raise DataError(f"record {index}: bad changelog[{pos}].at: {exc}") from None
        entries.append(
            ChangelogEntry(
                field_name=str(item["field_name"]),
                from_value="" if item["from_value"] is None else str(item["from_value"]),
                to_value="" if item["to_value"] is None else str(item["to_value"]),
                at=at,
                actor_id="" if item["actor_id"] is None else str(item["actor_id"]),
            )
        )
    return tuple(entries)


def _check_raw_invariants(raw, index):
    prev = raw.created_at
    for pos, entry in enumerate(raw.changelog):
        if entry.at < prev:
            raise DataError(f"record {index}: changelog[{pos}].at out of order")
        prev = entry.at
    if prev > raw.last_update_at:
        raise DataError(f"record {index}: last_update_at precedes recorded edits")


def parse_export(stream, profile=None):
    """Parse a line-delimited export into ``RawIssueRecord`` values.

    ``stream`` is any iterable of text lines (an open file works). Blank
    lines are ignored; records are numbered from 1 in error messages.
    ``profile`` is accepted for interface symmetry and not needed to parse.
    """
    records = []
    index = 0
    for line in stream:
        if not line.strip():
            continue
        index += 1
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"record {index}: invalid JSON: {exc.msg}") from None
        records.append(_raw_from_json(obj, index))
    return records


def serialize_export(records):
    """Inverse of :func:`parse_export`; returns the file contents as text."""
    return "".join(json.dumps(r.to_json(), sort_keys=False) + "\n" for r in records)


def read_export(path, profile=None):
    with open(path, encoding="utf-8") as fh:
        return parse_export(fh, profile)


# --------------------------------------------------------------------------
# cleaned bug records


@dataclass(frozen=True)
class StateTransition:
    from_state: str
    to_state: str
    at: int
    actor_id: str = ""

    def __post_init__(self):
        if not self.from_state or not self.to_state:
            raise DataError("state transition with empty state")


@dataclass(frozen=True)
class BugRecord:
    id: str
    project: str
    subproject: str
    priority: int
    reporter_id: str
    assignee_id: str
    created_at: int
    resolution_status: str
    last_update_at: int
    transitions: tuple = ()
    event_times: tuple = ()

    def __post_init__(self):
        if self.priority not in (1, 2, 3, 4, 5):
            raise DataError(f"bug {self.id}: priority {self.priority} outside 1..5")

    def with_transitions(self, transitions):
        return replace(self, transitions=tuple(transitions))

    def to_json(self):
        return {
            "id": self.id,
            "project": self.project,
            "subproject": self.subproject,
            "priority": self.priority,
            "reporter_id": self.reporter_id,
            "assignee_id": self.assignee_id,
            "created_at": self.created_at,
            "resolution_status": self.resolution_status,
            "last_update_at": self.last_update_at,
            "transitions": [[t.from_state, t.to_state, t.at, t.actor_id] for t in self.transitions],
            "event_times": list(self.event_times),
        }

    @classmethod
    def from_json(cls, obj):
        data = dict(obj)
        data["transitions"] = tuple(StateTransition(*t) for t in data.get("transitions", ()))
        data["event_times"] = tuple(data.get("event_times", ()))
        return cls(**data)


@dataclass(frozen=True)
class Skipped:
    issue_key: str
    reason: str


def to_bug_record(raw, profile):
    """Convert a raw issue to a :class:`BugRecord`, or :class:`Skipped`.

    Only ``status`` changelog entries become transitions; every changelog
    entry contributes its timestamp to ``event_times``.
    """
    if raw.issue_type not in profile.allowed_issue_types:
        return Skipped(raw.issue_key, "non_bug")
    try:
        priority = profile.priority_map[raw.priority_label]
    except KeyError:
        raise DataError(
            f"{raw.issue_key}: priority label {raw.priority_label!r} not in profile"
        ) from None
    transitions = tuple(
        StateTransition(e.from_value, e.to_value, e.at, e.actor_id)
        for e in raw.changelog
        if e.field_name == "status"
    )
    if transitions and transitions[0].from_state != profile.workflow.initial:
        return Skipped(raw.issue_key, "bad_initial_state")
    event_times = tuple(sorted([raw.created_at, *(e.at for e in raw.changelog)]))
    return BugRecord(
        id=raw.issue_key,
        project=raw.project,
        subproject=raw.subproject,
        priority=priority,
        reporter_id=raw.reporter_id,
        assignee_id=raw.assignee_id or UNASSIGNED,
        created_at=raw.created_at,
        resolution_status=raw.resolution_status,
        last_update_at=raw.last_update_at,
        transitions=transitions,
        event_times=event_times,
    )


def convert_records(raws, profile):
    """Convert many raw records; returns ``(bugs, skipped)``."""
    bugs, skipped = [], []
    for raw in raws:
        result = to_bug_record(raw, profile)
        if isinstance(result, Skipped):
            skipped.append(result)
        else:
            bugs.append(result)
    return bugs, skipped


def bug_to_raw(bug, priority_label=None):
    """Render a bug back into the export schema.

    Status changes become ``status`` changelog entries; event times not
    accounted for by a status change become ``comment`` entries.
    """
    if priority_label is None:
        priority_label = f"P{bug.priority}"
    changelog = [
        ChangelogEntry("status", t.from_state, t.to_state, t.at, t.actor_id)
        for t in bug.transitions
    ]
    remaining = list(bug.event_times)
    if bug.created_at in remaining:
        remaining.remove(bug.created_at)
    for t in bug.transitions:
        if t.at in remaining:
            remaining.remove(t.at)
    changelog.extend(ChangelogEntry("comment", "", "", at, "") for at in remaining)
    changelog.sort(key=lambda e: e.at)
    return RawIssueRecord(
        issue_key=bug.id,
        issue_type="Bug",
        project=bug.project,
        subproject=bug.subproject,
        priority_label=priority_label,
        reporter_id=bug.reporter_id,
        assignee_id="" if bug.assignee_id == UNASSIGNED else bug.assignee_id,
        created_at=bug.created_at,
        resolution_status=bug.resolution_status,
        last_update_at=bug.last_update_at,
        changelog=tuple(changelog),
    )


def dump_bugs(bugs):
    return "".join(json.dumps(b.to_json()) + "\n" for b in bugs)


def load_bugs(stream):
    bugs = []
    for index, line in enumerate((ln for ln in stream if ln.strip()), start=1):
        try:
            bugs.append(BugRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise DataError(f"record {index}: invalid bug record: {exc}") from None
    return bugs


def load_corpus(path, profile):
    """Load either an export file or a bug-record file, detected from the first record.

    Returns ``(bugs, skipped)``.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    first = next((ln for ln in lines if ln.strip()), None)
    if first is None:
        return [], []
    try:
        head = json.loads(first)
    except json.JSONDecodeError as exc:
        raise DataError(f"record 1: invalid JSON: {exc.msg}") from None
    if isinstance(head, dict) and "issue_key" in head:
        return convert_records(parse_export(lines), profile)
    return load_bugs(lines), []


# --------------------------------------------------------------------------
# stage intervals


@dataclass(frozen=True)
class StageInterval:
    state: str
    entered_at: int
    exited_at: Optional[int]

    @property
    def open_ended(self):
        return self.exited_at is OPEN_ENDED

    @property
    def duration_seconds(self):
        if self.exited_at is None:
            return None
        return self.exited_at - self.entered_at

    @property
    def duration_hours(self):
        if self.exited_at is None:
            return None
        return (self.exited_at - self.entered_at) / 3600.0


def extract_stage_intervals(bug, initial="Open"):
    """Split a bug's history into abutting per-state intervals.

    The first interval starts at creation in the initial state (or in the
    first transition's source state); the last interval is open-ended.
    """
    transitions = bug.transitions
    if not transitions:
        return [StageInterval(initial, bug.created_at, OPEN_ENDED)]
    intervals = []
    start = bug.created_at
    for k, t in enumerate(transitions):
        if k > 0 and t.from_state != transitions[k - 1].to_state:
            raise DataError(f"bug {bug.id}: discontinuous history at index {k}")
        if t.at < start:
            raise DataError(f"bug {bug.id}: transitions out of order at index {k}")
        intervals.append(StageInterval(t.from_state, start, t.at))
        start = t.at
    intervals.append(StageInterval(transitions[-1].to_state, start, OPEN_ENDED))
    return intervals


