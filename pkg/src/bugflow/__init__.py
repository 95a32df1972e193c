"""Bug-resolution workflow mining, CTMC resolution-time model and predictors."""

from bugflow.errors import DataError, NotResolvedError
from bugflow.ingest import (
    UNASSIGNED,
    BugRecord,
    ChangelogEntry,
    ProjectProfile,
    RawIssueRecord,
    Skipped,
    StageInterval,
    StateTransition,
    WorkflowSpec,
    builtin_workflow,
    extract_stage_intervals,
    parse_export,
    to_bug_record,
)

__version__ = "0.1.0"

__all__ = [
    "UNASSIGNED",
    "BugRecord",
    "ChangelogEntry",
    "DataError",
    "NotResolvedError",
    "ProjectProfile",
    "RawIssueRecord",
    "Skipped",
    "StageInterval",
    "StateTransition",
    "WorkflowSpec",
    "builtin_workflow",
    "extract_stage_intervals",
    "parse_export",
    "to_bug_record",
]
