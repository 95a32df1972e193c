"""Command-line entry point: ``bugflow <command> [<subcommand>] ...``.

Exit codes: 0 success, 1 usage error, 2 data error. Data goes to ``--out``
(or stdout); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

import numpy as np

from bugflow import ctmc, predictors, stats, synth
from bugflow.errors import DataError
from bugflow.filters import (
    FilterConfig,
    apply_standard_pipeline,
    chain_reports,
    inactivity_filter,
    tukey_outlier_filter,
)
from bugflow.ingest import (
    ProjectProfile,
    bug_to_raw,
    builtin_workflow,
    dump_bugs,
    load_config,
    load_corpus,
    profile_from_config,
    serialize_export,
)

log = logging.getLogger("bugflow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


# --------------------------------------------------------------------------
# formatting


def fmt(value):
    """Shortest round-tripping text for numbers; integral floats print as ints."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if value.is_integer() and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)


def _json_value(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, float) and value.is_integer() and abs(value) < 1e15:
        return int(value)
    return value


def render_table(columns, rows, fmt_name):
    """CSV with a header, or one JSON object per row with the same keys."""
    if fmt_name == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
        return buf.getvalue()
    return "".join(
        json.dumps({c: _json_value(v) for c, v in zip(columns, row)}) + "\n" for row in rows
    )


def write_output(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def parse_grid(text):
    """``a,b,c`` | ``log:START:STOP:N`` (with t=0 prepended) | ``lin:START:STOP:N``."""
    if text is None:
        return np.array(stats.default_grid())
    try:
        if text.startswith("log:"):
            _, a, b, n = text.split(":")
            return np.concatenate([[0.0], np.logspace(np.log10(float(a)), np.log10(float(b)), int(n))])
        if text.startswith("lin:"):
            _, a, b, n = text.split(":")
            return np.linspace(float(a), float(b), int(n))
        grid = np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise UsageError(f"invalid --grid {text!r}") from None
    if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise UsageError("--grid must be non-negative and ascending")
    return grid


def parse_priorities(text):
    if text is None:
        return None
    try:
        values = sorted({int(x) for x in text.split(",")})
    except ValueError:
        raise UsageError(f"invalid --priority {text!r}") from None
    if any(p not in range(1, 6) for p in values):
        raise UsageError("--priority values must be in 1..5")
    return values


# --------------------------------------------------------------------------
# shared plumbing


def _profile(args):
    config = load_config(args.profile) if args.profile else {}
    profile = profile_from_config(config)
    if args.workflow:
        profile = ProjectProfile(builtin_workflow(args.workflow), profile.priority_map, profile.allowed_issue_types)
    return profile, config


def _filter_config(args, config):
    base = FilterConfig.from_config(config)
    updates = {}
    if getattr(args, "transient_seconds", None) is not None:
        updates["transient_threshold_seconds"] = args.transient_seconds
    if getattr(args, "inactivity_days", None) is not None:
        updates["inactivity_gap_days"] = args.inactivity_days
    if getattr(args, "outlier", None) is not None:
        updates["outlier_mode"] = args.outlier
    if getattr(args, "statuses", None):
        updates["allowed_statuses"] = frozenset(s.strip() for s in args.statuses.split(","))
    return FilterConfig(**{**base.__dict__, **updates})


def _corpus(args):
    profile, config = _profile(args)
    bugs, skipped = load_corpus(args.input, profile)
    if skipped:
        log.info("skipped %d records (%s)", len(skipped), ", ".join(sorted({s.reason for s in skipped})))
    priorities = parse_priorities(getattr(args, "priority", None))
    if priorities and not (args.command == "stats" and args.action == "status-table"):
        bugs = [b for b in bugs if b.priority in priorities]
    return bugs, profile, config


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args):
    bugs, _, _ = _corpus(args)
    write_output(dump_bugs(bugs), args.out)
    log.info("ingested %d bugs", len(bugs))


def cmd_filter(args):
    bugs, profile, config = _corpus(args)
    fcfg = _filter_config(args, config)
    wf = profile.workflow
    bugs, report = apply_standard_pipeline(bugs, fcfg, wf)
    if fcfg.outlier_mode != "none":
        bugs, step = tukey_outlier_filter(bugs, fcfg.outlier_mode, wf.terminal)
        report = chain_reports(report, step)
    if args.inactivity_days is not None:
        bugs, step = inactivity_filter(bugs, fcfg.inactivity_gap_days, wf.terminal)
        report = chain_reports(report, step)
    write_output(dump_bugs(bugs), args.out)
    report_text = json.dumps(report.to_json(), sort_keys=True) + "\n"
    if args.report:
        write_output(report_text, args.report)
    sys.stderr.write(report_text)


def cmd_stats(args):
    bugs, profile, _ = _corpus(args)
    wf = profile.workflow
    action = args.action
    if action == "status-table":
        priorities = parse_priorities(args.priority) or [1, 2]
        table = stats.resolution_status_table(bugs, priorities)
        columns = ["priority", "status", "percent"]
        rows = [(p, s, pct) for (p, s), pct in table.items()]
    elif action == "paths":
        columns = ["rank", "path", "count", "fraction"]
        rows = [
            (i + 1, "-".join(pc.path), pc.count, pc.fraction)
            for i, pc in enumerate(stats.path_frequencies(bugs, wf.initial))
        ]
    elif action == "transitions":
        columns = ["from", "to", "mean_hours", "median_hours", "count"]
        rows = [
            (a, b, s.mean_hours, s.median_hours, s.count)
            for (a, b), s in stats.transition_duration_stats(bugs).items()
        ]
    elif action == "entities":
        result = stats.entity_impact(bugs, args.role, args.top, args.order_priority, wf.terminal)
        columns = ["rank", "entity", "priority", "count", "median_hours"]
        rows = [
            (i + 1, es.entity_id, p, n, med)
            for i, es in enumerate(result)
            for p, (n, med) in sorted(es.per_priority.items())
        ]
    elif action == "self-assign":
        result = stats.self_assignment_comparison(bugs, wf.terminal)
        columns = ["priority", "group", "count", "median_hours"]
        rows = [(p, g, n, med) for p, groups in result.items() for g, (n, med) in groups.items()]
    elif action == "occupancy":
        curve = stats.occupancy_curve(bugs, parse_grid(args.grid), wf.terminal, wf.initial)
        states = list(curve.per_state_fraction)
        columns = ["t_hours", *states]
        rows = [
            (t, *(curve.per_state_fraction[s][i] for s in states))
            for i, t in enumerate(curve.grid_hours)
        ]
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown stats action {action}")
    write_output(render_table(columns, rows, args.format), args.out)


def _read_stats_csv(path):
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out[(row["from"], row["to"])] = stats.DurationStat(
                    float(row["mean_hours"]), float(row["median_hours"]), int(row["count"])
                )
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{line}: bad transition row: {exc}") from None
    return out


def cmd_ctmc(args):
    action = args.action
    if action == "fit":
        profile, _ = _profile(args)
        if args.stats:
            table = _read_stats_csv(args.stats)
        elif args.input:
            bugs, _, _ = _corpus(args)
            table = stats.transition_duration_stats(bugs)
        else:
            raise UsageError("ctmc fit needs an input corpus or --stats")
        model = ctmc.build_dual_model(table, profile.workflow)
        for label, ratio in model.mean_median_ratios().items():
            sys.stderr.write(f"node {label}: mean/median sojourn ratio {fmt(ratio)}\n")
        write_output(json.dumps(model.to_json(), indent=1) + "\n", args.out)
        return
    if not args.model:
        raise UsageError(f"ctmc {action} needs --model")
    model = ctmc.load_model(args.model)
    if action == "cdf":
        rows = ctmc.resolution_cdf(model, parse_grid(args.grid))
        write_output(render_table(["t_hours", "F"], rows, args.format), args.out)
    elif action == "simulate":
        rows = ctmc.monte_carlo_cdf(model, args.samples, args.seed, parse_grid(args.grid))
        write_output(render_table(["t_hours", "F"], rows, args.format), args.out)
    elif action == "export":
        Q = ctmc.build_generator(model)
        labels = [n.label for n in model.nodes] + ["dst"]
        rows = [
            (labels[i], labels[j], Q[i, j])
            for i in range(Q.shape[0])
            for j in range(Q.shape[1])
            if Q[i, j] != 0.0
        ]
        write_output(render_table(["from_node", "to_node", "rate_per_hour"], rows, args.format), args.out)


def _cv_variant(args):
    if args.outlier not in (None, "none") and args.inactivity_days is not None:
        raise UsageError("choose either --outlier or --inactivity-days for cross-validation")
    if args.inactivity_days is not None:
        return "inactivity"
    return args.outlier or "none"


def _resolved(bugs, terminal):
    kept = [b for b, _ in stats.resolved_hours(bugs, terminal)]
    if len(kept) < len(bugs):
        log.info("dropped %d bugs that never reached %s", len(bugs) - len(kept), terminal)
    return kept


def cmd_predict(args):
    bugs, profile, config = _corpus(args)
    terminal = profile.workflow.terminal
    bugs = _resolved(bugs, terminal)
    if args.action == "train":
        data = predictors.encode_features(bugs, {b.id for b in bugs}, terminal)
        model = predictors.train_model(args.kind, data, seed=args.seed, epochs=args.epochs)
        write_output(json.dumps(model.to_json()) + "\n", args.model or args.out)
    elif args.action == "eval":
        if not args.model:
            raise UsageError("predict eval needs --model")
        model = predictors.load_trained(args.model)
        data = predictors.encode_with_state(bugs, model.encoder_state, terminal)
        rep = predictors.evaluate(model, data)
        columns = ["kind", "accuracy", "median_normalized_error", "n_test"]
        rows = [(model.kind, rep.accuracy, rep.median_normalized_error, rep.n_test)]
        write_output(render_table(columns, rows, args.format), args.out)
    elif args.action == "cv":
        fcfg = _filter_config(args, config)
        kinds = [k.strip() for k in args.models.split(",") if k.strip()]
        bad = [k for k in kinds if k not in predictors.MODEL_KINDS]
        if bad:
            raise UsageError(f"unknown model kinds {bad}; choose from {predictors.MODEL_KINDS}")
        result = predictors.cross_validate(
            bugs,
            repeats=args.repeats,
            models=kinds,
            filter_variant=_cv_variant(args),
            base_seed=args.seed,
            terminal=terminal,
            config=fcfg,
            epochs=args.epochs,
        )
        columns = ["kind", "repeat", "accuracy", "median_normalized_error", "n_test"]
        rows = []
        for kind, rep in result.items():
            for r, sub in enumerate(rep.per_repeat):
                rows.append((kind, r, sub.accuracy, sub.median_normalized_error, sub.n_test))
            rows.append((kind, "mean", rep.accuracy, rep.median_normalized_error, rep.n_test))
        write_output(render_table(columns, rows, args.format), args.out)


def cmd_synth(args):
    if args.action == "generate":
        if not args.config:
            raise UsageError("synth generate needs --config")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.n_bugs is not None:
            cfg["n_bugs"] = args.n_bugs
        try:
            spec = synth.GeneratorSpec.from_config(cfg)
        except (KeyError, TypeError) as exc:
            raise DataError(f"invalid generator config: {exc}") from None
        bugs, truth = synth.generate_corpus(spec)
        write_output(serialize_export([bug_to_raw(b) for b in bugs]), args.out)
        if args.truth:
            write_output("".join(json.dumps(t.to_json()) + "\n" for t in truth), args.truth)
        log.info("generated %d bugs", len(bugs))
        return
    # inject
    if not args.input:
        raise UsageError("synth inject needs an input corpus")
    bugs, profile, _ = _corpus(args)
    frac = args.fraction
    noise = synth.NoiseConfig(
        transient_fraction=frac if args.transient is None else args.transient,
        undefined_fraction=frac if args.undefined is None else args.undefined,
        loop_fraction=frac if args.loops is None else args.loops,
        reopen_fraction=frac if args.reopen is None else args.reopen,
        threshold_seconds=args.transient_seconds or 300,
        seed=args.seed if args.seed is not None else 0,
    )
    noisy, injections = synth.inject_noise(bugs, noise, profile.workflow)
    write_output(serialize_export([bug_to_raw(b) for b in noisy]), args.out)
    if args.ledger:
        write_output(
            "".join(json.dumps(inj.__dict__) + "\n" for inj in injections),
            args.ledger,
        )
    sys.stderr.write(json.dumps(synth.injection_counts(injections), sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# parser


def _common(p, input_required=True, seed_default=0):
    if input_required == "optional":
        p.add_argument("input", nargs="?", help="export or bug-record file (JSON lines)")
    elif input_required:
        p.add_argument("input", help="export or bug-record file (JSON lines)")
    p.add_argument("--profile", help="YAML project profile")
    p.add_argument("--workflow", choices=["standard", "onap", "apache"], help="override the profile workflow")
    p.add_argument("--priority", help="comma-separated priorities to keep, e.g. 1 or 1,2")
    p.add_argument("--format", choices=["csv", "structured"], default="csv")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--seed", type=int, default=seed_default)


def _filter_flags(p):
    p.add_argument("--transient-seconds", type=int, help="transient-state threshold (default 300)")
    p.add_argument("--outlier", choices=["none", "mild", "extreme"])
    p.add_argument("--inactivity-days", type=int, help="drop bugs idle longer than this")
    p.add_argument("--statuses", help="comma-separated resolution statuses to keep")


def build_parser():
    parser = _Parser(prog="bugflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="convert an export into cleaned-schema bug records")
    _common(p)
    p.set_defaults(func=cmd_ingest, action=None)

    p = sub.add_parser("filter", help="apply the cleaning pipeline")
    _common(p)
    _filter_flags(p)
    p.add_argument("--report", help="write the filter report (JSON) here")
    p.set_defaults(func=cmd_filter, action=None)

    p = sub.add_parser("stats", help="descriptive workflow statistics")
    p.add_argument(
        "action",
        choices=["status-table", "paths", "transitions", "entities", "self-assign", "occupancy"],
    )
    _common(p)
    p.add_argument("--role", choices=["reporter", "assignee"], default="reporter")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--order-priority", type=int, default=2)
    p.add_argument("--grid", help="time grid in hours (see README)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("ctmc", help="transition-node CTMC of resolution time")
    p.add_argument("action", choices=["fit", "cdf", "simulate", "export"])
    _common(p, input_required="optional")
    p.add_argument("--stats", help="transition statistics CSV (from, to, mean_hours, median_hours, count)")
    p.add_argument("--model", help="model file written by 'ctmc fit'")
    p.add_argument("--grid", help="time grid in hours (see README)")
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(func=cmd_ctmc)

    p = sub.add_parser("predict", help="fast/slow classifiers and hour regression")
    p.add_argument("action", choices=["train", "eval", "cv"])
    _common(p)
    _filter_flags(p)
    p.add_argument("--kind", choices=list(predictors.MODEL_KINDS), default="nn_regression")
    p.add_argument("--model", help="model file written by 'predict train'")
    p.add_argument("--models", default=",".join(predictors.MODEL_KINDS))
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--epochs", type=int, default=200)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="synthetic corpora and noise injection")
    p.add_argument("action", choices=["generate", "inject"])
    _common(p, input_required="optional", seed_default=None)
    p.add_argument("--config", help="YAML generator spec (generate)")
    p.add_argument("--n-bugs", type=int)
    p.add_argument("--truth", help="write ground truth JSON lines here (generate)")
    p.add_argument("--ledger", help="write the injection ledger here (inject)")
    p.add_argument("--fraction", type=float, default=0.1, help="noise fraction for every kind")
    p.add_argument("--transient", type=float)
    p.add_argument("--undefined", type=float)
    p.add_argument("--loops", type=float)
    p.add_argument("--reopen", type=float)
    p.add_argument("--transient-seconds", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def run(argv=None):
    """Parse ``argv`` and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage() + str(exc) + "\n")
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"bugflow: usage error: {exc}\n")
        return 1
    except (DataError, OSError) as exc:
        sys.stderr.write(f"bugflow: error: {exc}\n")
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
