"""Synthetic bug corpora with known ground truth, plus controlled noise.

Corpora come out as ordinary :class:`~bugflow.ingest.BugRecord` values (and
can be written in the export format), while the ground truth is returned
separately so downstream code sees exactly what it would see on real data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from bugflow.errors import DataError
from bugflow.ingest import (
    BugRecord,
    StateTransition,
    builtin_workflow,
    extract_stage_intervals,
    workflow_from_config,
)

START_EPOCH = 1_672_531_200  # 2023-01-01T00:00:00Z
MAX_STEPS = 10_000


@dataclass(frozen=True)
class Sojourn:
    """Sojourn-time law in hours: ``exponential`` (rate) or ``lognormal`` (mu, sigma)."""

    kind: str
    rate: float = 0.0
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind == "exponential":
            if not self.rate > 0:
                raise DataError("exponential sojourn needs a positive rate")
        elif self.kind == "lognormal":
            if not self.sigma >= 0:
                raise DataError("lognormal sojourn needs sigma >= 0")
        else:
            raise DataError(f"unknown sojourn distribution {self.kind!r}")

    @property
    def mean_hours(self):
        if self.kind == "exponential":
            return 1.0 / self.rate
        return math.exp(self.mu + self.sigma**2 / 2)

    def sample(self, rng):
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate)
        return rng.lognormal(self.mu, self.sigma)

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        kind = cfg.pop("dist", "exponential")
        if kind == "exponential" and "mean_hours" in cfg:
            return cls(kind, rate=1.0 / float(cfg.pop("mean_hours")))
        if kind == "lognormal" and "median_hours" in cfg:
            return cls(kind, mu=math.log(float(cfg.pop("median_hours"))), sigma=float(cfg.get("sigma", 0)))
        return cls(kind, **{k: float(v) for k, v in cfg.items()})


@dataclass(frozen=True)
class GeneratorSpec:
    workflow: object
    routing: dict  # state -> {next_state: probability}
    sojourn: dict  # (from, to) -> Sojourn
    reporters: dict  # id -> speed multiplier
    assignees: dict
    self_assign_prob: float = 0.0
    priority_mix: tuple = (0.5, 0.5, 0.0, 0.0, 0.0)
    n_bugs: int = 1000
    seed: int = 0
    subprojects: dict = field(default_factory=lambda: {"core": 1.0})
    self_assign_factor: float = 1.0
    priority_factors: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    min_sojourn_seconds: int = 600
    mean_interarrival_hours: float = 6.0
    project: str = "SYNTH"
    resolution_status: str = "Done"

    def __post_init__(self):
        wf = self.workflow
        for state, row in self.routing.items():
            if state == wf.terminal:
                raise DataError("the terminal state must not have a routing row")
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise DataError(f"routing row {state!r} sums to {total}, not 1")
            for nxt, p in row.items():
                if p < 0:
                    raise DataError(f"negative routing probability {state}->{nxt}")
                if nxt == state and p > 0:
                    raise DataError(f"self-loop {state}->{state} is not allowed")
                if (state, nxt) not in wf.allowed_transitions and p > 0:
                    raise DataError(f"{state}->{nxt} is not allowed in workflow {wf.name}")
                if p > 0 and (state, nxt) not in self.sojourn:
                    raise DataError(f"no sojourn law for {state}->{nxt}")
        for group in (self.reporters, self.assignees, self.subprojects):
            if not group:
                raise DataError("entity lists must not be empty")
            if any(v <= 0 for v in group.values()):
                raise DataError("speed multipliers must be positive")
        if not 0.0 <= self.self_assign_prob <= 1.0:
            raise DataError("self_assign_prob must lie in [0, 1]")
        if len(self.priority_mix) != 5 or abs(sum(self.priority_mix) - 1.0) > 1e-9:
            raise DataError("priority_mix must be 5 probabilities summing to 1")
        if self.n_bugs < 1:
            raise DataError("n_bugs must be positive")
        self._check_reachable()

    def _check_reachable(self):
        wf = self.workflow
        # every state reachable from initial must be able to reach terminal
        reachable, stack = {wf.initial}, [wf.initial]
        while stack:
            s = stack.pop()
            for nxt, p in self.routing.get(s, {}).items():
                if p > 0 and nxt not in reachable:
                    reachable.add(nxt)
                    stack.append(nxt)
        if wf.terminal not in reachable:
            raise DataError("terminal state is unreachable from the initial state")
        can_finish = {wf.terminal}
        changed = True
        while changed:
            changed = False
            for s in reachable - can_finish:
                if any(p > 0 and n in can_finish for n, p in self.routing.get(s, {}).items()):
                    can_finish.add(s)
                    changed = True
        stuck = sorted(reachable - can_finish)
        if stuck:
            raise DataError(f"terminal state is unreachable from {stuck[0]!r}")

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        workflow = workflow_from_config(cfg.pop("workflow", "standard"))
        routing = {s: {n: float(p) for n, p in row.items()} for s, row in cfg.pop("routing").items()}
        sojourn = {}
        for item in cfg.pop("sojourn"):
            item = dict(item)
            key = (item.pop("from"), item.pop("to"))
            sojourn[key] = Sojourn.from_config(item)
        kwargs = {}
        for name in ("reporters", "assignees", "subprojects"):
            if name in cfg:
                value = cfg.pop(name)
                if isinstance(value, list):
                    value = {str(v): 1.0 for v in value}
                kwargs[name] = {str(k): float(v) for k, v in value.items()}
        for name in ("priority_mix", "priority_factors"):
            if name in cfg:
                kwargs[name] = tuple(float(v) for v in cfg.pop(name))
        kwargs.update(cfg)
        return cls(workflow=workflow, routing=routing, sojourn=sojourn, **kwargs)


@dataclass(frozen=True)
class TruthRow:
    bug_id: str
    path: tuple
    sojourn_hours: tuple
    multiplier: float
    resolution_hours: float

    def to_json(self):
        return {
            "bug_id": self.bug_id,
            "path": list(self.path),
            "sojourn_hours": list(self.sojourn_hours),
            "multiplier": self.multiplier,
            "resolution_hours": self.resolution_hours,
        }


def _choice(rng, mapping):
    keys = list(mapping)
    probs = np.array([mapping[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=probs / probs.sum()))]


def _generate_one(spec, index, created_at):
    rng = np.random.default_rng([spec.seed, 0, index])
    wf = spec.workflow
    priority = int(rng.choice(5, p=np.asarray(spec.priority_mix) / sum(spec.priority_mix))) + 1
    reporter = _choice(rng, {k: 1.0 for k in spec.reporters})
    subproject = _choice(rng, {k: 1.0 for k in spec.subprojects})
    is_self = rng.random() < spec.self_assign_prob
    if is_self:
        assignee = reporter
        mult = spec.reporters[reporter] * spec.self_assign_factor
    else:
        assignee = _choice(rng, {k: 1.0 for k in spec.assignees})
        mult = spec.reporters[reporter] * spec.assignees[assignee]
    mult *= spec.subprojects[subproject] * spec.priority_factors[priority - 1]

    state, t = wf.initial, created_at
    path, sojourns, transitions = [state], [], []
    for _ in range(MAX_STEPS):
        if state == wf.terminal:
            break
        nxt = _choice(rng, spec.routing[state])
        hours = spec.sojourn[(state, nxt)].sample(rng) * mult
        seconds = max(spec.min_sojourn_seconds, int(round(hours * 3600.0)))
        t += seconds
        actor = assignee if rng.random() < 0.8 else reporter
        transitions.append(StateTransition(state, nxt, t, actor))
        sojourns.append(seconds / 3600.0)
        path.append(nxt)
        state = nxt
    else:
        raise DataError(f"bug {index}: no absorption within {MAX_STEPS} steps")

    bug_id = f"{spec.project}-{index + 1}"
    bug = BugRecord(
        id=bug_id,
        project=spec.project,
        subproject=subproject,
        priority=priority,
        reporter_id=reporter,
        assignee_id=assignee,
        created_at=created_at,
        resolution_status=spec.resolution_status,
        last_update_at=t,
        transitions=tuple(transitions),
        event_times=(created_at, *(tr.at for tr in transitions)),
    )
    truth = TruthRow(bug_id, tuple(path), tuple(sojourns), mult, (t - created_at) / 3600.0)
    return bug, truth


def generate_corpus(spec):
    """Sample ``spec.n_bugs`` bug lifecycles; returns ``(bugs, truth_rows)``."""
    arrivals = np.random.default_rng([spec.seed, 1]).exponential(
        spec.mean_interarrival_hours * 3600.0, size=spec.n_bugs
    )
    created = START_EPOCH + np.round(np.cumsum(arrivals)).astype(np.int64)
    bugs, truth = [], []
    for i in range(spec.n_bugs):
        bug, row = _generate_one(spec, i, int(created[i]))
        bugs.append(bug)
        truth.append(row)
    return bugs, truth


# --------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseConfig:
    transient_fraction: float = 0.0
    undefined_fraction: float = 0.0
    loop_fraction: float = 0.0
    reopen_fraction: float = 0.0
    threshold_seconds: int = 300
    undefined_state: str = "ToDo"
    seed: int = 0

    @classmethod
    def uniform(cls, fraction, **kwargs):
        return cls(fraction, fraction, fraction, fraction, **kwargs)


@dataclass(frozen=True)
class Injection:
    bug_id: str
    kind: str  # transient | undefined | loop | reopen
    state: str
    at: int


NOISE_KINDS = ("reopen", "undefined", "transient", "loop")


@dataclass
class _Plan:
    carve: dict = field(default_factory=dict)  # boundary k -> (state, seconds, kind)
    split: dict = field(default_factory=dict)  # interval k -> offset seconds
    used: set = field(default_factory=set)
    reopen: bool = False


def _free_hosts(intervals, plan, threshold):
    # bounded intervals long enough to give up a piece and stay >= threshold
    return [
        k
        for k, iv in enumerate(intervals[:-1])
        if k not in plan.used and iv.duration_seconds >= 2 * threshold
    ]


def inject_noise(corpus, cfg, workflow=None):
    """Add the kinds of noise the cleaning pipeline removes.

    For each noise kind, ``round(fraction * n)`` bugs (those with a suitable
    interval) receive one instance:

    * ``transient``: a defined state held for less than the threshold,
      carved from the end of an interval;
    * ``undefined``: a state outside the workflow, carved the same way;
    * ``loop``: an interval split in two by a self-transition;
    * ``reopen``: a reopen/close tail after the terminal transition.

    Every carve and split hosts on a separate interval and leaves all
    pieces at least ``threshold_seconds`` long, so the cleaning pipeline
    undoes each injection exactly. Returns ``(corpus, injections)``.
    """
    wf = workflow or builtin_workflow("standard")
    if cfg.undefined_state in wf.states:
        raise DataError(f"undefined_state {cfg.undefined_state!r} is a workflow state")
    corpus = list(corpus)
    n = len(corpus)
    rng = np.random.default_rng(cfg.seed)
    intervals = [extract_stage_intervals(b, wf.initial) for b in corpus]
    plans = [_Plan() for _ in corpus]
    injections = []
    thr = cfg.threshold_seconds
    interlude_states = sorted(wf.states - {wf.terminal})

    fractions = {
        "reopen": cfg.reopen_fraction,
        "undefined": cfg.undefined_fraction,
        "transient": cfg.transient_fraction,
        "loop": cfg.loop_fraction,
    }
    for kind in NOISE_KINDS:
        want = int(round(fractions[kind] * n))
        if want <= 0:
            continue
        done = 0
        for i in rng.permutation(n):
            if done >= want:
                break
            ivs, plan, bug = intervals[i], plans[i], corpus[i]
            if kind == "reopen":
                if plan.reopen or ivs[-1].state != wf.terminal or not bug.transitions:
                    continue
                plan.reopen = True
                injections.append(Injection(bug.id, "reopen", wf.terminal, ivs[-1].entered_at))
                done += 1
                continue
            hosts = _free_hosts(ivs, plan, thr)
            if not hosts:
                continue
            k = int(hosts[rng.integers(len(hosts))])
            host = ivs[k]
            plan.used.add(k)
            if kind == "loop":
                offset = int(rng.integers(thr, host.duration_seconds - thr + 1))
                plan.split[k] = offset
                injections.append(Injection(bug.id, "loop", host.state, host.entered_at + offset))
            else:
                if kind == "transient":
                    seconds = int(rng.integers(1, thr))
                    options = [s for s in interlude_states if s not in (host.state, ivs[k + 1].state)]
                    if not options:
                        plan.used.discard(k)
                        continue
                    state = options[int(rng.integers(len(options)))]
                else:
                    seconds = int(rng.integers(1, thr + 1))
                    state = cfg.undefined_state
                plan.carve[k] = (state, seconds)
                injections.append(Injection(bug.id, kind, state, host.exited_at - seconds))
            done += 1

    noisy = [_apply_plan(b, ivs, p, wf, rng) for b, ivs, p in zip(corpus, intervals, plans)]
    return noisy, injections


def _apply_plan(bug, intervals, plan, wf, rng):
    if not plan.carve and not plan.split and not plan.reopen:
        return bug
    out = []
    for k, t in enumerate(bug.transitions):
        host = intervals[k]
        if k in plan.split:
            out.append(StateTransition(host.state, host.state, host.entered_at + plan.split[k], "noise"))
        if k in plan.carve:
            state, seconds = plan.carve[k]
            out.append(StateTransition(t.from_state, state, t.at - seconds, "noise"))
            out.append(StateTransition(state, t.to_state, t.at, t.actor_id))
        else:
            out.append(t)
    last = bug.last_update_at
    if plan.reopen:
        reopen_state = "Reopened" if "Reopened" in wf.states else sorted(wf.states - {wf.terminal})[0]
        closed_at = bug.transitions[-1].at
        t1 = closed_at + int(rng.integers(24 * 3600, 90 * 24 * 3600))
        t2 = t1 + int(rng.integers(3600, 30 * 24 * 3600))
        out.append(StateTransition(wf.terminal, reopen_state, t1, "noise"))
        out.append(StateTransition(reopen_state, wf.terminal, t2, "noise"))
        last = max(last, t2)
    events = sorted(set(bug.event_times) | {t.at for t in out})
    return replace(bug, transitions=tuple(out), event_times=tuple(events), last_update_at=last)


def injection_counts(injections):
    out = {k: 0 for k in NOISE_KINDS}
    for inj in injections:
        out[inj.kind] += 1
    return out
