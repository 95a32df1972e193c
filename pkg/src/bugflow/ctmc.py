"""Resolution-time distribution from a CTMC over workflow transitions.

Each observed transition ``a -> b`` becomes a node of the chain (the
"dual" of the workflow graph). A bug sitting in node ``a -> b`` is spending
its time in state ``a`` before moving to ``b``; the sojourn is exponential
with rate ``1 / mean``. From ``a -> b`` the bug moves on to some node
``b -> c`` with probability ``n_bc / sum_x n_bx``, and nodes entering the
terminal state lead to the absorbing ``dst`` state. The CDF of the time to
absorption is the resolution-time distribution.

Instead of an instantaneous source state, the chain starts with its mass
spread over the nodes leaving the initial state, in proportion to their
counts. The generator therefore has ``m + 1`` rows: the ``m`` transition
nodes followed by ``dst``.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from bugflow.errors import DataError

log = logging.getLogger(__name__)

TAIL_TOLERANCE = 1e-12
UNIFORMIZATION_FACTOR = 1.1


@dataclass(frozen=True)
class DualNode:
    from_state: str
    to_state: str
    rate_per_hour: float
    count: int = 0
    mean_hours: float = float("nan")
    median_hours: float = float("nan")

    @property
    def label(self):
        return f"{self.from_state}->{self.to_state}"


@dataclass(frozen=True)
class CtmcModel:
    nodes: tuple
    routing: np.ndarray  # (m, m + 1); last column is dst
    entry_distribution: np.ndarray  # (m,)
    initial: str = "Open"
    terminal: str = "Closed"

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def dst_index(self):
        return len(self.nodes)

    @property
    def rates(self):
        return np.array([n.rate_per_hour for n in self.nodes])

    def initial_vector(self):
        """Entry distribution padded with zero mass on ``dst``."""
        return np.append(self.entry_distribution, 0.0)

    def routing_entries(self):
        """Non-zero routing probabilities as ``(i, j, r)``; ``j == m`` is dst."""
        rows, cols = np.nonzero(self.routing)
        return [(int(i), int(j), float(self.routing[i, j])) for i, j in zip(rows, cols)]

    def mean_median_ratios(self):
        return {n.label: n.mean_hours / n.median_hours for n in self.nodes if n.median_hours > 0}

    # -- serialization -----------------------------------------------------

    def to_json(self):
        return {
            "format": "bugflow-ctmc",
            "version": 1,
            "initial": self.initial,
            "terminal": self.terminal,
            "nodes": [
                {
                    "from": n.from_state,
                    "to": n.to_state,
                    "rate_per_hour": n.rate_per_hour,
                    "count": n.count,
                    "mean_hours": _nan_to_none(n.mean_hours),
                    "median_hours": _nan_to_none(n.median_hours),
                }
                for n in self.nodes
            ],
            "routing": [[i, j, r] for i, j, r in self.routing_entries()],
            "entry_distribution": [float(p) for p in self.entry_distribution],
        }

    @classmethod
    def from_json(cls, data):
        try:
            if data.get("format") != "bugflow-ctmc":
                raise DataError("not a bugflow CTMC model file")
            nodes = tuple(
                DualNode(
                    n["from"],
                    n["to"],
                    float(n["rate_per_hour"]),
                    int(n.get("count", 0)),
                    _none_to_nan(n.get("mean_hours")),
                    _none_to_nan(n.get("median_hours")),
                )
                for n in data["nodes"]
            )
            m = len(nodes)
            routing = np.zeros((m, m + 1))
            for i, j, r in data["routing"]:
                routing[int(i), int(j)] = float(r)
            entry = np.array(data["entry_distribution"], dtype=float)
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise DataError(f"invalid CTMC model file: {exc}") from exc
        model = cls(nodes, routing, entry, data.get("initial", "Open"), data.get("terminal", "Closed"))
        validate_model(model)
        return model


def _nan_to_none(x):
    return None if x != x else x


def _none_to_nan(x):
    return float("nan") if x is None else float(x)


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc.msg}") from None
    return CtmcModel.from_json(data)


# --------------------------------------------------------------------------
# construction


def validate_model(model):
    m = model.n_nodes
    if m == 0:
        raise DataError("model has no nodes")
    if model.routing.shape != (m, m + 1):
        raise DataError(f"routing matrix must be {m}x{m + 1}")
    if np.any(model.routing < 0) or np.any(model.routing > 1):
        raise DataError("routing probabilities must lie in [0, 1]")
    bad = np.nonzero(np.abs(model.routing.sum(axis=1) - 1.0) > 1e-12)[0]
    if bad.size:
        raise DataError(f"routing row of node {model.nodes[bad[0]].label} does not sum to 1")
    entry = model.entry_distribution
    if entry.shape != (m,) or np.any(entry < 0) or abs(entry.sum() - 1.0) > 1e-12:
        raise DataError("entry distribution must be a probability vector over the nodes")
    for node in model.nodes:
        if not (np.isfinite(node.rate_per_hour) and node.rate_per_hour > 0):
            raise DataError(f"node {node.label}: rate must be positive and finite")

    succ = [np.nonzero(model.routing[i])[0] for i in range(m)]
    # forward reachability from the entry nodes
    seen = set(np.nonzero(entry)[0].tolist())
    queue = deque(seen)
    while queue:
        i = queue.popleft()
        for j in succ[i]:
            if j < m and j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    unreachable = [model.nodes[i].label for i in range(m) if i not in seen]
    if unreachable:
        raise DataError(f"node {unreachable[0]} is not reachable from the initial state")
    # backward reachability from dst
    pred = defaultdict(list)
    for i in range(m):
        for j in succ[i]:
            pred[int(j)].append(i)
    reach = {m}
    queue = deque([m])
    while queue:
        j = queue.popleft()
        for i in pred[j]:
            if i not in reach:
                reach.add(i)
                queue.append(i)
    stuck = [model.nodes[i].label for i in range(m) if i not in reach]
    if stuck:
        raise DataError(f"dst is unreachable from node {stuck[0]}")


def build_dual_model(stats, spec):
    """Build the transition-node CTMC from per-transition duration statistics.

    ``stats`` maps ``(from, to)`` to an object with ``mean_hours``,
    ``median_hours`` and ``count`` (e.g. :class:`bugflow.stats.DurationStat`).
    Transitions out of the terminal state are ignored: it is absorbing.
    """
    if not stats:
        raise DataError("no transition statistics to build a model from")
    keys = []
    for a, b in stats:
        if a not in spec.states or b not in spec.states:
            raise DataError(f"transition {a}->{b} uses a state outside workflow {spec.name}")
        if a == spec.terminal:
            log.warning("ignoring transition %s->%s out of the terminal state", a, b)
            continue
        keys.append((a, b))
    if not any(b == spec.terminal for _, b in keys):
        raise DataError(f"no observed transition enters {spec.terminal!r}")

    nodes = []
    for a, b in keys:
        s = stats[(a, b)]
        mean = float(s.mean_hours)
        if not (np.isfinite(mean) and mean > 0):
            raise DataError(f"node {a}->{b}: mean sojourn {mean} is not positive")
        if s.count <= 0:
            raise DataError(f"node {a}->{b}: count must be positive")
        nodes.append(DualNode(a, b, 1.0 / mean, int(s.count), mean, float(s.median_hours)))

    m = len(nodes)
    out_of = defaultdict(list)
    for i, node in enumerate(nodes):
        out_of[node.from_state].append(i)
    routing = np.zeros((m, m + 1))
    for i, node in enumerate(nodes):
        if node.to_state == spec.terminal:
            routing[i, m] = 1.0
            continue
        succ = out_of.get(node.to_state)
        if not succ:
            raise DataError(
                f"dst is unreachable from node {node.label}: nothing leaves {node.to_state!r}"
            )
        total = sum(nodes[k].count for k in succ)
        for k in succ:
            routing[i, k] = nodes[k].count / total

    entry_idx = out_of.get(spec.initial)
    if not entry_idx:
        raise DataError(f"no observed transition leaves {spec.initial!r}")
    entry = np.zeros(m)
    total = sum(nodes[k].count for k in entry_idx)
    for k in entry_idx:
        entry[k] = nodes[k].count / total

    model = CtmcModel(tuple(nodes), routing, entry, spec.initial, spec.terminal)
    validate_model(model)
    return model


def build_generator(model):
    """Dense generator ``Q`` (per hour) over the m nodes plus the absorbing dst."""
    m = model.n_nodes
    rates = model.rates
    Q = np.zeros((m + 1, m + 1))
    Q[:m, :] = rates[:, None] * model.routing
    # a node routing back to itself just lengthens its stay
    diag = np.arange(m)
    Q[diag, diag] = 0.0
    Q[diag, diag] = -Q[:m].sum(axis=1)
    row_err = np.abs(Q.sum(axis=1)).max()
    if row_err > 1e-12:
        raise RuntimeError(f"generator rows do not sum to zero (max error {row_err:.3g})")
    return Q


# --------------------------------------------------------------------------
# transient analysis


@dataclass(frozen=True)
class TransientSolution:
    grid_hours: np.ndarray
    probabilities: np.ndarray  # (len(grid), n_states)


def poisson_truncation(lam, tol=TAIL_TOLERANCE):
    """Smallest K with P(N > K) < tol for N ~ Poisson(lam)."""
    if lam <= 0:
        return 0
    k = int(sps.poisson.isf(tol, lam))
    while sps.poisson.sf(k, lam) >= tol:
        k += 1
    return k


def transient_solve(Q, init, grid_hours, tol=TAIL_TOLERANCE):
    """State probabilities ``p(t) = init exp(Q t)`` by uniformization.

    With ``L = 1.1 max|Q_ii|`` and ``M = I + Q / L``,
    ``p(t) = sum_k Poisson(k; L t) init M^k``; the series is cut where the
    remaining Poisson mass drops below ``tol``.
    """
    Q = np.asarray(Q, dtype=float)
    init = np.asarray(init, dtype=float)
    grid = np.asarray(grid_hours, dtype=float)
    if grid.ndim != 1 or np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise DataError("grid must be ascending and non-negative")
    if abs(init.sum() - 1.0) > 1e-9:
        raise DataError("initial vector must sum to 1")
    n = Q.shape[0]
    lam = UNIFORMIZATION_FACTOR * np.max(np.abs(np.diag(Q))) if n else 0.0
    if lam == 0.0 or grid.size == 0:
        return TransientSolution(grid, np.tile(init, (grid.size, 1)))

    M = np.eye(n) + Q / lam
    K = poisson_truncation(lam * grid[-1], tol)
    powers = np.empty((K + 1, n))
    v = init.copy()
    for k in range(K + 1):
        powers[k] = v
        v = v @ M
    ks = np.arange(K + 1)
    weights = sps.poisson.pmf(ks[None, :], lam * grid[:, None])
    return TransientSolution(grid, weights @ powers)


def resolution_cdf(model, grid_hours):
    """``[(t, F(t))]`` where F is the probability of having reached dst by t."""
    sol = transient_solve(build_generator(model), model.initial_vector(), grid_hours)
    F = np.maximum.accumulate(np.clip(sol.probabilities[:, model.dst_index], 0.0, 1.0))
    return [(float(t), float(f)) for t, f in zip(sol.grid_hours, F)]


def mean_resolution_time(model):
    """Expected hours to absorption, from ``-entry (Q_TT)^-1 1``."""
    Q = build_generator(model)
    m = model.n_nodes
    tau = np.linalg.solve(-Q[:m, :m], np.ones(m))
    return float(model.entry_distribution @ tau)


# --------------------------------------------------------------------------
# Monte Carlo oracle


def simulate_resolution_times(model, n_samples, seed):
    """Sample absorption times by walking the chain; deterministic per seed."""
    if n_samples < 1:
        raise DataError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    m = model.n_nodes
    rates = model.rates
    cum_routing = np.cumsum(model.routing, axis=1)
    cum_routing[:, -1] = 1.0
    cum_entry = np.cumsum(model.entry_distribution)
    cum_entry[-1] = 1.0

    node = np.searchsorted(cum_entry, rng.random(n_samples), side="right")
    times = np.zeros(n_samples)
    active = np.arange(n_samples)
    while active.size:
        cur = node[active]
        times[active] += rng.exponential(1.0 / rates[cur])
        u = rng.random(active.size)
        nxt = (u[:, None] >= cum_routing[cur]).sum(axis=1)
        node[active] = nxt
        active = active[nxt != m]
    return times


def empirical_cdf(samples, grid_hours):
    ordered = np.sort(np.asarray(samples, dtype=float))
    grid = np.asarray(grid_hours, dtype=float)
    return np.searchsorted(ordered, grid, side="right") / ordered.size


def monte_carlo_cdf(model, n_samples, seed, grid_hours):
    """Empirical CDF of simulated resolution times on ``grid_hours``."""
    times = simulate_resolution_times(model, n_samples, seed)
    F = empirical_cdf(times, grid_hours)
    return [(float(t), float(f)) for t, f in zip(np.asarray(grid_hours, dtype=float), F)]
