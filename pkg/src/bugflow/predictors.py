"""Fast/slow classification and resolution-time regression for new bugs.

Features (12 per bug): one-hot priority (5), a same-person flag, and for
each of reporter, assignee and subproject the number of training bugs and
their median resolution hours. Entity statistics always come from the
training split only; unseen entities get count 0 and the global training
median.

Class labels are ``0`` (fast) and ``1`` (slow): a bug is fast when it
resolves strictly faster than the training median.
"""

from __future__ import annotations

import json
import statistics
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from bugflow import nn
from bugflow.errors import DataError
from bugflow.filters import FilterConfig, inactivity_filter, tukey_outlier_filter
from bugflow.stats import resolution_time

FAST, SLOW = 0, 1
CLASS_NAMES = ("fast", "slow")
MODEL_KINDS = ("knn", "naive_bayes", "nn_binary", "nn_regression")
FILTER_VARIANTS = ("none", "mild", "extreme", "inactivity")
FEATURE_NAMES = (
    "priority_1",
    "priority_2",
    "priority_3",
    "priority_4",
    "priority_5",
    "same_person",
    "reporter_count",
    "reporter_median_hours",
    "assignee_count",
    "assignee_median_hours",
    "subproject_count",
    "subproject_median_hours",
)
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderState:
    global_median: float
    reporter: dict  # id -> (count, median_hours)
    assignee: dict
    subproject: dict

    def lookup(self, table, key):
        return table.get(key, (0, self.global_median))

    def to_json(self):
        return {
            "global_median": self.global_median,
            **{
                name: {k: list(v) for k, v in sorted(getattr(self, name).items())}
                for name in ("reporter", "assignee", "subproject")
            },
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            float(data["global_median"]),
            *(
                {k: (int(v[0]), float(v[1])) for k, v in data[name].items()}
                for name in ("reporter", "assignee", "subproject")
            ),
        )


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (n, 12)
    hours: np.ndarray  # (n,)
    ids: tuple
    encoder_state: EncoderState

    def __len__(self):
        return len(self.ids)

    def subset(self, index):
        index = np.asarray(index, dtype=int)
        return Dataset(self.X[index], self.hours[index], tuple(self.ids[i] for i in index), self.encoder_state)


def fit_encoder(bugs, hours):
    """Entity statistics from a training set of bugs and their resolution hours."""
    if not len(bugs):
        raise DataError("cannot encode features from an empty training set")
    groups = {"reporter": defaultdict(list), "assignee": defaultdict(list), "subproject": defaultdict(list)}
    for bug, h in zip(bugs, hours):
        groups["reporter"][bug.reporter_id].append(h)
        groups["assignee"][bug.assignee_id].append(h)
        groups["subproject"][bug.subproject].append(h)
    tables = {
        name: {k: (len(v), float(statistics.median(v))) for k, v in g.items()}
        for name, g in groups.items()
    }
    return EncoderState(float(statistics.median(hours)), **tables)


def encode_bug(bug, state):
    x = np.zeros(len(FEATURE_NAMES))
    x[bug.priority - 1] = 1.0
    x[5] = 1.0 if bug.reporter_id == bug.assignee_id else 0.0
    x[6:8] = state.lookup(state.reporter, bug.reporter_id)
    x[8:10] = state.lookup(state.assignee, bug.assignee_id)
    x[10:12] = state.lookup(state.subproject, bug.subproject)
    return x


def encode_with_state(bugs, state, terminal="Closed", with_hours=True):
    X = np.array([encode_bug(b, state) for b in bugs]).reshape(len(bugs), len(FEATURE_NAMES))
    hours = np.array([resolution_time(b, terminal) for b in bugs]) if with_hours else np.full(len(bugs), np.nan)
    return Dataset(X, hours, tuple(b.id for b in bugs), state)


def encode_features(corpus, training_ids, terminal="Closed"):
    """Encode every bug of ``corpus`` with statistics of the ``training_ids`` bugs."""
    corpus = list(corpus)
    training_ids = set(training_ids)
    known = {b.id for b in corpus}
    if not training_ids <= known:
        raise DataError("training ids must be a subset of the corpus ids")
    hours = [resolution_time(b, terminal) for b in corpus]
    if any(h <= 0 for h in hours):
        raise DataError("resolution hours must be positive")
    train = [(b, h) for b, h in zip(corpus, hours) if b.id in training_ids]
    state = fit_encoder([b for b, _ in train], [h for _, h in train])
    X = np.array([encode_bug(b, state) for b in corpus]).reshape(len(corpus), len(FEATURE_NAMES))
    return Dataset(X, np.array(hours), tuple(b.id for b in corpus), state)


def split_indices(n, train_fraction=0.8, seed=0):
    if n < 10:
        raise DataError(f"need at least 10 examples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    cut = int(np.floor(train_fraction * n))
    return np.sort(order[:cut]), np.sort(order[cut:])


def split(dataset, train_fraction=0.8, seed=0):
    """Random train/test partition of sizes ``floor(f n)`` and ``n - floor(f n)``."""
    train, test = split_indices(len(dataset), train_fraction, seed)
    return dataset.subset(train), dataset.subset(test)


def label_fast_slow(hours, training_median):
    """``FAST`` iff ``hours < training_median``; ties are slow. Works on arrays."""
    if training_median <= 0:
        raise DataError("training median must be positive")
    return np.where(np.asarray(hours) < training_median, FAST, SLOW)


# --------------------------------------------------------------------------
# models


@dataclass
class TrainedModel:
    kind: str
    params: dict
    training_median_hours: float
    encoder_state: EncoderState = None
    metadata: dict = field(default_factory=dict)
    _net: object = field(default=None, repr=False, compare=False)

    def to_json(self):
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {
            "format": "bugflow-model",
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "training_median_hours": self.training_median_hours,
            "feature_names": list(FEATURE_NAMES),
            "metadata": self.metadata,
            "encoder_state": self.encoder_state.to_json() if self.encoder_state else None,
            "params": params,
        }

    @classmethod
    def from_json(cls, data):
        if data.get("format") != "bugflow-model" or data.get("version") != MODEL_FORMAT_VERSION:
            raise DataError("not a supported bugflow model file")
        kind = data["kind"]
        params = dict(data["params"])
        if kind == "knn":
            for key in ("X", "y", "mean", "std"):
                params[key] = np.array(params[key], dtype=float)
            params["y"] = params["y"].astype(int)
        elif kind == "naive_bayes":
            for key in ("means", "vars", "log_priors"):
                params[key] = np.array(params[key], dtype=float)
        enc = data.get("encoder_state")
        return cls(
            kind,
            params,
            float(data["training_median_hours"]),
            EncoderState.from_json(enc) if enc else None,
            data.get("metadata", {}),
        )


def save_trained(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)
        fh.write("\n")


def load_trained(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return TrainedModel.from_json(json.load(fh))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{path}: invalid model file: {exc}") from None


def _zscore_constants(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return mean, std


def _zscore(X, mean, std):
    out = np.zeros_like(X, dtype=float)
    ok = std > 0
    # zero-variance features are pinned to 0
    out[:, ok] = (X[:, ok] - mean[ok]) / std[ok]
    return out


def train_knn(train, k=5):
    if not 1 <= k <= len(train):
        raise DataError(f"k={k} must lie in 1..{len(train)}")
    median = float(np.median(train.hours))
    mean, std = _zscore_constants(train.X)
    params = {"k": k, "X": _zscore(train.X, mean, std), "y": label_fast_slow(train.hours, median), "mean": mean, "std": std}
    return TrainedModel("knn", params, median, train.encoder_state, {"k": k})


def knn_neighbors(model, X, chunk=128):
    """Indices of the k nearest training points per row, nearest first (stable on ties)."""
    p = model.params
    Z = _zscore(np.atleast_2d(np.asarray(X, dtype=float)), p["mean"], p["std"])
    T = p["X"]
    k = p["k"]
    out = np.empty((Z.shape[0], k), dtype=int)
    for start in range(0, Z.shape[0], chunk):
        diff = Z[start : start + chunk, None, :] - T[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        out[start : start + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def predict_knn(model, X):
    nbrs = knn_neighbors(model, X)
    labels = model.params["y"][nbrs]
    k = nbrs.shape[1]
    slow_votes = labels.sum(axis=1)
    pred = np.where(2 * slow_votes > k, SLOW, FAST)
    tie = 2 * slow_votes == k
    pred[tie] = labels[tie, 0]
    return pred


def train_nb(train, var_floor=1e-9):
    median = float(np.median(train.hours))
    y = label_fast_slow(train.hours, median)
    classes = [FAST, SLOW]
    if any(not np.any(y == c) for c in classes):
        raise DataError("naive Bayes needs both fast and slow examples")
    means = np.array([train.X[y == c].mean(axis=0) for c in classes])
    variances = np.maximum(np.array([train.X[y == c].var(axis=0) for c in classes]), var_floor)
    log_priors = np.log(np.array([np.mean(y == c) for c in classes]))
    params = {"means": means, "vars": variances, "log_priors": log_priors}
    return TrainedModel("naive_bayes", params, median, train.encoder_state, {"var_floor": var_floor})


def nb_log_posterior(model, X):
    """Unnormalized log posteriors, shape ``(n, 2)`` for (fast, slow)."""
    p = model.params
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ll = -0.5 * (
        np.log(2 * np.pi * p["vars"])[None, :, :]
        + (X[:, None, :] - p["means"][None, :, :]) ** 2 / p["vars"][None, :, :]
    ).sum(axis=2)
    return ll + p["log_priors"][None, :]


def predict_nb(model, X):
    lp = nb_log_posterior(model, X)
    return np.where(lp[:, SLOW] >= lp[:, FAST], SLOW, FAST)


def train_nn(train, mode="binary", seed=0, epochs=200, batch=32, lr=1e-4):
    """Fit the 5-layer network (normalization + 64/32/16 ReLU + output).

    ``binary`` learns fast/slow with cross-entropy on a logistic output;
    ``regression`` learns ``log(1 + hours)`` with squared error.
    """
    median = float(np.median(train.hours))
    if mode == "binary":
        target, loss, kind = label_fast_slow(train.hours, median).astype(float), "bce", "nn_binary"
    elif mode == "regression":
        target, loss, kind = np.log1p(train.hours), "mse", "nn_regression"
    else:
        raise DataError(f"mode must be binary or regression, got {mode!r}")
    net, history = nn.fit(train.X, target, loss, seed=seed, epochs=epochs, batch=batch, lr=lr)
    meta = {
        "hidden": list(nn.HIDDEN),
        "activation": "relu",
        "loss": loss,
        "optimizer": "adam",
        "learning_rate": lr,
        "epochs": epochs,
        "batch": batch,
        "seed": seed,
        "loss_history": history,
    }
    return TrainedModel(kind, {"net": net.to_json()}, median, train.encoder_state, meta)


def _net(model):
    if model._net is None:
        model._net = nn.MLP.from_json(model.params["net"])
    return model._net


MIN_PREDICTED_HOURS = 1.0 / 3600.0


def predict_time(model, X):
    """Predicted resolution hours (always positive) from a regression network."""
    if model.kind != "nn_regression":
        raise DataError(f"{model.kind} does not predict hours")
    out, _ = _net(model).forward(np.atleast_2d(X))
    return np.maximum(np.expm1(out), MIN_PREDICTED_HOURS)


def predict_class(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.kind == "knn":
        return predict_knn(model, X)
    if model.kind == "naive_bayes":
        return predict_nb(model, X)
    if model.kind == "nn_binary":
        out, _ = _net(model).forward(X)
        return np.where(nn.sigmoid(out) >= 0.5, SLOW, FAST)
    if model.kind == "nn_regression":
        return np.where(predict_time(model, X) < model.training_median_hours, FAST, SLOW)
    raise DataError(f"unknown model kind {model.kind!r}")


def train_model(kind, train, seed=0, **kwargs):
    if kind == "knn":
        return train_knn(train, k=kwargs.get("k", 5))
    if kind == "naive_bayes":
        return train_nb(train)
    if kind == "nn_binary":
        return train_nn(train, "binary", seed=seed, epochs=kwargs.get("epochs", 200))
    if kind == "nn_regression":
        return train_nn(train, "regression", seed=seed, epochs=kwargs.get("epochs", 200))
    raise DataError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    median_normalized_error: float = None
    n_test: int = 0
    per_repeat: tuple = ()

    def to_json(self):
        return {
            "accuracy": self.accuracy,
            "median_normalized_error": self.median_normalized_error,
            "n_test": self.n_test,
            "per_repeat": [r.to_json() for r in self.per_repeat],
        }


def normalized_errors(predicted, actual):
    actual = np.asarray(actual, dtype=float)
    return np.abs(np.asarray(predicted, dtype=float) - actual) / actual


def evaluate(model, test):
    """Accuracy against fast/slow labels (split at the model's training median).

    Regression models also report the median of ``|predicted - actual| / actual``.
    """
    if not len(test):
        raise DataError("empty test set")
    truth = label_fast_slow(test.hours, model.training_median_hours)
    accuracy = float(np.mean(predict_class(model, test.X) == truth))
    err = None
    if model.kind == "nn_regression":
        err = float(np.median(normalized_errors(predict_time(model, test.X), test.hours)))
    return EvalReport(accuracy, err, len(test))


def apply_filter_variant(corpus, variant, config=None, terminal="Closed"):
    config = config or FilterConfig()
    if variant == "none":
        return list(corpus)
    if variant in ("mild", "extreme"):
        return tukey_outlier_filter(corpus, variant, terminal)[0]
    if variant == "inactivity":
        return inactivity_filter(corpus, config.inactivity_gap_days, terminal)[0]
    raise DataError(f"unknown filter variant {variant!r}; expected one of {FILTER_VARIANTS}")


def cross_validate(
    corpus,
    repeats=10,
    models=MODEL_KINDS,
    filter_variant="none",
    base_seed=0,
    train_fraction=0.8,
    terminal="Closed",
    config=None,
    **train_kwargs,
):
    """Repeated random 80/20 evaluation; returns ``{kind: EvalReport}``.

    Repeat ``r`` splits with seed ``base_seed + r``, rebuilds the entity
    features from that training split, and trains every model kind with the
    same seed. Aggregates are means over repeats.
    """
    corpus = apply_filter_variant(corpus, filter_variant, config, terminal)
    per_kind = {kind: [] for kind in models}
    for r in range(repeats):
        seed = base_seed + r
        train_idx, test_idx = split_indices(len(corpus), train_fraction, seed)
        data = encode_features(corpus, {corpus[i].id for i in train_idx}, terminal)
        train, test = data.subset(train_idx), data.subset(test_idx)
        for kind in models:
            model = train_model(kind, train, seed=seed, **train_kwargs)
            per_kind[kind].append(evaluate(model, test))
    out = {}
    for kind, reports in per_kind.items():
        errs = [r.median_normalized_error for r in reports]
        out[kind] = EvalReport(
            accuracy=float(np.mean([r.accuracy for r in reports])),
            median_normalized_error=None if errs[0] is None else float(np.mean(errs)),
            n_test=reports[0].n_test,
            per_repeat=tuple(reports),
        )
    return out
