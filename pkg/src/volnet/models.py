"""From-scratch binary classifiers with stratified cross-validation.

Six model families share one calling convention: ``train`` fits on a
feature matrix and 0/1 labels, the result scores rows with a value in
[0, 1], and label 1 ("changes") is predicted at score >= 0.5. Learned
state is kept JSON-serializable so models round-trip through save/load.

Score semantics per family: naive Bayes and trees emit class-1
posterior/leaf fractions; logistic regression and boosted trees emit a
sigmoid probability; the linear SVM emits a sigmoid-squashed margin
(monotone in the decision value, not calibrated).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

ALGORITHMS = (
    "naive_bayes",
    "decision_tree",
    "logistic_regression",
    "random_forest",
    "linear_svm",
    "gbdt",
)

DEFAULT_HYPERPARAMS: dict[str, dict] = {
    "naive_bayes": {"var_floor": 1e-9},
    "decision_tree": {"max_depth": 6, "min_samples_leaf": 2},
    "logistic_regression": {"l2": 1e-3, "epochs": 500, "learning_rate": 0.1},
    "random_forest": {"n_trees": 100, "max_depth": 6, "min_samples_leaf": 2},
    "linear_svm": {"l2": 1e-3, "epochs": 500},
    "gbdt": {"n_rounds": 100, "max_depth": 3, "learning_rate": 0.1, "l2": 1.0},
}

#: Families that z-score features internally (fitted on training data only).
_STANDARDIZED = ("logistic_regression", "linear_svm")


@dataclass(frozen=True)
class TrainedClassifier:
    """A fitted model: algorithm tag plus JSON-safe learned parameters."""

    algorithm: str
    parameters: dict
    hyperparams: dict
    seed: int
    feature_names: tuple[str, ...]

    def scores(self, X) -> np.ndarray:
        """Class-1 scores in [0, 1] for each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        if "constant" in self.parameters:
            return np.full(X.shape[0], float(self.parameters["constant"]))
        return _SCORERS[self.algorithm](self.parameters, X)


@dataclass(frozen=True)
class EvalReport:
    """Cross-validation outcome: per-fold and aggregate accuracy/F1."""

    algorithm: str
    k: int
    seed: int
    fold_accuracy: tuple[float, ...]
    fold_f1: tuple[float, ...]
    mean_accuracy: float
    std_accuracy: float
    mean_f1: float
    std_f1: float
    confusion: Mapping[str, int]  # tp/fp/tn/fn totals over all test folds
    degenerate_folds: tuple[int, ...] = ()
    fold_scaler_stats: tuple = field(default=(), repr=False)


# ---------------------------------------------------------------------------
# shared helpers

def _validate_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} rows vs {y.shape[0]} labels")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    return X, y


def _fit_scaler(X: np.ndarray) -> dict:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return {"mean": mean.tolist(), "std": std.tolist()}


def _apply_scaler(scaler: Mapping, X: np.ndarray) -> np.ndarray:
    return (X - np.asarray(scaler["mean"])) / np.asarray(scaler["std"])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _constant_params(y: np.ndarray) -> dict:
    return {"constant": float(y[0])}


# ---------------------------------------------------------------------------
# decision trees (shared by the tree, forest, and boosting families)

def _gini(counts1: np.ndarray, total: np.ndarray) -> np.ndarray:
    """Gini impurity given class-1 counts and totals (vectorized)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        p1 = np.where(total > 0, counts1 / total, 0.0)
    return 1.0 - p1 ** 2 - (1.0 - p1) ** 2


def _split_candidates(values: np.ndarray) -> np.ndarray:
    """Indices i where a cut between sorted positions i and i+1 is real."""
    return np.nonzero(values[:-1] < values[1:])[0]


def _best_gini_split(X, y, idx, features, min_leaf):
    """Best (feature, threshold) by Gini gain; ties keep the lowest feature
    then the lowest threshold. Returns None when no valid cut exists."""
    n = idx.size
    node_y = y[idx]
    n1 = int(node_y.sum())
    parent = _gini(np.array([n1]), np.array([n]))[0]
    best = None  # (gain, feature, threshold)
    for j in features:
        order = np.argsort(X[idx, j], kind="stable")
        sv = X[idx[order], j]
        sy = node_y[order]
        cuts = _split_candidates(sv)
        if cuts.size == 0:
            continue
        left_n = cuts + 1
        right_n = n - left_n
        ok = (left_n >= min_leaf) & (right_n >= min_leaf)
        if not ok.any():
            continue
        cum1 = np.cumsum(sy)
        left1 = cum1[cuts]
        right1 = n1 - left1
        child = (left_n * _gini(left1, left_n) + right_n * _gini(right1, right_n)) / n
        gain = np.where(ok, parent - child, -np.inf)
        pick = int(np.argmax(gain))  # first max = lowest threshold
        if gain[pick] == -np.inf:
            continue
        thr = float((sv[cuts[pick]] + sv[cuts[pick] + 1]) / 2.0)
        if best is None or gain[pick] > best[0] + 1e-12:
            best = (float(gain[pick]), int(j), thr)
    return best


def _grow_tree(X, y, idx, depth, max_depth, min_leaf, rng, n_subsample):
    """Recursive CART node builder; leaves store the class-1 fraction.

    Impure nodes split on the best Gini gain even when that gain is zero
    (a zero-gain cut can still enable a useful second-level split, as in
    parity-structured data)."""
    node_y = y[idx]
    p1 = float(node_y.mean())
    if depth >= max_depth or idx.size < 2 * min_leaf or p1 in (0.0, 1.0):
        return {"leaf": p1, "n": int(idx.size)}
    d = X.shape[1]
    if rng is not None and n_subsample < d:
        features = np.sort(rng.choice(d, size=n_subsample, replace=False))
    else:
        features = np.arange(d)
    best = _best_gini_split(X, y, idx, features, min_leaf)
    if best is None:
        return {"leaf": p1, "n": int(idx.size)}
    _, j, thr = best
    mask = X[idx, j] <= thr
    left = _grow_tree(X, y, idx[mask], depth + 1, max_depth, min_leaf, rng, n_subsample)
    right = _grow_tree(X, y, idx[~mask], depth + 1, max_depth, min_leaf, rng, n_subsample)
    return {"feature": j, "threshold": thr, "left": left, "right": right}


def _tree_scores(node: Mapping, X: np.ndarray, out: np.ndarray, idx: np.ndarray) -> None:
    if "leaf" in node:
        out[idx] = node["leaf"]
        return
    mask = X[idx, node["feature"]] <= node["threshold"]
    _tree_scores(node["left"], X, out, idx[mask])
    _tree_scores(node["right"], X, out, idx[~mask])


def _eval_tree(node: Mapping, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    _tree_scores(node, X, out, np.arange(X.shape[0]))
    return out


# ---------------------------------------------------------------------------
# training per family

def _train_naive_bayes(X, y, hp, seed):
    floor = hp["var_floor"]
    params = {"classes": [], "log_prior": [], "mean": [], "var": []}
    for c in (0, 1):
        rows = X[y == c]
        params["classes"].append(c)
        params["log_prior"].append(float(np.log(rows.shape[0] / X.shape[0])))
        params["mean"].append(rows.mean(axis=0).tolist())
        params["var"].append(np.maximum(rows.var(axis=0), floor).tolist())
    return params


def _score_naive_bayes(params, X):
    joint = []
    for i in range(2):
        mean = np.asarray(params["mean"][i])
        var = np.asarray(params["var"][i])
        ll = -0.5 * (np.log(2 * np.pi * var) + (X - mean) ** 2 / var).sum(axis=1)
        joint.append(params["log_prior"][i] + ll)
    joint = np.vstack(joint)
    return np.exp(joint[1] - np.logaddexp(joint[0], joint[1]))


def _train_decision_tree(X, y, hp, seed):
    root = _grow_tree(X, y, np.arange(X.shape[0]), 0, hp["max_depth"],
                      hp["min_samples_leaf"], rng=None, n_subsample=X.shape[1])
    return {"tree": root}


def _score_decision_tree(params, X):
    return _eval_tree(params["tree"], X)


def _train_logistic_regression(X, y, hp, seed):
    scaler = _fit_scaler(X)
    Z = _apply_scaler(scaler, X)
    n, d = Z.shape
    w = np.zeros(d)
    b = 0.0
    lr, lam = hp["learning_rate"], hp["l2"]
    for _ in range(hp["epochs"]):
        p = _sigmoid(Z @ w + b)
        grad_w = Z.T @ (p - y) / n + lam * w
        grad_b = float((p - y).mean())
        w -= lr * grad_w
        b -= lr * grad_b
    return {"weights": w.tolist(), "bias": b, "scaler": scaler}


def _score_logistic_regression(params, X):
    Z = _apply_scaler(params["scaler"], X)
    return _sigmoid(Z @ np.asarray(params["weights"]) + params["bias"])


def _train_random_forest(X, y, hp, seed):
    rng = np.random.default_rng(seed)
    n, d = X.shape
    n_subsample = max(1, int(np.sqrt(d)))
    trees = []
    for _ in range(hp["n_trees"]):
        sample = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[sample], y[sample], np.arange(n), 0,
                                hp["max_depth"], hp["min_samples_leaf"],
                                rng=rng, n_subsample=n_subsample))
    return {"trees": trees}


def _score_random_forest(params, X):
    votes = [_eval_tree(t, X) for t in params["trees"]]
    return np.mean(votes, axis=0)


def _train_linear_svm(X, y, hp, seed):
    """Hinge-loss SGD with 1/(lambda*t) steps; the intercept rides along as
    an augmented constant feature, so it shares the light L2 penalty."""
    scaler = _fit_scaler(X)
    Z = np.hstack([_apply_scaler(scaler, X), np.ones((X.shape[0], 1))])
    target = np.where(y == 1, 1.0, -1.0)
    rng = np.random.default_rng(seed)
    n, d = Z.shape
    lam = hp["l2"]
    w = np.zeros(d)
    t = 0
    for _ in range(hp["epochs"]):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            w *= 1.0 - eta * lam
            if target[i] * (Z[i] @ w) < 1.0:
                w += eta * target[i] * Z[i]
    return {"weights": w.tolist(), "scaler": scaler}


def _score_linear_svm(params, X):
    Z = np.hstack([_apply_scaler(params["scaler"], X), np.ones((X.shape[0], 1))])
    return _sigmoid(Z @ np.asarray(params["weights"]))


def _best_second_order_split(X, g, h, idx, lam):
    """XGBoost-style split: maximize 0.5*(GL^2/(HL+lam) + GR^2/(HR+lam)
    - G^2/(H+lam)); only strictly positive gains split."""
    n = idx.size
    if n < 2:
        return None
    G = g[idx].sum()
    H = h[idx].sum()
    parent = G ** 2 / (H + lam)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[idx, j], kind="stable")
        sv = X[idx[order], j]
        cuts = _split_candidates(sv)
        if cuts.size == 0:
            continue
        cg = np.cumsum(g[idx[order]])[cuts]
        ch = np.cumsum(h[idx[order]])[cuts]
        gain = 0.5 * (cg ** 2 / (ch + lam)
                      + (G - cg) ** 2 / (H - ch + lam)
                      - parent)
        pick = int(np.argmax(gain))
        if gain[pick] <= 1e-12:
            continue
        if best is None or gain[pick] > best[0] + 1e-12:
            thr = float((sv[cuts[pick]] + sv[cuts[pick] + 1]) / 2.0)
            best = (float(gain[pick]), int(j), thr)
    return best


def _grow_boost_tree(X, g, h, idx, depth, max_depth, lam):
    best = None if depth >= max_depth else _best_second_order_split(X, g, h, idx, lam)
    if best is None:
        weight = -g[idx].sum() / (h[idx].sum() + lam)
        return {"leaf": float(weight), "n": int(idx.size)}
    _, j, thr = best
    mask = X[idx, j] <= thr
    return {"feature": j, "threshold": thr,
            "left": _grow_boost_tree(X, g, h, idx[mask], depth + 1, max_depth, lam),
            "right": _grow_boost_tree(X, g, h, idx[~mask], depth + 1, max_depth, lam)}


def _train_gbdt(X, y, hp, seed):
    n = X.shape[0]
    p_base = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    f0 = float(np.log(p_base / (1.0 - p_base)))
    raw = np.full(n, f0)
    lam, lr = hp["l2"], hp["learning_rate"]
    trees = []
    loss_history = []
    for _ in range(hp["n_rounds"]):
        p = np.clip(_sigmoid(raw), 1e-12, 1 - 1e-12)
        tree = _grow_boost_tree(X, p - y, p * (1.0 - p), np.arange(n), 0,
                                hp["max_depth"], lam)
        trees.append(tree)
        raw = raw + lr * _eval_tree(tree, X)
        p = np.clip(_sigmoid(raw), 1e-12, 1 - 1e-12)
        loss_history.append(float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()))
    return {"f0": f0, "learning_rate": lr, "trees": trees, "loss_history": loss_history}


def _score_gbdt(params, X):
    raw = np.full(X.shape[0], params["f0"])
    for tree in params["trees"]:
        raw += params["learning_rate"] * _eval_tree(tree, X)
    return _sigmoid(raw)


_TRAINERS = {
    "naive_bayes": _train_naive_bayes,
    "decision_tree": _train_decision_tree,
    "logistic_regression": _train_logistic_regression,
    "random_forest": _train_random_forest,
    "linear_svm": _train_linear_svm,
    "gbdt": _train_gbdt,
}

_SCORERS = {
    "naive_bayes": _score_naive_bayes,
    "decision_tree": _score_decision_tree,
    "logistic_regression": _score_logistic_regression,
    "random_forest": _score_random_forest,
    "linear_svm": _score_linear_svm,
    "gbdt": _score_gbdt,
}


def train(
    algorithm: str,
    X,
    y,
    hyperparams: Mapping | None = None,
    seed: int = 0,
    feature_names: Sequence[str] | None = None,
) -> TrainedClassifier:
    """Fit one model family on a 0/1-labeled feature matrix.

    A single-class ``y`` yields a constant predictor (with a warning)
    instead of failing, so degenerate folds stay survivable.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r} (expected one of {ALGORITHMS})")
    X, y = _validate_xy(X, y)
    hp = dict(DEFAULT_HYPERPARAMS[algorithm])
    if hyperparams:
        unknown = set(hyperparams) - set(hp)
        if unknown:
            raise ValueError(f"unknown hyperparameter(s) for {algorithm}: {sorted(unknown)}")
        hp.update(hyperparams)
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"f{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ValueError(f"{len(names)} feature names for {X.shape[1]} columns")
    if np.unique(y).size < 2:
        warnings.warn(f"single-class training data; {algorithm} degenerates to a "
                      "constant predictor", stacklevel=2)
        params = _constant_params(y)
    else:
        params = _TRAINERS[algorithm](X, y, hp, seed)
    return TrainedClassifier(algorithm=algorithm, parameters=params,
                             hyperparams=hp, seed=seed, feature_names=names)


def predict(model: TrainedClassifier, x) -> tuple[int, float]:
    """(label, score) for one feature vector; label 1 at score >= 0.5."""
    score = float(model.scores(np.asarray(x, dtype=float).reshape(1, -1))[0])
    return (1 if score >= 0.5 else 0, score)


def predict_labels(model: TrainedClassifier, X) -> np.ndarray:
    return (model.scores(X) >= 0.5).astype(int)


def metrics(y_true, y_pred) -> dict[str, float]:
    """Accuracy and F1 on the positive class (label 1, "changes")."""
    y_true = np.asarray(y_true, dtype=int).ravel()
    y_pred = np.asarray(y_pred, dtype=int).ravel()
    if y_true.size == 0:
        raise ValueError("empty input")
    if y_true.shape != y_pred.shape:
        raise ValueError("length mismatch")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    accuracy = float(np.mean(y_true == y_pred))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return {"accuracy": accuracy, "f1": f1}


def stratified_folds(y, k: int, seed: int = 0) -> list[np.ndarray]:
    """Test-index folds with per-class round-robin dealing.

    Each class's indices are shuffled with the seed and dealt to folds in
    turn, so every fold's class counts are within 1 of an even split.
    """
    y = np.asarray(y, dtype=int).ravel()
    if not 2 <= k <= y.size:
        raise ValueError(f"k={k} outside [2, {y.size}]")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    pos = 0  # runs on across classes so no fold stays empty when n >= k
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        for i in idx:
            folds[pos % k].append(int(i))
            pos += 1
    return [np.sort(np.array(f, dtype=int)) for f in folds]


def kfold_cv(
    algorithm: str,
    X,
    y,
    k: int = 10,
    seed: int = 0,
    hyperparams: Mapping | None = None,
    feature_names: Sequence[str] | None = None,
) -> EvalReport:
    """Stratified k-fold cross-validation of one model family.

    Every sample is tested exactly once. Folds whose training split lost a
    class are still evaluated (constant predictor) but flagged in
    ``degenerate_folds``. Scaler statistics of standardizing families are
    kept per fold so leakage is auditable.
    """
    X, y = _validate_xy(X, y)
    folds = stratified_folds(y, k, seed)
    accs: list[float] = []
    f1s: list[float] = []
    confusion = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    degenerate: list[int] = []
    scaler_stats: list = []
    for fold_no, test_idx in enumerate(folds):
        train_mask = np.ones(y.size, dtype=bool)
        train_mask[test_idx] = False
        X_tr, y_tr = X[train_mask], y[train_mask]
        if np.unique(y_tr).size < 2:
            degenerate.append(fold_no)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = train(algorithm, X_tr, y_tr, hyperparams, seed, feature_names)
        else:
            model = train(algorithm, X_tr, y_tr, hyperparams, seed, feature_names)
        scaler_stats.append(model.parameters.get("scaler")
                            if algorithm in _STANDARDIZED else None)
        y_hat = predict_labels(model, X[test_idx])
        y_tst = y[test_idx]
        m = metrics(y_tst, y_hat)
        accs.append(m["accuracy"])
        f1s.append(m["f1"])
        confusion["tp"] += int(np.sum((y_tst == 1) & (y_hat == 1)))
        confusion["fp"] += int(np.sum((y_tst == 0) & (y_hat == 1)))
        confusion["tn"] += int(np.sum((y_tst == 0) & (y_hat == 0)))
        confusion["fn"] += int(np.sum((y_tst == 1) & (y_hat == 0)))
    return EvalReport(
        algorithm=algorithm, k=k, seed=seed,
        fold_accuracy=tuple(accs), fold_f1=tuple(f1s),
        mean_accuracy=float(np.mean(accs)), std_accuracy=float(np.std(accs)),
        mean_f1=float(np.mean(f1s)), std_f1=float(np.std(f1s)),
        confusion=confusion, degenerate_folds=tuple(degenerate),
        fold_scaler_stats=tuple(scaler_stats),
    )


def save_model(model: TrainedClassifier, path: str) -> None:
    payload = {
        "version": 1,
        "algorithm": model.algorithm,
        "hyperparams": model.hyperparams,
        "seed": model.seed,
        "feature_names": list(model.feature_names),
        "parameters": model.parameters,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> TrainedClassifier:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != 1:
        raise ValueError(f"unsupported model version {payload.get('version')!r}")
    if payload["algorithm"] not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {payload['algorithm']!r}")
    return TrainedClassifier(
        algorithm=payload["algorithm"],
        parameters=payload["parameters"],
        hyperparams=payload["hyperparams"],
        seed=int(payload["seed"]),
        feature_names=tuple(payload["feature_names"]),
    )


def write_eval_csv(rows: Sequence[tuple[str, str, EvalReport]], path: str) -> None:
    """Rows of (model, case, report) to the model,case,accuracy,f1 table."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "case", "accuracy", "f1"])
        for algorithm, case, report in rows:
            writer.writerow([algorithm, case,
                             f"{report.mean_accuracy:.6f}", f"{report.mean_f1:.6f}"])
