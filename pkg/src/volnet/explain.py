"""Shapley-value feature attributions for trained classifiers.

The value function is interventional: v(S) is the model's mean score over
background rows whose features in S are replaced by the explained row's
values. Exact enumeration covers up to 12 features; the permutation
Monte-Carlo estimator handles wider models and reports standard errors.
Both estimators satisfy efficiency (attributions plus base equal the
prediction) — exactly for enumeration, and by telescoping for the
permutation estimator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .models import TrainedClassifier

EXACT_MAX_FEATURES = 12


@dataclass(frozen=True)
class Attribution:
    """Per-feature contributions for one explained row."""

    user: str
    per_feature: Mapping[str, float]
    base_value: float
    prediction: float
    std_err: Mapping[str, float] | None = None


def _check_inputs(model: TrainedClassifier, x, background) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=float))
    d = len(model.feature_names)
    if x.shape[0] != d:
        raise ValueError(f"x has {x.shape[0]} features, model expects {d}")
    if background.shape[0] == 0:
        raise ValueError("background must be non-empty")
    if background.shape[1] != d:
        raise ValueError(f"background has {background.shape[1]} features, model expects {d}")
    return x, background


def shapley_exact(model: TrainedClassifier, x, background, user: str = "") -> Attribution:
    """Exact Shapley attributions by full subset enumeration (d <= 12)."""
    x, background = _check_inputs(model, x, background)
    d = x.shape[0]
    if d > EXACT_MAX_FEATURES:
        raise ValueError(
            f"{d} features exceeds the exact-enumeration cap of {EXACT_MAX_FEATURES}; "
            "use shapley_mc")
    m = background.shape[0]
    n_subsets = 1 << d

    # v[mask] = mean score over background rows with masked features from x.
    composite = np.repeat(background, n_subsets, axis=0).reshape(m, n_subsets, d)
    for j in range(d):
        masks_with_j = [s for s in range(n_subsets) if s >> j & 1]
        composite[:, masks_with_j, j] = x[j]
    v = model.scores(composite.reshape(m * n_subsets, d)).reshape(m, n_subsets).mean(axis=0)

    # weight of a coalition of size s when adding one more feature
    fact = [math.factorial(i) for i in range(d + 1)]
    weight = [fact[s] * fact[d - s - 1] / fact[d] for s in range(d)]
    popcount = np.array([bin(s).count("1") for s in range(n_subsets)])

    phi = np.zeros(d)
    for j in range(d):
        bit = 1 << j
        without = np.array([s for s in range(n_subsets) if not s & bit])
        w = np.array([weight[c] for c in popcount[without]])
        phi[j] = float(np.sum(w * (v[without | bit] - v[without])))

    per_feature = {name: float(p) for name, p in zip(model.feature_names, phi)}
    return Attribution(user=user, per_feature=per_feature,
                       base_value=float(v[0]), prediction=float(v[n_subsets - 1]))


def shapley_mc(
    model: TrainedClassifier,
    x,
    background,
    n_permutations: int = 1000,
    seed: int = 0,
    user: str = "",
) -> Attribution:
    """Permutation-sampling Shapley estimate with per-feature standard errors.

    Each permutation draws one background row and flips features to the
    explained row's values in permutation order; a feature's contribution
    is the score change when it flips. Deterministic per seed.
    """
    x, background = _check_inputs(model, x, background)
    if n_permutations < 100:
        raise ValueError("need at least 100 permutations")
    d = x.shape[0]
    rng = np.random.default_rng(seed)

    rows = np.empty((n_permutations * (d + 1), d))
    orders = np.empty((n_permutations, d), dtype=int)
    for t in range(n_permutations):
        base_row = background[int(rng.integers(background.shape[0]))]
        order = rng.permutation(d)
        orders[t] = order
        z = base_row.copy()
        block = t * (d + 1)
        rows[block] = z
        for step, j in enumerate(order):
            z[j] = x[j]
            rows[block + step + 1] = z
    scores = model.scores(rows).reshape(n_permutations, d + 1)

    deltas = np.diff(scores, axis=1)  # contribution of the feature flipped at each step
    contrib = np.empty((n_permutations, d))
    for t in range(n_permutations):
        contrib[t, orders[t]] = deltas[t]

    phi = contrib.mean(axis=0)
    spread = contrib.std(axis=0, ddof=1) if n_permutations > 1 else np.zeros(d)
    std_err = spread / math.sqrt(n_permutations)

    per_feature = {name: float(p) for name, p in zip(model.feature_names, phi)}
    errs = {name: float(e) for name, e in zip(model.feature_names, std_err)}
    return Attribution(user=user, per_feature=per_feature,
                       base_value=float(scores[:, 0].mean()),
                       prediction=float(model.scores(x.reshape(1, -1))[0]),
                       std_err=errs)


def importance_from_attributions(
    attributions: Sequence[Attribution],
    feature_names: Sequence[str],
) -> list[tuple[str, float]]:
    """Mean |phi| per feature over attributions, descending; ties sort by name."""
    if not attributions:
        raise ValueError("no attributions to aggregate")
    totals = np.zeros(len(feature_names))
    for att in attributions:
        totals += np.abs([att.per_feature[name] for name in feature_names])
    means = totals / len(attributions)
    ranked = sorted(zip(feature_names, means), key=lambda kv: (-kv[1], kv[0]))
    return [(name, float(value)) for name, value in ranked]


def global_importance(
    model: TrainedClassifier,
    X,
    background,
    seed: int = 0,
    n_permutations: int = 300,
    max_rows: int | None = None,
) -> list[tuple[str, float]]:
    """Mean |attribution| per feature over the rows of ``X``, descending.

    Ties order alphabetically. Rows beyond ``max_rows`` (when set) are
    skipped via a seeded subsample, keeping large runs cheap.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rng = np.random.default_rng(seed)
    if max_rows is not None and X.shape[0] > max_rows:
        keep = np.sort(rng.choice(X.shape[0], size=max_rows, replace=False))
        X = X[keep]
    atts = [shapley_mc(model, X[i], background,
                       n_permutations=n_permutations, seed=seed + 1 + i)
            for i in range(X.shape[0])]
    return importance_from_attributions(atts, model.feature_names)


def background_sample(X, size: int = 100, seed: int = 0) -> np.ndarray:
    """Seeded background subsample (at most ``size`` rows) for the value function."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] <= size:
        return X.copy()
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(X.shape[0], size=size, replace=False))
    return X[keep]


def write_attribution_csv(attributions: Sequence[Attribution], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "feature", "phi", "std_err"])
        for att in attributions:
            errs = att.std_err or {}
            for feature in att.per_feature:
                writer.writerow([att.user, feature,
                                 f"{att.per_feature[feature]:.6f}",
                                 f"{errs.get(feature, 0.0):.6f}"])


def write_importance_csv(ranked: Sequence[tuple[str, float]], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "mean_abs_phi", "rank"])
        for rank, (feature, value) in enumerate(ranked, start=1):
            writer.writerow([feature, f"{value:.6f}", rank])
