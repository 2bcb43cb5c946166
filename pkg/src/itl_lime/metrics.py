"""Explanation-quality metrics: fidelity, Jaccard stability, local Lipschitz robustness."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np

from .errors import LengthMismatch, ZeroPerturbation
from .seeding import derive_seed, make_rng
from .tabular import NUMERIC, EncodingState, MarginalTable


def f1_score(pred_labels, ref_labels, weights=None) -> float:
    """F1 of the positive class.

    When neither side has a positive the two labelings agree perfectly and
    the score is 1.
    """
    pred = np.asarray(pred_labels).astype(bool)
    ref = np.asarray(ref_labels).astype(bool)
    w = np.ones(pred.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    tp = float(np.sum(w[pred & ref]))
    fp = float(np.sum(w[pred & ~ref]))
    fn = float(np.sum(w[~pred & ref]))
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def roc_auc(scores, ref_labels, weights=None) -> float | None:
    """Mann-Whitney AUC with half credit for ties; ``None`` for a single-class reference."""
    s = np.asarray(scores, dtype=np.float64)
    ref = np.asarray(ref_labels).astype(bool)
    w = np.ones(s.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    w_pos = float(w[ref].sum())
    w_neg = float(w[~ref].sum())
    if ref.all() or (~ref).all() or w_pos == 0 or w_neg == 0:
        return None
    uniq, inv = np.unique(s, return_inverse=True)
    neg_at = np.bincount(inv, weights=np.where(ref, 0.0, w), minlength=uniq.size)
    neg_below = np.cumsum(neg_at) - neg_at
    credit = neg_below[inv] + 0.5 * neg_at[inv]
    return float(np.sum(w[ref] * credit[ref]) / (w_pos * w_neg))


def f1_auc(pred_scores, ref_labels, weights=None, threshold: float = 0.5):
    """``(f1, auc)`` of scores thresholded at ``threshold`` against reference labels."""
    s = np.asarray(pred_scores, dtype=np.float64)
    ref = np.asarray(ref_labels)
    if s.shape[0] != ref.shape[0] or (weights is not None and len(weights) != s.shape[0]):
        raise LengthMismatch(f"{s.shape[0]} scores vs {ref.shape[0]} labels")
    if s.shape[0] == 0:
        raise LengthMismatch("no scores to evaluate")
    return f1_score(s >= threshold, ref, weights), roc_auc(s, ref, weights)


def mean_present(values) -> float | None:
    """Mean that skips absent (``None``) entries."""
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    return 1.0 if not union else len(a & b) / len(union)


@dataclass
class StabilityReport:
    feature_sets: list
    pairwise: list
    mean_jc: float


def stability_from_sets(sets) -> StabilityReport:
    sets = [frozenset(s) for s in sets]
    if len(sets) < 2:
        raise ValueError("stability needs at least two runs")
    pairs = [jaccard(a, b) for a, b in combinations(sets, 2)]
    return StabilityReport([sorted(s) for s in sets], pairs, float(np.mean(pairs)))


def stability(explainer: Callable, x_t, k: int = 3, runs: int = 5,
              seed_policy: str = "varied", seed: int = 0) -> StabilityReport:
    """Mean pairwise Jaccard of top-``k`` sets over ``runs`` explainer calls.

    ``explainer(x, seed)`` must return an object exposing ``top_features(k)``.
    """
    if runs < 2:
        raise ValueError("stability needs at least two runs")
    if seed_policy not in ("fixed", "varied"):
        raise ValueError(f"unknown seed policy {seed_policy!r}")
    sets = []
    for r in range(runs):
        s = seed if seed_policy == "fixed" else derive_seed(seed, "stability-run", r)
        sets.append(explainer(x_t, s).top_features(k))
    return stability_from_sets(sets)


class Perturber:
    """Input noise for robustness: Gaussian on standardized numerics,
    marginal resampling of each categorical with probability ``s``."""

    def __init__(self, state: EncodingState, marginal_table: MarginalTable):
        self.state = state
        self.marginals = marginal_table

    def __call__(self, x, s: float, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = x.copy()
        for g in self.state.groups:
            if g.kind == NUMERIC:
                out[g.start] += rng.normal(0.0, s)
            elif rng.random() < s:
                out[g.start:g.stop] = self.marginals.sample_encoded(g.feature, 1, rng, self.state)[0]
        return out


@dataclass
class RobustnessReport:
    values: list
    noise: dict
    mean_lle: float
    ratios: list = field(default_factory=list)


def lle(explainer: Callable, x_t, perturb: Callable, eps_range=(0.01, 0.1), trials: int = 5,
        seed: int = 0, explainer_seed: int = 0, seed_policy: str = "fixed",
        max_redraws: int = 100) -> RobustnessReport:
    """Local Lipschitz estimate of the coefficient map around ``x_t``.

    ``explainer(x, seed)`` returns an object with ``coefficients``;
    ``perturb(x, s, rng)`` draws a neighbour at noise scale ``s``. With
    ``seed_policy='varied'`` every explainer call draws its own seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = make_rng(derive_seed(seed, "lle-noise"))
    x_t = np.asarray(x_t, dtype=np.float64)

    def call_seed(t):
        return explainer_seed if seed_policy == "fixed" else derive_seed(explainer_seed, "lle-call", t)

    base = np.asarray(explainer(x_t, call_seed("base")).coefficients, dtype=np.float64)
    ratios = []
    for t in range(trials):
        s = float(rng.uniform(*eps_range))
        for _ in range(max_redraws):
            x_p = perturb(x_t, s, rng)
            dx = float(np.linalg.norm(x_t - x_p))
            if dx > 0:
                break
        else:
            raise ZeroPerturbation("perturbation kept returning the input unchanged")
        coef = np.asarray(explainer(x_p, call_seed(t)).coefficients, dtype=np.float64)
        ratios.append(float(np.linalg.norm(base - coef)) / dx)
    value = max(ratios)
    return RobustnessReport([value], {"eps_range": list(eps_range), "trials": trials,
                                      "categorical_rule": "resample with probability s"},
                            value, ratios)


def robustness(explainer: Callable, instances, perturb: Callable, eps_range=(0.01, 0.1),
               trials: int = 5, seed: int = 0, seed_policy: str = "fixed") -> RobustnessReport:
    values, ratios = [], []
    for i, x in enumerate(instances):
        rep = lle(explainer, x, perturb, eps_range, trials, derive_seed(seed, "lle", i),
                  derive_seed(seed, "lle-explainer", i), seed_policy)
        values.append(rep.mean_lle)
        ratios.append(rep.ratios)
    return RobustnessReport(values, {"eps_range": list(eps_range), "trials": trials},
                            float(np.mean(values)), ratios)


def surrogate_score(explanation, x) -> float:
    return float(explanation.intercept + np.dot(explanation.coefficients, np.asarray(x)))


def true_label_eval(explanations, instances, labels):
    """Each surrogate scores its own explained instance; compared with true labels."""
    if len(explanations) != len(labels) or len(instances) != len(labels):
        raise LengthMismatch("explanations, instances and labels must align")
    scores = [surrogate_score(e, x) for e, x in zip(explanations, instances)]
    return f1_auc(scores, labels)
