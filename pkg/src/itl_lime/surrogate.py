"""Weighted linear surrogates: the transfer-based explainer and the LIME baseline."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .blackbox import BlackBoxModel
from .clustering import ClusteringResult, best_of_restarts
from .encoder import ContrastiveConfig, kernel_weights, train_encoder, weigh
from .errors import AllZeroWeights, ITLError, SingularSystem, StageError
from .metrics import f1_auc
from .seeding import derive_seed, make_rng
from .tabular import Dataset, EncodingState, Metric, gower_metric, marginals
from .transfer import XiRatio, build_unified

log = logging.getLogger(__name__)

ITL = "itl_lime"
LIME = "lime"
ITL_NO_WEIGHTING = "itl_no_weighting"
ITL_NO_TRANSFER = "itl_no_transfer"
METHODS = (ITL, LIME, ITL_NO_WEIGHTING, ITL_NO_TRANSFER)


@dataclass(frozen=True)
class SurrogateConfig:
    regularization: str = "l2"
    reg_strength: float = 1.0
    top_k: int = 3
    fidelity_split: float = 0.2

    def __post_init__(self):
        if self.regularization not in ("l1", "l2"):
            raise ValueError(f"unknown regularization {self.regularization!r}")
        if self.reg_strength < 0:
            raise ValueError("reg_strength must be >= 0")
        if not 0.0 < self.fidelity_split < 1.0:
            raise ValueError("fidelity_split must lie in (0, 1)")


@dataclass
class Explanation:
    coefficients: np.ndarray
    intercept: float
    column_names: list
    column_map: np.ndarray
    feature_names: list
    predicted_label: int
    fidelity: tuple  # (f1, auc or None)
    method: str
    top_k: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    instance_id: object = None

    def top_features(self, k: int | None = None) -> list:
        return top_features(self, len(self.top_k) if k is None else k)

    def predict(self, rows) -> np.ndarray:
        return np.atleast_2d(rows) @ self.coefficients + self.intercept

    def to_dict(self) -> dict:
        f1, auc = self.fidelity
        return {
            "method": self.method,
            "instance_id": self.instance_id,
            "coefficients": {c: float(v) for c, v in zip(self.column_names, self.coefficients)},
            "intercept": float(self.intercept),
            "top_k": list(self.top_k),
            "predicted_label": int(self.predicted_label),
            "fidelity": {"f1": f1, "auc": auc},
            "diagnostics": jsonable(self.diagnostics),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def top_features(expl: Explanation, k: int) -> list:
    """Schema features ranked by the largest |coefficient| among their columns."""
    if k < 1:
        raise ValueError("k must be >= 1")
    d = len(expl.feature_names)
    score = np.zeros(d)
    np.maximum.at(score, expl.column_map, np.abs(expl.coefficients))
    order = np.argsort(-score, kind="stable")
    return [expl.feature_names[j] for j in order[:min(k, d)]]


def _ridge(Xc, yc, w, lam):
    p = Xc.shape[1]
    A = Xc.T @ (Xc * w[:, None]) + lam * np.eye(p)
    b = Xc.T @ (w * yc)
    if lam == 0.0 and np.linalg.cond(A) > 1e12:
        raise SingularSystem("weighted normal equations are singular; use reg_strength > 0")
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc


def _lasso(Xc, yc, w, lam, tol=1e-8, max_sweeps=10000):
    # minimises sum w (y - X b)^2 + lam |b|_1 by cyclic coordinate descent
    p = Xc.shape[1]
    beta = np.zeros(p)
    z = np.sum(w[:, None] * Xc * Xc, axis=0)
    r = yc.copy()
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            if z[j] == 0.0:
                continue
            rho = np.dot(w * Xc[:, j], r) + z[j] * beta[j]
            new = np.sign(rho) * max(abs(rho) - lam / 2.0, 0.0) / z[j]
            delta = new - beta[j]
            if delta != 0.0:
                r -= Xc[:, j] * delta
                beta[j] = new
                max_delta = max(max_delta, abs(delta))
        if max_delta < tol:
            break
    return beta


def fit_weighted_linear(X, y, w, cfg: SurrogateConfig | None = None):
    """Weighted, regularised least squares with an unpenalised intercept.

    Returns ``(coefficients, intercept)``.
    """
    cfg = cfg or SurrogateConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(getattr(w, "weights", w), dtype=np.float64)
    if not (X.shape[0] == y.shape[0] == w.shape[0]):
        raise ValueError("X, y and w must have the same number of rows")
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise AllZeroWeights("all sample weights are zero")
    x_bar = (w @ X) / total
    y_bar = float(w @ y) / total
    Xc, yc = X - x_bar, y - y_bar
    if cfg.regularization == "l2":
        beta = _ridge(Xc, yc, w, cfg.reg_strength)
    else:
        beta = _lasso(Xc, yc, w, cfg.reg_strength)
    return beta, y_bar - float(x_bar @ beta)


def fidelity_split(n: int, frac: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Seeded ``(train, test)`` index split; both parts non-empty when ``n >= 2``."""
    perm = make_rng(seed).permutation(n)
    n_test = min(max(1, int(round(frac * n))), n - 1)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _fit_and_score(X, probs, w, cfg: SurrogateConfig, split_seed):
    train, test = fidelity_split(X.shape[0], cfg.fidelity_split, split_seed)
    coef, intercept = fit_weighted_linear(X[train], probs[train], w[train], cfg)
    ref = (probs[test] >= 0.5).astype(np.int64)
    scores = X[test] @ coef + intercept
    f1, auc = f1_auc(scores, ref, w[test])
    return coef, intercept, (f1, auc), {"n_train": int(train.size), "n_test": int(test.size)}


def _make_explanation(coef, intercept, state, pred, fid, method, cfg, diag, instance_id):
    expl = Explanation(np.asarray(coef), float(intercept), state.column_names, state.column_map,
                       state.schema.names, int(pred), fid, method, [], diag, instance_id)
    expl.top_k = top_features(expl, cfg.top_k)
    return expl


def lime_kernel_width(p: int) -> float:
    return 0.75 * np.sqrt(p)


@dataclass(frozen=True)
class ITLConfig:
    K: int = 15
    xi: XiRatio = field(default_factory=XiRatio)
    metric: str = "euclidean"
    encoder: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    sigma: object = "auto"
    kmedoids_restarts: int = 10
    kmedoids_max_iters: int = 100
    seed: int = 0


class ITLExplainer:
    """Explains black-box predictions on target rows with transferred source rows.

    The source clustering is computed once (or passed in) and shared across
    explained instances; trained encoders are cached by unified-set
    fingerprint and seed. There is no sampling step, so the only randomness
    (encoder initialisation and corruption, fidelity split) comes from
    ``config.seed`` unless ``explain`` is given an explicit seed.
    """

    def __init__(self, blackbox: BlackBoxModel, state: EncodingState, source: Dataset,
                 target: Dataset, config: ITLConfig | None = None,
                 clustering: ClusteringResult | None = None):
        self.blackbox = blackbox
        self.state = state
        self.source = source
        self.target = target
        self.config = config or ITLConfig()
        self.source_X = state.encode_rows(source.rows)
        self.target_X = state.encode_rows(target.rows)
        if self.config.metric == "gower":
            self.metric = gower_metric(state, self.source_X, self.target_X)
        else:
            self.metric = Metric(self.config.metric)
        if clustering is None:
            try:
                clustering = best_of_restarts(
                    self.source_X, self.config.K, self.metric,
                    derive_seed(self.config.seed, "source-clustering"),
                    self.config.kmedoids_restarts, self.config.kmedoids_max_iters)
            except ITLError as exc:
                raise StageError("clustering", exc) from exc
        self.clustering = clustering
        self._encoders = {}

    def __call__(self, x, seed=None):
        # call seeds are ignored: the explanation is a function of the config
        return self.explain(x)

    def variant(self, method: str) -> "_Variant":
        return _Variant(self, method)

    def _encoder_for(self, unified, cfg):
        key = (unified.fingerprint(), cfg)
        net = self._encoders.get(key)
        if net is None:
            net = train_encoder(unified, None, cfg, self.state)
            self._encoders[key] = net
        return net

    def explain(self, x, seed=None, method: str = ITL, exclude_target: int | None = None,
                instance_id=None) -> Explanation:
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        x = np.asarray(x, dtype=np.float64).ravel()
        try:
            pred = int(self.blackbox.predict_label(x[None, :])[0])
        except ITLError as exc:
            raise StageError("predict", exc) from exc
        try:
            unified = build_unified(
                x, self.clustering, self.source, self.source_X, self.target, self.target_X,
                pred, cfg.xi, self.metric, exclude_target,
                include_source=method != ITL_NO_TRANSFER)
        except ITLError as exc:
            raise StageError("transfer", exc) from exc
        return self.explain_unified(x, unified, pred, seed, method, instance_id)

    def explain_unified(self, x, unified, pred, seed=None, method: str = ITL,
                        instance_id=None) -> Explanation:
        """Weight ``unified``, query the black box and fit the surrogate."""
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        diag = dict(unified.diagnostics)
        if method == ITL_NO_WEIGHTING:
            sigma = lime_kernel_width(self.state.p)
            d = np.sqrt(np.sum((unified.instances - x) ** 2, axis=1))
            w, sigma = kernel_weights(d, sigma)
        else:
            enc_cfg = replace(cfg.encoder, seed=derive_seed(seed, "encoder"))
            try:
                net = self._encoder_for(unified, enc_cfg)
                wv = weigh(net, x, unified, cfg.sigma, enc_cfg.distance)
            except ITLError as exc:
                raise StageError("encoder", exc) from exc
            w, sigma = wv.weights, wv.kernel_width
            diag["encoder_epochs"] = len(net.loss_history)
            diag["encoder_final_loss"] = net.loss_history[-1]
        diag["kernel_width"] = float(sigma)
        try:
            probs = self.blackbox.predict_proba(unified.instances)
            coef, intercept, fid, split = _fit_and_score(
                unified.instances, probs, w, cfg.surrogate, derive_seed(seed, "fidelity-split"))
        except ITLError as exc:
            raise StageError("surrogate", exc) from exc
        diag.update(split)
        return _make_explanation(coef, intercept, self.state, pred, fid, method,
                                 cfg.surrogate, diag, instance_id)


class _Variant:
    """An explainer callable pinned to one method tag; like the base
    explainer it ignores call seeds."""

    def __init__(self, base: ITLExplainer, method: str):
        self.base = base
        self.method = method

    def __call__(self, x, seed=None):
        return self.base.explain(x, None, self.method)


def explain_itl(x, blackbox: BlackBoxModel, source: Dataset, target: Dataset,
                state: EncodingState, config: ITLConfig | None = None, seed: int | None = None,
                method: str = ITL, clustering: ClusteringResult | None = None) -> Explanation:
    """One-shot convenience wrapper around :class:`ITLExplainer`."""
    return ITLExplainer(blackbox, state, source, target, config, clustering).explain(x, seed, method)


class LimeExplainer:
    """Perturbation LIME on encoded rows.

    Numeric columns are standard-normal draws in the z-scored space, i.e.
    around the reference mean as classic LIME does, or around the instance
    with ``sample_around_instance``; categoricals are redrawn from the
    reference marginals. Row 0 of every sample is the instance itself.
    """

    def __init__(self, blackbox: BlackBoxModel, state: EncodingState, reference: Dataset,
                 n_samples: int = 5000, sigma: float | None = None,
                 cfg: SurrogateConfig | None = None, sample_around_instance: bool = False):
        if n_samples < state.p:
            raise ValueError(f"n_samples must be >= encoded width {state.p}")
        self.blackbox = blackbox
        self.state = state
        self.marginals = marginals(reference)
        self.n_samples = n_samples
        self.sigma = lime_kernel_width(state.p) if sigma is None else float(sigma)
        self.cfg = cfg or SurrogateConfig()
        self.sample_around_instance = sample_around_instance

    def __call__(self, x, seed=0):
        return self.explain(x, seed)

    def sample(self, x, rng) -> np.ndarray:
        rng = make_rng(rng)
        n = self.n_samples
        Z = np.repeat(np.asarray(x, dtype=np.float64)[None, :], n, axis=0)
        for g in self.state.groups:
            if g.kind == "numeric":
                noise = rng.standard_normal(n - 1)
                Z[1:, g.start] = Z[1:, g.start] + noise if self.sample_around_instance else noise
            else:
                Z[1:, g.start:g.stop] = self.marginals.sample_encoded(g.feature, n - 1, rng, self.state)
        return Z

    def explain(self, x, seed=0, instance_id=None) -> Explanation:
        x = np.asarray(x, dtype=np.float64).ravel()
        Z = self.sample(x, derive_seed(seed, "lime-sample"))
        d = np.sqrt(np.sum((Z - x) ** 2, axis=1))
        w, _ = kernel_weights(d, self.sigma)
        probs = self.blackbox.predict_proba(Z)
        pred = int(probs[0] >= 0.5)
        coef, intercept, fid, split = _fit_and_score(Z, probs, w, self.cfg,
                                                     derive_seed(seed, "fidelity-split"))
        diag = {"kernel_width": self.sigma, "n_samples": self.n_samples, **split}
        return _make_explanation(coef, intercept, self.state, pred, fid, LIME, self.cfg,
                                 diag, instance_id)


def explain_lime_baseline(x, blackbox: BlackBoxModel, target: Dataset, state: EncodingState,
                          n_samples: int = 5000, sigma: float | None = None, seed: int = 0,
                          cfg: SurrogateConfig | None = None,
                          sample_around_instance: bool = False) -> Explanation:
    return LimeExplainer(blackbox, state, target, n_samples, sigma, cfg,
                         sample_around_instance).explain(x, seed)
