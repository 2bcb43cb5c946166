"""Black-box classifiers to be explained.

Two model families sit behind the same ``predict_proba`` interface: a ReLU
MLP with a sigmoid output, and logistic regression on RBF features whose
centres are k-medoids of the training set (a Gaussian-kernel SVM stand-in).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import nn
from .clustering import best_of_restarts
from .errors import ShapeMismatch, SingleClassData
from .seeding import derive_seed, make_rng

MLP = "mlp"
RBF = "rbf_kernel"


@dataclass(frozen=True)
class BlackBoxConfig:
    hidden: tuple[int, ...] = (256, 128, 64, 32)
    epochs: int = 200
    learning_rate: float = 0.001
    batch_size: int = 32
    weight_decay: float = 0.0
    n_centers: int = 20
    gamma: float | None = None  # None -> 1 / (p * var(X))
    gamma_rule: str = "scale"  # or "median"
    l2: float = 1.0
    max_newton_iters: int = 100

    @classmethod
    def from_dict(cls, obj: dict) -> "BlackBoxConfig":
        obj = dict(obj)
        if "hidden" in obj:
            obj["hidden"] = tuple(obj["hidden"])
        return cls(**obj)


@dataclass
class BlackBoxModel:
    kind: str
    params: dict
    config: BlackBoxConfig
    seed: int
    input_width: int
    extras: dict = field(default_factory=dict)

    def predict_proba(self, rows) -> np.ndarray:
        return predict_proba(self, rows)

    def predict_label(self, rows) -> np.ndarray:
        return (self.predict_proba(rows) >= 0.5).astype(np.int64)

    def to_json(self) -> str:
        meta = {"kind": self.kind, "config": asdict(self.config), "seed": self.seed,
                "input_width": self.input_width, "extras": self.extras}
        return nn.params_to_json(self.params, meta)

    @classmethod
    def from_json(cls, text: str) -> "BlackBoxModel":
        params, meta = nn.params_from_json(text)
        return cls(meta["kind"], params, BlackBoxConfig.from_dict(meta["config"]),
                   meta["seed"], meta["input_width"], meta.get("extras", {}))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "BlackBoxModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _logit_mlp(params, X):
    out, cache = nn.mlp_forward(params, X, relu_last=False)
    return out[:, 0], cache


def mlp_loss_and_grads(params: dict, X: np.ndarray, y: np.ndarray, weight_decay: float = 0.0):
    """Mean binary cross-entropy of a sigmoid-output MLP and its gradients."""
    logit, cache = _logit_mlp(params, X)
    # log(1 + e^x) - y x, computed stably
    loss = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
    g = ((expit(logit) - y) / X.shape[0])[:, None]
    grads, _ = nn.mlp_backward(params, cache, g)
    if weight_decay:
        for k in grads:
            if k.startswith("W"):
                loss += 0.5 * weight_decay * float(np.sum(params[k] ** 2))
                grads[k] += weight_decay * params[k]
    return loss, grads


def rbf_features(X: np.ndarray, centers: np.ndarray, gamma: float) -> np.ndarray:
    sq = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.exp(-gamma * sq)


def _train_mlp(X, y, cfg: BlackBoxConfig, seed: int) -> dict:
    rng = make_rng(derive_seed(seed, "blackbox-mlp-init"))
    params = nn.init_mlp([X.shape[1], *cfg.hidden, 1], rng)
    opt = nn.Adam(cfg.learning_rate)
    order_rng = make_rng(derive_seed(seed, "blackbox-mlp-order"))
    for _ in range(cfg.epochs):
        order = order_rng.permutation(X.shape[0])
        for lo in range(0, X.shape[0], cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            _, grads = mlp_loss_and_grads(params, X[idx], y[idx], cfg.weight_decay)
            opt.step(params, grads)
    return params


def _train_rbf(X, y, cfg: BlackBoxConfig, seed: int):
    n_centers = min(cfg.n_centers, X.shape[0])
    clus = best_of_restarts(X, n_centers, seed=derive_seed(seed, "blackbox-rbf-centers"), restarts=3)
    centers = X[list(clus.medoid_indices)]
    if cfg.gamma is not None:
        gamma = float(cfg.gamma)
    elif cfg.gamma_rule == "median":
        sq = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2)
        gamma = 1.0 / float(np.median(sq[np.triu_indices(X.shape[0], 1)]))
    else:
        var = float(X.var())
        gamma = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
    Phi = np.column_stack([rbf_features(X, centers, gamma), np.ones(X.shape[0])])
    w = np.zeros(Phi.shape[1])
    reg = np.full(Phi.shape[1], cfg.l2)
    reg[-1] = 0.0  # bias unpenalised
    for _ in range(cfg.max_newton_iters):
        p = expit(Phi @ w)
        grad = Phi.T @ (p - y) + reg * w
        H = (Phi * (p * (1 - p))[:, None]).T @ Phi + np.diag(reg) + 1e-10 * np.eye(w.size)
        step = np.linalg.solve(H, grad)
        w -= step
        if np.max(np.abs(step)) < 1e-10:
            break
    return {"centers": centers, "w": w[:-1], "b": np.array([w[-1]])}, gamma


def train_blackbox(X, y, kind: str = MLP, cfg: BlackBoxConfig | None = None,
                   seed: int = 0) -> BlackBoxModel:
    """Train on encoded rows ``X`` with binary labels ``y``."""
    cfg = cfg or BlackBoxConfig()
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.unique(y).size < 2:
        raise SingleClassData("training labels contain a single class")
    if kind == MLP:
        return BlackBoxModel(kind, _train_mlp(X, y, cfg, seed), cfg, seed, X.shape[1])
    if kind == RBF:
        params, gamma = _train_rbf(X, y, cfg, seed)
        return BlackBoxModel(kind, params, cfg, seed, X.shape[1], {"gamma": gamma})
    raise ValueError(f"unknown black-box kind {kind!r}")


def predict_proba(model: BlackBoxModel, rows) -> np.ndarray:
    X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if X.shape[1] != model.input_width:
        raise ShapeMismatch(f"rows have width {X.shape[1]}, model expects {model.input_width}")
    if model.kind == MLP:
        logit, _ = _logit_mlp(model.params, X)
    else:
        Phi = rbf_features(X, model.params["centers"], model.extras["gamma"])
        logit = Phi @ model.params["w"] + model.params["b"][0]
    return expit(logit)


def accuracy(model: BlackBoxModel, X, y) -> float:
    return float(np.mean(model.predict_label(X) == np.asarray(y)))

