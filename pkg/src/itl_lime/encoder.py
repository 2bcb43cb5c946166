"""Contrastive encoder trained on the unified neighbourhood, and kernel weights.

Training follows the SCARF recipe: each row gets a corrupted view in which a
random subset of features is redrawn from the empirical marginals; an
encoder plus projection head maps both views to the unit sphere and InfoNCE
pulls matching pairs together. After training the head is dropped and
distances between raw encoder outputs define the neighbourhood weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import NonFiniteInput, ShapeMismatch, TooFewInstances, UntrainedNet
from .seeding import derive_seed, make_rng
from .tabular import EncodingState, MarginalTable, marginals as build_marginals
from .transfer import UnifiedNeighborhood


@dataclass(frozen=True)
class ContrastiveConfig:
    corruption_rate: float = 0.6
    temperature: float = 1.0
    batch_size: int = 64
    learning_rate: float = 0.001
    epochs: int = 200
    dropout: float = 0.1
    seed: int = 0
    hidden: int = 256
    encoder_depth: int = 4
    head_depth: int = 2
    optimizer: str = "adam"
    early_stop_patience: int = 20
    early_stop_tol: float = 1e-5
    distance: str = "euclidean"  # embedding distance for weighting; or "cosine"

    def __post_init__(self):
        if not 0.0 < self.corruption_rate < 1.0:
            raise ValueError("corruption_rate must lie in (0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.distance not in ("euclidean", "cosine"):
            raise ValueError(f"unknown embedding distance {self.distance!r}")


@dataclass
class EncoderNet:
    params: dict
    input_width: int
    hidden: int
    encoder_depth: int
    head_depth: int
    dropout: float = 0.1
    trained: bool = False
    loss_history: list = field(default_factory=list)

    @classmethod
    def init(cls, input_width: int, cfg: ContrastiveConfig, rng=None) -> "EncoderNet":
        rng = make_rng(derive_seed(cfg.seed, "encoder-init") if rng is None else rng)
        enc = [input_width] + [cfg.hidden] * cfg.encoder_depth
        head = [cfg.hidden] * (cfg.head_depth + 1)
        params = nn.init_mlp(enc, rng, "enc_")
        params.update(nn.init_mlp(head, rng, "head_"))
        return cls(params, input_width, cfg.hidden, cfg.encoder_depth, cfg.head_depth, cfg.dropout)

    def to_json(self) -> str:
        meta = {"input_width": self.input_width, "hidden": self.hidden,
                "encoder_depth": self.encoder_depth, "head_depth": self.head_depth,
                "dropout": self.dropout, "trained": self.trained}
        return nn.params_to_json(self.params, meta)

    @classmethod
    def from_json(cls, text: str) -> "EncoderNet":
        params, meta = nn.params_from_json(text)
        return cls(params, meta["input_width"], meta["hidden"], meta["encoder_depth"],
                   meta["head_depth"], meta["dropout"], meta["trained"])


def _n_corrupt(c: float, d: int) -> int:
    # guard against 0.7 * 10 == 7.000000000000001
    return max(1, min(d, math.ceil(c * d - 1e-9)))


class EncodedMarginals:
    """Marginal pools pre-encoded against ``state`` for fast repeated draws."""

    def __init__(self, marginal_table: MarginalTable, state: EncodingState):
        self.state = state
        self.pools = []
        for g in state.groups:
            keys, probs = marginal_table.probabilities(g.feature)
            values = state.encode_value(g.feature, np.array(keys, dtype=object)
                                        if g.kind != "numeric" else np.asarray(keys, dtype=np.float64))
            self.pools.append((values, np.cumsum(probs)))

    def draw(self, j: int, size: int, rng: np.random.Generator) -> np.ndarray:
        values, cum = self.pools[j]
        idx = np.minimum(np.searchsorted(cum, rng.random(size) * cum[-1], side="right"),
                         values.shape[0] - 1)
        return values[idx]


def corrupt(batch: np.ndarray, marginal_table, c: float, rng: np.random.Generator,
            state: EncodingState) -> np.ndarray:
    """Replace ``ceil(c*d)`` randomly chosen features of every row with marginal draws.

    One-hot blocks are replaced as a whole.
    """
    if not 0.0 < c < 1.0:
        raise ValueError("corruption rate must lie in (0, 1)")
    if not isinstance(marginal_table, EncodedMarginals):
        marginal_table = EncodedMarginals(marginal_table, state)
    rng = make_rng(rng)
    out = np.array(batch, dtype=np.float64, copy=True)
    n, d = out.shape[0], state.schema.d
    q = _n_corrupt(c, d)
    chosen = np.argsort(rng.random((n, d)), axis=1)[:, :q]
    mask = np.zeros((n, d), dtype=bool)
    mask[np.arange(n)[:, None], chosen] = True
    for g in state.groups:
        rows = np.flatnonzero(mask[:, g.feature])
        if rows.size:
            out[rows, g.start:g.stop] = marginal_table.draw(g.feature, rows.size, rng)
    return out


def l2_normalize(u: np.ndarray):
    """Row-normalise; zero rows stay zero. Returns ``(z, norms)``."""
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, u / safe, 0.0), norms


def _normalize_backward(z, norms, gz):
    safe = np.where(norms > 0, norms, 1.0)
    gu = (gz - z * np.sum(z * gz, axis=1, keepdims=True)) / safe
    return np.where(norms > 0, gu, 0.0)


def _forward(net: EncoderNet, rows, use_head, rng=None):
    drop = net.dropout if rng is not None else 0.0
    h, enc_cache = nn.mlp_forward(net.params, rows, "enc_", relu_last=True, dropout=drop, rng=rng)
    if not use_head:
        return h, (enc_cache, None, None, None)
    # the head's last layer is linear so embeddings are not confined to the positive orthant
    u, head_cache = nn.mlp_forward(net.params, h, "head_", relu_last=False)
    z, norms = l2_normalize(u)
    return z, (enc_cache, head_cache, z, norms)


def _backward(net: EncoderNet, cache, gz):
    enc_cache, head_cache, z, norms = cache
    gu = _normalize_backward(z, norms, gz)
    g_head, gh = nn.mlp_backward(net.params, head_cache, gu, "head_")
    g_enc, _ = nn.mlp_backward(net.params, enc_cache, gh, "enc_")
    g_head.update(g_enc)
    return g_head


def embed(net: EncoderNet, rows, use_head: bool = True, train_mode: bool = False,
          rng=None) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != net.input_width:
        raise ShapeMismatch(f"rows have width {rows.shape[1]}, encoder expects {net.input_width}")
    drop_rng = make_rng(rng if rng is not None else 0) if train_mode else None
    out, _ = _forward(net, rows, use_head, drop_rng)
    return out


def info_nce(z: np.ndarray, z_tilde: np.ndarray, tau: float = 1.0):
    """Contrastive loss with the 1/N-scaled denominator; may be negative.

    Returns ``(loss, grad_z, grad_z_tilde)``. Rows are assumed unit-norm, so
    the similarity matrix is the plain inner product.
    """
    z = np.asarray(z, dtype=np.float64)
    z_tilde = np.asarray(z_tilde, dtype=np.float64)
    if z.shape != z_tilde.shape:
        raise ShapeMismatch(f"{z.shape} vs {z_tilde.shape}")
    if not (np.isfinite(z).all() and np.isfinite(z_tilde).all()):
        raise NonFiniteInput("embeddings contain NaN or inf")
    N = z.shape[0]
    logits = (z @ z_tilde.T) / tau
    shift = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - shift)
    lse = np.log(e.sum(axis=1)) + shift[:, 0]
    loss = float(np.mean(lse - np.log(N) - np.diag(logits)))
    G = (e / e.sum(axis=1, keepdims=True) - np.eye(N)) / (tau * N)
    return loss, G @ z_tilde, G.T @ z


def contrastive_step(net: EncoderNet, x: np.ndarray, x_tilde: np.ndarray, tau: float,
                     rng=None):
    """Loss and parameter gradients for one (original, corrupted) batch.

    Dropout is active only when ``rng`` is supplied.
    """
    z, cz = _forward(net, x, True, rng)
    zt, czt = _forward(net, x_tilde, True, rng)
    loss, gz, gzt = info_nce(z, zt, tau)
    grads = _backward(net, cz, gz)
    for k, v in _backward(net, czt, gzt).items():
        grads[k] += v
    return loss, grads


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    if n <= batch_size:
        return [order]
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if chunks[-1].size < 2:
        # InfoNCE on a single row carries no signal
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


def train_encoder(unified: UnifiedNeighborhood, marginal_table: MarginalTable | None,
                  cfg: ContrastiveConfig, state: EncodingState) -> EncoderNet:
    """Fit encoder and head on the unified set; returns the trained net.

    ``marginal_table`` defaults to the marginals of the unified set itself.
    """
    X = np.asarray(unified.instances, dtype=np.float64)
    if X.shape[0] < 2:
        raise TooFewInstances("contrastive training needs at least two rows")
    if marginal_table is None:
        marginal_table = build_marginals(unified.raw)
    pools = EncodedMarginals(marginal_table, state)
    net = EncoderNet.init(X.shape[1], cfg)
    opt = nn.make_optimizer(cfg.optimizer, cfg.learning_rate)
    rng = make_rng(derive_seed(cfg.seed, "encoder-train"))
    history = []
    best, since_best = np.inf, 0
    for _ in range(cfg.epochs):
        losses, sizes = [], []
        for idx in _batches(X.shape[0], cfg.batch_size, rng):
            xb = X[idx]
            xt = corrupt(xb, pools, cfg.corruption_rate, rng, state)
            loss, grads = contrastive_step(net, xb, xt, cfg.temperature, rng)
            opt.step(net.params, grads)
            losses.append(loss)
            sizes.append(idx.size)
        history.append(float(np.average(losses, weights=sizes)))
        if history[-1] < best - cfg.early_stop_tol:
            best, since_best = history[-1], 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    net.trained = True
    net.loss_history = history
    return net


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    kernel_width: float
    distances: np.ndarray


def kernel_weights(d: np.ndarray, sigma) -> tuple[np.ndarray, float]:
    """Exponential kernel ``exp(-d^2 / (2 sigma^2))``; ``sigma='auto'`` uses the median."""
    d = np.asarray(d, dtype=np.float64)
    if sigma == "auto" or sigma is None:
        sigma = float(np.median(d)) if d.size else 1.0
        if sigma == 0.0:
            sigma = max(float(d.max()) if d.size else 0.0, 1e-12)
    sigma = float(sigma)
    if sigma <= 0:
        raise ValueError("kernel width must be positive")
    return np.exp(-(d * d) / (2.0 * sigma * sigma)), sigma


def embedding_distances(net: EncoderNet, x_t, rows, kind: str = "euclidean") -> np.ndarray:
    e_x = embed(net, np.asarray(x_t).reshape(1, -1), use_head=False)
    e_r = embed(net, rows, use_head=False)
    if kind == "cosine":
        e_x, _ = l2_normalize(e_x)
        e_r, _ = l2_normalize(e_r)
        return np.maximum(1.0 - e_r @ e_x[0], 0.0)
    return np.sqrt(np.sum((e_r - e_x) ** 2, axis=1))


def weigh(net: EncoderNet, x_t, unified: UnifiedNeighborhood, sigma="auto",
          kind: str = "euclidean") -> WeightVector:
    if not net.trained:
        raise UntrainedNet("encoder has not been trained")
    d = embedding_distances(net, x_t, unified.instances, kind)
    w, s = kernel_weights(d, sigma)
    return WeightVector(w, s, d)
