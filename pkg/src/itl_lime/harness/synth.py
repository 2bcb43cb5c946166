"""Synthetic source/target pairs with covariate shift and a shared labeling rule."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidSpec
from ..seeding import derive_seed, make_rng
from ..tabular import CATEGORICAL, NUMERIC, Dataset, FeatureSchema, FeatureSpec


@dataclass(frozen=True)
class SynthShiftSpec:
    n_source: int = 5000
    n_target: int = 200
    n_numeric: int = 6
    n_categorical: int = 2
    n_categories: int = 3
    n_components: int = 15
    component_spread: float = 0.6
    center_box: float = 4.0
    # numeric features = latent @ mixing + noise when latent_dim is set
    latent_dim: int | None = None
    manifold_noise: float = 0.1
    # target offset, in units of the source marginal std of each shifted feature
    shift: float = 1.0
    shift_features: tuple[int, ...] = (0,)
    target_scale: float = 1.0
    label_noise: float = 0.05
    # multiplies the frequencies of the sinusoidal boundary
    boundary_frequency: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shift_features", tuple(int(j) for j in self.shift_features))
        if self.n_source < 1 or self.n_target < 2:
            raise InvalidSpec("need n_source >= 1 and n_target >= 2")
        if self.n_numeric < 1:
            raise InvalidSpec("need at least one numeric feature")
        if self.n_categorical and self.n_categories < 2:
            raise InvalidSpec("categorical features need >= 2 categories")
        if self.n_components < 1 or self.component_spread <= 0 or self.target_scale <= 0:
            raise InvalidSpec("invalid mixture parameters")
        if self.latent_dim is not None and not 1 <= self.latent_dim <= self.n_numeric:
            raise InvalidSpec("latent_dim must lie in [1, n_numeric]")
        if self.manifold_noise < 0:
            raise InvalidSpec("manifold_noise must be >= 0")
        if self.shift < 0:
            raise InvalidSpec("shift must be >= 0")
        if any(not 0 <= j < self.n_numeric for j in self.shift_features):
            raise InvalidSpec("shift_features must index numeric features")
        if self.boundary_frequency <= 0:
            raise InvalidSpec("boundary_frequency must be > 0")
        if not 0.0 <= self.label_noise < 0.5:
            raise InvalidSpec("label_noise must lie in [0, 0.5)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthShiftSpec":
        return cls(**obj)

    def schema(self) -> FeatureSchema:
        feats = [FeatureSpec(f"x{j}", NUMERIC) for j in range(self.n_numeric)]
        cats = tuple(chr(ord("a") + c) for c in range(self.n_categories))
        feats += [FeatureSpec(f"c{j}", CATEGORICAL, cats) for j in range(self.n_categorical)]
        return FeatureSchema(tuple(feats), "label")


@dataclass(frozen=True)
class _Mixture:
    centers: np.ndarray  # (M, latent width)
    mixing: np.ndarray | None  # (latent_dim, n_numeric)
    cat_probs: np.ndarray  # (M, n_categorical, n_categories)
    freq: np.ndarray  # labeling-function frequencies
    phase: np.ndarray
    cat_effect: np.ndarray  # (n_categorical, n_categories)


def _mixture(spec: SynthShiftSpec) -> _Mixture:
    rng = make_rng(derive_seed(spec.seed, "synth-mixture"))
    width = spec.latent_dim or spec.n_numeric
    centers = rng.uniform(-spec.center_box, spec.center_box, size=(spec.n_components, width))
    cat_probs = rng.dirichlet(np.ones(spec.n_categories), size=(spec.n_components, spec.n_categorical))
    freq = spec.boundary_frequency * rng.uniform(0.6, 1.4, size=spec.n_numeric)
    phase = rng.uniform(0, 2 * np.pi, size=spec.n_numeric)
    cat_effect = rng.normal(0.0, 0.8, size=(spec.n_categorical, spec.n_categories))
    mixing = None
    if spec.latent_dim is not None:
        mixing = rng.normal(0.0, 1.0, size=(spec.latent_dim, spec.n_numeric))
        mixing /= np.linalg.norm(mixing, axis=0, keepdims=True)
    return _Mixture(centers, mixing, cat_probs, freq, phase, cat_effect)


def _score(mix: _Mixture, num: np.ndarray, cats: np.ndarray) -> np.ndarray:
    s = np.sum(np.sin(mix.freq * num + mix.phase), axis=1)
    if num.shape[1] > 1:
        s = s + 0.3 * num[:, 0] * num[:, 1] / (1.0 + np.abs(num[:, 0] * num[:, 1]) / 4.0)
    for j in range(cats.shape[1]):
        s = s + mix.cat_effect[j, cats[:, j]]
    return s


def _draw(spec, mix, n, rng, offset, scale):
    comp = rng.integers(0, spec.n_components, size=n)
    latent = mix.centers[comp] + spec.component_spread * scale * rng.standard_normal(
        (n, mix.centers.shape[1]))
    if mix.mixing is None:
        num = latent
    else:
        num = latent @ mix.mixing + spec.manifold_noise * rng.standard_normal((n, spec.n_numeric))
    num = num + offset
    cats = np.zeros((n, spec.n_categorical), dtype=np.int64)
    for j in range(spec.n_categorical):
        u = rng.random(n)
        cum = np.cumsum(mix.cat_probs[comp, j, :], axis=1)
        cats[:, j] = np.minimum((u[:, None] > cum).sum(axis=1), spec.n_categories - 1)
    return num, cats


def _to_dataset(spec, schema, num, cats, labels):
    rows = np.empty((num.shape[0], schema.d), dtype=object)
    for j in range(spec.n_numeric):
        rows[:, j] = [float(v) for v in num[:, j]]
    for j in range(spec.n_categorical):
        rows[:, spec.n_numeric + j] = [schema.features[spec.n_numeric + j].categories[c] for c in cats[:, j]]
    return Dataset(schema, rows, labels)


def synth_generate(spec: SynthShiftSpec) -> tuple[Dataset, Dataset]:
    """Draw ``(source, target)``; the target mixture is offset along ``shift_features``."""
    mix = _mixture(spec)
    schema = spec.schema()
    rng_s = make_rng(derive_seed(spec.seed, "synth-source"))
    rng_t = make_rng(derive_seed(spec.seed, "synth-target"))
    rng_l = make_rng(derive_seed(spec.seed, "synth-labels"))

    s_num, s_cat = _draw(spec, mix, spec.n_source, rng_s, 0.0, 1.0)
    offset = np.zeros(spec.n_numeric)
    if spec.shift > 0:
        std = s_num.std(axis=0)
        offset[list(spec.shift_features)] = spec.shift * std[list(spec.shift_features)]
    t_num, t_cat = _draw(spec, mix, spec.n_target, rng_t, offset, spec.target_scale)

    s_score = _score(mix, s_num, s_cat)
    threshold = float(np.median(s_score))

    def labels(score, n):
        y = (score > threshold).astype(np.int64)
        flip = rng_l.random(n) < spec.label_noise
        return np.where(flip, 1 - y, y)

    source = _to_dataset(spec, schema, s_num, s_cat, labels(s_score, spec.n_source))
    target = _to_dataset(spec, schema, t_num, t_cat, labels(_score(mix, t_num, t_cat), spec.n_target))
    return source, target
