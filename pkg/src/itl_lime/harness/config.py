"""Experiment configuration: one JSON or TOML file, flat where possible."""
from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..blackbox import MLP, RBF, BlackBoxConfig
from ..encoder import ContrastiveConfig
from ..errors import ConfigError
from ..surrogate import LIME, ITL, METHODS, SurrogateConfig
from ..transfer import XiRatio
from .synth import SynthShiftSpec

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_name: str = "synthetic"
    # either a synthetic spec or a pair of CSV paths sharing one schema file
    synth: SynthShiftSpec | None = field(default_factory=SynthShiftSpec)
    source_path: str | None = None
    target_path: str | None = None
    schema_path: str | None = None
    blackboxes: tuple[str, ...] = (MLP,)
    blackbox: BlackBoxConfig = field(default_factory=BlackBoxConfig)
    methods: tuple[str, ...] = METHODS
    K: int = 15
    k_candidates: tuple[int, ...] | None = None  # silhouette choice when set
    xi: XiRatio = field(default_factory=XiRatio)
    metric: str = "euclidean"
    sigma: object = "auto"
    encoder: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    kmedoids_restarts: int = 10
    kmedoids_max_iters: int = 100
    lime_samples: int = 5000
    n_explained: int = 40
    test_fraction: float = 0.2
    stability_runs: int = 5
    stability_seed_policy: str = "varied"
    stability_methods: tuple[str, ...] | None = None  # None -> every method
    stability_instances: int | None = None  # None -> every explained instance
    lle_trials: int = 5
    eps_range: tuple[float, float] = (0.01, 0.1)
    lle_seed_policy: str = "varied"
    robustness_methods: tuple[str, ...] | None = None
    robustness_instances: int | None = None
    seed: int = 0
    out_dir: str = "results"

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("method list is empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        for name in ("stability_methods", "robustness_methods"):
            sel = getattr(self, name)
            if sel is not None and any(m not in self.methods for m in sel):
                raise ConfigError(f"{name} must be a subset of methods")
        if not self.blackboxes or any(k not in (MLP, RBF) for k in self.blackboxes):
            raise ConfigError(f"blackboxes must be drawn from {[MLP, RBF]}")
        if self.synth is None and not (self.source_path and self.target_path and self.schema_path):
            raise ConfigError("give either a synth spec or source/target/schema paths")
        if self.K < 2 and self.k_candidates is None:
            raise ConfigError("K must be >= 2")
        if self.n_explained < 1:
            raise ConfigError("n_explained must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.stability_runs < 2:
            raise ConfigError("stability_runs must be >= 2")
        if self.lle_trials < 1:
            raise ConfigError("lle_trials must be >= 1")
        for policy in (self.stability_seed_policy, self.lle_seed_policy):
            if policy not in ("fixed", "varied"):
                raise ConfigError(f"unknown seed policy {policy!r}")
        lo, hi = self.eps_range
        if not 0 < lo <= hi:
            raise ConfigError("eps_range must satisfy 0 < lo <= hi")
        if self.sigma != "auto" and not (isinstance(self.sigma, (int, float)) and self.sigma > 0):
            raise ConfigError("sigma must be 'auto' or a positive number")

    @property
    def baseline_present(self) -> bool:
        return LIME in self.methods and ITL in self.methods

    def selected(self, which: str) -> tuple[str, ...]:
        sel = getattr(self, f"{which}_methods")
        return self.methods if sel is None else sel

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, XiRatio):
                v = str(v)
            elif hasattr(v, "__dataclass_fields__"):
                v = asdict(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(obj)
        try:
            if "synth" in kw and kw["synth"] is not None:
                kw["synth"] = SynthShiftSpec.from_dict(kw["synth"])
            if "blackbox" in kw:
                kw["blackbox"] = BlackBoxConfig.from_dict(kw["blackbox"])
            if "encoder" in kw:
                kw["encoder"] = ContrastiveConfig(**kw["encoder"])
            if "surrogate" in kw:
                kw["surrogate"] = SurrogateConfig(**kw["surrogate"])
            if "xi" in kw:
                kw["xi"] = XiRatio.parse(kw["xi"])
            for name in ("blackboxes", "methods", "k_candidates", "stability_methods",
                         "robustness_methods", "eps_range"):
                if kw.get(name) is not None:
                    kw[name] = tuple(kw[name])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            if path.suffix == ".toml":
                with open(path, "rb") as fh:
                    obj = tomllib.load(fh)
            else:
                with open(path, encoding="utf-8") as fh:
                    obj = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(obj)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def override(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})
