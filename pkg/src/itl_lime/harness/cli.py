"""Command-line entry point: ``itl-lime <subcommand>``."""
from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from ..blackbox import BlackBoxModel
from ..errors import ConfigError, ITLError, StageError
from ..seeding import derive_seed
from ..surrogate import METHODS, jsonable
from . import experiment as exp
from .config import ExperimentConfig
from .synth import SynthShiftSpec, synth_generate

EXIT_CONFIG = 2
EXIT_STAGE = 3


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kw):
        try:
            return fn(*args, **kw)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except StageError as exc:
            click.echo(f"stage {exc.stage!r} failed: {exc.cause}", err=True)
            sys.exit(EXIT_STAGE)
        except ITLError as exc:
            click.echo(f"failed: {exc}", err=True)
            sys.exit(EXIT_STAGE)
    return wrapper


def _load(config, seed, out_dir) -> ExperimentConfig:
    cfg = ExperimentConfig.load(config) if config else ExperimentConfig()
    return cfg.override(seed=seed, out_dir=out_dir)


config_opt = click.option("--config", "config", type=click.Path(exists=True, dir_okay=False),
                          help="Experiment config (.json or .toml).")
seed_opt = click.option("--seed", type=int, default=None, help="Master seed override.")
out_opt = click.option("--out-dir", type=click.Path(file_okay=False), default=None,
                       help="Output directory override.")


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Transfer-based local explanations for tabular black-box models."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("synth-data")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON file with SynthShiftSpec fields.")
@seed_opt
@click.option("--out-dir", type=click.Path(file_okay=False), default="data", show_default=True)
@_guard
def synth_data(spec_path, seed, out_dir):
    """Write source.csv, target.csv and schema.json."""
    obj = {}
    if spec_path:
        try:
            obj = json.loads(Path(spec_path).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"cannot parse {spec_path}: {exc}") from exc
    if seed is not None:
        obj["seed"] = seed
    try:
        spec = SynthShiftSpec.from_dict(obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    source, target = synth_generate(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source.to_csv(out / "source.csv")
    target.to_csv(out / "target.csv")
    spec.schema().save(out / "schema.json")
    click.echo(f"wrote {source.n} source and {target.n} target rows to {out}")


@main.command("train-blackbox")
@config_opt
@seed_opt
@out_opt
@_guard
def train_blackbox_cmd(config, seed, out_dir):
    """Train the configured black-boxes on the target train split and save them."""
    cfg = _load(config, seed, out_dir)
    prep = exp.prepare(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for kind, model in prep.models.items():
        model.save(out / f"blackbox_{kind}.json")
        click.echo(f"{kind}: test accuracy {prep.accuracies[kind]:.4f}")
    (out / "encoding.json").write_text(json.dumps(prep.state.to_dict(), indent=2), encoding="utf-8")


@main.command()
@config_opt
@seed_opt
@click.option("--instance", type=int, default=0, show_default=True,
              help="Position of the row within the target test split.")
@click.option("--method", type=click.Choice(METHODS), default=METHODS[0], show_default=True)
@click.option("--blackbox", "kind", default=None, help="Black-box kind (default: first configured).")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              help="Saved black-box; trained from the config when omitted.")
@_guard
def explain(config, seed, instance, method, kind, model_path):
    """Explain one target test row and print the explanation as JSON."""
    cfg = _load(config, seed, None)
    kind = kind or cfg.blackboxes[0]
    cfg = replace(cfg, methods=(method,), blackboxes=(kind,), n_explained=1,
                  stability_methods=None, robustness_methods=None)
    prep = exp.prepare(cfg)
    if not 0 <= instance < prep.X_test.shape[0]:
        raise ConfigError(f"instance must lie in [0, {prep.X_test.shape[0]})")
    if model_path:
        prep.models[kind] = BlackBoxModel.load(model_path)
    clustering, _ = exp.cluster_source(cfg, prep)
    explainer = exp.make_explainers(cfg, prep, prep.models[kind], clustering)[method]
    expl = explainer(prep.X_test[instance], derive_seed(cfg.seed, "explain", instance))
    expl.instance_id = int(prep.test_indices[instance])
    click.echo(json.dumps(jsonable(expl.to_dict()), indent=2, sort_keys=True))


@main.command()
@config_opt
@seed_opt
@out_opt
@_guard
def evaluate(config, seed, out_dir):
    """Run the full protocol and write report.json, instances.csv and summary.txt."""
    cfg = _load(config, seed, out_dir)
    report = exp.run_experiment(cfg)
    click.echo(exp.summary_table(report), nl=False)
    click.echo(f"reports written to {cfg.out_dir}")


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


@main.command("sweep-k")
@config_opt
@seed_opt
@out_opt
@click.option("--candidates", default="11,13,15,17,19,25", show_default=True)
@_guard
def sweep_k_cmd(config, seed, out_dir, candidates):
    """ITL-LIME fidelity per number of source clusters (CSV series)."""
    cfg = _load(config, seed, out_dir)
    rows = exp.sweep_k(cfg, _int_list(candidates))
    exp.write_series(rows, Path(cfg.out_dir) / "sweep_k.csv")
    for r in rows:
        click.echo(f"K={r['K']:>3} {r['blackbox']:<11} f1={r['f1']:.4f} auc={r['auc']:.4f}")


@main.command("sweep-xi")
@config_opt
@seed_opt
@out_opt
@click.option("--ratios", default="1:0.5,1:0.75,1:1,1:1.5", show_default=True)
@_guard
def sweep_xi_cmd(config, seed, out_dir, ratios):
    """ITL-LIME fidelity per source:target ratio (CSV series)."""
    cfg = _load(config, seed, out_dir)
    try:
        parsed = [r.strip() for r in ratios.split(",") if r.strip()]
        rows = exp.sweep_xi(cfg, parsed)
    except ValueError as exc:
        if isinstance(exc, ITLError):
            raise
        raise ConfigError(f"bad ratio list {ratios!r}: {exc}") from exc
    exp.write_series(rows, Path(cfg.out_dir) / "sweep_xi.csv")
    for r in rows:
        click.echo(f"xi={r['xi']:>7} {r['blackbox']:<11} f1={r['f1']:.4f} auc={r['auc']:.4f}")


if __name__ == "__main__":
    main()
