"""Evaluation protocol: train black-boxes, explain sampled test rows, score the explanations."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..blackbox import BlackBoxModel, accuracy, train_blackbox
from ..clustering import ClusteringResult, best_of_restarts, choose_k
from ..errors import ConfigError, ITLError, StageError
from ..metrics import Perturber, mean_present, robustness, stability, true_label_eval
from ..seeding import derive_seed, make_rng
from ..surrogate import (ITL, ITL_NO_TRANSFER, ITL_NO_WEIGHTING, LIME, ITLConfig, ITLExplainer,
                         LimeExplainer, jsonable)
from ..tabular import Dataset, EncodingState, FeatureSchema, fit_encoding, gower_metric, \
    load_csv, marginals, Metric
from ..transfer import XiRatio
from .config import ExperimentConfig
from .synth import synth_generate

log = logging.getLogger(__name__)

ABLATIONS = (ITL_NO_WEIGHTING, ITL_NO_TRANSFER)


@dataclass
class Prepared:
    """Everything upstream of explanation, shared by sweeps."""

    source: Dataset
    target_train: Dataset
    target_test: Dataset
    test_indices: np.ndarray  # positions of the test rows in the target
    state: EncodingState
    X_test: np.ndarray
    explained: np.ndarray  # positions within the test split
    models: dict = field(default_factory=dict)
    accuracies: dict = field(default_factory=dict)


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.synth is not None:
        return synth_generate(replace(cfg.synth, seed=cfg.seed))
    schema = FeatureSchema.load(cfg.schema_path)
    return load_csv(cfg.source_path, schema), load_csv(cfg.target_path, schema)


def split_target(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = make_rng(derive_seed(seed, "target-split")).permutation(n)
    n_test = min(max(1, int(round(test_fraction * n))), n - 1)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except (ITLError, ValueError, OSError) as exc:
        raise StageError(name, exc) from exc


def prepare(cfg: ExperimentConfig) -> Prepared:
    source, target = _stage("data", load_data, cfg)
    if target.labels is None or source.labels is None:
        raise StageError("data", ConfigError("source and target need a label column"))
    train_idx, test_idx = split_target(target.n, cfg.test_fraction, cfg.seed)
    if cfg.n_explained > test_idx.size:
        raise ConfigError(f"n_explained={cfg.n_explained} exceeds the test split ({test_idx.size})")
    t_train, t_test = target.subset(train_idx), target.subset(test_idx)
    X_train, state = _stage("encoding", fit_encoding, t_train)
    X_test = _stage("encoding", state.encode_rows, t_test.rows)
    rng = make_rng(derive_seed(cfg.seed, "explained-instances"))
    explained = np.sort(rng.choice(test_idx.size, size=cfg.n_explained, replace=False))
    prep = Prepared(source, t_train, t_test, test_idx, state, X_test, explained)
    for kind in cfg.blackboxes:
        model = _stage("blackbox", train_blackbox, X_train.values, t_train.labels, kind,
                       cfg.blackbox, derive_seed(cfg.seed, "blackbox", kind))
        prep.models[kind] = model
        prep.accuracies[kind] = accuracy(model, X_test, t_test.labels)
        log.info("black-box %s test accuracy %.3f", kind, prep.accuracies[kind])
    return prep


def itl_config(cfg: ExperimentConfig, K: int | None = None, xi: XiRatio | None = None) -> ITLConfig:
    return ITLConfig(K=K or cfg.K, xi=xi or cfg.xi, metric=cfg.metric, encoder=cfg.encoder,
                     surrogate=cfg.surrogate, sigma=cfg.sigma,
                     kmedoids_restarts=cfg.kmedoids_restarts,
                     kmedoids_max_iters=cfg.kmedoids_max_iters, seed=cfg.seed)


def cluster_source(cfg: ExperimentConfig, prep: Prepared, K: int | None = None):
    """Returns ``(clustering, silhouette scores or None)``."""
    X = prep.state.encode_rows(prep.source.rows)
    if cfg.metric == "gower":
        metric = gower_metric(prep.state, X, prep.state.encode_rows(prep.target_train.rows))
    else:
        metric = Metric(cfg.metric)
    seed = derive_seed(cfg.seed, "source-clustering")
    scores = None
    if K is None and cfg.k_candidates:
        K, scores = _stage("clustering", choose_k, X, cfg.k_candidates, metric, seed,
                           cfg.kmedoids_restarts, cfg.kmedoids_max_iters)
    K = K or cfg.K
    clus = _stage("clustering", best_of_restarts, X, K, metric, seed,
                  cfg.kmedoids_restarts, cfg.kmedoids_max_iters)
    return clus, scores


def make_explainers(cfg: ExperimentConfig, prep: Prepared, model: BlackBoxModel,
                    clustering: ClusteringResult, xi: XiRatio | None = None) -> dict:
    out = {}
    itl_methods = [m for m in cfg.methods if m != LIME]
    if itl_methods:
        base = ITLExplainer(model, prep.state, prep.source, prep.target_train,
                            itl_config(cfg, clustering.k, xi), clustering)
        for m in itl_methods:
            out[m] = base.variant(m)
    if LIME in cfg.methods:
        out[LIME] = LimeExplainer(model, prep.state, prep.target_train, cfg.lime_samples,
                                  cfg=cfg.surrogate)
    return out


def explain_all(cfg: ExperimentConfig, prep: Prepared, explainers: dict) -> dict:
    """``{method: [Explanation per explained instance]}``; seeds depend on the instance only."""
    results = {}
    for m, explainer in explainers.items():
        rows = []
        for pos in prep.explained:
            seed = derive_seed(cfg.seed, "explain", int(pos))
            expl = _stage(f"explain:{m}", explainer, prep.X_test[pos], seed)
            expl.instance_id = int(prep.test_indices[pos])
            rows.append(expl)
        results[m] = rows
    return results


def fidelity_summary(expls) -> dict:
    return {"f1": float(np.mean([e.fidelity[0] for e in expls])),
            "auc": mean_present([e.fidelity[1] for e in expls])}


def _subset_positions(prep: Prepared, limit: int | None) -> np.ndarray:
    return prep.explained if limit is None else prep.explained[:limit]


def _blackbox_block(cfg, prep, kind, clustering, xi=None, with_quality=True):
    model = prep.models[kind]
    explainers = make_explainers(cfg, prep, model, clustering, xi)
    expls = explain_all(cfg, prep, explainers)
    labels = prep.target_test.labels[prep.explained]
    block = {}
    for m, rows in expls.items():
        f1, auc = true_label_eval(rows, prep.X_test[prep.explained], labels)
        block[m] = {"fidelity": fidelity_summary(rows), "true_label": {"f1": f1, "auc": auc}}
    if not with_quality:
        return block, expls
    perturb = Perturber(prep.state, marginals(prep.target_train))
    stab_pos = _subset_positions(prep, cfg.stability_instances)
    rob_pos = _subset_positions(prep, cfg.robustness_instances)
    for m in cfg.selected("stability"):
        reps = [_stage(f"stability:{m}", stability, explainers[m], prep.X_test[pos],
                       cfg.surrogate.top_k, cfg.stability_runs, cfg.stability_seed_policy,
                       derive_seed(cfg.seed, "explain", int(pos)))
                for pos in stab_pos]
        block[m]["stability"] = {"mean_jc": float(np.mean([r.mean_jc for r in reps])),
                                 "per_instance": [r.mean_jc for r in reps],
                                 "seed_policy": cfg.stability_seed_policy}
    for m in cfg.selected("robustness"):
        rep = _stage(f"robustness:{m}", robustness, explainers[m], prep.X_test[rob_pos], perturb,
                     cfg.eps_range, cfg.lle_trials, derive_seed(cfg.seed, "robustness"),
                     cfg.lle_seed_policy)
        block[m]["robustness"] = {"mean_lle": rep.mean_lle,
                                  "median_lle": float(np.median(rep.values)),
                                  "per_instance": rep.values, "noise": rep.noise}
    return block, expls


def ablation_block(results: dict) -> dict:
    """Full pipeline against each ablated variant, per black-box."""
    out = {}
    for kind, block in results.items():
        if ITL not in block:
            continue
        full = block[ITL]["fidelity"]
        rows = {}
        for m in (ITL, *ABLATIONS):
            if m not in block:
                continue
            fid = block[m]["fidelity"]
            rows[m] = {"f1": fid["f1"], "auc": fid["auc"],
                       "delta_f1": fid["f1"] - full["f1"],
                       "delta_auc": None if fid["auc"] is None or full["auc"] is None
                       else fid["auc"] - full["auc"]}
        if len(rows) > 1:
            out[kind] = rows
    return out


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Full protocol; returns the report and, with ``write``, emits files into ``cfg.out_dir``.

    On a stage failure whatever finished is still written, with the error
    recorded, before the failure propagates.
    """
    report = {"config": _report_config(cfg), "dataset": cfg.dataset_name, "blackboxes": {},
              "results": {cfg.dataset_name: {}}, "explained": []}
    per_instance = []
    try:
        prep = prepare(cfg)
        report["explained"] = [int(prep.test_indices[p]) for p in prep.explained]
        clustering, scores = cluster_source(cfg, prep)
        report["clustering"] = {"K": clustering.k, "cost": clustering.total_cost,
                                "silhouette": None if scores is None
                                else {str(k): v for k, v in scores.items()}}
        for kind in cfg.blackboxes:
            report["blackboxes"][kind] = {"test_accuracy": prep.accuracies[kind]}
            block, expls = _blackbox_block(cfg, prep, kind, clustering)
            report["results"][cfg.dataset_name][kind] = block
            per_instance += _instance_rows(cfg.dataset_name, kind, expls, prep)
        if any(m in cfg.methods for m in ABLATIONS):
            report["ablation"] = {cfg.dataset_name: ablation_block(report["results"][cfg.dataset_name])}
    except StageError as exc:
        report["error"] = {"stage": exc.stage, "message": str(exc.cause)}
        if write:
            write_report(cfg, report, per_instance)
        raise
    if write:
        write_report(cfg, report, per_instance)
    return report


def _report_config(cfg: ExperimentConfig) -> dict:
    d = cfg.to_dict()
    d.pop("out_dir")  # where files land does not change the numbers
    return d


def _instance_rows(dataset, kind, expls, prep):
    rows = []
    for m, items in expls.items():
        for e in items:
            rows.append({"dataset": dataset, "blackbox": kind, "method": m,
                         "instance_id": e.instance_id, "predicted_label": e.predicted_label,
                         "f1": e.fidelity[0], "auc": e.fidelity[1],
                         "top_k": "|".join(e.top_k)})
    return rows


def dumps_report(report: dict) -> str:
    return json.dumps(jsonable(report), indent=2, sort_keys=True) + "\n"


def summary_table(report: dict) -> str:
    lines = [f"{'dataset':<12} {'blackbox':<11} {'method':<17} {'metric':<13} value"]
    for ds, by_kind in report["results"].items():
        for kind, block in by_kind.items():
            for m, res in block.items():
                vals = [("fidelity_f1", res["fidelity"]["f1"]), ("fidelity_auc", res["fidelity"]["auc"]),
                        ("true_f1", res["true_label"]["f1"]), ("true_auc", res["true_label"]["auc"])]
                if "stability" in res:
                    vals.append(("jaccard", res["stability"]["mean_jc"]))
                if "robustness" in res:
                    vals.append(("lle", res["robustness"]["mean_lle"]))
                for name, v in vals:
                    shown = "n/a" if v is None else f"{v:.4f}"
                    lines.append(f"{ds:<12} {kind:<11} {m:<17} {name:<13} {shown}")
    if "error" in report:
        lines.append(f"stopped at stage {report['error']['stage']}: {report['error']['message']}")
    return "\n".join(lines) + "\n"


def write_report(cfg: ExperimentConfig, report: dict, per_instance: list) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps_report(report), encoding="utf-8")
    (out / "summary.txt").write_text(summary_table(report), encoding="utf-8")
    cols = ["dataset", "blackbox", "method", "instance_id", "predicted_label", "f1", "auc", "top_k"]
    with open(out / "instances.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(per_instance)
    return out


def _sweep(cfg: ExperimentConfig, values, make, label: str, prep: Prepared | None = None):
    cfg = replace(cfg, methods=(ITL,), stability_methods=None, robustness_methods=None)
    prep = prep or prepare(cfg)
    rows = []
    for v in values:
        clustering, xi = make(cfg, prep, v)
        for kind in cfg.blackboxes:
            block, _ = _blackbox_block(cfg, prep, kind, clustering, xi, with_quality=False)
            fid = block[ITL]["fidelity"]
            rows.append({label: str(v), "blackbox": kind, "f1": fid["f1"], "auc": fid["auc"]})
    return rows


def sweep_k(cfg: ExperimentConfig, candidates, prep: Prepared | None = None) -> list[dict]:
    """ITL-LIME fidelity per candidate K, everything else held fixed."""
    if not candidates:
        raise ConfigError("no K candidates")
    return _sweep(cfg, candidates, lambda c, p, K: (cluster_source(c, p, int(K))[0], None), "K", prep)


def sweep_xi(cfg: ExperimentConfig, ratios, prep: Prepared | None = None) -> list[dict]:
    """ITL-LIME fidelity per source:target ratio."""
    if not ratios:
        raise ConfigError("no ratios")
    ratios = [XiRatio.parse(r) for r in ratios]
    holder = {}

    def make(c, p, xi):
        if "clus" not in holder:
            holder["clus"] = cluster_source(c, p)[0]
        return holder["clus"], xi
    return _sweep(cfg, ratios, make, "xi", prep)


def write_series(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
