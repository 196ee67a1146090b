"""Stage orchestration behind the CLI subcommands.

Each stage reads earlier artifacts from disk, does its work, and writes its
own artifacts, so the expensive steps (TE discovery, training) are cached
between iterations. Every stage is a pure function of (inputs on disk,
config, seed); rerunning one without changed inputs reproduces its output
byte for byte.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import causal, explain, sage, waveforms
from .config import PipelineConfig
from .errors import MissingArtifactError
from .waveforms import CHANNEL_NAMES, FaultClass

log = logging.getLogger("tesage")

METRICS_HISTORY_NAME = "metrics_history.csv"
EVAL_METRICS_NAME = "eval_metrics.json"
EXPLANATIONS_NAME = "explanations.jsonl"


def rank_hist_name(label: FaultClass) -> str:
    return f"rank_hist_{label.value}.csv"


def run_generate(cfg: PipelineConfig) -> Path:
    """Synthesize the labeled waveform corpus and persist it."""
    section = cfg.dataset
    manifest = waveforms.synth_dataset(section.params, section.per_class, section.jitter)
    waveforms.write_dataset(manifest, cfg.paths.dataset_dir)
    log.info(
        "generated %d instances (%d per class) into %s",
        len(manifest.entries), section.per_class, cfg.paths.dataset_dir,
    )
    return cfg.paths.dataset_dir / waveforms.MANIFEST_NAME


def _load_instances(cfg: PipelineConfig):
    try:
        return waveforms.read_dataset(cfg.paths.dataset_dir)
    except FileNotFoundError as exc:
        raise MissingArtifactError(
            f"no dataset under {cfg.paths.dataset_dir} ({exc}); run `tesage generate` first"
        ) from exc


def run_discover(cfg: PipelineConfig) -> list:
    """Turn every instance into a directed causal graph file."""
    instances = _load_instances(cfg)
    out_dir = cfg.paths.graphs_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, instance in enumerate(instances):
        graph = causal.discover(instance, cfg.te)
        path = out_dir / f"{instance.instance_id}{causal.GRAPH_SUFFIX}"
        causal.write_graph(causal.graph_record(graph), path)
        paths.append(path)
        if (i + 1) % 100 == 0:
            log.info("discovered %d/%d graphs", i + 1, len(instances))
    log.info("wrote %d graph files to %s", len(paths), out_dir)
    return paths


def _load_graphs(cfg: PipelineConfig) -> list:
    instances = _load_instances(cfg)
    graphs = []
    for instance in instances:
        path = cfg.paths.graphs_dir / f"{instance.instance_id}{causal.GRAPH_SUFFIX}"
        if not path.exists():
            raise MissingArtifactError(
                f"no graph file for {instance.instance_id!r} at {path}; run `tesage discover` first"
            )
        graphs.append(causal.attach_features(causal.read_graph(path), instance))
    return graphs


def run_train(cfg: PipelineConfig):
    """Train the classifier; writes the checkpoint and the metrics history."""
    graphs = _load_graphs(cfg)
    checkpoint, history = sage.train(graphs, cfg.model)
    sage.save_checkpoint(checkpoint, cfg.paths.checkpoint)
    cfg.paths.reports_dir.mkdir(parents=True, exist_ok=True)
    history_path = cfg.paths.reports_dir / METRICS_HISTORY_NAME
    sage.write_metrics_history(history, history_path)
    final = history[-1].test
    log.info(
        "trained %d epochs; final test accuracy %.4f, macro F1 %.4f",
        cfg.model.epochs, final.accuracy, final.f1,
    )
    return cfg.paths.checkpoint, history_path


def _load_checkpoint(cfg: PipelineConfig) -> sage.Checkpoint:
    if not cfg.paths.checkpoint.exists():
        raise MissingArtifactError(
            f"no checkpoint at {cfg.paths.checkpoint}; run `tesage train` first"
        )
    return sage.load_checkpoint(cfg.paths.checkpoint, expected_config=cfg.model)


def run_eval(cfg: PipelineConfig) -> sage.Metrics:
    """Evaluate the checkpoint on its held-out stratified test split."""
    checkpoint = _load_checkpoint(cfg)
    graphs = _load_graphs(cfg)
    split_rng = np.random.default_rng(np.random.SeedSequence(checkpoint.config.seed).spawn(4)[0])
    _, test_idx = sage.stratified_split(
        [g.label for g in graphs], checkpoint.config.test_split, split_rng
    )
    test_graphs = [graphs[i] for i in test_idx]
    metrics = sage.evaluate(test_graphs, checkpoint)

    cfg.paths.reports_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "classes": [c.value for c in sage.CLASS_ORDER],
        "test_size": len(test_graphs),
        "total_size": len(graphs),
        **metrics.to_dict(),
    }
    out = cfg.paths.reports_dir / EVAL_METRICS_NAME
    out.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    log.info(
        "eval on %d held-out graphs: accuracy %.4f precision %.4f recall %.4f F1 %.4f",
        len(test_graphs), metrics.accuracy, metrics.precision, metrics.recall, metrics.f1,
    )
    return metrics


def run_explain(cfg: PipelineConfig):
    """Explain every graph and aggregate per-class rank histograms."""
    checkpoint = _load_checkpoint(cfg)
    graphs = _load_graphs(cfg)
    cfg.paths.reports_dir.mkdir(parents=True, exist_ok=True)

    records = []
    for i, graph in enumerate(graphs):
        records.append(explain.explain_graph(graph, checkpoint, cfg.explain))
        if (i + 1) % 100 == 0:
            log.info("explained %d/%d graphs", i + 1, len(graphs))

    records_path = cfg.paths.reports_dir / EXPLANATIONS_NAME
    explain.write_explanations(records, records_path)

    hist_paths = []
    by_label = {}
    for record in records:
        by_label.setdefault(record.label, []).append(record.ranking)
    for label in FaultClass:
        if label not in by_label:
            continue
        hist = explain.histogram_from_rankings(by_label[label], label, len(CHANNEL_NAMES))
        path = cfg.paths.reports_dir / rank_hist_name(label)
        explain.write_rank_histogram(hist, path, CHANNEL_NAMES)
        hist_paths.append(path)
    log.info("wrote %d explanation records and %d rank histograms", len(records), len(hist_paths))
    return records_path, hist_paths


def top_nodes_from_histogram(counts) -> list:
    """Order nodes by how often they land in the top two ranks.

    Ties break on mean rank, then on node index.
    """
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.shape[0]
    total = counts.sum(axis=1)
    top2 = counts[:, :2].sum(axis=1)
    ranks = np.arange(n)
    mean_rank = (counts * ranks).sum(axis=1) / np.where(total > 0, total, 1.0)
    return sorted(range(n), key=lambda i: (-top2[i], mean_rank[i], i))


def run_report(cfg: PipelineConfig) -> dict:
    """Consolidate metrics and explanations; render figures next to the tables."""
    from . import report

    reports_dir = cfg.paths.reports_dir
    history_path = reports_dir / METRICS_HISTORY_NAME
    eval_path = reports_dir / EVAL_METRICS_NAME
    if not history_path.exists():
        raise MissingArtifactError(f"no metrics history at {history_path}; run `tesage train` first")
    if not eval_path.exists():
        raise MissingArtifactError(f"no eval metrics at {eval_path}; run `tesage eval` first")

    history = sage.read_metrics_history(history_path)
    eval_doc = json.loads(eval_path.read_text(encoding="utf-8"))

    top_nodes = {}
    histograms = {}
    for label in FaultClass:
        path = reports_dir / rank_hist_name(label)
        if not path.exists():
            raise MissingArtifactError(
                f"no rank histogram at {path}; run `tesage explain` first"
            )
        hist = explain.read_rank_histogram(path, label)
        histograms[label] = hist
        order = top_nodes_from_histogram(hist.counts)
        top_nodes[label] = [CHANNEL_NAMES[order[0]], CHANNEL_NAMES[order[1]]]

    summary_metrics = reports_dir / "summary_metrics.csv"
    lines = ["metric,value"]
    for key in ("accuracy", "precision", "recall", "f1"):
        lines.append(f"{key},{eval_doc[key]!r}")
    lines.append(f"final_train_accuracy,{history[-1]['train_acc']!r}")
    lines.append(f"epochs,{history[-1]['epoch']}")
    summary_metrics.write_text("\n".join(lines) + "\n", encoding="utf-8")

    summary_nodes = reports_dir / "summary_top_nodes.csv"
    lines = ["class,top_node_1,top_node_2"]
    for label in FaultClass:
        lines.append(f"{label.value},{top_nodes[label][0]},{top_nodes[label][1]}")
    summary_nodes.write_text("\n".join(lines) + "\n", encoding="utf-8")

    figures = [report.render_training_curves(history, reports_dir / "training_curves.png")]
    for label, hist in histograms.items():
        figures.append(
            report.render_rank_heatmap(hist, reports_dir / f"rank_heatmap_{label.value}.png")
        )

    print(f"test accuracy  {eval_doc['accuracy']:.4f}")
    print(f"macro precision {eval_doc['precision']:.4f}")
    print(f"macro recall    {eval_doc['recall']:.4f}")
    print(f"macro F1        {eval_doc['f1']:.4f}")
    for label in FaultClass:
        print(f"{label.value:>4}: top nodes {top_nodes[label][0]}, {top_nodes[label][1]}")

    return {
        "summary_metrics": summary_metrics,
        "summary_top_nodes": summary_nodes,
        "figures": figures,
        "top_nodes": top_nodes,
    }
