"""Node attributions for graph predictions and their fusion into rankings.

Two complementary explainers score the six channel nodes of a classified
graph:

* integrated gradients: path integral of the predicted-class logit's
  gradient from a baseline (zero features) to the actual input, midpoint
  rule; a node's score is the summed absolute attribution over its
  feature row.
* mask learning: a sigmoid node mask scales each node's feature row and a
  sigmoid edge mask reweights each existing edge inside the mean
  aggregation; both are optimized by plain gradient descent to keep the
  model's original prediction while staying sparse and near-binary. A
  node's score is its final mask value.

Scores are min-max normalized per graph, averaged into a combined score,
ranked, and aggregated per class into rank-frequency histograms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .causal import CausalGraphInstance
from .errors import DataFormatError, DimensionError, ParameterError
from .sage import Checkpoint, forward_from, label_index, mixing_matrix
from .waveforms import FaultClass

SOURCE_GNN = "gnn_explainer"
SOURCE_IG = "integrated_gradients"
SOURCE_COMBINED = "combined"


@dataclass(frozen=True)
class ExplainConfig:
    ig_steps: int = 50
    ig_baseline: float = 0.0
    mask_epochs: int = 100
    mask_lr: float = 0.01
    lambda_sparsity: float = 0.005
    lambda_entropy: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.ig_steps < 1:
            raise ParameterError(f"ig_steps must be >= 1, got {self.ig_steps}")
        if self.mask_epochs < 1:
            raise ParameterError(f"mask_epochs must be >= 1, got {self.mask_epochs}")
        if self.mask_lr <= 0:
            raise ParameterError(f"mask_lr must be > 0, got {self.mask_lr}")
        if self.lambda_sparsity < 0 or self.lambda_entropy < 0:
            raise ParameterError("regularizer weights must be >= 0")


@dataclass
class NodeScores:
    """Per-node importance values with the explainer that produced them."""

    values: np.ndarray
    source: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DimensionError(f"node scores must be 1-D, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ParameterError("node scores contain non-finite values")
        if self.source not in (SOURCE_GNN, SOURCE_IG, SOURCE_COMBINED):
            raise ParameterError(f"unknown score source {self.source!r}")


def integrated_gradients(forward_fn, x: np.ndarray, baseline: np.ndarray, steps: int) -> np.ndarray:
    """Midpoint-rule integrated gradients of a scalar-valued forward function.

    ``forward_fn`` maps an input Tensor to a scalar Tensor. Returns an
    attribution array shaped like ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if x.shape != baseline.shape:
        raise DimensionError(f"input shape {x.shape} differs from baseline shape {baseline.shape}")
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    diff = x - baseline
    grad_sum = np.zeros_like(x)
    for i in range(steps):
        point = baseline + ((i + 0.5) / steps) * diff
        point_t = Tensor(point, requires_grad=True)
        out = forward_fn(point_t)
        ad.backward(out)
        grad_sum += point_t.grad
    return diff * (grad_sum / steps)


def _predicted_class(graph: CausalGraphInstance, checkpoint: Checkpoint) -> int:
    mix = Tensor(mixing_matrix(graph.adjacency))
    logits = forward_from(Tensor(graph.node_features), mix, checkpoint.params, checkpoint.config)
    return int(np.argmax(logits.values.ravel()))


def integrated_gradients_node_scores(
    graph: CausalGraphInstance, checkpoint: Checkpoint, cfg: ExplainConfig
) -> NodeScores:
    """Summed absolute integrated-gradient attribution per node row."""
    target = _predicted_class(graph, checkpoint)
    mix = Tensor(mixing_matrix(graph.adjacency))
    onehot = np.zeros((1, checkpoint.config.classes))
    onehot[0, target] = 1.0

    def logit_of_target(features: Tensor) -> Tensor:
        logits = forward_from(features, mix, checkpoint.params, checkpoint.config)
        return ad.sum_all(ad.mul(logits, Tensor(onehot)))

    baseline = np.full_like(graph.node_features, cfg.ig_baseline)
    attribution = integrated_gradients(logit_of_target, graph.node_features, baseline, cfg.ig_steps)
    return NodeScores(np.abs(attribution).sum(axis=1), SOURCE_IG)


@dataclass
class MaskExplanation:
    node_scores: np.ndarray
    edge_mask: np.ndarray
    objective_history: list
    predicted: int


def _element_entropy(p: Tensor) -> Tensor:
    one_minus = ad.sub(Tensor(np.ones(p.shape)), p)
    return ad.scale(
        ad.add(ad.mul(p, ad.log(p)), ad.mul(one_minus, ad.log(one_minus))), -1.0
    )


def optimize_masks(
    graph: CausalGraphInstance, checkpoint: Checkpoint, cfg: ExplainConfig
) -> MaskExplanation:
    """Learn node and edge masks that preserve the model's prediction.

    The objective is cross-entropy of the masked forward pass against the
    unmasked prediction, plus a sparsity term on the mask values and an
    element-entropy term pushing masks toward 0 or 1. Masks start at 0.5
    (zero logits) and follow ``mask_epochs`` plain gradient-descent steps.
    """
    params, config = checkpoint.params, checkpoint.config
    n = graph.node_count
    predicted = _predicted_class(graph, checkpoint)

    features = Tensor(graph.node_features)
    in_edges = Tensor(np.asarray(graph.adjacency, dtype=np.float64).T)
    identity = Tensor(np.eye(n))
    ones_col = Tensor(np.ones((n, 1)))
    has_edges = bool(np.any(graph.adjacency))

    node_logits = Tensor(np.zeros((n, 1)), requires_grad=True)
    edge_logits = Tensor(np.zeros((n, n)), requires_grad=True)

    objective_history = []
    for _ in range(cfg.mask_epochs):
        node_mask = ad.sigmoid(node_logits)
        masked_features = ad.mul(features, node_mask)

        edge_mask = ad.sigmoid(edge_logits)
        weighted = ad.mul(edge_mask, in_edges)
        rows = ad.add(weighted, identity)
        mix = ad.mul(rows, ad.reciprocal(ad.matmul(rows, ones_col)))

        logits = forward_from(masked_features, mix, params, config)
        objective = ad.softmax_cross_entropy(logits, predicted)

        sparsity = ad.sum_all(node_mask)
        entropy_term = ad.sum_all(_element_entropy(node_mask))
        if has_edges:
            sparsity = ad.add(sparsity, ad.sum_all(weighted))
            entropy_term = ad.add(
                entropy_term, ad.sum_all(ad.mul(_element_entropy(edge_mask), in_edges))
            )
        objective = ad.add(
            objective,
            ad.add(
                ad.scale(sparsity, cfg.lambda_sparsity),
                ad.scale(entropy_term, cfg.lambda_entropy),
            ),
        )

        ad.backward(objective)
        objective_history.append(float(objective.values))
        node_logits.values = node_logits.values - cfg.mask_lr * node_logits.grad
        edge_logits.values = edge_logits.values - cfg.mask_lr * edge_logits.grad
        ad.zero_grads((node_logits, edge_logits))

    final_node = 1.0 / (1.0 + np.exp(-node_logits.values.ravel()))
    final_edge = (1.0 / (1.0 + np.exp(-edge_logits.values))) * np.asarray(graph.adjacency.T)
    return MaskExplanation(final_node, final_edge.T, objective_history, predicted)


def gnnexplainer_node_scores(
    graph: CausalGraphInstance, checkpoint: Checkpoint, cfg: ExplainConfig
) -> NodeScores:
    """Final learned node-mask values as importance scores."""
    return NodeScores(optimize_masks(graph, checkpoint, cfg).node_scores, SOURCE_GNN)


def minmax_normalize(scores: NodeScores) -> NodeScores:
    """Rescale scores to [0, 1]; a constant vector maps to all 0.5."""
    values = scores.values
    span = values.max() - values.min()
    if span == 0.0:
        return NodeScores(np.full_like(values, 0.5), scores.source)
    return NodeScores((values - values.min()) / span, scores.source)


def combine_scores(a: NodeScores, b: NodeScores) -> NodeScores:
    """Elementwise average of two normalized score vectors."""
    if a.values.shape != b.values.shape:
        raise DimensionError(f"score lengths differ: {a.values.shape} vs {b.values.shape}")
    for s in (a, b):
        if s.values.min() < -1e-9 or s.values.max() > 1.0 + 1e-9:
            raise ParameterError(f"{s.source} scores are not normalized to [0, 1]")
    return NodeScores(0.5 * (a.values + b.values), SOURCE_COMBINED)


def rank_nodes(scores: NodeScores) -> list:
    """Node indices ordered by descending score; ties broken by lower index."""
    values = scores.values
    return sorted(range(values.size), key=lambda i: (-values[i], i))


@dataclass
class RankHistogram:
    """counts[node, rank]: how often each node landed at each rank position."""

    counts: np.ndarray
    label: FaultClass

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = self.counts.shape[0]
        if self.counts.shape != (n, n):
            raise DimensionError(f"rank histogram must be square, got {self.counts.shape}")

    @property
    def graph_count(self) -> int:
        return int(self.counts.sum(axis=0)[0])


@dataclass
class ExplanationRecord:
    """Everything one explained graph contributes: raw, normalized, and
    combined scores plus the resulting ranking."""

    instance_id: str
    label: FaultClass
    predicted: FaultClass
    gnn_raw: np.ndarray
    ig_raw: np.ndarray
    gnn_norm: np.ndarray
    ig_norm: np.ndarray
    combined: np.ndarray
    ranking: list


def explain_graph(
    graph: CausalGraphInstance, checkpoint: Checkpoint, cfg: ExplainConfig
) -> ExplanationRecord:
    gnn = gnnexplainer_node_scores(graph, checkpoint, cfg)
    ig = integrated_gradients_node_scores(graph, checkpoint, cfg)
    gnn_norm = minmax_normalize(gnn)
    ig_norm = minmax_normalize(ig)
    combined = combine_scores(gnn_norm, ig_norm)
    predicted_idx = _predicted_class(graph, checkpoint)
    if predicted_idx >= len(FaultClass):
        raise ParameterError(
            f"predicted class index {predicted_idx} has no fault-class name"
        )
    return ExplanationRecord(
        instance_id=graph.instance_id,
        label=graph.label,
        predicted=list(FaultClass)[predicted_idx],
        gnn_raw=gnn.values,
        ig_raw=ig.values,
        gnn_norm=gnn_norm.values,
        ig_norm=ig_norm.values,
        combined=combined.values,
        ranking=rank_nodes(combined),
    )


def histogram_from_rankings(rankings, label: FaultClass, n_nodes: int = 6) -> RankHistogram:
    counts = np.zeros((n_nodes, n_nodes), dtype=np.int64)
    for ranking in rankings:
        for rank_pos, node in enumerate(ranking):
            counts[node, rank_pos] += 1
    return RankHistogram(counts, label)


def aggregate_rank_histogram(graphs, checkpoint: Checkpoint, cfg: ExplainConfig) -> RankHistogram:
    """Explain every graph of one class and tally node ranks."""
    graphs = list(graphs)
    if not graphs:
        raise ParameterError("need at least one graph to aggregate")
    labels = {g.label for g in graphs}
    if len(labels) != 1:
        raise ParameterError(f"histogram aggregates one class, got {sorted(l.value for l in labels)}")
    rankings = [explain_graph(g, checkpoint, cfg).ranking for g in graphs]
    return histogram_from_rankings(rankings, graphs[0].label, graphs[0].node_count)


def record_to_dict(record: ExplanationRecord) -> dict:
    return {
        "instance_id": record.instance_id,
        "label": record.label.value,
        "predicted": record.predicted.value,
        "gnn_raw": [float(v) for v in record.gnn_raw],
        "ig_raw": [float(v) for v in record.ig_raw],
        "gnn_norm": [float(v) for v in record.gnn_norm],
        "ig_norm": [float(v) for v in record.ig_norm],
        "combined": [float(v) for v in record.combined],
        "ranking": [int(i) for i in record.ranking],
    }


def write_explanations(records, path) -> None:
    """One JSON object per line, key-sorted so reruns are byte-identical."""
    lines = [json.dumps(record_to_dict(r), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_rank_histogram(hist: RankHistogram, path, node_names) -> None:
    """Plot-ready table: one row per node, one column per rank position."""
    n = hist.counts.shape[0]
    header = "node," + ",".join(f"rank{r}" for r in range(n))
    lines = [header]
    for i in range(n):
        lines.append(node_names[i] + "," + ",".join(str(int(c)) for c in hist.counts[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_rank_histogram(path, label: FaultClass) -> RankHistogram:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or not lines[0].startswith("node,"):
        raise DataFormatError("bad rank histogram header", file=path, row=1)
    counts = []
    for line in lines[1:]:
        counts.append([int(c) for c in line.split(",")[1:]])
    return RankHistogram(np.asarray(counts, dtype=np.int64), label)
