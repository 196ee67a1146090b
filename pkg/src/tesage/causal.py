"""Directed causal graph discovery from multichannel series.

Pipeline per instance: z-score the channels, estimate pairwise transfer
entropy, normalize the matrix to [0, 1], threshold with direction
dominance to get a binary adjacency, then drop edges whose information
flow is explained by a one-hop mediator (near-zero mediator-conditioned
transfer entropy).

Entry (i, j) of a TE matrix is the flow from channel i into channel j;
adjacency entry (i, j) = 1 means a directed edge i -> j.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DimensionError, ParameterError
from .infodyn import TEConfig, direct_transfer_entropy, discretize, transfer_entropy
from .waveforms import CHANNEL_NAMES, FaultClass, WaveformInstance, zscore_normalize

GRAPH_FORMAT_VERSION = 1
GRAPH_SUFFIX = ".graph.json"


@dataclass
class CausalGraphInstance:
    """A discovered graph: normalized node features, adjacency, and label.

    Node index i carries channel CHANNEL_NAMES[i]. ``te_matrix`` keeps the
    pre-threshold normalized transfer-entropy matrix for audit.
    """

    node_features: np.ndarray
    adjacency: np.ndarray
    label: FaultClass
    instance_id: str
    te_matrix: np.ndarray = None

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.adjacency = np.asarray(self.adjacency, dtype=np.int64)
        n = self.node_features.shape[0]
        if self.adjacency.shape != (n, n):
            raise DimensionError(
                f"adjacency shape {self.adjacency.shape} does not match {n} nodes"
            )

    @property
    def node_count(self) -> int:
        return self.node_features.shape[0]

    @property
    def edges(self) -> list:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adjacency))]


def _as_channels(source) -> np.ndarray:
    if isinstance(source, WaveformInstance):
        return source.channels
    channels = np.asarray(source, dtype=np.float64)
    if channels.ndim != 2:
        raise DimensionError(f"expected a channels matrix, got shape {channels.shape}")
    return channels


def build_te_matrix(source, cfg: TEConfig) -> np.ndarray:
    """Pairwise transfer entropy between all channels; diagonal is zero."""
    channels = _as_channels(source)
    n = channels.shape[0]
    symbols = [discretize(channels[i], cfg.bins) for i in range(n)]
    matrix = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(n):
            if i != j:
                matrix[i, j] = transfer_entropy(
                    symbols[i], symbols[j], cfg.dst_history, cfg.src_history
                )
    return matrix


def normalize_te_matrix(matrix: np.ndarray) -> np.ndarray:
    """Scale all entries by the maximum entry; an all-zero matrix passes through."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if (matrix < 0).any():
        raise ParameterError("TE matrix must be nonnegative")
    peak = matrix.max()
    if peak == 0.0:
        return matrix.copy()
    return matrix / peak


def build_adjacency(matrix: np.ndarray, cfg: TEConfig) -> np.ndarray:
    """Threshold a normalized TE matrix into a binary directed adjacency.

    Default rule: edge i -> j iff matrix[i, j] > threshold and strictly
    dominates the reverse direction; ties produce no edge. The "net_te"
    rule instead thresholds the antisymmetric difference
    matrix[i, j] - matrix[j, i].
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if cfg.edge_rule == "net_te":
        adjacency = (matrix - matrix.T) > cfg.threshold
    else:
        adjacency = (matrix > cfg.threshold) & (matrix > matrix.T)
    adjacency = adjacency.astype(np.int64)
    np.fill_diagonal(adjacency, 0)
    return adjacency


def prune_indirect(adjacency: np.ndarray, source, cfg: TEConfig) -> np.ndarray:
    """Remove edges whose flow is explained by some one-hop mediator.

    For an edge i -> j, every node z with edges i -> z and z -> j is a
    mediator candidate; if the smallest mediator-conditioned transfer
    entropy falls at or below ``cfg.dte_epsilon`` the edge is indirect and
    dropped. Edges without any mediator are kept. Decisions are made
    against the input adjacency, so the result is order-independent.
    """
    channels = _as_channels(source)
    adjacency = np.asarray(adjacency)
    n = channels.shape[0]
    if adjacency.shape != (n, n):
        raise DimensionError(
            f"adjacency shape {adjacency.shape} does not match {n} channels"
        )
    symbols = [discretize(channels[i], cfg.dte_bins) for i in range(n)]
    pruned = adjacency.astype(np.int64).copy()
    for i, j in zip(*np.nonzero(adjacency)):
        mediators = [
            z for z in range(n) if z != i and z != j and adjacency[i, z] and adjacency[z, j]
        ]
        if not mediators:
            continue
        lowest = min(
            direct_transfer_entropy(symbols[i], symbols[j], symbols[z], cfg)
            for z in mediators
        )
        if lowest <= cfg.dte_epsilon:
            pruned[i, j] = 0
    return pruned


def discover(instance: WaveformInstance, cfg: TEConfig) -> CausalGraphInstance:
    """Full per-instance discovery: normalize, estimate, threshold, prune."""
    normalized = zscore_normalize(instance)
    te = build_te_matrix(normalized.channels, cfg)
    te_norm = normalize_te_matrix(te)
    adjacency = build_adjacency(te_norm, cfg)
    adjacency = prune_indirect(adjacency, normalized.channels, cfg)
    return CausalGraphInstance(
        normalized.channels, adjacency, instance.label, instance.instance_id, te_matrix=te_norm
    )


@dataclass(frozen=True)
class GraphRecord:
    """The serialized form of a discovered graph: structure without features."""

    instance_id: str
    label: FaultClass
    nodes: tuple
    edges: tuple
    te_matrix: np.ndarray


def graph_record(graph: CausalGraphInstance) -> GraphRecord:
    n = graph.node_count
    nodes = CHANNEL_NAMES if n == len(CHANNEL_NAMES) else tuple(f"ch{i}" for i in range(n))
    return GraphRecord(
        graph.instance_id,
        graph.label,
        tuple(nodes),
        tuple(graph.edges),
        graph.te_matrix if graph.te_matrix is not None else np.zeros((n, n)),
    )


def write_graph(record: GraphRecord, path) -> None:
    doc = {
        "format_version": GRAPH_FORMAT_VERSION,
        "instance_id": record.instance_id,
        "label": record.label.value,
        "nodes": list(record.nodes),
        "edges": [[int(i), int(j)] for i, j in record.edges],
        "te_matrix": [[float(v) for v in row] for row in np.asarray(record.te_matrix)],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_graph(path) -> GraphRecord:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"graph file is not valid JSON: {exc}", file=path) from exc
    for key in ("format_version", "instance_id", "label", "nodes", "edges", "te_matrix"):
        if key not in doc:
            raise DataFormatError(f"graph file missing key {key!r}", file=path)
    return GraphRecord(
        doc["instance_id"],
        FaultClass.parse(doc["label"]),
        tuple(doc["nodes"]),
        tuple((int(i), int(j)) for i, j in doc["edges"]),
        np.asarray(doc["te_matrix"], dtype=np.float64),
    )


def attach_features(record: GraphRecord, instance: WaveformInstance) -> CausalGraphInstance:
    """Combine a graph record with its waveform's normalized channels."""
    if record.instance_id != instance.instance_id:
        raise ParameterError(
            f"graph {record.instance_id!r} does not belong to instance {instance.instance_id!r}"
        )
    n = len(record.nodes)
    adjacency = np.zeros((n, n), dtype=np.int64)
    for i, j in record.edges:
        adjacency[i, j] = 1
    features = zscore_normalize(instance).channels
    return CausalGraphInstance(
        features, adjacency, record.label, record.instance_id, te_matrix=record.te_matrix
    )
