"""GraphSAGE graph classifier over discovered causal graphs.

Two mean-aggregator layers embed the nodes, mean pooling collapses them to
one graph embedding, and a small linear head produces class logits. Each
node aggregates over itself plus its in-neighbors (its causal parents);
with six nodes no neighborhood sampling is needed. Training is stratified
single-sample Adam on softmax cross-entropy, deterministic per seed.
"""

from __future__ import annotations

import hashlib
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .causal import CausalGraphInstance
from .errors import (
    CheckpointError,
    DataFormatError,
    DimensionError,
    FingerprintMismatchError,
    ParameterError,
    StratificationError,
)
from .waveforms import FaultClass

CHECKPOINT_FORMAT_VERSION = 1
CLASS_ORDER = tuple(FaultClass)


def label_index(label: FaultClass) -> int:
    return CLASS_ORDER.index(label)


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 6001
    hidden1: int = 256
    hidden2: int = 128
    head_dims: tuple = (64,)
    classes: int = 9
    lr: float = 1e-5
    epochs: int = 100
    batch_size: int = 1
    dropout: float = 0.0
    test_split: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "head_dims", tuple(int(d) for d in self.head_dims))
        for name in ("input_dim", "hidden1", "hidden2", "classes", "epochs"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if any(d < 1 for d in self.head_dims):
            raise ParameterError(f"head_dims must all be >= 1, got {self.head_dims}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 < self.test_split < 1.0:
            raise ParameterError(f"test_split must be in (0, 1), got {self.test_split}")
        if self.lr <= 0.0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if self.batch_size != 1:
            raise ParameterError(f"only batch_size 1 is supported, got {self.batch_size}")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class SageParams:
    """Named parameter tensors for the two aggregation layers and the head.

    Weights are stored (fan_in, fan_out) so a forward pass is a plain right
    multiplication; aggregation-layer weights have no bias, head layers do.
    """

    def __init__(self, tensors: dict):
        self.tensors = dict(tensors)

    @staticmethod
    def expected_shapes(config: ModelConfig) -> dict:
        shapes = {
            "sage1_w": (config.input_dim, config.hidden1),
            "sage2_w": (config.hidden1, config.hidden2),
        }
        dims = (config.hidden2, *config.head_dims)
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            shapes[f"head{i}_w"] = (fan_in, fan_out)
            shapes[f"head{i}_b"] = (1, fan_out)
        shapes["out_w"] = (dims[-1], config.classes)
        shapes["out_b"] = (1, config.classes)
        return shapes

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "SageParams":
        tensors = {}
        for name, shape in cls.expected_shapes(config).items():
            if name.endswith("_b"):
                values = np.zeros(shape)
            else:
                values = ad.glorot_uniform(rng, *shape)
            tensors[name] = Tensor(values, requires_grad=True)
        return cls(tensors)

    def validate_shapes(self, config: ModelConfig) -> None:
        expected = self.expected_shapes(config)
        if set(expected) != set(self.tensors):
            raise CheckpointError(
                f"parameter blocks {sorted(self.tensors)} do not match the "
                f"configured architecture {sorted(expected)}"
            )
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise CheckpointError(
                    f"parameter {name} has shape {self.tensors[name].shape}, expected {shape}"
                )

    def parameters(self) -> list:
        return list(self.tensors.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def mixing_matrix(adjacency: np.ndarray) -> np.ndarray:
    """Row-stochastic matrix averaging each node with its in-neighbors."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    n = adjacency.shape[0]
    mix = np.eye(n) + adjacency.T
    return mix / mix.sum(axis=1, keepdims=True)


def sage_layer_forward(features, adjacency, weight) -> Tensor:
    """One mean-aggregator layer: ReLU((mix @ features) @ weight)."""
    h = features if isinstance(features, Tensor) else Tensor(features)
    w = weight if isinstance(weight, Tensor) else Tensor(weight)
    mix = Tensor(mixing_matrix(adjacency))
    return ad.relu(ad.matmul(ad.matmul(mix, h), w))


def forward_from(
    features: Tensor,
    mix: Tensor,
    params: SageParams,
    config: ModelConfig,
    train_mode: bool = False,
    rng: np.random.Generator = None,
) -> Tensor:
    """Logits from a feature tensor and a (possibly learned) mixing matrix."""
    h = ad.relu(ad.matmul(ad.matmul(mix, features), params["sage1_w"]))
    h = ad.relu(ad.matmul(ad.matmul(mix, h), params["sage2_w"]))
    x = ad.row_mean(h)
    i = 0
    while f"head{i}_w" in params.tensors:
        x = ad.add(ad.matmul(x, params[f"head{i}_w"]), params[f"head{i}_b"])
        x = ad.relu(x)
        x = ad.dropout(x, config.dropout, rng, train_mode)
        i += 1
    return ad.add(ad.matmul(x, params["out_w"]), params["out_b"])


def forward_graph(
    graph: CausalGraphInstance,
    params: SageParams,
    config: ModelConfig,
    train_mode: bool = False,
    rng: np.random.Generator = None,
) -> Tensor:
    if graph.node_features.shape[1] != config.input_dim:
        raise DimensionError(
            f"graph {graph.instance_id!r} has feature length {graph.node_features.shape[1]}, "
            f"model expects {config.input_dim}"
        )
    features = Tensor(graph.node_features)
    mix = Tensor(mixing_matrix(graph.adjacency))
    return forward_from(features, mix, params, config, train_mode, rng)


def predict(graph: CausalGraphInstance, params: SageParams, config: ModelConfig) -> int:
    logits = forward_graph(graph, params, config)
    return int(np.argmax(logits.values.ravel()))


@dataclass
class Metrics:
    """Accuracy plus macro precision/recall/F1 and the confusion table.

    Macro averages run over all configured classes; classes with no true or
    predicted instances contribute 0 to the affected component.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": [[int(v) for v in row] for row in self.confusion],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Metrics":
        return cls(
            float(doc["accuracy"]),
            float(doc["precision"]),
            float(doc["recall"]),
            float(doc["f1"]),
            np.asarray(doc["confusion"], dtype=np.int64),
        )


def compute_metrics(y_true, y_pred, n_classes: int) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise DimensionError(f"label arrays differ: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ParameterError("cannot compute metrics over an empty evaluation set")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        confusion[t, p] += 1
    true_pos = np.diag(confusion).astype(np.float64)
    pred_count = confusion.sum(axis=0).astype(np.float64)
    true_count = confusion.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_count > 0, true_pos / pred_count, 0.0)
        recall = np.where(true_count > 0, true_pos / true_count, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    return Metrics(
        accuracy=float(true_pos.sum() / y_true.size),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        confusion=confusion,
    )


@dataclass
class EpochStats:
    epoch: int
    train_accuracy: float
    test: Metrics

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_accuracy": self.train_accuracy, "test": self.test.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "EpochStats":
        return cls(int(doc["epoch"]), float(doc["train_accuracy"]), Metrics.from_dict(doc["test"]))


@dataclass
class Checkpoint:
    config: ModelConfig
    fingerprint: str
    params: SageParams
    optimizer_arrays: dict
    epoch: int
    history: list = field(default_factory=list)


def stratified_split(labels, test_split: float, rng: np.random.Generator):
    """Per-class shuffled split; every class keeps at least one test instance."""
    by_class = {}
    for idx, label in enumerate(labels):
        by_class.setdefault(label, []).append(idx)
    if len(by_class) < 2:
        raise StratificationError("training needs at least two classes present")
    train_idx, test_idx = [], []
    for label in sorted(by_class, key=label_index):
        members = np.array(by_class[label])
        if members.size < 2:
            raise StratificationError(
                f"class {label} has {members.size} instance(s); stratified split needs >= 2"
            )
        rng.shuffle(members)
        n_test = max(1, int(round(test_split * members.size)))
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    return sorted(train_idx), sorted(test_idx)


def _metrics_over(graphs, params, config) -> Metrics:
    y_true = [label_index(g.label) for g in graphs]
    y_pred = [predict(g, params, config) for g in graphs]
    return compute_metrics(y_true, y_pred, config.classes)


def train(dataset, config: ModelConfig):
    """Train on a stratified 80/20-style split; returns (Checkpoint, history).

    Train accuracy for an epoch is accumulated from the training-pass
    forward outputs; test metrics come from a full evaluation pass after
    each epoch.
    """
    if not dataset:
        raise ParameterError("training dataset is empty")
    for g in dataset:
        if g.node_features.shape[1] != config.input_dim:
            raise DimensionError(
                f"graph {g.instance_id!r} has feature length {g.node_features.shape[1]}, "
                f"model expects {config.input_dim}"
            )
        if label_index(g.label) >= config.classes:
            raise ParameterError(
                f"label {g.label} maps to class index {label_index(g.label)}, "
                f"but the model has {config.classes} classes"
            )

    seed_seq = np.random.SeedSequence(config.seed)
    split_rng, init_rng, order_rng, dropout_rng = (
        np.random.default_rng(s) for s in seed_seq.spawn(4)
    )
    train_idx, test_idx = stratified_split([g.label for g in dataset], config.test_split, split_rng)
    train_graphs = [dataset[i] for i in train_idx]
    test_graphs = [dataset[i] for i in test_idx]

    params = SageParams.initialize(config, init_rng)
    optimizer = ad.Adam(params.parameters(), lr=config.lr)

    history = []
    for epoch in range(1, config.epochs + 1):
        order = np.arange(len(train_graphs))
        order_rng.shuffle(order)
        correct = 0
        for idx in order:
            g = train_graphs[idx]
            logits = forward_graph(g, params, config, train_mode=True, rng=dropout_rng)
            if int(np.argmax(logits.values.ravel())) == label_index(g.label):
                correct += 1
            loss = ad.softmax_cross_entropy(logits, label_index(g.label))
            ad.backward(loss)
            optimizer.step()
        train_acc = correct / len(train_graphs)
        history.append(EpochStats(epoch, train_acc, _metrics_over(test_graphs, params, config)))

    checkpoint = Checkpoint(
        config=config,
        fingerprint=config.fingerprint(),
        params=params,
        optimizer_arrays=optimizer.state_arrays(),
        epoch=config.epochs,
        history=history,
    )
    return checkpoint, history


def evaluate(dataset, checkpoint: Checkpoint) -> Metrics:
    if not dataset:
        raise ParameterError("cannot evaluate an empty dataset")
    return _metrics_over(dataset, checkpoint.params, checkpoint.config)


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "fingerprint": checkpoint.fingerprint,
        "config": asdict(checkpoint.config),
        "epoch": checkpoint.epoch,
        "history": [h.to_dict() for h in checkpoint.history],
        "param_names": list(checkpoint.params.tensors),
    }
    arrays = {f"param_{name}": t.values for name, t in checkpoint.params.tensors.items()}
    arrays.update(checkpoint.optimizer_arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path, expected_config: ModelConfig = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    size = path.stat().st_size
    try:
        with np.load(path, allow_pickle=False) as npz:
            data = {name: npz[name] for name in npz.files}
    except (zipfile.BadZipFile, OSError, EOFError, ValueError, KeyError) as exc:
        raise CheckpointError(
            f"cannot parse checkpoint {path} ({size} bytes on disk): {exc}"
        ) from exc

    if "__meta__" not in data:
        raise CheckpointError(f"checkpoint {path} has no metadata block")
    try:
        meta = json.loads(str(data["__meta__"]))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} metadata is not valid JSON: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {meta.get('format_version')!r}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )

    config = ModelConfig(**meta["config"])
    if config.fingerprint() != meta["fingerprint"]:
        raise CheckpointError(
            f"checkpoint {path} fingerprint {meta['fingerprint']} does not match its own config"
        )
    if expected_config is not None and expected_config.fingerprint() != meta["fingerprint"]:
        raise FingerprintMismatchError(
            f"checkpoint {path} was trained under fingerprint {meta['fingerprint']}, "
            f"expected {expected_config.fingerprint()}"
        )

    tensors = {}
    for name in meta["param_names"]:
        key = f"param_{name}"
        if key not in data:
            raise CheckpointError(f"checkpoint {path} is missing parameter block {name!r}")
        tensors[name] = Tensor(data[key], requires_grad=True)
    params = SageParams(tensors)
    params.validate_shapes(config)

    optimizer_arrays = {k: v for k, v in data.items() if k.startswith("adam_")}
    history = [EpochStats.from_dict(h) for h in meta.get("history", [])]
    return Checkpoint(
        config=config,
        fingerprint=meta["fingerprint"],
        params=params,
        optimizer_arrays=optimizer_arrays,
        epoch=int(meta["epoch"]),
        history=history,
    )


METRICS_HISTORY_HEADER = "epoch,train_acc,test_acc,precision,recall,f1"


def write_metrics_history(history, path) -> None:
    lines = [METRICS_HISTORY_HEADER]
    for h in history:
        lines.append(
            f"{h.epoch},{h.train_accuracy!r},{h.test.accuracy!r},"
            f"{h.test.precision!r},{h.test.recall!r},{h.test.f1!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics_history(path):
    path = Path(path)
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != METRICS_HISTORY_HEADER:
        raise DataFormatError(
            f"bad metrics history header, expected {METRICS_HISTORY_HEADER!r}", file=path, row=1
        )
    rows = []
    for line in lines[1:]:
        epoch, train_acc, test_acc, precision, recall, f1 = line.split(",")
        rows.append(
            {
                "epoch": int(epoch),
                "train_acc": float(train_acc),
                "test_acc": float(test_acc),
                "precision": float(precision),
                "recall": float(recall),
                "f1": float(f1),
            }
        )
    return rows
