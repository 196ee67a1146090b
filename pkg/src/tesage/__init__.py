"""tesage: causal-graph fault classification with explanations.

Turns multichannel fault recordings into directed causal graphs via
transfer entropy, classifies the graphs with a GraphSAGE model built on an
in-package autodiff engine, and fuses mask-based and gradient-based node
attributions into per-class importance rankings.
"""

__version__ = "0.1.0"

from .causal import (
    CausalGraphInstance,
    build_adjacency,
    build_te_matrix,
    discover,
    normalize_te_matrix,
    prune_indirect,
)
from .explain import (
    ExplainConfig,
    NodeScores,
    RankHistogram,
    aggregate_rank_histogram,
    combine_scores,
    explain_graph,
    gnnexplainer_node_scores,
    integrated_gradients_node_scores,
    minmax_normalize,
    rank_nodes,
)
from .infodyn import (
    DiscreteSeries,
    TEConfig,
    conditional_entropy,
    direct_transfer_entropy,
    discretize,
    entropy,
    net_transfer_entropy,
    transfer_entropy,
)
from .sage import (
    Checkpoint,
    Metrics,
    ModelConfig,
    SageParams,
    evaluate,
    forward_graph,
    load_checkpoint,
    sage_layer_forward,
    save_checkpoint,
    train,
)
from .waveforms import (
    DatasetManifest,
    FaultClass,
    JitterRanges,
    SynthParams,
    WaveformInstance,
    read_dataset,
    synth_dataset,
    synth_instance,
    write_dataset,
    zscore_normalize,
)

__all__ = [
    "__version__",
    "CausalGraphInstance",
    "Checkpoint",
    "DatasetManifest",
    "DiscreteSeries",
    "ExplainConfig",
    "FaultClass",
    "JitterRanges",
    "Metrics",
    "ModelConfig",
    "NodeScores",
    "RankHistogram",
    "SageParams",
    "SynthParams",
    "TEConfig",
    "WaveformInstance",
    "aggregate_rank_histogram",
    "build_adjacency",
    "build_te_matrix",
    "combine_scores",
    "conditional_entropy",
    "direct_transfer_entropy",
    "discover",
    "discretize",
    "entropy",
    "evaluate",
    "explain_graph",
    "forward_graph",
    "gnnexplainer_node_scores",
    "integrated_gradients_node_scores",
    "load_checkpoint",
    "minmax_normalize",
    "net_transfer_entropy",
    "normalize_te_matrix",
    "prune_indirect",
    "rank_nodes",
    "read_dataset",
    "sage_layer_forward",
    "save_checkpoint",
    "synth_dataset",
    "synth_instance",
    "train",
    "transfer_entropy",
    "write_dataset",
    "zscore_normalize",
]
