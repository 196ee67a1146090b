"""Discrete information-dynamics estimators.

Plug-in (empirical frequency) estimators over integer symbol sequences:
entropy, conditional entropy, transfer entropy, net transfer entropy, and
mediator-conditioned (direct) transfer entropy. All values are in bits.

Transfer entropy of a source series S into a destination series D is the
reduction in uncertainty about the destination's next symbol once the
source's recent history is known in addition to the destination's own:

    TE(S -> D) = H(D_next | D_hist) - H(D_next | D_hist, S_hist)

Finite-sample estimates can dip slightly below zero; they are clamped at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

# Largest joint table the estimators will allocate (number of cells).
_MAX_TABLE_CELLS = 1 << 26


@dataclass(frozen=True)
class DiscreteSeries:
    """An integer symbol sequence together with its alphabet size."""

    symbols: np.ndarray
    alphabet_size: int

    def __post_init__(self):
        sym = np.asarray(self.symbols, dtype=np.int64)
        object.__setattr__(self, "symbols", sym)
        if sym.ndim != 1 or sym.size < 1:
            raise DimensionError(f"symbols must be a non-empty 1-D sequence, got shape {sym.shape}")
        if self.alphabet_size < 1:
            raise ParameterError(f"alphabet_size must be >= 1, got {self.alphabet_size}")
        if sym.min() < 0 or sym.max() >= self.alphabet_size:
            raise ParameterError(
                f"symbols must lie in [0, {self.alphabet_size}), "
                f"got range [{sym.min()}, {sym.max()}]"
            )

    def __len__(self):
        return int(self.symbols.size)


@dataclass(frozen=True)
class TEConfig:
    """Knobs for transfer-entropy estimation and edge construction.

    ``bins`` is the discretization alphabet for plain TE; ``dte_bins`` is the
    coarser alphabet used for the four-variable mediator-conditioned joint.
    ``dst_history``/``src_history`` are the history lengths on the destination
    and source sides. ``threshold`` is applied to the normalized TE matrix
    when building edges; ``edge_rule`` selects between thresholding the
    normalized TE entries directly ("te", with direction dominance) and
    thresholding the antisymmetric net-TE difference ("net_te").
    """

    bins: int = 8
    dst_history: int = 1
    src_history: int = 1
    dte_bins: int = 4
    dte_epsilon: float = 0.02
    threshold: float = 0.2
    edge_rule: str = "te"

    def __post_init__(self):
        if self.bins < 2:
            raise ParameterError(f"bins must be >= 2, got {self.bins}")
        if self.dst_history < 1:
            raise ParameterError(f"dst_history must be >= 1, got {self.dst_history}")
        if self.src_history < 1:
            raise ParameterError(f"src_history must be >= 1, got {self.src_history}")
        if self.dte_bins < 2:
            raise ParameterError(f"dte_bins must be >= 2, got {self.dte_bins}")
        if self.dte_epsilon < 0:
            raise ParameterError(f"dte_epsilon must be >= 0, got {self.dte_epsilon}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ParameterError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.edge_rule not in ("te", "net_te"):
            raise ParameterError(f"edge_rule must be 'te' or 'net_te', got {self.edge_rule!r}")


def discretize(series, bins: int) -> DiscreteSeries:
    """Equal-width binning of a real-valued series over its own [min, max].

    Symbol = floor(bins * (x - min) / (max - min)), with the maximum sample
    clamped into the top bin. A constant series maps entirely to symbol 0.
    """
    values = np.asarray(series, dtype=np.float64)
    if values.ndim != 1 or values.size < 1:
        raise DimensionError(f"series must be a non-empty 1-D sequence, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ParameterError("series contains non-finite values")
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    lo = values.min()
    span = values.max() - lo
    if span == 0.0:
        symbols = np.zeros(values.size, dtype=np.int64)
    else:
        symbols = np.floor(bins * (values - lo) / span).astype(np.int64)
        np.clip(symbols, 0, bins - 1, out=symbols)
    return DiscreteSeries(symbols, bins)


def coarsen(series: DiscreteSeries, bins: int) -> DiscreteSeries:
    """Regroup a symbol sequence onto a coarser alphabet of at most ``bins``.

    Adjacent symbols are merged proportionally; for alphabets that are an
    integer multiple of ``bins`` this equals equal-width rebinning. Series
    already at or below the target alphabet are returned unchanged.
    """
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    if series.alphabet_size <= bins:
        return series
    merged = (series.symbols * bins) // series.alphabet_size
    return DiscreteSeries(merged, bins)


def _entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def entropy(series: DiscreteSeries) -> float:
    """Shannon entropy of the empirical symbol distribution, in bits."""
    counts = np.bincount(series.symbols, minlength=series.alphabet_size)
    return _entropy_bits(counts)


def conditional_entropy(x: DiscreteSeries, y: DiscreteSeries) -> float:
    """H(X|Y) in bits from the empirical joint distribution of (x, y)."""
    if len(x) != len(y):
        raise DimensionError(f"series lengths differ: {len(x)} vs {len(y)}")
    joint = x.symbols * y.alphabet_size + y.symbols
    joint_counts = np.bincount(joint, minlength=x.alphabet_size * y.alphabet_size)
    y_counts = np.bincount(y.symbols, minlength=y.alphabet_size)
    return max(0.0, _entropy_bits(joint_counts) - _entropy_bits(y_counts))


def _history_codes(symbols: np.ndarray, alphabet: int, history: int, t_first: int, t_last: int) -> np.ndarray:
    """Encode the ``history`` symbols ending at each t in [t_first, t_last]."""
    codes = np.zeros(t_last - t_first + 1, dtype=np.int64)
    for j in range(history):
        codes = codes * alphabet + symbols[t_first - j : t_last - j + 1]
    return codes


def te_joint_counts(
    src: DiscreteSeries, dst: DiscreteSeries, dst_history: int = 1, src_history: int = 1
) -> np.ndarray:
    """Empirical count tensor over (dst_next, dst_history, src_history).

    Axis 0 indexes the destination's next symbol, axis 1 its encoded history
    block, axis 2 the source's encoded history block. This is the counting
    basis every TE quantity is computed from.
    """
    if len(src) != len(dst):
        raise DimensionError(f"series lengths differ: {len(src)} vs {len(dst)}")
    if dst_history < 1 or src_history < 1:
        raise ParameterError("history lengths must be >= 1")
    t = len(dst)
    m = max(dst_history, src_history)
    if t < m + 1:
        raise DimensionError(f"series of length {t} too short for history {m} (need >= {m + 1})")

    n_next = dst.alphabet_size
    n_dhist = dst.alphabet_size**dst_history
    n_shist = src.alphabet_size**src_history
    cells = n_next * n_dhist * n_shist
    if cells > _MAX_TABLE_CELLS:
        raise ParameterError(
            f"joint table with {cells} cells exceeds the supported size; "
            "reduce bins or history lengths"
        )

    next_sym = dst.symbols[m:]
    dhist = _history_codes(dst.symbols, dst.alphabet_size, dst_history, m - 1, t - 2)
    shist = _history_codes(src.symbols, src.alphabet_size, src_history, m - 1, t - 2)
    flat = (next_sym * n_dhist + dhist) * n_shist + shist
    counts = np.bincount(flat, minlength=cells)
    return counts.reshape(n_next, n_dhist, n_shist)


def transfer_entropy(
    src: DiscreteSeries, dst: DiscreteSeries, dst_history: int = 1, src_history: int = 1
) -> float:
    """Transfer entropy from ``src`` into ``dst`` in bits, clamped at 0."""
    counts = te_joint_counts(src, dst, dst_history, src_history)
    # H(next | dhist) from the (next, dhist) marginal.
    nd = counts.sum(axis=2)
    h_given_dhist = _entropy_bits(nd) - _entropy_bits(nd.sum(axis=0))
    # H(next | dhist, shist) from the full table.
    h_given_both = _entropy_bits(counts) - _entropy_bits(counts.sum(axis=0))
    return max(0.0, h_given_dhist - h_given_both)


def net_transfer_entropy(x: DiscreteSeries, y: DiscreteSeries, cfg: TEConfig) -> float:
    """Signed difference TE(x->y) - TE(y->x); positive means x drives y."""
    forward = transfer_entropy(x, y, cfg.dst_history, cfg.src_history)
    backward = transfer_entropy(y, x, cfg.dst_history, cfg.src_history)
    return forward - backward


def direct_transfer_entropy(
    src: DiscreteSeries, dst: DiscreteSeries, mediator: DiscreteSeries, cfg: TEConfig
) -> float:
    """Transfer entropy from ``src`` into ``dst`` conditioned on a mediator.

    Near-zero values mean the apparent src->dst flow is explained by the
    mediator, i.e. the link is indirect. Inputs are coarsened to
    ``cfg.dte_bins`` so the four-variable joint stays populated; the
    mediator is conditioned on with the source-side history length.
    """
    if not (len(src) == len(dst) == len(mediator)):
        raise DimensionError(
            f"series lengths differ: {len(src)}, {len(dst)}, {len(mediator)}"
        )
    src = coarsen(src, cfg.dte_bins)
    dst = coarsen(dst, cfg.dte_bins)
    mediator = coarsen(mediator, cfg.dte_bins)

    k, l = cfg.dst_history, cfg.src_history
    t = len(dst)
    m = max(k, l)
    if t < m + 1:
        raise DimensionError(f"series of length {t} too short for history {m} (need >= {m + 1})")

    n_next = dst.alphabet_size
    n_dhist = dst.alphabet_size**k
    n_mhist = mediator.alphabet_size**l
    n_shist = src.alphabet_size**l
    cells = n_next * n_dhist * n_mhist * n_shist
    if cells > _MAX_TABLE_CELLS:
        raise ParameterError(
            f"joint table with {cells} cells exceeds the supported size; "
            "reduce dte_bins or history lengths"
        )

    next_sym = dst.symbols[m:]
    dhist = _history_codes(dst.symbols, dst.alphabet_size, k, m - 1, t - 2)
    mhist = _history_codes(mediator.symbols, mediator.alphabet_size, l, m - 1, t - 2)
    shist = _history_codes(src.symbols, src.alphabet_size, l, m - 1, t - 2)
    flat = ((next_sym * n_dhist + dhist) * n_mhist + mhist) * n_shist + shist
    counts = np.bincount(flat, minlength=cells).reshape(n_next, n_dhist, n_mhist, n_shist)

    # H(next | dhist, mhist) from the marginal over the source axis.
    ndm = counts.sum(axis=3)
    h_given_dm = _entropy_bits(ndm) - _entropy_bits(ndm.sum(axis=0))
    h_given_all = _entropy_bits(counts) - _entropy_bits(counts.sum(axis=0))
    return max(0.0, h_given_dm - h_given_all)
