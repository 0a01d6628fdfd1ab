"""One feature-transformation layer: sliding-window singular values over
random column subsets, horizontal fusion, PCA reduction, and an
autoencoder encoding that becomes the next layer's feature matrix.

Every window is normalized by the pooled scalar mean and standard
deviation of all its entries before the singular value decomposition, so
the extracted spectra react to correlation structure rather than raw
scale.  Each layer consumes window_width - 1 leading rows; sample_offset
tracks the alignment with the original samples.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .autoencoder import (
    Autoencoder,
    TrainConfig,
    Variant,
    forward,
    init_autoencoder,
    loss,
    train,
)
from .ensemble import FeatureMatrix
from .numerics import EPS_STD, covariance, singular_values, sym_eig

_EIG_FLOOR = 1e-12
DEFAULT_HIDDEN_DIMS = (128, 64)


def derive_seed(*components) -> int:
    """Deterministic 64-bit child seed from integer components."""
    state = np.random.SeedSequence([int(c) for c in components])
    return int(state.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class LayerConfig:
    """Settings for one transformation layer.

    window_width must exceed the incoming feature count and subset_size
    must not; both are checked at fit time when that count is known.
    """

    window_width: int
    subset_size: int
    max_subsets: int = 30
    pca_variance_fraction: float = 0.95
    code_dim: int = 20
    ae_variant: Variant = Variant("plain")
    training: TrainConfig = TrainConfig(epochs=2000)
    hidden_dims: tuple = DEFAULT_HIDDEN_DIMS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.window_width < 2:
            raise ValueError("window_width must be at least 2")
        if self.subset_size < 1:
            raise ValueError("subset_size must be positive")
        if self.subset_size >= self.window_width:
            raise ValueError("window_width must exceed subset_size")
        if self.max_subsets < 1:
            raise ValueError("max_subsets must be positive")
        if not (0.0 < self.pca_variance_fraction <= 1.0):
            raise ValueError("pca_variance_fraction must lie in (0, 1]")
        if self.code_dim < 1:
            raise ValueError("code_dim must be positive")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class PcaReduction:
    """Column-mean centering plus an orthonormal projection."""

    mean: np.ndarray
    projection: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        projection = np.array(self.projection, dtype=np.float64)
        if projection.ndim != 2 or mean.shape != (projection.shape[0],):
            raise ValueError("mean length must match projection rows")
        gram = projection.T @ projection
        if np.max(np.abs(gram - np.eye(projection.shape[1]))) > 1e-8:
            raise ValueError("projection columns must be orthonormal within 1e-8")
        mean.setflags(write=False)
        projection.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "projection", projection)


@dataclass(frozen=True)
class TransformLayer:
    """Frozen state of one fitted layer: the column subsets, the PCA
    reduction with its per-column score scale, the trained autoencoder,
    and the mean/std of the training codes."""

    config: LayerConfig
    input_features: int
    subsets: tuple
    reduction: PcaReduction
    score_scale: np.ndarray
    autoencoder: Autoencoder
    code_mean: np.ndarray
    code_std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "subsets", tuple(tuple(s) for s in self.subsets))
        for field_name in ("score_scale", "code_mean", "code_std"):
            arr = np.array(getattr(self, field_name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, field_name, arr)
        if self.input_features < 1:
            raise ValueError("input_features must be positive")
        for subset in self.subsets:
            if len(set(subset)) != len(subset) or any(
                    not (0 <= idx < self.input_features) for idx in subset):
                raise ValueError(f"subset {subset} invalid for {self.input_features} columns")
        if self.code_mean.shape != self.code_std.shape:
            raise ValueError("code_mean and code_std must have equal shapes")
        if np.any(self.code_std < EPS_STD):
            raise ValueError(f"code_std entries must be >= {EPS_STD}")


def select_column_subsets(m_l: int, h_l: int, max_subsets: int, seed: int) -> list:
    """All h_l-of-m_l column combinations when few enough, otherwise a
    seeded sample without replacement; always sorted lexicographically."""
    if not (0 < h_l <= m_l):
        raise ValueError(f"subset size {h_l} outside (0, {m_l}]")
    if max_subsets < 1:
        raise ValueError("max_subsets must be positive")
    total = math.comb(m_l, h_l)
    if total <= max_subsets:
        return [tuple(c) for c in itertools.combinations(range(m_l), h_l)]
    rng = np.random.default_rng(seed)
    chosen = {}
    while len(chosen) < max_subsets:
        candidate = tuple(sorted(rng.choice(m_l, size=h_l, replace=False).tolist()))
        chosen[candidate] = None
    return sorted(chosen)


def window_singular_values(features: FeatureMatrix, q: int, subset, window_width: int) -> np.ndarray:
    """Descending singular values of the pooled-normalized window ending
    at row q, restricted to the subset columns."""
    if q < window_width - 1:
        raise ValueError(
            f"window ending at row {q} extends before row 0 (width {window_width})"
        )
    if q >= features.n_samples:
        raise ValueError(f"row {q} outside feature matrix of {features.n_samples} rows")
    window = features.values[q - window_width + 1: q + 1, list(subset)]
    return _normalized_singular_values(window[None, :, :])[0]


def _normalized_singular_values(windows: np.ndarray) -> np.ndarray:
    """Pooled-scalar normalization then SVD over a (batch, w, h) stack."""
    mean = windows.mean(axis=(1, 2), keepdims=True)
    std = windows.std(axis=(1, 2), ddof=1, keepdims=True)
    normalized = (windows - mean) / np.maximum(std, EPS_STD)
    return singular_values(normalized)


def _sliding_windows(values: np.ndarray, window_width: int) -> np.ndarray:
    """(n - w + 1, w, cols) view of every full-height window."""
    view = np.lib.stride_tricks.sliding_window_view(values, window_width, axis=0)
    return np.swapaxes(view, 1, 2)


def build_fused_matrix(features: FeatureMatrix, subsets, window_width: int) -> FeatureMatrix:
    """Concatenate per-subset singular-value rows across all windows.

    Row r holds the spectra of the windows ending at sample r + w - 1;
    the sample_offset advances accordingly.
    """
    n = features.n_samples
    if n < window_width:
        raise ValueError(f"{n} rows cannot host a window of width {window_width}")
    subsets = [tuple(s) for s in subsets]
    blocks = []
    names = []
    for index, subset in enumerate(subsets):
        windows = _sliding_windows(features.values[:, list(subset)], window_width)
        blocks.append(_normalized_singular_values(windows))
        names.extend(f"subset{index}_sv{j}" for j in range(len(subset)))
    return FeatureMatrix(
        np.hstack(blocks), layer=features.layer, feature_names=tuple(names),
        sample_offset=features.sample_offset + window_width - 1,
    )


def fit_pca_reduction(values: np.ndarray, variance_fraction: float) -> tuple:
    """Center by column means, keep the smallest eigenvector count whose
    cumulative variance reaches variance_fraction (capped at the
    numerical rank); returns (PcaReduction, reduced matrix)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValueError("PCA reduction needs at least 2 rows")
    if not (0.0 < variance_fraction <= 1.0):
        raise ValueError("variance_fraction must lie in (0, 1]")
    eig = sym_eig(covariance(values))
    eigenvalues = np.clip(eig.eigenvalues, 0.0, None)
    total = eigenvalues.sum()
    if total <= 0.0:
        raise ValueError("degenerate input: all columns are constant")
    eligible = eigenvalues > _EIG_FLOOR * eigenvalues[0]
    rank = int(np.count_nonzero(eligible))
    cumulative = np.cumsum(eigenvalues) / total
    reached = np.nonzero(cumulative >= variance_fraction)[0]
    t = rank if reached.size == 0 else min(int(reached[0]) + 1, rank)
    reduction = PcaReduction(values.mean(axis=0), eig.eigenvectors[:, :t])
    return reduction, (values - reduction.mean) @ reduction.projection


def _reduce_and_scale(values: np.ndarray, reduction: PcaReduction,
                      score_scale: np.ndarray) -> np.ndarray:
    return ((values - reduction.mean) @ reduction.projection) / score_scale


def fit_layer(features: FeatureMatrix, config: LayerConfig) -> tuple:
    """Fit one layer on U^l and return (TransformLayer, U^{l+1}).

    The principal-component scores are scaled to unit per-column std
    before the autoencoder sees them, so every retained direction
    carries equal reconstruction weight and the learned code spreads
    across directions instead of tracking the single largest one.
    Subset sampling and autoencoder initialization derive their seeds
    from config.seed; the training seed lives in config.training.
    """
    m_l = features.n_features
    if config.window_width <= m_l:
        raise ValueError(
            f"window_width {config.window_width} must exceed the {m_l} input features"
        )
    if config.subset_size > m_l:
        raise ValueError(f"subset_size {config.subset_size} exceeds {m_l} input features")

    subsets = select_column_subsets(m_l, config.subset_size, config.max_subsets,
                                    derive_seed(config.seed, 0))
    fused = build_fused_matrix(features, subsets, config.window_width)
    reduction, reduced = fit_pca_reduction(fused.values, config.pca_variance_fraction)
    score_scale = np.maximum(reduced.std(axis=0, ddof=1), EPS_STD)
    scaled = reduced / score_scale

    ae = init_autoencoder(scaled.shape[1], config.code_dim, config.ae_variant,
                          derive_seed(config.seed, 1), hidden_dims=config.hidden_dims)
    trained, _ = train(ae, scaled, config.training)
    codes, _ = forward(trained, scaled)
    code_mean = codes.mean(axis=0)
    code_std = np.maximum(codes.std(axis=0, ddof=1), EPS_STD)

    layer = TransformLayer(config, m_l, tuple(subsets), reduction, score_scale,
                           trained, code_mean, code_std)
    next_features = FeatureMatrix(
        codes, layer=features.layer + 1,
        feature_names=tuple(f"code{j}" for j in range(codes.shape[1])),
        sample_offset=fused.sample_offset,
    )
    return layer, next_features


def layer_loss(layer: TransformLayer, features: FeatureMatrix) -> tuple:
    """(total, parts) of the stored autoencoder on this layer's scaled
    inputs; on the fit-time features this is the post-training loss."""
    fused = build_fused_matrix(features, layer.subsets, layer.config.window_width)
    scaled = _reduce_and_scale(fused.values, layer.reduction, layer.score_scale)
    return loss(layer.autoencoder, scaled, layer.config.training.l1_weight)


def apply_layer(layer: TransformLayer, features: FeatureMatrix) -> FeatureMatrix:
    """Run U^l through the frozen layer; bit-identical to the fit-time
    output on the training features."""
    if features.n_features != layer.input_features:
        raise ValueError(
            f"feature matrix has {features.n_features} columns, layer was fitted "
            f"on {layer.input_features}"
        )
    fused = build_fused_matrix(features, layer.subsets, layer.config.window_width)
    scaled = _reduce_and_scale(fused.values, layer.reduction, layer.score_scale)
    codes, _ = forward(layer.autoencoder, scaled)
    return FeatureMatrix(
        codes, layer=features.layer + 1,
        feature_names=tuple(f"code{j}" for j in range(codes.shape[1])),
        sample_offset=fused.sample_offset,
    )
