"""Decision layer: standardize final-layer codes against their training
statistics, collapse each sample to a p-norm detection index, and flag
samples whose index strictly exceeds the empirical control limit."""

from dataclasses import dataclass

import numpy as np

from .numerics import EPS_STD, empirical_quantile


@dataclass(frozen=True)
class DecisionModel:
    """Per-dimension training mean/std, norm order, and control limit."""

    mean: np.ndarray
    std: np.ndarray
    norm_order: int
    limit: float
    confidence: float

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        std = np.array(self.std, dtype=np.float64)
        if mean.ndim != 1 or mean.shape != std.shape:
            raise ValueError("mean and std must be matching vectors")
        if np.any(std < EPS_STD):
            raise ValueError(f"std entries must be >= {EPS_STD}")
        if self.norm_order < 1:
            raise ValueError("norm_order must be at least 1")
        if self.limit < 0:
            raise ValueError("limit must be non-negative")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must lie in (0, 1)")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def code_dim(self) -> int:
        return self.mean.shape[0]


def detection_index(model: DecisionModel, code: np.ndarray):
    """p-norm of the standardized code; vector in, scalar out; matrix in,
    per-row array out."""
    code = np.asarray(code, dtype=np.float64)
    single = code.ndim == 1
    rows = code[None, :] if single else code
    if rows.shape[1] != model.code_dim:
        raise ValueError(
            f"code has {rows.shape[1]} dimensions, model expects {model.code_dim}"
        )
    z = np.abs((rows - model.mean) / model.std)
    if model.norm_order == 1:
        d = z.sum(axis=1)
    else:
        d = (z ** model.norm_order).sum(axis=1) ** (1.0 / model.norm_order)
    return float(d[0]) if single else d


def fit_decision(train_codes: np.ndarray, confidence: float = 0.99,
                 norm_order: int = 1) -> DecisionModel:
    """Training statistics plus the empirical confidence-quantile limit
    of the training detection indices."""
    codes = np.asarray(train_codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] < 2:
        raise ValueError("fitting needs a matrix of at least 2 code rows")
    mean = codes.mean(axis=0)
    std = np.maximum(codes.std(axis=0, ddof=1), EPS_STD)
    probe = DecisionModel(mean, std, norm_order, limit=0.0, confidence=confidence)
    train_d = detection_index(probe, codes)
    limit = empirical_quantile(train_d, confidence)
    return DecisionModel(mean, std, norm_order, limit=float(limit),
                         confidence=confidence)


def alarms(model: DecisionModel, index_values: np.ndarray) -> np.ndarray:
    """Boolean flags; the limit itself does not alarm (strict >)."""
    return np.asarray(index_values, dtype=np.float64) > model.limit
