"""SVD-based feature distillation and prototype-guided Bernoulli masking."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError
from .numerics.linalg import SvdConfig, thin_svd

LOADING_MODES = ("all", "first")


@dataclass(frozen=True)
class DistillConfig:
    k_remove: int = 3
    masking_rate: float = 0.2
    loading: str = "all"
    svd: SvdConfig = field(default_factory=lambda: SvdConfig(method="lapack"))

    def __post_init__(self):
        if self.k_remove < 0:
            raise ConfigError("k_remove must be >= 0")
        if not 0.0 <= self.masking_rate < 1.0:
            raise ConfigError("masking_rate must lie in [0, 1)")
        if self.loading not in LOADING_MODES:
            raise ConfigError(f"loading must be one of {LOADING_MODES}")


@dataclass(frozen=True)
class DistillState:
    kept_columns: tuple
    prototypes: np.ndarray
    n_input_columns: int
    fitted_rows: int = 0

    @property
    def width(self) -> int:
        return len(self.kept_columns)


def loading_scores(z: np.ndarray, mode: str = "all", svd: SvdConfig | None = None) -> np.ndarray:
    """Per-column loading: sum_k sigma_k * |Vt[k, j]| on column-centred ``z``."""
    centred = z - z.mean(axis=0, keepdims=True)
    _, s, vt = thin_svd(centred, svd)
    if mode == "first":
        return s[0] * np.abs(vt[0])
    return s @ np.abs(vt)


def _prototypes(z_cf, labels, n_classes):
    protos = np.zeros((n_classes, z_cf.shape[1]))
    for c in range(n_classes):
        rows = labels == c
        if not rows.any():
            raise ContractError(f"class {c} has no training rows")
        protos[c] = z_cf[rows].mean(axis=0)
    return protos


def fit_distiller(z_train, node_labels, cfg: DistillConfig | None = None,
                  n_classes: int | None = None) -> DistillState:
    """Drop the ``k_remove`` highest- and lowest-loading columns, then fit
    class prototypes on what survives.

    ``z_train`` stacks training node rows (rows x P); ``node_labels`` gives
    each row its subject's label.
    """
    cfg = cfg or DistillConfig()
    z = np.asarray(z_train, dtype=np.float64)
    labels = np.asarray(node_labels, dtype=np.intp)
    p = z.shape[1]
    if p <= 2 * cfg.k_remove:
        raise ConfigError(f"P={p} must exceed 2*k_remove={2 * cfg.k_remove}")
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    if cfg.k_remove == 0:
        kept = np.arange(p)
    else:
        score = loading_scores(z, cfg.loading, cfg.svd)
        order = np.lexsort((np.arange(p), score))
        dropped = np.concatenate([order[:cfg.k_remove], order[-cfg.k_remove:]])
        kept = np.setdiff1d(np.arange(p), dropped)
    protos = _prototypes(z[:, kept], labels, n_classes)
    return DistillState(tuple(int(k) for k in kept), protos, p, z.shape[0])


def refresh_prototypes(state: DistillState, z_train, node_labels) -> DistillState:
    z_cf = np.asarray(z_train)[:, list(state.kept_columns)]
    protos = _prototypes(z_cf, np.asarray(node_labels), state.prototypes.shape[0])
    return replace(state, prototypes=protos)


def drop_probabilities(z_cf, labels, state: DistillState, masking_rate: float) -> np.ndarray:
    """``rate * |z - mu_y| / rowmax|z - mu_y|`` (zero rows give zero).

    ``z_cf`` is (..., nodes, P'); ``labels`` has z_cf's leading shape minus
    the last two axes (one label per subject), or one per row for 2-d input.
    """
    if state is None:
        raise ContractError("distiller is not fitted")
    z_cf = np.asarray(z_cf, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    mu = state.prototypes[labels]
    if z_cf.ndim == 3:
        mu = mu[:, None, :]
    dev = np.abs(z_cf - mu)
    peak = dev.max(axis=-1, keepdims=True)
    safe = np.where(peak > 0, peak, 1.0)
    return np.where(peak > 0, masking_rate * dev / safe, 0.0)


def apply_mask(z_cf, labels, state: DistillState, masking_rate: float,
               gen: np.random.Generator) -> np.ndarray:
    """Training-time masking; ``z' = z_cf * (1 - delta)``, delta ~ Bernoulli(w)."""
    if masking_rate == 0.0:
        return np.array(z_cf, dtype=np.float64, copy=True)
    w = drop_probabilities(z_cf, labels, state, masking_rate)
    keep = gen.random(w.shape) >= w
    return np.asarray(z_cf) * keep


def keep_mask(z_cf, labels, state: DistillState, masking_rate: float,
              gen: np.random.Generator) -> np.ndarray:
    """The 0/1 keep pattern ``1 - delta`` alone, for use on recorded tensors."""
    w = drop_probabilities(z_cf, labels, state, masking_rate)
    return (gen.random(w.shape) >= w).astype(np.float64)
