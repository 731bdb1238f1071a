"""Atlas-guided subgraph filtering.

Every atlas mask is scored by pooling each subject's node features over the
mask's ROIs and measuring repeated held-out random-forest accuracy on the
pooled descriptors. Masks that beat the whole-brain mask are kept and their
ROIs united; when none does, the whole brain is kept.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, ResampleError
from .forest import ForestConfig, RandomForest
from .graph import AtlasMaskLibrary, Dataset, induce_dataset
from .numerics.rng import RngStream

MODALITY_CODE = {"f": 0, "s": 1}


@dataclass(frozen=True)
class FilterConfig:
    repeats: int = 10
    test_fraction: float = 0.2
    forest: ForestConfig = ForestConfig()


@dataclass(frozen=True)
class FilterReport:
    modality: str
    names: tuple
    acc: tuple
    baseline: float
    selected: tuple
    union: tuple
    repeats: int
    seed: int

    def to_json(self) -> dict:
        d = asdict(self)
        d["names"] = list(self.names)
        d["acc"] = list(self.acc)
        d["selected"] = list(self.selected)
        d["union"] = list(self.union)
        return d

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True).encode()

    @classmethod
    def from_json(cls, d: dict) -> "FilterReport":
        return cls(d["modality"], tuple(d["names"]), tuple(d["acc"]), d["baseline"],
                   tuple(d["selected"]), tuple(d["union"]), d["repeats"], d["seed"])

    @property
    def fell_back(self) -> bool:
        return not self.selected


def pool_region(features: np.ndarray, mask) -> np.ndarray:
    """Mean over the mask's ROI rows: (M, N, D) features -> (M, D) descriptors."""
    idx = np.asarray(mask, dtype=np.intp)
    if idx.size == 0:
        raise ContractError("pool_region needs a non-empty mask")
    return features[:, idx, :].mean(axis=1)


def stratified_split(labels: np.ndarray, test_fraction: float, gen: np.random.Generator):
    train, test = [], []
    for c in np.unique(labels):
        idx = gen.permutation(np.flatnonzero(labels == c))
        n_test = int(round(test_fraction * len(idx)))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def rf_score(descriptors, labels, repeats: int, stream: RngStream,
             forest: ForestConfig | None = None, test_fraction: float = 0.2,
             max_attempts: int = 100) -> float:
    """Mean held-out accuracy over ``repeats`` stratified splits.

    Repeat ``r`` draws its split and forest seed from ``stream.child(r)``
    only, so every mask scored with the same stream sees the same splits.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    if len(y) < 2 * max(len(classes), 2):
        raise ContractError(f"need at least 2*C samples, got {len(y)}")
    scores = []
    for r in range(repeats):
        gen = stream.child(r, 0).generator()
        for _ in range(max_attempts):
            train, test = stratified_split(y, test_fraction, gen)
            if len(test) and np.array_equal(np.unique(y[train]), classes):
                break
        else:
            raise ResampleError(f"no split with every class in training after {max_attempts} attempts")
        model = RandomForest(forest).fit(x[train], y[train], stream.child(r, 1))
        scores.append(float(np.mean(model.predict(x[test]) == y[test])))
    return float(np.mean(scores))


def select_masks(acc, atlas: AtlasMaskLibrary):
    """Strictly-better masks and their ROI union (whole brain when none)."""
    baseline = acc[0]
    chosen = [k for k in range(1, len(acc)) if acc[k] > baseline]
    if not chosen:
        return (), tuple(atlas.masks[0])
    union = sorted(set().union(*(atlas.masks[k] for k in chosen)))
    return tuple(atlas.names[k] for k in chosen), tuple(union)


def filter_subgraphs(dataset: Dataset, atlas: AtlasMaskLibrary, modality: str,
                     config: FilterConfig | None = None, seed: int = 0,
                     train_indices=None, stream: RngStream | None = None):
    """Score every mask on the (training) subjects and reduce the dataset.

    Returns ``(FilterReport, reduced Dataset)``; the reduction applies to all
    subjects, while accuracies only ever see ``train_indices``.
    """
    cfg = config or FilterConfig()
    if modality not in MODALITY_CODE:
        raise ContractError(f"modality must be 'f' or 's', got {modality!r}")
    if atlas.n_nodes != dataset.n_nodes:
        raise ContractError(f"atlas covers {atlas.n_nodes} nodes, dataset has {dataset.n_nodes}")
    stream = stream or RngStream(seed).child(MODALITY_CODE[modality])
    rows = np.arange(len(dataset)) if train_indices is None else np.asarray(train_indices)
    feats = np.stack([dataset.subjects[i].features(modality) for i in rows])
    labels = dataset.labels[rows]
    acc = tuple(rf_score(pool_region(feats, m), labels, cfg.repeats, stream,
                         cfg.forest, cfg.test_fraction) for m in atlas.masks)
    selected, union = select_masks(acc, atlas)
    report = FilterReport(modality, atlas.names, acc, acc[0], selected, union,
                          cfg.repeats, seed)
    reduced = dataset if len(union) == dataset.n_nodes else induce_dataset(dataset, union)
    return report, reduced
