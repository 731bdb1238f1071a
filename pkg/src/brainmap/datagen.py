"""Synthetic paired functional/structural connectomes with planted
disease subnetworks.

Functional graphs are a shared community template plus subject noise (a
subject-wide offset, per-subsystem-pair block offsets, a low-rank factor
part and an i.i.d. part, all symmetric) plus, for class
``c``, a shift of ``c * signal_strength`` on every edge inside each planted
mask. Structural graphs mix the functional graph with an independent
structural draw: ``adj_s = clamp(rho * adj_f + (1 - rho) * own)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .graph import AtlasMaskLibrary, Dataset, default_atlas, make_subject, save_dataset
from .numerics.rng import RngStream

NOISE_MODELS = ("factor", "iid")


@dataclass(frozen=True)
class GenSpec:
    n_subjects: int = 200
    n_nodes: int = 90
    n_classes: int = 2
    planted_masks: tuple = ("limbic", "subcortical")
    signal_strength: float = 0.3
    noise_sigma: float = 0.1
    coupling: float = 0.3
    seed: int = 0
    noise_model: str = "factor"
    factor_rank: int = 4
    global_weight: float = 0.2
    factor_weight: float = 0.1
    block_weight: float = 0.6
    within_mask: float = 0.3
    between_mask: float = 0.05
    structural_sigma: float = 0.2

    def validate(self, atlas: AtlasMaskLibrary):
        if self.n_nodes != atlas.n_nodes:
            raise ConfigError(f"n_nodes={self.n_nodes} but atlas covers {atlas.n_nodes} nodes")
        unknown = set(self.planted_masks) - set(atlas.names[1:])
        if unknown:
            raise ConfigError(f"planted masks not in atlas: {sorted(unknown)}")
        if self.signal_strength < 0 or self.noise_sigma < 0 or self.structural_sigma < 0:
            raise ConfigError("signal_strength and noise scales must be >= 0")
        shares = (self.global_weight, self.factor_weight, self.block_weight)
        if min(shares) < 0 or sum(shares) > 1:
            raise ConfigError("global, factor and block weights must be >= 0 and sum to at most 1")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError("coupling must lie in [0, 1]")
        if self.noise_model not in NOISE_MODELS:
            raise ConfigError(f"noise_model must be one of {NOISE_MODELS}")
        if self.n_classes < 2 or self.n_subjects < self.n_classes:
            raise ConfigError("need n_classes >= 2 and at least one subject per class")


@dataclass(frozen=True)
class GroundTruth:
    planted_masks: tuple
    planted_nodes: tuple
    spec: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"planted_masks": list(self.planted_masks),
                "planted_nodes": list(self.planted_nodes),
                "spec": self.spec}


def community_template(atlas: AtlasMaskLibrary, within: float, between: float) -> np.ndarray:
    n = atlas.n_nodes
    t = np.full((n, n), between)
    for m in atlas.masks[1:]:
        t[np.ix_(m, m)] = within
    np.fill_diagonal(t, 1.0)
    return t


def _symmetric_noise(gen, n, sigma, spec, system):
    """Unit-variance-per-edge symmetric noise scaled by ``sigma``.

    Variance is split between a subject-wide offset, per-subsystem-pair
    block offsets, a low-rank factor part and an i.i.d. part (the factor
    share folds into i.i.d. for ``"iid"``). ``system[i]`` is node i's
    subsystem index.
    """
    iid = gen.normal(size=(n, n))
    iid = (iid + iid.T) / np.sqrt(2.0)
    offset = gen.normal()
    n_sys = int(system.max()) + 1
    block = gen.normal(size=(n_sys, n_sys))
    block = np.triu(block) + np.triu(block, 1).T
    w_glob, w_fac, w_blk = spec.global_weight, spec.factor_weight, spec.block_weight
    if spec.noise_model == "iid":
        w_fac = 0.0
    noise = (np.sqrt(w_glob) * offset + np.sqrt(w_blk) * block[np.ix_(system, system)]
             + np.sqrt(1.0 - w_glob - w_fac - w_blk) * iid)
    if w_fac > 0.0:
        load = gen.normal(size=(n, spec.factor_rank))
        noise = noise + np.sqrt(w_fac) * (load @ load.T) / np.sqrt(spec.factor_rank)
    noise = sigma * noise
    np.fill_diagonal(noise, 0.0)
    return noise


def _finish(a):
    a = np.clip((a + a.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(a, 1.0)
    return a


def generate(spec: GenSpec | None = None, atlas: AtlasMaskLibrary | None = None):
    """Draw a dataset; returns ``(Dataset, GroundTruth)``.

    Labels are balanced (round-robin over classes, then shuffled) and each
    subject draws from its own stream, so subject ``i`` depends only on
    ``(seed, i)``.
    """
    spec = spec or GenSpec()
    atlas = atlas or default_atlas()
    spec.validate(atlas)
    n = spec.n_nodes
    base = community_template(atlas, spec.within_mask, spec.between_mask)
    signal = np.zeros((n, n))
    for name in spec.planted_masks:
        m = atlas[name]
        signal[np.ix_(m, m)] = 1.0
    np.fill_diagonal(signal, 0.0)
    system = np.zeros(n, dtype=np.intp)
    for k, m in enumerate(atlas.masks[1:]):
        system[list(m)] = k

    root = RngStream(spec.seed)
    labels = np.arange(spec.n_subjects) % spec.n_classes
    labels = root.child(0).generator().permutation(labels)
    rho = spec.coupling
    subjects = []
    for i, y in enumerate(labels):
        gen = root.child(1, i).generator()
        noise_f = _symmetric_noise(gen, n, spec.noise_sigma, spec, system)
        adj_f = _finish(base + noise_f + y * spec.signal_strength * signal)
        noise_s = _symmetric_noise(gen, n, spec.structural_sigma, spec, system)
        own_s = _finish(base + noise_s)
        adj_s = np.clip(rho * adj_f + (1.0 - rho) * own_s, -1.0, 1.0)
        subjects.append(make_subject(f"sub{i:04d}", adj_f, adj_s, int(y)))

    planted = sorted(set().union(*(atlas[m] for m in spec.planted_masks))) if spec.planted_masks else []
    truth = GroundTruth(tuple(spec.planted_masks), tuple(planted), spec_to_json(spec))
    return Dataset(tuple(subjects), spec.n_classes), truth


def spec_to_json(spec: GenSpec) -> dict:
    d = asdict(spec)
    d["planted_masks"] = list(spec.planted_masks)
    return d


def export(dataset: Dataset, directory, truth: GroundTruth | None = None, fmt: str = "csv") -> Path:
    """Write the dataset (graph-core manifest layout) and optional ground truth."""
    path = save_dataset(dataset, directory, fmt)
    if truth is not None:
        (Path(directory) / "ground_truth.json").write_text(json.dumps(truth.to_json(), indent=1) + "\n")
    return path
