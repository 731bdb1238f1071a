"""Subjects, datasets and atlas masks, plus their on-disk formats.

Matrices are stored either as CSV (one row per line) or in a small
little-endian binary container::

    b"BMAP1" | u32 rows | u32 cols | rows*cols f64 (row-major)
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    AsymmetricAdjacencyError,
    ConfigError,
    ContractError,
    DataError,
    LabelRangeError,
    MissingFileError,
    ShapeMismatchError,
)

SYM_TOL = 1e-9
MAGIC = b"BMAP1"
FEATURE_POLICIES = ("auto", "adjacency-row", "file")


@dataclass(frozen=True, eq=False)
class MultimodalSubject:
    id: str
    adj_f: np.ndarray
    adj_s: np.ndarray
    feat_f: np.ndarray
    feat_s: np.ndarray
    label: int

    @property
    def n_nodes(self) -> int:
        return self.adj_f.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.feat_f.shape[1]

    def adjacency(self, modality: str) -> np.ndarray:
        return _pick(modality, self.adj_f, self.adj_s)

    def features(self, modality: str) -> np.ndarray:
        return _pick(modality, self.feat_f, self.feat_s)

    def same_as(self, other: "MultimodalSubject") -> bool:
        return (self.id == other.id and self.label == other.label
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("adj_f", "adj_s", "feat_f", "feat_s")))


def _pick(modality, f, s):
    if modality == "f":
        return f
    if modality == "s":
        return s
    raise ContractError(f"modality must be 'f' or 's', got {modality!r}")


def default_feature_policy(adjacency: np.ndarray) -> np.ndarray:
    """Node features default to the node's own adjacency row (D = N)."""
    return np.array(adjacency, dtype=np.float64, copy=True)


def make_subject(id, adj_f, adj_s, label, feat_f=None, feat_s=None, validate=True):
    adj_f = np.asarray(adj_f, dtype=np.float64)
    adj_s = np.asarray(adj_s, dtype=np.float64)
    feat_f = default_feature_policy(adj_f) if feat_f is None else np.asarray(feat_f, dtype=np.float64)
    feat_s = default_feature_policy(adj_s) if feat_s is None else np.asarray(feat_s, dtype=np.float64)
    subject = MultimodalSubject(str(id), adj_f, adj_s, feat_f, feat_s, int(label))
    if validate:
        validate_subject(subject)
    return subject


def validate_subject(s: MultimodalSubject, tol: float = SYM_TOL) -> None:
    for name in ("adj_f", "adj_s"):
        a = getattr(s, name)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeMismatchError(f"subject {s.id}: {name} must be square, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DataError(f"subject {s.id}: {name} has non-finite entries")
        asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
        if asym > tol:
            raise AsymmetricAdjacencyError(f"subject {s.id}: {name} asymmetric (max |A-A^T| = {asym:.3g})")
        if np.any(np.abs(a) > 1.0 + tol):
            raise DataError(f"subject {s.id}: {name} has entries outside [-1, 1]")
    n = s.adj_f.shape[0]
    if s.adj_s.shape[0] != n:
        raise ShapeMismatchError(f"subject {s.id}: adj_f is {n}x{n} but adj_s is {s.adj_s.shape}")
    if np.any(np.abs(np.diag(s.adj_f) - 1.0) > tol):
        raise DataError(f"subject {s.id}: functional diagonal must be 1")
    for name in ("feat_f", "feat_s"):
        x = getattr(s, name)
        if x.ndim != 2 or x.shape[0] != n:
            raise ShapeMismatchError(f"subject {s.id}: {name} has shape {x.shape}, expected {n} rows")
        if not np.all(np.isfinite(x)):
            raise DataError(f"subject {s.id}: {name} has non-finite entries")
    if s.feat_f.shape[1] != s.feat_s.shape[1]:
        raise ShapeMismatchError(f"subject {s.id}: modalities disagree on feature width")


@dataclass(frozen=True, eq=False)
class Dataset:
    subjects: tuple
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if not self.subjects:
            raise DataError("dataset is empty")
        n, d = self.subjects[0].n_nodes, self.subjects[0].feat_dim
        for s in self.subjects:
            if s.n_nodes != n or s.feat_dim != d:
                raise ShapeMismatchError(f"subject {s.id} has N={s.n_nodes}, D={s.feat_dim}; expected N={n}, D={d}")
            if not 0 <= s.label < self.n_classes:
                raise LabelRangeError(f"subject {s.id}: label {s.label} outside [0, {self.n_classes})")

    def __len__(self):
        return len(self.subjects)

    @property
    def n_nodes(self) -> int:
        return self.subjects[0].n_nodes

    @property
    def feat_dim(self) -> int:
        return self.subjects[0].feat_dim

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=np.intp)

    def subset(self, indices) -> "Dataset":
        return Dataset(tuple(self.subjects[i] for i in indices), self.n_classes)

    def features(self, modality: str) -> np.ndarray:
        """Stacked M x N x D feature tensor for one modality."""
        return np.stack([s.features(modality) for s in self.subjects])

    def same_as(self, other: "Dataset") -> bool:
        return (self.n_classes == other.n_classes and len(self) == len(other)
                and all(a.same_as(b) for a, b in zip(self.subjects, other.subjects)))


def induce_subgraph(subject: MultimodalSubject, mask) -> MultimodalSubject:
    """Restrict both modalities to the ROIs in ``mask`` (order preserved)."""
    idx = np.asarray(mask, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ContractError("induce_subgraph needs a non-empty 1-d mask")
    if idx.min() < 0 or idx.max() >= subject.n_nodes:
        raise ContractError(f"mask indices must lie in [0, {subject.n_nodes})")
    grid = np.ix_(idx, idx)
    return replace(subject, adj_f=subject.adj_f[grid], adj_s=subject.adj_s[grid],
                   feat_f=subject.feat_f[idx], feat_s=subject.feat_s[idx])


def induce_dataset(dataset: Dataset, mask) -> Dataset:
    return Dataset(tuple(induce_subgraph(s, mask) for s in dataset.subjects), dataset.n_classes)


# ------------------------------------------------------------------ atlas

@dataclass(frozen=True)
class AtlasMaskLibrary:
    names: tuple
    masks: tuple
    n_nodes: int = field(default=0)

    def __post_init__(self):
        names = tuple(self.names)
        masks = tuple(tuple(sorted(set(int(i) for i in m))) for m in self.masks)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "masks", masks)
        if not names or names[0] != "all":
            raise ConfigError("atlas mask 0 must be named 'all'")
        if len(names) != len(masks) or len(set(names)) != len(names):
            raise ConfigError("atlas mask names must be unique and match the mask list")
        n = self.n_nodes or len(masks[0])
        object.__setattr__(self, "n_nodes", n)
        if masks[0] != tuple(range(n)):
            raise ConfigError("atlas mask 'all' must cover every node")
        for name, m in zip(names[1:], masks[1:]):
            if not m:
                raise ConfigError(f"atlas mask {name!r} is empty")
            if m[0] < 0 or m[-1] >= n:
                raise ConfigError(f"atlas mask {name!r} has indices outside [0, {n})")
            if len(m) >= n:
                raise ConfigError(f"atlas mask {name!r} must be a strict subset")

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name) -> tuple:
        return self.masks[self.names.index(name)]

    def to_json(self) -> dict:
        return {n: list(m) for n, m in zip(self.names, self.masks)}

    @classmethod
    def from_mapping(cls, mapping: dict, n_nodes: int = 0) -> "AtlasMaskLibrary":
        if "all" not in mapping:
            raise ConfigError("atlas JSON must contain an 'all' mask")
        names = ["all"] + [k for k in mapping if k != "all"]
        return cls(tuple(names), tuple(mapping[k] for k in names), n_nodes)

    @classmethod
    def only_all(cls, n_nodes: int) -> "AtlasMaskLibrary":
        return cls(("all",), (tuple(range(n_nodes)),), n_nodes)


def load_atlas(path=None, n_nodes: int = 0) -> AtlasMaskLibrary:
    if path is None:
        text = resources.files("brainmap.assets").joinpath("aal90_subsystems.json").read_text()
    else:
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"atlas file not found: {path}")
        text = path.read_text()
    return AtlasMaskLibrary.from_mapping(json.loads(text), n_nodes)


def default_atlas() -> AtlasMaskLibrary:
    return load_atlas()


# ------------------------------------------------------------------ matrix IO

def write_matrix(path, m: np.ndarray) -> None:
    path = Path(path)
    m = np.asarray(m, dtype=np.float64)
    if path.suffix == ".bin":
        rows, cols = m.shape
        path.write_bytes(MAGIC + struct.pack("<II", rows, cols) + m.astype("<f8").tobytes())
    else:
        np.savetxt(path, m, delimiter=",", fmt="%.17g")


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"matrix file not found: {path}")
    raw = path.read_bytes()
    if raw.startswith(MAGIC):
        rows, cols = struct.unpack_from("<II", raw, len(MAGIC))
        body = raw[len(MAGIC) + 8:]
        if len(body) != rows * cols * 8:
            raise ShapeMismatchError(f"{path}: header says {rows}x{cols} but payload has {len(body)} bytes")
        return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(rows, cols)
    try:
        m = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ShapeMismatchError(f"{path}: ragged or malformed CSV ({exc})") from exc
    return m


# ------------------------------------------------------------------ datasets

def load_dataset(directory, manifest="manifest.json", n_classes=None, features="auto") -> Dataset:
    """Load and validate a dataset described by a JSON manifest.

    ``features`` selects node features: ``"adjacency-row"`` ignores feature
    files, ``"file"`` requires them, ``"auto"`` uses them when listed.
    """
    if features not in FEATURE_POLICIES:
        raise ConfigError(f"features must be one of {FEATURE_POLICIES}, got {features!r}")
    directory = Path(directory)
    mpath = Path(manifest) if Path(manifest).is_absolute() else directory / manifest
    if not mpath.exists():
        raise MissingFileError(f"manifest not found: {mpath}")
    entries = json.loads(mpath.read_text())
    if not isinstance(entries, list):
        raise DataError("manifest must be a JSON array")
    subjects = []
    for e in entries:
        label = e.get("label")
        if not isinstance(label, int) or isinstance(label, bool) or label < 0:
            raise LabelRangeError(f"subject {e.get('id')}: label {label!r} is not a non-negative integer")
        adj_f = read_matrix(directory / e["adj_f"])
        adj_s = read_matrix(directory / e["adj_s"])
        feat_f = feat_s = None
        if features != "adjacency-row" and "feat_f" in e:
            feat_f = read_matrix(directory / e["feat_f"])
            feat_s = read_matrix(directory / e["feat_s"])
        elif features == "file":
            raise MissingFileError(f"subject {e.get('id')}: features='file' but no feature paths listed")
        subjects.append(make_subject(e["id"], adj_f, adj_s, label, feat_f, feat_s))
    if n_classes is None:
        n_classes = max(s.label for s in subjects) + 1
    return Dataset(tuple(subjects), int(n_classes))


def save_dataset(dataset: Dataset, directory, fmt: str = "csv") -> Path:
    """Write matrices plus ``manifest.json``; feature files only when non-default."""
    if fmt not in ("csv", "bin"):
        raise ConfigError(f"format must be 'csv' or 'bin', got {fmt!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset.subjects:
        entry = {"id": s.id, "label": int(s.label)}
        for key in ("adj_f", "adj_s"):
            name = f"{s.id}_{key}.{fmt}"
            write_matrix(directory / name, getattr(s, key))
            entry[key] = name
        if not (np.array_equal(s.feat_f, s.adj_f) and np.array_equal(s.feat_s, s.adj_s)):
            for key in ("feat_f", "feat_s"):
                name = f"{s.id}_{key}.{fmt}"
                write_matrix(directory / name, getattr(s, key))
                entry[key] = name
        entries.append(entry)
    path = directory / "manifest.json"
    path.write_text(json.dumps(entries, indent=1) + "\n")
    return path


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def content_hash(directory, manifest="manifest.json") -> str:
    """sha256 over the manifest and every file it references."""
    directory = Path(directory)
    mpath = directory / manifest
    h = hashlib.sha256(mpath.read_bytes())
    for e in json.loads(mpath.read_text()):
        for key in ("adj_f", "adj_s", "feat_f", "feat_s"):
            if key in e:
                h.update((directory / e[key]).read_bytes())
    return h.hexdigest()
