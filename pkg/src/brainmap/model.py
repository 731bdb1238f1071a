"""Cosine graph construction, Laplacian positional encodings and the
fusion -> distillation -> GCN classifier, plus its checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"BMAPCKPT" | u32 version | u64 header bytes | JSON header | f64 blobs

The header lists every blob by name, shape and byte offset.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distill import DistillState, keep_mask
from .errors import ConfigError, ContractError, DataError
from .fusion import (
    CnaParams,
    GiacParams,
    ProductParams,
    fuse_subject,
    init_cna,
    init_giac,
    init_product,
    product_fusion,
)
from .numerics import tensor as T

CHECKPOINT_MAGIC = b"BMAPCKPT"
CHECKPOINT_VERSION = 1
FUSION_MODES = ("agif", "product")


@dataclass(frozen=True)
class GcnConfig:
    n_layers: int = 2
    hidden_width: int = 128
    dropout: float = 0.1
    pe_dim: int = 8
    pe_position: str = "before"
    readout: str = "mean"
    sparsify_top_d: int = 0
    lr: float = 0.003
    weight_decay: float = 0.0005
    batch_size: int = 32
    epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.n_layers < 0 or self.hidden_width < 1 or self.pe_dim < 0 or self.batch_size < 1:
            raise ConfigError("n_layers, pe_dim must be >= 0; hidden_width, batch_size >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.pe_position not in ("before", "after"):
            raise ConfigError("pe_position must be 'before' or 'after'")
        if self.readout not in ("mean", "max"):
            raise ConfigError("readout must be 'mean' or 'max'")
        if self.lr < 0 or self.weight_decay < 0 or self.epochs < 0 or self.patience < 1:
            raise ConfigError("lr, weight_decay, epochs must be >= 0 and patience >= 1")


# ------------------------------------------------------------------ graph

@dataclass(frozen=True)
class SubjectGraph:
    adj: np.ndarray
    norm_adj: np.ndarray
    pe: np.ndarray | None = None


def cosine_adjacency(z, top_d: int = 0):
    """Row-cosine similarity with unit diagonal; zero rows get similarity 0.

    ``top_d > 0`` keeps only each node's ``top_d`` strongest off-diagonal
    links (symmetrised by union).
    """
    z = T.as_tensor(z)
    zero = np.sum(z.value * z.value, axis=-1, keepdims=True) == 0
    unit = z / T.sqrt(T.tsum(z * z, axis=-1, keepdims=True) + zero)
    sim = unit @ T.transpose(unit)
    n = z.shape[-2]
    eye = np.eye(n)
    keep = 1.0 - eye
    if top_d and top_d < n - 1:
        mag = np.where(eye.astype(bool), -np.inf, np.abs(sim.value))
        idx = np.argsort(-mag, axis=-1, kind="stable")[..., :top_d]
        sel = np.zeros(mag.shape, dtype=bool)
        np.put_along_axis(sel, idx, True, axis=-1)
        sel = sel | np.swapaxes(sel, -1, -2)
        keep = keep * sel
    return sim * keep + eye


def normalize_adjacency(adj):
    """``D^-1/2 A D^-1/2`` with degrees taken as absolute row sums."""
    adj = T.as_tensor(adj)
    deg = T.tsum(T.absolute(adj), axis=-1, keepdims=True)
    inv = T.power(deg, -0.5)
    return adj * inv * T.transpose(inv)


def build_graph(z, pe_dim: int = 0, top_d: int = 0) -> SubjectGraph:
    adj = cosine_adjacency(z, top_d)
    norm = normalize_adjacency(adj)
    pe = laplacian_pe(norm.value, pe_dim) if pe_dim else None
    return SubjectGraph(adj.value, norm.value, pe)


def laplacian_pe(norm_adj: np.ndarray, pe_dim: int) -> np.ndarray:
    """Eigenvectors of ``I - norm_adj`` for the ``pe_dim`` smallest
    eigenvalues after the first, each signed so its largest-magnitude entry
    is positive. Works on a leading batch axis.
    """
    norm_adj = np.asarray(norm_adj, dtype=np.float64)
    n = norm_adj.shape[-1]
    if pe_dim >= n:
        raise ConfigError(f"pe_dim={pe_dim} must be smaller than the node count {n}")
    lap = np.eye(n) - norm_adj
    lap = (lap + np.swapaxes(lap, -1, -2)) / 2.0
    _, vecs = np.linalg.eigh(lap)
    vecs = vecs[..., 1:pe_dim + 1]
    peak = np.take_along_axis(vecs, np.argmax(np.abs(vecs), axis=-2)[..., None, :], axis=-2)
    return vecs * np.where(peak < 0, -1.0, 1.0)


# ------------------------------------------------------------------ model

@dataclass
class TrainedModel:
    config: dict
    fusion_mode: str
    feat_dim: int
    n_classes: int
    union_f: tuple
    union_s: tuple
    params: dict
    distill: DistillState | None = None
    seed: int = 0
    filter_reports: dict = field(default_factory=dict)

    @property
    def cna(self) -> CnaParams:
        p = self.params
        return CnaParams(p["cna.w_q"], p["cna.w_k"], p["cna.w_v"])

    @property
    def giac(self) -> GiacParams:
        p = self.params
        return GiacParams(p["giac.w_g"], p["giac.b_g"], p.get("giac.w_h"), p.get("giac.b_h"))

    @property
    def product(self) -> ProductParams:
        return ProductParams(self.params["prod.w_a"], self.params["prod.w_b"])

    def gcn_config(self) -> GcnConfig:
        return GcnConfig(**self.config["gcn"])

    def trainable(self) -> list:
        return [self.params[k] for k in sorted(self.params)]

    def snapshot(self) -> dict:
        return {k: v.value.copy() for k, v in self.params.items()}

    def restore(self, snap: dict):
        for k, v in snap.items():
            self.params[k].value = v.copy()

    def fused_width(self) -> int:
        return 5 * self.feat_dim if self.fusion_mode == "agif" else self.feat_dim


def _dense(gen, fan_in, fan_out, name):
    bound = 1.0 / np.sqrt(fan_in)
    return (T.parameter(gen.uniform(-bound, bound, size=(fan_in, fan_out)), f"{name}.w"),
            T.parameter(np.zeros(fan_out), f"{name}.b"))


def init_model(config: dict, feat_dim: int, n_classes: int, union_f, union_s,
               distilled_width: int, gen: np.random.Generator, seed: int = 0,
               fusion_mode: str = "agif") -> TrainedModel:
    """Fresh parameters; ``config`` holds ``gcn`` (GcnConfig fields),
    ``cna_dim`` and ``giac_hidden``."""
    if fusion_mode not in FUSION_MODES:
        raise ConfigError(f"fusion mode must be one of {FUSION_MODES}")
    gcfg = GcnConfig(**config["gcn"])
    params = {}
    if fusion_mode == "agif":
        params.update(init_cna(feat_dim, config["cna_dim"], gen).tensors())
        params.update(init_giac(feat_dim, gen, config.get("giac_hidden", 0)).tensors())
    else:
        params.update(init_product(feat_dim, gen).tensors())
    width = distilled_width + (gcfg.pe_dim if gcfg.pe_position == "before" else 0)
    for i in range(gcfg.n_layers):
        w, b = _dense(gen, width, gcfg.hidden_width, f"lin{i}")
        params[w.name], params[b.name] = w, b
        width = gcfg.hidden_width
    if gcfg.pe_position == "after":
        width += gcfg.pe_dim
    w, b = _dense(gen, width, gcfg.hidden_width, "gcn")
    params[w.name], params[b.name] = w, b
    w, b = _dense(gen, gcfg.hidden_width, n_classes, "out")
    params[w.name], params[b.name] = w, b
    return TrainedModel(dict(config), fusion_mode, feat_dim, n_classes,
                        tuple(union_f), tuple(union_s), params, None, seed)


def fuse(model: TrainedModel, f, s):
    """Fused node embeddings (B, Nf, P) and attention (or None)."""
    if model.fusion_mode == "agif":
        return fuse_subject(f, s, model.cna, model.giac)
    return product_fusion(f, s, model.product), None


@dataclass
class ForwardTrace:
    logits: T.Tensor
    z: T.Tensor
    z_distilled: T.Tensor
    norm_adj: np.ndarray
    pe: np.ndarray | None
    attention: T.Tensor | None
    nodes: T.Tensor


def forward(model: TrainedModel, f, s, labels=None, train: bool = False,
            gen: np.random.Generator | None = None, pe=None, masking_rate: float = 0.0,
            dropout: bool | None = None) -> ForwardTrace:
    """Batch forward pass; ``f`` is (B, Nf, D) and ``s`` is (B, Ns, D).

    Masking needs ``train=True``, labels and a generator; ``pe`` may be
    supplied to hold positional encodings fixed.
    """
    cfg = model.gcn_config()
    f = np.asarray(f, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if f.ndim == 2:
        f, s = f[None], s[None]
    if f.shape[1] != len(model.union_f) or f.shape[2] != model.feat_dim:
        raise ContractError(f"functional input {f.shape[1:]} does not match the model's "
                            f"{len(model.union_f)} x {model.feat_dim} node set")
    expected_s = len(model.union_f) if model.fusion_mode == "product" else len(model.union_s)
    if s.shape[1] != expected_s or s.shape[2] != model.feat_dim:
        raise ContractError(f"structural input {s.shape[1:]} does not match the model's node set")
    if model.distill is None:
        raise ContractError("model has no fitted distiller")

    z, attn = fuse(model, f, s)
    z_cf = T.take(z, list(model.distill.kept_columns), axis=-1)
    if train and masking_rate > 0.0:
        if labels is None or gen is None:
            raise ContractError("training-mode masking needs labels and a generator")
        z_cf = z_cf * keep_mask(z_cf.value, labels, model.distill, masking_rate, gen)

    adj = cosine_adjacency(z_cf, cfg.sparsify_top_d)
    norm_adj = normalize_adjacency(adj)
    if cfg.pe_dim:
        if pe is None:
            pe = laplacian_pe(norm_adj.value, cfg.pe_dim)
        pe = np.broadcast_to(pe, z_cf.shape[:-1] + (cfg.pe_dim,))
    h = z_cf
    if cfg.pe_dim and cfg.pe_position == "before":
        h = T.concat([h, pe], axis=-1)
    p = model.params
    for i in range(cfg.n_layers):
        h = T.relu(h @ p[f"lin{i}.w"] + p[f"lin{i}.b"])
    if cfg.pe_dim and cfg.pe_position == "after":
        h = T.concat([h, pe], axis=-1)
    h = T.relu((norm_adj @ h) @ p["gcn.w"] + p["gcn.b"])
    use_dropout = train if dropout is None else dropout
    if use_dropout and cfg.dropout > 0.0:
        if gen is None:
            raise ContractError("dropout needs a generator")
        keep = (gen.random(h.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        h = h * keep
    pooled = T.mean(h, axis=-2) if cfg.readout == "mean" else T.tmax(h, axis=-2)
    logits = pooled @ p["out.w"] + p["out.b"]
    return ForwardTrace(logits, z, z_cf, norm_adj.value, pe, attn, h)


# ------------------------------------------------------------------ checkpoint

def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def save_checkpoint(model: TrainedModel, path) -> Path:
    blobs = [(k, model.params[k].value) for k in sorted(model.params)]
    if model.distill is not None:
        blobs.append(("distill.prototypes", model.distill.prototypes))
    entries, offset = [], 0
    for name, arr in blobs:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config,
        "fusion_mode": model.fusion_mode,
        "feat_dim": model.feat_dim,
        "n_classes": model.n_classes,
        "union_f": list(model.union_f),
        "union_s": list(model.union_s),
        "seed": model.seed,
        "filter_reports": model.filter_reports,
        "distill": None if model.distill is None else {
            "kept_columns": list(model.distill.kept_columns),
            "n_input_columns": model.distill.n_input_columns,
            "fitted_rows": model.distill.fitted_rows,
        },
        "blobs": entries,
    }
    head = json.dumps(header, sort_keys=True, default=_json_default).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in blobs)
    path = Path(path)
    path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(head)) + head + body)
    return path


def load_checkpoint(path) -> TrainedModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = len(CHECKPOINT_MAGIC) + 12
    header = json.loads(raw[start:start + hlen])
    body = raw[start + hlen:]
    arrays = {}
    for e in header["blobs"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=e["offset"]).astype(np.float64)
        arrays[e["name"]] = arr.reshape(e["shape"])
    protos = arrays.pop("distill.prototypes", None)
    params = {k: T.parameter(v, k) for k, v in arrays.items()}
    d = header["distill"]
    distill = None if d is None else DistillState(tuple(d["kept_columns"]), protos,
                                                  d["n_input_columns"], d["fitted_rows"])
    return TrainedModel(header["config"], header["fusion_mode"], header["feat_dim"],
                        header["n_classes"], tuple(header["union_f"]), tuple(header["union_s"]),
                        params, distill, header["seed"], header["filter_reports"])


def gcn_config_dict(cfg: GcnConfig) -> dict:
    return asdict(cfg)
