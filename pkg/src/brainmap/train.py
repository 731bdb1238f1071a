"""Stratified k-fold training and evaluation of the fusion + GCN classifier.

Each fold filters the atlas masks on its own training subjects, fits the
distiller on training rows only, trains with Adam on cross-entropy with
early stopping on a held-out slice of the training subjects, and reports
test ACC / macro AUC. Every random draw comes from a named substream of
the run seed, so a fold's result does not depend on which folds ran before.
"""

from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from .atlas_filter import MODALITY_CODE, FilterReport, filter_subgraphs, stratified_split
from .config import RunConfig
from .distill import fit_distiller, refresh_prototypes
from .errors import ContractError, DivergenceError
from .graph import AtlasMaskLibrary, Dataset, default_atlas
from .metrics import accuracy, confusion, macro_auc
from .model import TrainedModel, forward, fuse, init_model
from .numerics import tensor as T
from .numerics.optim import Adam
from .numerics.rng import RngStream

TIMING_KEYS = ("epoch_time_s", "epoch_times_s", "peak_mem_bytes", "wall_time_s", "memory_method")


@dataclass
class FoldResult:
    fold: int
    model: TrainedModel
    train_idx: np.ndarray
    test_idx: np.ndarray
    metrics: dict
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    epoch_times: list = field(default_factory=list)
    peak_mem_bytes: int = 0
    attention_mass: np.ndarray | None = None


@dataclass
class CVResult:
    folds: list
    config: RunConfig

    def summary(self) -> dict:
        accs = [f.metrics["acc"] for f in self.folds]
        aucs = [f.metrics["auc"] for f in self.folds if f.metrics["auc"] is not None]
        times = [f.metrics["epoch_time_s"] for f in self.folds]
        return {
            "acc_mean": float(np.mean(accs)),
            "acc_std": float(np.std(accs)),
            "auc_mean": float(np.mean(aucs)) if aucs else None,
            "auc_std": float(np.std(aucs)) if aucs else None,
            "epoch_time_s": float(np.mean(times)),
            "peak_mem_bytes": int(max(f.peak_mem_bytes for f in self.folds)),
        }

    def metrics_json(self) -> dict:
        return {"folds": {str(f.fold): f.metrics for f in self.folds}, "summary": self.summary()}


def stratified_folds(labels, k: int, gen: np.random.Generator) -> list:
    """Test-index arrays for ``k`` folds; each class is dealt round-robin."""
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    if k < 2 or (counts[counts > 0] < k).any():
        raise ContractError(f"every class needs at least k={k} subjects")
    buckets = [[] for _ in range(k)]
    offset = 0
    for c in np.unique(labels):
        idx = gen.permutation(np.flatnonzero(labels == c))
        for j, i in enumerate(idx):
            buckets[(j + offset) % k].append(int(i))
        offset += len(idx)
    return [np.sort(np.array(b, dtype=np.intp)) for b in buckets]


def fold_stream(cfg: RunConfig, fold: int) -> RngStream:
    return RngStream(cfg.seed).child(20, fold)


def select_nodes(dataset: Dataset, atlas: AtlasMaskLibrary, cfg: RunConfig, train_idx,
                 stream: RngStream):
    """``(union_f, union_s, reports)``; whole brain when filtering is off."""
    full = tuple(range(dataset.n_nodes))
    if not cfg.agsf:
        return full, full, {}
    reports = {}
    unions = {}
    for mod in ("f", "s"):
        rep, _ = filter_subgraphs(dataset, atlas, mod, cfg.filter, cfg.seed, train_idx,
                                  stream.child(0, MODALITY_CODE[mod]))
        reports[mod] = rep.to_json()
        unions[mod] = tuple(rep.union)
    return unions["f"], unions["s"], reports


def model_inputs(dataset: Dataset, union_f, union_s, fusion_mode: str):
    """Stacked (M, Nf, D) functional and structural inputs for the model."""
    f = dataset.features("f")[:, list(union_f), :]
    s_nodes = union_f if fusion_mode == "product" else union_s
    s = dataset.features("s")[:, list(s_nodes), :]
    return f, s


def _node_rows(z: np.ndarray, labels: np.ndarray):
    b, n, p = z.shape
    return z.reshape(b * n, p), np.repeat(labels, n)


def _fused_rows(model, f, s, labels, batch):
    parts = []
    with T.no_grad():
        for a in range(0, len(f), batch):
            z, _ = fuse(model, f[a:a + batch], s[a:a + batch])
            parts.append(z.value)
    return _node_rows(np.concatenate(parts), labels)


def predict_scores(model: TrainedModel, f, s, batch: int = 64):
    """Softmax probabilities (M, C) and per-structural-node attention mass."""
    probs, mass = [], None
    with T.no_grad():
        for a in range(0, len(f), batch):
            tr = forward(model, f[a:a + batch], s[a:a + batch])
            probs.append(T.softmax_array(tr.logits.value, axis=-1))
            if tr.attention is not None:
                m = tr.attention.value.mean(axis=1).sum(axis=0)
                mass = m if mass is None else mass + m
    if mass is not None:
        mass = mass / len(f)
    return np.concatenate(probs), mass


def evaluate(model: TrainedModel, f, s, labels) -> dict:
    """ACC, macro AUC (None for a single-class set) and confusion matrix."""
    labels = np.asarray(labels)
    probs, _ = predict_scores(model, f, s)
    pred = np.argmax(probs, axis=1)
    return {"acc": accuracy(pred, labels),
            "auc": macro_auc(probs, labels, model.n_classes),
            "confusion": confusion(pred, labels, model.n_classes).tolist(),
            "n": int(len(labels))}


def _loss(model, f, s, labels, train, gen, rate):
    tr = forward(model, f, s, labels, train=train, gen=gen, masking_rate=rate)
    return T.cross_entropy(tr.logits, labels)


def _val_loss(model, f, s, labels, batch):
    if len(labels) == 0:
        return float("nan")
    total = 0.0
    with T.no_grad():
        for a in range(0, len(labels), batch):
            sl = slice(a, a + batch)
            total += _loss(model, f[sl], s[sl], labels[sl], False, None, 0.0).value * len(labels[sl])
    return float(total / len(labels))


def fit_model(f, s, labels, cfg: RunConfig, stream: RngStream, union_f, union_s,
              n_classes: int, measure_memory: bool = True, log=None):
    """Train one model on the given subjects; returns ``(model, history)``.

    A stratified ``val_fraction`` slice of the subjects drives early
    stopping; the parameters with the lowest validation loss are kept.
    """
    gcfg = cfg.gcn
    labels = np.asarray(labels, dtype=np.intp)
    mode = cfg.fusion.mode
    feat_dim = f.shape[2]
    fused = 5 * feat_dim if mode == "agif" else feat_dim
    model = init_model(cfg.model_config(), feat_dim, n_classes, union_f, union_s,
                       fused - 2 * cfg.distill.k_remove, stream.child(1).generator(),
                       cfg.seed, mode)

    if gcfg.val_fraction > 0 and gcfg.epochs > 0:
        fit_idx, val_idx = stratified_split(labels, gcfg.val_fraction, stream.child(2).generator())
    else:
        fit_idx, val_idx = np.arange(len(labels)), np.arange(0)
    ff, sf, yf = f[fit_idx], s[fit_idx], labels[fit_idx]
    fv, sv, yv = f[val_idx], s[val_idx], labels[val_idx]

    rows, row_labels = _fused_rows(model, ff, sf, yf, gcfg.batch_size)
    model.distill = fit_distiller(rows, row_labels, cfg.distill, n_classes)

    opt = Adam(model.trainable(), lr=gcfg.lr, weight_decay=gcfg.weight_decay)
    history = {"train_loss": [], "val_loss": [], "epoch_times": [], "peak_mem_bytes": 0,
               "best_epoch": 0, "epochs_run": 0}
    best_val = _val_loss(model, fv, sv, yv, gcfg.batch_size)
    best = model.snapshot()
    stale = 0
    for epoch in range(1, gcfg.epochs + 1):
        t0 = time.perf_counter()
        gen = stream.child(3, epoch).generator()
        if epoch > 1:
            rows, row_labels = _fused_rows(model, ff, sf, yf, gcfg.batch_size)
            model.distill = refresh_prototypes(model.distill, rows, row_labels)
        order = gen.permutation(len(yf))
        total = 0.0
        for step, a in enumerate(range(0, len(order), gcfg.batch_size)):
            idx = order[a:a + gcfg.batch_size]
            track = measure_memory and epoch == 1 and step == 0
            if track:
                tracemalloc.start()
            opt.zero_grad()
            loss = _loss(model, ff[idx], sf[idx], yf[idx], True, gen, cfg.distill.masking_rate)
            if not np.isfinite(loss.value):
                raise DivergenceError("training loss is not finite",
                                      {"epoch": epoch, "step": step, "loss": float(loss.value)})
            T.backward(loss)
            opt.step()
            if track:
                history["peak_mem_bytes"] = int(tracemalloc.get_traced_memory()[1])
                tracemalloc.stop()
            total += float(loss.value) * len(idx)
        val = _val_loss(model, fv, sv, yv, gcfg.batch_size)
        history["train_loss"].append(total / len(yf))
        history["val_loss"].append(val)
        history["epoch_times"].append(time.perf_counter() - t0)
        history["epochs_run"] = epoch
        if log:
            log(f"epoch {epoch} train {total / len(yf):.4f} val {val:.4f}")
        if len(yv) == 0 or val < best_val:
            best_val, best, stale = val, model.snapshot(), 0
            history["best_epoch"] = epoch
        else:
            stale += 1
            if stale >= gcfg.patience:
                break
    model.restore(best)
    # prototypes follow the kept parameters
    rows, row_labels = _fused_rows(model, ff, sf, yf, gcfg.batch_size)
    model.distill = refresh_prototypes(model.distill, rows, row_labels)
    return model, history


def run_fold(dataset: Dataset, cfg: RunConfig, fold: int, train_idx, test_idx,
             atlas: AtlasMaskLibrary | None = None, selection=None,
             measure_memory: bool = True, log=None) -> FoldResult:
    atlas = atlas or default_atlas()
    stream = fold_stream(cfg, fold)
    if selection is None:
        selection = select_nodes(dataset, atlas, cfg, train_idx, stream)
    union_f, union_s, reports = selection
    f, s = model_inputs(dataset, union_f, union_s, cfg.fusion.mode)
    labels = dataset.labels
    model, hist = fit_model(f[train_idx], s[train_idx], labels[train_idx], cfg, stream,
                            union_f, union_s, dataset.n_classes, measure_memory, log)
    model.filter_reports = reports
    probs, mass = predict_scores(model, f[test_idx], s[test_idx])
    pred = np.argmax(probs, axis=1)
    y = labels[test_idx]
    times = hist["epoch_times"]
    metrics = {
        "acc": accuracy(pred, y),
        "auc": macro_auc(probs, y, dataset.n_classes),
        "confusion": confusion(pred, y, dataset.n_classes).tolist(),
        "n_test": int(len(y)),
        "n_nodes_f": len(union_f),
        "n_nodes_s": len(union_s),
        "epochs_run": hist["epochs_run"],
        "best_epoch": hist["best_epoch"],
        "train_loss": hist["train_loss"],
        "val_loss": hist["val_loss"],
        "epoch_time_s": float(np.mean(times)) if times else 0.0,
        "epoch_times_s": times,
        "peak_mem_bytes": hist["peak_mem_bytes"],
        "memory_method": "tracemalloc high-water mark over one training step",
    }
    return FoldResult(fold, model, np.asarray(train_idx), np.asarray(test_idx), metrics,
                      hist["train_loss"], hist["val_loss"], times, hist["peak_mem_bytes"], mass)


def fold_splits(dataset: Dataset, cfg: RunConfig):
    tests = stratified_folds(dataset.labels, cfg.folds, RngStream(cfg.seed).child(10).generator())
    every = np.arange(len(dataset))
    return [(np.setdiff1d(every, t), t) for t in tests]


def cross_validate(dataset: Dataset, cfg: RunConfig, atlas: AtlasMaskLibrary | None = None,
                   selections: dict | None = None, measure_memory: bool = True,
                   log=None) -> CVResult:
    """Run every fold. ``selections`` maps fold -> cached node selection and
    is filled in as folds run, so ablations can reuse the filtering work."""
    atlas = atlas or default_atlas()
    results = []
    for k, (train_idx, test_idx) in enumerate(fold_splits(dataset, cfg)):
        sel = None if selections is None else selections.get(k)
        if sel is None:
            sel = select_nodes(dataset, atlas, cfg, train_idx, fold_stream(cfg, k))
            if selections is not None and cfg.agsf:
                selections[k] = sel
        results.append(run_fold(dataset, cfg, k, train_idx, test_idx, atlas, sel,
                                measure_memory, log))
    return CVResult(results, cfg)


def strip_timing(obj):
    """Copy of a report with timing/memory fields removed, for comparisons."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def region_importance(result: CVResult, atlas: AtlasMaskLibrary) -> list:
    """Masks ranked by mean (ACC_k - baseline) across folds' filter reports,
    with the mean attention mass their structural nodes received."""
    rows = []
    for k, name in enumerate(atlas.names):
        deltas, masses = [], []
        for fr in result.folds:
            reps = fr.model.filter_reports
            for mod in ("f", "s"):
                if mod in reps:
                    rep = FilterReport.from_json(reps[mod])
                    deltas.append(rep.acc[k] - rep.baseline)
            if fr.attention_mass is not None:
                pos = {n: i for i, n in enumerate(fr.model.union_s)}
                hit = [pos[n] for n in atlas.masks[k] if n in pos]
                masses.append(float(fr.attention_mass[hit].sum()) if hit else 0.0)
        rows.append({"mask": name,
                     "acc_delta": float(np.mean(deltas)) if deltas else None,
                     "attention_mass": float(np.mean(masses)) if masses else None})
    rows[1:] = sorted(rows[1:], key=lambda r: (-(r["acc_delta"] or 0.0), r["mask"]))
    return rows
