"""Command-line entry point: gen, filter, train, eval, bench, sweep.

Every command writes a JSON report (resolved config, seed, version, input
hashes, results) plus an aligned text table into ``--out`` and prints the
table. Failures print a JSON error object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .atlas_filter import filter_subgraphs
from .bench import bench_csv_rows, run_bench
from .config import PRESETS, RunConfig, dump_config, load_config, with_overrides
from .datagen import export, generate
from .errors import BrainMapError, ConfigError, DataError, NumericalError
from .graph import Dataset, content_hash, default_atlas, file_hash, load_atlas, load_dataset
from .model import load_checkpoint, save_checkpoint
from .sweep import SWEEP_AXES, run_sweep
from .train import cross_validate, evaluate, model_inputs, region_importance

EXIT_CODES = {ConfigError: 2, DataError: 3, NumericalError: 4}


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def format_table(rows: list, columns=None) -> str:
    """Aligned plain-text table; floats print with 4 decimals."""
    if not rows:
        return "(no rows)"
    columns = columns or list(rows[0])

    def cell(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return "-" if v is None else str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body)
    return "\n".join(lines)


def write_csv(path: Path, rows: list):
    cols = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


class Context:
    def __init__(self, args):
        self.args = args
        cfg = load_config(args.config, args.preset)
        if args.seed is not None:
            cfg = with_overrides(cfg, seed=args.seed, gen={"seed": args.seed})
        self.cfg: RunConfig = cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {}

    def dataset(self, required=True) -> Dataset | None:
        if self.args.data is None:
            if required:
                raise DataError("--data is required for this command")
            return None
        dataset = load_dataset(self.args.data, features=self.cfg.features)
        self.inputs["data"] = content_hash(self.args.data)
        return dataset

    def atlas(self):
        if getattr(self.args, "atlas", None):
            atlas = load_atlas(self.args.atlas)
            self.inputs["atlas"] = file_hash(self.args.atlas)
            return atlas
        return default_atlas()

    def report(self, command: str, result: dict, text: str, name: str | None = None):
        doc = {"command": command, "version": version_string(), "seed": self.cfg.seed,
               "config": self.cfg.to_json(), "inputs": self.inputs, "result": result}
        name = name or command
        (self.out / f"{name}.json").write_text(_dump(doc))
        (self.out / f"{name}.txt").write_text(text + "\n")
        if self.args.json:
            sys.stdout.write(_dump(doc))
        else:
            print(text)
        return doc


def cmd_gen(ctx: Context):
    spec = ctx.cfg.gen
    atlas = ctx.atlas()
    dataset, truth = generate(spec, atlas)
    data_dir = ctx.out / "data"
    export(dataset, data_dir, truth, ctx.args.format)
    result = {"data_dir": str(data_dir), "n_subjects": len(dataset), "n_nodes": dataset.n_nodes,
              "n_classes": dataset.n_classes, "ground_truth": truth.to_json(),
              "content_hash": content_hash(data_dir)}
    text = format_table([{"subjects": len(dataset), "nodes": dataset.n_nodes,
                          "classes": dataset.n_classes,
                          "planted": ",".join(truth.planted_masks) or "-",
                          "data": str(data_dir)}])
    ctx.report("gen", result, text)


def cmd_filter(ctx: Context):
    dataset = ctx.dataset()
    atlas = ctx.atlas()
    reports, rows = {}, []
    for mod in ("f", "s"):
        rep, _ = filter_subgraphs(dataset, atlas, mod, ctx.cfg.filter, ctx.cfg.seed)
        reports[mod] = rep.to_json()
        for name, acc in zip(rep.names, rep.acc):
            rows.append({"modality": mod, "mask": name, "acc": acc,
                         "delta": acc - rep.baseline,
                         "selected": "yes" if name in rep.selected else ""})
    text = format_table(rows) + "\n\n" + format_table(
        [{"modality": m, "selected": ",".join(r["selected"]) or "(fallback: all)",
          "n_nodes": len(r["union"])} for m, r in reports.items()])
    ctx.report("filter", {"reports": reports}, text)


def _fold_rows(result):
    rows = []
    for f in result.folds:
        m = f.metrics
        rows.append({"fold": f.fold, "acc": m["acc"], "auc": m["auc"], "nodes_f": m["n_nodes_f"],
                     "nodes_s": m["n_nodes_s"], "epochs": m["epochs_run"],
                     "epoch_time_s": m["epoch_time_s"], "peak_mem_bytes": m["peak_mem_bytes"]})
    s = result.summary()
    rows.append({"fold": "mean", "acc": s["acc_mean"], "auc": s["auc_mean"],
                 "epoch_time_s": s["epoch_time_s"], "peak_mem_bytes": s["peak_mem_bytes"]})
    return rows


def cmd_train(ctx: Context):
    dataset = ctx.dataset()
    atlas = ctx.atlas()
    t0 = time.perf_counter()
    result = cross_validate(dataset, ctx.cfg, atlas)
    ckpts = []
    for f in result.folds:
        path = save_checkpoint(f.model, ctx.out / f"fold{f.fold}.ckpt")
        ckpts.append(path.name)
    metrics = result.metrics_json()
    metrics["wall_time_s"] = time.perf_counter() - t0
    (ctx.out / "metrics.json").write_text(_dump(metrics))
    importance = region_importance(result, atlas)
    (ctx.out / "region_importance.json").write_text(_dump(importance))
    write_csv(ctx.out / "region_importance.csv", importance)
    (ctx.out / "config.toml").write_text(dump_config(ctx.cfg))
    text = format_table(_fold_rows(result)) + "\n\n" + format_table(importance)
    ctx.report("train", {"metrics": metrics, "checkpoints": ckpts,
                         "region_importance": importance,
                         "folds": {str(f.fold): {"test_idx": f.test_idx.tolist()}
                                   for f in result.folds}}, text)


def cmd_eval(ctx: Context):
    dataset = ctx.dataset()
    path = Path(ctx.args.checkpoint)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    ctx.inputs["checkpoint"] = file_hash(path)
    model = load_checkpoint(path)
    idx = np.arange(len(dataset))
    if ctx.args.subjects:
        idx = np.array([int(i) for i in ctx.args.subjects.split(",")], dtype=np.intp)
    f, s = model_inputs(dataset, model.union_f, model.union_s, model.fusion_mode)
    metrics = evaluate(model, f[idx], s[idx], dataset.labels[idx])
    text = format_table([{"subjects": metrics["n"], "acc": metrics["acc"], "auc": metrics["auc"]}])
    ctx.report("eval", {"checkpoint": path.name, "metrics": metrics}, text)


def cmd_bench(ctx: Context):
    dataset = ctx.dataset(required=False)
    rep = run_bench(ctx.cfg, dataset)
    rows = bench_csv_rows(rep)
    write_csv(ctx.out / "bench.csv", rows)
    comp = rep["epoch_comparison"]
    extra = f"\ncna log-log slope: {rep['cna_loglog_slope']:.3f}"
    if comp:
        extra += f"\nfiltered/full epoch time ratio: {comp['ratio']:.3f}"
    ctx.report("bench", rep, format_table(rows, ["kind", "stage", "n_nodes", "time_s",
                                                 "peak_mem_bytes"]) + extra)


def cmd_sweep(ctx: Context):
    dataset = ctx.dataset(required=False)
    if dataset is None:
        dataset, _ = generate(ctx.cfg.gen, ctx.atlas())
    rows = run_sweep(dataset, ctx.cfg, ctx.args.axis, ctx.atlas())
    write_csv(ctx.out / "sweep.csv", rows)
    ctx.report("sweep", {"axis": ctx.args.axis, "rows": rows}, format_table(rows))


COMMANDS = {"gen": cmd_gen, "filter": cmd_filter, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--preset", default="default", choices=sorted(PRESETS))
    common.add_argument("--seed", type=int, help="override run and generator seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--data", help="dataset directory with manifest.json")
    common.add_argument("--atlas", help="atlas mask JSON (default: shipped 90-node atlas)")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap; use 1 for bit-reproducible runs")
    common.add_argument("--json", action="store_true", help="print the JSON report instead of text")

    p = argparse.ArgumentParser(prog="brainmap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--format", choices=("csv", "bin"), default="csv")
    sub.add_parser("filter", parents=[common], help="score atlas masks and select nodes")
    sub.add_parser("train", parents=[common], help="k-fold training with checkpoints")
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--subjects", help="comma-separated subject indices (default: all)")
    sub.add_parser("bench", parents=[common], help="timing and memory benchmarks")
    s = sub.add_parser("sweep", parents=[common], help="hyperparameter sweep")
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    return p


def _error_doc(exc: BaseException) -> dict:
    err = {"code": getattr(exc, "code", "error"), "type": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "keys", None):
        err["keys"] = exc.keys
    if getattr(exc, "diagnostics", None):
        err["diagnostics"] = exc.diagnostics
    return {"error": err}


def _exit_code(exc: BaseException) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        limit = threadpool_limits(limits=args.threads)
    else:
        limit = nullcontext()
    try:
        with limit:
            COMMANDS[args.command](Context(args))
    except (BrainMapError, OSError) as exc:
        sys.stderr.write(json.dumps(_error_doc(exc), sort_keys=True) + "\n")
        return _exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
