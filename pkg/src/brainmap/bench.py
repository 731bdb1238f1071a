"""Per-stage timing and memory benchmarks.

Two measurements:

* stage timings over a node-count grid on random inputs (cross-node
  attention, gated interaction, graph build, positional encodings), with the log-log slope of attention time vs N';
* per-epoch training time on generated data with a reduced node set
  against the full node set.

Times are the minimum over repeats; memory is the tracemalloc high-water
mark of one call.
"""

from __future__ import annotations

import time
import tracemalloc

import numpy as np

from .config import RunConfig, with_overrides
from .datagen import generate
from .fusion import cross_node_attention, gated_interaction, init_cna, init_giac
from .model import build_graph, laplacian_pe
from .numerics import tensor as T
from .numerics.rng import RngStream
from .train import fit_model, model_inputs

MEMORY_METHOD = "tracemalloc high-water mark"


def _best_time(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return float(best)


def _peak(fn) -> int:
    tracemalloc.start()
    try:
        fn()
        return int(tracemalloc.get_traced_memory()[1])
    finally:
        tracemalloc.stop()


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def stage_timings(cfg: RunConfig, grid=None) -> list:
    """Rows ``{stage, n_nodes, time_s, peak_mem_bytes}`` for each N' in ``grid``."""
    b = cfg.bench
    grid = tuple(grid or b.grid)
    gen = RngStream(cfg.seed).child(90).generator()
    d = b.feat_dim
    cna = init_cna(d, cfg.fusion.cna_dim, gen)
    giac = init_giac(d, gen, cfg.fusion.giac_hidden)
    rows = []
    for n in grid:
        f = gen.standard_normal((b.batch, n, d))
        s = gen.standard_normal((b.batch, n, d))
        with T.no_grad():
            g, _ = cross_node_attention(f, s, cna)
            z, _ = gated_interaction(f, g, giac)
        graph = build_graph(z.value)
        stages = {
            "cna": lambda: cross_node_attention(f, s, cna),
            "giac": lambda: gated_interaction(f, g, giac),
            "graph": lambda: build_graph(z.value),
        }
        if cfg.gcn.pe_dim and cfg.gcn.pe_dim < n:
            stages["pe"] = lambda: laplacian_pe(graph.norm_adj, cfg.gcn.pe_dim)
        for name, fn in stages.items():
            def run(fn=fn):
                with T.no_grad():
                    fn()
            rows.append({"stage": name, "n_nodes": int(n),
                         "time_s": _best_time(run, b.repeats), "peak_mem_bytes": _peak(run)})
    return rows


def epoch_comparison(cfg: RunConfig, dataset=None) -> dict:
    """Fastest per-epoch training time on ``filtered_nodes`` vs ``full_nodes`` nodes."""
    b = cfg.bench
    if dataset is None:
        dataset, _ = generate(cfg.gen)
    run_cfg = with_overrides(cfg, gcn={"epochs": b.epochs, "patience": b.epochs + 1,
                                       "val_fraction": 0.0})
    out = {}
    for key, n in (("filtered", b.filtered_nodes), ("full", min(b.full_nodes, dataset.n_nodes))):
        nodes = tuple(range(n))
        f, s = model_inputs(dataset, nodes, nodes, run_cfg.fusion.mode)
        _, hist = fit_model(f, s, dataset.labels, run_cfg, RngStream(cfg.seed).child(91),
                            nodes, nodes, dataset.n_classes, measure_memory=True)
        out[key] = {"n_nodes": n, "epoch_time_s": float(np.min(hist["epoch_times"])),
                    "peak_mem_bytes": hist["peak_mem_bytes"]}
    out["ratio"] = out["filtered"]["epoch_time_s"] / out["full"]["epoch_time_s"]
    return out


def run_bench(cfg: RunConfig, dataset=None, grid=None) -> dict:
    rows = stage_timings(cfg, grid)
    cna = [r for r in rows if r["stage"] == "cna"]
    slope = loglog_slope([r["n_nodes"] for r in cna], [r["time_s"] for r in cna])
    comp = epoch_comparison(cfg, dataset) if cfg.bench.epochs > 0 else None
    return {"stages": rows, "cna_loglog_slope": slope, "epoch_comparison": comp,
            "memory_method": MEMORY_METHOD}


def bench_csv_rows(report: dict) -> list:
    rows = [dict(r, kind="stage") for r in report["stages"]]
    comp = report.get("epoch_comparison")
    if comp:
        for key in ("filtered", "full"):
            rows.append({"kind": "epoch", "stage": key, "n_nodes": comp[key]["n_nodes"],
                         "time_s": comp[key]["epoch_time_s"],
                         "peak_mem_bytes": comp[key]["peak_mem_bytes"]})
    return rows
