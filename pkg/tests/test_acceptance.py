"""End-to-end acceptance checks on the default synthetic benchmark.

Slow (roughly 20 minutes on one core). Each check records a PASS/FAIL line
that pytest prints in an "acceptance criteria" section at the end.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

from brainmap.atlas_filter import FilterConfig, filter_subgraphs
from brainmap.bench import run_bench
from brainmap.cli import main
from brainmap.config import RunConfig, with_overrides
from brainmap.datagen import GenSpec, generate
from brainmap.graph import default_atlas
from brainmap.train import cross_validate, strip_timing

pytestmark = pytest.mark.slow

TESTS = Path(__file__).parent
NUMERICAL_FILES = ["test_tensor.py", "test_linalg.py", "test_rng_optim.py", "test_fusion.py",
                   "test_distill.py", "test_model.py", "test_metrics.py"]


@pytest.fixture(scope="module")
def bench_data():
    cfg = RunConfig()
    dataset, truth = generate(cfg.gen)
    return cfg, dataset, truth


@pytest.fixture(scope="module")
def full_run(bench_data):
    cfg, dataset, _ = bench_data
    selections = {}
    t0 = time.perf_counter()
    result = cross_validate(dataset, cfg, selections=selections)
    return result, selections, time.perf_counter() - t0


def test_full_pipeline(full_run, criterion):
    result, _, wall = full_run
    s = result.summary()
    ok = s["acc_mean"] >= 0.85 and s["auc_mean"] >= 0.90 and wall < 300
    criterion("pipeline", ok, f"ACC {s['acc_mean']:.3f} (>=0.85), AUC {s['auc_mean']:.3f} "
              f"(>=0.90), {wall:.0f}s (<300s)")
    assert ok


def jaccard(a, b):
    a, b = set(a), set(b)
    return len(a & b) / len(a | b)


def test_localization_planted(criterion):
    atlas = default_atlas()
    hits = 0
    for seed in range(20):
        ds, truth = generate(GenSpec(seed=seed))
        rep, _ = filter_subgraphs(ds, atlas, "f", FilterConfig(), seed=seed)
        hits += jaccard(rep.union, truth.planted_nodes) >= 0.6
    ok = hits >= 18
    criterion("localization (planted)", ok, f"Jaccard>=0.6 in {hits}/20 seeds (>=18)")
    assert ok


def test_localization_null_fallback(criterion):
    atlas = default_atlas()
    fallbacks = 0
    for seed in range(20):
        ds, _ = generate(GenSpec(seed=seed, signal_strength=0.0))
        rep, _ = filter_subgraphs(ds, atlas, "f", FilterConfig(), seed=seed)
        fallbacks += len(rep.selected) == 0
    ok = fallbacks >= 15
    criterion("localization (no signal)", ok, f"fallback to whole brain in {fallbacks}/20 seeds (>=15)")
    assert ok


def test_efficiency_bench(bench_data, criterion):
    cfg, dataset, _ = bench_data
    t0 = time.perf_counter()
    rep = run_bench(cfg, dataset)
    wall = time.perf_counter() - t0
    ratio, slope = rep["epoch_comparison"]["ratio"], rep["cna_loglog_slope"]
    ok = ratio <= 0.6 and 1.6 <= slope <= 2.4 and wall < 120
    criterion("efficiency", ok, f"epoch time ratio {ratio:.3f} (<=0.6), CNA slope {slope:.2f} "
              f"([1.6, 2.4]), {wall:.0f}s (<120s)")
    assert ok


def test_ablation_without_gated_fusion(bench_data, full_run, criterion):
    cfg, dataset, _ = bench_data
    result, selections, _ = full_run
    prod = cross_validate(dataset, with_overrides(cfg, fusion={"mode": "product"}),
                          selections=selections)
    drop = result.summary()["acc_mean"] - prod.summary()["acc_mean"]
    ok = drop >= 0.03
    criterion("ablation (product fusion)", ok, f"ACC drop {100 * drop:.1f} points (>=3)")
    assert ok


def test_ablation_without_filtering(bench_data, full_run, criterion):
    cfg, dataset, _ = bench_data
    result, _, _ = full_run
    whole = cross_validate(dataset, with_overrides(cfg, agsf=False))
    a, b = result.summary(), whole.summary()
    slower = b["epoch_time_s"] / a["epoch_time_s"] - 1
    delta = 100 * (b["acc_mean"] - a["acc_mean"])
    ok = slower >= 0.25 and abs(delta) <= 2.0
    criterion("ablation (no filtering)", ok, f"epoch time +{100 * slower:.0f}% (>=25%), "
              f"ACC change {delta:+.1f} points (within +-2)")
    assert ok


def test_numerical_suite(criterion):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *[str(TESTS / f) for f in NUMERICAL_FILES]],
                          capture_output=True, text=True, cwd=TESTS.parent)
    wall = time.perf_counter() - t0
    ok = proc.returncode == 0 and wall < 60
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else "no output"
    criterion("numerical suite", ok, f"{tail}; {wall:.0f}s (<60s)")
    assert ok, proc.stdout[-2000:]


def test_determinism(tmp_path, criterion):
    cfg = RunConfig()
    data = tmp_path / "gen"
    assert main(["gen", "--out", str(data), "--format", "bin"]) == 0
    conf = tmp_path / "run.toml"
    conf.write_text("[gcn]\nepochs = 15\n")
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(conf), "--data", str(data / "data"),
                     "--out", str(out), "--seed", "7", "--threads", "1"]) == 0
        runs.append(out)
    a, b = runs
    ckpts = sorted(p.name for p in a.glob("*.ckpt"))
    same_ckpt = len(ckpts) == cfg.folds and all(
        (a / c).read_bytes() == (b / c).read_bytes() for c in ckpts)
    ma = strip_timing(json.loads((a / "metrics.json").read_text()))
    mb = strip_timing(json.loads((b / "metrics.json").read_text()))
    ok = same_ckpt and ma == mb
    criterion("determinism", ok, f"{len(ckpts)} checkpoints byte-identical: {same_ckpt}; "
              f"metrics identical without timing: {ma == mb}")
    assert ok
