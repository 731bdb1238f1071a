import csv
import json

import numpy as np
import pytest

from brainmap.cli import format_table, main
from brainmap.config import load_config, with_overrides
from brainmap.model import load_checkpoint

TINY = """
[run]
folds = 2
[gen]
n_subjects = 60
[filter]
repeats = 2
[forest]
n_trees = 15
[gcn]
epochs = 3
hidden_width = 16
pe_dim = 4
[fusion]
cna_dim = 8
[sweep]
cna_dims = [8]
giac_hiddens = [0]
neurons = [16]
[bench]
grid = [16, 64, 160]
repeats = 2
batch = 4
epochs = 1
filtered_nodes = 20
full_nodes = 60
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY)
    assert main(["gen", "--config", str(cfg), "--out", str(root / "gen"), "--seed", "2"]) == 0
    return root, cfg, root / "gen" / "data"


def read_json(path):
    return json.loads(path.read_text())


def test_gen_writes_dataset_and_truth(workspace):
    root, _, data = workspace
    assert len(read_json(data / "manifest.json")) == 60
    rep = read_json(root / "gen" / "gen.json")
    assert rep["command"] == "gen" and rep["seed"] == 2
    assert rep["result"]["ground_truth"]["planted_masks"] == ["limbic", "subcortical"]


def test_filter_union_covers_planted(workspace):
    root, cfg, data = workspace
    out = root / "filter"
    assert main(["filter", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    planted = set(read_json(data / "ground_truth.json")["planted_nodes"])
    reports = read_json(out / "filter.json")["result"]["reports"]
    assert planted <= set(reports["f"]["union"])
    assert (out / "filter.txt").read_text().startswith("modality")


def test_train_then_eval_is_repeatable(workspace):
    root, cfg, data = workspace
    out = root / "train"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out),
                 "--threads", "1"]) == 0
    for name in ("fold0.ckpt", "fold1.ckpt", "metrics.json", "region_importance.csv",
                 "config.toml", "train.json"):
        assert (out / name).exists()
    assert load_config(out / "config.toml") == load_config(cfg)
    rows = list(csv.DictReader(open(out / "region_importance.csv")))
    assert rows[0]["mask"] == "all"
    docs = []
    for k in range(2):
        ev = root / f"eval{k}"
        assert main(["eval", "--config", str(cfg), "--data", str(data), "--out", str(ev),
                     "--checkpoint", str(out / "fold0.ckpt")]) == 0
        docs.append((ev / "eval.json").read_bytes())
    assert docs[0] == docs[1]
    assert read_json(root / "eval0" / "eval.json")["result"]["metrics"]["n"] == 60


def test_zero_epoch_checkpoint_is_initialization(workspace, tmp_path):
    _, cfg, data = workspace
    text = TINY.replace("epochs = 3", "epochs = 0")
    (tmp_path / "z.toml").write_text(text)
    assert main(["train", "--config", str(tmp_path / "z.toml"), "--data", str(data),
                 "--out", str(tmp_path / "a"), "--seed", "5"]) == 0
    assert main(["train", "--config", str(tmp_path / "z.toml"), "--data", str(data),
                 "--out", str(tmp_path / "b"), "--seed", "6"]) == 0
    a = load_checkpoint(tmp_path / "a" / "fold0.ckpt")
    b = load_checkpoint(tmp_path / "b" / "fold0.ckpt")
    assert a.seed == 5
    m = read_json(tmp_path / "a" / "metrics.json")
    assert m["folds"]["0"]["epochs_run"] == 0
    # different seeds give different initial weights
    assert not np.array_equal(a.params["out.w"].value, b.params["out.w"].value)


def test_single_point_sweep_matches_train(workspace):
    root, cfg, data = workspace
    out = root / "sweep"
    assert main(["sweep", "--config", str(cfg), "--data", str(data), "--out", str(out),
                 "--axis", "cna_giac"]) == 0
    rows = read_json(out / "sweep.json")["result"]["rows"]
    assert len(rows) == 1
    if not (root / "train" / "metrics.json").exists():
        pytest.skip("train output not present")
    summary = read_json(root / "train" / "metrics.json")["summary"]
    assert rows[0]["acc_mean"] == summary["acc_mean"]
    assert rows[0]["auc_mean"] == summary["auc_mean"]


def test_sweep_grid_size(workspace, tmp_path):
    _, _, data = workspace
    text = TINY.replace("cna_dims = [8]", "cna_dims = [4, 8]").replace(
        "giac_hiddens = [0]", "giac_hiddens = [0, 4]").replace("epochs = 3", "epochs = 1")
    (tmp_path / "s.toml").write_text(text)
    assert main(["sweep", "--config", str(tmp_path / "s.toml"), "--data", str(data),
                 "--out", str(tmp_path), "--axis", "cna_giac"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert [(r["cna_dim"], r["giac_hidden"]) for r in rows] == [
        ("4", "0"), ("4", "4"), ("8", "0"), ("8", "4")]


def test_bench_grows_with_nodes(workspace):
    root, cfg, data = workspace
    out = root / "bench"
    assert main(["bench", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
    rep = read_json(out / "bench.json")["result"]
    cna = [r for r in rep["stages"] if r["stage"] == "cna"]
    assert [r["n_nodes"] for r in cna] == [16, 64, 160]
    assert cna[-1]["time_s"] > cna[0]["time_s"]
    assert cna[-1]["peak_mem_bytes"] > cna[0]["peak_mem_bytes"]
    comp = rep["epoch_comparison"]
    assert comp["filtered"]["n_nodes"] == 20 and comp["full"]["n_nodes"] == 60
    assert (out / "bench.csv").exists()


def error_of(capsys):
    return json.loads(capsys.readouterr().err)["error"]


def test_missing_data_exit_code(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 3
    assert error_of(capsys)["type"] == "DataError"


def test_unknown_config_keys_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("zzz = 1\n[gcn]\nbogus = 2\n")
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert error_of(capsys)["keys"] == ["gcn.bogus", "zzz"]


def test_missing_checkpoint_exit_code(workspace, tmp_path, capsys):
    _, cfg, data = workspace
    code = main(["eval", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path),
                 "--checkpoint", str(tmp_path / "nope.ckpt")])
    assert code == 3 and "checkpoint" in error_of(capsys)["message"]


def test_json_flag_prints_report(workspace, tmp_path, capsys):
    _, cfg, _ = workspace
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path), "--json",
                 "--format", "bin"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["result"]["n_subjects"] == 60 and doc["config"]["fusion"]["cna_dim"] == 8


def test_format_table():
    text = format_table([{"a": 1, "b": 0.5}, {"a": 22, "b": None}])
    assert text.splitlines() == ["a   b     ", "--  ------", " 1  0.5000", "22       -"]
