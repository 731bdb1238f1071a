import json
from dataclasses import replace

import numpy as np
import pytest

from brainmap.atlas_filter import FilterConfig, filter_subgraphs, pool_region, rf_score
from brainmap.datagen import GenSpec, export, generate
from brainmap.errors import ConfigError
from brainmap.forest import ForestConfig
from brainmap.graph import default_atlas, load_dataset
from brainmap.numerics import RngStream

FAST = FilterConfig(repeats=3, forest=ForestConfig(n_trees=25))


def test_adjacency_invariants(small_generated):
    ds, _ = small_generated
    for s in ds.subjects:
        for a in (s.adj_f, s.adj_s):
            np.testing.assert_array_equal(a, a.T)
            assert np.all(np.abs(a) <= 1.0)
        np.testing.assert_array_equal(np.diag(s.adj_f), 1.0)


def test_balanced_labels(small_generated):
    ds, _ = small_generated
    assert np.bincount(ds.labels).tolist() == [20, 20]


def test_deterministic():
    a, ta = generate(GenSpec(n_subjects=6, seed=8))
    b, tb = generate(GenSpec(n_subjects=6, seed=8))
    assert a.same_as(b) and ta == tb
    c, _ = generate(GenSpec(n_subjects=6, seed=9))
    assert not a.same_as(c)


def test_subject_depends_only_on_seed_and_index():
    a, _ = generate(GenSpec(n_subjects=6, seed=2))
    b, _ = generate(GenSpec(n_subjects=10, seed=2))
    i = next(k for k in range(6) if a.labels[k] == b.labels[k])
    np.testing.assert_array_equal(a.subjects[i].adj_s, b.subjects[i].adj_s)


def test_full_coupling_copies_functional():
    ds, _ = generate(GenSpec(n_subjects=4, coupling=1.0))
    for s in ds.subjects:
        np.testing.assert_array_equal(s.adj_s, np.clip(s.adj_f, -1, 1))


def test_ground_truth_nodes():
    _, truth = generate(GenSpec(n_subjects=4))
    atlas = default_atlas()
    assert truth.planted_nodes == tuple(sorted(set(atlas["limbic"]) | set(atlas["subcortical"])))
    assert json.loads(json.dumps(truth.to_json()))["planted_masks"] == ["limbic", "subcortical"]


def test_spec_validation():
    atlas = default_atlas()
    bad = [GenSpec(planted_masks=("nowhere",)), GenSpec(signal_strength=-1), GenSpec(coupling=2),
           GenSpec(n_nodes=10), GenSpec(global_weight=0.8, block_weight=0.5),
           GenSpec(noise_model="pink")]
    for spec in bad:
        with pytest.raises(ConfigError):
            spec.validate(atlas)


def test_iid_noise_model_runs():
    ds, _ = generate(GenSpec(n_subjects=4, noise_model="iid"))
    assert len(ds) == 4


@pytest.mark.parametrize("fmt", ["csv", "bin"])
def test_export_round_trip(tmp_path, fmt):
    ds, truth = generate(GenSpec(n_subjects=5, seed=1))
    export(ds, tmp_path, truth, fmt)
    assert len(json.loads((tmp_path / "manifest.json").read_text())) == 5
    assert load_dataset(tmp_path).same_as(ds)
    assert json.loads((tmp_path / "ground_truth.json").read_text())["planted_nodes"] == list(truth.planted_nodes)


def test_csv_and_binary_load_identically(tmp_path):
    ds, _ = generate(GenSpec(n_subjects=3, seed=4))
    export(ds, tmp_path / "c", fmt="csv")
    export(ds, tmp_path / "b", fmt="bin")
    assert load_dataset(tmp_path / "c").same_as(load_dataset(tmp_path / "b"))


def planted_score(delta, seed, mask="limbic"):
    spec = GenSpec(n_subjects=100, seed=seed, signal_strength=delta)
    ds, _ = generate(spec)
    x = pool_region(ds.features("f"), default_atlas()[mask])
    return rf_score(x, ds.labels, 3, RngStream(seed), ForestConfig(n_trees=25))


def test_no_signal_is_chance():
    scores = [planted_score(0.0, s) for s in range(3)]
    assert 0.35 <= np.mean(scores) <= 0.65


def test_score_grows_with_signal():
    deltas = [0.0, 0.05, 0.1, 0.3]
    means = [np.mean([planted_score(d, s) for s in range(3)]) for d in deltas]
    assert all(b >= a - 0.03 for a, b in zip(means, means[1:]))
    assert means[-1] > means[0] + 0.3


def test_strong_limbic_signal_selected_across_seeds():
    atlas = default_atlas()
    hits = 0
    for seed in range(20):
        ds, _ = generate(GenSpec(seed=seed, planted_masks=("limbic",), signal_strength=0.5))
        rep, _ = filter_subgraphs(ds, atlas, "f", FAST, seed=seed)
        hits += "limbic" in rep.selected
    assert hits >= 18
