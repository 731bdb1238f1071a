import numpy as np
import pytest

from brainmap.errors import ShapeError
from brainmap.fusion import (CnaParams, GiacParams, cross_node_attention, fuse_subject,
                             gate_values, gated_interaction, init_cna, init_giac, init_product,
                             product_fusion, split_blocks)
from brainmap.numerics import tensor as T

from test_tensor import check_grads


def const_cna(wq, wk, wv):
    return CnaParams(T.parameter(wq), T.parameter(wk), T.parameter(wv))


def test_single_structural_node_gets_all_weight(rng):
    p = init_cna(4, 3, rng)
    f, s = rng.normal(size=(5, 4)), rng.normal(size=(1, 4))
    g, a = cross_node_attention(f, s, p)
    np.testing.assert_array_equal(a.value, np.ones((5, 1)))
    np.testing.assert_allclose(g.value, np.tile(s @ p.w_v.value, (5, 1)), atol=1e-15)


def test_zero_query_weights_give_mean_of_values(rng):
    p = const_cna(np.zeros((4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 4)))
    f, s = rng.normal(size=(5, 4)), rng.normal(size=(6, 4))
    g, _ = cross_node_attention(f, s, p)
    np.testing.assert_allclose(g.value, np.tile((s @ p.w_v.value).mean(0), (5, 1)), atol=1e-12)


def test_attention_matches_elementwise_formula():
    f = np.array([[1.0, 0.5], [-0.3, 2.0], [0.7, -1.1]])
    s = np.array([[0.2, -0.4], [1.5, 0.3]])
    wq = np.array([[0.5, -0.2], [0.1, 0.3]])
    wk = np.array([[-0.6, 0.4], [0.25, 0.9]])
    wv = np.array([[1.0, 0.2], [-0.5, 0.7]])
    g, a = cross_node_attention(f, s, const_cna(wq, wk, wv))
    h = 2
    want_a = np.zeros((3, 2))
    want_g = np.zeros((3, 2))
    for i in range(3):
        q = [sum(f[i, d] * wq[d, c] for d in range(2)) for c in range(h)]
        logits = []
        for j in range(2):
            k = [sum(s[j, d] * wk[d, c] for d in range(2)) for c in range(h)]
            logits.append(sum(q[c] * k[c] for c in range(h)) / np.sqrt(h))
        e = [np.exp(x) for x in logits]
        for j in range(2):
            want_a[i, j] = e[j] / sum(e)
            v = [sum(s[j, d] * wv[d, c] for d in range(2)) for c in range(2)]
            for c in range(2):
                want_g[i, c] += want_a[i, j] * v[c]
    np.testing.assert_allclose(a.value, want_a, atol=1e-12)
    np.testing.assert_allclose(g.value, want_g, atol=1e-12)


def test_attention_rows_are_distributions(rng):
    p = init_cna(6, 5, rng)
    _, a = cross_node_attention(rng.normal(size=(7, 6)) * 30, rng.normal(size=(4, 6)) * 30, p)
    assert np.all(np.abs(a.value.sum(axis=1) - 1) <= 1e-9)
    assert np.all(a.value >= 0)


def test_summary_in_convex_hull_of_values(rng):
    p = init_cna(5, 4, rng)
    s = rng.normal(size=(6, 5))
    g, _ = cross_node_attention(rng.normal(size=(8, 5)), s, p)
    v = s @ p.w_v.value
    assert np.all(g.value >= v.min(0) - 1e-12) and np.all(g.value <= v.max(0) + 1e-12)


def test_rectangular_attention(rng):
    p = init_cna(3, 2, rng)
    g, a = cross_node_attention(rng.normal(size=(4, 3)), rng.normal(size=(9, 3)), p)
    assert a.shape == (4, 9) and g.shape == (4, 3)


def test_width_mismatch(rng):
    with pytest.raises(ShapeError):
        cross_node_attention(np.ones((2, 3)), np.ones((2, 4)), init_cna(3, 2, rng))


def test_zero_gate_weights_average(rng):
    f, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    p = GiacParams(T.parameter(np.zeros((1, 6))), T.parameter(np.zeros(1)))
    z, gate = gated_interaction(f, g, p)
    np.testing.assert_array_equal(gate.value, np.full((4, 1), 0.5))
    np.testing.assert_allclose(split_blocks(z.value, 3)[4], (f + g) / 2, atol=1e-15)


def test_equal_modalities_zero_disparity(rng):
    f = rng.normal(size=(4, 3))
    z, _ = gated_interaction(f, f.copy(), init_giac(3, rng))
    blocks = split_blocks(z.value, 3)
    np.testing.assert_array_equal(blocks[3], np.zeros((4, 3)))
    np.testing.assert_allclose(blocks[4], f, atol=1e-15)


def test_saturated_gate_passes_functional(rng):
    f, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    p = GiacParams(T.parameter(np.zeros((1, 6))), T.parameter(np.array([20.0])))
    z, _ = gated_interaction(f, g, p)
    np.testing.assert_allclose(split_blocks(z.value, 3)[4], f, atol=1e-8)


def test_block_structure(rng):
    d = 4
    f, g = rng.normal(size=(5, d)), rng.normal(size=(5, d))
    z, gate = gated_interaction(f, g, init_giac(d, rng))
    assert z.shape == (5, 5 * d)
    b1, b2, b3, b4, b5 = split_blocks(z.value, d)
    np.testing.assert_array_equal(b3, b1 * b2)
    np.testing.assert_array_equal(b4, np.abs(b1 - b2))
    lam = gate.value
    np.testing.assert_allclose(b5, lam * b1 + (1 - lam) * b2, atol=1e-15)
    assert np.all((lam > 0) & (lam < 1))


def test_hidden_gate_layer_in_range(rng):
    p = init_giac(3, rng, hidden=8)
    lam = gate_values(T.as_tensor(rng.normal(size=(6, 3)) * 50), T.as_tensor(rng.normal(size=(6, 3))), p)
    assert lam.shape == (6, 1) and np.all((lam.value >= 0) & (lam.value <= 1))


def test_fuse_is_composition(rng):
    cna, giac = init_cna(3, 2, rng), init_giac(3, rng)
    f, s = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    z, _ = fuse_subject(f, s, cna, giac)
    g, _ = cross_node_attention(f, s, cna)
    z2, _ = gated_interaction(f, g, giac)
    np.testing.assert_array_equal(z.value, z2.value)


def test_structural_row_order_irrelevant(rng):
    cna = init_cna(4, 3, rng)
    f, s = rng.normal(size=(5, 4)), rng.normal(size=(7, 4))
    perm = rng.permutation(7)
    g1, _ = cross_node_attention(f, s, cna)
    g2, _ = cross_node_attention(f, s[perm], cna)
    np.testing.assert_allclose(g1.value, g2.value, atol=1e-12)


def test_zero_structure(rng):
    cna, giac = init_cna(3, 2, rng), init_giac(3, rng)
    f = rng.normal(size=(4, 3))
    z, _ = fuse_subject(f, np.zeros((5, 3)), cna, giac)
    _, g, p, d, m = split_blocks(z.value, 3)
    assert not g.any() and not p.any()
    np.testing.assert_array_equal(d, np.abs(f))
    lam = gate_values(T.as_tensor(f), T.as_tensor(np.zeros((4, 3))), giac).value
    np.testing.assert_allclose(m, lam * f, atol=1e-15)


def test_batched_matches_per_subject(rng):
    cna, giac = init_cna(3, 2, rng), init_giac(3, rng, hidden=4)
    f, s = rng.normal(size=(3, 4, 3)), rng.normal(size=(3, 5, 3))
    zb, _ = fuse_subject(f, s, cna, giac)
    for i in range(3):
        zi, _ = fuse_subject(f[i], s[i], cna, giac)
        np.testing.assert_allclose(zb.value[i], zi.value, atol=1e-14)


@pytest.mark.parametrize("hidden", [0, 3])
def test_fusion_gradients(rng, hidden):
    cna, giac = init_cna(3, 2, rng), init_giac(3, rng, hidden)
    f, s = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    readout = rng.normal(size=(4, 15))
    params = list(cna.tensors().values()) + list(giac.tensors().values())
    check_grads(lambda: T.tsum(fuse_subject(f, s, cna, giac)[0] * readout), params)


def test_product_fusion(rng):
    p = init_product(3, rng)
    f, s = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    out = product_fusion(f, s, p).value
    np.testing.assert_allclose(out, (f @ p.w_a.value) * (s @ p.w_b.value), atol=1e-15)
    with pytest.raises(ShapeError):
        product_fusion(f, rng.normal(size=(5, 3)), p)
