import numpy as np
import pytest

from brainmap.numerics import Adam, RngStream, parameter


def test_same_stream_same_draws():
    a = RngStream(7, (1, 2)).generator().random(5)
    b = RngStream(7).child(1, 2).generator().random(5)
    np.testing.assert_array_equal(a, b)


def test_substreams_independent_of_draw_order():
    root = RngStream(11)
    first = root.child(3).generator().normal(size=4)
    root.child(0).generator().normal(size=1000)
    again = root.child(3).generator().normal(size=4)
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, root.child(4).generator().normal(size=4))


def test_seeds_differ():
    assert RngStream(1).int_seed() != RngStream(2).int_seed()


def adam_reference(x0, grad, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v, out = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(x)
    return out


def test_adam_matches_closed_form_on_quadratic():
    # f(x) = 0.5 * a * (x - c)^2
    a, c = 3.0, 1.5
    p = parameter(np.array([-2.0]))
    opt = Adam([p], lr=0.1)
    ref = adam_reference(-2.0, lambda x: a * (x - c), 0.1, 10)
    for want in ref:
        p.grad = a * (p.value - c)
        opt.step()
        assert p.value[0] == pytest.approx(want, abs=1e-12)


def test_adam_weight_decay_folds_into_gradient():
    p = parameter(np.array([2.0]))
    opt = Adam([p], lr=0.01, weight_decay=0.5)
    ref = adam_reference(2.0, lambda x: 0.5 * x, 0.01, 3)
    for want in ref:
        p.grad = np.zeros(1)
        opt.step()
        assert p.value[0] == pytest.approx(want, abs=1e-12)


def test_adam_zero_lr_is_bit_exact(rng):
    start = rng.normal(size=(3, 3))
    p = parameter(start.copy())
    opt = Adam([p], lr=0.0, weight_decay=0.1)
    for _ in range(5):
        p.grad = rng.normal(size=(3, 3))
        opt.step()
    np.testing.assert_array_equal(p.value, start)
