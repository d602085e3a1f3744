import numpy as np
import pytest

from molflow import autodiff as ad


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def check(fn, *shapes, seed=0, positive=False, rtol=1e-6, atol=1e-8):
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(0.2, 2.0, s) if positive else rng.standard_normal(s) for s in shapes]
    tape = ad.Tape()
    leaves = [tape.leaf(x) for x in xs]
    loss = ad.sum(fn(*leaves))
    grads = ad.grad(tape, loss, leaves)
    for k, x in enumerate(xs):
        def scalar(v, k=k):
            args = list(xs)
            args[k] = v
            return float(np.sum(fn(*args)))
        np.testing.assert_allclose(grads[k], numeric_grad(scalar, x), rtol=rtol, atol=atol)


ELEMENTWISE = {
    "exp": ad.exp, "tanh": ad.tanh, "sigmoid": ad.sigmoid, "softplus": ad.softplus,
    "log_sigmoid": ad.log_sigmoid, "square": ad.square, "neg": ad.neg,
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_elementwise(name):
    check(ELEMENTWISE[name], (3, 4))


def test_log():
    check(ad.log, (5,), positive=True)


def test_broadcasting_binary_ops():
    check(lambda a, b: ad.mul(ad.add(a, b), ad.sub(a, b)), (2, 3, 4), (4,))
    check(lambda a, b: ad.div(a, b), (2, 3), (2, 1), positive=True)


def test_reductions():
    check(lambda a: ad.mul(ad.sum(a, axis=1, keepdims=True), a), (3, 4))
    check(lambda a: ad.square(ad.mean(a, axis=0)), (3, 4))
    check(lambda a: ad.logsumexp(a, axis=-1), (3, 5))
    check(lambda a: ad.mul(ad.log_softmax(a, axis=-1), a), (2, 5))


def test_linear_and_shape_ops():
    check(lambda a, w: ad.matmul(a, w), (2, 3, 4), (4, 5))
    check(lambda a: ad.square(ad.reshape(a, (6, 2))), (3, 4))
    check(lambda a: ad.square(a[..., 1:3]), (3, 4))
    check(lambda a, b: ad.square(ad.concat([a, b], axis=-1)), (2, 3), (2, 2))
    check(lambda a: ad.square(ad.delay(a, 2, axis=1)), (2, 5, 3))
    check(lambda a: ad.square(ad.frames(a, 4, 2)), (2, 10))


def test_magnitude_and_clip():
    check(lambda a, b: ad.magnitude(a, b), (4,), (4,))
    x = np.array([-3.0, 0.5])
    tape = ad.Tape()
    leaf = tape.leaf(x)
    (g,) = ad.grad(tape, ad.sum(ad.clip_min(leaf, -1.0)), [leaf])
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_fancy_index_accumulates():
    tape = ad.Tape()
    leaf = tape.leaf(np.arange(4.0))
    (g,) = ad.grad(tape, ad.sum(leaf[np.array([0, 0, 2])]), [leaf])
    np.testing.assert_array_equal(g, [2.0, 0.0, 1.0, 0.0])


def test_plain_arrays_bypass_tape():
    out = ad.tanh(np.array([0.0, 1.0]))
    assert isinstance(out, np.ndarray)


def test_untouched_leaf_gets_zero():
    tape = ad.Tape()
    a, b = tape.leaf(np.ones(3)), tape.leaf(np.ones(2))
    ga, gb = ad.grad(tape, ad.sum(a), [a, b])
    np.testing.assert_array_equal(ga, np.ones(3))
    np.testing.assert_array_equal(gb, np.zeros(2))


def test_loss_must_be_recorded_scalar():
    tape, other = ad.Tape(), ad.Tape()
    a = tape.leaf(np.ones(3))
    with pytest.raises(ValueError):
        ad.grad(tape, a, [a])
    b = other.leaf(np.ones(1))
    with pytest.raises(ValueError):
        ad.grad(tape, ad.sum(b), [a])


def test_shared_subexpression_visited_once():
    tape = ad.Tape()
    x = tape.leaf(np.array(3.0))
    y = ad.mul(x, x)
    z = ad.add(y, y)
    (g,) = ad.grad(tape, z, [x])
    assert g == pytest.approx(12.0)


def test_gradients_are_bit_deterministic():
    def run():
        tape = ad.Tape()
        a = tape.leaf(np.random.default_rng(0).standard_normal((4, 6)))
        return ad.grad(tape, ad.sum(ad.logsumexp(ad.tanh(a), axis=0)), [a])[0]
    assert run().tobytes() == run().tobytes()
