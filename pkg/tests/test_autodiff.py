import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tricam import autodiff as ad
from tricam.autodiff import Tensor


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f(x)
        x[i] = old - eps
        lo = f(x)
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def check(op, *shapes, seed=0, tol=1e-6):
    """Compare analytic gradients of sum(op(...) * r) with central differences."""
    rng = np.random.default_rng(seed)
    xs = [rng.normal(size=s) for s in shapes]
    r = rng.normal(size=op(*[Tensor(x) for x in xs]).shape)

    def scalar(*arrs):
        return float(np.sum(op(*[Tensor(a) for a in arrs]).data * r))

    ts = [Tensor(x.copy(), requires_grad=True) for x in xs]
    out = op(*ts)
    ad.tsum(ad.mul(out, r)).backward()
    for k, t in enumerate(ts):
        f = lambda a, k=k: scalar(*[a if j == k else xs[j] for j in range(len(xs))])
        num = numeric_grad(f, xs[k].copy())
        np.testing.assert_allclose(t.grad, num, atol=tol, rtol=tol)


@pytest.mark.parametrize("op,shapes", [
    (ad.add, [(3, 4), (3, 4)]),
    (ad.add, [(3, 4), (4,)]),           # broadcasting
    (ad.add, [(2, 3, 4), (1, 3, 1)]),
    (ad.mul, [(3, 4), (3, 4)]),
    (ad.mul, [(5, 2), (1, 2)]),
    (lambda a, b: a - b, [(3,), (3,)]),
    (ad.neg, [(4,)]),
    (ad.square, [(2, 5)]),
    (ad.matmul, [(3, 4), (4, 2)]),
    (ad.matmul, [(2, 3, 4), (4, 5)]),
    (ad.linear, [(6, 4), (4, 3), (3,)]),
    (ad.elu, [(3, 7)]),
    (lambda a: ad.reshape(a, (6, 2)), [(3, 4)]),
    (lambda a: ad.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    (lambda a: a[:, 1:3], [(4, 5)]),
    (lambda a: a[..., [0, 2, 2]], [(3, 4)]),     # repeated fancy index
    (lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 4)]),
    (lambda a, b: ad.stack([a, b], axis=1), [(2, 3), (2, 3)]),
    (lambda a: ad.tsum(a, axis=1), [(3, 4)]),
    (lambda a: ad.tsum(a, axis=(0, 2), keepdims=True), [(2, 3, 4)]),
    (lambda a: ad.mean(a, axis=0), [(5, 2)]),
    (ad.mean, [(5, 2)]),
    (lambda a: ad.softmax(a, axis=-1), [(3, 6)]),
    (lambda a: ad.softmax(a, axis=0), [(4, 2)]),
    (ad.conv2d, [(2, 6, 7, 3), (3, 3, 3, 4), (4,)]),
    (ad.avgpool2, [(2, 6, 8, 3)]),
    (ad.conv_pool, [(2, 8, 9, 2), (3, 3, 2, 3), (3,)]),
])
def test_op_gradients(op, shapes):
    check(op, *shapes)


def test_relu_gradient_away_from_kink():
    x = np.array([-2.0, -0.5, 0.5, 3.0])
    t = Tensor(x, requires_grad=True)
    ad.tsum(ad.relu(t)).backward()
    np.testing.assert_array_equal(t.grad, [0, 0, 1, 1])


def test_conv_pool_equals_conv_then_pool():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(3, 20, 40, 2)), rng.normal(size=(3, 3, 2, 5)), rng.normal(size=5)
    fused = ad.conv_pool(Tensor(x), Tensor(w), Tensor(b)).data
    plain = ad.avgpool2(ad.conv2d(Tensor(x), Tensor(w), Tensor(b))).data
    np.testing.assert_allclose(fused, plain, atol=1e-12)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(2)
    x, w, b = rng.normal(size=(1, 5, 6, 2)), rng.normal(size=(3, 2, 2, 3)), rng.normal(size=3)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    ref = np.zeros((1, 3, 5, 3))
    for i in range(3):
        for j in range(5):
            ref[0, i, j] = np.einsum("hwc,hwco->o", x[0, i:i + 3, j:j + 2], w) + b
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_shared_node_accumulates():
    t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = ad.mul(t, t) + t        # dy/dt = 2t + 1
    ad.tsum(y).backward()
    np.testing.assert_allclose(t.grad, [3.0, 5.0])


def test_backward_resets_previous_gradients():
    t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    for _ in range(2):
        ad.tsum(ad.square(t)).backward()
    np.testing.assert_allclose(t.grad, [2.0, 4.0])


def test_constants_do_not_build_graph():
    out = ad.add(Tensor(np.ones(3)), Tensor(np.ones(3)))
    assert not out.requires_grad and out.parents == ()


def test_backward_needs_scalar_or_seed():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.mul(t, 2.0).backward()
    ad.mul(t, 2.0).backward(np.ones(3))
    np.testing.assert_allclose(t.grad, 2.0)


def test_deep_chain_does_not_recurse():
    t = Tensor(np.array(1.0), requires_grad=True)
    y = t
    for _ in range(5000):
        y = ad.add(y, 1e-3)
    y.backward()
    assert t.grad == 1.0


@settings(max_examples=40)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_sums_to_one(vals):
    s = ad.softmax(Tensor(np.array([vals])), axis=-1).data
    assert abs(s.sum() - 1.0) < 1e-12
    assert (s >= 0).all()


def test_softmax_stable_for_large_logits():
    s = ad.softmax(Tensor(np.array([[1000.0, 1000.0]])), axis=-1).data
    np.testing.assert_allclose(s, 0.5)
