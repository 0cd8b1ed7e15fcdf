import numpy as np
import pytest

from ridgediff import autodiff as ad


def numeric_grad(f, arr, h=1e-6):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def check_op(build, *shapes, seed=0):
    """Compare analytic and numeric gradients of ``sum(build(*inputs) * probe)``."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    probe = rng.standard_normal(out.data.shape)
    out.backward(probe)

    def scalar():
        return float((build(*[ad.Tensor(a) for a in arrays]).data * probe).sum())

    for t, a in zip(tensors, arrays):
        num = numeric_grad(scalar, a)
        assert np.allclose(t.grad, num, rtol=1e-5, atol=1e-7)


def test_add_broadcast():
    check_op(ad.add, (2, 3, 4, 2), (2,))


def test_silu():
    check_op(ad.silu, (3, 5))


def test_add_channel():
    check_op(ad.add_channel, (2, 3, 3, 4), (2, 4))


def test_linear():
    check_op(ad.linear, (3, 5), (5, 4), (4,))


def test_conv1x1():
    check_op(ad.conv1x1, (2, 3, 3, 2), (2, 3), (3,))


def test_conv3x3():
    check_op(ad.conv3x3, (2, 5, 4, 2), (3, 3, 2, 3), (3,))


def test_conv3x3_matches_direct_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 6, 5, 2))
    w = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    got = ad.conv3x3(x, w, b).data
    p = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    want = np.zeros((1, 6, 5, 3))
    for r in range(6):
        for c in range(5):
            for o in range(3):
                want[0, r, c, o] = b[o] + sum(
                    p[0, r + dy, c + dx, i] * w[dy, dx, i, o] for dy in range(3) for dx in range(3) for i in range(2)
                )
    assert np.allclose(got, want, atol=1e-12)


def test_pool_and_upsample():
    check_op(ad.avgpool2, (2, 4, 6, 3))
    check_op(ad.upsample2, (2, 2, 3, 3))
    x = np.arange(16.0).reshape(1, 4, 4, 1)
    assert ad.avgpool2(x).data[0, :, :, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]
    assert ad.upsample2(np.array([[[[1.0], [2.0]]]])).data[0, :, :, 0].tolist() == [[1, 1, 2, 2], [1, 1, 2, 2]]


@pytest.mark.parametrize("groups", [1, 2, 4])
def test_group_norm(groups):
    check_op(lambda x, s, b: ad.group_norm(x, s, b, groups), (2, 3, 3, 4), (4,), (4,))


def test_group_norm_statistics_are_per_sample():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 4, 4, 2)) * 5 + 3
    out = ad.group_norm(x, np.zeros(2), np.zeros(2), 1).data
    for k in range(3):
        assert out[k].mean() == pytest.approx(0, abs=1e-10)
        assert out[k].var() == pytest.approx(1, rel=1e-3)
    alone = ad.group_norm(x[1:2], np.zeros(2), np.zeros(2), 1).data
    assert np.allclose(alone, out[1:2])


def test_mse():
    target = np.random.default_rng(3).standard_normal((2, 3))
    check_op(lambda p: ad.mse(p, target), (2, 3))


def test_gradients_accumulate_through_shared_use():
    x = ad.Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = ad.add(ad.silu(x), x)
    y.backward(np.ones(2))
    sig = 1 / (1 + np.exp(-x.data))
    assert np.allclose(x.grad, sig * (1 + x.data * (1 - sig)) + 1)


def test_no_grad_builds_no_graph():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.silu(x)
    assert not y.requires_grad
    z = ad.silu(x)
    assert z.requires_grad
