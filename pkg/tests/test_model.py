import numpy as np
import pytest

from dflsim.core import DivergedError, ShapeMismatchError, substream
from dflsim import model
from dflsim.model import ModelShape


SHAPE = ModelShape(d_in=3, d_hidden=4, num_classes=3)


def _random_instance(seed, shape=SHAPE, n=6):
    rng = substream(seed, 0)
    params = model.init_params(shape, rng)
    X = rng.normal(size=(n, shape.d_in))
    y = rng.integers(0, shape.num_classes, size=n).astype(np.int64)
    return params, X, y


# ---------------------------------------------------------------------------
# packing
# ---------------------------------------------------------------------------

def test_block_sizes():
    assert SHAPE.w_size == 4 * (3 + 1)
    assert SHAPE.beta_size == 3 * (4 + 1)


def test_unpack_views_share_memory():
    params, _, _ = _random_instance(0)
    W1, b1 = model.unpack_w(SHAPE, params.w)
    W1[0, 0] = 123.0
    assert params.w[0] == 123.0
    assert b1.shape == (4,)


def test_unpack_rejects_wrong_length():
    with pytest.raises(ShapeMismatchError, match="shape-mismatch"):
        model.unpack_w(SHAPE, np.zeros(5))
    with pytest.raises(ShapeMismatchError, match="shape-mismatch"):
        model.unpack_beta(SHAPE, np.zeros(5))


def test_init_is_stream_deterministic():
    a = model.init_params(SHAPE, substream(3, 1))
    b = model.init_params(SHAPE, substream(3, 1))
    assert np.array_equal(a.w, b.w) and np.array_equal(a.beta, b.beta)


# ---------------------------------------------------------------------------
# gradients against central finite differences
# ---------------------------------------------------------------------------

def _fd_gradient(shape, params, X, y, eps=1e-6):
    """Independent oracle: central differences on every coordinate."""
    g_w = np.zeros_like(params.w)
    g_beta = np.zeros_like(params.beta)
    for vec, grad in ((params.w, g_w), (params.beta, g_beta)):
        for idx in range(vec.size):
            orig = vec[idx]
            vec[idx] = orig + eps
            up = model.loss(shape, params, X, y)
            vec[idx] = orig - eps
            down = model.loss(shape, params, X, y)
            vec[idx] = orig
            grad[idx] = (up - down) / (2 * eps)
    return g_w, g_beta


def test_gradients_match_finite_differences():
    for seed in range(5):
        params, X, y = _random_instance(seed)
        _, g_w, g_beta = model.loss_and_grads(SHAPE, params, X, y)
        fd_w, fd_beta = _fd_gradient(SHAPE, params, X, y)
        np.testing.assert_allclose(g_w, fd_w, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(g_beta, fd_beta, rtol=1e-5, atol=1e-8)


def test_proxy_is_the_shared_block_gradient():
    params, X, y = _random_instance(7)
    _, g_w, _ = model.loss_and_grads(SHAPE, params, X, y)
    p = model.proxy_gradient(SHAPE, params, X, y)
    assert p.shape == (SHAPE.w_size,)
    assert np.array_equal(p, g_w)


# ---------------------------------------------------------------------------
# local update
# ---------------------------------------------------------------------------

def test_full_batch_single_steps_do_not_increase_loss():
    params, X, y = _random_instance(11, n=20)

    def full():
        return X, y

    before = model.loss(SHAPE, params, X, y)
    out, last = model.local_update(SHAPE, params, full, k_beta=1, k_w=1,
                                   eta_beta=1e-3, eta_w=1e-3)
    after = model.loss(SHAPE, out, X, y)
    assert after <= before
    assert last == (X, y)


def test_zero_steps_is_identity_with_no_batch():
    params, X, y = _random_instance(12)

    def full():
        return X, y

    out, last = model.local_update(SHAPE, params, full, 0, 0, 0.1, 0.1)
    assert last is None
    assert np.array_equal(out.w, params.w) and np.array_equal(out.beta, params.beta)


def test_head_phase_keeps_shared_block_fixed():
    params, X, y = _random_instance(13)

    def full():
        return X, y

    out, _ = model.local_update(SHAPE, params, full, k_beta=3, k_w=0,
                                eta_beta=0.1, eta_w=0.1)
    assert np.array_equal(out.w, params.w)
    assert not np.array_equal(out.beta, params.beta)


def test_shared_phase_keeps_head_fixed_when_no_head_steps():
    params, X, y = _random_instance(14)

    def full():
        return X, y

    out, _ = model.local_update(SHAPE, params, full, k_beta=0, k_w=3,
                                eta_beta=0.1, eta_w=0.1)
    assert np.array_equal(out.beta, params.beta)
    assert not np.array_equal(out.w, params.w)


def test_local_update_does_not_modify_input():
    params, X, y = _random_instance(15)
    w0 = params.w.copy()

    def full():
        return X, y

    model.local_update(SHAPE, params, full, 2, 2, 0.1, 0.1)
    assert np.array_equal(params.w, w0)


def test_momentum_changes_trajectory():
    params, X, y = _random_instance(16)

    def full():
        return X, y

    plain, _ = model.local_update(SHAPE, params, full, 3, 3, 0.05, 0.05, momentum=0.0)
    heavy, _ = model.local_update(SHAPE, params, full, 3, 3, 0.05, 0.05, momentum=0.9)
    assert not np.array_equal(plain.w, heavy.w)


def test_divergence_is_reported():
    params, X, y = _random_instance(17)

    def full():
        return X, y

    with pytest.raises(DivergedError, match="diverged"):
        model.local_update(SHAPE, params, full, 5, 5, 1e155, 1e155)


# ---------------------------------------------------------------------------
# batcher
# ---------------------------------------------------------------------------

def test_batcher_full_batch_when_small():
    X = np.arange(10.0).reshape(5, 2)
    y = np.arange(5)
    draw = model.make_batcher(X, y, batch_size=8, rng=substream(0, 1))
    Xb, yb = draw()
    assert Xb is X and yb is y


def test_batcher_minibatch_size_and_determinism():
    X = np.arange(40.0).reshape(20, 2)
    y = np.arange(20)
    a = model.make_batcher(X, y, 6, substream(5, 2))
    b = model.make_batcher(X, y, 6, substream(5, 2))
    Xa, ya = a()
    Xb, yb = b()
    assert Xa.shape == (6, 2)
    assert np.array_equal(ya, yb) and np.array_equal(Xa, Xb)
