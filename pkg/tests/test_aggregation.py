import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dflsim.aggregation import (LossReport, aggregate, boltzmann_weights,
                                smooth_loss, uniform_weights)
from dflsim.core import ShapeMismatchError

finite_losses = st.dictionaries(
    st.integers(min_value=0, max_value=30),
    st.floats(min_value=-20.0, max_value=20.0),
    min_size=1, max_size=10,
)


# ---------------------------------------------------------------------------
# loss smoothing
# ---------------------------------------------------------------------------

def test_smooth_loss_closed_form():
    assert smooth_loss(0.5, 1.0, 0.9) == 0.95


def test_smooth_loss_endpoints():
    assert smooth_loss(0.2, 0.8, 0.0) == 0.2
    assert smooth_loss(0.2, 0.8, 1.0) == 0.8


def test_smooth_loss_rejects_bad_gamma():
    with pytest.raises(ValueError):
        smooth_loss(0.5, 1.0, 1.5)


def test_loss_report_carries_smoothed_value():
    rep = LossReport(member=3, loss_start=1.0, loss_end=0.5,
                     smoothed=smooth_loss(0.5, 1.0, 0.9))
    assert rep.smoothed == 0.95


# ---------------------------------------------------------------------------
# softmin weights
# ---------------------------------------------------------------------------

def test_boltzmann_two_member_closed_form():
    w = boltzmann_weights({1: 0.0, 2: math.log(2.0)}, 1.0)
    assert w[1] == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert w[2] == pytest.approx(1.0 / 3.0, abs=1e-12)


@settings(max_examples=300)
@given(finite_losses, st.floats(min_value=1e-2, max_value=10.0))
def test_boltzmann_weights_form_a_distribution(losses, temp):
    w = boltzmann_weights(losses, temp)
    assert set(w) == set(losses)
    vals = np.array(list(w.values()))
    assert (vals >= 0).all()
    assert abs(vals.sum() - 1.0) < 1e-9


@settings(max_examples=200)
@given(finite_losses, st.floats(min_value=1e-2, max_value=10.0),
       st.floats(min_value=-50.0, max_value=50.0))
def test_boltzmann_weights_shift_invariant(losses, temp, shift):
    base = boltzmann_weights(losses, temp)
    moved = boltzmann_weights({k: v + shift for k, v in losses.items()}, temp)
    for k in losses:
        assert moved[k] == pytest.approx(base[k], abs=1e-9)


def test_boltzmann_weights_monotone_in_loss():
    w = boltzmann_weights({1: 0.2, 2: 0.9, 3: 0.4}, 0.7)
    assert w[1] > w[3] > w[2]


def test_boltzmann_extreme_losses_stay_finite():
    w = boltzmann_weights({1: 1e6, 2: 1e6 + 1.0}, 1.0)
    assert abs(sum(w.values()) - 1.0) < 1e-9
    assert w[1] > w[2]


def test_boltzmann_rejects_bad_inputs():
    with pytest.raises(ValueError):
        boltzmann_weights({}, 1.0)
    with pytest.raises(ValueError):
        boltzmann_weights({1: 0.5}, 0.0)
    with pytest.raises(ValueError, match="diverged"):
        boltzmann_weights({1: float("nan")}, 1.0)


def test_uniform_weights_split_evenly():
    w = uniform_weights({4, 1, 7})
    assert w == {1: pytest.approx(1 / 3), 4: pytest.approx(1 / 3),
                 7: pytest.approx(1 / 3)}
    with pytest.raises(ValueError):
        uniform_weights(set())


# ---------------------------------------------------------------------------
# weighted averaging
# ---------------------------------------------------------------------------

def test_aggregate_weighted_mean():
    blocks = {1: np.array([1.0, 0.0]), 2: np.array([0.0, 2.0])}
    out = aggregate(blocks, {1: 0.75, 2: 0.25})
    np.testing.assert_allclose(out, [0.75, 0.5])


def test_aggregate_is_order_independent():
    rng = np.random.default_rng(5)
    blocks = {j: rng.normal(size=17) for j in range(6)}
    w = uniform_weights(set(blocks))
    a = aggregate(blocks, w)
    b = aggregate(dict(reversed(list(blocks.items()))), w)
    np.testing.assert_array_equal(a, b)


def test_aggregate_identity_on_single_member():
    block = np.array([3.0, -1.0, 2.5])
    out = aggregate({5: block}, {5: 1.0})
    np.testing.assert_array_equal(out, block)
    assert out is not block


def test_aggregate_rejects_member_mismatch():
    blocks = {1: np.zeros(3), 2: np.zeros(3)}
    with pytest.raises(ShapeMismatchError):
        aggregate(blocks, {1: 1.0})


def test_aggregate_rejects_unnormalized_weights():
    blocks = {1: np.zeros(3), 2: np.zeros(3)}
    with pytest.raises(ValueError):
        aggregate(blocks, {1: 0.6, 2: 0.6})


def test_aggregate_rejects_length_mismatch():
    blocks = {1: np.zeros(3), 2: np.zeros(4)}
    with pytest.raises(ShapeMismatchError):
        aggregate(blocks, uniform_weights({1, 2}))
