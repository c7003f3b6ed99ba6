import numpy as np
import pytest
from hypothesis import given, strategies as st

from dflsim.core import (ConfigError, ExperimentConfig, ModelParams, ShapeMismatchError,
                         Topology, check_finite, cosine_sim, fully_connected,
                         partially_connected, seeded_rng, stream_seed, substream,
                         topology_from_edges, DivergedError)


# ---------------------------------------------------------------------------
# cosine similarity
# ---------------------------------------------------------------------------

def test_cosine_parallel_antiparallel_orthogonal():
    a = np.array([1.0, 2.0, 3.0])
    assert cosine_sim(a, 2.5 * a) == pytest.approx(1.0)
    assert cosine_sim(a, -a) == pytest.approx(-1.0)
    assert cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 4.0])) == pytest.approx(0.0)


def test_cosine_degenerate_input_scores_zero():
    assert cosine_sim(np.zeros(4), np.ones(4)) == 0.0
    assert cosine_sim(np.full(4, 1e-15), np.ones(4)) == 0.0


def test_cosine_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        cosine_sim(np.ones(3), np.ones(4))


@given(st.integers(0, 2**32 - 1))
def test_cosine_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=6)
    b = rng.normal(size=6)
    s = cosine_sim(a, b)
    assert s == cosine_sim(b, a)
    assert -1.0 <= s <= 1.0
    # scale invariance
    assert cosine_sim(3.0 * a, b) == pytest.approx(s, abs=1e-12)


# ---------------------------------------------------------------------------
# rng streams
# ---------------------------------------------------------------------------

def test_substream_repeatable_and_distinct():
    a1 = substream(7, 1, 2, 3).normal(size=5)
    a2 = substream(7, 1, 2, 3).normal(size=5)
    b = substream(7, 1, 2, 4).normal(size=5)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_substream_key_order_matters():
    assert not np.array_equal(substream(0, 1, 2).normal(size=4),
                              substream(0, 2, 1).normal(size=4))


def test_stream_seed_stable():
    assert stream_seed(42, 3, 1) == stream_seed(42, 3, 1)
    assert stream_seed(42, 3, 1) != stream_seed(42, 3, 2)


def test_seeded_rng_repeatable():
    assert seeded_rng(5).integers(1 << 30) == seeded_rng(5).integers(1 << 30)


# ---------------------------------------------------------------------------
# params and finiteness
# ---------------------------------------------------------------------------

def test_params_copy_is_deep():
    p = ModelParams(np.ones(3), np.zeros(2))
    q = p.copy()
    q.w[0] = 99.0
    assert p.w[0] == 1.0


def test_check_finite_raises_with_location():
    p = ModelParams(np.array([1.0, np.inf]), np.zeros(2))
    with pytest.raises(DivergedError, match="diverged"):
        check_finite(p, "client 3", round_index=7)
    try:
        check_finite(p, "client 3", round_index=7)
    except DivergedError as e:
        assert e.round_index == 7


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------

def test_fully_connected_neighbors():
    topo = fully_connected(4)
    assert topo.neighbors(1) == [0, 2, 3]
    assert topo.available_neighbors(1, 0) == [0, 2, 3]


def test_topology_rejects_asymmetric_and_self_loops():
    bad = np.zeros((3, 3), dtype=bool)
    bad[0, 1] = True
    with pytest.raises(ValueError):
        Topology(bad)
    loop = np.zeros((3, 3), dtype=bool)
    loop[1, 1] = True
    with pytest.raises(ValueError):
        Topology(loop)


def test_partially_connected_density():
    topo = partially_connected(40, 0.5, substream(0, 99))
    n_edges = topo.adjacency.sum() / 2
    possible = 40 * 39 / 2
    assert 0.35 < n_edges / possible < 0.65
    assert np.array_equal(topo.adjacency, topo.adjacency.T)


def test_partially_connected_same_stream_is_identical():
    a = partially_connected(10, 0.4, substream(1, 5))
    b = partially_connected(10, 0.4, substream(1, 5))
    assert np.array_equal(a.adjacency, b.adjacency)


def test_topology_from_edges():
    topo = topology_from_edges(4, [(0, 1), (2, 3)])
    assert topo.neighbors(0) == [1]
    assert topo.neighbors(3) == [2]
    with pytest.raises(ValueError):
        topology_from_edges(3, [(1, 1)])


def test_availability_hides_clients():
    topo = Topology(fully_connected(3).adjacency,
                    availability=lambda j, t: not (j == 2 and t == 1))
    assert topo.available_neighbors(0, 0) == [1, 2]
    assert topo.available_neighbors(0, 1) == [1]


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_config_validate_names_offending_key():
    with pytest.raises(ConfigError, match="tau"):
        ExperimentConfig(tau=0.0).validate()
    with pytest.raises(ConfigError, match="gamma"):
        ExperimentConfig(gamma=1.5).validate()
    with pytest.raises(ConfigError, match="upsilon"):
        ExperimentConfig(upsilon=-1.0).validate()
    with pytest.raises(ConfigError, match="eta"):
        ExperimentConfig(eta_w=0.0).validate()
    with pytest.raises(ConfigError, match="t_agg"):
        ExperimentConfig(t_agg=0.0).validate()


def test_config_defaults_are_valid():
    ExperimentConfig().validate()


def test_run_id_depends_on_config_and_seed():
    a = ExperimentConfig(seed=0)
    b = ExperimentConfig(seed=0)
    c = ExperimentConfig(seed=1)
    d = ExperimentConfig(seed=0, tau=0.4)
    assert a.run_id() == b.run_id()
    assert a.run_id() != c.run_id()
    assert a.run_id() != d.run_id()


def test_with_overrides_leaves_original_untouched():
    a = ExperimentConfig(m=5)
    b = a.with_overrides(m=9)
    assert a.m == 5 and b.m == 9
