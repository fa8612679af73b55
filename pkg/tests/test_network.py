import numpy as np
import pytest

from consopt.network import (
    ConstructionError, CyclicSchedule, RandomSchedule, StaticSchedule,
    WeightMatrix, build_metropolis, build_two_link_matrix, complete_graph,
    contraction_coefficient, graph, is_connected, is_doubly_stochastic,
    is_q_connected, is_scrambling, path_graph, ring_graph, schedule_from_dict,
    support_graph,
)
from consopt.problem import ConfigError
from consopt.privacy import SIX_VIRTUAL_PATTERN


def random_connected_graph(rng, n, p):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    while True:
        mask = rng.random(len(pairs)) < p
        g = graph(n, [e for e, keep in zip(pairs, mask) if keep])
        if is_connected(g):
            return g


# ---------------------------------------------------------------------------
# metropolis weights


def test_metropolis_two_agents():
    m = build_metropolis(complete_graph(2))
    np.testing.assert_array_equal(m.entries, [[0.5, 0.5], [0.5, 0.5]])


def test_metropolis_path_graph_hand_values():
    m = build_metropolis(path_graph(3)).entries
    third = 1.0 / 3.0
    assert m[0, 1] == third and m[1, 2] == third
    assert m[0, 0] == pytest.approx(2 * third, abs=1e-15)
    assert m[1, 1] == pytest.approx(third, abs=1e-15)
    assert m[2, 2] == pytest.approx(2 * third, abs=1e-15)
    assert m[0, 2] == 0.0


def test_metropolis_edgeless_is_identity():
    m = build_metropolis(graph(3, []))
    np.testing.assert_array_equal(m.entries, np.eye(3))


def test_metropolis_support_matches_graph():
    g = random_connected_graph(np.random.default_rng(2), 8, 0.3)
    m = build_metropolis(g)
    assert support_graph(m.entries).edges == g.edges


def test_metropolis_eta_floor_validation():
    with pytest.raises(ConfigError):
        build_metropolis(complete_graph(3), eta_floor=0.5)  # above 1/S
    with pytest.raises(ConfigError):
        build_metropolis(complete_graph(3), eta_floor=0.0)


# ---------------------------------------------------------------------------
# the two-link virtual matrix


def test_two_link_matrix_reproduces_six_agent_layout():
    k = 0.25
    m = build_two_link_matrix(SIX_VIRTUAL_PATTERN, k).entries
    d = 1 - 2 * k
    want = np.array([
        [d, 0, k, 0, 0, k],
        [0, d, k, 0, 0, k],
        [0, k, d, 0, k, 0],
        [0, k, 0, d, k, 0],
        [k, 0, 0, k, d, 0],
        [k, 0, 0, k, 0, d],
    ])
    np.testing.assert_array_equal(m, want)


def test_two_link_matrix_doubly_stochastic_at_generic_kappa():
    m = build_two_link_matrix(SIX_VIRTUAL_PATTERN, 0.3)
    assert is_doubly_stochastic(m.entries, 1e-12)


def test_two_link_matrix_half_kappa_zero_diagonal():
    m = build_two_link_matrix(SIX_VIRTUAL_PATTERN, 0.5).entries
    assert np.all(np.diag(m) == 0.0)
    assert is_doubly_stochastic(m, 1e-12)


def test_two_link_matrix_kappa_range():
    for bad in (0.0, -0.1, 0.6):
        with pytest.raises(ConfigError):
            build_two_link_matrix(SIX_VIRTUAL_PATTERN, bad)


def test_two_link_matrix_rejects_bad_row_degree():
    with pytest.raises(ConfigError):
        build_two_link_matrix(((1, 1), (0, 2), (0, 1)), 0.25)
    with pytest.raises(ConfigError):
        build_two_link_matrix(((0, 1), (0, 2), (0, 1)), 0.25)  # self link in row 0


def test_two_link_matrix_rejects_unbalanced_columns():
    with pytest.raises(ConstructionError):
        build_two_link_matrix(((1, 2), (0, 2), (0, 1), (0, 1)), 0.25)


# ---------------------------------------------------------------------------
# validators


def test_is_doubly_stochastic_examples():
    assert is_doubly_stochastic(np.eye(4))
    assert not is_doubly_stochastic(np.array([[0.6, 0.4], [0.3, 0.7]]))
    assert is_doubly_stochastic(build_two_link_matrix(SIX_VIRTUAL_PATTERN, 0.25).entries)


def test_is_scrambling_examples():
    assert is_scrambling(np.full((4, 4), 0.25))
    assert not is_scrambling(np.eye(3))
    m = build_two_link_matrix(SIX_VIRTUAL_PATTERN, 0.25).entries
    assert not is_scrambling(m)
    # rows 0 and 3 have disjoint supports, per the pairwise-support oracle
    assert not np.any((m[0] > 0) & (m[3] > 0))


def test_contraction_examples():
    assert contraction_coefficient(np.full((3, 3), 1 / 3)) == 0.0
    assert contraction_coefficient(np.eye(3)) == 1.0
    lazy = np.array([[0.75, 0.25], [0.25, 0.75]])
    assert contraction_coefficient(lazy) == 0.5
    assert contraction_coefficient(build_two_link_matrix(SIX_VIRTUAL_PATTERN, 0.25)) == 1.0


def test_contraction_equals_half_l1_distance():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        m = build_metropolis(random_connected_graph(rng, n, 0.4)).entries
        half_l1 = max(
            0.5 * float(np.abs(m[i] - m[j]).sum())
            for i in range(n) for j in range(i + 1, n)
        )
        assert contraction_coefficient(m) == pytest.approx(half_l1, abs=1e-14)


def test_contraction_below_one_iff_scrambling():
    rng = np.random.default_rng(8)
    mats = [np.eye(4), np.full((5, 5), 0.2),
            build_two_link_matrix(SIX_VIRTUAL_PATTERN, 0.25).entries]
    for _ in range(40):
        n = int(rng.integers(2, 10))
        mats.append(build_metropolis(random_connected_graph(rng, n, 0.35)).entries)
    for m in mats:
        assert (contraction_coefficient(m) < 1.0) == is_scrambling(m)


def test_is_connected():
    assert is_connected(graph(3, [(0, 1), (1, 2), (0, 2)]))
    assert not is_connected(graph(2, []))
    assert is_connected(graph(1, []))


def test_graph_rejects_self_loops_and_range():
    with pytest.raises(ConfigError):
        graph(3, [(1, 1)])
    with pytest.raises(ConfigError):
        graph(3, [(0, 3)])


# ---------------------------------------------------------------------------
# fusion contract on stacked states


def test_fusion_sum_nonexpansive_for_any_doubly_stochastic_matrix():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n, d = int(rng.integers(2, 8)), int(rng.integers(1, 5))
        m = build_metropolis(random_connected_graph(rng, n, 0.4)).entries
        x = rng.normal(0, 3, (n, d))
        y = rng.normal(0, 3, d)
        v = m @ x
        assert np.sum((v - y) ** 2) <= np.sum((x - y) ** 2) + 1e-9


# ---------------------------------------------------------------------------
# schedules


def test_q_connected_static_schedule():
    s = StaticSchedule(build_metropolis(ring_graph(4)))
    assert is_q_connected(s, 1, 8)
    assert is_q_connected(s, 3, 8)


def test_q_connected_alternating_edges():
    m1 = build_metropolis(graph(3, [(0, 1)]))
    m2 = build_metropolis(graph(3, [(1, 2)]))
    s = CyclicSchedule((m1, m2))
    assert is_q_connected(s, 2, 12)
    assert not is_q_connected(s, 1, 12)


def test_q_connected_isolated_agent_fails():
    m = build_metropolis(graph(3, [(0, 1)]))
    s = StaticSchedule(m)
    assert not is_q_connected(s, 4, 16)


def test_q_connected_validates_window():
    s = StaticSchedule(build_metropolis(complete_graph(2)))
    with pytest.raises(ConfigError):
        is_q_connected(s, 0, 4)
    with pytest.raises(ConfigError):
        is_q_connected(s, 5, 4)


def test_random_schedule_reproducible_bitwise():
    a = RandomSchedule(5, 0.5, seed=123)
    b = RandomSchedule(5, 0.5, seed=123)
    for k in (0, 1, 17, 500):
        np.testing.assert_array_equal(a.matrix_at(k).entries, b.matrix_at(k).entries)
    assert not np.array_equal(a.matrix_at(0).entries,
                              RandomSchedule(5, 0.5, seed=124).matrix_at(0).entries)


def test_random_schedule_per_round_validity():
    s = RandomSchedule(6, 0.4, seed=9)
    for k in range(20):
        m = s.matrix_at(k)
        assert is_doubly_stochastic(m.entries, 1e-12)
        assert is_connected(support_graph(m.entries))


def test_cyclic_schedule_indexing():
    m1 = build_metropolis(graph(3, [(0, 1)]))
    m2 = build_metropolis(graph(3, [(1, 2)]))
    s = CyclicSchedule((m1, m2))
    assert s.matrix_at(0) is m1 and s.matrix_at(1) is m2 and s.matrix_at(4) is m1
    assert s.contraction_sup() == 1.0  # both matrices are non-scrambling


def test_schedule_from_dict_variants():
    s = schedule_from_dict({"variant": "static", "matrix": [[0.5, 0.5], [0.5, 0.5]]})
    assert isinstance(s, StaticSchedule) and s.n_agents == 2
    s = schedule_from_dict({
        "variant": "kappa",
        "pattern": [list(r) for r in SIX_VIRTUAL_PATTERN],
        "kappa": 0.25,
    })
    assert s.n_agents == 6
    s = schedule_from_dict({"variant": "random", "n_agents": 4,
                            "edge_probability": 0.6, "seed": 5})
    assert isinstance(s, RandomSchedule)
    with pytest.raises(ConfigError, match="matrix"):
        schedule_from_dict({"variant": "static"})
    with pytest.raises(ConfigError):
        schedule_from_dict({"variant": "nope"})


# ---------------------------------------------------------------------------
# weight-matrix invariants


def test_weight_matrix_rejects_bad_input():
    with pytest.raises(ConfigError):
        WeightMatrix(np.array([[0.9, 0.2], [0.2, 0.9]]), 0.1)  # sums 1.1
    with pytest.raises(ConfigError):
        WeightMatrix(np.array([[1.2, -0.2], [-0.2, 1.2]]), 0.1)  # negative
    with pytest.raises(ConfigError):
        WeightMatrix(np.array([[0.999, 0.001], [0.001, 0.999]]), 0.5)  # below floor


def test_builders_emit_valid_matrices_at_tight_tolerance():
    rng = np.random.default_rng(13)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        g = random_connected_graph(rng, n, 0.5)
        m = build_metropolis(g)
        assert is_doubly_stochastic(m.entries, 1e-12)
        assert np.all(m.entries[m.entries > 0] >= m.eta * (1 - 1e-9))
