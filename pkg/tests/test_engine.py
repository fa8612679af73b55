import numpy as np
import pytest

from consopt.engine import (
    EngineError, RunConfig, StepSchedule, descend, fuse, initial_states,
    read_trace_jsonl, run, step_size, write_trace_csv, write_trace_jsonl,
)
from consopt.network import (
    CyclicSchedule, StaticSchedule, WeightMatrix, build_metropolis,
    build_two_link_matrix, complete_graph, graph,
)
from consopt.privacy import SIX_VIRTUAL_PATTERN
from consopt.problem import Box, ConfigError, Problem, polynomial, quadratic

BOX1 = Box(np.array([-1.0]), np.array([1.0]))


def single_agent_problem(fs=BOX1):
    return Problem(1, (quadratic("f", [[2.0]], [0.0], bounds_for=fs),), fs)


def uniform_schedule(n):
    return StaticSchedule(WeightMatrix(np.full((n, n), 1.0 / n), 1.0 / (n + 1)))


def triangle_indefinite_problem():
    fs = Box(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    comps = (
        quadratic("f0", [[2.0, 0.0], [0.0, -0.5]], [0.2, 0.0], 0.0, bounds_for=fs),
        quadratic("f1", [[-0.5, 0.0], [0.0, 2.0]], [0.0, 0.2], 0.0, bounds_for=fs),
        quadratic("f2", [[0.0, 0.5], [0.5, 0.0]], [-0.1, -0.1], 0.0, bounds_for=fs),
    )
    return Problem(2, comps, fs)


# ---------------------------------------------------------------------------
# step sizes


def test_step_size_values():
    assert step_size(StepSchedule(1.0, 1.0, 1.0), 0) == 1.0
    assert step_size(StepSchedule(1.0, 1.0, 1.0), 9) == 0.1
    assert step_size(StepSchedule(2.0, 4.0, 0.75), 0) == pytest.approx(2 / 4 ** 0.75, rel=1e-15)


def test_step_schedule_monotone_nonincreasing():
    s = StepSchedule(0.7, 3.0, 0.8)
    vals = s.at(np.arange(500))
    assert np.all(vals > 0)
    assert np.all(np.diff(vals) <= 0)


@pytest.mark.parametrize("a,b,p", [(0.0, 1.0, 1.0), (1.0, 0.5, 1.0),
                                   (1.0, 1.0, 0.5), (1.0, 1.0, 1.1)])
def test_step_schedule_rejects_bad_params(a, b, p):
    with pytest.raises(ConfigError):
        StepSchedule(a, b, p)


# ---------------------------------------------------------------------------
# fuse


def test_fuse_identity():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(fuse(x, np.eye(2)), x)


def test_fuse_uniform_two_agents():
    out = fuse(np.array([[0.0], [2.0]]), np.full((2, 2), 0.5))
    np.testing.assert_array_equal(out, [[1.0], [1.0]])


def test_fuse_basis_states_reproduce_matrix_rows():
    m = build_two_link_matrix(SIX_VIRTUAL_PATTERN, 0.25)
    out = fuse(np.eye(6), m)
    np.testing.assert_array_equal(out, m.entries)


def test_fuse_preserves_average():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n, d = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        m = build_metropolis(complete_graph(n))
        x = rng.normal(0, 2, (n, d))
        v = fuse(x, m)
        assert np.linalg.norm(v.mean(axis=0) - x.mean(axis=0)) <= 1e-12


def test_fuse_shape_mismatch():
    with pytest.raises(ConfigError):
        fuse(np.zeros((3, 1)), np.eye(2))


# ---------------------------------------------------------------------------
# descend


def test_descend_single_agent_quadratic():
    prob = single_agent_problem()
    cfg = RunConfig(prob, uniform_schedule(1), StepSchedule(0.5), 1)
    out = descend(np.array([[1.0]]), 0, cfg)
    np.testing.assert_array_equal(out, [[0.0]])


def test_descend_projection_active():
    fs = Box(np.array([0.5]), np.array([1.0]))
    prob = single_agent_problem(fs)
    cfg = RunConfig(prob, uniform_schedule(1), StepSchedule(0.5), 1)
    out = descend(np.array([[1.0]]), 0, cfg)
    np.testing.assert_array_equal(out, [[0.5]])


def test_descend_nonconvex_component():
    fs = Box(np.array([-2.0]), np.array([2.0]))
    prob = Problem(1, (polynomial("q", [[0.0, 0.0, -3.0, 0.0, 1.0]], bounds_for=fs),), fs)
    cfg = RunConfig(prob, uniform_schedule(1), StepSchedule(0.1, 1.0, 1.0), 1)
    out = descend(np.array([[1.0]]), 0, cfg)  # gradient at 1 is -2
    np.testing.assert_allclose(out, [[1.2]], rtol=1e-15)


# ---------------------------------------------------------------------------
# full runs


def test_run_single_agent_one_iteration():
    prob = single_agent_problem()
    cfg = RunConfig(prob, uniform_schedule(1), StepSchedule(0.5, 1.0, 1.0), 1,
                    initial_states=np.array([[1.0]]))
    tr = run(cfg)
    np.testing.assert_array_equal(tr.states[-1], [[0.0]])
    assert tr.ks.tolist() == [0, 1]


def test_run_symmetric_pair_keeps_average_at_zero():
    fs = Box(np.array([-1.0]), np.array([1.0]))
    comps = tuple(quadratic(f"f{i}", [[1.0]], [0.0], bounds_for=fs) for i in range(2))
    prob = Problem(1, comps, fs)
    cfg = RunConfig(prob, uniform_schedule(2), StepSchedule(1.0), 50,
                    initial_states=np.array([[0.8], [-0.8]]))
    tr = run(cfg)
    np.testing.assert_allclose(tr.x_bar, 0.0, atol=1e-15)


def test_run_triangle_nonconvex_decreases_objective():
    from consopt.analysis import centralized_solve
    prob = triangle_indefinite_problem()
    sched = StaticSchedule(build_metropolis(complete_graph(3)))
    cfg = RunConfig(prob, sched, StepSchedule(1.0), 4000, seed=5, record_every=10)
    tr = run(cfg)
    oracle = centralized_solve(prob)
    gaps = tr.f_bar - oracle.f_star
    assert gaps[-1] < 1e-3
    assert np.mean(gaps[-10:]) < np.mean(gaps[:10])


def test_run_feasibility_and_fusion_invariants():
    prob = triangle_indefinite_problem()
    sched = StaticSchedule(build_metropolis(complete_graph(3)))
    cfg = RunConfig(prob, sched, StepSchedule(1.0), 500, seed=1)
    tr = run(cfg)
    flat = tr.states.reshape(-1, prob.dimension)
    assert np.all(prob.feasible_set.distance_many(flat) <= 1e-12)
    assert tr.summary.max_average_drift <= 1e-12
    assert tr.summary.max_nonexpansive_slack <= 1e-9


def test_run_descent_displacement_bounded():
    # one manual round: ||x_{k+1} - v_k|| <= alpha_k * L_J
    prob = triangle_indefinite_problem()
    sched = StaticSchedule(build_metropolis(complete_graph(3)))
    cfg = RunConfig(prob, sched, StepSchedule(1.0), 1, seed=2)
    x0 = initial_states(cfg)
    v = fuse(x0, sched.matrix_at(0))
    x1 = descend(v, 0, cfg)
    alpha = step_size(cfg.steps, 0)
    for j, c in enumerate(prob.components):
        assert np.linalg.norm(x1[j] - v[j]) <= alpha * c.grad_bound + 1e-12


def test_run_deterministic_and_bitwise_exports(tmp_path):
    prob = triangle_indefinite_problem()
    sched = StaticSchedule(build_metropolis(complete_graph(3)))
    cfg = RunConfig(prob, sched, StepSchedule(1.0), 300, seed=9, record_every=7)
    t1, t2 = run(cfg), run(cfg)
    np.testing.assert_array_equal(t1.states, t2.states)
    np.testing.assert_array_equal(t1.f_bar, t2.f_bar)
    for name, tr in (("a", t1), ("b", t2)):
        write_trace_jsonl(tr, tmp_path / f"{name}.jsonl")
        write_trace_csv(tr, tmp_path / f"{name}.csv")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_run_zero_iterations_keeps_initial_record():
    prob = single_agent_problem()
    cfg = RunConfig(prob, uniform_schedule(1), StepSchedule(1.0), 0,
                    initial_states=np.array([[0.25]]))
    tr = run(cfg)
    assert tr.n_records == 1 and tr.ks[0] == 0
    np.testing.assert_array_equal(tr.states[0], [[0.25]])


def test_run_decimation_always_keeps_terminal():
    prob = single_agent_problem()
    cfg = RunConfig(prob, uniform_schedule(1), StepSchedule(1.0), 25,
                    record_every=10, initial_states=np.array([[1.0]]))
    tr = run(cfg)
    assert tr.ks.tolist() == [0, 10, 20, 25]


def test_run_aborts_on_nonfinite_gradient():
    fs = Box(np.array([-2.0]), np.array([2.0]))
    huge = polynomial("boom", [[0.0, 1e308, 1e308]], grad_bound=1e300, lipschitz=1e300)
    prob = Problem(1, (huge,), fs)
    cfg = RunConfig(prob, uniform_schedule(1), StepSchedule(1.0), 5,
                    initial_states=np.array([[1.5]]))
    with pytest.raises(EngineError, match=r"agent 0 at iteration 0"):
        run(cfg)


def test_run_warns_on_non_scrambling_schedule():
    prob = triangle_indefinite_problem()
    m1 = build_metropolis(graph(3, [(0, 1)]))
    m2 = build_metropolis(graph(3, [(1, 2)]))
    cfg = RunConfig(prob, CyclicSchedule((m1, m2)), StepSchedule(1.0), 10, seed=0)
    with pytest.warns(RuntimeWarning, match="not scrambling"):
        tr = run(cfg)
    assert tr.bound is None and not tr.summary.bound_enabled


def test_run_records_bound_for_scrambling_schedule():
    prob = triangle_indefinite_problem()
    cfg = RunConfig(prob, StaticSchedule(build_metropolis(complete_graph(3))),
                    StepSchedule(1.0), 20, seed=0)
    tr = run(cfg)
    assert tr.summary.bound_enabled and tr.bound is not None
    assert np.all(tr.max_delta <= tr.bound + 1e-9)


def test_run_config_validation():
    prob = single_agent_problem()
    with pytest.raises(ConfigError):
        RunConfig(prob, uniform_schedule(2), StepSchedule(1.0), 10)
    with pytest.raises(ConfigError):
        RunConfig(prob, uniform_schedule(1), StepSchedule(1.0), 10,
                  initial_states=np.array([[5.0]]))  # outside the set
    with pytest.raises(ConfigError):
        RunConfig(prob, uniform_schedule(1), StepSchedule(1.0), -1)


# ---------------------------------------------------------------------------
# trace serialization


def test_trace_jsonl_roundtrip(tmp_path):
    prob = triangle_indefinite_problem()
    cfg = RunConfig(prob, StaticSchedule(build_metropolis(complete_graph(3))),
                    StepSchedule(1.0), 40, seed=3, record_every=4)
    tr = run(cfg)
    path = tmp_path / "trace.jsonl"
    write_trace_jsonl(tr, path)
    back = read_trace_jsonl(path)
    np.testing.assert_array_equal(back.ks, tr.ks)
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.f_bar, tr.f_bar)
    np.testing.assert_array_equal(back.bound, tr.bound)


def test_trace_csv_layout(tmp_path):
    prob = single_agent_problem()
    cfg = RunConfig(prob, uniform_schedule(1), StepSchedule(1.0), 2,
                    initial_states=np.array([[1.0]]))
    tr = run(cfg)
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,alpha,f_bar,max_disagreement,max_delta,bound,x_0_0"
    assert len(lines) == 1 + tr.n_records
    first = lines[1].split(",")
    assert first[0] == "0" and float(first[2]) == tr.f_bar[0]
