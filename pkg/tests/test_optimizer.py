import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsmsynth.coupled import CouplingMatrix
from gsmsynth.errors import ConfigurationError, GradientUndefinedError
from gsmsynth.manifolds import DesignPoint, ExcitationSet, Gsm, us_random
from gsmsynth.optimizer import (DEFAULT_ALPHAS, Problem, StageError, StageSchedule, descend_stage, dof_strategy,
                                euclidean_gradient, initial_design, staged_optimize, write_trace_csv)
from gsmsynth.pattern import SENTINEL_COST, BeamSpec, far_field, scan_beam_table, sidelobe_set, total_cost, xpol_set
from gsmsynth.toyem import ArrayModel, build_cut_fields, coupling_matrix


def _parts(x):
    return [g.entries for g in x.class_gsms] + [x.excitations.static, x.excitations.dynamic]


def _build(parts, n_modes):
    return DesignPoint(tuple(Gsm(p, n_modes) for p in parts[:-2]), ExcitationSet(parts[-2], parts[-1]))


def fd_gradient(problem, x, alpha, h=1e-6):
    parts = _parts(x)
    n_modes = x.class_gsms[0].n_modes
    out = []
    for i, p in enumerate(parts):
        for idx in np.ndindex(p.shape):
            d = []
            for e in (1.0, 1j):
                plus = [q.copy() for q in parts]
                minus = [q.copy() for q in parts]
                plus[i][idx] += h * e
                minus[i][idx] -= h * e
                d.append((problem.cost(_build(plus, n_modes), alpha) - problem.cost(_build(minus, n_modes), alpha)) / (2 * h))
            out.append(d[0] + 1j * d[1])
    return np.array(out)


def toy_problem(rows=2, cols=2, thetas=(-10.0, 20.0), strategy="Alternating", margin_db=0.0):
    m = ArrayModel(rows, cols)
    return Problem(coupling_matrix(m), build_cut_fields(m), scan_beam_table(list(thetas), cols),
                   dof_strategy(strategy, rows, cols), margin_db=margin_db)


def random_point(problem, seed):
    rng = np.random.default_rng(seed)
    x = initial_design(problem.assignment, 2, 1, problem.n_states, seed)
    e = x.excitations
    st_ = e.static * np.exp(1j * rng.uniform(0, 2 * np.pi, e.static.shape))
    dy = e.dynamic * np.exp(1j * rng.uniform(0, 2 * np.pi, e.dynamic.shape))
    return DesignPoint(x.class_gsms, ExcitationSet(st_, dy))


# DOF strategies

def test_equal_elements():
    a = dof_strategy("EqualElements", 8, 8)
    assert a.n_classes == 1 and np.all(a.grid() == 1)


def test_point_symmetry():
    a = dof_strategy("PointSymmetry", 8, 8)
    assert a.n_classes == 32
    g = a.grid()
    assert g[0, 0] == g[7, 7] == 1
    assert np.array_equal(g, g[::-1, ::-1])
    assert all(a.members(d).size == 2 for d in range(32))
    assert dof_strategy("PointSymmetry", 3, 3).n_classes == 5


def test_edge_corner_internal():
    a = dof_strategy("EdgeCornerInternal", 8, 8)
    counts = np.bincount(a.labels)[1:]
    assert counts.tolist() == [36, 4, 24]
    g = a.grid()
    assert g[0, 0] == g[7, 0] == g[0, 7] == g[7, 7] == 2
    assert g[0, 3] == g[4, 7] == 3 and g[3, 3] == 1
    with pytest.raises(ConfigurationError):
        dof_strategy("EdgeCornerInternal", 2, 5)


def test_alternating():
    g = dof_strategy("Alternating", 3, 4).grid()
    assert g[0, 0] == 1 and g[0, 1] == 2 and g[1, 0] == 2 and g[1, 1] == 1


def test_unknown_strategy():
    with pytest.raises(ConfigurationError):
        dof_strategy("Random", 2, 2)
    with pytest.raises(ConfigurationError):
        dof_strategy("EqualElements", 0, 2)


# gradient

def test_single_uncoupled_element_closed_form():
    m = ArrayModel(1, 1)
    fields = build_cut_fields(m)
    beam = BeamSpec((0.0, 0.0), -15, -30, sidelobe_set(-30, 30), xpol_set())
    problem = Problem(CouplingMatrix.zeros(1, 2), fields, [beam], dof_strategy("EqualElements", 1, 1))
    rng = np.random.default_rng(0)
    g = us_random(3, rng, 2)
    st_ = np.array([[np.exp(0.3j)]])
    dy = np.array([[np.exp(-1.1j)]])
    x = DesignPoint((g,), ExcitationSet(st_, dy))
    c = fields.projection(beam.u_d, fields.indices([beam.target]))[0]
    v = st_[0, 0] * dy[0, 0]
    z = c @ g.T[:, 0] * v
    # -|c T v|^2: d/dT = -2 z conj(c) conj(v)
    expected_T = -2 * z * np.conj(c) * np.conj(v)
    eg = euclidean_gradient(x, problem, 0.0)
    assert np.allclose(eg.gsms[0][:2, 2], expected_T, rtol=0, atol=1e-14)
    assert np.all(eg.gsms[0][2:, :] == 0) and np.all(eg.gsms[0][:2, :2] == 0)
    fd = fd_gradient(problem, x, 0.0)
    an = eg.flatten()
    assert np.max(np.abs(fd - an)) <= 1e-7 * np.max(np.abs(an))


@pytest.mark.parametrize("alpha", [1.0, 1e3])
def test_full_gradient_against_central_differences(alpha):
    problem = toy_problem()
    x = random_point(problem, 11)
    an = euclidean_gradient(x, problem, alpha).flatten()
    fd = fd_gradient(problem, x, alpha)
    assert np.max(np.abs(fd - an)) / np.max(np.abs(fd)) <= 1e-5


@given(seed=st.integers(0, 2**31))
@settings(max_examples=8, deadline=None)
def test_gradient_property_random_instances(seed):
    rng = np.random.default_rng(seed)
    problem = toy_problem(2, 2, (float(rng.integers(-30, 0)), float(rng.integers(1, 30))),
                          ["EqualElements", "Alternating", "PointSymmetry"][seed % 3])
    x = random_point(problem, seed)
    alpha = float(rng.choice([0.0, 0.1, 10.0]))
    an = euclidean_gradient(x, problem, alpha).flatten()
    fd = fd_gradient(problem, x, alpha)
    assert np.max(np.abs(fd - an)) / np.max(np.abs(fd)) <= 1e-5


def _stationary_gain_point(problem, x):
    # align every column's contribution at the target of each beam
    e = x.excitations
    C = e.static.shape[1]
    dy = np.zeros_like(e.dynamic)
    for s, b in enumerate(problem.beams):
        zs = []
        for c in range(C):
            d = np.zeros((C, problem.n_states), dtype=complex)
            d[c, :] = 1
            f = problem.system(x).solve(ExcitationSet(e.static, d).port_waves()).f[:, s]
            zs.append(problem.fields.projection(b.u_d, problem.fields.indices([b.target]))[0] @ f)
        zs = np.array(zs)
        dy[:, s] = np.conj(zs) / np.linalg.norm(zs)
    return DesignPoint(x.class_gsms, ExcitationSet(e.static, dy))


def test_phase_rotation_directions_at_stationary_point():
    problem = toy_problem(2, 3, (0.0, 15.0), "EqualElements")
    x = _stationary_gain_point(problem, random_point(problem, 3))
    eg = euclidean_gradient(x, problem, 0.0)
    dy = x.excitations.dynamic
    for c in range(dy.shape[0]):
        for s in range(dy.shape[1]):
            direction = np.zeros_like(dy)
            direction[c, s] = 1j * dy[c, s]
            assert abs(np.real(np.vdot(eg.dynamic, direction))) <= 1e-8
    st_ = x.excitations.static
    # a global phase of a static column is absorbed by the aligned dynamic weights
    for c in range(st_.shape[1]):
        direction = np.zeros_like(st_)
        direction[:, c] = 1j * st_[:, c]
        ddy = np.zeros_like(dy)
        ddy[c, :] = -1j * dy[c, :]
        assert abs(np.real(np.vdot(eg.static, direction)) + np.real(np.vdot(eg.dynamic, ddy))) <= 1e-8


def test_sentinel_raises_gradient_undefined():
    problem = toy_problem()
    decoupled = Gsm(np.block([[np.eye(2), np.zeros((2, 1))], [np.zeros((1, 2)), np.eye(1)]]), 2)
    x = DesignPoint((decoupled, decoupled), ExcitationSet.uniform(2, 2, 2))
    assert problem.cost(x, 1.0) == 2 * SENTINEL_COST
    with pytest.raises(GradientUndefinedError):
        euclidean_gradient(x, problem, 1.0)


def test_cost_matches_pattern_module():
    problem = toy_problem(2, 3, (-20.0, 0.0, 25.0), "PointSymmetry")
    x = random_point(problem, 2)
    F = far_field(problem.coefficients(x), problem.fields)
    for alpha in (0.0, 0.5, 50.0):
        ref = total_cost(F, problem.beams, alpha, problem.fields.angles)
        assert abs(problem.cost(x, alpha) - ref) <= 1e-12 * abs(ref)


# descent

def test_single_element_gain_reaches_rayleigh_bound():
    m = ArrayModel(1, 1)
    fields = build_cut_fields(m)
    beam = BeamSpec((20.0, 0.0), -15, -30, sidelobe_set(-10, 50), xpol_set())
    problem = Problem(CouplingMatrix.zeros(1, 2), fields, [beam], dof_strategy("EqualElements", 1, 1))
    c = fields.projection(beam.u_d, fields.indices([beam.target]))[0]
    bound = np.linalg.eigvalsh(np.outer(np.conj(c), c)).max()
    x0 = initial_design(problem.assignment, 2, 1, 1, seed=4)
    x, trace = descend_stage(x0, 0.0, problem, tol=1e-10, max_iter=2000)
    assert -trace.records[-1].cost >= 0.99 * bound
    assert -trace.records[-1].cost <= bound * (1 + 1e-12)
    assert x.max_residual() <= 1e-9


def test_descent_from_stationary_point_stops_quickly():
    problem = toy_problem()
    x0 = random_point(problem, 5)
    x1, _ = descend_stage(x0, 0.0, problem, tol=1e-12, max_iter=3000)
    x2, tr = descend_stage(x1, 0.0, problem, tol=1e-4, max_iter=100)
    assert len(tr.records) - 1 <= 2
    assert abs(tr.records[-1].cost - tr.records[0].cost) <= 1e-4


def test_accepted_costs_never_increase():
    problem = toy_problem(3, 3, (-15.0, 10.0), "PointSymmetry")
    x0 = random_point(problem, 6)
    for alpha in (0.0, 1.0, 1e3):
        x, tr = descend_stage(x0, alpha, problem, max_iter=60)
        c = tr.costs()
        assert np.all(np.diff(c) <= 0)
        assert x.max_residual() <= 1e-9


def test_single_stage_schedule_equals_descend_stage():
    problem = toy_problem()
    x0 = random_point(problem, 7)
    xa, ta = descend_stage(x0, 0.0, problem, max_iter=50)
    xb, tb = staged_optimize(x0, StageSchedule((0.0,), max_iter=50), problem)
    assert [r.cost for r in ta.records] == [r.cost for r in tb.records]
    assert all(np.array_equal(g.entries, h.entries) for g, h in zip(xa.class_gsms, xb.class_gsms))


def test_staged_run_warm_starts_and_records_all_stages():
    problem = toy_problem(2, 3, (-10.0, 15.0), "Alternating", margin_db=0.01)
    x0 = initial_design(problem.assignment, 2, 1, 2, 1)
    finals = []
    x, tr = staged_optimize(x0, StageSchedule(max_iter=100), problem, callback=lambda i, x, t: finals.append(x))
    assert len(tr.stage_starts) == 8 and sorted({r.stage for r in tr.records}) == list(range(8))
    for i in range(1, 8):
        first = tr.stage(i)[0].cost
        assert abs(first - problem.cost(finals[i - 1], DEFAULT_ALPHAS[i])) <= 1e-12 * max(1.0, abs(first))
        assert np.all(np.diff(tr.costs(i)) <= 0)


def test_stage_errors_carry_the_index():
    problem = toy_problem()
    bad = initial_design(dof_strategy("EqualElements", 2, 2), 2, 1, 2)
    with pytest.raises(StageError) as info:
        staged_optimize(bad, StageSchedule((0.0, 1.0)), problem)
    assert info.value.stage == 0


def test_determinism():
    problem = toy_problem(2, 2, (-10.0, 20.0), "PointSymmetry")
    runs = []
    for _ in range(2):
        x0 = initial_design(problem.assignment, 2, 1, 2, 42)
        _, tr = staged_optimize(x0, StageSchedule(max_iter=40), problem)
        runs.append([(r.stage, r.iteration, r.cost, r.grad_norm, r.step) for r in tr.records])
    assert runs[0] == runs[1]


def test_schedule_validation():
    assert StageSchedule().alphas == DEFAULT_ALPHAS
    for bad in ((), (0.0, 1.0, 1.0), (-1.0,), (0.0, float("inf"))):
        with pytest.raises(ConfigurationError):
            StageSchedule(bad)
    with pytest.raises(ConfigurationError):
        StageSchedule(tol=0.0)


def test_trace_csv(tmp_path):
    problem = toy_problem()
    _, tr = descend_stage(random_point(problem, 1), 0.0, problem, max_iter=5)
    write_trace_csv(tr, tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["stage", "iter", "cost", "grad_norm", "step", "elapsed_s"]
    assert float(rows[1][2]) == tr.records[0].cost
    assert len(rows) == len(tr.records) + 1


def test_margin_tightens_targets():
    loose = toy_problem(margin_db=0.0)
    tight = toy_problem(margin_db=1.0)
    x = random_point(loose, 0)
    assert tight.cost(x, 1.0) >= loose.cost(x, 1.0)
    assert np.array_equal(tight.penalty_arguments(x), loose.penalty_arguments(x))
