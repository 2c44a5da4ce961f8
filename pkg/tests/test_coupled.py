import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_coupling, random_elements, random_waves
from gsmsynth.coupled import (CouplingMatrix, CoupledSystem, DofAssignment, apply_phase_shift,
                              assemble_element_gsms, shift_elements, solve_coupled)
from gsmsynth.errors import AssignmentError, DimensionError, InvalidInputError, ResonanceError
from gsmsynth.manifolds import Gsm, us_random


def _scaled_instance(rng, K=4, N=2, P=1, radius=0.8):
    els = random_elements(K, N, P, rng)
    G = random_coupling(K, N, rng)
    sm = np.zeros((K * N, K * N), dtype=complex)
    for k, e in enumerate(els):
        sm[k * N:(k + 1) * N, k * N:(k + 1) * N] = e.S - np.eye(N)
    rho = np.max(np.abs(np.linalg.eigvals(sm @ G.matrix)))
    G = CouplingMatrix(G.matrix * radius / rho, K, N)
    return els, G, sm


def _neumann(els, G, sm, v, terms=200):
    K, N = G.n_elements, G.n_modes
    P = els[0].n_ports
    tv = np.concatenate([e.T @ v[k * P:(k + 1) * P] for k, e in enumerate(els)])
    op = sm @ G.matrix
    f = np.zeros_like(tv)
    term = tv.copy()
    for _ in range(terms):
        f += term
        term = op @ term
    return f


def test_direct_solve_matches_neumann_series(rng):
    worst = 0.0
    for _ in range(20):
        els, G, sm = _scaled_instance(rng, K=int(rng.integers(2, 6)), radius=rng.uniform(0.1, 0.89))
        v = random_waves(len(els), 3, rng)
        f = solve_coupled(els, G, v).f
        ref = _neumann(els, G, sm, v)
        worst = max(worst, np.linalg.norm(f - ref) / np.linalg.norm(ref))
    assert worst <= 1e-8


@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 6), N=st.integers(1, 3), P=st.integers(1, 2))
@settings(max_examples=40)
def test_uncoupled_power_balance(seed, K, N, P):
    rng = np.random.default_rng(seed)
    els = random_elements(K, N, P, rng)
    v = random_waves(K * P, 2, rng)
    sol = solve_coupled(els, CouplingMatrix.zeros(K, N), v)
    lhs = np.sum(np.abs(sol.f) ** 2, axis=0) + np.sum(np.abs(sol.w) ** 2, axis=0)
    rhs = np.sum(np.abs(v) ** 2, axis=0)
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * rhs)


def test_incident_waves_and_port_outputs(rng):
    els, G, _ = _scaled_instance(rng, K=3)
    v = random_waves(3, 2, rng)
    sol = solve_coupled(els, G, v)
    assert np.allclose(sol.a, G.matrix @ sol.f, atol=1e-13)
    for k, e in enumerate(els):
        ak = sol.a[2 * k:2 * k + 2]
        assert np.allclose(sol.f[2 * k:2 * k + 2], (e.S - np.eye(2)) @ ak + e.T @ v[k:k + 1], atol=1e-12)
        assert np.allclose(sol.w[k:k + 1], e.R @ ak + e.Gamma @ v[k:k + 1], atol=1e-12)


def test_adjoint_solve(rng):
    els, G, _ = _scaled_instance(rng, K=3)
    sys_ = CoupledSystem(els, G)
    rhs = random_waves(6, 2, rng)
    x = sys_.solve_adjoint(rhs)
    K, N = 3, 2
    m = np.eye(6, dtype=complex)
    sm = np.zeros((6, 6), dtype=complex)
    for k, e in enumerate(els):
        sm[2 * k:2 * k + 2, 2 * k:2 * k + 2] = e.S - np.eye(2)
    m -= sm @ G.matrix
    assert np.allclose(m.conj().T @ x, rhs, atol=1e-12)


def test_resonance_is_detected():
    a, b = us_random(2, 1, 1), us_random(2, 2, 1)
    g = 1 / np.sqrt((a.S[0, 0] - 1) * (b.S[0, 0] - 1))
    G = CouplingMatrix(np.array([[0, g], [g, 0]]), 2, 1)
    with pytest.raises(ResonanceError):
        CoupledSystem([a, b], G)


def test_phase_shift_invariance(rng):
    for _ in range(10):
        els, G, _ = _scaled_instance(rng, K=4, P=2, radius=0.7)
        v = random_waves(8, 3, rng)
        chis = rng.uniform(-np.pi, np.pi, 4)
        shifted, v2 = shift_elements(els, v, chis)
        f1 = solve_coupled(els, G, v).f
        f2 = solve_coupled(shifted, G, v2).f
        assert np.max(np.abs(f1 - f2)) <= 1e-12 * max(1.0, np.max(np.abs(f1)))
        assert all(max(s.residuals()) <= 1e-12 for s in shifted)


def test_phase_shift_blocks():
    g = us_random(3, 0, 2)
    s, v = apply_phase_shift(g, np.array([1.0]), 0.25)
    e = np.exp(0.25j)
    assert np.allclose(s.S, g.S) and np.allclose(s.T, g.T * e) and np.allclose(s.R, g.R * e)
    assert np.allclose(s.Gamma, g.Gamma * e * e) and np.allclose(v, [np.conj(e)])


def test_dof_assignment_and_assembly():
    a = DofAssignment([0, 1, 1, 0], 2, 2)
    assert a.n_classes == 2 and list(a.members(1)) == [1, 2]
    assert a.grid().tolist() == [[1, 2], [2, 1]]
    gs = [us_random(3, 0, 2), us_random(3, 1, 2)]
    els = assemble_element_gsms(a, gs)
    assert els[0] is gs[0] and els[2] is gs[1]
    with pytest.raises(AssignmentError):
        assemble_element_gsms(a, gs[:1])
    with pytest.raises(AssignmentError):
        DofAssignment([0, 2, 2, 0], 2, 2)
    with pytest.raises(DimensionError):
        DofAssignment([0, 1], 2, 2)


def test_input_validation(rng):
    els = random_elements(2, 2, 1, rng)
    with pytest.raises(DimensionError):
        CoupledSystem(els, CouplingMatrix.zeros(3, 2))
    with pytest.raises(DimensionError):
        CoupledSystem([els[0], us_random(4, 0, 3)], CouplingMatrix.zeros(2, 2))
    sys_ = CoupledSystem(els, CouplingMatrix.zeros(2, 2))
    with pytest.raises(DimensionError):
        sys_.solve(np.ones(3))
    with pytest.raises(InvalidInputError):
        sys_.solve(np.array([np.nan, 1.0]))
    with pytest.raises(DimensionError):
        CouplingMatrix(np.zeros((3, 3)), 2, 2)


def test_coupling_helpers(rng):
    G = random_coupling(3, 2, rng)
    assert G.blocks().shape == (3, 3, 2, 2)
    assert np.array_equal(G.blocks()[1, 2], G.block(1, 2))
    assert G.diagonal_max() == 0
    sym = CouplingMatrix(G.matrix + G.matrix.T, 3, 2)
    assert sym.reciprocity_error() == 0
