import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from aggspec.model import AggregateSpec, LorentzianBath, initial_bright_state
from aggspec.propagation import PropagationConfig, PropagationError
from aggspec.pseudomode import (
    BasisSizeError,
    CapConvergenceError,
    PmBasisState,
    _rk4_step,
    assemble_generator,
    converge_caps,
    count_occupation_vectors,
    default_caps,
    default_nu_grid,
    embed_initial_state,
    enumerate_basis,
    pm_correlation,
    propagate_pm,
)
from aggspec.spectra import absorption_from_trace, cumulant_oracle, overlap

DIMER_BATH = LorentzianBath.from_huang_rhys(2, 0.64, 1.0, 0.25)


def brute_force_occupations(n_slots, b_tot, b_mode):
    return {
        beta
        for beta in itertools.product(range(b_mode + 1), repeat=n_slots)
        if sum(beta) <= b_tot
    }


@pytest.mark.parametrize(
    "n_monomers, modes, b_tot, b_mode, expected",
    [
        (2, [1, 1], 2, 2, 12),   # 2 x 6 occupation vectors
        (1, [1], 0, 0, 1),
        (3, [1, 1, 1], 1, 1, 12),  # 3 x 4 occupation vectors
    ],
)
def test_enumeration_counts(n_monomers, modes, b_tot, b_mode, expected):
    basis = enumerate_basis(n_monomers, modes, b_tot, b_mode)
    assert len(basis) == expected
    brute = brute_force_occupations(sum(modes), b_tot, b_mode)
    assert {s.occupations for s in basis} == brute
    assert len(set(basis)) == len(basis)
    assert count_occupation_vectors(sum(modes), b_tot, b_mode) == len(brute)


def test_enumeration_order_is_lexicographic():
    basis = enumerate_basis(2, [1, 1], 1, 1)
    as_tuples = [(s.monomer, s.occupations) for s in basis]
    assert as_tuples == sorted(as_tuples)


def test_enumeration_respects_per_mode_cap():
    brute = brute_force_occupations(2, 4, 2)
    basis = enumerate_basis(1, [2], 4, 2)
    assert {s.occupations for s in basis} == brute


def test_budget_error_reports_dimension():
    with pytest.raises(BasisSizeError) as err:
        enumerate_basis(2, [6, 6], 8, 8, max_states=1000)
    assert err.value.dim == 2 * count_occupation_vectors(12, 8, 8)


def test_generator_two_level_hand_assembly():
    eps, gamma_amp, center, width = 0.3, 0.64, 1.0, 0.25
    agg = AggregateSpec.equal_parallel(1, epsilon=eps)
    bath = LorentzianBath.uniform(1, [(gamma_amp, center, width)])
    basis = enumerate_basis(1, [1], 1, 1)
    gen = assemble_generator(agg, bath, basis)
    g = np.sqrt(gamma_amp)
    expected = np.array(
        [
            [-1j * eps, 1j * g],
            [1j * g, -1j * (eps + center) - width],
        ]
    )
    assert_allclose(gen.matrix.toarray(), expected, atol=1e-15)


def test_hamiltonian_part_symmetric_and_damping_diagonal():
    agg = AggregateSpec.equal_parallel(2, epsilon=[0.1, -0.1], coupling_v=0.44)
    basis = enumerate_basis(2, [1, 1], 3, 3)
    gen = assemble_generator(agg, DIMER_BATH, basis)
    a = gen.matrix.toarray()
    hamiltonian = -a.imag
    assert np.array_equal(hamiltonian, hamiltonian.T)
    off_diag = a.real - np.diag(np.diag(a.real))
    assert np.all(off_diag == 0.0)
    for row, state in enumerate(basis):
        expected = -0.25 * sum(state.occupations)
        assert a[row, row].real == pytest.approx(expected, abs=1e-15)


def test_sparsity_bound_per_row():
    agg = AggregateSpec.equal_parallel(3, coupling_v=0.44)
    bath = LorentzianBath.from_huang_rhys(3, [0.4, 0.2], [1.0, 1.5], [0.25, 0.3])
    basis = enumerate_basis(3, [2, 2, 2], 3, 3)
    gen = assemble_generator(agg, bath, basis)
    csr = gen.matrix
    modes_per_monomer = 2
    bound = 2 * modes_per_monomer + 2 + 1
    row_counts = np.diff(csr.indptr)
    assert np.all(row_counts <= bound)


def test_gamma_zero_generator_is_anti_hermitian_and_conserves_norm():
    agg = AggregateSpec.equal_parallel(1)
    bath = LorentzianBath.uniform(1, [(0.64, 1.0, 0.0)])
    basis = enumerate_basis(1, [1], 10, 10)
    gen = assemble_generator(agg, bath, basis)
    a = gen.matrix.toarray()
    assert_allclose(a, -a.conj().T, atol=1e-15)
    psi0, _ = initial_bright_state(agg)
    psi = embed_initial_state(basis, psi0)
    dt = 0.002
    for _ in range(round(50.0 / dt)):
        psi = _rk4_step(gen.matrix, psi, dt)
    assert abs(np.linalg.norm(psi) - 1.0) <= 1e-8


def test_norm_monotone_with_damping():
    agg = AggregateSpec.equal_parallel(2, coupling_v=0.44)
    basis = enumerate_basis(2, [1, 1], 8, 8)
    gen = assemble_generator(agg, DIMER_BATH, basis)
    # log-norm condition: the Hermitian part of the generator is <= 0
    a = gen.matrix.toarray()
    herm = (a + a.conj().T) / 2
    assert np.max(np.linalg.eigvalsh(herm)) <= 1e-12
    psi0, _ = initial_bright_state(agg)
    psi = embed_initial_state(basis, psi0)
    norms = [np.linalg.norm(psi)]
    for _ in range(2000):
        psi = _rk4_step(gen.matrix, psi, 0.01)
        norms.append(np.linalg.norm(psi))
    assert np.all(np.diff(norms) <= 1e-12)


def test_doubling_matches_direct_propagation():
    cfg = PropagationConfig(dt=0.01, t_max=40.0)
    for agg, bath in (
        (AggregateSpec.equal_parallel(1), LorentzianBath.from_huang_rhys(1, 0.64, 1.0, 0.25)),
        (AggregateSpec.equal_parallel(2, coupling_v=0.44), DIMER_BATH),
    ):
        doubled = pm_correlation(agg, bath, cfg, caps=8, doubling=True)
        direct = pm_correlation(agg, bath, cfg, caps=8, doubling=False)
        shared = direct.samples[::2][: doubled.samples.size]
        assert np.max(np.abs(doubled.samples - shared)) <= 1e-10 * doubled.mu_tot_sq


def test_doubling_requires_real_initial_state():
    agg = AggregateSpec.equal_parallel(1)
    bath = LorentzianBath.from_huang_rhys(1, 0.64, 1.0, 0.25)
    basis = enumerate_basis(1, [1], 4, 4)
    gen = assemble_generator(agg, bath, basis)
    psi0 = embed_initial_state(basis, np.array([1j]))
    with pytest.raises(PropagationError, match="doubling requires real"):
        propagate_pm(gen, psi0, PropagationConfig(dt=0.01, t_max=1.0), doubling=True)


def test_monomer_matches_cumulant_oracle():
    agg = AggregateSpec.equal_parallel(1)
    bath = LorentzianBath.from_huang_rhys(1, 0.64, 1.0, 0.25)
    cfg = PropagationConfig(dt=0.01, t_max=50.0)
    trace = pm_correlation(agg, bath, cfg, caps=12)
    oracle = cumulant_oracle(
        bath.terms[0], 0.0, PropagationConfig(dt=trace.dt, t_max=50.0)
    )
    n = trace.samples.size
    assert np.max(np.abs(trace.samples - oracle.samples[:n])) <= 1e-4


def test_basis_ordering_invariance():
    agg = AggregateSpec.equal_parallel(2, coupling_v=0.44)
    cfg = PropagationConfig(dt=0.01, t_max=20.0)
    basis = enumerate_basis(2, [1, 1], 6, 6)
    rng = np.random.default_rng(31)
    shuffled = [basis[i] for i in rng.permutation(len(basis))]
    psi0, mu_tot = initial_bright_state(agg)
    traces = []
    for ordering in (basis, shuffled):
        gen = assemble_generator(agg, DIMER_BATH, ordering)
        psi = embed_initial_state(ordering, psi0)
        traces.append(propagate_pm(gen, psi, cfg, mu_tot_sq=mu_tot**2))
    assert np.max(np.abs(traces[0].samples - traces[1].samples)) <= 1e-10


def test_default_caps_heuristic():
    assert default_caps(DIMER_BATH) == 8  # ceil(4 + 6 * 0.64)
    assert default_caps(LorentzianBath.from_huang_rhys(1, 1.2, 1.0, 0.25)) == 12
    with pytest.raises(ValueError):
        default_caps(LorentzianBath.uniform(1, [(0.5, 0.0, 1.0)]))


def test_converge_caps_trivial_for_empty_bath():
    agg = AggregateSpec.equal_parallel(2, coupling_v=0.3)
    bath = LorentzianBath.uniform(2, [])
    cfg = PropagationConfig(dt=0.01, t_max=120.0)
    b_tot, b_mode, trace = converge_caps(agg, bath, cfg, 1e-3, eta=0.1)
    assert (b_tot, b_mode) == (0, 0)
    assert trace.samples[0] == pytest.approx(trace.mu_tot_sq)


def test_converge_caps_dimer_and_stability_under_cap_increase():
    agg = AggregateSpec.equal_parallel(2, coupling_v=0.44)
    cfg = PropagationConfig(dt=0.01, t_max=150.0)
    nu = default_nu_grid(agg, DIMER_BATH)
    b_tot, b_mode, trace = converge_caps(agg, DIMER_BATH, cfg, 1e-3, nu=nu)
    assert b_tot == b_mode >= 2
    spec = absorption_from_trace(trace, 0.01, nu)
    bigger = pm_correlation(agg, DIMER_BATH, cfg, caps=b_tot + 2)
    spec_bigger = absorption_from_trace(bigger, 0.01, nu)
    assert overlap(spec, spec_bigger) >= 99.8


def test_converge_caps_grow_with_coupling_strength():
    agg = AggregateSpec.equal_parallel(2, coupling_v=0.44)
    cfg = PropagationConfig(dt=0.01, t_max=150.0)
    caps_small, _, _ = converge_caps(agg, DIMER_BATH, cfg, 1e-3)
    strong = LorentzianBath.from_huang_rhys(2, 1.2, 1.0, 0.25)
    caps_large, _, _ = converge_caps(agg, strong, cfg, 1e-3)
    assert caps_large >= caps_small


def test_converge_caps_budget_failure_reports_overlaps():
    agg = AggregateSpec.equal_parallel(2, coupling_v=0.44)
    cfg = PropagationConfig(dt=0.01, t_max=150.0)
    with pytest.raises(CapConvergenceError, match="budget"):
        converge_caps(agg, DIMER_BATH, cfg, 1e-9, max_states=40)


def test_pm_state_and_index_types():
    state = PmBasisState(monomer=0, occupations=(0, 1))
    assert state.occupations == (0, 1)
    basis = enumerate_basis(2, [1, 1], 1, 1)
    psi = embed_initial_state(basis, np.array([0.6, 0.8]))
    # exactly two vacuum slots carry the electronic amplitudes
    assert np.count_nonzero(psi) == 2
    assert psi @ psi == pytest.approx(1.0)
