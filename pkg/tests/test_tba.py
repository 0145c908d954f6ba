"""TBA engine against independent oracles.

Free gases admit closed forms (Gaussian integrals, Fermi integrals via
adaptive quadrature); the hard-rod gas reduces to a scalar Lambert-W
equation. Those fix the absolute normalization of everything downstream.
Frozen reference numbers below were produced by the oracles themselves,
so a regression in either route shows up as a mismatch.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import expit, lambertw

from fluxlab import (DrivingUnbounded, NoConvergence, PotentialVector,
                     UnknownChargeIndex, charge_averages as core_charge_averages,
                     check_ekms, currents_from_flux)
from fluxlab import tba
from fluxlab.tba import (MODEL_FACTORIES, QuadratureGrid, TbaBackend,
                         TbaModel, batch_state_tables, charge_averages,
                         check_asymptotic, check_unitarity, current_averages,
                         dress, ekms_constant_via_chain, flux_potential,
                         flux_potentials, free_classical, free_energy,
                         free_fermion, hard_rods, lieb_liniger,
                         solve_pseudo_energy, solve_pseudo_energy_batch)

# frozen oracle outputs (regenerated by the closed forms in each test)
F_FREE_CLASSICAL = -1.8030240111853377   # beta = (0.3, -0.2, 1.1)
F_HARD_RODS = -1.3661960557927184        # a = 0.7, beta = (-0.4, 0.15, 0.9, 0.2)
N_FREE_FERMION = 0.26833833692354525     # beta0 = -0.3, beta2 = 1, beta4 = 0.1
E_FREE_FERMION = 0.1430930507434533


def test_free_classical_matches_gaussian_closed_form():
    beta = PotentialVector.of({0: 0.3, 1: -0.2, 2: 1.1})
    pe = solve_pseudo_energy(free_classical(), beta)
    b0, b1, b2 = 0.3, -0.2, 1.1
    Z = math.exp(-b0) * math.sqrt(2 * math.pi / b2) * math.exp(b1 * b1 / (2 * b2))
    f = free_energy(pe)
    assert abs(f - (-Z)) <= 1e-12
    assert abs(f - F_FREE_CLASSICAL) <= 1e-12
    q = charge_averages(pe)
    assert abs(q[0] - Z) <= 1e-12          # density of a Boltzmann gas
    assert abs(q[1] - (-b1 / b2) * Z) <= 1e-12


def test_hard_rods_matches_lambert_w():
    a = 0.7
    beta = PotentialVector.of({0: -0.4, 1: 0.15, 2: 0.9, 4: 0.2})
    pe = solve_pseudo_energy(hard_rods(a), beta)
    w = lambda th: -0.4 + 0.15 * th + 0.45 * th * th + 0.05 * th ** 4
    I0 = quad(lambda th: math.exp(-w(th)), -np.inf, np.inf)[0]
    f_exact = -float(lambertw(a * I0).real) / a
    f = free_energy(pe)
    assert abs(f - f_exact) <= 1e-12
    assert abs(f - F_HARD_RODS) <= 1e-12


def test_free_fermion_matches_quad_oracle():
    beta = PotentialVector.of({0: -0.3, 2: 1.0, 4: 0.1})
    pe = solve_pseudo_energy(free_fermion(), beta)
    w = lambda th: -0.3 + th * th / 2 + 0.025 * th ** 4
    dens = quad(lambda th: expit(-w(th)) / (2 * math.pi), -np.inf, np.inf)[0]
    ener = quad(lambda th: th * th / 2 * expit(-w(th)) / (2 * math.pi),
                -np.inf, np.inf)[0]
    q = charge_averages(pe)
    assert abs(q[0] - dens) <= 1e-12
    assert abs(q[2] - ener) <= 1e-12
    assert abs(q[0] - N_FREE_FERMION) <= 1e-12
    assert abs(q[2] - E_FREE_FERMION) <= 1e-12


def test_zero_rod_length_reduces_to_free_gas():
    beta = PotentialVector.of({0: 0.1, 2: 1.0})
    pe_free = solve_pseudo_energy(free_classical(), beta)
    pe_rods = solve_pseudo_energy(hard_rods(0.0), beta)
    assert abs(free_energy(pe_free) - free_energy(pe_rods)) <= 1e-14
    h = np.ones(pe_rods.grid.size)
    assert np.array_equal(dress(pe_free, h), h)  # zero kernel: bare survives


def test_grid_convergence_is_monotone():
    beta = PotentialVector.of({0: 0.3, 1: -0.2, 2: 1.1})
    Z = math.exp(-0.3) * math.sqrt(2 * math.pi / 1.1) * math.exp(0.04 / 2.2)
    errs = []
    for M in (15, 30, 60):
        pe = solve_pseudo_energy(free_classical(), beta, size=M, theta_max=9.0,
                                 auto_expand=False)
        errs.append(abs(free_energy(pe) + Z))
    assert errs[1] < errs[0] / 2
    assert errs[2] < errs[1] / 2
    assert errs[2] <= 1e-12


def test_interacting_grid_refinement():
    # doubling M at fixed width must shrink the flux-sum spread until roundoff
    beta = PotentialVector.of({0: 0.2, 1: 0.1, 2: 0.9})
    ref = solve_pseudo_energy(lieb_liniger(1.0), beta, size=400)
    f_ref = free_energy(ref)
    errs = []
    for M in (20, 40, 80):
        pe = solve_pseudo_energy(lieb_liniger(1.0), beta, size=M,
                                 theta_max=ref.grid.theta_max, auto_expand=False)
        errs.append(abs(free_energy(pe) - f_ref))
    assert errs[1] <= errs[0] / 2
    assert errs[2] <= errs[1] / 2


def test_flux_sum_equals_boundary_chain_every_model():
    states = {
        "free-classical": {0: 0.3, 1: -0.2, 2: 1.1},
        "free-fermion": {0: -0.3, 2: 1.0, 4: 0.1},
        "hard-rods": {0: -0.4, 1: 0.15, 2: 0.9, 4: 0.2},
        "lieb-liniger": {0: 0.1, 1: -0.12, 2: 0.8, 4: 0.15},
    }
    for name, factory in MODEL_FACTORIES.items():
        model = factory()
        beta = PotentialVector.of(states[name])
        pe = solve_pseudo_energy(model, beta)
        g = flux_potentials(pe)
        direct = sum(beta[k] * g[k] for k in beta.indices)
        chain = ekms_constant_via_chain(pe)
        assert abs(direct - chain) <= 1e-12, name
        assert abs(direct) <= 1e-12, name  # parity-even kernels: sum vanishes


def test_g1_is_f_identically():
    beta = PotentialVector.of({0: 0.1, 1: -0.12, 2: 0.8, 4: 0.15})
    pe = solve_pseudo_energy(lieb_liniger(1.3), beta)
    assert flux_potential(pe, 1) == free_energy(pe)


def test_ultralocal_flux_row_vanishes():
    beta = PotentialVector.of({0: 0.1, 2: 0.8})
    pe = solve_pseudo_energy(lieb_liniger(1.0), beta)
    assert flux_potential(pe, 0) == 0.0
    j = current_averages(pe)
    assert j[(0, 0)] == 0.0 and j[(0, 2)] == 0.0


def test_parity_even_state_has_odd_moments_zero():
    beta = PotentialVector.of({0: 0.2, 2: 1.0, 4: 0.1})
    pe = solve_pseudo_energy(lieb_liniger(1.0), beta)
    q = charge_averages(pe, indices=(1,))
    g = flux_potentials(pe, indices=(2, 4))
    assert abs(q[1]) <= 1e-13
    assert abs(g[2]) <= 1e-13
    assert abs(g[4]) <= 1e-13


def test_dressing_inverse_is_symmetric():
    beta = PotentialVector.of({0: 0.1, 1: -0.12, 2: 0.8, 4: 0.15})
    pe = solve_pseudo_energy(lieb_liniger(1.3), beta)
    n, w = pe.occupation, pe.grid.weights
    model = pe.model
    phi = model.kernel_values(pe.grid.nodes[None, :], pe.grid.nodes[:, None])
    mat = np.diag(1.0 / (n * w)) - model.prefactor * phi
    inv = np.linalg.inv(mat)
    assert np.max(np.abs(inv - inv.T)) <= 1e-14


def test_rank_one_dressing_matches_dense_solve():
    beta = PotentialVector.of({0: -0.4, 1: 0.15, 2: 0.9, 4: 0.2})
    model = hard_rods(0.7)
    pe = solve_pseudo_energy(model, beta)
    bare = pe.grid.nodes.copy()
    fast = dress(pe, bare)
    dense_model = TbaModel(name="hard-rods-dense", statistics="classical",
                           prefactor=1.0, kernel=lambda tp, t: -0.7 + 0.0 * tp)
    pe_dense = solve_pseudo_energy(dense_model, beta, grid=pe.grid)
    slow = dress(pe_dense, bare)
    assert np.max(np.abs(fast - slow)) <= 1e-11


def test_fd_currents_agree_with_dressing_route():
    for factory, rtol in ((free_classical, 1e-11), (free_fermion, 1e-11),
                          (lambda: hard_rods(1.0), 1e-9),
                          (lambda: lieb_liniger(1.0), 1e-9)):
        be = TbaBackend(factory())
        beta = PotentialVector.of({0: 0.1, 1: -0.1, 2: 0.9, 4: 0.1})
        dv = currents_from_flux(be, beta)
        for key, v in dv.values.items():
            rel = abs(v - dv.fd_values[key]) / max(1.0, abs(v))
            assert rel <= rtol, (be.name, key, rel)


def test_fd_charge_averages_cross_check():
    be = TbaBackend(lieb_liniger(1.0))
    beta = PotentialVector.of({0: 0.1, 1: -0.1, 2: 0.9, 4: 0.1})
    dv = core_charge_averages(be, beta)
    assert dv.residual <= 1e-9


def test_backend_ekms_over_samples(rng):
    for factory in (lambda: lieb_liniger(1.0), lambda: hard_rods(1.0)):
        be = TbaBackend(factory())
        samples = [be.sample_state(rng) for _ in range(5)]
        rep = check_ekms(be, samples, tol=1e-12)
        assert rep.passed, rep.line()


def test_unitarity_registered_models_pass():
    grid = QuadratureGrid.build(6.0, 80)
    for factory in MODEL_FACTORIES.values():
        rep = check_unitarity(factory(), grid)
        assert rep.passed, rep.line()


def test_unitarity_fixture_fails():
    grid = QuadratureGrid.build(6.0, 80)
    fixture = TbaModel(name="skew-fixture", statistics="classical", prefactor=1.0,
                       kernel=lambda tp, t: tp * t * t,
                       kernel_dtheta=lambda tp, t: 2.0 * tp * t)
    rep = check_unitarity(fixture, grid)
    assert not rep.passed
    assert rep.residual > 1.0


def test_asymptotic_check_and_narrow_grid_failure():
    beta = PotentialVector.of({0: 0.1, 2: 0.8})
    pe = solve_pseudo_energy(lieb_liniger(1.0), beta)
    assert check_asymptotic(pe).passed
    narrow = solve_pseudo_energy(lieb_liniger(1.0), beta,
                                 grid=QuadratureGrid.build(1.5, 60))
    assert not check_asymptotic(narrow).passed


def test_driving_must_be_confined():
    model = free_classical()
    for bad in ({2: -1.0}, {0: 1.0}, {1: 0.3}, {2: 0.0, 4: 0.0, 0: 0.5}):
        with pytest.raises(DrivingUnbounded):
            solve_pseudo_energy(model, PotentialVector.of(bad))


def test_unknown_charge_rejected():
    with pytest.raises(UnknownChargeIndex):
        solve_pseudo_energy(free_classical(), PotentialVector.of({2: 1.0, 3: 0.1}))


def test_no_convergence_raises():
    beta = PotentialVector.of({0: -2.0, 2: 0.5})
    with pytest.raises(NoConvergence):
        solve_pseudo_energy(hard_rods(2.0), beta, max_iters=2)


def test_backend_caches_solutions():
    be = TbaBackend(lieb_liniger(1.0))
    beta = PotentialVector.of({2: 1.0})
    assert be.solved(beta) is be.solved(beta)


def test_batched_solver_matches_scalar():
    model = lieb_liniger(1.3)
    beta = PotentialVector.of({0: 0.1, 1: -0.12, 2: 0.8, 4: 0.15})
    pe = solve_pseudo_energy(model, beta)
    grid = QuadratureGrid.build(pe.grid.theta_max, 200)
    idx = (0, 1, 2, 4)
    mat = np.array([[0.1, -0.12, 0.8, 0.15], [0.0, 0.05, 1.1, 0.1]])
    eps = solve_pseudo_energy_batch(model, mat, idx, grid)
    f, g, q, j = batch_state_tables(model, eps, idx, grid)
    pe2 = solve_pseudo_energy(model, beta, grid=grid)
    assert abs(f[0] - free_energy(pe2)) <= 1e-13
    qs, js = charge_averages(pe2), current_averages(pe2)
    for p, i in enumerate(idx):
        assert abs(q[0, p] - qs[i]) <= 1e-13
        for pk, k in enumerate(idx):
            assert abs(j[0, pk, p] - js[(k, i)]) <= 1e-13


def test_batched_rank_one_path():
    model = hard_rods(0.7)
    grid = QuadratureGrid.build(8.0, 200)
    idx = (0, 1, 2, 4)
    mat = np.array([[0.1, -0.12, 0.8, 0.15]])
    eps = solve_pseudo_energy_batch(model, mat, idx, grid)
    f, g, q, j = batch_state_tables(model, eps, idx, grid)
    pe = solve_pseudo_energy(
        model, PotentialVector.of(dict(zip(idx, mat[0]))), grid=grid)
    qs, js = charge_averages(pe), current_averages(pe)
    for p, i in enumerate(idx):
        assert abs(q[0, p] - qs[i]) <= 1e-13
        for pk, k in enumerate(idx):
            assert abs(j[0, pk, p] - js[(k, i)]) <= 1e-13


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-0.5, max_value=0.5),
       st.floats(min_value=-0.3, max_value=0.3),
       st.floats(min_value=0.3, max_value=1.5),
       st.floats(min_value=0.05, max_value=0.4))
def test_fermionic_occupation_stays_in_unit_interval(b0, b1, b2, b4):
    beta = PotentialVector.of({0: b0, 1: b1, 2: b2, 4: b4})
    pe = solve_pseudo_energy(lieb_liniger(1.0), beta, size=100)
    n = pe.occupation
    assert np.all(n > 0.0) and np.all(n < 1.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.3, max_value=1.5),
       st.floats(min_value=0.0, max_value=1.5))
def test_classical_pressure_decreases_with_rod_length(b2, a):
    # excluded volume can only reduce the density relative to the free gas
    beta = PotentialVector.of({2: b2})
    free = charge_averages(solve_pseudo_energy(free_classical(), beta, size=100),
                           indices=(0,))
    rods = charge_averages(solve_pseudo_energy(hard_rods(a), beta, size=100),
                           indices=(0,))
    assert rods[0] <= free[0] + 1e-12


def test_dressed_covariance_against_differenced_averages():
    # dual route: the susceptibility integral with dressed measure vs a
    # plain central difference of the analytic averages
    beta = PotentialVector.of({0: 0.2, 1: 0.1, 2: 1.0, 4: 0.15})
    for model in (hard_rods(1.0), lieb_liniger(1.0), free_classical()):
        be = TbaBackend(model, size=300)
        analytic = tba.covariance_dressed(be.solved(beta))
        idx = beta.indices
        fd = np.empty((4, 4))
        h = 1e-5
        for c, jdx in enumerate(idx):
            plus = be.charge_averages_analytic(beta.shifted(jdx, +h))
            minus = be.charge_averages_analytic(beta.shifted(jdx, -h))
            fd[:, c] = [-(plus[i] - minus[i]) / (2.0 * h) for i in idx]
        scale = np.max(np.abs(fd))
        assert np.max(np.abs(analytic - fd)) <= 1e-8 * scale
        assert np.max(np.abs(analytic - analytic.T)) == 0.0
        assert np.linalg.eigvalsh(analytic).min() > 0.0


def test_batch_covariance_matches_scalar():
    idx = (0, 1, 2, 4)
    mat = np.array([[0.1, -0.12, 0.8, 0.15],
                    [0.0, 0.05, 1.1, 0.2]])
    for model in (hard_rods(0.7), lieb_liniger(1.0)):
        grid = QuadratureGrid.build(9.0, 200)
        eps = solve_pseudo_energy_batch(model, mat, idx, grid)
        C = tba.batch_covariance(model, eps, idx, grid)
        for r in range(mat.shape[0]):
            pe = solve_pseudo_energy(
                model, PotentialVector.of(dict(zip(idx, mat[r]))), grid=grid)
            ref = tba.covariance_dressed(pe, indices=idx)
            assert np.max(np.abs(C[r] - ref)) <= 1e-12
