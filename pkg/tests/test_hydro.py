"""Finite-volume transport: inversion, schemes, budgets, closures."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluxlab import hydro
from fluxlab.cft import CftBackend, averages_arrays
from fluxlab.errors import (CFLViolation, ConfigError, DimensionMismatch,
                            DomainExceeded, InversionFailure, UnknownChargeIndex)
from fluxlab.potentials import PotentialVector
from fluxlab.tba import TbaBackend, hard_rods

L = 1.0


def smooth_fields():
    # both weights vary; the energy hump keeps u^2 > |u^1| everywhere
    return hydro.FieldProfile.build(L, {
        1: {"base": 0.0, "terms": [{"kind": "cosine", "amplitude": 0.08, "mode": 1}]},
        2: {"base": 1.0, "terms": [{"kind": "bump", "amplitude": 0.2,
                                    "center": 0.3, "width": 4.0}]},
    })


def constant_fields(u1=0.0, u2=1.0):
    return hydro.FieldProfile.constant(L, {1: u1, 2: u2})


def cfl_steps(source, state, fields, t_end, frac=0.4):
    U = fields.sample(state.grid, source.indices)[0]
    v = float(hydro.cell_speeds(source, state.beta, U).max())
    n = int(math.ceil(t_end / (frac * state.grid.dx / v)))
    return n, t_end / n


@pytest.fixture
def cft_eos():
    return hydro.CftCellEos(d=2)


# ---------------------------------------------------------------------------
# grid and profiles

def test_grid_geometry():
    grid = hydro.Grid1D(2.0, 8)
    assert grid.dx == 0.25
    assert np.allclose(np.diff(grid.centers), 0.25)
    assert grid.centers[0] == 0.125


def test_grid_rejects_degenerate():
    with pytest.raises(ConfigError):
        hydro.Grid1D(2.0, 3)
    with pytest.raises(ConfigError):
        hydro.Grid1D(0.0, 8)


def test_profile_term_validation():
    with pytest.raises(ConfigError):
        hydro.ProfileTerm(kind="sawtooth", amplitude=1.0)
    with pytest.raises(ConfigError):
        hydro.ProfileTerm(kind="bump", amplitude=1.0, width=-2.0)
    with pytest.raises(ConfigError):
        hydro.ProfileTerm(kind="cosine", amplitude=1.0, mode=0)


@settings(deadline=None)
@given(kind=st.sampled_from(["bump", "cosine"]),
       amplitude=st.floats(-2.0, 2.0),
       center=st.floats(0.0, 1.0),
       width=st.floats(0.0, 8.0),
       mode=st.integers(1, 4),
       x=st.floats(0.0, 1.0))
def test_profile_term_gradient_matches_difference(kind, amplitude, center,
                                                  width, mode, x):
    term = hydro.ProfileTerm(kind=kind, amplitude=amplitude, center=center,
                             width=width, mode=mode)
    h = 1e-6
    vp, _ = term.values(x + h, L)
    vm, _ = term.values(x - h, L)
    _, grad = term.values(x, L)
    assert math.isclose(float(grad), float(vp - vm) / (2 * h),
                        abs_tol=1e-5 * (1 + abs(amplitude)))


@settings(deadline=None)
@given(kind=st.sampled_from(["bump", "cosine"]),
       center=st.floats(0.0, 1.0),
       width=st.floats(0.0, 6.0),
       mode=st.integers(1, 3),
       x=st.floats(0.0, 1.0))
def test_profile_term_is_periodic(kind, center, width, mode, x):
    term = hydro.ProfileTerm(kind=kind, amplitude=1.3, center=center,
                             width=width, mode=mode)
    v0, g0 = term.values(x, L)
    v1, g1 = term.values(x + L, L)
    assert math.isclose(float(v0), float(v1), abs_tol=1e-9)
    assert math.isclose(float(g0), float(g1), abs_tol=1e-7)


def test_profile_sampling_shapes_and_zero_fill():
    grid = hydro.Grid1D(L, 12)
    U, dU = smooth_fields().sample(grid, (1, 2, 4))
    assert U.shape == dU.shape == (12, 3)
    assert np.all(U[:, 2] == 0.0)  # no component registered for charge 4
    assert np.all(U[:, 1] > 0.0)


def test_profile_requires_positive_energy_weight():
    bad = hydro.FieldProfile.build(L, {2: {"base": 0.5, "terms": [
        {"kind": "cosine", "amplitude": 1.0, "mode": 1}]}})
    with pytest.raises(DomainExceeded):
        bad.sample(hydro.Grid1D(L, 16), (1, 2))


def test_profile_period_must_match_domain():
    with pytest.raises(ConfigError):
        constant_fields().sample(hydro.Grid1D(2.0, 8), (1, 2))


def test_gradient_bound_reports_max_slope():
    fields = hydro.FieldProfile.build(L, {2: {"base": 1.0, "terms": [
        {"kind": "cosine", "amplitude": 0.1, "mode": 2}]}})
    bound = fields.gradient_bound(hydro.Grid1D(L, 256), (2,))
    assert bound == pytest.approx(0.1 * 4 * math.pi, rel=1e-3)


# ---------------------------------------------------------------------------
# cell equations of state

def test_cell_eos_dispatch(cft_eos):
    assert isinstance(hydro.cell_eos_for(CftBackend(d=3)), hydro.CftCellEos)
    assert isinstance(hydro.cell_eos_for(TbaBackend(hard_rods(1.0))), hydro.TbaCellEos)
    assert hydro.cell_eos_for(cft_eos) is cft_eos
    with pytest.raises(ConfigError):
        hydro.cell_eos_for(object())


def test_generic_row_adapter_matches_closed_forms(cft_eos, rng):
    # the slow per-row fallback must agree with the vectorized closed forms
    generic = hydro.BackendCellEos(CftBackend(d=2))
    beta = np.stack([rng.uniform(-0.3, 0.3, 5), rng.uniform(0.8, 1.6, 5)], axis=1)
    fa, ga, qa, ja = cft_eos.tables(beta)
    fb, gb, qb, jb = generic.tables(beta)
    assert np.allclose(fa, fb, atol=1e-9)
    assert np.allclose(ga, gb, atol=1e-9)
    assert np.allclose(qa, qb, atol=1e-8)
    assert np.allclose(ja, jb, atol=1e-8)
    assert np.allclose(cft_eos.covariance(beta), generic.covariance(beta), atol=1e-7)


def test_tba_cell_eos_matches_scalar_backend():
    model = hard_rods(0.5)
    eos = hydro.TbaCellEos(model, indices=(0, 1, 2), size=160)
    backend = TbaBackend(model, size=160)
    beta = np.array([[0.2, -0.1, 0.9], [-0.3, 0.05, 1.2]])
    f, g, q, j = eos.tables(beta)
    C = eos.covariance(beta)
    for m in range(2):
        pv = PotentialVector.of({0: beta[m, 0], 1: beta[m, 1], 2: beta[m, 2]})
        assert f[m] == pytest.approx(backend.free_energy(pv), abs=1e-8)
        gs = backend.flux_potentials(pv)
        qs = backend.charge_averages_analytic(pv)
        js = backend.current_averages_analytic(pv)
        for p, i in enumerate((0, 1, 2)):
            assert g[m, p] == pytest.approx(gs[i], abs=1e-8)
            assert q[m, p] == pytest.approx(qs[i], abs=1e-8)
            for pp, k in enumerate((0, 1, 2)):
                assert j[m, pp, p] == pytest.approx(js[(k, i)], abs=1e-8)
        assert np.allclose(C[m], backend.covariance_analytic(pv), atol=1e-8)


def test_tba_cell_eos_rejects_unknown_and_unconfined_charges():
    with pytest.raises(UnknownChargeIndex):
        hydro.TbaCellEos(hard_rods(1.0), indices=(0, 3))
    with pytest.raises(DomainExceeded):
        hydro.TbaCellEos(hard_rods(1.0), indices=(0, 1))


def test_tba_admissible_mask_mirrors_confinement():
    eos = hydro.TbaCellEos(hard_rods(1.0), indices=(0, 1, 2, 4))
    rows = np.array([
        [0.1, 0.2, 1.0, 0.3],    # confined
        [0.1, 0.2, 1.0, 0.0],    # top even charge is 2, still dominates
        [0.1, 0.2, 1.0, -0.1],   # negative top even coefficient
        [0.1, 0.2, -1.0, 0.0],   # negative energy weight
        [0.1, 0.2, 0.0, 0.0],    # odd charge undominated
        [9.0, 0.2, 1.0, 0.3],    # ultralocal bound exceeded
    ])
    assert hydro.cell_eos_for(eos).admissible_mask(rows).tolist() == [
        True, True, False, False, False, False]


def test_current_offset_wrapper_only_touches_currents(cft_eos, rng):
    offset = np.array([[0.0, 0.02], [0.02, 0.01]])
    mock = hydro.with_current_offset(cft_eos, offset)
    beta = np.stack([rng.uniform(-0.2, 0.2, 4), rng.uniform(0.9, 1.4, 4)], axis=1)
    f0, g0, q0, j0 = cft_eos.tables(beta)
    f1, g1, q1, j1 = mock.tables(beta)
    assert np.array_equal(f0, f1) and np.array_equal(g0, g1)
    assert np.array_equal(q0, q1)
    assert np.allclose(j1 - j0, offset[None], atol=0)
    assert np.array_equal(mock.covariance(beta), cft_eos.covariance(beta))
    with pytest.raises(DimensionMismatch):
        hydro.with_current_offset(cft_eos, np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# inversion

def test_inversion_round_trip_from_perturbed_guess(cft_eos, rng):
    grid = hydro.Grid1D(L, 24)
    state = hydro.stationary_state(cft_eos, grid, smooth_fields(), beta_bar=1.0)
    guess = state.beta * (1 + 0.08 * rng.standard_normal(state.beta.shape))
    rec = hydro.invert_states(cft_eos, state.q, guess)
    assert np.max(np.abs(cft_eos.averages(rec) - state.q)) <= 1e-10
    assert np.max(np.abs(rec - state.beta)) <= 1e-8


def test_inversion_matches_cft_closed_form(rng):
    # two-charge fluid admits an explicit inverse of the average map
    d, a = 3, 1.0
    eos = hydro.CftCellEos(d=d, a=a)
    beta_rest = rng.uniform(0.6, 1.8, 30)
    theta = rng.uniform(-0.9, 0.9, 30)
    v, u = -beta_rest * np.sinh(theta), beta_rest * np.cosh(theta)
    q1, q2 = averages_arrays(v, u, d, a)
    q = np.stack([q1, q2], axis=1)

    disc = np.sqrt((q2 * (d + 1)) ** 2 - 4 * d * q1 ** 2)
    t = 2 * d * q1 / (q2 * (d + 1) + disc)
    th = np.arctanh(t)
    br = (a * (d * np.cosh(th) ** 2 + np.sinh(th) ** 2) / q2) ** (1.0 / (d + 1))
    closed = np.stack([-br * np.sinh(th), br * np.cosh(th)], axis=1)

    guess = np.tile([0.0, 1.0], (30, 1))
    newton = hydro.invert_states(eos, q, guess)
    assert np.max(np.abs(newton - closed)) <= 1e-10


def test_single_cell_inversion_wrapper(cft_eos):
    target = {1: -0.31, 2: 1.1}
    q = cft_eos.averages(np.array([[target[1], target[2]]]))[0]
    rec = hydro.invert_state(cft_eos, {1: q[0], 2: q[1]},
                             PotentialVector.of({1: 0.0, 2: 1.0}))
    assert rec[1] == pytest.approx(target[1], abs=1e-9)
    assert rec[2] == pytest.approx(target[2], abs=1e-9)


def test_inversion_failure_outside_image(cft_eos):
    # negative energy density lies outside the admissible image
    bad = np.array([[0.0, -0.5]])
    guess = np.array([[0.0, 1.0]])
    with pytest.raises(InversionFailure):
        hydro.invert_states(cft_eos, bad, guess)


def test_inversion_rejects_inadmissible_guess(cft_eos):
    with pytest.raises(InversionFailure):
        hydro.invert_states(cft_eos, np.array([[0.0, 2.0]]), np.array([[1.5, 1.0]]))


def test_tba_inversion_round_trip():
    eos = hydro.TbaCellEos(hard_rods(0.5), indices=(0, 1, 2), size=128)
    beta = np.array([[0.2, -0.05, 0.9], [-0.1, 0.1, 1.3], [0.0, 0.0, 1.0]])
    q = eos.averages(beta)
    rec = hydro.invert_states(eos, q, beta * 1.07 + 0.01)
    assert np.max(np.abs(rec - beta)) <= 1e-8


# ---------------------------------------------------------------------------
# right-hand side

def test_rhs_homogeneous_is_exactly_zero(cft_eos):
    grid = hydro.Grid1D(L, 16)
    fields = constant_fields(u1=0.1)
    state = hydro.stationary_state(cft_eos, grid, fields, beta_bar=1.0)
    assert np.all(hydro.rhs(cft_eos, state, fields) == 0.0)


def test_rhs_constant_fields_reduce_to_flux_divergence(cft_eos):
    grid = hydro.Grid1D(L, 32)
    fields = constant_fields(u1=0.07, u2=1.1)
    x = grid.centers
    beta = np.stack([0.02 * np.sin(2 * np.pi * x),
                     1.0 + 0.1 * np.cos(2 * np.pi * x)], axis=1)
    state = hydro.state_from_potentials(cft_eos, grid, beta)
    got = hydro.rhs(cft_eos, state, fields)
    j = cft_eos.tables(beta)[3]
    flux = 0.07 * j[:, 0, :] + 1.1 * j[:, 1, :]
    expect = -(np.roll(flux, -1, 0) - np.roll(flux, 1, 0)) / (2 * grid.dx)
    assert np.allclose(got, expect, atol=1e-13)


def test_rhs_stationary_profile_second_order(cft_eos):
    residuals = []
    for cells in (32, 64, 128):
        grid = hydro.Grid1D(L, cells)
        state = hydro.stationary_state(cft_eos, grid, smooth_fields(), beta_bar=1.0)
        residuals.append(float(np.max(np.abs(hydro.rhs(cft_eos, state, smooth_fields())))))
    orders = np.log2(np.array(residuals[:-1]) / np.array(residuals[1:]))
    assert np.all(orders >= 1.8)


def test_rhs_rejects_unknown_scheme_and_mismatched_state(cft_eos):
    grid = hydro.Grid1D(L, 16)
    fields = constant_fields()
    state = hydro.stationary_state(cft_eos, grid, fields, beta_bar=1.0)
    with pytest.raises(ConfigError):
        hydro.rhs(cft_eos, state, fields, scheme="upwind")
    other = hydro.TbaCellEos(hard_rods(1.0), indices=(0, 1, 2))
    with pytest.raises(DimensionMismatch):
        hydro.rhs(other, state, fields)


# ---------------------------------------------------------------------------
# evolution and budgets

def test_total_charge_change_equals_integrated_source(cft_eos):
    grid = hydro.Grid1D(L, 32)
    fields = smooth_fields()
    state = hydro.stationary_state(cft_eos, grid, fields, beta_bar=1.0)
    traj = hydro.evolve(cft_eos, state, fields, dt=2e-3, t_end=0.1, record_every=10)
    totals = hydro.charge_totals(traj)
    # conservative flux telescopes: the budget identity is exact in floats
    assert np.allclose(totals[-1] - totals[0], -traj.source_budget, atol=1e-13)
    assert np.max(np.abs(traj.source_budget)) > 1e-6  # fields vary, so it is not trivial


def test_constant_fields_conserve_every_total_charge(cft_eos):
    grid = hydro.Grid1D(L, 32)
    fields = constant_fields(u1=0.05)
    x = grid.centers
    beta = np.stack([0.03 * np.sin(2 * np.pi * x),
                     1.0 + 0.1 * np.cos(2 * np.pi * x)], axis=1)
    state = hydro.state_from_potentials(cft_eos, grid, beta)
    traj = hydro.evolve(cft_eos, state, fields, dt=2e-3, t_end=0.2, record_every=20)
    totals = hydro.charge_totals(traj)
    assert np.max(np.abs(totals - totals[0])) <= 1e-12
    assert np.max(np.abs(traj.source_budget)) <= 1e-15


def test_zero_amplitude_run_is_bitwise_constant(cft_eos):
    grid = hydro.Grid1D(L, 16)
    fields = constant_fields()
    state = hydro.stationary_state(cft_eos, grid, fields, beta_bar=1.0)
    traj = hydro.evolve(cft_eos, state, fields, dt=5e-3, t_end=0.1, record_every=4)
    for fr in traj.frames[1:]:
        assert np.array_equal(fr.q, traj.frames[0].q)
        assert np.array_equal(fr.beta, traj.frames[0].beta)


def test_cfl_violation_raised(cft_eos):
    grid = hydro.Grid1D(L, 16)
    fields = constant_fields()
    state = hydro.stationary_state(cft_eos, grid, fields, beta_bar=1.0)
    with pytest.raises(CFLViolation):
        hydro.evolve(cft_eos, state, fields, dt=1.0, t_end=2.0)


def test_midrun_inversion_failure_carries_snapshot(cft_eos):
    grid = hydro.Grid1D(L, 32)
    fields = hydro.FieldProfile.build(L, {1: 0.0, 2: {"base": 1.0, "terms": [
        {"kind": "bump", "amplitude": 0.3, "center": 0.5, "width": 4.0}]}})
    # a strong spurious energy sink drains q_2 out of the admissible image
    sink = hydro.with_current_offset(cft_eos, np.array([[0.0, 0.0], [0.0, -6.0]]))
    state = hydro.stationary_state(sink, grid, fields, beta_bar=1.0)
    with pytest.raises(InversionFailure) as info:
        hydro.evolve(sink, state, fields, dt=2e-3, t_end=2.0,
                     record_every=20, speed_refresh=0)
    assert "aborted at t=" in str(info.value)
    snap = info.value.snapshot
    assert snap.frames and snap.steps > 0


def test_stationary_drift_converges_at_scheme_order(cft_eos):
    drifts = []
    for cells in (24, 48, 96):
        grid = hydro.Grid1D(L, cells)
        state = hydro.stationary_state(cft_eos, grid, smooth_fields(), beta_bar=1.0)
        n, dt = cfl_steps(cft_eos, state, smooth_fields(), t_end=1.0)
        traj = hydro.evolve(cft_eos, state, smooth_fields(), dt=dt, t_end=1.0,
                            record_every=n)
        drifts.append(float(np.max(np.abs(traj.frames[-1].q - traj.frames[0].q))))
    orders = np.log2(np.array(drifts[:-1]) / np.array(drifts[1:]))
    assert np.all(orders >= 1.8)


def test_rusanov_scheme_runs_and_keeps_budget_identity(cft_eos):
    grid = hydro.Grid1D(L, 32)
    fields = smooth_fields()
    state = hydro.stationary_state(cft_eos, grid, fields, beta_bar=1.0)
    traj = hydro.evolve(cft_eos, state, fields, dt=2e-3, t_end=0.05,
                        scheme="rusanov", record_every=5)
    totals = hydro.charge_totals(traj)
    assert np.allclose(totals[-1] - totals[0], -traj.source_budget, atol=1e-13)


# ---------------------------------------------------------------------------
# entropy budget

def off_family_beta(grid):
    x = grid.centers
    return np.stack([0.05 * np.cos(2 * np.pi * x / L),
                     1.0 + 0.12 * np.cos(2 * np.pi * (x - 0.15) / L)], axis=1)


def entropy_run(source, cells, t_end=0.5, beta_init=None):
    grid = hydro.Grid1D(L, cells)
    fields = smooth_fields()
    if beta_init is None:
        state = hydro.stationary_state(source, grid, fields, beta_bar=1.0)
    else:
        state = hydro.state_from_potentials(source, grid, beta_init(grid))
    n, dt = cfl_steps(source, state, fields, t_end)
    traj = hydro.evolve(source, state, fields, dt=dt, t_end=t_end,
                        record_every=max(1, n // 10))
    return hydro.entropy_budget(traj)


def test_entropy_conserved_at_scheme_order(cft_eos):
    nets = [entropy_run(cft_eos, cells, beta_init=off_family_beta).net_change
            for cells in (32, 64, 128)]
    orders = np.log2(np.array(nets[:-1]) / np.array(nets[1:]))
    assert np.all(orders >= 1.8)


def test_gradient_breaking_offset_produces_entropy(cft_eos):
    # constant symmetric current offset, state off the stationary family:
    # production survives refinement instead of converging away
    mock = hydro.with_current_offset(cft_eos, np.array([[0.04, 0.03], [0.03, 0.05]]))
    nets = [entropy_run(mock, cells, beta_init=off_family_beta).net_change
            for cells in (64, 128)]
    assert nets[-1] > 1e-4
    assert math.log2(nets[0] / nets[1]) < 0.5


def test_antisymmetric_offset_is_entropy_neutral(cft_eos):
    # only the symmetric part of a current distortion feeds the budget, so
    # an antisymmetric offset still converges at the scheme's order
    mock = hydro.with_current_offset(cft_eos, np.array([[0.0, 0.05], [-0.05, 0.0]]))
    nets = [entropy_run(mock, cells, beta_init=off_family_beta).net_change
            for cells in (32, 64)]
    assert math.log2(nets[0] / nets[1]) > 1.3


def test_homogeneous_run_entropy_flat_to_roundoff(cft_eos):
    grid = hydro.Grid1D(L, 16)
    fields = constant_fields()
    state = hydro.stationary_state(cft_eos, grid, fields, beta_bar=1.0)
    traj = hydro.evolve(cft_eos, state, fields, dt=5e-3, t_end=0.1, record_every=4)
    assert hydro.entropy_budget(traj).net_change <= 1e-12


# ---------------------------------------------------------------------------
# characteristic structure

@pytest.mark.parametrize("d", [2, 3])
def test_rest_frame_speeds_are_conformal_sound_speed(d):
    eos = hydro.CftCellEos(d=d)
    speeds = hydro.characteristic_speeds(eos, np.array([[0.0, 1.0]]),
                                         np.array([[0.0, 1.0]]))[0]
    c = 1.0 / math.sqrt(d)
    assert speeds == pytest.approx([-c, c], abs=1e-6)


def test_small_wave_travels_at_linearized_speed(cft_eos):
    grid = hydro.Grid1D(L, 64)
    fields = constant_fields()
    beta0 = np.array([0.0, 1.0])
    A = hydro.flux_jacobian(cft_eos, beta0[None, :], np.array([[0.0, 1.0]]))[0]
    lam, W = np.linalg.eig(A)
    order = np.argsort(lam.real)
    lam, W = lam.real[order], W.real[:, order]
    c_plus = lam[1]
    l_plus = np.linalg.inv(W)[1]

    q0 = cft_eos.tables(beta0[None, :])[2][0]
    x = grid.centers
    q = q0[None, :] + 1e-4 * np.cos(2 * np.pi * x / L)[:, None] * W[:, 1][None, :]
    beta = hydro.invert_states(cft_eos, q, np.tile(beta0, (grid.cells, 1)))
    state = hydro.HydroState(grid=grid, indices=cft_eos.indices, q=q, beta=beta)

    t_end = 0.4
    n, dt = cfl_steps(cft_eos, state, fields, t_end)
    traj = hydro.evolve(cft_eos, state, fields, dt=dt, t_end=t_end, record_every=n)

    def mover(frame):
        return np.fft.rfft((frame.q - q0[None, :]) @ l_plus)[1]

    dphi = np.angle(mover(traj.frames[-1]) / mover(traj.frames[0]))
    speed = -dphi / (2 * np.pi / L) / t_end
    assert abs(speed - c_plus) / c_plus <= 0.01
    # the central scheme is non-dissipative: the mode keeps its amplitude
    ratio = abs(mover(traj.frames[-1])) / abs(mover(traj.frames[0]))
    assert abs(ratio - 1.0) <= 1e-3


# ---------------------------------------------------------------------------
# stationary family on an interacting model

def test_tba_stationary_run_with_chemical_shift():
    eos = hydro.TbaCellEos(hard_rods(0.5), indices=(0, 1, 2), size=96)
    fields = hydro.FieldProfile.build(L, {0: 1.0, 1: 0.0, 2: {
        "base": 1.0, "terms": [{"kind": "bump", "amplitude": 0.1,
                                "center": 0.5, "width": 3.0}]}})
    drifts = []
    for cells, t_steps in ((10, 1), (20, 2)):
        grid = hydro.Grid1D(L, cells)
        state = hydro.stationary_state(eos, grid, fields, beta_bar=1.0, mu_bar=0.3)
        n, dt = cfl_steps(eos, state, fields, t_end=0.1)
        traj = hydro.evolve(eos, state, fields, dt=dt, t_end=0.1,
                            record_every=n, speed_refresh=0)
        drifts.append(float(np.max(np.abs(traj.frames[-1].q - traj.frames[0].q))))
    assert drifts[1] < drifts[0] / 3.0
    assert drifts[1] < 1e-3


# ---------------------------------------------------------------------------
# few-charge closure

def test_few_charge_currents_match_cft_row():
    backend = CftBackend(d=2)
    beta_rest, theta = 0.9, 0.3
    T = 1.0 / (beta_rest * math.cosh(theta))
    nu = math.tanh(theta)
    row = hydro.few_charge_currents(backend, T, nu)
    beta = PotentialVector.of({1: -beta_rest * math.sinh(theta),
                               2: beta_rest * math.cosh(theta)})
    j = backend.current_averages_analytic(beta)
    assert row[1] == pytest.approx(j[(2, 1)], abs=1e-10)
    assert row[2] == pytest.approx(j[(2, 2)], abs=1e-10)


def test_few_charge_flux_route_agrees_with_closed_form():
    backend = CftBackend(d=3)
    closed = hydro.few_charge_currents(backend, 1.1, 0.25)
    flux = hydro.few_charge_currents_from_flux(backend, 1.1, 0.25)
    for k in closed:
        assert closed[k] == pytest.approx(flux[k], abs=1e-8)


def test_few_charge_currents_at_rest_and_constant_shift():
    backend = CftBackend(d=2)
    T = 0.8
    rest = hydro.few_charge_currents(backend, T, 0.0)
    f = backend.free_energy(PotentialVector.of({1: 0.0, 2: 1.0 / T}))
    assert rest[1] == pytest.approx(-T * f, abs=1e-12)
    assert rest[2] == 0.0
    shifted = hydro.few_charge_currents(backend, T, 0.0, ekms_constant=0.7)
    assert shifted[2] - rest[2] == pytest.approx(-T * T * 0.7, abs=1e-15)


def test_few_charge_currents_on_interacting_model():
    backend = TbaBackend(hard_rods(0.8), size=240)
    T, nu, mu = 0.9, 0.2, 0.15
    row = hydro.few_charge_currents(backend, T, nu, chemical_potential=mu)
    beta = PotentialVector.of({0: -mu / T, 1: -nu / T, 2: 1.0 / T})
    j = backend.current_averages_analytic(beta)
    for i in (0, 1, 2):
        assert row[i] == pytest.approx(j[(2, i)], abs=1e-8)
    flux = hydro.few_charge_currents_from_flux(backend, T, nu, chemical_potential=mu)
    for i in (0, 1, 2):
        assert row[i] == pytest.approx(flux[i], abs=1e-7)


def test_few_charge_closure_guards():
    backend = CftBackend(d=2)
    with pytest.raises(UnknownChargeIndex):
        hydro.few_charge_currents(backend, 1.0, 0.1, chemical_potential=0.4)
    with pytest.raises(DomainExceeded):
        hydro.few_charge_currents(backend, -1.0, 0.1)


# ---------------------------------------------------------------------------
# trajectory outputs

def test_trajectory_csv_and_manifest(cft_eos):
    grid = hydro.Grid1D(L, 16)
    fields = smooth_fields()
    state = hydro.stationary_state(cft_eos, grid, fields, beta_bar=1.0)
    traj = hydro.evolve(cft_eos, state, fields, dt=2e-3, t_end=0.02, record_every=5)
    csv = traj.frame_csv(0)
    lines = csv.strip().split("\n")
    assert lines[0] == "x,q_1,q_2,beta_1,beta_2,s"
    assert len(lines) == grid.cells + 1
    manifest = traj.manifest()
    parsed = json.loads(json.dumps(manifest))
    assert parsed["cells"] == 16
    assert parsed["scheme"] == "central"
    assert len(parsed["frame_times"]) == len(traj.frames)
    assert np.all(np.diff(traj.times) > 0)
