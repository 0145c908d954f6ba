"""Thermodynamic-Bethe-ansatz engine for integrable gases.

One quasiparticle species, rapidity variable theta, charges labelled by small
integers with one-particle eigenvalues h_0 = 1, h_k = theta^k / k for k >= 1
(so index 1 is momentum, 2 is energy, 4 the first nontrivial even charge).

The pseudo-energy solves

    eps(theta) = sum_i beta^i h_i(theta)
                 + pref * int dtheta' phi(theta', theta) F(eps(theta'))

with statistics function F (fermionic F = -log(1+e^-eps), classical
F = -e^-eps) and measure prefactor 1/(2 pi) for quantum models, 1 for
classical ones. Flux potentials and the free energy are boundary-safe
integrals of F,

    g_k = pref * int dtheta h_k'(theta) F(eps(theta)),     f = g_1,

and averages come from the dressing equation
h^dr = h + pref * int dtheta' phi(theta', theta) n(theta') h^dr(theta') with
occupation n = F'(eps):

    <q_i>    = pref * int dtheta n (h_1')^dr h_i,
    <j_ki>   = pref * int dtheta n (h_k')^dr h_i.

Everything is discretized on a Gauss-Legendre grid over [-Theta, Theta] with
Theta chosen (or auto-expanded) so the integrands are dead at the edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import expit, spence

from .core import ThermoBackend, ULTRALOCAL_INDEX
from .errors import (DomainExceeded, DrivingUnbounded, NoConvergence, NonFinite,
                     SingularSystem, UnknownChargeIndex)
from .potentials import PotentialVector

TWO_PI = 2.0 * math.pi

DEFAULT_M = 400
DEFAULT_TOL = 1e-12
DEFAULT_DAMPING = 0.5
DEFAULT_MAX_ITERS = 10000
EDGE_TARGET = 1e-14  # |F| demanded at the grid edges


# ---------------------------------------------------------------------------
# statistics

def stat_F(statistics: str, eps):
    """Free energy function of the statistics."""
    eps = np.asarray(eps, dtype=float)
    if statistics == "fermionic":
        return -np.logaddexp(0.0, -eps)
    if statistics == "classical":
        return -np.exp(-np.clip(eps, -700.0, None))
    raise UnknownChargeIndex(f"unknown statistics {statistics!r}")


def stat_occupation(statistics: str, eps):
    """n = F'(eps); in [0,1] for fermions, >= 0 classically."""
    eps = np.asarray(eps, dtype=float)
    if statistics == "fermionic":
        return expit(-eps)
    if statistics == "classical":
        return np.exp(-np.clip(eps, -700.0, None))
    raise UnknownChargeIndex(f"unknown statistics {statistics!r}")


def stat_F_antiderivative(statistics: str, eps):
    """Antiderivative of F vanishing as eps -> +inf (used by the boundary
    form of the EKMS sum)."""
    eps = np.asarray(eps, dtype=float)
    if statistics == "fermionic":
        return -spence(1.0 + np.exp(-np.clip(eps, -700.0, None)))
    if statistics == "classical":
        return np.exp(-np.clip(eps, -700.0, None))
    raise UnknownChargeIndex(f"unknown statistics {statistics!r}")


def stat_susceptibility(statistics: str, eps):
    """-dn/deps: n(1-n) for fermions, n classically."""
    eps = np.asarray(eps, dtype=float)
    if statistics == "fermionic":
        return expit(-eps) * expit(eps)
    if statistics == "classical":
        return np.exp(-np.clip(eps, -700.0, None))
    raise UnknownChargeIndex(f"unknown statistics {statistics!r}")


# ---------------------------------------------------------------------------
# charges

def charge_eigenvalue(k: int, theta):
    theta = np.asarray(theta, dtype=float)
    if k == 0:
        return np.ones_like(theta)
    if k >= 1:
        return theta ** k / k
    raise UnknownChargeIndex(f"charge index {k} not supported")


def charge_eigenvalue_prime(k: int, theta):
    theta = np.asarray(theta, dtype=float)
    if k == 0:
        return np.zeros_like(theta)
    if k == 1:
        return np.ones_like(theta)
    if k >= 2:
        return theta ** (k - 1)
    raise UnknownChargeIndex(f"charge index {k} not supported")


# ---------------------------------------------------------------------------
# models

@dataclass(frozen=True)
class TbaModel:
    """Scattering data of one integrable model.

    kernel(theta_prime, theta) is the differential phase; kernel_dtheta is
    its derivative in the *second* slot (used by the unitarity check). A
    constant kernel may be declared through kernel_constant, enabling the
    rank-one fast path in the dressing."""
    name: str
    statistics: str
    prefactor: float
    kernel: Callable | None = None
    kernel_dtheta: Callable | None = None
    kernel_constant: float | None = None
    charges: tuple[int, ...] = (0, 1, 2, 4)
    params: dict = field(default_factory=dict)

    def kernel_values(self, theta_prime, theta):
        tp, t = np.broadcast_arrays(np.asarray(theta_prime, float),
                                    np.asarray(theta, float))
        if self.kernel_constant is not None:
            return np.full(tp.shape, self.kernel_constant)
        if self.kernel is None:
            return np.zeros(tp.shape)
        return np.asarray(self.kernel(tp, t), dtype=float)


def free_fermion() -> TbaModel:
    return TbaModel(name="free-fermion", statistics="fermionic",
                    prefactor=1.0 / TWO_PI)


def free_classical() -> TbaModel:
    return TbaModel(name="free-classical", statistics="classical", prefactor=1.0)


def hard_rods(rod_length: float = 1.0) -> TbaModel:
    if rod_length < 0:
        raise DomainExceeded(f"rod length must be >= 0, got {rod_length}")
    return TbaModel(name="hard-rods", statistics="classical", prefactor=1.0,
                    kernel_constant=-float(rod_length),
                    params={"rod_length": float(rod_length)})


def lieb_liniger(coupling: float = 1.0) -> TbaModel:
    if coupling <= 0:
        raise DomainExceeded(f"coupling must be > 0, got {coupling}")
    c = float(coupling)

    def kernel(tp, t):
        return 2.0 * c / ((t - tp) ** 2 + c * c)

    def kernel_dtheta(tp, t):
        return -4.0 * c * (t - tp) / ((t - tp) ** 2 + c * c) ** 2

    return TbaModel(name="lieb-liniger", statistics="fermionic",
                    prefactor=1.0 / TWO_PI, kernel=kernel,
                    kernel_dtheta=kernel_dtheta, params={"coupling": c})


MODEL_FACTORIES = {
    "free-fermion": free_fermion,
    "free-classical": free_classical,
    "hard-rods": hard_rods,
    "lieb-liniger": lieb_liniger,
}


# ---------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True)
class QuadratureGrid:
    theta_max: float
    size: int
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, theta_max: float, size: int = DEFAULT_M) -> "QuadratureGrid":
        if not (theta_max > 0 and size >= 2):
            raise DomainExceeded(f"bad grid request Theta={theta_max}, M={size}")
        x, w = leggauss(size)
        return cls(theta_max=float(theta_max), size=int(size),
                   nodes=theta_max * x, weights=theta_max * w)

    def quad(self, values) -> float:
        return float(self.weights @ np.asarray(values, dtype=float))


# ---------------------------------------------------------------------------
# driving term and admissibility

def driving_term(beta: PotentialVector, theta):
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    for i in beta.indices:
        out += beta[i] * charge_eigenvalue(i, theta)
    return out


def driving_confined(beta: PotentialVector) -> bool:
    """True when the driving term grows to +inf on both sides: the highest
    active even charge must dominate every active odd one and carry a
    positive coefficient."""
    even = [i for i in beta.indices if i >= 2 and i % 2 == 0 and beta[i] != 0.0]
    odd = [i for i in beta.indices if i % 2 == 1 and beta[i] != 0.0]
    if not even:
        return False
    top = max(even)
    if beta[top] <= 0.0:
        return False
    return all(top > o for o in odd)


def _auto_theta(beta: PotentialVector, target: float = 45.0) -> float:
    """Smallest |theta| with driving >= target on both sides, by coarse scan."""
    thetas = np.geomspace(0.5, 200.0, 600)
    for th in thetas:
        if driving_term(beta, np.array([-th, th])).min() >= target:
            return float(th)
    return 200.0


# ---------------------------------------------------------------------------
# pseudo-energy

@dataclass
class PseudoEnergy:
    """Converged pseudo-energy of one state on one grid."""
    model: TbaModel
    beta: PotentialVector
    grid: QuadratureGrid
    eps: np.ndarray
    iterations: int
    residual: float
    _kernel_matrix: np.ndarray | None = None
    _dressed: dict = field(default_factory=dict)

    @property
    def F(self) -> np.ndarray:
        return stat_F(self.model.statistics, self.eps)

    @property
    def occupation(self) -> np.ndarray:
        return stat_occupation(self.model.statistics, self.eps)

    def eps_at(self, theta) -> np.ndarray:
        """Pseudo-energy off the grid via the defining equation."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        w = driving_term(self.beta, theta)
        phi = self.model.kernel_values(self.grid.nodes[None, :], theta[:, None])
        conv = self.model.prefactor * (phi * self.grid.weights[None, :]) @ self.F
        return w + conv

    def dressed(self, k: int) -> np.ndarray:
        """(h_k')^dr, cached per charge index."""
        if k not in self._dressed:
            self._dressed[k] = dress(self, charge_eigenvalue_prime(k, self.grid.nodes))
        return self._dressed[k]


def _kernel_matrix(model: TbaModel, grid: QuadratureGrid) -> np.ndarray:
    """K[m, m'] = pref * w_m' * phi(theta_m', theta_m); conv = K @ F."""
    phi = model.kernel_values(grid.nodes[None, :], grid.nodes[:, None])
    return model.prefactor * phi * grid.weights[None, :]


def solve_pseudo_energy(model: TbaModel, beta: PotentialVector,
                        grid: QuadratureGrid | None = None,
                        size: int = DEFAULT_M,
                        theta_max: float | None = None,
                        damping: float = DEFAULT_DAMPING,
                        tol: float = DEFAULT_TOL,
                        max_iters: int = DEFAULT_MAX_ITERS,
                        auto_expand: bool = True) -> PseudoEnergy:
    """Damped Picard iteration for the pseudo-energy.

    The grid half-width is auto-selected from the driving term and expanded
    (up to a few times) until F at the true edges is below EDGE_TARGET, so
    the boundary terms of all flux integrals are negligible by construction.
    """
    unknown = set(beta.indices) - set(model.charges)
    if unknown:
        raise UnknownChargeIndex(f"{model.name} lacks charges {sorted(unknown)}")
    if not driving_confined(beta):
        raise DrivingUnbounded(f"driving term for {beta} is not confined")
    if grid is not None:
        auto_expand = False

    theta = theta_max if theta_max is not None else _auto_theta(beta)
    for _expansion in range(8):
        g = grid if grid is not None else QuadratureGrid.build(theta, size)
        K = _kernel_matrix(model, g)
        w = driving_term(beta, g.nodes)
        eps = w.copy()
        converged = False
        for it in range(1, max_iters + 1):
            F = stat_F(model.statistics, eps)
            rhs = w + K @ F
            if not np.all(np.isfinite(rhs)):
                raise NonFinite(f"pseudo-energy iteration diverged for {beta}")
            res = float(np.max(np.abs(rhs - eps)))
            eps = (1.0 - damping) * eps + damping * rhs
            if res <= tol:
                converged = True
                break
        if not converged:
            raise NoConvergence(
                f"Picard failed after {max_iters} iterations (residual {res:.3e})")
        pe = PseudoEnergy(model=model, beta=beta, grid=g, eps=eps,
                          iterations=it, residual=res, _kernel_matrix=K)
        edge_F = np.abs(stat_F(model.statistics,
                               pe.eps_at([-g.theta_max, g.theta_max])))
        if not auto_expand or edge_F.max() <= EDGE_TARGET:
            return pe
        theta *= 1.5
    return pe  # best effort after expansions; check_asymptotic will flag it


# ---------------------------------------------------------------------------
# dressing

def dress(pe: PseudoEnergy, bare: np.ndarray) -> np.ndarray:
    """Solve h^dr = h + pref * int phi n h^dr on the grid.

    Constant kernels reduce to a rank-one update solved in closed form; the
    general case is a dense solve.
    """
    bare = np.asarray(bare, dtype=float)
    n = pe.occupation
    g = pe.grid
    model = pe.model
    if model.kernel is None and model.kernel_constant is None:
        return bare.copy()
    if model.kernel_constant is not None:
        c = model.prefactor * model.kernel_constant
        wn = g.weights * n
        denom = 1.0 - c * float(wn.sum())
        if abs(denom) < 1e-14:
            raise SingularSystem("rank-one dressing denominator vanished")
        shift = c * float(wn @ bare) / denom
        return bare + shift
    K = pe._kernel_matrix
    if K is None:
        K = _kernel_matrix(model, g)
    A = np.eye(g.size) - K * n[None, :]
    try:
        return np.linalg.solve(A, bare)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"dressing system singular: {exc}") from None


# ---------------------------------------------------------------------------
# thermodynamics of a solved state

def free_energy(pe: PseudoEnergy) -> float:
    """Specific free energy: the momentum-derivative-weighted integral of F
    (h_1' = 1 identically for these charge families)."""
    return pe.model.prefactor * pe.grid.quad(pe.F)


def flux_potential(pe: PseudoEnergy, k: int) -> float:
    """g_k; identically zero for the ultra-local charge."""
    if k not in pe.model.charges:
        raise UnknownChargeIndex(f"{pe.model.name} lacks charge {k}")
    if k == ULTRALOCAL_INDEX:
        return 0.0
    hp = charge_eigenvalue_prime(k, pe.grid.nodes)
    return pe.model.prefactor * pe.grid.quad(hp * pe.F)


def flux_potentials(pe: PseudoEnergy, indices=None) -> dict[int, float]:
    idx = pe.beta.indices if indices is None else tuple(indices)
    return {k: flux_potential(pe, k) for k in idx}


def charge_averages(pe: PseudoEnergy, indices=None) -> dict[int, float]:
    idx = pe.beta.indices if indices is None else tuple(indices)
    n = pe.occupation
    base = pe.model.prefactor * pe.grid.weights * n * pe.dressed(1)
    return {i: float(base @ charge_eigenvalue(i, pe.grid.nodes)) for i in idx}


def current_averages(pe: PseudoEnergy, indices=None) -> dict[tuple[int, int], float]:
    """<j_ki>; rows for the ultra-local charge vanish identically."""
    idx = pe.beta.indices if indices is None else tuple(indices)
    n = pe.occupation
    out = {}
    h_vals = {i: charge_eigenvalue(i, pe.grid.nodes) for i in idx}
    for k in idx:
        if k == ULTRALOCAL_INDEX:
            for i in idx:
                out[(k, i)] = 0.0
            continue
        base = pe.model.prefactor * pe.grid.weights * n * pe.dressed(k)
        for i in idx:
            out[(k, i)] = float(base @ h_vals[i])
    return out


def covariance_dressed(pe: PseudoEnergy, indices=None) -> np.ndarray:
    """Static covariance C_ij = -d<q_i>/dbeta^j from dressed quantities:
    the susceptibility integral over the dressed measure,

        C_ij = pref * int w * 1^dr * (-dn/deps) * h_i^dr * h_j^dr,

    manifestly symmetric and positive semidefinite. Cross-checked against
    finite differences of the averages in the test suite."""
    idx = pe.beta.indices if indices is None else tuple(indices)
    sus = stat_susceptibility(pe.model.statistics, pe.eps)
    ones_dr = dress(pe, np.ones(pe.grid.size))
    base = pe.model.prefactor * pe.grid.weights * ones_dr * sus
    hdr = [dress(pe, charge_eigenvalue(i, pe.grid.nodes)) for i in idx]
    k = len(idx)
    C = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            C[a, b] = C[b, a] = float(base @ (hdr[a] * hdr[b]))
    return C


def ekms_constant_via_chain(pe: PseudoEnergy) -> float:
    """sum_k beta^k g_k rewritten through the pseudo-energy equation: an
    exact boundary term plus the antisymmetrized kernel double integral.
    Agreement with the direct sum validates the whole quadrature chain."""
    g = pe.grid
    F_anti = stat_F_antiderivative(pe.model.statistics,
                                   pe.eps_at([-g.theta_max, g.theta_max]))
    boundary = pe.model.prefactor * float(F_anti[1] - F_anti[0])
    if pe.model.kernel is None and pe.model.kernel_constant is None:
        return boundary
    if pe.model.kernel_constant is not None:
        return boundary  # constant kernel: the double integral is exactly zero
    if pe.model.kernel_dtheta is None:
        raise UnknownChargeIndex(f"{pe.model.name} lacks a kernel derivative")
    D = np.asarray(pe.model.kernel_dtheta(g.nodes[:, None], g.nodes[None, :]),
                   dtype=float)  # D[a, b] = d phi / d second slot at (th_a, th_b)
    F = pe.F
    double = float((g.weights * F) @ D @ (g.weights * F))
    return boundary - pe.model.prefactor ** 2 * double


# ---------------------------------------------------------------------------
# structural checks on models and solved states

def check_asymptotic(pe: PseudoEnergy, tol: float = 1e-12):
    """F must be dead at the grid edges, including an estimated tail mass."""
    from .core import CheckReport

    g = pe.grid
    edges = np.array([-g.theta_max, g.theta_max])
    F_edge = np.abs(stat_F(pe.model.statistics, pe.eps_at(edges)))
    # local decay length from the last interior nodes gives the tail estimate
    probe = np.array([-g.theta_max * 0.995, g.theta_max * 0.995])
    F_in = np.abs(stat_F(pe.model.statistics, pe.eps_at(probe)))
    span = 0.005 * g.theta_max
    tails = []
    for fe, fi in zip(F_edge, F_in):
        if fe <= 0.0:
            tails.append(0.0)
            continue
        decay = math.log(fi / fe) / span if fi > fe else 0.0
        tails.append(fe * (1.0 / decay if decay > 0 else g.theta_max))
    residual = float(max(max(F_edge), max(tails)))
    return CheckReport("asymptotic", pe.model.name, residual <= tol, residual, tol,
                       details={"edge_F": F_edge.tolist(),
                                "tail_estimates": tails,
                                "theta_max": g.theta_max})


def check_unitarity(model: TbaModel, grid: QuadratureGrid, tol: float = 1e-10):
    """The theta-derivative of the kernel must be antisymmetric under swapping
    its slots (difference kernels: phi even)."""
    from .core import CheckReport

    t = grid.nodes
    if model.kernel_dtheta is not None:
        D = np.asarray(model.kernel_dtheta(t[:, None], t[None, :]), dtype=float)
    elif model.kernel is None and model.kernel_constant is None:
        D = np.zeros((grid.size, grid.size))
    elif model.kernel_constant is not None:
        D = np.zeros((grid.size, grid.size))
    else:
        h = 1e-5 * max(1.0, grid.theta_max / 10.0)
        D = (model.kernel_values(t[:, None], t[None, :] + h)
             - model.kernel_values(t[:, None], t[None, :] - h)) / (2.0 * h)
    residual = float(np.max(np.abs(D + D.T)))
    return CheckReport("unitarity", model.name, residual <= tol, residual, tol,
                       details={"grid_size": grid.size, "theta_max": grid.theta_max})


# ---------------------------------------------------------------------------
# batched solves (hydro reconstructs one state per cell)

def solve_pseudo_energy_batch(model: TbaModel, beta_matrix: np.ndarray,
                              indices: tuple[int, ...], grid: QuadratureGrid,
                              damping: float = DEFAULT_DAMPING,
                              tol: float = DEFAULT_TOL,
                              max_iters: int = DEFAULT_MAX_ITERS,
                              eps0: np.ndarray | None = None) -> np.ndarray:
    """Picard iteration vectorized over rows of beta_matrix; returns eps of
    shape (n_states, grid.size)."""
    beta_matrix = np.asarray(beta_matrix, dtype=float)
    H = np.stack([charge_eigenvalue(i, grid.nodes) for i in indices])
    W = beta_matrix @ H
    K = _kernel_matrix(model, grid)
    eps = W.copy() if eps0 is None else np.array(eps0, dtype=float)
    for _ in range(max_iters):
        F = stat_F(model.statistics, eps)
        rhs = W + F @ K.T
        if not np.all(np.isfinite(rhs)):
            raise NonFinite("batched pseudo-energy iteration diverged")
        res = float(np.max(np.abs(rhs - eps)))
        eps = (1.0 - damping) * eps + damping * rhs
        if res <= tol:
            return eps
    raise NoConvergence(f"batched Picard failed (residual {res:.3e})")


def batch_state_tables(model: TbaModel, eps: np.ndarray,
                       indices: tuple[int, ...], grid: QuadratureGrid):
    """Per-row f, g_k, <q_i>, <j_ki> for a batch of solved pseudo-energies.

    Returns (f, g, q, j) with shapes (B,), (B, n), (B, n), (B, n, n).
    """
    B = eps.shape[0]
    n_idx = len(indices)
    F = stat_F(model.statistics, eps)
    occ = stat_occupation(model.statistics, eps)
    pref = model.prefactor
    H = np.stack([charge_eigenvalue(i, grid.nodes) for i in indices])
    Hp = np.stack([charge_eigenvalue_prime(i, grid.nodes) for i in indices])

    f = pref * F @ grid.weights
    g = pref * F @ (Hp * grid.weights[None, :]).T

    # dressed h_k' for every row: rank-one fast path or batched dense solve
    if model.kernel is None and model.kernel_constant is None:
        dressed = np.broadcast_to(Hp[None, :, :], (B, n_idx, grid.size)).copy()
    elif model.kernel_constant is not None:
        c = pref * model.kernel_constant
        wn = grid.weights[None, :] * occ               # (B, M)
        denom = 1.0 - c * wn.sum(axis=1)               # (B,)
        if np.any(np.abs(denom) < 1e-14):
            raise SingularSystem("rank-one dressing denominator vanished")
        shift = c * (wn @ Hp.T) / denom[:, None]       # (B, n)
        dressed = Hp[None, :, :] + shift[:, :, None]
    else:
        K = _kernel_matrix(model, grid)
        A = np.eye(grid.size)[None, :, :] - K[None, :, :] * occ[:, None, :]
        rhs = np.broadcast_to(Hp.T[None, :, :], (B, grid.size, n_idx))
        try:
            dressed = np.linalg.solve(A, rhs).transpose(0, 2, 1)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"batched dressing singular: {exc}") from None

    base = pref * grid.weights[None, None, :] * occ[:, None, :] * dressed
    j = np.einsum("bkm,im->bki", base, H)
    for pos, k in enumerate(indices):
        if k == ULTRALOCAL_INDEX:
            j[:, pos, :] = 0.0
    q_pos = indices.index(1) if 1 in indices else None
    if q_pos is not None:
        q = j[:, q_pos, :].copy()
    else:
        ones_dr = _dress_ones(model, occ, grid)
        q = pref * np.einsum("bm,bm,im->bi",
                             grid.weights[None, :] * occ, ones_dr, H)
    return f, g, q, j


def _dress_ones(model, occ, grid):
    B = occ.shape[0]
    ones = np.ones((B, grid.size))
    if model.kernel is None and model.kernel_constant is None:
        return ones
    if model.kernel_constant is not None:
        c = model.prefactor * model.kernel_constant
        wn = grid.weights[None, :] * occ
        denom = 1.0 - c * wn.sum(axis=1)
        shift = c * wn.sum(axis=1) / denom
        return ones + shift[:, None]
    K = _kernel_matrix(model, grid)
    A = np.eye(grid.size)[None, :, :] - K[None, :, :] * occ[:, None, :]
    return np.linalg.solve(A, ones[:, :, None])[:, :, 0]


def _batch_dress(model, occ, grid, bare):
    """Dress a stack of bare rows (n, M) for every occupation row (B, M);
    returns (B, n, M)."""
    B = occ.shape[0]
    n_rows = bare.shape[0]
    if model.kernel is None and model.kernel_constant is None:
        return np.broadcast_to(bare[None, :, :], (B, n_rows, grid.size)).copy()
    if model.kernel_constant is not None:
        c = model.prefactor * model.kernel_constant
        wn = grid.weights[None, :] * occ
        denom = 1.0 - c * wn.sum(axis=1)
        if np.any(np.abs(denom) < 1e-14):
            raise SingularSystem("rank-one dressing denominator vanished")
        shift = c * (wn @ bare.T) / denom[:, None]
        return bare[None, :, :] + shift[:, :, None]
    K = _kernel_matrix(model, grid)
    A = np.eye(grid.size)[None, :, :] - K[None, :, :] * occ[:, None, :]
    rhs = np.broadcast_to(bare.T[None, :, :], (B, grid.size, n_rows))
    try:
        return np.linalg.solve(A, rhs).transpose(0, 2, 1)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"batched dressing singular: {exc}") from None


def batch_covariance(model: TbaModel, eps: np.ndarray,
                     indices: tuple[int, ...], grid: QuadratureGrid) -> np.ndarray:
    """Per-row static covariance matrices, shape (B, n, n); the batched form
    of covariance_dressed."""
    occ = stat_occupation(model.statistics, eps)
    sus = stat_susceptibility(model.statistics, eps)
    ones_dr = _dress_ones(model, occ, grid)
    H = np.stack([charge_eigenvalue(i, grid.nodes) for i in indices])
    hdr = _batch_dress(model, occ, grid, H)
    base = model.prefactor * grid.weights[None, :] * ones_dr * sus
    return np.einsum("bm,bim,bjm->bij", base, hdr, hdr)


# ---------------------------------------------------------------------------
# backend adapter

class TbaBackend(ThermoBackend):
    """ThermoBackend over a TbaModel with per-state caching."""

    parity_symmetric = True  # registered kernels are even in the rapidity
    has_flux_potentials = True
    has_analytic_averages = True
    has_analytic_currents = True
    has_analytic_covariance = True
    momentum_index = 1

    def __init__(self, model: TbaModel, size: int = DEFAULT_M,
                 theta_max: float | None = None, tol: float = DEFAULT_TOL,
                 beta0_bound: float = 5.0, cache_size: int = 512):
        self.model = model
        self.size = int(size)
        self.theta_max = theta_max
        self.tol = float(tol)
        self.beta0_bound = float(beta0_bound)
        self.charge_indices = tuple(model.charges)
        self.name = f"tba-{model.name}"
        self._cache: dict[PotentialVector, PseudoEnergy] = {}
        self._cache_size = int(cache_size)

    def admissible(self, beta: PotentialVector) -> bool:
        if ULTRALOCAL_INDEX in beta.indices:
            if abs(beta[ULTRALOCAL_INDEX]) > self.beta0_bound:
                return False
        return driving_confined(beta)

    def solved(self, beta: PotentialVector) -> PseudoEnergy:
        pe = self._cache.get(beta)
        if pe is None:
            pe = solve_pseudo_energy(self.model, beta, size=self.size,
                                     theta_max=self.theta_max, tol=self.tol)
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[beta] = pe
        return pe

    def free_energy(self, beta: PotentialVector) -> float:
        self.guard(beta)
        return free_energy(self.solved(beta))

    def flux_potentials(self, beta: PotentialVector) -> dict[int, float]:
        self.guard(beta)
        return flux_potentials(self.solved(beta))

    def charge_averages_analytic(self, beta: PotentialVector) -> dict[int, float]:
        self.guard(beta)
        return charge_averages(self.solved(beta))

    def current_averages_analytic(self, beta: PotentialVector):
        self.guard(beta)
        return current_averages(self.solved(beta))

    def covariance_analytic(self, beta: PotentialVector) -> np.ndarray:
        self.guard(beta)
        return covariance_dressed(self.solved(beta))

    def sample_state(self, rng: np.random.Generator) -> PotentialVector:
        beta = {}
        if 0 in self.charge_indices:
            beta[0] = rng.uniform(-0.5, 0.5)
        if 1 in self.charge_indices:
            beta[1] = rng.uniform(-0.3, 0.3)
        if 2 in self.charge_indices:
            beta[2] = rng.uniform(0.3, 1.5)
        if 4 in self.charge_indices:
            beta[4] = rng.uniform(0.05, 0.4)
        return PotentialVector.of(beta)
