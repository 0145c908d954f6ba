"""Closed forms for boosted thermal states of a conformal fluid.

States carry two charges: momentum along the boost axis (index 1) and energy
(index 2). The potential vector (beta^1, beta^2) is timelike,
beta^2 > |beta^1|, and is parametrized by the rest-frame inverse temperature
and the boost rapidity:

    beta^1 = -beta_rest * sinh(theta),   beta^2 = beta_rest * cosh(theta).

With u = beta^2, v = beta^1 and beta_rest^2 = u^2 - v^2 the specific free
energy is f = -a u (u^2 - v^2)^-(d+1)/2, where d >= 2 is the spatial
dimension and `a` the overall equation-of-state constant. All averages,
currents, flux potentials, and susceptibilities below are exact derivatives
of f, so the backend is roundoff-exact and serves as ground truth for the
generic check layer.

The normalization a = 1 is the unique choice making the conventional flux
forms g1 = f = -beta_rest^-d cosh(theta), g2 = -beta_rest^-d sinh(theta)
consistent with the averages; every quantity here scales linearly in `a`, so
the generating relations hold for any a > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ThermoBackend
from .errors import DomainExceeded, TimelikeViolation
from .potentials import PotentialVector

MOMENTUM, ENERGY = 1, 2


@dataclass(frozen=True)
class CftState:
    d: int
    beta_rest: float
    theta: float
    a: float = 1.0

    def __post_init__(self):
        if self.d < 2:
            raise DomainExceeded(f"spatial dimension {self.d} < 2")
        if not (self.beta_rest > 0.0 and math.isfinite(self.beta_rest)):
            raise TimelikeViolation(f"beta_rest must be positive, got {self.beta_rest}")
        if self.a <= 0.0:
            raise DomainExceeded(f"equation-of-state constant a must be > 0, got {self.a}")

    @property
    def beta(self) -> PotentialVector:
        return PotentialVector.of({
            MOMENTUM: -self.beta_rest * math.sinh(self.theta),
            ENERGY: self.beta_rest * math.cosh(self.theta)})


def cft_from_potentials(beta: PotentialVector, d: int, a: float = 1.0) -> CftState:
    v, u = beta[MOMENTUM], beta[ENERGY]
    if not u > abs(v):
        raise TimelikeViolation(f"require beta^2 > |beta^1|, got {beta}")
    beta_rest = math.sqrt(u * u - v * v)
    theta = math.atanh(-v / u)
    return CftState(d=d, beta_rest=beta_rest, theta=theta, a=a)


# ---------------------------------------------------------------------------
# array-valued closed forms (hydro evaluates these per cell)

def _split(v, u, d):
    br2 = u * u - v * v
    if np.any(br2 <= 0.0):
        raise TimelikeViolation("potential vector not timelike")
    rho = br2 ** (-(d + 3) / 2.0)
    return br2, rho


def averages_arrays(v, u, d: int, a: float = 1.0):
    """(<q_1>, <q_2>) for arrays of potentials."""
    br2, rho = _split(v, u, d)
    q1 = -a * (d + 1) * u * v * rho
    q2 = a * rho * (d * u * u + v * v)
    return q1, q2


def currents_arrays(v, u, d: int, a: float = 1.0):
    """(<j_11>, <j_12>, <j_21>, <j_22>); momentum currents equal the charge
    averages themselves."""
    br2, rho = _split(v, u, d)
    q1 = -a * (d + 1) * u * v * rho
    q2 = a * rho * (d * u * u + v * v)
    j21 = a * rho * (u * u + d * v * v)
    return q1, q2, j21, q1


def flux_arrays(v, u, d: int, a: float = 1.0):
    """(g_1, g_2) = (f, transverse flux potential)."""
    br2, _ = _split(v, u, d)
    pref = a * br2 ** (-(d + 1) / 2.0)
    return -pref * u, pref * v


def covariance_arrays(v, u, d: int, a: float = 1.0):
    """Entries (C_11, C_12, C_22) of the symmetric static covariance."""
    br2, _ = _split(v, u, d)
    tail = br2 ** (-(d + 5) / 2.0)
    c11 = a * (d + 1) * u * tail * (br2 + (d + 3) * v * v)
    c12 = a * (d + 1) * v * tail * (br2 - (d + 3) * u * u)
    c22 = -a * u * tail * (2 * d * br2 - (d + 3) * (d * u * u + v * v))
    return c11, c12, c22


def b_tensor_arrays(v, u, d: int, a: float = 1.0):
    """Entries (B_111, B_112, B_121, B_122, B_211, B_212) of the current
    susceptibility B_kij = -d<j_ki>/d beta^j; the missing row repeats the
    first two entries because <j_22> = <q_1> = <j_11>.

    Every entry is written as its own differentiated form. The symmetry of
    the last two slots then equates genuinely different float expressions,
    which keeps the symmetry check meaningful for this backend."""
    br2, rho = _split(v, u, d)
    tail = rho / br2
    s = d + 3
    b111 = a * (d + 1) * u * tail * (br2 + s * v * v)
    b112 = a * (d + 1) * v * tail * (br2 - s * u * u)
    b121 = -a * v * tail * (2 * br2 + s * (d * u * u + v * v))
    b122 = -a * u * tail * (2 * d * br2 - s * (d * u * u + v * v))
    b211 = -a * v * tail * (2 * d * br2 + s * (u * u + d * v * v))
    b212 = -a * u * tail * (2 * br2 - s * (u * u + d * v * v))
    return b111, b112, b121, b122, b211, b212


# ---------------------------------------------------------------------------
# scalar API in terms of states

def cft_free_energy(state: CftState) -> float:
    g1, _ = flux_arrays(*_vu(state), state.d, state.a)
    return float(g1)


def cft_averages(state: CftState) -> dict[int, float]:
    q1, q2 = averages_arrays(*_vu(state), state.d, state.a)
    return {MOMENTUM: float(q1), ENERGY: float(q2)}


def cft_currents(state: CftState) -> dict[tuple[int, int], float]:
    j11, j12, j21, j22 = currents_arrays(*_vu(state), state.d, state.a)
    return {(MOMENTUM, MOMENTUM): float(j11), (MOMENTUM, ENERGY): float(j12),
            (ENERGY, MOMENTUM): float(j21), (ENERGY, ENERGY): float(j22)}


def cft_fluxes(state: CftState) -> dict[int, float]:
    g1, g2 = flux_arrays(*_vu(state), state.d, state.a)
    return {MOMENTUM: float(g1), ENERGY: float(g2)}


def cft_covariance(state: CftState) -> np.ndarray:
    c11, c12, c22 = covariance_arrays(*_vu(state), state.d, state.a)
    return np.array([[c11, c12], [c12, c22]], dtype=float)


def _vu(state: CftState):
    b = state.beta
    return b[MOMENTUM], b[ENERGY]


class CftBackend(ThermoBackend):
    """Exact two-charge backend for a boosted conformal fluid."""

    charge_indices = (MOMENTUM, ENERGY)
    momentum_index = MOMENTUM
    parity_symmetric = True
    has_flux_potentials = True
    has_analytic_averages = True
    has_analytic_currents = True
    has_analytic_covariance = True
    has_analytic_b_tensor = True

    def __init__(self, d: int = 2, a: float = 1.0):
        CftState(d=d, beta_rest=1.0, theta=0.0, a=a)  # validates d, a
        self.d = int(d)
        self.a = float(a)
        self.name = f"cft-d{self.d}"

    def admissible(self, beta: PotentialVector) -> bool:
        return beta[ENERGY] > abs(beta[MOMENTUM])

    def free_energy(self, beta: PotentialVector) -> float:
        self.guard(beta)
        g1, _ = flux_arrays(beta[MOMENTUM], beta[ENERGY], self.d, self.a)
        return float(g1)

    def flux_potentials(self, beta: PotentialVector) -> dict[int, float]:
        self.guard(beta)
        g1, g2 = flux_arrays(beta[MOMENTUM], beta[ENERGY], self.d, self.a)
        return {MOMENTUM: float(g1), ENERGY: float(g2)}

    def charge_averages_analytic(self, beta: PotentialVector) -> dict[int, float]:
        self.guard(beta)
        q1, q2 = averages_arrays(beta[MOMENTUM], beta[ENERGY], self.d, self.a)
        return {MOMENTUM: float(q1), ENERGY: float(q2)}

    def current_averages_analytic(self, beta: PotentialVector):
        self.guard(beta)
        j11, j12, j21, j22 = currents_arrays(beta[MOMENTUM], beta[ENERGY],
                                             self.d, self.a)
        return {(MOMENTUM, MOMENTUM): float(j11), (MOMENTUM, ENERGY): float(j12),
                (ENERGY, MOMENTUM): float(j21), (ENERGY, ENERGY): float(j22)}

    def covariance_analytic(self, beta: PotentialVector) -> np.ndarray:
        self.guard(beta)
        c11, c12, c22 = covariance_arrays(beta[MOMENTUM], beta[ENERGY],
                                          self.d, self.a)
        return np.array([[c11, c12], [c12, c22]], dtype=float)

    def b_tensor_analytic(self, beta: PotentialVector) -> np.ndarray:
        self.guard(beta)
        b111, b112, b121, b122, b211, b212 = b_tensor_arrays(
            beta[MOMENTUM], beta[ENERGY], self.d, self.a)
        return np.array([[[b111, b112], [b121, b122]],
                         [[b211, b212], [b111, b112]]], dtype=float)

    def sample_state(self, rng: np.random.Generator) -> PotentialVector:
        beta_rest = rng.uniform(0.5, 2.0)
        theta = rng.uniform(-1.0, 1.0)
        return CftState(self.d, beta_rest, theta, self.a).beta
