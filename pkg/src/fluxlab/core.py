"""Backend contract, state reports, and the identity-check layer.

A thermodynamic backend exposes the specific free energy f(beta) of a family
of maximal-entropy states and, when it has them, closed forms for the flux
potentials g_k, the charge averages <q_i>, and the current averages <j_ki>.
Everything else here is generic: derivatives are taken with the stencils in
`numdiff`, and the checks verify the structural identities that any backend
must satisfy:

  ekms        sum_k beta^k g_k is the same constant in every state
              (zero when a parity-symmetric stable charge exists),
  identity-a  g_i + sum_k beta^k <j_ki> is state independent (gauge free form),
  identity-b  <j_ij> + <j_ji> = sum_k beta^k B_kij,
  identity-c  sum_{k,i} beta^k beta^i <j_ki> = -G,
  identity-d  sum_k beta^k js_k = -2G,
  b-symmetry  B_kij = B_kji,
  c-psd       the static covariance C is symmetric positive semi-definite,
  g1-equals-f the momentum flux potential equals the free energy.

B_kij = -d<j_ki>/d beta^j and C_ij = -d<q_i>/d beta^j throughout.
"""

from __future__ import annotations

import abc
import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import numdiff
from .errors import DomainExceeded, InsufficientSamples, UnknownChargeIndex
from .potentials import PotentialVector

ULTRALOCAL_INDEX = 0  # charge with trivial dynamics: g_0 = 0 and j_0i = 0


class ThermoBackend(abc.ABC):
    """Family of maximal-entropy states of one homogeneous model.

    Capabilities vary: integrable backends carry flux potentials and analytic
    currents, the lattice backend carries analytic averages and currents but
    no flux potentials, closed-form backends carry everything.
    """

    name: str = "backend"
    charge_indices: tuple[int, ...] = ()
    momentum_index: int | None = None
    #: a parity-symmetric stable charge exists, forcing the EKMS constant to 0
    parity_symmetric: bool = False
    has_flux_potentials: bool = True
    has_analytic_averages: bool = False
    has_analytic_currents: bool = False
    has_analytic_covariance: bool = False
    has_analytic_b_tensor: bool = False

    @abc.abstractmethod
    def admissible(self, beta: PotentialVector) -> bool:
        """True when beta labels a normalizable state of this backend."""

    @abc.abstractmethod
    def free_energy(self, beta: PotentialVector) -> float:
        """Specific free energy f with <q_i> = d f / d beta^i."""

    def flux_potentials(self, beta: PotentialVector) -> dict[int, float]:
        """Flux potentials g_k with <j_ki> = d g_k / d beta^i."""
        raise NotImplementedError(f"{self.name} has no flux potentials")

    def charge_averages_analytic(self, beta: PotentialVector) -> dict[int, float]:
        raise NotImplementedError

    def current_averages_analytic(self, beta: PotentialVector) -> dict[tuple[int, int], float]:
        raise NotImplementedError

    def covariance_analytic(self, beta: PotentialVector) -> np.ndarray:
        raise NotImplementedError

    def b_tensor_analytic(self, beta: PotentialVector) -> np.ndarray:
        raise NotImplementedError

    @abc.abstractmethod
    def sample_state(self, rng: np.random.Generator) -> PotentialVector:
        """Draw a random admissible potential vector, with enough margin that
        default finite-difference stencils stay admissible."""

    def require_charges(self, beta: PotentialVector) -> None:
        unknown = set(beta.indices) - set(self.charge_indices)
        if unknown:
            raise UnknownChargeIndex(
                f"{self.name} does not carry charges {sorted(unknown)}")

    def guard(self, beta: PotentialVector) -> None:
        self.require_charges(beta)
        if not self.admissible(beta):
            raise DomainExceeded(f"{beta} outside admissible domain of {self.name}")


# ---------------------------------------------------------------------------
# derivative-based quantities

@dataclass
class DerivedValues:
    """Values plus the cross-check residual between analytic and
    finite-difference routes (None when only one route exists)."""
    values: dict
    fd_values: dict | None = None
    residual: float | None = None


def _dict_diff(fn, beta, j, delta, richardson, admissible):
    """Central difference of a dict-valued function of beta in direction j."""
    h = numdiff.step_size(beta[j], delta)

    def level(step):
        plus = fn(beta.shifted(j, +step))
        minus = fn(beta.shifted(j, -step))
        return {key: (plus[key] - minus[key]) / (2.0 * step) for key in plus}

    if admissible is not None:
        for s in (h, -h):
            if not admissible(beta.shifted(j, s)):
                raise DomainExceeded(f"stencil in direction {j} leaves domain at {beta}")
    coarse = level(h)
    if not richardson:
        return coarse
    fine = level(h / 2.0)
    return {key: (4.0 * fine[key] - coarse[key]) / 3.0 for key in coarse}


def charge_averages(backend: ThermoBackend, beta: PotentialVector,
                    delta: float = numdiff.DELTA_FIRST,
                    richardson: bool = True) -> DerivedValues:
    """<q_i> = d f / d beta^i, preferring the backend's closed form.

    When both routes exist the finite-difference values are kept alongside as
    a cross-check residual.
    """
    backend.guard(beta)
    fd = None
    if backend.has_flux_potentials or not backend.has_analytic_averages:
        fd = numdiff.gradient(backend.free_energy, beta, delta=delta,
                              richardson=richardson, admissible=backend.admissible)
    if backend.has_analytic_averages:
        values = backend.charge_averages_analytic(beta)
        residual = (max(abs(values[i] - fd[i]) for i in beta.indices)
                    if fd is not None else None)
        return DerivedValues(values, fd, residual)
    return DerivedValues(fd)


def currents_from_flux(backend: ThermoBackend, beta: PotentialVector,
                       delta: float = numdiff.DELTA_FIRST,
                       richardson: bool = True) -> DerivedValues:
    """<j_ki> = d g_k / d beta^i for every pair of carried charges."""
    backend.guard(beta)
    fd = None
    if backend.has_flux_potentials:
        def g_of(b):
            return backend.flux_potentials(b)

        fd = {}
        for i in beta.indices:
            col = _dict_diff(g_of, beta, i, delta, richardson, backend.admissible)
            for k in beta.indices:
                fd[(k, i)] = col[k]
    if backend.has_analytic_currents:
        values = backend.current_averages_analytic(beta)
        residual = (max(abs(values[p] - fd[p]) for p in values)
                    if fd is not None else None)
        return DerivedValues(values, fd, residual)
    if fd is None:
        raise NotImplementedError(f"{backend.name} can produce no currents")
    return DerivedValues(fd)


def covariance_matrix(backend: ThermoBackend, beta: PotentialVector,
                      delta: float = numdiff.DELTA_FIRST,
                      richardson: bool = True) -> np.ndarray:
    """Static covariance C_ij = -d<q_i>/d beta^j as an (n, n) array ordered
    like beta.indices."""
    backend.guard(beta)
    idx = beta.indices
    if backend.has_analytic_covariance:
        C = np.asarray(backend.covariance_analytic(beta), dtype=float)
    elif backend.has_analytic_averages:
        def q_of(b):
            return backend.charge_averages_analytic(b)

        C = np.empty((len(idx), len(idx)))
        for col, j in enumerate(idx):
            d = _dict_diff(q_of, beta, j, delta, richardson, backend.admissible)
            C[:, col] = [-d[i] for i in idx]
    else:
        C = np.empty((len(idx), len(idx)))
        for a, i in enumerate(idx):
            for b, j in enumerate(idx):
                C[a, b] = -numdiff.central_mixed_second(
                    backend.free_energy, beta, i, j,
                    richardson=richardson, admissible=backend.admissible)
    return C


def b_matrix(backend: ThermoBackend, beta: PotentialVector,
             delta: float | None = None, richardson: bool = True,
             ill_tol: float | None = None,
             prefer_analytic: bool = True) -> np.ndarray:
    """B_kij = -d<j_ki>/d beta^j as an (n, n, n) array ordered like
    beta.indices.

    Taken from the backend's closed form when it has one (differencing large
    current values cannot reach the exactness the closed-form backend is
    meant to provide; pass prefer_analytic=False to force the differenced
    route, e.g. to cross-check the closed form). Otherwise differenced from
    analytic currents, or assembled as mixed second derivatives of the flux
    potentials.
    """
    backend.guard(beta)
    idx = beta.indices
    n = len(idx)
    if (prefer_analytic and backend.has_analytic_b_tensor
            and idx == tuple(backend.charge_indices)):
        return np.asarray(backend.b_tensor_analytic(beta), dtype=float)
    B = np.empty((n, n, n))
    if backend.has_analytic_currents:
        step = numdiff.DELTA_FIRST if delta is None else delta

        def j_of(b):
            return backend.current_averages_analytic(b)

        for c, j in enumerate(idx):
            d = _dict_diff(j_of, beta, j, step, richardson, backend.admissible)
            for a, k in enumerate(idx):
                for b, i in enumerate(idx):
                    B[a, b, c] = -d[(k, i)]
        return B
    step = numdiff.DELTA_SECOND if delta is None else delta
    for a, k in enumerate(idx):
        def g_k(b, _k=k):
            return backend.flux_potentials(b)[_k]

        for b, i in enumerate(idx):
            for c, j in enumerate(idx):
                B[a, b, c] = -numdiff.central_mixed_second(
                    g_k, beta, i, j, delta=step, richardson=richardson,
                    admissible=backend.admissible, ill_tol=ill_tol)
    return B


# ---------------------------------------------------------------------------
# scalar combinations

def entropy_density(beta: PotentialVector, q_avg: dict[int, float], f: float) -> float:
    """s = sum_j beta^j <q_j> - f."""
    return float(sum(beta[j] * q_avg[j] for j in beta.indices) - f)


def entropy_currents(beta: PotentialVector, j_avg: dict[tuple[int, int], float],
                     g: dict[int, float]) -> dict[int, float]:
    """js_k = sum_j beta^j <j_kj> - g_k."""
    return {k: float(sum(beta[j] * j_avg[(k, j)] for j in beta.indices) - g[k])
            for k in beta.indices}


def ekms_constant(beta: PotentialVector, g: dict[int, float]) -> float:
    """G = sum_k beta^k g_k, the state-independent EKMS combination."""
    return float(sum(beta[k] * g[k] for k in beta.indices))


# ---------------------------------------------------------------------------
# reports

@dataclass
class ThermoReport:
    """Full thermodynamic snapshot of one state.

    Fields that require flux potentials (g, js, ekms const) are None for
    backends that lack them. Matrix-valued entries are ordered like
    `charge_indices`.
    """
    backend: str
    charge_indices: tuple[int, ...]
    beta: dict[int, float]
    f: float
    q_avg: dict[int, float]
    j_avg: dict[tuple[int, int], float]
    c_matrix: np.ndarray
    b_tensor: np.ndarray
    s: float
    g: dict[int, float] | None = None
    js: dict[int, float] | None = None
    ekms_const: float | None = None
    cross_residuals: dict[str, float | None] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        def jkey(d):
            return {",".join(map(str, k)) if isinstance(k, tuple) else str(k): v
                    for k, v in d.items()}

        return {
            "backend": self.backend,
            "charge_indices": list(self.charge_indices),
            "beta": jkey(self.beta),
            "f": self.f,
            "q_avg": jkey(self.q_avg),
            "j_avg": jkey(self.j_avg),
            "c_matrix": self.c_matrix.tolist(),
            "b_tensor": self.b_tensor.tolist(),
            "s": self.s,
            "g": jkey(self.g) if self.g is not None else None,
            "js": jkey(self.js) if self.js is not None else None,
            "ekms_const": self.ekms_const,
            "cross_residuals": self.cross_residuals,
        }

    def to_csv(self) -> str:
        """One row per (k, i) current entry, denormalized for plotting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "i", "j_ki", "g_k", "q_i", "js_k", "s", "f"])
        for k in self.charge_indices:
            for i in self.charge_indices:
                w.writerow([k, i, repr(self.j_avg[(k, i)]),
                            repr(self.g[k]) if self.g is not None else "",
                            repr(self.q_avg[i]),
                            repr(self.js[k]) if self.js is not None else "",
                            repr(self.s), repr(self.f)])
        return buf.getvalue()


def assemble_report(backend: ThermoBackend, beta: PotentialVector,
                    richardson: bool = True) -> ThermoReport:
    backend.guard(beta)
    f = backend.free_energy(beta)
    q = charge_averages(backend, beta, richardson=richardson)
    j = currents_from_flux(backend, beta, richardson=richardson)
    C = covariance_matrix(backend, beta, richardson=richardson)
    B = b_matrix(backend, beta, richardson=richardson)
    s = entropy_density(beta, q.values, f)
    g = js = const = None
    if backend.has_flux_potentials:
        g = backend.flux_potentials(beta)
        js = entropy_currents(beta, j.values, g)
        const = ekms_constant(beta, g)
    return ThermoReport(
        backend=backend.name, charge_indices=beta.indices,
        beta=beta.as_dict(), f=f, q_avg=q.values, j_avg=j.values,
        c_matrix=C, b_tensor=B, s=s, g=g, js=js, ekms_const=const,
        cross_residuals={"q_fd": q.residual, "j_fd": j.residual})


# ---------------------------------------------------------------------------
# checks

@dataclass
class CheckReport:
    name: str
    backend: str
    passed: bool
    residual: float
    tolerance: float
    details: dict = field(default_factory=dict)
    warning: str | None = None

    def to_json_dict(self) -> dict:
        return {"name": self.name, "backend": self.backend, "passed": self.passed,
                "residual": self.residual, "tolerance": self.tolerance,
                "details": self.details, "warning": self.warning}

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        out = (f"{status}  {self.name:<14s} backend={self.backend:<18s} "
               f"residual={self.residual:.3e} tol={self.tolerance:.1e}")
        if self.warning:
            out += f"  [warn: {self.warning}]"
        return out


def check_ekms(backend: ThermoBackend, samples: list[PotentialVector],
               tol: float) -> CheckReport:
    """State independence of G = sum_k beta^k g_k over the given samples,
    plus |G| <= tol itself when the backend is parity symmetric."""
    if len(samples) < 2:
        raise InsufficientSamples("check_ekms needs at least two states")
    values = []
    for beta in samples:
        g = backend.flux_potentials(beta)
        values.append(ekms_constant(beta, g))
    arr = np.array(values)
    spread = float(np.max(np.abs(arr - arr.mean())))
    residual = spread
    if backend.parity_symmetric:
        residual = max(spread, float(np.max(np.abs(arr))))
    return CheckReport(
        name="ekms", backend=backend.name, passed=residual <= tol,
        residual=residual, tolerance=tol,
        details={"n_samples": len(samples), "values": values,
                 "mean": float(arr.mean()),
                 "parity_symmetric": backend.parity_symmetric})


def check_b_symmetry(backend: ThermoBackend, beta: PotentialVector,
                     tol: float, richardson: bool = True,
                     pad: bool = True) -> CheckReport:
    """Symmetry of B_kij in its last two slots.

    With `pad` the state is extended by zeros to the backend's full charge
    set, so entries mixing uncarried charges are exercised too. Differencing
    can then leave the domain at a boundary state; pass pad=False to stay on
    the carried charges."""
    if pad:
        beta = beta.padded(backend.charge_indices)
    B = b_matrix(backend, beta, richardson=richardson)
    residual = float(np.max(np.abs(B - np.swapaxes(B, 1, 2))))
    return CheckReport("b-symmetry", backend.name, residual <= tol, residual, tol,
                       details={"beta": beta.as_dict()})


def check_c_psd(backend: ThermoBackend, beta: PotentialVector,
                tol: float, richardson: bool = True,
                pad: bool = True) -> CheckReport:
    if pad:
        beta = beta.padded(backend.charge_indices)
    C = covariance_matrix(backend, beta, richardson=richardson)
    sym = float(np.max(np.abs(C - C.T)))
    lam_min = float(np.linalg.eigvalsh(0.5 * (C + C.T)).min())
    residual = max(sym, max(0.0, -lam_min))
    return CheckReport("c-psd", backend.name, residual <= tol, residual, tol,
                       details={"beta": beta.as_dict(), "min_eigenvalue": lam_min,
                                "symmetry_residual": sym})


def check_g1_equals_f(backend: ThermoBackend, beta: PotentialVector,
                      tol: float) -> CheckReport:
    """The momentum flux potential is the free energy itself."""
    if backend.momentum_index is None:
        raise UnknownChargeIndex(f"{backend.name} carries no momentum charge")
    beta = beta.padded(backend.charge_indices)
    g = backend.flux_potentials(beta)
    residual = abs(g[backend.momentum_index] - backend.free_energy(beta))
    return CheckReport("g1-equals-f", backend.name, residual <= tol, residual, tol,
                       details={"beta": beta.as_dict()})


def check_identities(backend: ThermoBackend, beta: PotentialVector, tol: float,
                     second_beta: PotentialVector | None = None,
                     richardson: bool = True,
                     which: tuple[str, ...] | None = None,
                     pad: bool = True) -> list[CheckReport]:
    """The four current identities at one state.

    (a) is evaluated in differenced, gauge-free form across `beta` and
    `second_beta` (default: beta scaled by 1.05). Identities needing flux
    potentials are skipped automatically for backends without them unless
    explicitly requested.

    By default the state is padded with zeros to the backend's full charge
    set: the swap identity (b) has content in current pairs whose potentials
    vanish at the given state, and restricting to carried charges would miss
    them. pad=False keeps the state as handed in (needed when differencing
    along a padded direction would leave the admissible domain).
    """
    if pad:
        beta = beta.padded(backend.charge_indices)
    backend.guard(beta)
    if which is None:
        which = ("a", "b", "c", "d") if backend.has_flux_potentials else ("b",)
    reports = []
    j = currents_from_flux(backend, beta, richardson=richardson).values

    if "a" in which:
        if second_beta is None:
            second_beta = beta.scaled(1.05)
        elif pad:
            second_beta = second_beta.padded(backend.charge_indices)
        backend.guard(second_beta)
        j2 = currents_from_flux(backend, second_beta, richardson=richardson).values
        g1 = backend.flux_potentials(beta)
        g2 = backend.flux_potentials(second_beta)

        def gauge_residual(b, g, jj):
            return {i: g[i] + sum(b[k] * jj[(k, i)] for k in b.indices)
                    for i in b.indices}

        r1 = gauge_residual(beta, g1, j)
        r2 = gauge_residual(second_beta, g2, j2)
        residual = max(abs(r1[i] - r2[i]) for i in beta.indices)
        reports.append(CheckReport(
            "identity-a", backend.name, residual <= tol, residual, tol,
            details={"beta": beta.as_dict(), "second_beta": second_beta.as_dict(),
                     "gauge_offsets": {str(i): r1[i] for i in beta.indices}}))

    if "b" in which:
        B = b_matrix(backend, beta, richardson=richardson)
        idx = beta.indices
        residual = -1.0  # any first pair wins, even an exact 0.0
        worst = None
        for bpos, i in enumerate(idx):
            for cpos, jdx in enumerate(idx):
                lhs = j[(i, jdx)] + j[(jdx, i)]
                rhs = sum(beta[k] * B[apos, bpos, cpos]
                          for apos, k in enumerate(idx))
                if abs(lhs - rhs) > residual:
                    residual, worst = abs(lhs - rhs), (i, jdx)
        reports.append(CheckReport(
            "identity-b", backend.name, residual <= tol, residual, tol,
            details={"beta": beta.as_dict(), "worst_pair": list(worst)}))

    if "c" in which:
        g = backend.flux_potentials(beta)
        const = ekms_constant(beta, g)
        lhs = sum(beta[k] * beta[i] * j[(k, i)]
                  for k in beta.indices for i in beta.indices)
        residual = abs(lhs + const)
        reports.append(CheckReport(
            "identity-c", backend.name, residual <= tol, residual, tol,
            details={"beta": beta.as_dict(), "ekms_const": const}))

    if "d" in which:
        g = backend.flux_potentials(beta)
        const = ekms_constant(beta, g)
        js = entropy_currents(beta, j, g)
        lhs = sum(beta[k] * js[k] for k in beta.indices)
        residual = abs(lhs + 2.0 * const)
        reports.append(CheckReport(
            "identity-d", backend.name, residual <= tol, residual, tol,
            details={"beta": beta.as_dict(), "ekms_const": const}))

    return reports


def reports_to_json(reports: list[CheckReport]) -> str:
    payload = [r.to_json_dict() for r in reports]
    return json.dumps(payload, indent=2, sort_keys=True)
