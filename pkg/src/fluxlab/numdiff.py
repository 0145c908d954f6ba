"""Central finite differences in potential space.

All derivative-based quantities in the package (charge averages from the free
energy, currents from flux potentials, covariance and B tensors) go through
the two stencils here, so tolerances and steps are governed in one place.

Conventions: the step in coordinate i is delta * max(1, |beta^i|); first
derivatives default to delta = 1e-4, second derivatives to delta = 1e-3.
`richardson=True` adds one extrapolation level (halved step), which lowers the
truncation error from O(h^2) to O(h^4) at twice the evaluation cost.
"""

from __future__ import annotations

import math
from typing import Callable

from .errors import DomainExceeded, IllConditioned, NonFinite
from .potentials import PotentialVector

DELTA_FIRST = 1e-4
DELTA_SECOND = 1e-3

# Richardson levels that disagree by more than 100x the caller's tolerance
# mean the derivative cannot be trusted at that tolerance at all.
ILL_CONDITION_FACTOR = 100.0


def step_size(value: float, delta: float) -> float:
    return delta * max(1.0, abs(value))


def _eval(fn: Callable[[PotentialVector], float], beta: PotentialVector,
          admissible: Callable[[PotentialVector], bool] | None) -> float:
    if admissible is not None and not admissible(beta):
        raise DomainExceeded(f"stencil point {beta} left the admissible domain")
    out = float(fn(beta))
    if not math.isfinite(out):
        raise NonFinite(f"non-finite value {out!r} at {beta}")
    return out


def _central(fn, beta, i, h, admissible):
    plus = _eval(fn, beta.shifted(i, +h), admissible)
    minus = _eval(fn, beta.shifted(i, -h), admissible)
    return (plus - minus) / (2.0 * h)


def central_first(fn: Callable[[PotentialVector], float],
                  beta: PotentialVector, i: int,
                  delta: float = DELTA_FIRST,
                  richardson: bool = True,
                  admissible: Callable[[PotentialVector], bool] | None = None,
                  ill_tol: float | None = None) -> float:
    """d fn / d beta^i by the symmetric two-point stencil."""
    h = step_size(beta[i], delta)
    coarse = _central(fn, beta, i, h, admissible)
    if not richardson:
        return coarse
    fine = _central(fn, beta, i, h / 2.0, admissible)
    if ill_tol is not None and abs(fine - coarse) > ILL_CONDITION_FACTOR * ill_tol:
        raise IllConditioned(
            f"Richardson levels for d/d beta^{i} differ by {abs(fine - coarse):.3e} "
            f"(> {ILL_CONDITION_FACTOR:g} x tol {ill_tol:.3e})")
    return (4.0 * fine - coarse) / 3.0


def central_mixed_second(fn: Callable[[PotentialVector], float],
                         beta: PotentialVector, i: int, j: int,
                         delta: float = DELTA_SECOND,
                         richardson: bool = True,
                         admissible: Callable[[PotentialVector], bool] | None = None,
                         ill_tol: float | None = None) -> float:
    """d^2 fn / d beta^i d beta^j by nesting the first-derivative stencil.

    The outer derivative (in j) carries the requested delta; the inner one
    reuses the first-derivative default, so the diagonal i == j case reduces
    to a plain iterated central stencil.
    """

    def inner(b: PotentialVector) -> float:
        return central_first(fn, b, i, delta=DELTA_FIRST, richardson=False,
                             admissible=admissible)

    h = step_size(beta[j], delta)
    coarse = _central(inner, beta, j, h, admissible=None)
    if not richardson:
        return coarse
    fine = _central(inner, beta, j, h / 2.0, admissible=None)
    if ill_tol is not None and abs(fine - coarse) > ILL_CONDITION_FACTOR * ill_tol:
        raise IllConditioned(
            f"Richardson levels for d^2/d beta^{i} d beta^{j} differ by "
            f"{abs(fine - coarse):.3e} (> {ILL_CONDITION_FACTOR:g} x tol {ill_tol:.3e})")
    return (4.0 * fine - coarse) / 3.0


def gradient(fn: Callable[[PotentialVector], float], beta: PotentialVector,
             delta: float = DELTA_FIRST, richardson: bool = True,
             admissible: Callable[[PotentialVector], bool] | None = None) -> dict[int, float]:
    return {i: central_first(fn, beta, i, delta=delta, richardson=richardson,
                             admissible=admissible)
            for i in beta.indices}
