"""
Modulars, Luxemburg norms and associate norms of grid fields.

Every field is reduced to one non-negative magnitude per cell before ``φ`` is applied:
nodal functions are averaged to cells, gradient fields use the Frobenius norm.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from numpy.typing import NDArray
from scipy import optimize

from vexp.errors import GridError, InvalidInputError, LuxemburgError, PhiError
from vexp.grid import GradientField, GridDomain, GridFunction, integrate
from vexp.phi import PhiFunction

logger: logging.Logger = logging.getLogger("vexp.modular")

Field = Union[GridFunction, GradientField, NDArray[np.float64]]
AssociateMode = Literal["conjugate", "exact"]

LUXEMBURG_RTOL = 1e-10
_LOWER_FACTOR = 1e-12
_MAX_DOUBLINGS = 200


@dataclass(frozen=True)
class ModularValue:
    """``ρ_φ(u)`` in ``[0, ∞]``."""

    value: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def __float__(self) -> float:
        return self.value


def cell_magnitudes(
    field: Field, domain: GridDomain | None = None
) -> tuple[GridDomain, NDArray[np.float64]]:
    """
    Resolve ``field`` to its domain and a per-cell magnitude array.

    Raw arrays must be given with a domain and have ``cell_shape`` as leading axes;
    trailing axes are combined with the Euclidean norm.
    """
    if isinstance(field, GridFunction):
        return field.domain, np.linalg.norm(field.cell_average(), axis=-1)
    if isinstance(field, GradientField):
        return field.domain, field.magnitude()
    if domain is None:
        raise InvalidInputError("A domain is required for raw per-cell arrays")
    array = np.asarray(field, dtype=float)
    shape = domain.cell_shape
    if array.shape[: len(shape)] != shape:
        raise GridError(
            f"Array of shape {array.shape} does not start with cells {shape}"
        )
    if array.ndim == len(shape):
        return domain, np.abs(array)
    flat = array.reshape((*shape, -1))
    return domain, np.sqrt(np.sum(flat**2, axis=-1))


def _check_phi(phi: PhiFunction, domain: GridDomain) -> None:
    if phi.domain is not None and phi.domain != domain:
        raise PhiError("Φ-function and field live on different domains")


def _rho(phi: PhiFunction, domain: GridDomain, magnitudes: NDArray[np.float64]) -> float:
    with np.errstate(invalid="ignore"):
        density = phi.evaluate(magnitudes, "cells")
    if np.any(np.isinf(density)):
        return math.inf
    return integrate(domain, density)


def modular(
    phi: PhiFunction, field: Field, domain: GridDomain | None = None
) -> ModularValue:
    """``ρ_φ(u) = ∫ φ(x, |u(x)|) dx`` by midpoint quadrature."""
    domain, magnitudes = cell_magnitudes(field, domain)
    _check_phi(phi, domain)
    return ModularValue(_rho(phi, domain, magnitudes))


def luxemburg_norm(
    phi: PhiFunction,
    field: Field,
    domain: GridDomain | None = None,
    rtol: float = LUXEMBURG_RTOL,
) -> float:
    """
    ``‖u‖_φ = inf{λ > 0 : ρ_φ(u/λ) ≤ 1}`` by bisection on λ.

    The bracket starts at ``λ_hi = max(1, sup|u|)·|Ω|`` and ``λ_lo = 10⁻¹²·λ_hi`` and is
    widened until it straddles the unit level. The midpoint of the final bracket is
    returned once its width is below ``rtol·λ_hi``.

    Raises:
        LuxemburgError: if the modular is infinite for every λ
    """
    domain, magnitudes = cell_magnitudes(field, domain)
    _check_phi(phi, domain)
    if not np.any(magnitudes > 0):
        return 0.0

    def rho(lam: float) -> float:
        return _rho(phi, domain, magnitudes / lam)

    hi = max(1.0, float(magnitudes.max())) * domain.volume
    for _ in range(_MAX_DOUBLINGS):
        if rho(hi) <= 1.0:
            break
        hi *= 2.0
    else:
        raise LuxemburgError(
            f"Modular stays above one up to λ={hi:.3g}; the field is not in L^φ"
        )

    lo = hi * _LOWER_FACTOR
    for _ in range(_MAX_DOUBLINGS):
        if rho(lo) > 1.0:
            break
        lo *= _LOWER_FACTOR
    else:
        return 0.0

    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if rho(mid) <= 1.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def associate_norm(
    phi: PhiFunction,
    v: Field,
    domain: GridDomain | None = None,
    mode: AssociateMode = "conjugate",
) -> float:
    """
    Norm of the associate space ``(L^φ)'``.

    ``"conjugate"`` returns the Luxemburg norm for ``φ*``, equivalent to the associate
    norm within a factor of two. ``"exact"`` returns
    ``sup{∫ v·g : ρ_φ(g) ≤ 1} = inf_{μ>0} μ(1 + ρ_{φ*}(v/μ))``.
    """
    domain, magnitudes = cell_magnitudes(v, domain)
    _check_phi(phi, domain)
    conjugate = phi.conjugate()
    if mode == "conjugate":
        return luxemburg_norm(conjugate, magnitudes, domain)
    if mode != "exact":
        raise InvalidInputError(f"Unknown associate norm mode {mode!r}")
    if not np.any(magnitudes > 0):
        return 0.0
    return _amemiya(conjugate, domain, magnitudes)


def _amemiya(
    conjugate: PhiFunction, domain: GridDomain, magnitudes: NDArray[np.float64]
) -> float:
    scale = max(float(magnitudes.max()), 1e-300) * domain.volume

    def objective(log_mu: float) -> float:
        mu = math.exp(log_mu)
        return mu * (1.0 + _rho(conjugate, domain, magnitudes / mu))

    log_mus = math.log(scale) + np.linspace(-30.0, 30.0, 241)
    values = np.array([objective(x) for x in log_mus])
    best = int(np.argmin(values))
    if not math.isfinite(values[best]):
        raise LuxemburgError("Associate norm is infinite for every scaling")
    if best == 0 or best == len(log_mus) - 1:
        logger.debug("Associate norm minimum at the edge of the μ search range")
        return float(values[best])
    try:
        result = optimize.minimize_scalar(
            objective,
            bracket=(log_mus[best - 1], log_mus[best], log_mus[best + 1]),
            method="golden",
            options={"xtol": 1e-12},
        )
    except ValueError:
        # flat neighbourhood: the grid point is as good as the bracket allows
        return float(values[best])
    return float(min(result.fun, values[best]))
