"""
Bulk and relaxed energies ``F(u, A)`` of grid and piecewise BV functions.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from vexp.errors import GridError, InvalidInputError
from vexp.exponent import ExponentField
from vexp.grid import (
    Box,
    GridDomain,
    GridFunction,
    gradient,
    gradient_transpose,
    integrate,
)
from vexp.integrand import Integrand, recession
from vexp.phi import VariableExponentPhi
from vexp.variation import (
    PiecewiseBVFunction,
    dual_variation,
    jump_direction,
    jump_magnitude,
    require_jumps_in_y,
)

logger: logging.Logger = logging.getLogger("vexp.energy")


@dataclass(frozen=True)
class EnergyBreakdown:
    """``F(u, A) = bulk + singular``."""

    bulk: float
    singular: float

    @property
    def total(self) -> float:
        return self.bulk + self.singular


def _check_domains(u: GridFunction, p: ExponentField) -> None:
    if u.domain != p.domain:
        raise GridError("Exponent and function live on different domains")


def energy_density(
    u: GridFunction, f: Integrand, p: ExponentField
) -> NDArray[np.float64]:
    """``f(∇u)^{p}`` per cell, with ``p`` at cell centres."""
    _check_domains(u, p)
    values = f(gradient(u).values)
    with np.errstate(over="ignore"):
        return values ** p.cell_values()


def energy_gradient(
    u: GridFunction, f: Integrand, p: ExponentField
) -> NDArray[np.float64]:
    """Nodal gradient of ``∫ f(∇u)^{p}`` with respect to the nodal values of ``u``."""
    _check_domains(u, p)
    domain = u.domain
    G = gradient(u).values
    values = f(G)
    p_cells = p.cell_values()
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        outer = np.where(p_cells == 1.0, 1.0, p_cells * values ** (p_cells - 1.0))
    flux = outer[..., None, None] * f.derivative(G) * domain.cell_volume
    return gradient_transpose(domain, flux)


def bulk_energy(
    u: GridFunction, f: Integrand, p: ExponentField, box: Box | None = None
) -> float:
    """``∫_A f(∇u)^{p(x)} dx`` over the cells whose centres lie in ``A``."""
    density = energy_density(u, f, p)
    mask = u.domain.cell_mask(box)
    return integrate(u.domain, np.where(mask, density, 0.0))


def singular_energy(
    U: PiecewiseBVFunction, f: Integrand, box: Box | None = None
) -> float:
    """``Σ f^∞(J⊗ν/|J⊗ν|)·|J|·length(S ∩ A)``."""
    total = 0.0
    for record in U.jumps:
        length = U.jump_length_in(record, box)
        if length == 0:
            continue
        total += float(recession(f, jump_direction(record))) * jump_magnitude(record) * length
    return total


def relaxed_energy(
    U: PiecewiseBVFunction,
    f: Integrand,
    p: ExponentField,
    box: Box | None = None,
) -> EnergyBreakdown:
    """
    ``F(u, A) = ∫_A f(∇u)^{p(x)} + ∫_{A∩Y} f^∞(dD^s u/d|D^s u|) d|D^s u|`` for
    ``u ∈ BV^{p(·)}``.

    Raises:
        JumpOutsideY: when a jump leaves Y, so the energy is infinite
    """
    require_jumps_in_y(U, p)
    return EnergyBreakdown(
        bulk_energy(U.smooth, f, p, box),
        singular_energy(U, f, box),
    )


def energy_growth_bound(
    U: PiecewiseBVFunction, f: Integrand, p: ExponentField, box: Box | None = None
) -> tuple[float, float]:
    """``F(u, A)`` and its bound ``∫_A f(∇u)^p + M·|D^s u|(A)``."""
    energy = relaxed_energy(U, f, p, box)
    mass = sum(
        jump_magnitude(record) * U.jump_length_in(record, box) for record in U.jumps
    )
    return energy.total, energy.bulk + f.M_up * mass


@dataclass(frozen=True)
class MeasureReport:
    """
    Energies on pairwise disjoint boxes compared with the energy on the whole domain,
    and
    the growth constant ``C`` fitted to ``F(u, A) ≤ C(|A| + V(u, A) + V(u, A)^{p⁺})``.
    """

    parts: tuple[EnergyBreakdown, ...]
    whole: EnergyBreakdown
    additivity_error: float
    growth_ratios: tuple[float, ...]

    @property
    def growth_constant(self) -> float:
        return max(self.growth_ratios, default=0.0)


def _disjoint(a: Box, b: Box) -> bool:
    return any(hi_a <= lo_b or hi_b <= lo_a for (lo_a, hi_a), (lo_b, hi_b) in zip(a, b))


def _union_cells(domain: GridDomain, boxes: Sequence[Box]) -> NDArray[np.bool_]:
    mask = np.zeros(domain.cell_shape, dtype=bool)
    for box in boxes:
        mask |= domain.cell_mask(box)
    return mask


def measure_probe(
    U: PiecewiseBVFunction,
    f: Integrand,
    p: ExponentField,
    boxes: Sequence[Box],
) -> MeasureReport:
    """
    Additivity of ``A ↦ F(u, A)`` over disjoint open boxes and the growth bound on
    each of them.

    The additivity error is measured against ``F(u, Ω)``, so the boxes should tile the
    domain up to faces that carry no jump.
    """
    if not boxes:
        raise InvalidInputError("measure_probe needs at least one box")
    for i, a in enumerate(boxes):
        for b in boxes[i + 1 :]:
            if not _disjoint(a, b):
                raise InvalidInputError(f"Boxes {a} and {b} overlap")
    parts = tuple(relaxed_energy(U, f, p, box) for box in boxes)
    if not _union_cells(U.domain, boxes).all():
        logger.debug("Boxes leave cells uncovered; additivity is checked against Ω")
    whole = relaxed_energy(U, f, p)
    error = abs(sum(part.total for part in parts) - whole.total)

    discrete = U.discretize()
    ratios = []
    for box, part in zip(boxes, parts):
        restricted = discrete.restrict(box)
        phi = VariableExponentPhi(p.restrict(box))
        variation = dual_variation(restricted, phi).value
        volume = math.prod(
            min(hi, b) - max(lo, a) for (lo, hi), (a, b) in zip(box, U.domain.extents)
        )
        denominator = volume + variation + variation**p.p_plus
        ratios.append(part.total / denominator if denominator > 0 else 0.0)
    if error > 1e-12 * max(1.0, whole.total):
        logger.warning("Energy is not additive over the boxes: error %.3g", error)
    return MeasureReport(parts, whole, error, tuple(ratios))
