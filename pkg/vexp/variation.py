"""
Piecewise BV functions with explicit jump sets, and the dual variation ``V_φ`` and dual
modular ``ρ_V`` computed by maximizing over discrete test fields.

Test fields live on cells, the dual of the forward-difference gradient, and vanish on
the layer of cells touching the boundary.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.typing import NDArray
from scipy import optimize
from typing_extensions import Self

from vexp.errors import GridError, JumpOutsideY, JumpSetError
from vexp.exponent import ExponentField
from vexp.grid import (
    Box,
    GridDomain,
    GridFunction,
    Mollifier,
    gradient,
    integrate,
    mollify,
)
from vexp.modular import luxemburg_norm
from vexp.phi import PhiFunction, VariableExponentPhi

logger: logging.Logger = logging.getLogger("vexp.variation")

ASCENT_ARMIJO = 1e-4
ASCENT_MAX_ITERATIONS = 5000
ASCENT_TOLERANCE = 1e-8
ASCENT_WINDOW = 10
_MIN_STEP = 1e-14
# relative slack so that rescaled fields stay inside the closed unit ball
_FEASIBILITY_SLACK = 1e-9
_SNAP = 1e-9
# test fields on Y stay just inside the closed unit ball
_CAP = 1.0 - 1e-12


@dataclass(frozen=True)
class Jump1D:
    """A jump ``u(x⁺) - u(x⁻)`` at an interior point of an interval."""

    location: float
    jump: tuple[float, ...]

    @property
    def length(self) -> float:
        return 1.0

    @property
    def normal(self) -> tuple[float, ...]:
        return (1.0,)


@dataclass(frozen=True)
class JumpSegment:
    """
    An axis-aligned segment of the jump set in 2D.

    ``normal`` is a signed unit coordinate vector and ``jump`` is the value on the side
    it points to minus the value on the other side.
    """

    start: tuple[float, float]
    end: tuple[float, float]
    normal: tuple[float, float]
    jump: tuple[float, ...]

    @property
    def normal_axis(self) -> int:
        return 0 if self.normal[0] != 0 else 1

    @property
    def tangent_axis(self) -> int:
        return 1 - self.normal_axis

    @property
    def line(self) -> float:
        """Coordinate of the segment along its normal axis."""
        return self.start[self.normal_axis]

    @property
    def tangent_range(self) -> tuple[float, float]:
        axis = self.tangent_axis
        a, b = self.start[axis], self.end[axis]
        return (min(a, b), max(a, b))

    @property
    def length(self) -> float:
        lo, hi = self.tangent_range
        return hi - lo


JumpRecord = Union[Jump1D, JumpSegment]


def jump_magnitude(record: JumpRecord) -> float:
    return float(np.linalg.norm(record.jump))


def jump_matrix(record: JumpRecord) -> NDArray[np.float64]:
    """``J ⊗ ν`` as an ``(m, n)`` matrix."""
    return np.outer(np.asarray(record.jump), np.asarray(record.normal))


def jump_direction(record: JumpRecord) -> NDArray[np.float64]:
    """``J ⊗ ν / |J ⊗ ν|``, the unit matrix at which the recession function is taken."""
    matrix = jump_matrix(record)
    return matrix / np.linalg.norm(matrix)


class PiecewiseBVFunction:
    """
    ``u = smooth + Σ J_i·H_i``: a nodal smooth part plus jumps across points (1D) or
    axis-aligned segments (2D).
    """

    def __init__(self, smooth: GridFunction, jumps: Iterable[JumpRecord] = ()):
        self.smooth: GridFunction = smooth
        self.jumps: tuple[JumpRecord, ...] = tuple(
            _normalize_record(smooth.domain, smooth.codim, record) for record in jumps
        )

    @property
    def domain(self) -> GridDomain:
        return self.smooth.domain

    @property
    def codim(self) -> int:
        return self.smooth.codim

    @property
    def singular_mass(self) -> float:
        """``|D^s u|(Ω) = Σ |J|·length``."""
        return sum(jump_magnitude(j) * j.length for j in self.jumps)

    def jump_length_in(self, record: JumpRecord, box: Box | None) -> float:
        """Length of the part of ``record`` inside the open ``box``."""
        if box is None:
            return record.length
        if isinstance(record, Jump1D):
            lo, hi = box[0]
            return 1.0 if lo < record.location < hi else 0.0
        lo, hi = box[record.normal_axis]
        if not lo < record.line < hi:
            return 0.0
        t_lo, t_hi = box[record.tangent_axis]
        a, b = record.tangent_range
        return max(0.0, min(b, t_hi) - max(a, t_lo))

    def discretize(self) -> GridFunction:
        """
        Nodal values of ``u`` with the Heaviside factor ``1`` strictly on the positive
        side, ``0.5`` on the jump itself and ``0`` behind it.
        """
        domain = self.domain
        coords = domain.node_coordinates()
        values = np.array(self.smooth.values)
        if domain.dim == 2:
            _check_segment_ends(domain, self.jumps)
        for record in self.jumps:
            weight = _heaviside_weight(domain, coords, record)
            values += weight[..., None] * np.asarray(record.jump)
        return GridFunction(domain, values)

    def scaled(self, factor: float) -> Self:
        records = [_scale_record(r, factor) for r in self.jumps if factor != 0]
        return type(self)(self.smooth * factor, records)

    def __repr__(self) -> str:
        return (
            f"PiecewiseBVFunction(cells={self.domain.cells}, codim={self.codim}, "
            f"jumps={len(self.jumps)})"
        )


def _scale_record(record: JumpRecord, factor: float) -> JumpRecord:
    jump = tuple(factor * j for j in record.jump)
    if isinstance(record, Jump1D):
        return Jump1D(record.location, jump)
    return JumpSegment(record.start, record.end, record.normal, jump)


def _normalize_record(domain: GridDomain, codim: int, record: JumpRecord) -> JumpRecord:
    jump = tuple(float(j) for j in record.jump)
    if len(jump) != codim:
        raise JumpSetError(f"Jump {jump} has {len(jump)} components, expected {codim}")
    if not all(math.isfinite(j) for j in jump) or not any(jump):
        raise JumpSetError(f"Jump vector {jump} must be finite and non-zero")
    if domain.dim == 1:
        if not isinstance(record, Jump1D):
            raise JumpSetError("1D domains take point jumps")
        (a, b) = domain.extents[0]
        location = float(record.location)
        if not a < location < b:
            raise JumpSetError(f"Jump location {location} is not inside ({a}, {b})")
        return Jump1D(location, jump)
    if not isinstance(record, JumpSegment):
        raise JumpSetError("2D domains take segment jumps")
    start = (float(record.start[0]), float(record.start[1]))
    end = (float(record.end[0]), float(record.end[1]))
    normal = (float(record.normal[0]), float(record.normal[1]))
    if sorted(abs(n) for n in normal) != [0.0, 1.0]:
        raise JumpSetError(f"Normal {normal} must be a signed coordinate unit vector")
    segment = JumpSegment(start, end, normal, jump)
    axis = segment.normal_axis
    if start[axis] != end[axis]:
        raise JumpSetError(f"Segment {start}-{end} is not perpendicular to {normal}")
    if segment.length <= 0:
        raise JumpSetError(f"Segment {start}-{end} has zero length")
    lo, hi = domain.extents[axis]
    if not lo < segment.line < hi:
        raise JumpSetError(f"Segment {start}-{end} does not cross the interior")
    t_lo, t_hi = domain.extents[segment.tangent_axis]
    a, b = segment.tangent_range
    if a < t_lo or b > t_hi:
        raise JumpSetError(f"Segment {start}-{end} leaves the domain")
    offset = (segment.line - lo) / domain.spacing[axis]
    if abs(offset - round(offset)) > _SNAP:
        raise JumpSetError(f"Segment {start}-{end} does not lie on a grid line")
    return segment


def _on_boundary(domain: GridDomain, point: tuple[float, float], axis: int) -> bool:
    lo, hi = domain.extents[axis]
    tol = _SNAP * domain.spacing[axis]
    return abs(point[axis] - lo) <= tol or abs(point[axis] - hi) <= tol


def _check_segment_ends(domain: GridDomain, jumps: Sequence[JumpRecord]) -> None:
    segments = [j for j in jumps if isinstance(j, JumpSegment)]
    for segment in segments:
        for point in (segment.start, segment.end):
            if _on_boundary(domain, point, segment.tangent_axis):
                continue
            joined = any(
                other is not segment
                and other.normal == segment.normal
                and other.line == segment.line
                and other.jump == segment.jump
                and point in (other.start, other.end)
                for other in segments
            )
            if not joined:
                raise JumpSetError(
                    f"Segment end {point} neither reaches the boundary nor continues "
                    "into another segment with the same jump"
                )


def _heaviside_weight(
    domain: GridDomain, coords: Sequence[NDArray[np.float64]], record: JumpRecord
) -> NDArray[np.float64]:
    if isinstance(record, Jump1D):
        return _step(coords[0] - record.location, domain.spacing[0])
    axis = record.normal_axis
    sign = record.normal[axis]
    across = _step(sign * (coords[axis] - record.line), domain.spacing[axis])
    tangent = record.tangent_axis
    t = coords[tangent]
    h = domain.spacing[tangent]
    lo, hi = record.tangent_range
    along = np.where((t > lo + _SNAP * h) & (t < hi - _SNAP * h), 1.0, 0.0)
    for end in (lo, hi):
        end_point = record.start if record.start[tangent] == end else record.end
        at_end = np.abs(t - end) <= _SNAP * h
        along = np.where(
            at_end, 1.0 if _on_boundary(domain, end_point, tangent) else 0.5, along
        )
    return across * along


def _step(signed: NDArray[np.float64], h: float) -> NDArray[np.float64]:
    on_jump = np.abs(signed) <= _SNAP * h
    return np.where(on_jump, 0.5, np.where(signed > 0, 1.0, 0.0))


def exponent_on_jump(p: ExponentField, record: JumpRecord) -> float:
    """
    Largest nodal exponent among the nodes carrying the jump.

    A jump lies in Y exactly when this is one; points between nodes are charged with
    both bracketing nodes.
    """
    domain = p.domain
    if isinstance(record, Jump1D):
        indices = _bracketing(domain, 0, record.location)
        return float(np.max(p.values[indices]))
    normal = _bracketing(domain, record.normal_axis, record.line)
    lo, hi = record.tangent_range
    tangent = record.tangent_axis
    a, _ = domain.extents[tangent]
    h = domain.spacing[tangent]
    first = max(0, math.floor((lo - a) / h + _SNAP))
    last = min(domain.cells[tangent], math.ceil((hi - a) / h - _SNAP))
    along = list(range(first, last + 1))
    if record.normal_axis == 0:
        block = p.values[np.ix_(normal, along)]
    else:
        block = p.values[np.ix_(along, normal)]
    return float(np.max(block))


def _bracketing(domain: GridDomain, axis: int, x: float) -> list[int]:
    a, _ = domain.extents[axis]
    s = (x - a) / domain.spacing[axis]
    nearest = round(s)
    if abs(s - nearest) <= _SNAP:
        return [int(nearest)]
    below = math.floor(s)
    return [below, below + 1]


def jumps_outside_y(U: PiecewiseBVFunction, p: ExponentField) -> tuple[JumpRecord, ...]:
    if p.domain != U.domain:
        raise GridError("Exponent and function live on different domains")
    return tuple(j for j in U.jumps if exponent_on_jump(p, j) != 1.0)


def _location(record: JumpRecord) -> tuple[float, ...] | float:
    if isinstance(record, Jump1D):
        return record.location
    return tuple(0.5 * (a + b) for a, b in zip(record.start, record.end))


def require_jumps_in_y(U: PiecewiseBVFunction, p: ExponentField) -> None:
    """Raise :class:`JumpOutsideY` at the first jump where ``p > 1``."""
    offending = jumps_outside_y(U, p)
    if offending:
        raise JumpOutsideY(_location(offending[0]))


@dataclass(frozen=True)
class MembershipReport:
    """Outcome of :func:`bv_membership`; truthy when ``u ∈ BV^{p(·)}``."""

    member: bool
    offending: tuple[JumpRecord, ...]
    smooth_modular: float

    def __bool__(self) -> bool:
        return self.member


def bv_membership(U: PiecewiseBVFunction, p: ExponentField) -> MembershipReport:
    """Every jump must sit in Y and the modular of the smooth gradient must be finite."""
    offending = jumps_outside_y(U, p)
    phi = VariableExponentPhi(p)
    smooth = _smooth_modular(U.smooth, phi)
    member = not offending and math.isfinite(smooth)
    return MembershipReport(member, offending, smooth)


def _smooth_modular(smooth: GridFunction, phi: PhiFunction) -> float:
    magnitudes = gradient(smooth).magnitude()
    with np.errstate(over="ignore"):
        density = phi.evaluate(magnitudes, "cells")
    return integrate(smooth.domain, density)


def rho_old(U: PiecewiseBVFunction, p: ExponentField) -> float:
    """
    ``Σ |J|·length + ∫ φ(x, |∇ smooth|)``: the jump part is charged linearly since all
    jumps lie in Y.

    Raises:
        JumpOutsideY: for the first jump that leaves Y
    """
    require_jumps_in_y(U, p)
    return U.singular_mass + _smooth_modular(U.smooth, VariableExponentPhi(p))


@dataclass(frozen=True)
class VariationResult:
    """
    A dual-variation value together with the test field attaining it.

    ``certified`` is set when the field lies in the dual unit ball, which makes
    ``value`` a lower bound for the discrete supremum.
    """

    value: float
    certified: bool
    converged: bool
    iterations: int
    field: NDArray[np.float64] = field(repr=False, compare=False)

    def __float__(self) -> float:
        return self.value


def interior_gradient(u: GridFunction) -> NDArray[np.float64]:
    """``∇u`` with the boundary-layer cells zeroed, shape ``cell_shape + (m, n)``."""
    G = np.array(gradient(u).values)
    G[~u.domain.interior_cell_mask()] = 0.0
    return G


def _magnitude(w: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.sqrt(np.sum(w**2, axis=(-2, -1)))


def _directions(G: NDArray[np.float64]) -> tuple[NDArray, NDArray]:
    mag = _magnitude(G)
    safe = np.where(mag > 0, mag, 1.0)
    return mag, G / safe[..., None, None]


def dual_variation(
    u: GridFunction,
    phi: PhiFunction,
    *,
    max_iterations: int = ASCENT_MAX_ITERATIONS,
    tolerance: float = ASCENT_TOLERANCE,
) -> VariationResult:
    """
    ``V_φ(u) = sup{∫ u div w : ‖w‖_{φ*} ≤ 1}`` over interior test fields.

    By summation by parts the objective is ``∫ ∇u : w``. The search starts from the
    best member of the family ``φ'(|∇u|/μ)·∇u/|∇u|``, rescaled to the dual unit sphere,
    and is polished by projected ascent with backtracking.
    """
    domain = u.domain
    G = interior_gradient(u)
    mag, direction = _directions(G)
    if not np.any(mag > 0):
        return VariationResult(0.0, True, True, 0, np.zeros_like(G))
    conjugate = phi.conjugate()
    interior = domain.interior_cell_mask()

    def objective(w: NDArray[np.float64]) -> float:
        return integrate(domain, np.sum(G * w, axis=(-2, -1)))

    def dual_norm(w: NDArray[np.float64]) -> float:
        return luxemburg_norm(conjugate, _magnitude(w), domain)

    def family(log_mu: float) -> NDArray[np.float64]:
        with np.errstate(over="ignore", invalid="ignore"):
            theta = phi.derivative(mag / math.exp(log_mu), "cells")
        theta = np.where((mag > 0) & np.isfinite(theta), theta, 0.0)
        w = theta[..., None, None] * direction
        norm = dual_norm(w)
        return w / (norm * (1 + _FEASIBILITY_SLACK)) if norm > 0 else w

    def negative(log_mu: float) -> float:
        return -objective(family(log_mu))

    scale = math.log(float(mag.max()))
    log_mus = scale + np.linspace(-14.0, 14.0, 57)
    values = np.array([negative(x) for x in log_mus])
    best = int(np.argmin(values))
    log_mu = float(log_mus[best])
    if 0 < best < len(log_mus) - 1:
        try:
            result = optimize.minimize_scalar(
                negative,
                bracket=(log_mus[best - 1], log_mus[best], log_mus[best + 1]),
                method="golden",
                options={"xtol": 1e-10},
            )
            if result.fun < values[best]:
                log_mu = float(result.x)
        except ValueError:
            pass
    w = family(log_mu)
    value = objective(w)

    def project(candidate: NDArray[np.float64]) -> NDArray[np.float64]:
        candidate = np.where(interior[..., None, None], candidate, 0.0)
        norm = dual_norm(candidate)
        return candidate / max(1.0, norm * (1 + _FEASIBILITY_SLACK))

    w, value, iterations, converged = _ascend(
        w, value, lambda _: G, project, objective, domain.cell_volume,
        max_iterations, tolerance,
    )
    logger.debug("dual variation %.12g after %d ascent steps", value, iterations)
    return VariationResult(value, True, converged, iterations, w)


def _ascend(
    w: NDArray[np.float64],
    value: float,
    ascent_direction: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    project: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    objective: Callable[[NDArray[np.float64]], float],
    cell_volume: float,
    max_iterations: int,
    tolerance: float,
) -> tuple[NDArray[np.float64], float, int, bool]:
    """Projected ascent with halving backtracking and an Armijo test along the step."""
    history = [value]
    step = 1.0
    for iteration in range(1, max_iterations + 1):
        direction = ascent_direction(w)
        trial = step
        while trial >= _MIN_STEP:
            candidate = project(w + trial * direction)
            candidate_value = objective(candidate)
            gain = float(np.sum(direction * (candidate - w))) * cell_volume
            if candidate_value > value and candidate_value >= value + (
                ASCENT_ARMIJO * gain
            ):
                break
            trial *= 0.5
        else:
            return w, value, iteration, True
        w, value = candidate, candidate_value
        step = min(1.0, 2.0 * trial)
        history.append(value)
        if len(history) > ASCENT_WINDOW:
            past = history[-ASCENT_WINDOW - 1]
            if abs(value - past) <= tolerance * max(abs(value), 1e-300):
                return w, value, iteration, True
    logger.warning(
        "Projected ascent stopped at the iteration cap %d with value %.12g",
        max_iterations,
        value,
    )
    return w, value, max_iterations, False


def dual_modular(
    u: GridFunction,
    phi: PhiFunction,
    *,
    warm_start: bool = True,
    max_iterations: int = ASCENT_MAX_ITERATIONS,
    tolerance: float = ASCENT_TOLERANCE,
) -> VariationResult:
    """
    ``ρ_V(u) = sup{∫ ∇u : w - ρ_{φ*}(w)}`` over interior test fields.

    The warm start is the pointwise Fenchel maximizer ``φ'(|∇u|)·∇u/|∇u|``; ascent then
    follows ``∇u - (φ*)'(|w|)·w/|w|`` with ``|w| ≤ 1`` enforced on Y.
    """
    domain = u.domain
    G = interior_gradient(u)
    mag, direction = _directions(G)
    conjugate = phi.conjugate()
    interior = domain.interior_cell_mask()
    cap = _unit_cap(phi)

    def objective(w: NDArray[np.float64]) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            penalty = conjugate.evaluate(_magnitude(w), "cells")
        if np.any(np.isinf(penalty[interior])):
            return -math.inf
        density = np.sum(G * w, axis=(-2, -1)) - np.where(interior, penalty, 0.0)
        return integrate(domain, density)

    def ascent_direction(w: NDArray[np.float64]) -> NDArray[np.float64]:
        wmag, wdir = _directions(w)
        with np.errstate(over="ignore", invalid="ignore"):
            slope = conjugate.derivative(wmag, "cells")
        slope = np.where(np.isfinite(slope), slope, 0.0)
        return np.where(interior[..., None, None], G - slope[..., None, None] * wdir, 0.0)

    def project(candidate: NDArray[np.float64]) -> NDArray[np.float64]:
        candidate = np.where(interior[..., None, None], candidate, 0.0)
        if cap is None:
            return candidate
        wmag = _magnitude(candidate)
        over = cap & (wmag > _CAP)
        shrink = np.where(over, _CAP / np.where(over, wmag, 1.0), 1.0)
        return candidate * shrink[..., None, None]

    if warm_start:
        with np.errstate(over="ignore", invalid="ignore"):
            theta = phi.derivative(mag, "cells")
        theta = np.where((mag > 0) & np.isfinite(theta), theta, 0.0)
        w = project(theta[..., None, None] * direction)
    else:
        w = np.zeros_like(G)
    value = objective(w)
    if not np.any(mag > 0) and warm_start:
        return VariationResult(0.0, True, True, 0, w)
    w, value, iterations, converged = _ascend(
        w, value, ascent_direction, project, objective, domain.cell_volume,
        max_iterations, tolerance,
    )
    return VariationResult(value, math.isfinite(value), converged, iterations, w)


def _unit_cap(phi: PhiFunction) -> NDArray[np.bool_] | None:
    """Cells where ``φ*`` is the indicator of ``[0, 1]``."""
    exponent = getattr(phi, "exponent", None)
    if isinstance(exponent, ExponentField):
        return exponent.cell_values() == 1.0
    return None


@dataclass(frozen=True)
class ComponentBounds:
    """``max_i V(u_i) ≤ V(u) ≤ Σ_i V(u_i)``, evaluated."""

    largest_component: float
    whole: float
    component_sum: float

    @property
    def holds(self) -> bool:
        slack = 1e-6 * max(1.0, self.component_sum)
        return (
            self.largest_component <= self.whole + slack
            and self.whole <= self.component_sum + slack
        )


def componentwise_bounds(u: GridFunction, phi: PhiFunction) -> ComponentBounds:
    parts = [dual_variation(u.component(i), phi).value for i in range(u.codim)]
    return ComponentBounds(max(parts), dual_variation(u, phi).value, sum(parts))


def gradient_norm_ratio(u: GridFunction, phi: PhiFunction) -> float:
    """
    ``V_φ(u) / ‖∇u‖_φ`` on interior cells.

    For ``φ = t^p/p`` with constant ``p`` this settles at ``p^{1/p}·p'^{1/p'}`` under
    refinement, the ratio of the Orlicz and Luxemburg norms.
    """
    G = interior_gradient(u)
    denominator = luxemburg_norm(phi, _magnitude(G), u.domain)
    if denominator == 0:
        return 1.0
    return dual_variation(u, phi).value / denominator


def mollified_variation_sweep(
    u: GridFunction, phi: PhiFunction, radii: Sequence[float]
) -> list[tuple[float, float]]:
    """``(δ, V_φ(u * η_δ))`` for every radius."""
    out = []
    for radius in radii:
        smoothed = mollify(u, Mollifier(u.domain, radius))
        out.append((float(radius), dual_variation(smoothed, phi).value))
    return out

