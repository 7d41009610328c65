"""
Numerical brackets for the relaxed functional: the closed-form energy from below, and
mollified competitors with the ``e^{2ω(δ)}`` correction on ``Y^δ`` from above.
"""

from __future__ import annotations

import logging
import math
import os
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np
from exceptiongroup import ExceptionGroup
from numpy.typing import NDArray

from vexp.energy import bulk_energy, energy_gradient, relaxed_energy
from vexp.errors import GridError, InvalidInputError, SequenceNotConvergent
from vexp.exponent import ExponentField, correction_factor_check, strong_log_holder_modulus
from vexp.grid import (
    Box,
    GridDomain,
    GridFunction,
    Mollifier,
    gradient,
    integrate,
    mollify,
)
from vexp.integrand import Integrand, g_envelope
from vexp.modular import luxemburg_norm
from vexp.phi import VariableExponentPhi
from vexp.variation import PiecewiseBVFunction, require_jumps_in_y

logger: logging.Logger = logging.getLogger("vexp.relax")

THREADS_ENV = "VEXP_THREADS"
DEFAULT_DELTA_COUNT = 7
BRACKET_RTOL = 1e-6
LSC_RTOL = 1e-6
DESCENT_ARMIJO = 1e-4

Competitor = Union[GridFunction, PiecewiseBVFunction]
Metric = Literal["p", "l1"]


def thread_limit() -> int:
    """Worker count from ``VEXP_THREADS``, else ``min(4, cpu_count)``."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return min(4, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError:
        raise InvalidInputError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise InvalidInputError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def default_deltas(domain: GridDomain) -> list[float]:
    """``δ_k = 2^{-k}·diam/8`` for ``k = 0..6``, clipped below at twice the spacing."""
    floor = 2.0 * domain.min_spacing
    out: list[float] = []
    for k in range(DEFAULT_DELTA_COUNT):
        delta = max(domain.diameter / 8 * 2.0**-k, floor)
        if not out or delta < out[-1]:
            out.append(delta)
    return out


def _check_deltas(deltas: Sequence[float]) -> list[float]:
    values = [float(d) for d in deltas]
    if not values:
        raise InvalidInputError("At least one mollifier radius is required")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise InvalidInputError(f"Mollifier radii must be strictly decreasing: {values}")
    return values


@dataclass(frozen=True)
class UpperSample:
    """
    One mollified competitor ``u_δ``.

    ``corrected`` bounds the energy on ``Y^δ`` through the linear part times
    ``e^{2ω(δ)}``; ``correction_ok`` is None when ``δ > 1/c``.
    """

    delta: float
    energy_bulkzone: float
    energy_yzone: float
    omega: float
    correction: float
    corrected: float
    gradient_constant: float
    correction_ok: bool | None
    envelope_ok: bool
    competitor: GridFunction = field(repr=False, compare=False)

    @property
    def energy(self) -> float:
        return self.energy_bulkzone + self.energy_yzone


@dataclass(frozen=True)
class RelaxationBracket:
    """
    ``lower`` is the closed-form energy. The samples run through decreasing radii and
    end with the unmollified ``u`` at ``δ = 0``; ``upper`` reads the liminf over
    competitors at that end of the sequence.
    """

    lower: float
    samples: tuple[UpperSample, ...]
    tolerance: float
    omega_diverging: bool

    @property
    def tail(self) -> tuple[UpperSample, ...]:
        return self.samples[len(self.samples) // 2 :]

    @property
    def upper(self) -> float:
        return self.samples[-1].energy

    @property
    def gap(self) -> float:
        return (self.upper - self.lower) / max(self.lower, 1e-12)

    @property
    def valid(self) -> bool:
        return self.upper >= self.lower - self.tolerance

    @property
    def best(self) -> UpperSample:
        return self.samples[-1]


def bracket_tolerance(domain: GridDomain, lower: float) -> float:
    """``10⁻⁶(1 + lower)`` plus a first-order discretization allowance ``h(1 + lower)``."""
    return BRACKET_RTOL * (1 + lower) + domain.min_spacing * (1 + lower)


def _sample(
    u: GridFunction,
    f: Integrand,
    p: ExponentField,
    delta: float,
    omega: float,
) -> UpperSample:
    """
    Energies of ``u_δ``, or of ``u`` itself when ``δ = 0``.

    The mollifier extends ``u`` past ∂Ω by quadratic extrapolation: a mirrored
    extension flattens ``u_δ`` within ``δ`` of the boundary and drops energy there.
    """
    domain = u.domain
    if delta == 0:
        smoothed = u
    else:
        smoothed = mollify(u, Mollifier(domain, delta), boundary="extrapolate")
    G = gradient(smoothed).values
    values = f(G)
    with np.errstate(over="ignore"):
        density = values ** p.cell_values()
    zone = p.cell_distance_to_y() <= delta * (1 + 1e-12)
    energy_bulkzone = integrate(domain, np.where(zone, 0.0, density))
    energy_yzone = integrate(domain, np.where(zone, density, 0.0))
    linear = integrate(domain, np.where(zone, values, 0.0))
    correction = math.exp(2 * omega)

    envelope_ok = g_envelope_check(smoothed, f, zone)
    size = np.sqrt(np.sum(G**2, axis=(-2, -1)))
    c = delta * float(size.max())
    correction_ok = None
    if p.has_linear_growth_set and c > 0 and delta <= 1 / c:
        correction_ok, _ = correction_factor_check(p, delta, c)
    return UpperSample(
        delta=delta,
        energy_bulkzone=energy_bulkzone,
        energy_yzone=energy_yzone,
        omega=omega,
        correction=correction,
        corrected=energy_bulkzone + correction * linear,
        gradient_constant=c,
        correction_ok=correction_ok,
        envelope_ok=envelope_ok,
        competitor=smoothed,
    )


def upper_sequence(
    U: PiecewiseBVFunction,
    f: Integrand,
    p: ExponentField,
    deltas: Sequence[float] | None = None,
    *,
    workers: int | None = None,
) -> RelaxationBracket:
    """
    Bracket ``F(u) ≤ 𝓕(u) ≤ liminf_{δ→0} ∫ f(∇u_δ)^{p(x)}``.

    Samples are computed in a thread pool and merged in δ order, followed by the
    ``δ = 0`` member, the unmollified discretization that the ``u_δ`` converge to on
    the grid. Failures of individual samples are raised together as an
    ``ExceptionGroup``.

    Raises:
        JumpOutsideY: before any computation when a jump leaves Y
    """
    require_jumps_in_y(U, p)
    domain = U.domain
    deltas = _check_deltas(deltas if deltas is not None else default_deltas(domain))
    lower = relaxed_energy(U, f, p).total
    u = U.discretize()
    table = strong_log_holder_modulus(p, deltas)
    omegas = [table.at(d) if len(table) else 0.0 for d in deltas]

    with ThreadPoolExecutor(max_workers=workers or thread_limit()) as pool:
        futures = [
            pool.submit(_sample, u, f, p, delta, omega)
            for delta, omega in zip(deltas, omegas)
        ]
    samples: list[UpperSample] = []
    failures: list[Exception] = []
    for delta, future in zip(deltas, futures):
        error = future.exception()
        if error is None:
            samples.append(future.result())
        elif isinstance(error, Exception):
            logger.debug("Sample δ=%g failed: %s", delta, error)
            failures.append(error)
    if failures:
        raise ExceptionGroup("Mollified competitors failed", failures)
    samples.append(_sample(u, f, p, 0.0, 0.0))

    bracket = RelaxationBracket(
        lower=lower,
        samples=tuple(samples),
        tolerance=bracket_tolerance(domain, lower),
        omega_diverging=table.diverging,
    )
    if not bracket.valid:
        logger.warning(
            "Upper bound %.12g lies below the lower bound %.12g",
            bracket.upper,
            bracket.lower,
        )
    return bracket


def _target(U: Competitor) -> GridFunction:
    return U.discretize() if isinstance(U, PiecewiseBVFunction) else U


def _energy(u: Competitor, f: Integrand, p: ExponentField) -> float:
    if isinstance(u, PiecewiseBVFunction):
        return relaxed_energy(u, f, p).total
    return bulk_energy(u, f, p)


def descent_improve(
    u0: GridFunction,
    target: Competitor,
    f: Integrand,
    p: ExponentField,
    epsilon: float,
    *,
    max_iterations: int = 500,
    tolerance: float = 1e-10,
) -> GridFunction:
    """
    Lower the bulk energy of ``u0`` by projected gradient descent while staying within
    ``ε`` of ``target`` in the ``L^{p(·)}`` Luxemburg norm.

    Steps are accepted by an Armijo test along the projected step, so the energy never
    increases. A step underflow returns the current iterate.
    """
    if epsilon < 0:
        raise InvalidInputError(f"Proximity radius must be ≥ 0, got {epsilon}")
    center = _target(target)
    if center.domain != u0.domain:
        raise GridError("Competitor and target live on different domains")
    phi = VariableExponentPhi(p)
    distance = luxemburg_norm(phi, u0 - center)
    if distance > epsilon * (1 + 1e-9) + 1e-15:
        raise InvalidInputError(
            f"Initial competitor lies at distance {distance:.6g} > ε = {epsilon:.6g}"
        )
    if epsilon == 0:
        return u0

    def project(values: NDArray[np.float64]) -> GridFunction:
        candidate = GridFunction(u0.domain, values)
        offset = candidate - center
        norm = luxemburg_norm(phi, offset)
        if norm <= epsilon:
            return candidate
        return center + offset * (epsilon / norm * (1 - 1e-9))

    u = u0
    energy = bulk_energy(u, f, p)
    step = 1.0
    small = 0
    for _ in range(max_iterations):
        direction = energy_gradient(u, f, p)
        if not np.any(direction):
            break
        trial = step
        while trial > 1e-16:
            candidate = project(u.values - trial * direction)
            value = bulk_energy(candidate, f, p)
            decrease = float(np.sum(direction * (u.values - candidate.values)))
            if value < energy and value <= energy - DESCENT_ARMIJO * decrease:
                break
            trial *= 0.5
        else:
            logger.debug("descent_improve: step underflow at energy %.12g", energy)
            break
        relative = (energy - value) / max(abs(energy), 1e-300)
        u, energy, step = candidate, value, min(1.0, 2.0 * trial)
        small = small + 1 if relative < tolerance else 0
        if small >= 10:
            break
    return u


@dataclass(frozen=True)
class LscReport:
    """``F(u)`` against the smallest energy in the tail of a converging sequence."""

    limit_energy: float
    tail_minimum: float
    distances: tuple[float, ...]
    energies: tuple[float, ...]

    @property
    def margin(self) -> float:
        return self.tail_minimum - self.limit_energy

    @property
    def passed(self) -> bool:
        return self.limit_energy <= self.tail_minimum + LSC_RTOL * (1 + abs(self.limit_energy))


def sequence_distance(
    u: GridFunction, target: GridFunction, p: ExponentField, metric: Metric = "p"
) -> float:
    """Distance in ``L^{p(·)}`` (Luxemburg) or ``L¹``."""
    difference = u - target
    if metric == "p":
        return luxemburg_norm(VariableExponentPhi(p), difference)
    if metric == "l1":
        return integrate(u.domain, np.linalg.norm(difference.cell_average(), axis=-1))
    raise InvalidInputError(f"Unknown metric {metric!r}")


def lsc_probe(
    sequence: Sequence[Competitor],
    limit: Competitor,
    f: Integrand,
    p: ExponentField,
    *,
    metric: Metric = "p",
) -> LscReport:
    """
    Check ``F(u) ≤ liminf F(u_k)`` with the liminf read as the minimum over the second
    half of the sequence.

    Raises:
        SequenceNotConvergent: unless the last distance to the limit is at most a quarter
            of the first, or below 10⁻⁸
    """
    if len(sequence) < 2:
        raise InvalidInputError("lsc_probe needs at least two sequence elements")
    target = _target(limit)
    distances = tuple(sequence_distance(_target(u), target, p, metric) for u in sequence)
    if not (distances[-1] <= 1e-8 or distances[-1] <= 0.25 * distances[0]):
        raise SequenceNotConvergent(
            f"Distances to the limit do not decay: first {distances[0]:.3g}, "
            f"last {distances[-1]:.3g}"
        )
    energies = tuple(_energy(u, f, p) for u in sequence)
    tail = energies[len(energies) // 2 :]
    return LscReport(_energy(limit, f, p), min(tail), distances, energies)


@dataclass(frozen=True)
class EquivalenceReport:
    """Upper brackets from general and from smooth-class competitors."""

    general_upper: float
    smooth_upper: float
    smooth_deltas: tuple[float, ...] = ()

    @property
    def ratio(self) -> float:
        if self.general_upper == 0:
            return 1.0 if self.smooth_upper == 0 else math.inf
        return self.smooth_upper / self.general_upper

    @property
    def matches(self) -> bool:
        return abs(self.ratio - 1.0) <= 1e-6


def smooth_competitors_equivalence(
    U: PiecewiseBVFunction,
    f: Integrand,
    p: ExponentField,
    deltas: Sequence[float] | None = None,
) -> EquivalenceReport:
    """
    Compare the ``L^{p(·)}`` bracket with the one restricted to mollified competitors
    converging in ``L¹``.

    Both brackets draw on the same tail of samples. The smooth one keeps the samples
    whose ``L¹`` distance to ``u`` does not grow as δ decreases, a discrete stand-in
    for the convergent subsequence, and reads its liminf at the end of that
    subsequence.
    """
    bracket = upper_sequence(U, f, p, deltas)
    target = U.discretize()
    kept: list[UpperSample] = []
    previous = math.inf
    for sample in bracket.tail:
        distance = sequence_distance(sample.competitor, target, p, "l1")
        if distance <= previous * (1 + 1e-12):
            kept.append(sample)
            previous = distance
    smooth_upper = kept[-1].energy if kept else math.inf
    return EquivalenceReport(
        bracket.upper, smooth_upper, tuple(s.delta for s in kept)
    )


@dataclass(frozen=True)
class CutoffProfile:
    """
    ``ζ = clip(1 - dist(x, inner)/band, 0, 1)``: one on the inner box, zero beyond the
    band, with ``|∇ζ| ≤ C/band``.
    """

    inner: Box
    band: float
    values: NDArray[np.float64] = field(repr=False, compare=False)
    gradient_bound: float


def cutoff_profile(domain: GridDomain, inner: Box, band: float) -> CutoffProfile:
    if not band >= 2 * domain.min_spacing:
        raise InvalidInputError(
            f"Cut-off band {band} must span at least two cells ({2 * domain.min_spacing})"
        )
    domain.cell_mask(inner)
    coords = domain.node_coordinates()
    gaps = [
        np.maximum(np.maximum(lo - x, x - hi), 0.0) for x, (lo, hi) in zip(coords, inner)
    ]
    distance = np.sqrt(sum(g**2 for g in gaps))
    values = np.clip(1.0 - distance / band, 0.0, 1.0)
    slope = gradient(GridFunction(domain, values)).magnitude()
    return CutoffProfile(inner, float(band), values, float(slope.max()) * band)


def splice(inner: GridFunction, outer: GridFunction, profile: CutoffProfile) -> GridFunction:
    """``ζ·inner + (1 - ζ)·outer``."""
    if inner.domain != outer.domain or profile.values.shape != inner.domain.node_shape:
        raise GridError("Spliced functions and profile live on different domains")
    zeta = profile.values[..., None]
    return inner.with_values(zeta * inner.values + (1 - zeta) * outer.values)


def g_envelope_check(u: GridFunction, f: Integrand, mask: NDArray[np.bool_]) -> bool:
    """``∫_M f(∇u) ≤ ∫_M g(∇u/|∇u|)·|∇u|`` over the cells in ``mask``."""
    G = gradient(u).values
    size = np.sqrt(np.sum(G**2, axis=(-2, -1)))
    picked = mask & (size > 0)
    if not picked.any():
        return True
    lhs = float(np.sum(f(G[picked])))
    directions = G[picked] / size[picked][:, None, None]
    rhs = float(np.sum(np.asarray(g_envelope(f, directions)) * size[picked]))
    return lhs <= rhs + BRACKET_RTOL * (1 + rhs)

