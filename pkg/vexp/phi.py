"""
Φ-functions ``φ(x, t)``, their conjugates, and sampled certificates for the conditions
(A0), (A1), (aInc)_p and (aDec)_q.

A Φ-function is evaluated on the sites of a grid (nodes or cells). ``t`` must have the
site shape as its leading axes; any trailing axes are broadcast against the site
parameters. Φ-functions without x-dependence accept any shape.
"""

from __future__ import annotations

import abc
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import ClassVar, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vexp.errors import PhiError
from vexp.exponent import ExponentField, Sites
from vexp.grid import DEFAULT_SEED, GridDomain

logger: logging.Logger = logging.getLogger("vexp.phi")

T_MIN = 1e-6
T_MAX = 1e6
MIN_PER_DECADE = 16

# (A1) compares every pair among at most this many nodes.
MAX_A1_NODES = 128


class PhiFunction(abc.ABC):
    """
    Abstract Φ-function. Subclasses implement :meth:`evaluate`; x-dependent ones set
    :attr:`domain`.
    """

    kind: ClassVar[str]
    domain: GridDomain | None = None

    @abc.abstractmethod
    def evaluate(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        """
        Evaluate ``φ(x, t)`` in ``[0, ∞]``.

        Args:
            t: Non-negative arguments; leading axes are the site shape for
                x-dependent Φ-functions
            sites: Whether the leading axes index grid nodes or cells
        """
        ...  # pragma: no cover

    def __call__(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        return self.evaluate(t, sites)

    def derivative(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        """Right derivative in ``t`` by a relative central difference."""
        t = np.asarray(t, dtype=float)
        step = np.maximum(t, 1e-12) * 1e-6
        upper = self.evaluate(t + step, sites)
        lower = self.evaluate(np.maximum(t - step, 0.0), sites)
        return (upper - lower) / (t + step - np.maximum(t - step, 0.0))

    def conjugate(self) -> PhiFunction:
        """The conjugate ``φ*(x, s) = sup_t {st - φ(x, t)}``; numerical unless overridden."""
        return LegendreConjugate(self)

    def site_shape(self, sites: Sites) -> tuple[int, ...]:
        if self.domain is None:
            return ()
        return self.domain.node_shape if sites == "nodes" else self.domain.cell_shape

    def _broadcast(
        self, parameter: NDArray[np.float64], t: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        if t.shape[: parameter.ndim] != parameter.shape:
            raise PhiError(
                f"Argument of shape {t.shape} does not start with the site shape "
                f"{parameter.shape}"
            )
        return parameter.reshape(parameter.shape + (1,) * (t.ndim - parameter.ndim))


class VariableExponentPhi(PhiFunction):
    """``φ(x, t) = t^{p(x)}/p(x)``."""

    kind: ClassVar[str] = "variable-exponent"

    def __init__(self, exponent: ExponentField):
        self.exponent: ExponentField = exponent
        self.domain = exponent.domain

    def _p(self, t: NDArray[np.float64], sites: Sites) -> NDArray[np.float64]:
        return self._broadcast(self.exponent.at(sites), t)

    def evaluate(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        t = np.abs(np.asarray(t, dtype=float))
        p = self._p(t, sites)
        with np.errstate(over="ignore"):
            return t**p / p

    def derivative(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        t = np.abs(np.asarray(t, dtype=float))
        with np.errstate(over="ignore"):
            return t ** (self._p(t, sites) - 1.0)

    def conjugate(self) -> PhiFunction:
        return VariableExponentConjugate(self.exponent)


class VariableExponentConjugate(PhiFunction):
    """
    Closed-form conjugate of ``t^{p(x)}/p(x)``: ``s^{p'}/p'`` off Y; on Y the indicator
    of ``[0, 1]``, which is ``∞`` for ``s > 1``.
    """

    kind: ClassVar[str] = "variable-exponent-conjugate"

    def __init__(self, exponent: ExponentField):
        self.exponent: ExponentField = exponent
        self.domain = exponent.domain

    def _dual_exponent(
        self, s: NDArray[np.float64], sites: Sites
    ) -> tuple[NDArray[np.bool_], NDArray[np.float64]]:
        p = self._broadcast(self.exponent.at(sites), s)
        on_y = p == 1.0
        safe = np.where(on_y, 2.0, p)
        return on_y, safe / (safe - 1.0)

    def evaluate(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        s = np.abs(np.asarray(t, dtype=float))
        on_y, q = self._dual_exponent(s, sites)
        with np.errstate(over="ignore"):
            off = s**q / q
        return np.where(on_y, np.where(s <= 1.0, 0.0, np.inf), off)

    def derivative(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        s = np.abs(np.asarray(t, dtype=float))
        on_y, q = self._dual_exponent(s, sites)
        with np.errstate(over="ignore"):
            off = s ** (q - 1.0)
        return np.where(on_y, np.where(s < 1.0, 0.0, np.inf), off)

    def conjugate(self) -> PhiFunction:
        return VariableExponentPhi(self.exponent)


class FixedPowerPhi(PhiFunction):
    """``φ(t) = t^q/q`` without x-dependence."""

    kind: ClassVar[str] = "fixed-power"

    def __init__(self, q: float):
        if not (math.isfinite(q) and q >= 1.0):
            raise PhiError(f"Fixed power must be finite and ≥ 1, got {q}")
        self.q: float = float(q)

    def evaluate(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        t = np.abs(np.asarray(t, dtype=float))
        with np.errstate(over="ignore"):
            return t**self.q / self.q

    def derivative(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        t = np.abs(np.asarray(t, dtype=float))
        with np.errstate(over="ignore"):
            return t ** (self.q - 1.0)

    def conjugate(self) -> PhiFunction:
        if self.q == 1.0:
            return UnitIndicatorPhi()
        return FixedPowerPhi(self.q / (self.q - 1.0))


class UnitIndicatorPhi(PhiFunction):
    """Conjugate of ``φ(t) = t``: zero on ``[0, 1]``, ``∞`` beyond."""

    kind: ClassVar[str] = "indicator"

    def evaluate(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        t = np.abs(np.asarray(t, dtype=float))
        return np.where(t <= 1.0, 0.0, np.inf)

    def derivative(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        t = np.abs(np.asarray(t, dtype=float))
        return np.where(t < 1.0, 0.0, np.inf)

    def conjugate(self) -> PhiFunction:
        return FixedPowerPhi(1.0)


class TabulatedPhi(PhiFunction):
    """
    Piecewise-linear Φ-function through ``(t_k, φ_k)`` samples with ``φ(0) = 0``,
    continued past the last sample with the last slope.
    """

    kind: ClassVar[str] = "tabulated"

    def __init__(self, t_samples: ArrayLike, values: ArrayLike):
        t_samples = np.asarray(t_samples, dtype=float)
        values = np.asarray(values, dtype=float)
        if t_samples.ndim != 1 or t_samples.shape != values.shape or len(t_samples) < 2:
            raise PhiError("Tabulated Φ-functions need matching 1D sample arrays")
        if not (np.all(np.isfinite(t_samples)) and np.all(np.isfinite(values))):
            raise PhiError("Tabulated samples must be finite")
        if t_samples[0] <= 0 or np.any(np.diff(t_samples) <= 0):
            raise PhiError("Sample points must be positive and strictly increasing")
        if values[0] < 0 or np.any(np.diff(values) < 0):
            raise PhiError("Tabulated values must be non-negative and non-decreasing")
        self.t_samples: NDArray[np.float64] = np.concatenate([[0.0], t_samples])
        self.values: NDArray[np.float64] = np.concatenate([[0.0], values])

    @property
    def t_range(self) -> tuple[float, float]:
        return float(self.t_samples[1]), float(self.t_samples[-1])

    def evaluate(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        t = np.abs(np.asarray(t, dtype=float))
        inside = np.interp(t, self.t_samples, self.values)
        slope = (self.values[-1] - self.values[-2]) / (
            self.t_samples[-1] - self.t_samples[-2]
        )
        beyond = self.values[-1] + slope * (t - self.t_samples[-1])
        return np.where(t > self.t_samples[-1], beyond, inside)

    def covers(self, t_min: float, t_max: float) -> bool:
        lo, hi = self.t_range
        return lo <= t_min * (1 + 1e-12) and hi >= t_max * (1 - 1e-12)


class LegendreConjugate(PhiFunction):
    """
    Numerical conjugate ``sup_s {st - φ(x, s)}`` over a log-spaced ``s``-grid, refined
    around the best grid point. The value is ``∞`` when the supremum runs off the top of
    the grid.
    """

    kind: ClassVar[str] = "legendre"

    def __init__(
        self,
        base: PhiFunction,
        s_min: float = 1e-8,
        s_max: float = 1e8,
        per_decade: int = MIN_PER_DECADE,
        refinements: int = 6,
    ):
        self.base: PhiFunction = base
        self.domain = base.domain
        decades = math.log10(s_max) - math.log10(s_min)
        self.s_grid: NDArray[np.float64] = np.logspace(
            math.log10(s_min), math.log10(s_max), round(decades * per_decade) + 1
        )
        self.refinements: int = refinements
        self._ratio: float = 10 ** (1 / per_decade)

    def evaluate(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        t = np.abs(np.asarray(t, dtype=float))
        site_shape = self.site_shape(sites)
        if t.shape[: len(site_shape)] != site_shape:
            raise PhiError(
                f"Argument of shape {t.shape} does not start with the site shape "
                f"{site_shape}"
            )
        extra = t.shape[len(site_shape) :]
        flat = t.reshape((*site_shape, -1))
        grid = np.broadcast_to(self.s_grid, (*flat.shape, len(self.s_grid)))
        best_s, best = self._maximize(flat, grid, sites)
        with np.errstate(invalid="ignore"):
            unbounded = (best_s >= self.s_grid[-1]) & (
                flat * self.s_grid[-1] - self._phi(self.s_grid[-1], flat, sites)
                > flat * self.s_grid[-2] - self._phi(self.s_grid[-2], flat, sites)
            )
        best = np.where(unbounded, np.inf, np.maximum(best, 0.0))
        width = math.log(self._ratio)
        for _ in range(self.refinements):
            local = best_s[..., None] * np.exp(width * np.linspace(-1.0, 1.0, 33))
            local = np.concatenate([local, best_s[..., None]], axis=-1)
            best_s, refined = self._maximize(flat, local, sites)
            best = np.where(unbounded, np.inf, np.maximum(best, refined))
            width /= 16
        return best.reshape((*site_shape, *extra))

    def _phi(
        self, s: float, like: NDArray[np.float64], sites: Sites
    ) -> NDArray[np.float64]:
        return self.base.evaluate(np.full(like.shape, s), sites)

    def _maximize(
        self, flat: NDArray[np.float64], grid: NDArray[np.float64], sites: Sites
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        with np.errstate(invalid="ignore"):
            objective = flat[..., None] * grid - self.base.evaluate(grid, sites)
        objective = np.where(np.isnan(objective), -np.inf, objective)
        index = np.argmax(objective, axis=-1)[..., None]
        return (
            np.take_along_axis(grid, index, axis=-1)[..., 0],
            np.take_along_axis(objective, index, axis=-1)[..., 0],
        )


def numerical_conjugate(
    phi: PhiFunction,
    s_min: float = 1e-8,
    s_max: float = 1e8,
    per_decade: int = MIN_PER_DECADE,
) -> LegendreConjugate:
    """Numerical conjugate regardless of any closed form ``phi`` may have."""
    return LegendreConjugate(phi, s_min=s_min, s_max=s_max, per_decade=per_decade)


@dataclass(frozen=True)
class Witness:
    """A sampled point where a condition fails: site index and one or two ``t`` values."""

    site: int
    t: float
    other: float | None = None
    other_site: int | None = None


@dataclass(frozen=True)
class ConditionCertificate:
    condition: Literal["A0", "A1", "aInc", "aDec"]
    passed: bool
    constant: float
    witness: Witness | None
    search_grid: NDArray[np.float64] = field(repr=False, compare=False)


def t_grid(
    per_decade: int = MIN_PER_DECADE, t_min: float = T_MIN, t_max: float = T_MAX
) -> NDArray[np.float64]:
    if per_decade < MIN_PER_DECADE:
        raise PhiError(f"At least {MIN_PER_DECADE} points per decade are required")
    decades = math.log10(t_max) - math.log10(t_min)
    return np.logspace(math.log10(t_min), math.log10(t_max), round(decades * per_decade) + 1)


def beta_grid(per_octave: int = 16, smallest: float = 1e-6) -> NDArray[np.float64]:
    """Geometric grid ``2^{-k/per_octave}`` from 1 down to ``smallest``."""
    count = math.ceil(-math.log2(smallest) * per_octave) + 1
    return 2.0 ** (-np.arange(count) / per_octave)


def _check_range(phi: PhiFunction, t: NDArray[np.float64]) -> None:
    if isinstance(phi, TabulatedPhi) and not phi.covers(float(t[0]), float(t[-1])):
        raise PhiError(
            f"Tabulated range {phi.t_range} does not cover [{t[0]:g}, {t[-1]:g}]"
        )


def _sample(phi: PhiFunction, t: NDArray[np.float64]) -> NDArray[np.float64]:
    """Values at every node for every ``t``, shape ``(sites, len(t))``."""
    shape = phi.site_shape("nodes")
    values = phi.evaluate(np.broadcast_to(t, (*shape, len(t))), sites="nodes")
    return values.reshape(-1, len(t))


def check_A0(phi: PhiFunction, betas: ArrayLike | None = None) -> ConditionCertificate:
    """Largest sampled ``β`` with ``φ(x, β) ≤ 1 ≤ φ(x, 1/β)`` at every node."""
    grid = beta_grid() if betas is None else np.asarray(betas, dtype=float)
    low = _sample(phi, grid)
    high = _sample(phi, 1.0 / grid)
    ok = np.all((low <= 1.0) & (high >= 1.0), axis=0)
    if ok.any():
        return ConditionCertificate("A0", True, float(grid[np.argmax(ok)]), None, grid)
    last = len(grid) - 1
    bad = np.flatnonzero(low[:, last] > 1.0)
    if bad.size:
        witness = Witness(int(bad[0]), float(grid[last]))
    else:
        witness = Witness(int(np.flatnonzero(high[:, last] < 1.0)[0]), float(1 / grid[last]))
    return ConditionCertificate("A0", False, math.nan, witness, grid)


def check_A1(
    phi: PhiFunction,
    K: float = 1.0,
    per_decade: int = MIN_PER_DECADE,
    betas: ArrayLike | None = None,
    seed: int = DEFAULT_SEED,
) -> ConditionCertificate:
    """
    Largest sampled ``β`` with ``φ(x, βt) ≤ φ(y, t) + 1`` whenever
    ``φ(y, t) ≤ K/|x - y|ⁿ``, over node pairs and the sampled ``t``.
    """
    grid = beta_grid() if betas is None else np.asarray(betas, dtype=float)
    t = t_grid(per_decade)
    _check_range(phi, t)
    if phi.domain is None:
        return ConditionCertificate("A1", True, float(grid[0]), None, grid)
    domain = phi.domain
    nodes = np.arange(domain.node_count)
    if domain.node_count > MAX_A1_NODES:
        rng = np.random.default_rng(seed)
        nodes = np.sort(rng.choice(domain.node_count, MAX_A1_NODES, replace=False))
    points = domain.node_points()[nodes]
    distance = np.sqrt(np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1))
    np.fill_diagonal(distance, np.inf)
    base = _sample(phi, t)[nodes]
    with np.errstate(divide="ignore"):
        admissible = base[None, :, :] <= (K / distance**domain.dim)[:, :, None]

    def violations(beta: float) -> NDArray[np.bool_]:
        lhs = _sample(phi, beta * t)[nodes]
        return admissible & (lhs[:, None, :] > base[None, :, :] + 1.0)

    if not violations(float(grid[0])).any():
        return ConditionCertificate("A1", True, float(grid[0]), None, grid)
    last = len(grid) - 1
    final = violations(float(grid[last]))
    if final.any():
        i, j, k = (int(v) for v in np.argwhere(final)[0])
        witness = Witness(int(nodes[i]), float(t[k]), other_site=int(nodes[j]))
        return ConditionCertificate("A1", False, math.nan, witness, grid)
    lo, hi = 0, last
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if violations(float(grid[mid])).any():
            lo = mid
        else:
            hi = mid
    return ConditionCertificate("A1", True, float(grid[hi]), None, grid)


def _almost_monotone(
    phi: PhiFunction,
    exponent: float,
    condition: Literal["aInc", "aDec"],
    per_decade: int,
) -> ConditionCertificate:
    t = t_grid(per_decade)
    _check_range(phi, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = _sample(phi, t) / t**exponent
        if condition == "aInc":
            envelope = np.maximum.accumulate(ratio, axis=1)
            spread = envelope / ratio
        else:
            envelope = np.minimum.accumulate(ratio, axis=1)
            spread = ratio / envelope
    spread = np.where(np.isnan(spread), 1.0, spread)
    # The constant must not grow when the sampled range is widened.
    inner = (t >= T_MIN * 1e3) & (t <= T_MAX * 1e-3)
    inner_ratio = ratio[:, inner]
    with np.errstate(divide="ignore", invalid="ignore"):
        if condition == "aInc":
            inner_spread = np.maximum.accumulate(inner_ratio, axis=1) / inner_ratio
        else:
            inner_spread = inner_ratio / np.minimum.accumulate(inner_ratio, axis=1)
    inner_spread = np.where(np.isnan(inner_spread), 1.0, inner_spread)
    full_constant = float(np.max(spread))
    inner_constant = float(np.max(inner_spread))
    passed = math.isfinite(full_constant) and full_constant <= inner_constant * (1 + 1e-9)
    if passed:
        return ConditionCertificate(condition, True, full_constant, None, t)
    site, k = np.unravel_index(int(np.argmax(spread)), spread.shape)
    row = ratio[site, : k + 1]
    partner = int(np.argmax(row) if condition == "aInc" else np.argmin(row))
    witness = Witness(int(site), float(t[k]), other=float(t[partner]))
    logger.debug("%s(%s) fails at %s with L=%s", condition, exponent, witness, full_constant)
    return ConditionCertificate(condition, False, full_constant, witness, t)


def check_aInc(
    phi: PhiFunction, p: float, per_decade: int = MIN_PER_DECADE
) -> ConditionCertificate:
    """``t ↦ φ(x, t)/t^p`` is L-almost increasing on the sampled range."""
    return _almost_monotone(phi, p, "aInc", per_decade)


def check_aDec(
    phi: PhiFunction, q: float, per_decade: int = MIN_PER_DECADE
) -> ConditionCertificate:
    """``t ↦ φ(x, t)/t^q`` is L-almost decreasing on the sampled range."""
    return _almost_monotone(phi, q, "aDec", per_decade)


def certify(
    phi: PhiFunction,
    K: float = 1.0,
    p: float = 1.0,
    q: float | None = None,
    per_decade: int = MIN_PER_DECADE,
) -> Sequence[ConditionCertificate]:
    """
    Run all four checks. ``q`` defaults to ``p⁺`` for variable-exponent Φ-functions and
    to the power of a fixed-power one.
    """
    if q is None:
        if isinstance(phi, VariableExponentPhi):
            q = phi.exponent.p_plus
        elif isinstance(phi, FixedPowerPhi):
            q = phi.q
        else:
            raise PhiError("q must be given for this Φ-function")
    return (
        check_A0(phi),
        check_A1(phi, K, per_decade),
        check_aInc(phi, p, per_decade),
        check_aDec(phi, q, per_decade),
    )
