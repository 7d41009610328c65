"""
Integrands ``f: ℝ^{m×n} → [0, ∞)`` with linear growth, their recession functions and
the ``p(x)``-truncations used to build the relaxed energy.

Matrix arguments carry two trailing axes ``(m, n)``; any leading axes are batch axes.
"""

from __future__ import annotations

import abc
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vexp.errors import IntegrandError, UnsupportedOperation
from vexp.exponent import ExponentField
from vexp.grid import DEFAULT_SEED, GridDomain, GridFunction, gradient, gradient_transpose

logger: logging.Logger = logging.getLogger("vexp.integrand")

VERIFY_SAMPLES = 256
_VERIFY_RTOL = 1e-12
_VERIFY_ATOL = 1e-14

RECESSION_EXPONENTS = np.arange(61)
RECESSION_WINDOW = 10
RECESSION_RTOL = 1e-6


def _frobenius(xi: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.sqrt(np.sum(xi**2, axis=(-2, -1)))


def _as_matrices(xi: ArrayLike) -> NDArray[np.float64]:
    array = np.asarray(xi, dtype=float)
    if array.ndim < 2:
        raise IntegrandError(f"Integrand arguments need (m, n) trailing axes, got {array.shape}")
    return array


class Integrand(abc.ABC):
    """
    Abstract integrand with growth constants ``m_low`` and ``M_up``:
    ``m_low·|ξ| ≤ f(ξ) ≤ M_up·(1 + |ξ|)`` and ``f(0) = 0``.

    The lower bound is only claimed for ``|ξ| ≥ growth_floor``.
    """

    kind: ClassVar[str]

    def __init__(
        self,
        m_low: float,
        M_up: float,
        *,
        growth_floor: float = 0.0,
        shape: tuple[int, int] | None = None,
        verify: bool = True,
    ):
        if not (m_low > 0 and math.isfinite(M_up) and M_up >= 1.0):
            raise IntegrandError(
                f"Growth constants need m_low > 0 and M_up ≥ 1, got {m_low}, {M_up}"
            )
        self.m_low: float = float(m_low)
        self.M_up: float = float(M_up)
        self.growth_floor: float = float(growth_floor)
        self.shape: tuple[int, int] | None = shape
        if verify:
            self.verify()

    @abc.abstractmethod
    def evaluate(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        """Evaluate on arrays of shape ``(..., m, n)``."""
        ...  # pragma: no cover

    def __call__(self, xi: ArrayLike) -> NDArray[np.float64]:
        return self.evaluate(_as_matrices(xi))

    def derivative(self, xi: ArrayLike) -> NDArray[np.float64]:
        """``∂f/∂ξ`` by central differences, same shape as ``xi``."""
        xi = _as_matrices(xi)
        out = np.zeros_like(xi)
        step = 1e-7 * np.maximum(_frobenius(xi), 1.0)[..., None, None]
        for i, j in np.ndindex(*xi.shape[-2:]):
            bump = np.zeros(xi.shape[-2:])
            bump[i, j] = 1.0
            plus = self.evaluate(xi + step * bump)
            minus = self.evaluate(xi - step * bump)
            out[..., i, j] = (plus - minus) / (2 * step[..., 0, 0])
        return out

    def verify(self, samples: int = VERIFY_SAMPLES, seed: int = DEFAULT_SEED) -> None:
        """
        Check ``f(0) = 0`` and both growth bounds on random matrices with magnitudes from
        ``10⁻⁴`` to ``10⁴``.

        Raises:
            IntegrandError: naming the first violated condition
        """
        shapes = [self.shape] if self.shape is not None else [(1, 1), (2, 2)]
        rng = np.random.default_rng(seed)
        for shape in shapes:
            zero = float(self.evaluate(np.zeros(shape)))
            if abs(zero) > _VERIFY_ATOL:
                raise IntegrandError(f"{self.kind}: f(0) = {zero} is not zero")
            xi = rng.standard_normal((samples, *shape))
            xi /= np.maximum(_frobenius(xi), 1e-300)[:, None, None]
            xi *= (10.0 ** rng.uniform(-4, 4, samples))[:, None, None]
            values = self.evaluate(xi)
            size = _frobenius(xi)
            if np.any(values < 0) or not np.all(np.isfinite(values)):
                raise IntegrandError(f"{self.kind}: values must be finite and ≥ 0")
            checked = size >= self.growth_floor
            lower = self.m_low * size
            if np.any(checked & (lower > values * (1 + _VERIFY_RTOL) + _VERIFY_ATOL)):
                raise IntegrandError(
                    f"{self.kind}: lower growth bound m|ξ| ≤ f(ξ) fails for m={self.m_low}"
                )
            upper = self.M_up * (1 + size)
            if np.any(values > upper * (1 + _VERIFY_RTOL) + _VERIFY_ATOL):
                raise IntegrandError(
                    f"{self.kind}: upper bound f(ξ) ≤ M(1+|ξ|) fails for M={self.M_up}"
                )

    def __mul__(self, factor: float) -> ScaledIntegrand:
        return ScaledIntegrand(self, factor)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"{type(self).__name__}(m_low={self.m_low}, M_up={self.M_up})"


class EuclideanIntegrand(Integrand):
    """``f(ξ) = |ξ|``, the total variation integrand."""

    kind: ClassVar[str] = "euclidean"

    def __init__(self, shape: tuple[int, int] | None = None):
        super().__init__(1.0, 1.0, shape=shape)

    def evaluate(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        return _frobenius(xi)

    def derivative(self, xi: ArrayLike) -> NDArray[np.float64]:
        xi = _as_matrices(xi)
        size = _frobenius(xi)[..., None, None]
        return np.where(size > 0, xi / np.where(size > 0, size, 1.0), 0.0)


class WeightedIntegrand(Integrand):
    """``f(ξ) = |A·vec(ξ)|`` for an invertible ``mn × mn`` matrix ``A``."""

    kind: ClassVar[str] = "weighted"

    def __init__(self, A: ArrayLike, shape: tuple[int, int]):
        matrix = np.asarray(A, dtype=float)
        size = shape[0] * shape[1]
        if matrix.shape != (size, size):
            raise IntegrandError(f"Weight matrix must be {size}×{size} for shape {shape}")
        singular_values = np.linalg.svd(matrix, compute_uv=False)
        if singular_values.min() <= 0:
            raise IntegrandError("Weight matrix must be invertible")
        self.A: NDArray[np.float64] = matrix
        super().__init__(
            float(singular_values.min()),
            max(1.0, float(singular_values.max())),
            shape=shape,
        )

    def _apply(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        flat = xi.reshape((*xi.shape[:-2], -1))
        return flat @ self.A.T

    def evaluate(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.linalg.norm(self._apply(xi), axis=-1)

    def derivative(self, xi: ArrayLike) -> NDArray[np.float64]:
        xi = _as_matrices(xi)
        image = self._apply(xi)
        size = np.linalg.norm(image, axis=-1)[..., None]
        unit = np.where(size > 0, image / np.where(size > 0, size, 1.0), 0.0)
        return (unit @ self.A).reshape(xi.shape)


class SmoothedIntegrand(Integrand):
    """``f(ξ) = √(ε² + |ξ|²) - ε``; linear growth is claimed for ``|ξ| ≥ ε``."""

    kind: ClassVar[str] = "smoothed"

    def __init__(self, eps: float, shape: tuple[int, int] | None = None):
        if not (math.isfinite(eps) and eps > 0):
            raise IntegrandError(f"Smoothing parameter must be positive, got {eps}")
        self.eps: float = float(eps)
        super().__init__(math.sqrt(2.0) - 1.0, 1.0, growth_floor=eps, shape=shape)

    def evaluate(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        size = _frobenius(xi)
        # ε²/(√(ε²+r²)+ε) avoids cancellation for small r
        return size**2 / (np.sqrt(self.eps**2 + size**2) + self.eps)

    def derivative(self, xi: ArrayLike) -> NDArray[np.float64]:
        xi = _as_matrices(xi)
        return xi / np.sqrt(self.eps**2 + _frobenius(xi) ** 2)[..., None, None]


class TabulatedIntegrand(Integrand):
    """
    Radial integrand ``f(ξ) = g(|ξ|)`` through samples ``(r_k, g_k)``, piecewise linear
    with ``g(0) = 0`` and continued with the last slope.
    """

    kind: ClassVar[str] = "tabulated"

    def __init__(
        self,
        radii: ArrayLike,
        values: ArrayLike,
        m_low: float,
        M_up: float,
        shape: tuple[int, int] | None = None,
    ):
        r = np.asarray(radii, dtype=float)
        g = np.asarray(values, dtype=float)
        if r.ndim != 1 or r.shape != g.shape or len(r) < 2:
            raise IntegrandError("Tabulated integrands need matching 1D sample arrays")
        if r[0] <= 0 or np.any(np.diff(r) <= 0):
            raise IntegrandError("Sample radii must be positive and strictly increasing")
        self.radii: NDArray[np.float64] = np.concatenate([[0.0], r])
        self.values: NDArray[np.float64] = np.concatenate([[0.0], g])
        self.slope: float = float((g[-1] - g[-2]) / (r[-1] - r[-2]))
        super().__init__(m_low, M_up, shape=shape)

    def profile(self, r: NDArray[np.float64]) -> NDArray[np.float64]:
        inside = np.interp(r, self.radii, self.values)
        beyond = self.values[-1] + self.slope * (r - self.radii[-1])
        return np.where(r > self.radii[-1], beyond, inside)

    def evaluate(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.profile(_frobenius(xi))


class CallableIntegrand(Integrand):
    """An arbitrary vectorized callable with declared growth constants."""

    kind: ClassVar[str] = "callable"

    def __init__(
        self,
        fn: Callable[[NDArray[np.float64]], ArrayLike],
        m_low: float,
        M_up: float,
        *,
        shape: tuple[int, int] | None = None,
        verify: bool = False,
    ):
        self.fn: Callable[[NDArray[np.float64]], ArrayLike] = fn
        super().__init__(m_low, M_up, shape=shape, verify=verify)

    def evaluate(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.asarray(self.fn(xi), dtype=float)


class ScaledIntegrand(Integrand):
    """``c·f`` for ``c > 0``."""

    kind: ClassVar[str] = "scaled"

    def __init__(self, base: Integrand, factor: float):
        if not (math.isfinite(factor) and factor > 0):
            raise IntegrandError(f"Scale factor must be positive, got {factor}")
        self.base: Integrand = base
        self.factor: float = float(factor)
        super().__init__(
            base.m_low * factor,
            max(1.0, base.M_up * factor),
            growth_floor=base.growth_floor,
            shape=base.shape,
            verify=False,
        )

    def evaluate(self, xi: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.factor * self.base.evaluate(xi)

    def derivative(self, xi: ArrayLike) -> NDArray[np.float64]:
        return self.factor * self.base.derivative(xi)


def integrand_from_spec(spec: str, shape: tuple[int, int]) -> Integrand:
    """
    Build ``euclidean``, ``smoothed:eps`` or ``weighted:a11,a12,...`` (row-major
    ``mn × mn`` entries).
    """
    name, _, raw = spec.partition(":")
    try:
        args = [float(a) for a in raw.split(",")] if raw else []
    except ValueError:
        raise IntegrandError(f"Malformed integrand spec {spec!r}") from None
    if name == "euclidean" and not args:
        return EuclideanIntegrand(shape)
    if name == "smoothed" and len(args) == 1:
        return SmoothedIntegrand(args[0], shape)
    if name == "weighted":
        size = shape[0] * shape[1]
        if len(args) != size * size:
            raise IntegrandError(f"Weighted integrand needs {size * size} entries")
        return WeightedIntegrand(np.reshape(args, (size, size)), shape)
    raise IntegrandError(
        f"Unknown integrand {spec!r}; expected euclidean, smoothed:eps or weighted:..."
    )


@dataclass(frozen=True)
class RecessionEstimate:
    """
    ``f^∞(ξ)`` estimated as the largest ``f(tξ)/t`` over the window ``t = 2^k`` with
    ``k`` in ``exponents``.
    """

    value: NDArray[np.float64]
    converged: bool
    exponents: tuple[int, int]
    ratios: NDArray[np.float64] = field(repr=False, compare=False)


def recession_estimate(f: Integrand, xi: ArrayLike) -> RecessionEstimate:
    xi = _as_matrices(xi)
    t = 2.0 ** RECESSION_EXPONENTS
    scale = t.reshape((-1,) + (1,) * xi.ndim)
    with np.errstate(over="ignore", invalid="ignore"):
        ratios = f.evaluate(scale * xi[None]) / t.reshape((-1,) + (1,) * (xi.ndim - 2))
    finite = np.all(np.isfinite(ratios.reshape(len(t), -1)), axis=1)
    last = len(t) - 1 if finite.all() else max(0, int(np.argmin(finite)) - 1)
    first = max(0, last - RECESSION_WINDOW)
    window = ratios[first : last + 1]
    value = window.max(axis=0)
    spread = window.max(axis=0) - window.min(axis=0)
    converged = bool(
        np.all(spread <= RECESSION_RTOL * np.maximum(np.abs(value), 1e-300))
    )
    if last < len(t) - 1:
        logger.warning(
            "Integrand overflows beyond t=2^%d; recession window shifted down", last
        )
    return RecessionEstimate(value, converged, (first, last), ratios)


def recession(f: Integrand, xi: ArrayLike) -> NDArray[np.float64] | float:
    """
    ``f^∞(ξ) = limsup_{t→∞} f(tξ)/t``, a float for a single matrix.

    A warning is logged when the ratios still move across the window.
    """
    estimate = recession_estimate(f, xi)
    if not estimate.converged:
        logger.warning(
            "Recession ratios oscillate by more than %g over 2^%d..2^%d",
            RECESSION_RTOL,
            *estimate.exponents,
        )
    value = estimate.value
    return float(value) if np.ndim(value) == 0 else value


def g_envelope(f: Integrand, xi: ArrayLike) -> NDArray[np.float64] | float:
    """``g(ξ) = sup_{t>0} f(tξ)/t`` over ``log t`` in ``[10⁻⁸, 10¹⁸]``."""
    xi = _as_matrices(xi)
    t = np.logspace(-8, 18, 26 * 16 + 1)
    scale = t.reshape((-1,) + (1,) * xi.ndim)
    with np.errstate(over="ignore", invalid="ignore"):
        ratios = f.evaluate(scale * xi[None]) / t.reshape((-1,) + (1,) * (xi.ndim - 2))
    ratios = np.where(np.isfinite(ratios), ratios, -np.inf)
    value = np.maximum(ratios.max(axis=0), 0.0)
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True)
class QuasiconvexityReport:
    """
    Smallest ``⨍ f(ξ + ∇φ)`` found over zero-boundary perturbations, compared with
    ``f(ξ)``. ``witness`` is the perturbation attaining it when the test fails.
    """

    passed: bool
    reference: float
    minimum: float
    witness: GridFunction | None


def quasiconvexity_test(
    f: Integrand,
    xi: ArrayLike,
    resolution: int = 8,
    restarts: int = 8,
    seed: int = DEFAULT_SEED,
    max_iterations: int = 500,
) -> QuasiconvexityReport:
    """
    Search for a zero-boundary perturbation ``φ`` on the unit cube with
    ``⨍ f(ξ + ∇φ) < f(ξ)``.

    Restarts draw random perturbations with slopes geometric from ``10⁻³`` to ``10``
    and descend with Armijo backtracking. Each restart has its own seed derived from
    ``seed``.
    """
    xi = _as_matrices(xi)
    if xi.ndim != 2:
        raise IntegrandError("quasiconvexity_test takes a single matrix")
    m, n = xi.shape
    if n not in (1, 2):
        raise IntegrandError("Only n = 1 or n = 2 is supported")
    domain = (
        GridDomain.interval(0.0, 1.0, resolution)
        if n == 1
        else GridDomain.square(0.0, 1.0, resolution)
    )
    reference = float(f.evaluate(xi))
    boundary = np.ones(domain.node_shape, dtype=bool)
    boundary[tuple(slice(1, -1) for _ in range(n))] = False
    cells = math.prod(domain.cell_shape)

    def energy(values: NDArray[np.float64]) -> float:
        G = gradient(GridFunction(domain, values)).values
        return float(np.mean(f.evaluate(xi + G)))

    def slope(values: NDArray[np.float64]) -> NDArray[np.float64]:
        G = gradient(GridFunction(domain, values)).values
        out = gradient_transpose(domain, f.derivative(xi + G)) / cells
        out[boundary] = 0.0
        return out

    best = reference
    witness = None
    amplitudes = np.geomspace(1e-3, 10.0, restarts) * domain.min_spacing
    for restart, amplitude in enumerate(amplitudes):
        rng = np.random.default_rng([seed, restart])
        values = amplitude * rng.standard_normal((*domain.node_shape, m))
        values[boundary] = 0.0
        current = energy(values)
        step = 1.0
        for _ in range(max_iterations):
            direction = slope(values)
            norm2 = float(np.sum(direction**2))
            if norm2 == 0:
                break
            trial = step
            while trial > 1e-16:
                candidate = values - trial * direction
                value = energy(candidate)
                if value <= current - 1e-4 * trial * norm2:
                    break
                trial *= 0.5
            else:
                break
            values, current, step = candidate, value, 2.0 * trial
        if current < best:
            best = current
            witness = values
    passed = best >= reference - 1e-6 * (1 + abs(reference))
    return QuasiconvexityReport(
        passed,
        reference,
        best,
        None if passed or witness is None else GridFunction(domain, witness),
    )


def truncation_profile(
    t: ArrayLike, p: ArrayLike, j: float
) -> NDArray[np.float64]:
    """``φ_j(x, t)``: ``t^p`` up to ``j``, then the tangent line ``j^p + p·j^{p-1}(t - j)``."""
    if j < 1:
        raise IntegrandError(f"Truncation level must be ≥ 1, got {j}")
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(over="ignore"):
        below = np.minimum(t, j) ** p
    return np.where(t <= j, below, j**p + p * j ** (p - 1) * (t - j))


class TruncatedIntegrand:
    """``ψ_j(x, ξ) = φ_j(x, f(ξ))``, a linear-growth integrand for every ``j ≥ 1``."""

    def __init__(self, f: Integrand, p: ExponentField, j: float):
        if j < 1:
            raise IntegrandError(f"Truncation level must be ≥ 1, got {j}")
        self.f: Integrand = f
        self.p: ExponentField = p
        self.j: float = float(j)

    def __call__(self, xi: ArrayLike, sites: str = "cells") -> NDArray[np.float64]:
        values = self.f(xi)
        p = self.p.values if sites == "nodes" else self.p.cell_values()
        p = p.reshape(p.shape + (1,) * (values.ndim - p.ndim))
        return truncation_profile(values, p, self.j)


def truncated_integrand(f: Integrand, p: ExponentField, j: float) -> TruncatedIntegrand:
    return TruncatedIntegrand(f, p, j)


def truncated_recession(
    f: Integrand,
    p: ExponentField | float,
    j: float,
    xi: ArrayLike,
    x: tuple[int, ...] | None = None,
) -> float:
    """
    ``Ψ_j(x, ξ) = p(x)·j^{p(x)-1}·f^∞(ξ)``.

    ``p`` is an exponent value, or a field read at the node index ``x``.
    """
    if isinstance(p, ExponentField):
        if x is None:
            raise IntegrandError("A node index is required with an exponent field")
        exponent = float(p.values[x])
    else:
        exponent = float(p)
    return exponent * j ** (exponent - 1) * float(recession(f, xi))


def truncation_chain(
    f: Integrand, p: float, p_plus: float, j: float, xi: ArrayLike
) -> NDArray[np.float64]:
    """
    The bounds ``m|ξ| - 1 ≤ f - 1 ≤ ψ_j ≤ j^{p⁺} + p⁺j^{p⁺-1}f ≤ j^{p⁺} + Mp⁺j^{p⁺}(1+|ξ|)
    ≤ Mp⁺j^{p⁺}(2+|ξ|)``, evaluated left to right; the chain holds when they are
    non-decreasing.
    """
    xi = _as_matrices(xi)
    size = float(_frobenius(xi))
    value = float(f(xi))
    M = f.M_up
    return np.array(
        [
            f.m_low * size - 1.0,
            value - 1.0,
            float(truncation_profile(value, p, j)),
            j**p_plus + p_plus * j ** (p_plus - 1) * value,
            j**p_plus + M * p_plus * j**p_plus * (1 + size),
            M * p_plus * j**p_plus * (2 + size),
        ]
    )


def strong_recession_of_composite(f: Integrand, p: ExponentField, xi: ArrayLike) -> float:
    """
    The strong recession of ``f^{p(x)}`` is infinite off Y and undefined in general;
    the relaxation works with ``Ψ_j`` instead.
    """
    raise UnsupportedOperation(
        "The strong recession of f^{p(x)} is not available; use truncated_recession"
    )


def _sample_pairs(
    shape: tuple[int, int], samples: int, seed: int
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((samples, *shape))
    xi *= (10.0 ** rng.uniform(-3, 3, samples))[:, None, None]
    close = rng.standard_normal((samples, *shape)) * (
        10.0 ** rng.uniform(-6, 0, samples)
    )[:, None, None]
    far = rng.standard_normal((samples, *shape)) * (10.0 ** rng.uniform(-3, 3, samples))[
        :, None, None
    ]
    eta = np.where(np.arange(samples)[:, None, None] % 2 == 0, xi + close, far)
    return xi, eta


def _power_lipschitz_ratios(
    f: Integrand, q: float, xi: NDArray[np.float64], eta: NDArray[np.float64]
) -> NDArray[np.float64]:
    with np.errstate(over="ignore", invalid="ignore"):
        top = np.abs(f.evaluate(xi) ** q - f.evaluate(eta) ** q)
        bottom = (
            1 + _frobenius(xi) ** (q - 1) + _frobenius(eta) ** (q - 1)
        ) * _frobenius(xi - eta)
        ratios = top / bottom
    return np.where(bottom > 0, ratios, 0.0)


def fit_power_lipschitz(
    f: Integrand,
    q_bar: float,
    shape: tuple[int, int] = (1, 1),
    samples: int = 2000,
    seed: int = DEFAULT_SEED,
) -> float:
    """
    Fit ``C`` in ``|f(ξ)^q - f(η)^q| ≤ C(1 + |ξ|^{q-1} + |η|^{q-1})|ξ - η|`` for
    ``q ∈ [1, q̄]`` as twice the largest sampled ratio.
    """
    xi, eta = _sample_pairs(shape, samples, seed)
    worst = max(
        float(_power_lipschitz_ratios(f, q, xi, eta).max())
        for q in np.linspace(1.0, q_bar, 9)
    )
    return 2.0 * worst


def check_power_lipschitz(
    f: Integrand,
    q: float,
    C: float,
    shape: tuple[int, int] = (1, 1),
    samples: int = 2000,
    seed: int = DEFAULT_SEED + 1,
) -> tuple[bool, float]:
    """Check the fitted constant on fresh samples; returns the flag and worst ratio."""
    xi, eta = _sample_pairs(shape, samples, seed)
    worst = float(_power_lipschitz_ratios(f, q, xi, eta).max())
    return worst <= C, worst


def power_growth_check(
    f: Integrand, p: Sequence[float] | ArrayLike, xi: ArrayLike
) -> bool:
    """``f(ξ)^{p} ≤ (2M)^{p⁺}(1 + |ξ|^{p})`` for each exponent value in ``p``."""
    xi = _as_matrices(xi)
    exponents = np.atleast_1d(np.asarray(p, dtype=float))
    p_plus = float(exponents.max())
    value = float(f(xi))
    size = float(_frobenius(xi))
    lhs = value**exponents
    rhs = (2 * f.M_up) ** p_plus * (1 + size**exponents)
    return bool(np.all(lhs <= rhs * (1 + 1e-12)))
