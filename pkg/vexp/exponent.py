"""
Variable exponent fields and their continuity diagnostics.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage
from scipy.spatial.distance import cdist
from typing_extensions import Self

from vexp.errors import ExponentError
from vexp.grid import DEFAULT_SEED, Box, GridDomain, cell_values

logger: logging.Logger = logging.getLogger("vexp.exponent")


# Values below ONE_SNAP are stored as exactly 1 so that Y = {p = 1} is a genuine set.
ONE_SNAP = 1.0 + 1e-12
_BELOW_ONE = 1.0 - 1e-9

# Node pairs visited by the exhaustive search. Larger grids search a node sample of
# the same pair count plus every pair within NEIGHBOR_CELLS cells along each axis.
PAIRWISE_BUDGET = 512**2
NEIGHBOR_CELLS = 4

# Ball footprints wider than this many cells fall back to sampled centres.
_MAX_FOOTPRINT = 33

Sites = Literal["nodes", "cells"]


class ExponentField:
    """
    Nodal exponent ``p(x) ≥ 1`` with its linear-growth set ``Y = {p = 1}``.
    """

    def __init__(self, domain: GridDomain, values: ArrayLike):
        array = np.array(values, dtype=float)
        if array.shape == (*domain.node_shape, 1):
            array = array[..., 0]
        if array.shape != domain.node_shape:
            raise ExponentError(
                f"Exponent values of shape {array.shape} do not match nodes "
                f"{domain.node_shape}"
            )
        if not np.all(np.isfinite(array)):
            raise ExponentError("Exponent values must be finite")
        if np.any(array < _BELOW_ONE):
            raise ExponentError(f"Exponent values must be ≥ 1, got {array.min()}")
        array = np.where(array < ONE_SNAP, 1.0, array)
        array.flags.writeable = False
        self.domain: GridDomain = domain
        self.values: NDArray[np.float64] = array
        self.p_minus: float = float(array.min())
        self.p_plus: float = float(array.max())
        self.y_mask: NDArray[np.bool_] = array == 1.0
        self.y_mask.flags.writeable = False

    @classmethod
    def constant(cls, domain: GridDomain, q: float) -> Self:
        return cls(domain, np.full(domain.node_shape, float(q)))

    @classmethod
    def from_callable(cls, domain: GridDomain, fn: Callable[..., ArrayLike]) -> Self:
        values = np.asarray(fn(*domain.node_coordinates()), dtype=float)
        return cls(domain, np.broadcast_to(values, domain.node_shape))

    @classmethod
    def from_spec(cls, spec: str, domain: GridDomain) -> Self:
        """
        Build one of the named exponents:

        - ``constant:q``
        - ``ramp:a,b``: linear from ``a`` at the left face to ``b`` at the right face
        - ``plateau-one:radius``: 1 within ``radius`` of the centre, rising with slope 1
          to at most 2
        - ``transition:x0,width,low,high``: ``low`` left of ``x0``, linear across
          ``width``, ``high`` beyond
        - ``jump:x0,low,high``: ``low`` for ``x ≤ x0``, ``high`` beyond
        """
        name, _, raw = spec.partition(":")
        try:
            args = [float(a) for a in raw.split(",")] if raw else []
        except ValueError:
            raise ExponentError(f"Malformed exponent spec {spec!r}") from None
        builder = _BUILTINS.get(name)
        if builder is None:
            raise ExponentError(
                f"Unknown exponent {name!r}; expected one of {sorted(_BUILTINS)}"
            )
        arity, make = builder
        if len(args) != arity:
            raise ExponentError(f"Exponent {name!r} takes {arity} parameters")
        return cls.from_callable(domain, make(domain, *args))

    @property
    def has_linear_growth_set(self) -> bool:
        return bool(self.y_mask.any())

    def cell_values(self) -> NDArray[np.float64]:
        """Exponent at cell centres by corner averaging."""
        return cell_values(self.domain, self.values)

    def at(self, sites: Sites) -> NDArray[np.float64]:
        return self.values if sites == "nodes" else self.cell_values()

    def restrict(self, box: Box) -> ExponentField:
        slices = self.domain.node_slices(box)
        return ExponentField(self.domain.subdomain(box), self.values[slices])

    def distance_to_y(self) -> NDArray[np.float64]:
        """Euclidean distance from every node to the nearest node of Y; inf if Y is empty."""
        if not self.has_linear_growth_set:
            return np.full(self.domain.node_shape, np.inf)
        return ndimage.distance_transform_edt(~self.y_mask, sampling=self.domain.spacing)

    def cell_distance_to_y(self) -> NDArray[np.float64]:
        """Distance from each cell to Y, taken as the smallest over its corners."""
        distance = self.distance_to_y()
        out = np.full(self.domain.cell_shape, np.inf)
        for corner in np.ndindex(*(2,) * self.domain.dim):
            index = tuple(slice(c, n - 1 + c) for c, n in zip(corner, distance.shape))
            out = np.minimum(out, distance[index])
        return out

    def __repr__(self) -> str:
        return (
            f"ExponentField(cells={self.domain.cells}, p_minus={self.p_minus}, "
            f"p_plus={self.p_plus})"
        )


def _ramp(domain: GridDomain, a: float, b: float) -> Callable[..., NDArray]:
    lo, hi = domain.extents[0]
    return lambda x, *_: a + (b - a) * (x - lo) / (hi - lo)


def _plateau(domain: GridDomain, radius: float) -> Callable[..., NDArray]:
    center = [(lo + hi) / 2 for lo, hi in domain.extents]

    def profile(*coords: NDArray) -> NDArray:
        distance = np.sqrt(sum((c - m) ** 2 for c, m in zip(coords, center)))
        return 1.0 + np.clip(distance - radius, 0.0, 1.0)

    return profile


def _transition(
    _domain: GridDomain, x0: float, width: float, low: float, high: float
) -> Callable[..., NDArray]:
    if width <= 0:
        raise ExponentError("Transition width must be positive")
    return lambda x, *_: low + (high - low) * np.clip((x - x0) / width, 0.0, 1.0)


def _jump(
    _domain: GridDomain, x0: float, low: float, high: float
) -> Callable[..., NDArray]:
    return lambda x, *_: np.where(x > x0, high, low)


def _constant(_domain: GridDomain, q: float) -> Callable[..., float]:
    return lambda *_: q


_BUILTINS: dict[str, tuple[int, Callable[..., Callable[..., ArrayLike]]]] = {
    "constant": (1, _constant),
    "ramp": (2, _ramp),
    "plateau-one": (1, _plateau),
    "transition": (4, _transition),
    "jump": (3, _jump),
}


@dataclass(frozen=True)
class StrongLogHolderTable:
    """
    Table ``r ↦ ω(r)`` of the strong log-Hölder modulus at the sampled radii.

    ``diverging`` is set when ω does not at least halve between the largest and the
    smallest radius, the numerical signature of ``ω(r) ↛ 0``.
    """

    radii: tuple[float, ...]
    omega: tuple[float, ...]
    diverging: bool

    def __len__(self) -> int:
        return len(self.radii)

    def at(self, radius: float) -> float:
        for r, w in zip(self.radii, self.omega):
            if math.isclose(r, radius, rel_tol=1e-12):
                return w
        raise KeyError(radius)


@dataclass(frozen=True)
class LogHolderReport:
    constant: float
    strong_modulus: StrongLogHolderTable
    ball_constant: float


def _log_factor(distance: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.log(np.e + 1.0 / distance)


def log_holder_constant(p: ExponentField, seed: int = DEFAULT_SEED) -> float:
    """
    Largest ``|p(x) - p(y)|·log(e + 1/|x - y|)`` over node pairs.

    All pairs are visited while their count stays within ``PAIRWISE_BUDGET``, that is
    up to 512 nodes. Larger grids combine a seeded sample of 512 nodes with every pair
    of nearby nodes, which carry the largest log factors.
    """
    domain = p.domain
    if domain.node_count < 2:
        raise ExponentError("At least two nodes are needed")
    points = domain.node_points()
    values = p.values.ravel()
    if domain.node_count**2 <= PAIRWISE_BUDGET:
        return _pairwise_sup(points, values)
    rng = np.random.default_rng(seed)
    size = math.isqrt(PAIRWISE_BUDGET)
    sample = rng.choice(domain.node_count, size=size, replace=False)
    best = _pairwise_sup(points[sample], values[sample])
    return max(best, _neighbor_sup(p))


def _pairwise_sup(points: NDArray[np.float64], values: NDArray[np.float64]) -> float:
    distance = cdist(points, points)
    np.fill_diagonal(distance, np.inf)
    spread = np.abs(values[:, None] - values[None, :])
    return float(np.max(spread * _log_factor(distance)))


def _neighbor_sup(p: ExponentField) -> float:
    domain = p.domain
    best = 0.0
    shifts = np.ndindex(*(NEIGHBOR_CELLS + 1,) * domain.dim)
    for shift in shifts:
        if not any(shift):
            continue
        for signs in np.ndindex(*(2,) * domain.dim):
            offset = tuple(s if sign == 0 else -s for s, sign in zip(shift, signs))
            if any(abs(o) >= n for o, n in zip(offset, domain.node_shape)):
                continue
            left = tuple(slice(max(0, -o), n - max(0, o)) for o, n in zip(offset, domain.node_shape))
            right = tuple(slice(max(0, o), n - max(0, -o)) for o, n in zip(offset, domain.node_shape))
            distance = math.sqrt(sum((o * h) ** 2 for o, h in zip(offset, domain.spacing)))
            spread = np.abs(p.values[left] - p.values[right])
            if spread.size:
                best = max(best, float(spread.max()) * math.log(math.e + 1 / distance))
    return best


def strong_log_holder_modulus(
    p: ExponentField, radii: Sequence[float]
) -> StrongLogHolderTable:
    """
    For each radius ``r``, the largest ``(p(x) - 1)·log(e + 1/dist(x, Y))`` over nodes
    with ``0 < dist(x, Y) ≤ r``.

    Returns an empty table when Y is empty.
    """
    if not p.has_linear_growth_set:
        return StrongLogHolderTable((), (), False)
    distance = p.distance_to_y()
    excess = p.values - 1.0
    off_y = distance > 0
    weighted = np.zeros_like(distance)
    weighted[off_y] = excess[off_y] * _log_factor(distance[off_y])
    omega = []
    for r in radii:
        within = off_y & (distance <= r * (1 + 1e-12))
        omega.append(float(weighted[within].max()) if within.any() else 0.0)
    table_radii = tuple(float(r) for r in radii)
    diverging = False
    if len(table_radii) >= 2:
        largest = omega[int(np.argmax(table_radii))]
        smallest = omega[int(np.argmin(table_radii))]
        diverging = largest > 0 and smallest > 0.5 * largest
    if diverging:
        logger.warning(
            "Strong log-Hölder modulus does not decay: ω=%s at r=%s",
            omega,
            table_radii,
        )
    return StrongLogHolderTable(table_radii, tuple(omega), diverging)


def ball_condition_constant(
    p: ExponentField, sample_count: int = 16, seed: int = DEFAULT_SEED
) -> float:
    """
    Largest ``|B|^{p⁻_B - p⁺_B}`` over sampled balls.

    Radii are the grid spacing plus ``sample_count`` log-uniform draws up to half the
    diameter. Small balls are centred at every node; wide ones at a seeded node sample.
    """
    if sample_count < 1:
        raise ExponentError("sample_count must be at least 1")
    domain = p.domain
    rng = np.random.default_rng(seed)
    h = domain.min_spacing
    draws = np.exp(rng.uniform(math.log(h), math.log(domain.diameter / 2), sample_count))
    radii = np.concatenate([[h], np.sort(draws)])
    best = 0.0
    for radius in radii:
        spread = _ball_spread(p, float(radius), rng)
        volume = _ball_volume(domain.dim, float(radius))
        best = max(best, float(np.max(volume ** (-spread))))
    return best


def _ball_volume(dim: int, radius: float) -> float:
    return 2 * radius if dim == 1 else math.pi * radius**2


def _ball_spread(p: ExponentField, radius: float, rng: np.random.Generator) -> NDArray:
    domain = p.domain
    widths = [math.floor(radius / h * (1 + 1e-12)) for h in domain.spacing]
    if max(widths) * 2 + 1 <= _MAX_FOOTPRINT:
        grids = np.meshgrid(
            *(np.arange(-w, w + 1) * h for w, h in zip(widths, domain.spacing)),
            indexing="ij",
        )
        footprint = sum(g**2 for g in grids) <= radius**2 * (1 + 1e-12)
        upper = ndimage.maximum_filter(
            p.values, footprint=footprint, mode="constant", cval=-np.inf
        )
        lower = ndimage.minimum_filter(
            p.values, footprint=footprint, mode="constant", cval=np.inf
        )
        return upper - lower
    points = domain.node_points()
    values = p.values.ravel()
    centers = rng.choice(domain.node_count, size=min(64, domain.node_count), replace=False)
    inside = cdist(points[centers], points) <= radius * (1 + 1e-12)
    upper = np.where(inside, values, -np.inf).max(axis=1)
    lower = np.where(inside, values, np.inf).min(axis=1)
    return upper - lower


def correction_factor_check(
    p: ExponentField, delta: float, c: float
) -> tuple[bool, float]:
    """
    Check ``(c/δ)^{p(x)-1} ≤ e^{2ω(δ)}`` at every node within δ of Y.

    Returns the pass flag and the largest ratio of the two sides.
    """
    if not p.has_linear_growth_set:
        return True, 0.0
    omega = strong_log_holder_modulus(p, [delta]).omega[0]
    near = p.distance_to_y() <= delta * (1 + 1e-12)
    lhs = (c / delta) ** (p.values[near] - 1.0)
    ratio = float(np.max(lhs / math.exp(2 * omega)))
    return ratio <= 1.0 + 1e-12, ratio


def log_holder_report(
    p: ExponentField,
    radii: Sequence[float],
    sample_count: int = 16,
    seed: int = DEFAULT_SEED,
) -> LogHolderReport:
    return LogHolderReport(
        constant=log_holder_constant(p, seed=seed),
        strong_modulus=strong_log_holder_modulus(p, radii),
        ball_constant=ball_condition_constant(p, sample_count, seed=seed),
    )
