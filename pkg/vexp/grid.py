"""
Discrete box domains, nodal functions and the finite-difference calculus every other
module computes on.

Nodal values carry a trailing component axis of length ``m``. Gradients live on cells
and carry two trailing axes ``(m, n)``. Quadrature is the midpoint rule on cells.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage
from typing_extensions import Self

from vexp.errors import GridError, MollifierError

logger: logging.Logger = logging.getLogger("vexp.grid")

MIN_CELLS = 4
DEFAULT_SEED = 42

Box = tuple[tuple[float, float], ...]
BoundaryExtension = Literal["reflect", "extrapolate"]

# Tolerance, in units of the spacing, when snapping box faces onto nodes.
_SNAP = 1e-9


@dataclass(frozen=True)
class GridDomain:
    """
    A uniform tensor grid on a box in one or two dimensions.

    Args:
        extents: One ``(a_k, b_k)`` interval per axis
        cells: Number of cells ``N_k`` per axis
    """

    extents: Box
    cells: tuple[int, ...]

    def __post_init__(self) -> None:
        extents = tuple((float(a), float(b)) for a, b in self.extents)
        cells = tuple(int(n) for n in self.cells)
        if len(cells) not in (1, 2):
            raise GridError(f"Only 1D and 2D grids are supported, got dim={len(cells)}")
        if len(extents) != len(cells):
            raise GridError(
                f"Got {len(extents)} extents for a {len(cells)}-dimensional grid"
            )
        for k, ((a, b), n) in enumerate(zip(extents, cells)):
            if not (math.isfinite(a) and math.isfinite(b)) or b <= a:
                raise GridError(f"Axis {k} has an empty or unbounded extent [{a}, {b}]")
            if n < MIN_CELLS:
                raise GridError(
                    f"Axis {k} has {n} cells; at least {MIN_CELLS} are required"
                )
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def interval(cls, a: float, b: float, cells: int) -> Self:
        return cls(((a, b),), (cells,))

    @classmethod
    def square(cls, a: float, b: float, cells: int) -> Self:
        return cls(((a, b), (a, b)), (cells, cells))

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / n for (a, b), n in zip(self.extents, self.cells))

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.cells)

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def node_count(self) -> int:
        return math.prod(self.node_shape)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in self.extents)

    @property
    def diameter(self) -> float:
        return math.sqrt(sum((b - a) ** 2 for a, b in self.extents))

    def axis_nodes(self, axis: int) -> NDArray[np.float64]:
        a, b = self.extents[axis]
        return np.linspace(a, b, self.cells[axis] + 1)

    def axis_centers(self, axis: int) -> NDArray[np.float64]:
        nodes = self.axis_nodes(axis)
        return 0.5 * (nodes[1:] + nodes[:-1])

    def node_coordinates(self) -> tuple[NDArray[np.float64], ...]:
        """Coordinate arrays of shape ``node_shape``, one per axis."""
        return tuple(
            np.meshgrid(*(self.axis_nodes(k) for k in range(self.dim)), indexing="ij")
        )

    def cell_centers(self) -> tuple[NDArray[np.float64], ...]:
        return tuple(
            np.meshgrid(*(self.axis_centers(k) for k in range(self.dim)), indexing="ij")
        )

    def node_points(self) -> NDArray[np.float64]:
        """All nodes as an array of shape ``(node_count, dim)`` in row-major order."""
        return np.stack([c.ravel() for c in self.node_coordinates()], axis=-1)

    def interior_cell_mask(self) -> NDArray[np.bool_]:
        """Cells whose closure does not touch the boundary of the box."""
        mask = np.zeros(self.cell_shape, dtype=bool)
        mask[tuple(slice(1, n - 1) for n in self.cells)] = True
        return mask

    def cell_mask(self, box: Box | None) -> NDArray[np.bool_]:
        """Cells whose centre lies in the open box; all cells when ``box`` is None."""
        if box is None:
            return np.ones(self.cell_shape, dtype=bool)
        self._check_box(box)
        mask = np.ones(self.cell_shape, dtype=bool)
        for center, (lo, hi) in zip(self.cell_centers(), box):
            mask &= (center > lo) & (center < hi)
        return mask

    def node_slices(self, box: Box) -> tuple[slice, ...]:
        """
        Index slices of the nodes spanning ``box`` after snapping its faces inward onto
        grid nodes.
        """
        self._check_box(box)
        slices = []
        for k, (lo, hi) in enumerate(box):
            a, _ = self.extents[k]
            h = self.spacing[k]
            start = max(0, math.ceil((lo - a) / h - _SNAP))
            stop = min(self.cells[k], math.floor((hi - a) / h + _SNAP))
            if stop - start < MIN_CELLS:
                raise GridError(
                    f"Box {box} spans fewer than {MIN_CELLS} cells along axis {k}"
                )
            slices.append(slice(start, stop + 1))
        return tuple(slices)

    def subdomain(self, box: Box) -> GridDomain:
        slices = self.node_slices(box)
        extents = []
        cells = []
        for k, sl in enumerate(slices):
            nodes = self.axis_nodes(k)[sl]
            extents.append((float(nodes[0]), float(nodes[-1])))
            cells.append(len(nodes) - 1)
        return GridDomain(tuple(extents), tuple(cells))

    def _check_box(self, box: Box) -> None:
        if len(box) != self.dim:
            raise GridError(f"Box {box} does not match a {self.dim}-dimensional grid")
        for lo, hi in box:
            if hi <= lo:
                raise GridError(f"Box {box} is empty")


class GridFunction:
    """
    A nodal ℝ^m-valued function on a grid domain.

    Values are stored with shape ``node_shape + (m,)`` and are read-only.
    """

    def __init__(self, domain: GridDomain, values: ArrayLike):
        array = np.array(values, dtype=float)
        if array.shape == domain.node_shape:
            array = array[..., np.newaxis]
        if array.ndim != domain.dim + 1 or array.shape[:-1] != domain.node_shape:
            raise GridError(
                f"Values of shape {array.shape} do not match nodes {domain.node_shape}"
            )
        if array.shape[-1] < 1:
            raise GridError("Grid functions need at least one component")
        if not np.all(np.isfinite(array)):
            raise GridError("Grid function values must be finite")
        array.flags.writeable = False
        self.domain: GridDomain = domain
        self.values: NDArray[np.float64] = array

    @classmethod
    def from_callable(
        cls, domain: GridDomain, fn: Callable[..., ArrayLike], codim: int | None = None
    ) -> Self:
        """
        Sample ``fn`` at the nodes. ``fn`` receives one coordinate array per axis and
        returns an array of shape ``node_shape`` or ``node_shape + (m,)``.
        """
        values = np.asarray(fn(*domain.node_coordinates()), dtype=float)
        values = np.broadcast_to(
            values,
            domain.node_shape
            if values.ndim <= domain.dim
            else domain.node_shape + values.shape[domain.dim :],
        )
        function = cls(domain, values)
        if codim is not None and function.codim != codim:
            raise GridError(f"Expected {codim} components, got {function.codim}")
        return function

    @classmethod
    def constant(cls, domain: GridDomain, value: float | Sequence[float]) -> Self:
        vector = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(domain, np.broadcast_to(vector, (*domain.node_shape, len(vector))))

    @property
    def codim(self) -> int:
        return self.values.shape[-1]

    def with_values(self, values: ArrayLike) -> Self:
        return type(self)(self.domain, values)

    def component(self, index: int) -> GridFunction:
        return GridFunction(self.domain, self.values[..., index])

    def magnitude(self) -> NDArray[np.float64]:
        """Euclidean norm of the value at every node."""
        return np.linalg.norm(self.values, axis=-1)

    def sup_norm(self) -> float:
        return float(np.max(self.magnitude()))

    def cell_average(self) -> NDArray[np.float64]:
        """Mean of the corner values of every cell, shape ``cell_shape + (m,)``."""
        return _corner_mean(self.values, self.domain.dim)

    def restrict(self, box: Box) -> GridFunction:
        slices = self.domain.node_slices(box)
        return GridFunction(self.domain.subdomain(box), self.values[slices])

    def _combine(self, other: GridFunction | float, op: Callable[..., NDArray]) -> Self:
        if isinstance(other, GridFunction):
            if other.domain != self.domain:
                raise GridError("Grid functions live on different domains")
            return self.with_values(op(self.values, other.values))
        return self.with_values(op(self.values, float(other)))

    def __add__(self, other: GridFunction | float) -> Self:
        return self._combine(other, np.add)

    def __sub__(self, other: GridFunction | float) -> Self:
        return self._combine(other, np.subtract)

    def __mul__(self, scalar: float) -> Self:
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> Self:
        return self.with_values(-self.values)

    def __repr__(self) -> str:
        return f"GridFunction(cells={self.domain.cells}, codim={self.codim})"


class GradientField:
    """
    Per-cell matrices in ℝ^{m×n}, stored with shape ``cell_shape + (m, n)``.
    """

    def __init__(self, domain: GridDomain, values: ArrayLike):
        array = np.array(values, dtype=float)
        if (
            array.ndim != domain.dim + 2
            or array.shape[: domain.dim] != domain.cell_shape
            or array.shape[-1] != domain.dim
        ):
            raise GridError(
                f"Gradient values of shape {array.shape} do not match cells "
                f"{domain.cell_shape} with n={domain.dim}"
            )
        array.flags.writeable = False
        self.domain: GridDomain = domain
        self.values: NDArray[np.float64] = array

    @property
    def codim(self) -> int:
        return self.values.shape[-2]

    def magnitude(self) -> NDArray[np.float64]:
        """Frobenius norm per cell."""
        return np.sqrt(np.sum(self.values**2, axis=(-2, -1)))

    def with_values(self, values: ArrayLike) -> Self:
        return type(self)(self.domain, values)


def gradient(u: GridFunction) -> GradientField:
    """Forward differences on every cell."""
    domain = u.domain
    parts = []
    for k, h in enumerate(domain.spacing):
        diff = np.diff(u.values, axis=k) / h
        trim = tuple(slice(None) if j == k else slice(0, -1) for j in range(domain.dim))
        parts.append(diff[trim])
    return GradientField(domain, np.stack(parts, axis=-1))


def gradient_transpose(domain: GridDomain, w: ArrayLike) -> NDArray[np.float64]:
    """
    Transpose of the forward-difference operator: maps per-cell ``(m, n)`` matrices to
    nodal ``m``-vectors so that ``Σ_c ∇u_c : w_c = Σ_x u_x · (Gᵀw)_x``.
    """
    array = np.asarray(w, dtype=float)
    out = np.zeros((*domain.node_shape, array.shape[-2]))
    lower = tuple(slice(0, n) for n in domain.cell_shape)
    for k, h in enumerate(domain.spacing):
        upper = tuple(
            slice(1, n + 1) if j == k else slice(0, n)
            for j, n in enumerate(domain.cell_shape)
        )
        flux = array[..., k] / h
        out[lower] -= flux
        out[upper] += flux
    return out


def divergence(w: GradientField) -> GridFunction:
    """
    Nodal divergence, the negative adjoint of :func:`gradient` for equal node and cell
    weights: ``Σ_x u·div w · vol == -integrate(∇u : w)``.
    """
    return GridFunction(w.domain, -gradient_transpose(w.domain, w.values))


def integrate(domain: GridDomain, values: ArrayLike) -> float:
    """Midpoint quadrature of per-cell values."""
    array = np.asarray(values, dtype=float)
    if array.shape != domain.cell_shape:
        raise GridError(
            f"Cell values of shape {array.shape} do not match cells {domain.cell_shape}"
        )
    return float(np.sum(array)) * domain.cell_volume


class Mollifier:
    """
    Discrete standard mollifier of physical radius ``radius``.

    The kernel ``exp(-1/(1-|x/δ|²))`` is sampled on the grid offsets inside the closed
    ball of radius δ and normalized to unit mass.
    """

    def __init__(self, domain: GridDomain, radius: float):
        radius = float(radius)
        if not math.isfinite(radius) or radius < domain.min_spacing * (1 - _SNAP):
            raise MollifierError(
                f"Mollifier radius {radius} is smaller than the grid spacing "
                f"{domain.min_spacing}"
            )
        half_widths = tuple(
            math.floor(radius / h + _SNAP) for h in domain.spacing
        )
        for k, (width, n) in enumerate(zip(half_widths, domain.cells)):
            if width >= n:
                raise MollifierError(
                    f"Mollifier radius {radius} exceeds the domain along axis {k}"
                )
        offsets = np.meshgrid(
            *(
                np.arange(-width, width + 1) * h
                for width, h in zip(half_widths, domain.spacing)
            ),
            indexing="ij",
        )
        r2 = sum(o**2 for o in offsets) / radius**2
        inside = r2 < 1.0
        kernel = np.zeros_like(r2)
        kernel[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        self.domain: GridDomain = domain
        self.radius: float = radius
        self.half_widths: tuple[int, ...] = half_widths
        self.weights: NDArray[np.float64] = kernel / kernel.sum()
        self.weights.flags.writeable = False

    def __repr__(self) -> str:
        return f"Mollifier(radius={self.radius}, stencil={self.weights.shape})"


def mollify(
    u: GridFunction, eta: Mollifier, boundary: BoundaryExtension = "reflect"
) -> GridFunction:
    """
    Convolve ``u`` with the mollifier after extending it past the boundary.

    ``"reflect"`` mirrors about the boundary node, which preserves constants and
    contracts the sup norm. ``"extrapolate"`` continues each axis by the quadratic
    through the last three nodes, which reproduces polynomials of degree two.
    """
    if eta.domain != u.domain:
        raise MollifierError("Mollifier was built for a different domain")
    out = np.empty_like(u.values)
    for alpha in range(u.codim):
        padded = _extend(u.values[..., alpha], eta.half_widths, boundary)
        smoothed = ndimage.correlate(padded, eta.weights, mode="constant")
        crop = tuple(slice(w, w + n) for w, n in zip(eta.half_widths, u.domain.node_shape))
        out[..., alpha] = smoothed[crop]
    return u.with_values(out)


def _extend(
    values: NDArray[np.float64],
    widths: Sequence[int],
    boundary: BoundaryExtension,
) -> NDArray[np.float64]:
    if boundary == "reflect":
        return np.pad(values, [(w, w) for w in widths], mode="reflect")
    if boundary != "extrapolate":
        raise MollifierError(f"Unknown boundary extension {boundary!r}")
    for axis, width in enumerate(widths):
        values = _extrapolate_axis(values, axis, width)
    return values


def _extrapolate_axis(
    values: NDArray[np.float64], axis: int, width: int
) -> NDArray[np.float64]:
    if width == 0:
        return values
    moved = np.moveaxis(values, axis, 0)
    steps = np.arange(1, width + 1, dtype=float).reshape((-1,) + (1,) * (moved.ndim - 1))

    def continuation(edge, inner, inner2):
        first = edge - inner
        second = edge - 2 * inner + inner2
        return edge + steps * first + steps * (steps + 1) / 2 * second

    low = continuation(moved[0], moved[1], moved[2])[::-1]
    high = continuation(moved[-1], moved[-2], moved[-3])
    return np.moveaxis(np.concatenate([low, moved, high], axis=0), 0, axis)


def _corner_mean(values: NDArray[np.float64], dim: int) -> NDArray[np.float64]:
    total = np.zeros(tuple(n - 1 for n in values.shape[:dim]) + values.shape[dim:])
    for corner in itertools.product((0, 1), repeat=dim):
        index = tuple(slice(c, n - 1 + c) for c, n in zip(corner, values.shape[:dim]))
        total += values[index]
    return total / 2**dim


def cell_values(domain: GridDomain, nodal: ArrayLike) -> NDArray[np.float64]:
    """Corner average of a nodal scalar array, shape ``cell_shape``."""
    array = np.asarray(nodal, dtype=float)
    if array.shape != domain.node_shape:
        raise GridError(
            f"Nodal values of shape {array.shape} do not match nodes {domain.node_shape}"
        )
    return _corner_mean(array, domain.dim)
