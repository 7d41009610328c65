"""
Named fixtures for the acceptance experiments and the stores that persist them as text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from vexp.errors import GridError, MissingFixtureError
from vexp.exponent import ExponentField
from vexp.grid import DEFAULT_SEED, GridDomain, GridFunction, Mollifier, mollify
from vexp.relax import cutoff_profile, splice
from vexp.serializers import GridFunctionSerializer, JumpSetSerializer
from vexp.variation import Jump1D, PiecewiseBVFunction

logger: logging.Logger = logging.getLogger("vexp.corpus")


@runtime_checkable
class FixtureStore(Protocol):
    def exists(self, key: str) -> bool: ...

    def get(self, key: str) -> str: ...

    def set(self, key: str, value: str) -> None: ...


class CorpusStore(FixtureStore):
    """
    Directory-backed storage for fixture files, one file per key.
    """

    def __init__(self, path: Path | str):
        self.path: Path = Path(path)

    def _ensure_directory_exists(self) -> None:
        if not self.path.exists():
            self.path.mkdir(parents=True, exist_ok=True)

    def exists(self, key: str) -> bool:
        return (self.path / key).exists()

    def get(self, key: str) -> str:
        """
        Read the fixture stored under a key.

        Args:
            key: The fixture name

        Raises:
            MissingFixtureError: if no file exists for the key
        """
        path = self.path / key
        if not path.exists():
            raise MissingFixtureError(f"Fixture {key} not found in {self.path}")
        return path.read_text()

    def set(self, key: str, value: str) -> None:
        self._ensure_directory_exists()
        (self.path / key).write_text(value)


@dataclass(frozen=True)
class Case:
    """A function, its exponent and a name."""

    name: str
    function: PiecewiseBVFunction
    exponent: ExponentField


def step_1d(cells: int = 256, height: float = 2.0) -> Case:
    """``u = -1`` left of 0 and ``1`` right of it on ``(-1, 1)`` with ``p ≡ 1``."""
    domain = GridDomain.interval(-1.0, 1.0, cells)
    U = PiecewiseBVFunction(
        GridFunction.constant(domain, -height / 2), [Jump1D(0.0, (height,))]
    )
    return Case("step1d", U, ExponentField.constant(domain, 1.0))


def mixed_1d(cells: int = 512) -> Case:
    """
    ``u = x₊² + H(x + 1/2)`` with ``p = 1`` on ``x ≤ 0`` rising linearly to 2 across
    ``[0, 1/4]``.
    """
    domain = GridDomain.interval(-1.0, 1.0, cells)
    smooth = GridFunction.from_callable(domain, lambda x: np.maximum(x, 0.0) ** 2)
    U = PiecewiseBVFunction(smooth, [Jump1D(-0.5, (1.0,))])
    p = ExponentField.from_spec("transition:0,0.25,1,2", domain)
    return Case("mixed1d", U, p)


def ramp_2d(cells: int = 32) -> GridFunction:
    domain = GridDomain.square(0.0, 1.0, cells)
    return GridFunction.from_callable(domain, lambda x, y: x + 2 * y)


def duality_cases(cells_1d: int = 128, cells_2d: int = 24) -> list[Case]:
    """Smooth, step-in-Y and 2D ramp functions paired with several exponents."""
    line = GridDomain.interval(-1.0, 1.0, cells_1d)
    square = GridDomain.square(0.0, 1.0, cells_2d)
    parabola = PiecewiseBVFunction(GridFunction.from_callable(line, lambda x: x**2))
    wave = PiecewiseBVFunction(
        GridFunction.from_callable(line, lambda x: np.sin(np.pi * x))
    )
    step = PiecewiseBVFunction(GridFunction.constant(line, 0.0), [Jump1D(0.0, (1.0,))])
    tilted = PiecewiseBVFunction(
        GridFunction.from_callable(line, lambda x: 0.5 * x), [Jump1D(0.0, (1.0,))]
    )
    ramp = PiecewiseBVFunction(ramp_2d(cells_2d))
    left_step = PiecewiseBVFunction(
        GridFunction.from_callable(line, lambda x: np.maximum(x, 0.0) ** 2),
        [Jump1D(-0.5, (1.0,))],
    )

    def exponent(domain: GridDomain, spec: str) -> ExponentField:
        return ExponentField.from_spec(spec, domain)

    return [
        Case("parabola-constant2", parabola, exponent(line, "constant:2")),
        Case("parabola-ramp", parabola, exponent(line, "ramp:1.5,2.5")),
        Case("parabola-plateau", parabola, exponent(line, "plateau-one:0.25")),
        Case("wave-constant1.5", wave, exponent(line, "constant:1.5")),
        Case("wave-transition", wave, exponent(line, "transition:0,0.25,1,2")),
        Case("step-constant1", step, exponent(line, "constant:1")),
        Case("step-plateau", step, exponent(line, "plateau-one:0.25")),
        Case("mixed-transition", left_step, exponent(line, "transition:0,0.25,1,2")),
        Case("tilted-step-plateau", tilted, exponent(line, "plateau-one:0.5")),
        Case("ramp2d-constant2", ramp, exponent(square, "constant:2")),
        Case("ramp2d-ramp", ramp, exponent(square, "ramp:1.2,2")),
        Case("ramp2d-plateau", ramp, exponent(square, "plateau-one:0.2")),
    ]


def constant_sequence(U: PiecewiseBVFunction, length: int = 5) -> list[GridFunction]:
    return [U.discretize()] * length


def mollified_sequence(
    U: PiecewiseBVFunction, radii: list[float] | None = None
) -> list[GridFunction]:
    """``u * η_δ`` for decreasing δ, down to twice the grid spacing."""
    domain = U.domain
    u = U.discretize()
    if radii is None:
        radii = [2.0 ** (-k) * domain.diameter / 8 for k in range(5)]
        radii = [max(r, 2 * domain.min_spacing) for r in radii]
    return [mollify(u, Mollifier(domain, r)) for r in radii]


def spliced_sequence(
    U: PiecewiseBVFunction, inner: tuple[tuple[float, float], ...], band: float
) -> list[GridFunction]:
    """Mollified competitors inside ``inner`` glued to ``u`` outside through a cut-off."""
    profile = cutoff_profile(U.domain, inner, band)
    u = U.discretize()
    return [splice(v, u, profile) for v in mollified_sequence(U)]


def laminate_sequence(
    cells: int = 256, slope: float = 1.0, amplitude: float = 1.0, frequencies: int = 5
) -> tuple[GridFunction, list[GridFunction]]:
    """
    ``u_k = a·x + (b/k)·saw(k x)`` on ``(0, 1)`` converging to ``a·x`` while the
    gradients oscillate between ``a ± b``.
    """
    domain = GridDomain.interval(0.0, 1.0, cells)
    limit = GridFunction.from_callable(domain, lambda x: slope * x)
    sequence = []
    for k in (2 ** (i + 1) for i in range(frequencies)):
        period = 1.0 / k

        def saw(x: np.ndarray, period: float = period) -> np.ndarray:
            phase = np.mod(x, period) / period
            return amplitude * period * np.minimum(phase, 1 - phase)

        sequence.append(GridFunction.from_callable(domain, lambda x, s=saw: slope * x + s(x)))
    return limit, sequence


def noisy_step(
    cells: int = 256, sigma: float = 0.1, seed: int = DEFAULT_SEED
) -> tuple[GridFunction, GridFunction, ExponentField]:
    """
    A unit step at 0 on ``(-1, 1)`` plus Gaussian noise, with ``p = 1`` within 1/4 of the
    step rising to 2 across ``[1/4, 0.35]``.

    Returns the clean signal, the noisy data and the exponent.
    """
    domain = GridDomain.interval(-1.0, 1.0, cells)
    clean = GridFunction.from_callable(domain, lambda x: np.where(x > 0, 1.0, 0.0))
    rng = np.random.default_rng(seed)
    noisy = clean.with_values(clean.values + sigma * rng.standard_normal(clean.values.shape))
    p = ExponentField.from_callable(
        domain, lambda x: 1.0 + np.clip((np.abs(x) - 0.25) / 0.1, 0.0, 1.0)
    )
    return clean, noisy, p


def _stored_cases() -> list[Case]:
    _, noisy, p = noisy_step()
    return [step_1d(), mixed_1d(), Case("noisy_step", PiecewiseBVFunction(noisy), p)]


def write_corpus(store: FixtureStore) -> list[str]:
    """
    Serialize the file-driven fixtures into ``store``; returns the keys written.

    Each case becomes ``<name>.grid``, ``<name>.exponent`` and, when it jumps,
    ``<name>.jumps``. The 2D ramp is stored as ``ramp2d.grid`` alone.
    """
    grids = GridFunctionSerializer()
    written: list[str] = []

    def put(key: str, text: str) -> None:
        store.set(key, text)
        written.append(key)

    for case in _stored_cases():
        U = case.function
        put(f"{case.name}.grid", grids.serialize(U.smooth))
        if U.jumps:
            jumps = JumpSetSerializer(U.domain.dim, U.codim)
            put(f"{case.name}.jumps", jumps.serialize(U.jumps))
        put(f"{case.name}.exponent", grids.serialize(GridFunction(U.domain, case.exponent.values)))
    put("ramp2d.grid", grids.serialize(ramp_2d()))
    logger.info("Wrote %d fixtures", len(written))
    return written


def load_case(store: FixtureStore, name: str) -> Case:
    """
    Rebuild a case from its fixture files.

    Raises:
        MissingFixtureError: if the grid or exponent file is missing
        GridError: if the exponent lives on another grid than the function
    """
    grids = GridFunctionSerializer()
    smooth = grids.deserialize(store.get(f"{name}.grid"))
    jumps = []
    if store.exists(f"{name}.jumps"):
        serializer = JumpSetSerializer(smooth.domain.dim, smooth.codim)
        jumps = serializer.deserialize(store.get(f"{name}.jumps"))
    exponent = grids.deserialize(store.get(f"{name}.exponent"))
    if exponent.domain != smooth.domain:
        raise GridError(f"Fixture {name}: exponent and function live on different grids")
    p = ExponentField(smooth.domain, exponent.values)
    return Case(name, PiecewiseBVFunction(smooth, jumps), p)


def _same_case(a: Case, b: Case) -> bool:
    return (
        a.function.domain == b.function.domain
        and np.array_equal(a.function.smooth.values, b.function.smooth.values)
        and tuple(a.function.jumps) == tuple(b.function.jumps)
        and np.array_equal(a.exponent.values, b.exponent.values)
    )


def verify_corpus(store: FixtureStore) -> list[str]:
    """Read every fixture back from ``store``; returns the names that differ from the builders."""
    mismatched = []
    for expected in _stored_cases():
        if not _same_case(load_case(store, expected.name), expected):
            mismatched.append(expected.name)
    ramp = GridFunctionSerializer().deserialize(store.get("ramp2d.grid"))
    if not np.array_equal(ramp.values, ramp_2d().values):
        mismatched.append("ramp2d")
    for name in mismatched:
        logger.warning("Fixture %s does not match its builder", name)
    return mismatched
