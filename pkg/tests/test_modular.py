from __future__ import annotations

import math
from typing import ClassVar

import numpy as np
import pytest
from numpy.typing import ArrayLike, NDArray

from vexp.errors import GridError, InvalidInputError, LuxemburgError, PhiError
from vexp.exponent import ExponentField, Sites
from vexp.grid import GridDomain, GridFunction, gradient
from vexp.modular import ModularValue, associate_norm, cell_magnitudes, luxemburg_norm, modular
from vexp.phi import PhiFunction, VariableExponentPhi


class InfinitePhi(PhiFunction):
    """Infinite for every positive argument."""

    kind: ClassVar[str] = "infinite"

    def evaluate(self, t: ArrayLike, sites: Sites = "cells") -> NDArray[np.float64]:
        t = np.abs(np.asarray(t, dtype=float))
        return np.where(t > 0, np.inf, 0.0)


@pytest.fixture
def unit() -> GridDomain:
    return GridDomain.interval(0.0, 1.0, 64)


def power(domain: GridDomain, spec: str) -> VariableExponentPhi:
    return VariableExponentPhi(ExponentField.from_spec(spec, domain))


class TestModular:
    def test_zero(self, unit: GridDomain):
        value = modular(power(unit, "constant:2"), GridFunction.constant(unit, 0.0))
        assert float(value) == 0.0
        assert value.finite

    def test_square_of_one(self, unit: GridDomain):
        value = modular(power(unit, "constant:2"), GridFunction.constant(unit, 1.0))
        assert float(value) == pytest.approx(0.5)

    def test_variable_exponent_converges(self):
        def rho(cells: int) -> float:
            domain = GridDomain.interval(0.0, 1.0, cells)
            return float(modular(power(domain, "ramp:1,2"), GridFunction.constant(domain, 2.0)))

        assert rho(64) == pytest.approx(rho(4096), rel=1e-3)

    def test_vector_valued_uses_euclidean_norm(self, unit: GridDomain):
        value = modular(power(unit, "constant:2"), GridFunction.constant(unit, (3.0, 4.0)))
        assert float(value) == pytest.approx(12.5)

    def test_gradient_field(self, unit: GridDomain):
        u = GridFunction.from_callable(unit, lambda x: 3 * x)
        value = modular(power(unit, "constant:2"), gradient(u))
        assert float(value) == pytest.approx(4.5)

    def test_infinite_on_y(self, unit: GridDomain):
        conjugate = power(unit, "constant:1").conjugate()
        value = modular(conjugate, GridFunction.constant(unit, 2.0))
        assert not value.finite
        assert ModularValue(math.inf).value == math.inf

    def test_raw_array_needs_domain(self, unit: GridDomain):
        phi = power(unit, "constant:2")
        with pytest.raises(InvalidInputError):
            modular(phi, np.ones(unit.cell_shape))
        with pytest.raises(GridError):
            modular(phi, np.ones(10), unit)
        assert float(modular(phi, np.ones(unit.cell_shape), unit)) == pytest.approx(0.5)

    def test_domain_mismatch(self, unit: GridDomain):
        other = GridDomain.interval(0.0, 2.0, 64)
        with pytest.raises(PhiError):
            modular(power(other, "constant:2"), GridFunction.constant(unit, 1.0))

    def test_cell_magnitudes_of_trailing_axes(self, unit: GridDomain):
        _, magnitudes = cell_magnitudes(np.full((*unit.cell_shape, 2, 2), 0.5), unit)
        np.testing.assert_allclose(magnitudes, 1.0)


class TestLuxemburgNorm:
    def test_zero(self, unit: GridDomain):
        assert luxemburg_norm(power(unit, "constant:2"), GridFunction.constant(unit, 0.0)) == 0

    def test_square_of_one(self, unit: GridDomain):
        norm = luxemburg_norm(power(unit, "constant:2"), GridFunction.constant(unit, 1.0))
        assert norm == pytest.approx(1 / math.sqrt(2), rel=1e-9)

    @pytest.mark.parametrize("c", [0.5, 1.0, 7.0])
    def test_linear_growth(self, unit: GridDomain, c: float):
        norm = luxemburg_norm(power(unit, "constant:1"), GridFunction.constant(unit, c))
        assert norm == pytest.approx(c, rel=1e-9)

    def test_unit_ball(self, unit: GridDomain):
        phi = power(unit, "ramp:1.2,3")
        u = GridFunction.from_callable(unit, lambda x: 1 + np.sin(5 * x))
        norm = luxemburg_norm(phi, u)
        assert float(modular(phi, u * (1 / norm))) <= 1 + 1e-8
        assert float(modular(phi, u * (1 / (0.999 * norm)))) > 1

    def test_homogeneity_and_triangle(self, unit: GridDomain):
        phi = power(unit, "plateau-one:0.2")
        rng = np.random.default_rng(42)
        for _ in range(20):
            u = GridFunction(unit, rng.standard_normal(unit.node_shape))
            v = GridFunction(unit, rng.standard_normal(unit.node_shape))
            c = rng.uniform(-5, 5)
            nu, nv = luxemburg_norm(phi, u), luxemburg_norm(phi, v)
            assert luxemburg_norm(phi, u * c) == pytest.approx(abs(c) * nu, rel=1e-6)
            assert luxemburg_norm(phi, u + v) <= nu + nv + 1e-6

    def test_infinite_modular(self, unit: GridDomain):
        with pytest.raises(LuxemburgError):
            luxemburg_norm(InfinitePhi(), GridFunction.constant(unit, 1.0))


class TestAssociateNorm:
    def test_zero(self, unit: GridDomain):
        phi = power(unit, "constant:2")
        zero = GridFunction.constant(unit, 0.0)
        assert associate_norm(phi, zero) == 0
        assert associate_norm(phi, zero, mode="exact") == 0

    def test_square_exact(self, unit: GridDomain):
        value = associate_norm(
            power(unit, "constant:2"), GridFunction.constant(unit, 1.0), mode="exact"
        )
        assert value == pytest.approx(math.sqrt(2), rel=1e-8)

    def test_square_conjugate(self, unit: GridDomain):
        value = associate_norm(power(unit, "constant:2"), GridFunction.constant(unit, 1.0))
        assert value == pytest.approx(1 / math.sqrt(2), rel=1e-9)

    def test_linear_growth_exact(self, unit: GridDomain):
        value = associate_norm(
            power(unit, "constant:1"), GridFunction.constant(unit, 1.0), mode="exact"
        )
        assert value == pytest.approx(1.0, rel=1e-8)

    def test_modes_agree_within_factor_two(self, unit: GridDomain):
        phi = power(unit, "ramp:1.3,2.5")
        v = GridFunction.from_callable(unit, lambda x: np.exp(x))
        conjugate = associate_norm(phi, v)
        exact = associate_norm(phi, v, mode="exact")
        assert conjugate <= exact * (1 + 1e-8)
        assert exact <= 2 * conjugate * (1 + 1e-8)

    def test_unknown_mode(self, unit: GridDomain):
        with pytest.raises(InvalidInputError):
            associate_norm(
                power(unit, "constant:2"),
                GridFunction.constant(unit, 1.0),
                mode="bogus",  # type: ignore[arg-type]
            )
