from __future__ import annotations

import math

import numpy as np
import pytest
from exceptiongroup import ExceptionGroup

from vexp.corpus import (
    constant_sequence,
    laminate_sequence,
    mixed_1d,
    mollified_sequence,
    step_1d,
)
from vexp.energy import bulk_energy
from vexp.errors import (
    GridError,
    InvalidInputError,
    JumpOutsideY,
    MollifierError,
    SequenceNotConvergent,
)
from vexp.exponent import ExponentField
from vexp.grid import GridDomain, GridFunction
from vexp.integrand import EuclideanIntegrand, SmoothedIntegrand
from vexp.modular import luxemburg_norm
from vexp.phi import VariableExponentPhi
from vexp.relax import (
    RelaxationBracket,
    UpperSample,
    bracket_tolerance,
    cutoff_profile,
    default_deltas,
    descent_improve,
    g_envelope_check,
    lsc_probe,
    sequence_distance,
    smooth_competitors_equivalence,
    splice,
    thread_limit,
    upper_sequence,
)
from vexp.variation import PiecewiseBVFunction


@pytest.fixture
def f() -> EuclideanIntegrand:
    return EuclideanIntegrand()


@pytest.fixture
def line() -> GridDomain:
    return GridDomain.interval(-1.0, 1.0, 128)


def sample(delta: float, energy: float) -> UpperSample:
    return UpperSample(
        delta=delta,
        energy_bulkzone=energy,
        energy_yzone=0.0,
        omega=0.0,
        correction=1.0,
        corrected=energy,
        gradient_constant=0.0,
        correction_ok=None,
        envelope_ok=True,
        competitor=None,  # type: ignore[arg-type]
    )


class TestThreadLimit:
    def test_reads_environment(self, monkeypatch: pytest.MonkeyPatch):
        monkeypatch.setenv("VEXP_THREADS", "3")
        assert thread_limit() == 3

    def test_default(self, monkeypatch: pytest.MonkeyPatch):
        monkeypatch.delenv("VEXP_THREADS", raising=False)
        assert 1 <= thread_limit() <= 4

    @pytest.mark.parametrize("raw", ["0", "-2", "many"])
    def test_rejects_invalid(self, monkeypatch: pytest.MonkeyPatch, raw: str):
        monkeypatch.setenv("VEXP_THREADS", raw)
        with pytest.raises(InvalidInputError):
            thread_limit()


class TestDeltas:
    def test_default_deltas_are_clipped(self):
        deltas = default_deltas(GridDomain.interval(-1.0, 1.0, 256))
        assert deltas == [0.25, 0.125, 0.0625, 0.03125, 0.015625]

    @pytest.mark.parametrize("deltas", [[], [0.1, 0.2], [0.1, 0.1]])
    def test_rejects_unordered(self, f, deltas: list[float]):
        case = step_1d(cells=64)
        with pytest.raises(InvalidInputError):
            upper_sequence(case.function, f, case.exponent, deltas)


class TestRelaxationBracket:
    def test_upper_reads_the_end_of_the_sequence(self):
        bracket = RelaxationBracket(
            lower=1.0,
            samples=tuple(
                sample(d, e) for d, e in [(0.4, 0.5), (0.2, 1.3), (0.1, 1.05), (0.0, 1.1)]
            ),
            tolerance=1e-6,
            omega_diverging=False,
        )
        assert [s.delta for s in bracket.tail] == [0.1, 0.0]
        assert bracket.upper == 1.1
        assert bracket.best.delta == 0.0
        assert bracket.gap == pytest.approx(0.1)
        assert bracket.valid

    def test_invalid_when_upper_drops_below(self):
        bracket = RelaxationBracket(1.0, (sample(0.2, 0.5), sample(0.1, 0.5)), 1e-6, False)
        assert not bracket.valid

    def test_tolerance(self):
        domain = GridDomain.interval(0.0, 1.0, 100)
        assert bracket_tolerance(domain, 2.0) == pytest.approx(3e-6 + 0.03)


class TestUpperSequence:
    def test_step_is_bracketed(self, f):
        case = step_1d(cells=512)
        bracket = upper_sequence(case.function, f, case.exponent, workers=2)
        assert bracket.lower == 2.0
        assert bracket.valid
        assert bracket.upper == pytest.approx(2.0, rel=1e-9)
        assert not bracket.omega_diverging
        for s in bracket.samples:
            assert s.energy_bulkzone == 0.0
            assert s.omega == 0.0
            assert s.corrected == pytest.approx(2.0, rel=1e-9)
            assert s.envelope_ok

    def test_mixed_exponent_bracket_closes(self, f):
        case = mixed_1d(cells=512)
        bracket = upper_sequence(case.function, f, case.exponent)
        assert bracket.lower > 1.0
        assert bracket.upper == pytest.approx(bracket.lower, rel=0.05)

    def test_samples_follow_delta_order(self, f):
        case = step_1d(cells=128)
        deltas = [0.25, 0.125, 0.0625]
        bracket = upper_sequence(case.function, f, case.exponent, deltas, workers=3)
        assert [s.delta for s in bracket.samples] == [*deltas, 0.0]

    def test_affine_function_with_square(self, f, line: GridDomain):
        U = PiecewiseBVFunction(GridFunction.from_callable(line, lambda x: x))
        p = ExponentField.constant(line, 2.0)
        bracket = upper_sequence(U, f, p)
        assert bracket.lower == pytest.approx(2.0)
        assert bracket.gap == pytest.approx(0.0, abs=1e-9)
        assert all(s.energy_yzone == 0.0 for s in bracket.samples)

    def test_jump_outside_y_fails_fast(self, f, line: GridDomain):
        case = step_1d(cells=128)
        with pytest.raises(JumpOutsideY):
            upper_sequence(case.function, f, ExponentField.constant(line, 2.0))

    def test_sample_failures_are_grouped(self, f, line: GridDomain):
        U = PiecewiseBVFunction(GridFunction.from_callable(line, lambda x: x))
        p = ExponentField.constant(line, 2.0)
        with pytest.raises(ExceptionGroup) as excinfo:
            upper_sequence(U, f, p, [5.0, 4.0, 0.1])
        assert len(excinfo.value.exceptions) == 2
        assert all(isinstance(e, MollifierError) for e in excinfo.value.exceptions)

    def test_smooth_competitors_match(self, f):
        case = step_1d(cells=128)
        report = smooth_competitors_equivalence(case.function, f, case.exponent)
        assert report.matches
        assert report.ratio == pytest.approx(1.0)
        assert report.smooth_deltas[-1] == 0.0

    def test_steep_smooth_function_is_bracketed(self, f, line: GridDomain):
        U = PiecewiseBVFunction(
            GridFunction.from_callable(line, lambda x: np.sin(4 * np.pi * x))
        )
        p = ExponentField.constant(line, 2.0)
        bracket = upper_sequence(U, f, p)
        assert bracket.valid
        assert bracket.upper == pytest.approx(bracket.lower, rel=1e-12)
        assert min(s.energy for s in bracket.samples[:-1]) < bracket.lower

    def test_steep_smooth_competitors_match(self, f, line: GridDomain):
        U = PiecewiseBVFunction(
            GridFunction.from_callable(line, lambda x: np.sin(4 * np.pi * x))
        )
        p = ExponentField.constant(line, 2.0)
        report = smooth_competitors_equivalence(U, f, p)
        assert report.matches
        assert report.general_upper == pytest.approx(report.smooth_upper, rel=1e-12)
        assert report.smooth_deltas[-1] == 0.0

    def test_mollified_affine_keeps_its_energy(self, f, line: GridDomain):
        U = PiecewiseBVFunction(GridFunction.from_callable(line, lambda x: 3 * x))
        p = ExponentField.constant(line, 2.0)
        bracket = upper_sequence(U, f, p)
        for s in bracket.samples:
            assert s.energy == pytest.approx(18.0, rel=1e-9)


class TestDescentImprove:
    @pytest.fixture
    def setup(self):
        domain = GridDomain.interval(0.0, 1.0, 32)
        p = ExponentField.constant(domain, 2.0)
        target = GridFunction.constant(domain, 0.0)
        u0 = GridFunction.from_callable(domain, lambda x: 0.01 * np.sin(np.pi * x))
        return domain, p, target, u0

    def test_lowers_energy_within_radius(self, f, setup):
        _, p, target, u0 = setup
        u = descent_improve(u0, target, f, p, 0.01)
        assert bulk_energy(u, f, p) < bulk_energy(u0, f, p)
        assert luxemburg_norm(VariableExponentPhi(p), u - target) <= 0.01 * (1 + 1e-6)

    def test_constant_competitor_is_a_minimizer(self, f, setup):
        domain, p, target, _ = setup
        u0 = GridFunction.constant(domain, 0.001)
        u = descent_improve(u0, target, f, p, 0.01)
        np.testing.assert_array_equal(u.values, u0.values)

    def test_zero_radius_returns_start(self, f, setup):
        _, p, target, _ = setup
        assert descent_improve(target, target, f, p, 0.0) is target

    def test_rejects_far_start(self, f, setup):
        _, p, target, u0 = setup
        with pytest.raises(InvalidInputError):
            descent_improve(u0, target, f, p, 1e-4)
        with pytest.raises(InvalidInputError):
            descent_improve(u0, target, f, p, -1.0)

    def test_rejects_domain_mismatch(self, f, setup):
        _, p, _, u0 = setup
        other = GridFunction.constant(GridDomain.interval(0.0, 2.0, 32), 0.0)
        with pytest.raises(GridError):
            descent_improve(u0, other, f, p, 1.0)


class TestLscProbe:
    def test_laminate(self, f):
        limit, sequence = laminate_sequence(cells=256)
        p = ExponentField.constant(limit.domain, 1.5)
        report = lsc_probe(sequence, limit, f, p)
        assert report.passed
        assert report.limit_energy == pytest.approx(1.0)
        assert report.tail_minimum == pytest.approx(2**0.5, rel=1e-6)
        assert report.distances[-1] < report.distances[0]

    def test_mollified_step(self, f):
        case = step_1d(cells=128)
        report = lsc_probe(mollified_sequence(case.function), case.function, f, case.exponent)
        assert report.passed
        assert report.margin == pytest.approx(0.0, abs=1e-9)

    def test_constant_sequence(self, f):
        case = step_1d(cells=64)
        report = lsc_probe(constant_sequence(case.function), case.function, f, case.exponent)
        assert report.distances == (0.0,) * 5

    def test_l1_metric(self, f):
        limit, sequence = laminate_sequence(cells=128, frequencies=4)
        p = ExponentField.constant(limit.domain, 2.0)
        assert lsc_probe(sequence, limit, f, p, metric="l1").passed

    def test_diverging_sequence(self, f, line: GridDomain):
        p = ExponentField.constant(line, 2.0)
        limit = GridFunction.constant(line, 0.0)
        sequence = [GridFunction.constant(line, c) for c in (0.1, 0.2, 0.4)]
        with pytest.raises(SequenceNotConvergent):
            lsc_probe(sequence, limit, f, p)

    def test_needs_two_elements(self, f, line: GridDomain):
        p = ExponentField.constant(line, 2.0)
        limit = GridFunction.constant(line, 0.0)
        with pytest.raises(InvalidInputError):
            lsc_probe([limit], limit, f, p)

    def test_unknown_metric(self, line: GridDomain):
        u = GridFunction.constant(line, 1.0)
        p = ExponentField.constant(line, 2.0)
        assert sequence_distance(u, u * 0.0, p, "l1") == pytest.approx(2.0)
        with pytest.raises(InvalidInputError):
            sequence_distance(u, u, p, "sup")  # type: ignore[arg-type]


class TestCutoff:
    @pytest.fixture
    def domain(self) -> GridDomain:
        return GridDomain.interval(0.0, 1.0, 64)

    def test_profile(self, domain: GridDomain):
        profile = cutoff_profile(domain, ((0.25, 0.75),), 0.125)
        x = domain.axis_nodes(0)
        np.testing.assert_allclose(profile.values[(x >= 0.25) & (x <= 0.75)], 1.0)
        np.testing.assert_allclose(profile.values[(x <= 0.125) | (x >= 0.875)], 0.0)
        assert profile.gradient_bound == pytest.approx(1.0)

    def test_band_must_span_two_cells(self, domain: GridDomain):
        with pytest.raises(InvalidInputError):
            cutoff_profile(domain, ((0.25, 0.75),), 0.01)

    def test_splice(self, domain: GridDomain):
        profile = cutoff_profile(domain, ((0.25, 0.75),), 0.125)
        spliced = splice(
            GridFunction.constant(domain, 1.0), GridFunction.constant(domain, 0.0), profile
        )
        np.testing.assert_allclose(spliced.values[..., 0], profile.values)

    def test_splice_domain_mismatch(self, domain: GridDomain):
        profile = cutoff_profile(domain, ((0.25, 0.75),), 0.125)
        other = GridFunction.constant(GridDomain.interval(0.0, 1.0, 32), 0.0)
        with pytest.raises(GridError):
            splice(other, other, profile)


@pytest.mark.parametrize("integrand", [EuclideanIntegrand(), SmoothedIntegrand(0.2)])
def test_g_envelope_dominates(integrand, line: GridDomain):
    u = GridFunction.from_callable(line, lambda x: np.sin(4 * x))
    assert g_envelope_check(u, integrand, np.ones(line.cell_shape, dtype=bool))
    assert g_envelope_check(u * 0.0, integrand, np.ones(line.cell_shape, dtype=bool))


def test_bracket_lower_is_finite(f):
    case = step_1d(cells=64)
    assert math.isfinite(upper_sequence(case.function, f, case.exponent).lower)
