from __future__ import annotations

import math

import numpy as np
import pytest

from vexp.errors import IntegrandError, UnsupportedOperation
from vexp.exponent import ExponentField
from vexp.grid import GridDomain
from vexp.integrand import (
    CallableIntegrand,
    EuclideanIntegrand,
    ScaledIntegrand,
    SmoothedIntegrand,
    TabulatedIntegrand,
    WeightedIntegrand,
    check_power_lipschitz,
    fit_power_lipschitz,
    g_envelope,
    integrand_from_spec,
    power_growth_check,
    quasiconvexity_test,
    recession,
    recession_estimate,
    strong_recession_of_composite,
    truncated_integrand,
    truncated_recession,
    truncation_chain,
    truncation_profile,
)


def double_well(xi):
    s2 = np.sum(np.asarray(xi) ** 2, axis=(-2, -1))
    return (s2 - 1) ** 2 / (1 + s2)


class TestIntegrands:
    def test_euclidean(self):
        f = EuclideanIntegrand()
        assert float(f([[3.0, 4.0]])) == pytest.approx(5.0)
        np.testing.assert_allclose(f.derivative([[3.0, 4.0]]), [[0.6, 0.8]])
        np.testing.assert_array_equal(f.derivative(np.zeros((1, 2))), 0.0)

    def test_rejects_vectors(self):
        with pytest.raises(IntegrandError):
            EuclideanIntegrand()(np.ones(3))

    def test_smoothed_is_small_near_zero(self):
        f = SmoothedIntegrand(0.1)
        assert float(f([[1e-9]])) == pytest.approx(5e-18, rel=1e-6)
        assert float(f([[10.0]])) == pytest.approx(math.sqrt(100.01) - 0.1)

    @pytest.mark.parametrize("eps", [0.0, -1.0, math.nan])
    def test_smoothed_rejects_bad_eps(self, eps: float):
        with pytest.raises(IntegrandError):
            SmoothedIntegrand(eps)

    def test_weighted(self):
        f = WeightedIntegrand([[2.0, 0.0], [0.0, 3.0]], (1, 2))
        assert f.m_low == pytest.approx(2.0)
        assert f.M_up == pytest.approx(3.0)
        assert float(f([[1.0, 1.0]])) == pytest.approx(math.sqrt(13))
        numeric = super(WeightedIntegrand, f).derivative([[1.0, 1.0]])
        np.testing.assert_allclose(f.derivative([[1.0, 1.0]]), numeric, rtol=1e-6)

    def test_weighted_rejects_singular_matrix(self):
        with pytest.raises(IntegrandError):
            WeightedIntegrand([[1.0, 1.0], [1.0, 1.0]], (1, 2))
        with pytest.raises(IntegrandError):
            WeightedIntegrand([[1.0]], (1, 2))

    def test_tabulated_continues_last_slope(self):
        f = TabulatedIntegrand([1.0, 2.0], [1.0, 3.0], 1.0, 2.0)
        np.testing.assert_allclose(f(np.array([[[0.5]], [[1.5]], [[4.0]]])), [0.5, 2.0, 7.0])
        assert float(f.derivative([[1.5]])) == pytest.approx(2.0, rel=1e-6)

    def test_scaling(self):
        f = 2 * EuclideanIntegrand()
        assert isinstance(f, ScaledIntegrand)
        assert f.m_low == 2.0
        assert float(f([[1.5]])) == pytest.approx(3.0)
        with pytest.raises(IntegrandError):
            EuclideanIntegrand() * 0.0

    def test_verify_rejects_nonzero_origin(self):
        with pytest.raises(IntegrandError, match="f\\(0\\)"):
            CallableIntegrand(double_well, 1.0, 1.0, verify=True)

    def test_verify_rejects_weak_growth(self):
        with pytest.raises(IntegrandError, match="lower growth"):
            CallableIntegrand(
                lambda xi: 0.5 * np.sqrt(np.sum(xi**2, axis=(-2, -1))),
                1.0,
                1.0,
                verify=True,
            )

    @pytest.mark.parametrize("m_low, M_up", [(0.0, 1.0), (1.0, 0.5), (1.0, math.inf)])
    def test_rejects_growth_constants(self, m_low: float, M_up: float):
        with pytest.raises(IntegrandError):
            CallableIntegrand(double_well, m_low, M_up)


class TestIntegrandFromSpec:
    def test_known_specs(self):
        assert isinstance(integrand_from_spec("euclidean", (1, 1)), EuclideanIntegrand)
        smoothed = integrand_from_spec("smoothed:0.5", (1, 1))
        assert isinstance(smoothed, SmoothedIntegrand)
        assert smoothed.eps == 0.5
        weighted = integrand_from_spec("weighted:2,0,0,3", (1, 2))
        assert isinstance(weighted, WeightedIntegrand)

    @pytest.mark.parametrize("spec", ["bogus", "smoothed:a", "smoothed", "weighted:1,2"])
    def test_rejects_bad_specs(self, spec: str):
        with pytest.raises(IntegrandError):
            integrand_from_spec(spec, (1, 2))


class TestRecession:
    def test_euclidean_is_positively_homogeneous(self):
        assert recession(EuclideanIntegrand(), [[3.0, 4.0]]) == pytest.approx(5.0)

    def test_smoothed(self):
        estimate = recession_estimate(SmoothedIntegrand(1.0), [[3.0]])
        assert estimate.converged
        assert estimate.exponents == (50, 60)
        assert float(estimate.value) == pytest.approx(3.0, rel=1e-9)

    def test_batches(self):
        xi = np.array([[[1.0]], [[2.0]], [[0.0]]])
        np.testing.assert_allclose(recession(SmoothedIntegrand(0.5), xi), [1.0, 2.0, 0.0])

    def test_g_envelope(self):
        assert g_envelope(EuclideanIntegrand(), [[2.0]]) == pytest.approx(2.0)
        assert g_envelope(SmoothedIntegrand(1.0), [[3.0]]) == pytest.approx(3.0, rel=1e-9)

    def test_strong_recession_of_composite_is_unsupported(self):
        p = ExponentField.constant(GridDomain.interval(0.0, 1.0, 8), 2.0)
        with pytest.raises(UnsupportedOperation):
            strong_recession_of_composite(EuclideanIntegrand(), p, [[1.0]])


class TestQuasiconvexity:
    def test_convex_integrand_passes(self):
        report = quasiconvexity_test(EuclideanIntegrand(), [[1.0]], restarts=3)
        assert report.passed
        assert report.witness is None
        assert report.minimum >= report.reference - 1e-6

    def test_double_well_fails_at_the_barrier(self):
        f = CallableIntegrand(double_well, 1.0, 1.0)
        report = quasiconvexity_test(f, [[0.0]], restarts=4)
        assert not report.passed
        assert report.reference == 1.0
        assert report.minimum < 0.5
        assert report.witness is not None
        np.testing.assert_array_equal(report.witness.values[[0, -1]], 0.0)

    def test_single_matrix_only(self):
        with pytest.raises(IntegrandError):
            quasiconvexity_test(EuclideanIntegrand(), np.ones((2, 1, 1)))


class TestTruncation:
    def test_profile(self):
        np.testing.assert_allclose(truncation_profile([2.0, 5.0], 2.0, 3.0), [4.0, 21.0])

    def test_profile_rejects_low_level(self):
        with pytest.raises(IntegrandError):
            truncation_profile(1.0, 2.0, 0.5)

    def test_truncated_integrand_on_cells(self):
        domain = GridDomain.interval(0.0, 1.0, 8)
        psi = truncated_integrand(EuclideanIntegrand(), ExponentField.constant(domain, 2.0), 3.0)
        values = psi(np.full((8, 1, 1), 5.0))
        np.testing.assert_allclose(values, 21.0)

    def test_truncated_recession(self):
        assert truncated_recession(EuclideanIntegrand(), 2.0, 4.0, [[1.0]]) == pytest.approx(8.0)

    def test_truncated_recession_reads_field(self):
        domain = GridDomain.interval(0.0, 1.0, 8)
        p = ExponentField.from_spec("ramp:1,2", domain)
        assert truncated_recession(EuclideanIntegrand(), p, 4.0, [[1.0]], (0,)) == 1.0
        with pytest.raises(IntegrandError):
            truncated_recession(EuclideanIntegrand(), p, 4.0, [[1.0]])

    def test_chain_is_monotone(self):
        chain = truncation_chain(EuclideanIntegrand(), 1.5, 2.0, 2.0, [[3.0]])
        assert np.all(np.diff(chain) >= 0)
        assert chain[2] == pytest.approx(2**1.5 + 1.5 * math.sqrt(2))

    def test_monotone_in_level(self):
        rng = np.random.default_rng(3)
        domain = GridDomain.interval(-1.0, 1.0, 16)
        p = ExponentField.from_spec("ramp:1,3", domain)
        xi = rng.uniform(0.0, 10.0, (16, 64, 1, 1)) * rng.standard_normal((16, 64, 1, 2))
        levels = np.sort(rng.uniform(1.0, 10.0, 20))
        values = np.stack([truncated_integrand(EuclideanIntegrand(), p, j)(xi) for j in levels])
        assert values.shape == (20, 16, 64)
        assert np.all(np.diff(values, axis=0) >= -1e-9 * values[1:])

    def test_chain_at_sampled_points(self):
        rng = np.random.default_rng(4)
        f = EuclideanIntegrand()
        for _ in range(1000):
            p = float(rng.uniform(1.0, 3.0))
            p_plus = p + float(rng.uniform(0.0, 1.0))
            j = float(rng.uniform(1.0, 5.0))
            xi = rng.uniform(0.0, 10.0) * rng.standard_normal((1, 2))
            chain = truncation_chain(f, p, p_plus, j, xi)
            assert np.all(np.diff(chain) >= -1e-9 * np.maximum(1.0, np.abs(chain[1:])))

    def test_recession_at_sampled_points(self):
        rng = np.random.default_rng(5)
        f = EuclideanIntegrand()
        domain = GridDomain.interval(-1.0, 1.0, 16)
        p = ExponentField.from_spec("ramp:1,3", domain)
        t = 1e15
        for _ in range(1000):
            node = (int(rng.integers(domain.node_count)),)
            j = float(rng.uniform(1.0, 10.0))
            direction = rng.standard_normal((1, 2))
            xi = rng.uniform(0.1, 10.0) * direction / np.linalg.norm(direction)
            slope = float(truncation_profile(f(t * xi), p.values[node], j)) / t
            assert truncated_recession(f, p, j, xi, node) == pytest.approx(slope, rel=1e-9)


class TestPowerLipschitz:
    def test_fitted_constant_holds_on_fresh_samples(self):
        f = EuclideanIntegrand()
        C = fit_power_lipschitz(f, 2.0, samples=500)
        assert C > 0
        ok, worst = check_power_lipschitz(f, 1.5, C, samples=500)
        assert ok
        assert worst <= C

    def test_power_growth(self):
        assert power_growth_check(EuclideanIntegrand(), [1.0, 2.0], [[3.0]])
        f = CallableIntegrand(lambda xi: 10 * np.abs(xi[..., 0, 0]), 1.0, 1.0)
        assert not power_growth_check(f, [2.0], [[3.0]])
