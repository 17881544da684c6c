import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddsde.bounds import ModulusSpec
from ddsde.drifts import (AntisymmetricInteraction, ArgumentCloud, ConvolutionKernel, DriftError,
                          LinearKernel, LipschitzDrift, LocalLipGrowth, MeanAttraction,
                          ModulusKernel, MonotonePower, OsgoodConvolution, PowerKernel,
                          ZeroDrift, approximate_drift, check_odd, cutoff, drift_constants,
                          eval_drift, lipschitz_approximate, mollify_kernel, pairwise_total,
                          self_interaction)
from ddsde.lattice import LatticeFunction
from ddsde.measures import EmpiricalMeasure, TimeGrid, wasserstein
from oracles import brute_force_wasserstein

GRID = TimeGrid(1.0, 16)


class TestEvalDrift:
    def test_mean_attraction(self):
        mu = EmpiricalMeasure([[0.0], [2.0]])
        assert eval_drift(MeanAttraction(1.0), 0.0, [0.0], mu).tolist() == [1.0]

    def test_monotone_origin(self):
        mu = EmpiricalMeasure([[1.0]])
        assert eval_drift(MonotonePower(1.0, 0.5), 0.0, [0.0], mu).tolist() == [0.0]
        assert eval_drift(MonotonePower(1.0, 0.0), 0.0, [0.0], mu).tolist() == [0.0]

    def test_monotone_value(self):
        mu = EmpiricalMeasure([[0.0]])
        got = eval_drift(MonotonePower(2.0, 0.5), 0.0, [4.0], mu)
        assert got[0] == pytest.approx(-2.0 * 4.0**0.5)

    def test_antisymmetric_self_atom(self):
        drift = AntisymmetricInteraction(PowerKernel(-1.0))
        x = [0.7]
        assert eval_drift(drift, 0.0, x, EmpiricalMeasure([x])).tolist() == [0.0]

    def test_nan_is_error(self):
        drift = LipschitzDrift(lambda t, x, a: np.full_like(x, np.nan), 1.0, 1.0)
        with pytest.raises(DriftError):
            eval_drift(drift, 0.0, [0.0], EmpiricalMeasure([[0.0]]))

    def test_lattice_kernel_zero_outside(self):
        kern = LatticeFunction([-1.0], 0.5, np.array([[1.0], [0.5], [0.0], [-0.5], [-1.0]]))
        drift = ConvolutionKernel(kern, divergence_bound=1.0)
        assert eval_drift(drift, 0.0, [5.0], EmpiricalMeasure([[0.0]])).tolist() == [0.0]
        assert eval_drift(drift, 0.0, [0.25], EmpiricalMeasure([[0.0]]))[0] == pytest.approx(-0.25)

    def test_atom_average(self):
        drift = OsgoodConvolution(ModulusKernel(ModulusSpec.linear(1.0), [1.0]),
                                  ModulusSpec.linear(1.0), 2.0)
        mu = EmpiricalMeasure([[0.0], [1.0], [3.0]])
        expected = 2.0 * np.mean([2.0, 1.0, 1.0])
        assert eval_drift(drift, 0.0, [2.0], mu)[0] == pytest.approx(expected)


class TestConstants:
    def test_mean_attraction(self):
        c = drift_constants(MeanAttraction(1.0), GRID)
        assert c.g_l1 == pytest.approx(1.0, abs=1e-15)
        assert c.h_l1 == pytest.approx(1.0, abs=1e-15)

    def test_zero(self):
        c = drift_constants(ZeroDrift(2), GRID)
        assert c.g_l1 == 0.0 and c.h_l1 == 0.0

    @pytest.mark.parametrize("mod", [ModulusSpec.linear(2.0), ModulusSpec.osgood_log()])
    def test_osgood_tag(self, mod):
        c = drift_constants(OsgoodConvolution(ModulusKernel(mod, [1.0]), mod), GRID)
        assert c.modulus == mod.tag

    def test_time_dependent_rate(self):
        drift = LipschitzDrift(lambda t, x, a: 0 * x, lambda t: 3 * t * t, 0.0)
        assert drift_constants(drift, GRID).g_l1 == pytest.approx(1.0, abs=1e-14)

    def test_local_lip_alpha(self):
        c = drift_constants(LocalLipGrowth(lambda t, x, y: x - y, 2.0, 1.0), GRID)
        assert c.alpha == 2.0

    def test_convolution_needs_divergence(self):
        kern = LatticeFunction([-1.0], 1.0, np.zeros((3, 1)))
        with pytest.raises(DriftError):
            ConvolutionKernel(kern)
        c = drift_constants(ConvolutionKernel(LinearKernel([[0, -2], [2, 0]]), (2, 2, 2)), GRID)
        assert c.divergence_bound == 0.0 and c.exponents == (2.0, 2.0, 2.0)


vec = st.lists(st.floats(-3, 3), min_size=3, max_size=3)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), vec, vec, vec, vec)
def test_mean_attraction_lipschitz(kappa, x, y, a, b):
    drift = MeanAttraction(kappa)
    mu, nu = EmpiricalMeasure(np.array(a)[:, None]), EmpiricalMeasure(np.array(b)[:, None])
    lhs = abs(eval_drift(drift, 0, [x[0]], mu)[0] - eval_drift(drift, 0, [y[0]], nu)[0])
    d1 = brute_force_wasserstein(mu.atoms, nu.atoms, 1)
    assert d1 == pytest.approx(wasserstein(mu, nu, 1), abs=1e-12)
    assert lhs <= abs(kappa) * (abs(x[0] - y[0]) + d1) + 1e-12
    assert lhs <= 2 * abs(kappa) * max(abs(x[0] - y[0]), d1) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 3), st.floats(0, 0.99), vec, vec)
def test_monotone_power_dissipative(lam, gamma, x, y):
    f = MonotonePower(lam, gamma, dim=3)
    x, y = np.array(x), np.array(y)
    assert np.dot(f.power_part(x) - f.power_part(y), x - y) <= 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12).flatmap(lambda n: st.lists(st.floats(-3, 3), min_size=2 * n,
                                                     max_size=2 * n)), st.floats(0.5, 3))
def test_antisymmetric_total_cancels(values, power):
    x = np.array(values).reshape(-1, 2)
    kern = PowerKernel(-1.0, power, 2)
    assert np.all(pairwise_total(kern, x) == 0.0)
    assert np.abs(self_interaction(kern, x).sum(axis=0)).max() < 1e-12


def test_check_odd():
    with pytest.raises(DriftError):
        check_odd(lambda z: z**2 + 0 * z, probes=np.ones((3, 1)))
    lat = LatticeFunction([-1.0], 0.5, np.array([1.0, 0.5, 0.0, -0.5, -1.0]))
    check_odd(lat)
    with pytest.raises(DriftError):
        check_odd(lat.with_samples([1.0, 0.5, 0.0, -0.5, -0.9]))


def test_osgood_modulus_shape():
    f = ModulusSpec.osgood_log()
    u = np.linspace(1e-6, 1, 2001)
    v = f(u)
    assert np.all(np.diff(v) >= 0)
    assert np.all(np.diff(v, 2) <= 1e-12)
    assert f(np.array([1e-300]))[0] < 1e-296
    # tangent at u = 1 is flat, so the extension is constant
    assert f(np.array([2.0]))[0] == 1.0


class TestLipschitzApproximate:
    def dist(self, z):
        return np.abs(z[:, None] - z[None, :])

    def test_constant(self):
        z = np.linspace(-1, 1, 11)
        for n in (0.5, 1, 10):
            assert np.all(lipschitz_approximate(np.ones(11), self.dist(z), n) == 1.0)

    def test_step(self):
        z = np.linspace(-1, 1, 401)
        g = (z > 0).astype(float)
        h = z[1] - z[0]
        for n in (1.0, 4.0, 20.0):
            gn = lipschitz_approximate(g, self.dist(z), n)
            assert np.max(np.abs(gn - np.minimum(1, n * np.maximum(z, 0)))) <= n * h + 1e-12

    def test_lipschitz_fixed(self):
        z = np.random.default_rng(0).uniform(-2, 2, 50)
        g = np.sin(z)
        np.testing.assert_array_equal(lipschitz_approximate(g, self.dist(z), 1.0), g)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(-200, 200), min_size=2, max_size=30, unique=True),
           st.integers(0, 2**31))
    def test_properties(self, pts, seed):
        z = np.array(pts) / 100.0
        g = np.random.default_rng(seed).uniform(-1, 1, z.size)
        d = self.dist(z)
        prev = None
        for n in (1, 2, 4, 8):
            gn = lipschitz_approximate(g, d, n)
            diff = np.abs(gn[:, None] - gn[None, :])
            assert np.all(diff <= n * d + 1e-12)
            assert np.all(gn <= g + 1e-15)
            assert np.all(np.abs(gn) <= np.abs(g).max() + 1e-15)
            if prev is not None:
                assert np.all(prev <= gn + 1e-15)
            prev = gn
        # uniform convergence on a finite cloud: exact once n exceeds the cloud's slopes
        off = d[d > 0]
        big = 2.0 * (g.max() - g.min()) / off.min() + 1 if off.size else 1.0
        np.testing.assert_array_equal(lipschitz_approximate(g, d, big), g)


def test_cutoff():
    s = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    c = cutoff(s)
    assert c[:3].tolist() == [1.0, 1.0, 1.0] and c[4:].tolist() == [0.0, 0.0]
    assert 0 < c[3] < 1
    assert np.all(np.diff(cutoff(np.linspace(0, 3, 301))) <= 0)


class TestApproximateDrift:
    def cloud(self):
        pts = np.linspace(-1, 1, 21)
        measures = [EmpiricalMeasure([[m - 0.5], [m + 0.5]]) for m in (-0.5, 0.0, 0.5)]
        return ArgumentCloud.product(pts, measures), measures

    def test_zero(self):
        cloud, _ = self.cloud()
        z = ZeroDrift()
        assert approximate_drift(z, 3.0, cloud) is z

    def test_lipschitz_unchanged_inside(self):
        cloud, measures = self.cloud()
        base = MeanAttraction(0.5)
        approx = approximate_drift(base, 4.0, cloud)
        assert approx.lipschitz_measured <= 4.0 + 1e-9
        for mu in measures:
            x = cloud.points[:21]
            np.testing.assert_allclose(approx.evaluate(0.0, x, mu.atoms),
                                       base.evaluate(0.0, x, mu.atoms), atol=1e-12)

    def test_cutoff_region(self):
        pts = np.array([[0.0], [5.0]])
        mu = EmpiricalMeasure([[0.0]])
        approx = approximate_drift(MeanAttraction(1.0), 2.0, ArgumentCloud.product(pts, [mu]))
        far = approx.evaluate(0.0, np.array([[4.0], [7.0]]), mu.atoms)
        assert np.all(far == 0.0)

    def test_radius_cap(self):
        cloud, _ = self.cloud()
        with pytest.raises(DriftError, match="cap"):
            approximate_drift(MeanAttraction(1.0), 1.0, cloud, radius_cap=0.5)

    def test_growth_preserved(self):
        cloud, measures = self.cloud()
        approx = approximate_drift(MeanAttraction(1.0), 2.0, cloud)
        np.testing.assert_array_equal(approx.constants(GRID).h_norms,
                                      MeanAttraction(1.0).constants(GRID).h_norms)
        r = cloud.distance_to_origin()
        vals = np.concatenate([approx.evaluate(0.0, cloud.points[cloud.labels == k], m.atoms)
                               for k, m in enumerate(measures)])
        assert np.all(np.abs(vals[:, 0]) <= 1.0 * (1 + r) + 1e-12)


class TestMollify:
    def kernel(self, samples, origin=-2.0, spacing=0.01):
        return ConvolutionKernel(LatticeFunction([origin], spacing, samples), divergence_bound=1.0)

    def test_constant(self):
        k = self.kernel(np.full((401, 1), 2.5))
        out = mollify_kernel(k, 0.1).kernel.samples
        np.testing.assert_allclose(out, 2.5, rtol=1e-14)

    def test_linear_interior(self):
        x = -2 + 0.01 * np.arange(401)
        out = mollify_kernel(self.kernel(x[:, None]), 0.1).kernel.samples[:, 0]
        np.testing.assert_allclose(out[10:-10], x[10:-10], atol=1e-12)

    def test_indicator_mass(self):
        x = -2 + 0.01 * np.arange(401)
        ind = (np.abs(x) <= 0.5).astype(float)
        out = mollify_kernel(self.kernel(ind[:, None]), 0.1).kernel.samples[:, 0]
        assert abs(out.sum() - ind.sum()) * 0.01 < 1e-10
        ramp = (out > 1e-12) & (out < 1 - 1e-12)
        assert np.ptp(x[ramp & (x > 0)]) <= 0.2 + 1e-9

    def test_divergence_not_increased(self):
        x = -2 + 0.01 * np.arange(401)
        b = np.clip(x, -1, 1)
        out = mollify_kernel(self.kernel(b[:, None]), 0.1).kernel.samples[:, 0]
        assert np.max(np.abs(np.gradient(out, 0.01))) <= 1.0 + 0.01

    def test_epsilon_too_small(self):
        with pytest.raises(DriftError):
            mollify_kernel(self.kernel(np.zeros((401, 1))), 0.015)
