import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddsde.bounds import (BoundError, ModulusSpec, apriori_path_bound, bihari_G, bihari_M,
                          lipschitz_stability_bound, local_lip_F, report_M)
from ddsde.measures import Ensemble, TimeGrid
from ddsde.noise import InitialLawSpec, NoiseSpec, sample_paths
from oracles import log_modulus_G, log_modulus_M

LINEAR = ModulusSpec.linear(1.0)
LOG = ModulusSpec.osgood_log()


class TestModulusSpec:
    def test_sampled_valid(self):
        f = ModulusSpec.sampled([0, 1, 2], [0, 1, 1.5])
        assert f(np.array([0.5, 1.5, 5.0])).tolist() == [0.5, 1.25, 1.5]

    @pytest.mark.parametrize("nodes,values", [([0, 1, 2], [0, 1, 3]), ([0, 1, 2], [0, 1, 0.5]),
                                              ([0.1, 1], [0, 1]), ([0, 1], [0.1, 1])])
    def test_sampled_rejects(self, nodes, values):
        with pytest.raises(BoundError):
            ModulusSpec.sampled(nodes, values)

    def test_zero_at_origin(self):
        for f in (LINEAR, LOG):
            assert f(np.array([0.0]))[0] == 0.0


class TestG:
    @pytest.mark.parametrize("u", [1e-8, 1e-3, 0.5, 2.0, 100.0])
    def test_linear(self, u):
        assert bihari_G(LINEAR, u) == pytest.approx(math.log(u), abs=1e-8)

    def test_empty(self):
        assert bihari_G(LOG, 0.3, x0=0.3) == 0.0

    @pytest.mark.parametrize("u", np.geomspace(1e-8, 1, 9))
    def test_log_modulus(self, u):
        val, err = bihari_G(LOG, u, full_output=True)
        assert val == pytest.approx(log_modulus_G(u), abs=1e-6)
        assert abs(val - log_modulus_G(u)) <= max(err, 1e-12)

    def test_log_modulus_beyond_one(self):
        assert bihari_G(LOG, 3.0) == pytest.approx(2.0, abs=1e-10)

    @pytest.mark.parametrize("u,x0", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
    def test_rejects_nonpositive(self, u, x0):
        with pytest.raises(BoundError):
            bihari_G(LOG, u, x0)

    def test_sampled_matches_piecewise_log(self):
        # f(u) = u on [0, 1] then constant 1; G(u) = ln u below 1, u - 1 above
        f = ModulusSpec.sampled([0, 1, 10], [0, 1, 1])
        assert bihari_G(f, 0.01) == pytest.approx(math.log(0.01), abs=1e-6)
        assert bihari_G(f, 4.0) == pytest.approx(3.0, abs=1e-8)


class TestM:
    @pytest.mark.parametrize("r", [1e-6, 0.1, 1.0, 7.0])
    def test_linear(self, r):
        assert bihari_M(LINEAR, 2.0, r) == pytest.approx(r * math.exp(2), rel=1e-6)

    def test_zero(self):
        assert bihari_M(LOG, 2.0, 0.0) == 0.0
        assert bihari_M(LINEAR, 2.0, 0.0) == 0.0

    def test_log_example(self):
        expected = math.exp(1 - (1 - math.log(1e-8)) * math.exp(-2))
        assert expected == pytest.approx(0.1963, abs=1e-4)
        assert bihari_M(LOG, 2.0, 1e-8) == pytest.approx(expected, abs=1e-4)

    @pytest.mark.parametrize("r", [1e-10, 1e-8, 1e-4, 0.01, 0.5, 1.0, 3.0])
    @pytest.mark.parametrize("kappa", [0.5, 2.0])
    def test_log_closed_form(self, r, kappa):
        assert bihari_M(LOG, kappa, r) == pytest.approx(log_modulus_M(r, kappa), rel=1e-7)

    def test_x0_invariance(self):
        for r in (1e-8, 1e-3, 0.5):
            vals = [bihari_M(LOG, 2.0, r, x0=x0) for x0 in (0.1, 1.0, 10.0)]
            assert max(vals) - min(vals) < 1e-6

    def test_small_r_limit(self):
        assert bihari_M(LOG, 2.0, 1e-10) < 2 * bihari_M(LOG, 2.0, 1e-8)

    def test_monotone_in_r(self):
        rs = np.geomspace(1e-10, 10, 40)
        vals = [bihari_M(LOG, 2.0, r) for r in rs]
        assert np.all(np.diff(vals) > 0)
        assert np.all(np.array(vals) >= rs)

    def test_linear_consistency(self):
        for g in (0.0, 0.3, 1.0):
            f = ModulusSpec.linear(1.0)
            assert bihari_M(f, 2 * g, 0.7) == pytest.approx(
                lipschitz_stability_bound(g) * 0.7, rel=1e-6)

    def test_bracket_failure(self):
        capped = ModulusSpec.sampled([0, 1, 2], [0, 1, 1.5])
        with pytest.raises(BoundError, match="bracket"):
            bihari_M(capped, 100.0, 1.0)

    def test_report(self):
        rep = report_M(LOG, 2.0, 1e-4)
        assert rep.method == "quadrature+inversion"
        assert abs(rep.value - log_modulus_M(1e-4, 2.0)) <= max(rep.error_estimate, 1e-12)
        assert report_M(LINEAR, 2.0, 1.0).method == "closed-form"


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-9, 5.0), st.floats(1e-9, 5.0), st.floats(0.1, 3.0))
def test_M_continuous_and_monotone(r1, r2, kappa):
    lo, hi = sorted((r1, r2))
    assert bihari_M(LOG, kappa, lo) <= bihari_M(LOG, kappa, hi) * (1 + 1e-12)


class TestSimpleBounds:
    def test_stability(self):
        assert lipschitz_stability_bound(0.0) == 1.0
        assert lipschitz_stability_bound(1.0) == pytest.approx(7.389056, abs=1e-6)
        assert lipschitz_stability_bound(2.0) > lipschitz_stability_bound(1.0)

    def test_apriori(self):
        assert apriori_path_bound(0.0, 2.5, 7.0) == 2.5
        assert apriori_path_bound(1.0, 1.0, 1.0) == pytest.approx(3 * math.e, abs=1e-12)
        assert apriori_path_bound(1.0, 1.0, 1.0) == pytest.approx(8.1548, abs=1e-4)

    def test_apriori_affine(self):
        base = apriori_path_bound(0.5, 0.0, 1.0)
        one = apriori_path_bound(0.5, 1.0, 1.0) - base
        assert apriori_path_bound(0.5, 2.0, 1.0) - base == pytest.approx(2 * one, rel=1e-14)


class TestLocalLipF:
    def test_zero(self):
        z = Ensemble(TimeGrid(1.0, 4), np.zeros((3, 5, 2)))
        assert local_lip_F(z, z, 1.0, 1.5) == 2.0

    def test_constant_paths(self):
        g = TimeGrid(1.0, 4)
        a = Ensemble(g, np.full((1, 5, 1), 2.0))
        b = Ensemble(g, np.full((1, 5, 1), -3.0))
        assert local_lip_F(a, b, 0.5, 2.0) == pytest.approx(math.exp(2.0) + math.exp(4.5))

    def test_overflow(self):
        g = TimeGrid(1.0, 4)
        a = Ensemble(g, np.full((1, 5, 1), 1e3))
        assert local_lip_F(a, a, 1.0, 2.0) == math.inf

    def test_slln_stabilizes(self):
        grid = TimeGrid(1.0, 32)
        spec = NoiseSpec(InitialLawSpec.gaussian([0.0], [1.0]), "brownian", 1.0)
        vals = []
        for seed in range(5):
            a = sample_paths(spec, grid, 1024, 2 * seed)
            b = sample_paths(spec, grid, 1024, 2 * seed + 1)
            vals.append(local_lip_F(a, b, 1.0, 1.0))
        assert np.std(vals) / np.mean(vals) < 0.10
