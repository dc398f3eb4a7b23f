import numpy as np
import pytest

from ohmstat.environment import ConductanceLaw, homogeneous, perturb, sample
from ohmstat.exceptions import DomainError, PreconditionError
from ohmstat.green import green_matrix
from ohmstat.lattice import EdgeKey, box
from ohmstat.martingale import (
    estimate_sigma_sq,
    h_closed_form,
    h_double_quadrature,
    h_edge,
    increment_mean_over_edge,
    increment_representation_check,
    increments_exact,
    rank_one_check,
)


@pytest.mark.unit
class TestRankOne:
    def test_unchanged_value(self, env2d):
        e = env2d.box.edge(30)
        report = rank_one_check(env2d, e, env2d.conductance(e))
        assert report.factor == 1.0
        assert report.ok(1e-10)

    def test_path(self, path2):
        e = EdgeKey((0,), 1)
        report = rank_one_check(path2, e, 2.0)
        assert report.g_old == pytest.approx(2 / 3)
        assert report.factor == pytest.approx(3 / 5)
        assert report.ok(1e-10)

    def test_random_pairs(self, env2d, uniform_law):
        rng = np.random.default_rng(8)
        for k in rng.choice(env2d.box.n_edges, size=20, replace=False):
            e = env2d.box.edge(int(k))
            new = float(uniform_law.draw(rng.random()))
            report = rank_one_check(env2d, e, new)
            assert report.factor > 0
            assert report.ok(1e-8), report

    def test_boundary_edge(self, env2d):
        e = EdgeKey((-1, 3), 1)
        assert rank_one_check(env2d, e, 0.7).ok(1e-8)


@pytest.mark.unit
class TestH:
    def test_vanishes_for_a_constant_law(self):
        env = homogeneous(box(2, 4))
        value = h_edge(env, EdgeKey((1, 1), 1))
        assert value.value == 0.0
        assert value.quadrature == 0.0

    def test_two_point_by_hand(self, two_point_law):
        env = sample(two_point_law, box(1, 2), seed=4)
        e = EdgeKey((0,), 1)
        G = green_matrix(env)
        g = G[1, 1] - 2 * G[0, 1] + G[0, 0]
        w = env.conductance(e)
        expected = sum(0.5 * (w - a) / (1 + (a - w) * g) for a in (0.5, 2.0))
        result = h_edge(env, e)
        assert result.g == pytest.approx(g, rel=1e-10)
        assert result.value == pytest.approx(expected, rel=1e-10)
        assert abs(result.quadrature - result.closed_form) <= 1e-10

    def test_routes_agree_for_the_uniform_law(self, env2d):
        for k in (0, 40, 100):
            value = h_edge(env2d, env2d.box.edge(k))
            assert abs(value.quadrature - value.closed_form) <= 1e-8

    def test_routes_agree_over_the_window(self, uniform_law):
        # an edge of conductance w always has g <= 1 / w
        for w in np.linspace(0.5, 2.0, 7):
            for fraction in (0.1, 0.5, 0.95):
                g = fraction / w
                quad, _ = h_double_quadrature(uniform_law, w, g)
                assert quad == pytest.approx(h_closed_form(uniform_law, w, g), abs=1e-10)

    @pytest.mark.parametrize("w, g", [(1.75, 1.0), (2.0, 1.0), (2.0, 2 / 3)])
    def test_pole_inside_the_support(self, uniform_law, w, g):
        with pytest.raises(PreconditionError):
            h_closed_form(uniform_law, w, g)
        with pytest.raises(PreconditionError):
            h_double_quadrature(uniform_law, w, g)

    def test_constant_law_has_no_pole(self):
        law = ConductanceLaw.constant(1.0)
        assert h_closed_form(law, 1.0, 5.0) == 0.0

    def test_prefactor_stays_positive(self, env2d):
        lo, hi = env2d.law.support
        for k in range(0, env2d.box.n_edges, 13):
            e = env2d.box.edge(k)
            g = h_edge(env2d, e, verify=False).g
            w = env2d.conductance(e)
            assert np.all(1 + (np.linspace(lo, hi, 50) - w) * g > 0)

    @pytest.mark.parametrize("law", [ConductanceLaw.two_point(0.5, 0.3),
                                     ConductanceLaw.uniform(0.5)])
    def test_mean_over_the_edge_vanishes(self, law):
        env = sample(law, box(2, 4), seed=2)
        e = EdgeKey((1, 2), 2)
        assert increment_mean_over_edge(env, e, (1.0, 0.5)) == pytest.approx(0.0, abs=1e-8)


@pytest.mark.unit
class TestExhaustive:
    def test_path(self, two_point_law):
        table = increments_exact(box(1, 2), two_point_law, (1.0,), tol=1e-10)
        assert table.n_edges == 3
        assert table.telescoping_residual <= 1e-10
        assert table.martingale_residual <= 1e-10
        assert table.integral_residual <= 1e-8
        assert table.integral_checked == [1, 2, 3]

    def test_paths_telescope(self, two_point_law):
        table = increments_exact(box(1, 2), two_point_law, (1.0,), integral_ks=[])
        for bits in [(0, 0, 0), (1, 0, 1), (1, 1, 1)]:
            assert table.path(bits).sum() == pytest.approx(table.ceff[bits] - table.mean, abs=1e-10)

    def test_variance_splits_into_increments(self, two_point_law):
        table = increments_exact(box(1, 2), two_point_law, (1.0,), integral_ks=[])
        assert table.second_moments().sum() == pytest.approx(table.variance(), rel=1e-10)
        brown = table.brown_diagnostics()
        assert brown["identity_residual"] <= 1e-10
        assert brown["variance_per_volume"] == pytest.approx(table.variance() / 2)

    def test_degenerate_probability(self):
        law = ConductanceLaw.two_point(0.5, 1.0)
        table = increments_exact(box(1, 2), law, (1.0,), integral_ks=[])
        assert np.all(table.second_moments() == 0.0)
        assert np.allclose(table.path((1, 1, 1)), 0.0)
        assert table.variance() == 0.0

    def test_representation_on_a_path(self, two_point_law):
        report = increment_representation_check(box(1, 2), two_point_law, (1.0,))
        assert len(report.residuals) == 3
        assert report.ok

    def test_limits(self, two_point_law, uniform_law):
        with pytest.raises(DomainError):
            increments_exact(box(2, 3), two_point_law, (1.0, 0.0))
        with pytest.raises(DomainError):
            increments_exact(box(1, 2), uniform_law, (1.0,))

    def test_summary(self, two_point_law):
        summary = increments_exact(box(1, 2), two_point_law, (2.0,), integral_ks=[1]).summary()
        assert summary["n_edges"] == 3
        assert summary["t"] == [2.0]
        assert summary["integral_checked"] == [1]

    @pytest.mark.slow
    def test_square_of_side_two(self, two_point_law):
        table = increments_exact(box(2, 2), two_point_law, (1.0, 0.0), tol=1e-9)
        assert table.n_edges == 12
        assert table.martingale_residual <= 1e-9
        assert table.integral_residual <= 1e-8
        report = increment_representation_check(box(2, 2), two_point_law, (1.0, 0.0),
                                                table=table)
        assert report.max_residual <= 1e-9


@pytest.mark.unit
class TestSigma:
    def test_constant_law(self):
        est = estimate_sigma_sq(ConductanceLaw.constant(1.0), 2, (1.0, 0.0), 4, 100, 100)
        assert est.sigma_sq == 0.0
        assert np.all(est.contributions == 0.0)

    def test_zero_direction(self, two_point_law):
        est = estimate_sigma_sq(two_point_law, 1, (0.0,), 2, 10, 10, min_replicas=10)
        assert est.sigma_sq == 0.0

    def test_quartic_scaling(self, two_point_law):
        est = estimate_sigma_sq(two_point_law, 2, (1.0, 0.5), 2, 10, 10, min_replicas=10)
        doubled = est.evaluate((2.0, 1.0))
        assert doubled.sigma_sq == pytest.approx(16 * est.sigma_sq, rel=1e-12)
        assert est.contributions.shape == (2,)

    def test_reproducible_across_threads(self, two_point_law):
        a = estimate_sigma_sq(two_point_law, 1, (1.0,), 4, 10, 10, seed=3, min_replicas=10)
        b = estimate_sigma_sq(two_point_law, 1, (1.0,), 4, 10, 10, seed=3, min_replicas=10,
                              threads=3)
        assert a.sigma_sq == b.sigma_sq
        assert a.to_dict()["M_inner"] == 10

    def test_arguments(self, two_point_law):
        with pytest.raises(DomainError):
            estimate_sigma_sq(two_point_law, 2, (1.0, 0.0), 3, 100, 100)
        with pytest.raises(DomainError):
            estimate_sigma_sq(two_point_law, 2, (1.0, 0.0), 4, 50, 100)

    @pytest.mark.slow
    def test_positive_for_a_random_law(self, two_point_law):
        est = estimate_sigma_sq(two_point_law, 2, (1.0, 0.0), 4, 100, 100, seed=1)
        assert est.sigma_sq > 2 * est.sigma_sq_se
