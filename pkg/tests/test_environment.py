import numpy as np
import pytest

from ohmstat.environment import (
    ConductanceLaw,
    Environment,
    derive_seed,
    homogeneous,
    mix64,
    perturb,
    resample_tail,
    riemann_integral,
    sample,
    shift,
    uniforms,
)
from ohmstat.exceptions import DomainError, RangeError
from ohmstat.lattice import EdgeKey, box

pytestmark = pytest.mark.unit


class TestLaw:
    def test_constant_sample_is_constant(self):
        env = sample(ConductanceLaw.constant(1.0), box(2, 4), seed=3)
        assert np.all(env.conductances == 1.0)

    def test_two_point_with_p_one_is_the_upper_value(self):
        env = sample(ConductanceLaw.two_point(0.5, 1.0), box(2, 4), seed=3)
        assert np.all(env.conductances == 2.0)

    def test_uniform_mean(self):
        law = ConductanceLaw.uniform(0.9)
        values = law.draw(uniforms(17, np.arange(100_000)))
        lo, hi = law.support
        exact = (lo + hi) / 2
        se = (hi - lo) / np.sqrt(12 * len(values))
        assert abs(values.mean() - exact) < 3 * se

    def test_support(self, uniform_law):
        for seed in range(1000):
            env = sample(uniform_law, box(2, 8), seed)
            assert env.conductances.min() >= 0.5
            assert env.conductances.max() <= 2.0

    def test_invalid_laws(self):
        with pytest.raises(DomainError):
            ConductanceLaw("gamma", 0.5)
        with pytest.raises(DomainError):
            ConductanceLaw.uniform(1.5)
        with pytest.raises(DomainError):
            ConductanceLaw.uniform(0.0)
        with pytest.raises(DomainError):
            ConductanceLaw.two_point(0.5, 1.2)
        with pytest.raises(RangeError):
            ConductanceLaw.constant(3.0, lam=0.5)

    def test_degenerate(self):
        assert ConductanceLaw.constant(2.0).is_degenerate
        assert ConductanceLaw.uniform(1.0).is_degenerate
        assert ConductanceLaw.two_point(0.5, 0.0).is_degenerate
        assert not ConductanceLaw.two_point(0.5, 0.3).is_degenerate

    @pytest.mark.parametrize("k", [0, 1, 5, 17, 31])
    def test_gauss_legendre_moments_are_exact(self, k):
        law = ConductanceLaw.uniform(0.5)
        lo, hi = law.support
        exact = (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))
        assert law.expect(lambda x: x ** k) == pytest.approx(exact, rel=1e-12)

    def test_two_point_moments(self):
        law = ConductanceLaw.two_point(0.5, 0.25)
        assert law.mean() == pytest.approx(0.75 * 0.5 + 0.25 * 2.0)
        assert law.variance() == pytest.approx(0.25 * 0.75 * 1.5 ** 2)


class TestSeeding:
    def test_deterministic(self, uniform_law):
        a = sample(uniform_law, box(2, 6), seed=42)
        b = sample(uniform_law, box(2, 6), seed=42)
        assert a == b
        assert a != sample(uniform_law, box(2, 6), seed=43)

    def test_mix_is_vectorised(self):
        batch = mix64(9, np.arange(6))
        singles = np.concatenate([mix64(9, k) for k in range(6)])
        assert np.array_equal(batch, singles)

    def test_edge_values_do_not_depend_on_box(self, uniform_law):
        # edge index k always reads stream position k
        small = sample(uniform_law, box(2, 3), seed=8).conductances
        large = sample(uniform_law, box(2, 5), seed=8).conductances
        assert np.array_equal(small, large[: len(small)])

    def test_neighbouring_edges_uncorrelated(self, uniform_law):
        n = 10_000
        first = np.empty(n)
        second = np.empty(n)
        for r in range(n):
            c = sample(uniform_law, box(1, 2), derive_seed(123, r)).conductances
            first[r], second[r] = c[0], c[1]
        corr = np.corrcoef(first, second)[0, 1]
        assert abs(corr) < 4 / np.sqrt(n)

    def test_derived_seeds_differ(self):
        seeds = {derive_seed(0, r) for r in range(1000)}
        assert len(seeds) == 1000
        assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)


class TestEnvironment:
    def test_wrong_length(self, uniform_law):
        with pytest.raises(DomainError):
            Environment(box(1, 2), np.ones(4), uniform_law)

    def test_value_outside_window(self, uniform_law):
        with pytest.raises(RangeError):
            Environment(box(1, 2), np.array([1.0, 3.0, 1.0]), uniform_law)

    def test_conductances_are_read_only(self, env2d):
        with pytest.raises(ValueError):
            env2d.conductances[0] = 1.0

    def test_perturb(self, env2d):
        e = env2d.box.edge(10)
        old = env2d.conductance(e)
        changed = perturb(env2d, e, 1.7)
        diff = np.flatnonzero(changed.conductances != env2d.conductances)
        assert list(diff) == ([10] if old != 1.7 else [])
        assert changed.conductance(e) == 1.7
        assert env2d.conductance(e) == old
        assert perturb(changed, e, old) == env2d

    def test_perturb_out_of_range(self, env2d):
        with pytest.raises(RangeError):
            perturb(env2d, env2d.box.edge(0), 2.5)

    def test_perturb_constant_keeps_window(self):
        env = homogeneous(box(1, 2))
        assert perturb(env, EdgeKey((0,), 1), 1.5).law.support == env.law.support

    def test_shift_identity(self, env2d):
        assert shift(env2d, (0, 0), env2d.box) == env2d

    def test_shift_moves_values(self, uniform_law):
        env = sample(uniform_law, box(1, 4), seed=2)
        moved = shift(env, (1,), box(1, 2))
        for e in moved.box.edges():
            assert moved.conductance(e) == env.conductance(EdgeKey((e.x[0] + 1,), 1))

    def test_shift_not_covered(self, uniform_law):
        env = sample(uniform_law, box(1, 4), seed=2)
        with pytest.raises(DomainError):
            shift(env, (3,), box(1, 2))

    def test_resample_tail_keeps_prefix(self, env2d):
        fresh = resample_tail(env2d, 20, seed=99)
        assert np.array_equal(fresh.conductances[:21], env2d.conductances[:21])
        assert not np.array_equal(fresh.conductances[21:], env2d.conductances[21:])

    def test_serialisation(self, env2d):
        assert Environment.from_json(env2d.to_json()) == env2d
        again = Environment.from_bytes(env2d.to_bytes())
        assert again == env2d
        assert again.seed == env2d.seed


class TestIntegral:
    def test_orientation(self):
        value, err = riemann_integral(lambda x: x, 1.0, 0.0)
        assert value == pytest.approx(-0.5)
        assert err < 1e-10

    def test_empty_interval(self):
        assert riemann_integral(np.exp, 0.3, 0.3) == (0.0, 0.0)
