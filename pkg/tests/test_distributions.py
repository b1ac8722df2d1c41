"""Tests for the mutant-count law family.

Expected values are produced by independent oracles where they are not
closed-form: a brute-force compound-Poisson convolution for the mass
function, direct long-series summation and scipy for the hypergeometric
evaluation, and sampler-vs-formula Monte Carlo cross checks.
"""

import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from cellpop.distributions import (
    BdTimeLaw,
    ConvergenceError,
    GenLdParams,
    LdParams,
    bd_time_law_sample,
    gen_ld_pgf,
    hyp2f1_special,
    ld_pgf,
    ld_pmf,
    ld_tail_asymptote,
    sample_gen_ld,
    sample_ld,
    sample_y,
)
from cellpop.analytics import ks_distance, ks_distance_two_sample


def rng_for(tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(20240613, spawn_key=(tag,)))


def clone_size_pmf(m_max: int) -> np.ndarray:
    q = np.zeros(m_max + 1)
    j = np.arange(1, m_max + 1)
    q[1:] = 1.0 / (j * (j + 1.0))
    return q


def compound_poisson_pmf_bruteforce(c: float, m_max: int, k_max: int = 80) -> np.ndarray:
    """Sum e^-c c^K / K! * (clone size law)^*K directly, truncated at k_max clones."""
    q = clone_size_pmf(m_max)
    conv = np.zeros(m_max + 1)
    conv[0] = 1.0  # zero clones contribute zero cells
    out = np.zeros(m_max + 1)
    log_fact = 0.0
    for k in range(k_max + 1):
        if k > 0:
            log_fact += math.log(k)
            conv = np.convolve(conv, q)[: m_max + 1]
        weight = math.exp(-c + k * math.log(c) - log_fact) if c > 0 else (1.0 if k == 0 else 0.0)
        out += weight * conv
    return out


class TestParamValidation:
    def test_ld_params_reject_negative(self):
        with pytest.raises(ValueError):
            LdParams(-0.5)

    def test_ld_params_reject_nan(self):
        with pytest.raises(ValueError):
            LdParams(float("nan"))

    def test_gen_ld_params_require_positive_lam(self):
        with pytest.raises(ValueError):
            GenLdParams(0.0, 1.0, 0.0, 1.0)

    def test_bd_time_law_rejects_negative_time(self):
        with pytest.raises(ValueError):
            BdTimeLaw(1.0, 0.0, -1.0)


class TestSampleY:
    def test_tail_inversion_matches_its_mass(self):
        # floor(1/U) has P[Y >= j] = 1/j exactly; check the first masses
        # on a large sample against 1/(j(j+1)).
        rng = rng_for(0)
        draws = sample_y(rng, 10**6)
        n = draws.size
        for j in (1, 2, 3):
            target = 1.0 / (j * (j + 1.0))
            freq = np.mean(draws == j)
            se = math.sqrt(target * (1 - target) / n)
            assert abs(freq - target) <= 3 * se

    def test_minimum_is_one(self):
        rng = rng_for(1)
        assert sample_y(rng, 10**4).min() == 1

    def test_scalar_draw(self):
        assert isinstance(sample_y(rng_for(2)), int)


class TestSampleLd:
    def test_zero_mean_clone_count_gives_zero(self):
        rng = rng_for(3)
        assert all(sample_ld(LdParams(0.0), rng) == 0 for _ in range(50))
        assert not sample_ld(LdParams(0.0), rng, 100).any()

    def test_zero_class_probability(self):
        # B = 0 exactly when no clone is seeded, so P[B=0] = e^-1 at c=1.
        rng = rng_for(4)
        draws = sample_ld(LdParams(1.0), rng, 10**6)
        target = math.exp(-1.0)
        se = math.sqrt(target * (1 - target) / draws.size)
        assert abs(np.mean(draws == 0) - target) <= 3 * se

    def test_sampler_matches_recursion_pmf(self):
        rng = rng_for(5)
        draws = sample_ld(LdParams(2.0), rng, 10**6)
        pmf = ld_pmf(LdParams(2.0), 30)
        for m in range(10):
            se = math.sqrt(pmf[m] * (1 - pmf[m]) / draws.size)
            assert abs(np.mean(draws == m) - pmf[m]) <= 3 * se


class TestLdPgf:
    def test_closed_form_point(self):
        assert ld_pgf(LdParams(2.0), 0.5) == pytest.approx(0.25, abs=1e-14)

    def test_normalisation_at_one(self):
        for c in (0.0, 0.7, 3.0):
            assert ld_pgf(LdParams(c), 1.0) == 1.0

    def test_zero_argument_is_zero_class_probability(self):
        assert ld_pgf(LdParams(1.0), 0.0) == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_domain(self):
        with pytest.raises(ValueError):
            ld_pgf(LdParams(1.0), 1.5)
        with pytest.raises(ValueError):
            ld_pgf(LdParams(1.0), -0.1)

    def test_empirical_pgf_matches(self):
        p = LdParams(2.0)
        rng = rng_for(6)
        draws = sample_ld(p, rng, 10**6)
        for z in np.arange(0.1, 1.0, 0.1):
            zb = z**draws
            target = ld_pgf(p, z)
            se = zb.std(ddof=1) / math.sqrt(draws.size)
            assert abs(zb.mean() - target) <= 3 * se


class TestLdPmf:
    def test_zero_class(self):
        assert ld_pmf(LdParams(1.0), 0)[0] == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_single_mutant_closed_form(self):
        # the only path to B=1 is one clone of size 1: e^-c * c * 1/2
        assert ld_pmf(LdParams(1.0), 1)[1] == pytest.approx(math.exp(-1.0) / 2, rel=1e-13)

    def test_matches_bruteforce_convolution(self):
        for c in (0.5, 1.0, 2.0):
            got = ld_pmf(LdParams(c), 40)
            want = compound_poisson_pmf_bruteforce(c, 40)
            np.testing.assert_allclose(got, want, atol=1e-13)

    def test_is_probability_vector(self):
        for c in (0.5, 1.0, 2.0):
            pmf = ld_pmf(LdParams(c), 10**4)
            assert (pmf >= 0).all()
            total = pmf.sum()
            assert total <= 1.0 + 1e-12
            # deficit is the true tail, roughly c/m_max
            assert 1.0 - total < 1e-2 * max(c, 1e-9)
            partial = np.cumsum(pmf)
            assert (np.diff(partial) >= -1e-15).all()

    def test_truncated_series_matches_pgf(self):
        c = 2.0
        pmf = ld_pmf(LdParams(c), 10**4)
        tail = 1.0 - pmf.sum()
        m = np.arange(pmf.size)
        for z in (0.2, 0.5, 0.9):
            series = float(np.dot(pmf, z**m))
            assert abs(series - ld_pgf(LdParams(c), z)) <= tail + 1e-12

    def test_degenerate_c_zero(self):
        pmf = ld_pmf(LdParams(0.0), 5)
        assert pmf[0] == 1.0
        assert not pmf[1:].any()


class TestLdTail:
    def test_formula(self):
        assert ld_tail_asymptote(LdParams(2.0), 200) == pytest.approx(0.01)
        assert ld_tail_asymptote(LdParams(0.0), 17) == 0.0

    def test_rejects_nonpositive_m(self):
        with pytest.raises(ValueError):
            ld_tail_asymptote(LdParams(1.0), 0)

    @pytest.mark.parametrize("c,m,tol", [(2.0, 200, 0.15), (1.0, 100, 0.10), (2.0, 200, 0.10 * 2)])
    def test_exact_tail_approaches_asymptote(self, c, m, tol):
        pmf = ld_pmf(LdParams(c), m - 1)
        tail = 1.0 - pmf.sum()  # P[B >= m]
        assert abs(m * tail - c) <= tol


class TestBdTimeLaw:
    def test_time_zero_is_one(self):
        rng = rng_for(7)
        law = BdTimeLaw(1.0, 0.5, 0.0)
        assert all(bd_time_law_sample(law, rng) == 1 for _ in range(20))

    def test_frozen_process(self):
        rng = rng_for(8)
        assert bd_time_law_sample(BdTimeLaw(0.0, 0.0, 5.0), rng) == 1

    def test_pure_birth_is_geometric(self):
        # no deaths: Y(t) geometric on {1,2,...} with success e^-t
        t = 1.3
        rng = rng_for(9)
        draws = bd_time_law_sample(BdTimeLaw(1.0, 0.0, t), rng, 10**5)
        assert draws.min() >= 1
        s = math.exp(-t)
        for k in (1, 2, 5):
            target = s * (1 - s) ** (k - 1)
            se = math.sqrt(target * (1 - target) / draws.size)
            assert abs(np.mean(draws == k) - target) <= 3 * se

    def test_critical_extinction_probability(self):
        rng = rng_for(10)
        draws = bd_time_law_sample(BdTimeLaw(1.0, 1.0, 1.0), rng, 10**6)
        se = math.sqrt(0.25 / draws.size)
        assert abs(np.mean(draws == 0) - 0.5) <= 3 * se

    @pytest.mark.parametrize("birth,death,t", [(1.0, 0.0, 1.0), (1.0, 0.5, 1.5), (0.5, 1.0, 1.0), (1.0, 1.0, 0.7)])
    def test_martingale_mean(self, birth, death, t):
        rng = rng_for(11)
        draws = bd_time_law_sample(BdTimeLaw(birth, death, t), rng, 10**6)
        target = math.exp((birth - death) * t)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - target) <= 3 * se

    def test_pure_death(self):
        rng = rng_for(12)
        t = 0.9
        draws = bd_time_law_sample(BdTimeLaw(0.0, 1.0, t), rng, 10**5)
        assert set(np.unique(draws)) <= {0, 1}
        target = 1.0 - math.exp(-t)
        se = math.sqrt(target * (1 - target) / draws.size)
        assert abs(np.mean(draws == 0) - target) <= 3 * se


class TestSampleGenLd:
    def test_zero_clone_mean(self):
        rng = rng_for(13)
        assert not sample_gen_ld(GenLdParams(1.0, 1.0, 0.5, 0.0), rng, 200).any()

    def test_degenerates_to_classic_law(self):
        rng = rng_for(14)
        c = 2.0
        gen = sample_gen_ld(GenLdParams(1.0, 1.0, 0.0, c), rng, 10**5)
        classic = sample_ld(LdParams(c), rng, 10**5)
        assert ks_distance_two_sample(gen, classic) <= 0.01

    def test_rate_scale_invariance(self):
        # (lam, lam*a, lam*b, c) has one law for every lam
        rng = rng_for(15)
        a, b, c = 1.0, 0.4, 2.0
        draws = [sample_gen_ld(GenLdParams(lam, lam * a, lam * b, c), rng, 10**5) for lam in (0.5, 1.0, 2.0)]
        for i in range(len(draws)):
            for k in range(i + 1, len(draws)):
                assert ks_distance_two_sample(draws[i], draws[k]) <= 0.01

    def test_scalar_draw(self):
        assert isinstance(sample_gen_ld(GenLdParams(1.0, 1.0, 0.5, 2.0), rng_for(16)), int)

    def test_empirical_pgf_matches_closed_form(self):
        p = GenLdParams(1.0, 1.0, 0.3, 2.0)
        rng = rng_for(17)
        draws = sample_gen_ld(p, rng, 10**6)
        for z in (0.2, 0.5, 0.8):
            zb = np.power(float(z), draws)
            target = gen_ld_pgf(p, z)
            se = zb.std(ddof=1) / math.sqrt(draws.size)
            assert abs(zb.mean() - target) <= 3 * se


class TestGenLdPgf:
    def test_requires_supercritical_clones(self):
        with pytest.raises(ValueError):
            gen_ld_pgf(GenLdParams(1.0, 0.5, 0.5, 1.0), 0.3)
        with pytest.raises(ValueError):
            gen_ld_pgf(GenLdParams(1.0, 1.0, 0.0, 1.0), 1.0)

    def test_trivial_at_c_zero(self):
        for z in (0.0, 0.3, 0.9):
            assert gen_ld_pgf(GenLdParams(2.0, 1.0, 0.2, 0.0), z) == 1.0

    def test_degeneracy_identity(self):
        # (lam, lam, 0, c) is the classic law; the two closed forms coincide
        for c in (0.5, 2.0):
            for lam in (0.5, 1.0, 3.0):
                p = GenLdParams(lam, lam, 0.0, c)
                for z in np.arange(0.1, 1.0, 0.1):
                    got = gen_ld_pgf(p, float(z))
                    want = ld_pgf(LdParams(c), float(z))
                    assert abs(got - want) <= 1e-8 * want


class TestHyp2f1Special:
    def test_at_zero(self):
        assert hyp2f1_special(2.3, 0.0) == 1.0

    def test_log_identity(self):
        # F[1,1;2;x] = -log(1-x)/x
        assert hyp2f1_special(1.0, 0.5) == pytest.approx(2 * math.log(2), rel=1e-12)

    def test_against_long_series(self):
        p, x = 2.0, 0.25
        brute = p * sum(x**k / (p + k) for k in range(10**4))
        assert hyp2f1_special(p, x) == pytest.approx(brute, abs=1e-10)

    @pytest.mark.parametrize("p", [0.3, 1.0, 2.5, 7.0])
    @pytest.mark.parametrize("x", [-30.0, -5.0, -1.0, -0.4, 0.0, 0.4, 0.9])
    def test_against_scipy(self, p, x):
        want = float(scipy.special.hyp2f1(1.0, p, 1.0 + p, x))
        assert hyp2f1_special(p, x) == pytest.approx(want, rel=1e-10)

    def test_domain(self):
        with pytest.raises(ValueError):
            hyp2f1_special(1.0, 1.0)
        with pytest.raises(ValueError):
            hyp2f1_special(-1.0, 0.5)

    def test_convergence_failure_is_reported(self):
        with pytest.raises(ConvergenceError):
            hyp2f1_special(1e-8, 1.0 - 1e-13)


class TestKsAgainstScipy:
    def test_two_sample_matches_scipy(self):
        rng = rng_for(18)
        x = rng.poisson(3.0, 2000)
        y = rng.poisson(3.3, 1500)
        want = scipy.stats.ks_2samp(x, y, method="asymp").statistic
        assert ks_distance_two_sample(x, y) == pytest.approx(want, abs=1e-12)

    def test_sample_vs_pmf_sanity(self):
        rng = rng_for(19)
        p = LdParams(2.0)
        draws = sample_ld(p, rng, 10**5)
        pmf = ld_pmf(p, 10**4)
        assert ks_distance(draws, pmf) <= 0.01
