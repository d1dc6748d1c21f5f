import math

import numpy as np
import pytest
from scipy import integrate, stats

from saegamlss import distributions as D
from saegamlss.errors import DomainError, MomentUndefined

FAMILIES = [D.Normal(), D.LogNormal(), D.Gamma(), D.Dagum()]


def random_theta(fam, rng):
    if fam.name == "Normal":
        return (rng.uniform(-5, 5), rng.uniform(0.3, 3))
    if fam.name == "LogNormal":
        return (rng.uniform(-1, 2), rng.uniform(0.2, 1.2))
    if fam.name == "Gamma":
        return (rng.uniform(0.5, 5), rng.uniform(0.3, 1.5))
    return (rng.uniform(0.5, 3), rng.uniform(1.5, 5), rng.uniform(0.3, 2))


def support(fam):
    return (-np.inf, np.inf) if fam.name == "Normal" else (0, np.inf)


# -- point values ---------------------------------------------------------


def test_normal_logpdf_at_mode():
    assert D.log_pdf(D.Normal(), 0.0, (0.0, 1.0)) == pytest.approx(-0.91893853, abs=1e-8)


def test_lognormal_logpdf_at_one():
    assert D.log_pdf(D.LogNormal(), 1.0, (0.0, 1.0)) == pytest.approx(-0.91893853, abs=1e-8)


def test_dagum_logpdf_matches_formula_and_normalises():
    y, mu, sig, nu = 2.0, 1.0, 2.0, 1.0
    # direct evaluation of the closed-form density
    f = (sig * nu / y) * (y / mu) ** (sig * nu) * (1 + (y / mu) ** sig) ** (-(nu + 1))
    assert f == pytest.approx(0.16)
    assert D.log_pdf(D.Dagum(), y, (mu, sig, nu)) == pytest.approx(math.log(0.16), rel=1e-12)
    total, _ = integrate.quad(
        lambda t: math.exp(D.log_pdf(D.Dagum(), t, (mu, sig, nu))), 0, np.inf, limit=200
    )
    assert total == pytest.approx(1.0, abs=1e-8)


def test_domain_errors():
    with pytest.raises(DomainError):
        D.log_pdf(D.LogNormal(), 0.0, (0.0, 1.0))
    with pytest.raises(DomainError):
        D.log_pdf(D.Normal(), 0.0, (0.0, -1.0))
    with pytest.raises(DomainError):
        D.log_pdf(D.Dagum(), 1.0, (1.0, 2.0))
    with pytest.raises(DomainError):
        D.quantile(D.Normal(), 1.0, (0.0, 1.0))


# -- cdf / quantile ---------------------------------------------------------


def test_quantile_examples():
    assert D.quantile(D.Normal(), 0.5, (3.0, 5.0)) == pytest.approx(3.0)
    theta = D.ParamVector(mu=1.0, sigma=3.4, nu=0.6)
    assert D.cdf(D.Dagum(), D.quantile(D.Dagum(), 0.25, theta), theta) == pytest.approx(0.25, abs=1e-12)
    assert D.cdf(D.LogNormal(), math.exp(1.7), (1.7, 0.4)) == pytest.approx(0.5)


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_quantile_cdf_round_trip(fam):
    rng = np.random.default_rng(11)
    u = np.linspace(0.01, 0.99, 99)
    for _ in range(20):
        th = random_theta(fam, rng)
        y = D.quantile(fam, u, th)
        np.testing.assert_allclose(D.cdf(fam, y, th), u, atol=1e-8, rtol=0)
        assert np.all(np.diff(D.cdf(fam, np.sort(y), th)) >= 0)


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_density_normalises(fam):
    rng = np.random.default_rng(3)
    lo, hi = support(fam)
    for _ in range(20):
        th = random_theta(fam, rng)
        # split at the median so quad sees the bulk of the mass
        med = D.quantile(fam, 0.5, th)
        f = lambda t: math.exp(fam.logpdf(t, *th)) if (t > 0 or lo < 0) else 0.0
        a, _ = integrate.quad(f, lo, med, limit=400, epsabs=1e-12, epsrel=1e-12)
        b, _ = integrate.quad(f, med, hi, limit=400, epsabs=1e-12, epsrel=1e-12)
        assert abs(a + b - 1.0) < 1e-6


# -- score and information ---------------------------------------------------


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_score_matches_finite_differences(fam):
    rng = np.random.default_rng(5)
    for _ in range(100):
        th = np.array(random_theta(fam, rng))
        y = float(fam.rvs(rng, *th))
        analytic = D.score(fam, y, th)
        for k, name in enumerate(fam.param_names):
            h = 1e-6 * abs(th[k])
            up, dn = th.copy(), th.copy()
            up[k] += h
            dn[k] -= h
            fd = (fam.logpdf(y, *up) - fam.logpdf(y, *dn)) / (2 * h)
            assert abs(analytic[name] - fd) <= 1e-5 * max(abs(fd), 1.0), (name, th, y)


def test_score_examples():
    assert D.score(D.Normal(), 2.5, (2.5, 1.3))["mu"] == 0.0
    # d/dsigma at y = exp(mu): (r^2 - s^2)/s^3 with r = 0 gives -1/sigma
    assert D.score(D.LogNormal(), math.exp(0.7), (0.7, 0.4))["sigma"] == pytest.approx(-1 / 0.4)


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_expected_information_equals_score_variance(fam):
    rng = np.random.default_rng(8)
    lo, hi = support(fam)
    for _ in range(5):
        th = random_theta(fam, rng)
        info = [float(i) for i in fam.info(*[np.float64(t) for t in th])]
        med = float(fam.ppf(0.5, *th))
        for k in range(fam.n_params):
            g = lambda t: fam.dl(t, *th)[k] ** 2 * math.exp(fam.logpdf(t, *th))
            a, _ = integrate.quad(g, lo, med, limit=400)
            b, _ = integrate.quad(g, med, hi, limit=400)
            assert a + b == pytest.approx(info[k], rel=1e-6)


# -- sampling and moments -------------------------------------------------------


def test_normal_sample_mean():
    rng = np.random.default_rng(2024)
    x = D.sample(D.Normal(), (100.0, 20.0), 100_000, rng)
    # 5 standard errors: 5 * 20 / sqrt(1e5) = 0.316
    assert abs(x.mean() - 100.0) < 0.4


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_sampling_deterministic(fam):
    th = random_theta(fam, np.random.default_rng(1))
    a = D.sample(fam, th, 50, np.random.default_rng(7))
    b = D.sample(fam, th, 50, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_dagum_sampling_is_inverse_cdf():
    th = (1.0, 3.4, 0.6)
    x = D.sample(D.Dagum(), th, 10, np.random.default_rng(9))
    u = np.random.default_rng(9).random(10)
    np.testing.assert_allclose(x, D.quantile(D.Dagum(), u, th))


@pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.name)
def test_ks_against_cdf(fam):
    th = random_theta(fam, np.random.default_rng(21))
    x = D.sample(fam, th, 10_000, np.random.default_rng(22))
    res = stats.kstest(x, lambda t: fam.cdf(t, *th))
    assert res.pvalue > 0.01


def test_means():
    assert D.mean_of(D.Normal(), (7.0, 2.0)) == 7.0
    assert D.mean_of(D.LogNormal(), (0.0, 0.0)) == 1.0
    assert D.mean_of(D.Gamma(), (3.0, 0.5)) == 3.0
    with pytest.raises(MomentUndefined):
        D.mean_of(D.Dagum(), (1.0, 0.9, 1.0))


def test_dagum_mean_against_monte_carlo():
    th = (1.0, 3.4, 0.6)
    x = D.sample(D.Dagum(), th, 1_000_000, np.random.default_rng(77))
    se = x.std() / math.sqrt(x.size)
    assert abs(D.mean_of(D.Dagum(), th) - x.mean()) < 3 * se


# -- links -------------------------------------------------------------------------


def test_links_round_trip():
    x = np.array([1e-6, 0.3, 1.0, 42.0])
    np.testing.assert_allclose(D.Log().inverse(D.Log().apply(x)), x, rtol=1e-14)
    np.testing.assert_allclose(D.Identity().inverse(D.Identity().apply(-x)), -x)
    assert np.all(np.diff(D.Log().apply(x)) > 0)
    for fam in FAMILIES:
        assert len(fam.default_links) == fam.n_params
    assert [f.n_params for f in FAMILIES] == [2, 2, 2, 3]


# -- marginal selection ----------------------------------------------------------


def test_select_distribution_prefers_lognormal():
    y = np.exp(np.random.default_rng(4).normal(7.0, 0.14, 5000))
    table = D.select_distribution(y, [D.Normal(), D.LogNormal()], penalty=2.0)
    order = list(table["family"])
    assert order.index("LogNormal") < order.index("Normal")


def test_select_distribution_single_candidate_and_bic_identity():
    y = np.random.default_rng(5).gamma(3.0, 2.0, 400)
    table = D.select_distribution(y, [D.Gamma()])
    assert len(table) == 1
    table = D.select_distribution(y, [D.Gamma(), D.LogNormal(), D.Dagum()], penalty=math.log(400))
    np.testing.assert_allclose(table["gaic"], table["bic"])


def test_select_distribution_marginal_normal_is_closed_form():
    y = np.random.default_rng(6).normal(3, 2, 300)
    table = D.select_distribution(y, [D.Normal()])
    p = table.loc[0, "params"]
    assert p["mu"] == pytest.approx(y.mean(), rel=1e-6)
    assert p["sigma"] == pytest.approx(y.std(), rel=1e-6)


def test_select_distribution_skips_positive_families_for_nonpositive_data():
    y = np.random.default_rng(6).normal(0, 1, 100)
    with pytest.warns(UserWarning):
        table = D.select_distribution(y, [D.Normal(), D.LogNormal()])
    assert list(table["family"]) == ["Normal"]
