import math
import warnings

import numpy as np
import pandas as pd
import pytest
from scipy import optimize

from conftest import CTRL, NORMAL_RE, lmm_frame
from saegamlss import (
    Dagum, Dataset, FitControl, Gamma, LogNormal, ModelSpec, Normal, ParamSpec,
    estimate_re_variance, fit_gamlss, fit_quadrature_em, gaic, gauss_hermite_grid, global_deviance,
    lr_test, quantile_residuals,
)
from saegamlss.errors import ConvergenceError, DomainError, NestingError
from saegamlss.simulate import ScenarioConfig, draw_sample, generate_population


def dense_lmm_ml(frame):
    """Profiled ML of y = X b + Z u + e by dense GLS, searched over rho = s2u / s2e."""
    y = frame["y"].to_numpy()
    X = np.column_stack([np.ones(len(y)), frame["x1"].to_numpy()])
    codes, area = np.unique(frame["area"].to_numpy(), return_inverse=True)
    Z = np.zeros((len(y), codes.size))
    Z[np.arange(len(y)), area] = 1.0
    n = len(y)

    def parts(rho):
        V = np.eye(n) + rho * Z @ Z.T
        Vi = np.linalg.inv(V)
        b = np.linalg.solve(X.T @ Vi @ X, X.T @ Vi @ y)
        r = y - X @ b
        s2e = float(r @ Vi @ r) / n
        _, logdet = np.linalg.slogdet(V)
        ll = -0.5 * (n * math.log(2 * math.pi * s2e) + logdet + n)
        return ll, b, s2e, Vi, r

    res = optimize.minimize_scalar(lambda t: -parts(math.exp(t))[0], bounds=(-20, 8), method="bounded",
                                   options={"xatol": 1e-12})
    rho = math.exp(res.x)
    ll, b, s2e, Vi, r = parts(rho)
    u = rho * Z.T @ Vi @ r
    return dict(beta=b, s2u=rho * s2e, s2e=s2e, u=u, ll=ll)


@pytest.mark.parametrize("seed", range(20))
def test_normal_fit_equals_dense_mixed_model(seed):
    rng = np.random.default_rng(1000 + seed)
    J = int(rng.integers(4, 11))
    frame = lmm_frame(seed, J=J, n_range=(5, 45), sd_u=8.0, sd_e=10.0)
    assert len(frame) <= 500
    m = fit_gamlss(Dataset(frame), NORMAL_RE, CTRL)
    o = dense_lmm_ml(frame)
    rel = lambda a, b: np.max(np.abs(np.asarray(a) - b) / np.maximum(np.abs(b), 1e-8))
    assert rel(m.beta["mu"], o["beta"]) < 1e-4
    assert rel(m.sigma2["mu"], o["s2u"]) < 1e-4
    assert rel(math.exp(2 * m.beta["sigma"][0]), o["s2e"]) < 1e-4
    assert np.max(np.abs(m.gamma["mu"] - o["u"])) < 1e-4 * max(1.0, np.max(np.abs(o["u"])))


def test_gdev_recomputes_and_effects_centred():
    frame = lmm_frame(3)
    data = Dataset(frame)
    m = fit_gamlss(data, NORMAL_RE, CTRL)
    assert m.converged
    assert global_deviance(m, data) == pytest.approx(m.gdev, rel=1e-12)
    assert abs(m.gamma["mu"].sum()) < 1e-8
    assert m.df == pytest.approx(2 + 1 + m.nu["mu"] + 1)


def test_zero_variance_response_raises():
    f = pd.DataFrame({"area": np.repeat([1, 2, 3], 4), "y": 5.0})
    with pytest.raises(ConvergenceError):
        fit_gamlss(Dataset(f), ModelSpec(Normal()), CTRL)


def test_intercept_only_normal_is_closed_form_ml():
    rng = np.random.default_rng(2)
    y = rng.normal(10, 3, 200)
    f = pd.DataFrame({"area": np.repeat(np.arange(10), 20), "y": y})
    m = fit_gamlss(Dataset(f), ModelSpec(Normal()), CTRL)
    assert m.beta["mu"][0] == pytest.approx(y.mean(), abs=1e-6)
    assert math.exp(2 * m.beta["sigma"][0]) == pytest.approx(np.mean((y - y.mean()) ** 2), rel=1e-6)


def test_fit_is_deterministic():
    data = Dataset(lmm_frame(4))
    a, b = fit_gamlss(data, NORMAL_RE, CTRL), fit_gamlss(data, NORMAL_RE, CTRL)
    for k in a.beta:
        np.testing.assert_array_equal(a.beta[k], b.beta[k])
    np.testing.assert_array_equal(a.gamma["mu"], b.gamma["mu"])
    assert a.trace == b.trace


def test_nonconvergence_carries_partial_fit():
    with pytest.raises(ConvergenceError) as exc:
        fit_gamlss(Dataset(lmm_frame(5)), NORMAL_RE, FitControl(max_outer=1))
    assert exc.value.partial is not None and not exc.value.partial.converged


def test_estimate_re_variance_examples():
    assert estimate_re_variance([1.0, -1.0]) == 1.0
    assert estimate_re_variance(np.zeros(5)) == 1e-8
    assert estimate_re_variance([1.0, -1.0, 2.0, -2.0], adjustment=2.0) == pytest.approx(5.0)
    with pytest.raises(DomainError):
        estimate_re_variance([1.0])


def test_gauss_hermite_examples():
    g2 = gauss_hermite_grid(2)
    np.testing.assert_allclose(g2.nodes, [-1, 1], atol=1e-14)
    np.testing.assert_allclose(g2.weights, [0.5, 0.5], atol=1e-14)
    g3 = gauss_hermite_grid(3)
    np.testing.assert_allclose(g3.nodes, [-math.sqrt(3), 0, math.sqrt(3)], atol=1e-13)
    np.testing.assert_allclose(g3.weights, [1 / 6, 2 / 3, 1 / 6], atol=1e-14)
    for K in (2, 5, 20, 41):
        g = gauss_hermite_grid(K)
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-13)
        assert g.weights @ g.nodes == pytest.approx(0.0, abs=1e-12)
        assert g.weights @ g.nodes ** 2 == pytest.approx(1.0, abs=1e-11)
        assert g.weights @ g.nodes ** 3 == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(DomainError):
        gauss_hermite_grid(1)


def a1_sample(seed=0):
    cfg = ScenarioConfig("A1", seed=seed)
    pop = generate_population(cfg, 0).data
    return draw_sample(pop, cfg.allocation(), np.random.default_rng(seed + 1))


def test_em_agrees_with_rs_on_a1():
    s = a1_sample(7)
    rs = fit_gamlss(s, NORMAL_RE, CTRL)
    em = fit_quadrature_em(s, NORMAL_RE, K=20)
    assert em.method == "EM"
    np.testing.assert_allclose(em.beta["mu"], rs.beta["mu"], rtol=0.02)
    assert math.sqrt(em.sigma2["mu"]) == pytest.approx(math.sqrt(rs.sigma2["mu"]), rel=0.02)
    tr = np.asarray(em.trace)
    # trace holds -2 log-likelihood: nonincreasing
    assert np.all(np.diff(tr) <= 1e-10 * np.abs(tr[1:]) + 1e-10)


def test_em_two_points_null_variance():
    frame = lmm_frame(11, J=20, n_range=(20, 40), sd_u=0.0, sd_e=5.0)
    em = fit_quadrature_em(Dataset(frame), NORMAL_RE, K=2)
    assert math.sqrt(em.sigma2["mu"]) <= 0.1 * math.exp(em.beta["sigma"][0])


def test_lr_test_and_gaic():
    data = Dataset(lmm_frame(6))
    m1 = fit_gamlss(data, NORMAL_RE, CTRL)
    res = lr_test(m1, m1)
    assert res["stat"] == 0 and res["p"] == 1.0
    assert gaic(m1, 2.0) == pytest.approx(m1.gdev + 2 * m1.df)
    m0 = fit_gamlss(data, ModelSpec(Normal(), {"mu": ParamSpec((), None, True)}), CTRL)
    res = lr_test(m0, m1)
    assert res["stat"] > 0 and 0 <= res["p"] < 1
    with pytest.raises(NestingError):
        lr_test(m1, m0)


def test_quantile_residuals_zero_at_median():
    f = pd.DataFrame({"area": np.repeat([1, 2], 5), "y": np.r_[np.arange(5.0), np.arange(5.0)]})
    m = fit_gamlss(Dataset(f), ModelSpec(Normal()), CTRL)
    at_mean = Dataset(f.assign(y=m.beta["mu"][0]))
    r = quantile_residuals(m, at_mean)
    np.testing.assert_allclose(r.residuals, 0.0, atol=1e-12)


def test_quantile_residuals_well_specified_lognormal():
    rng = np.random.default_rng(12)
    n, J = 5000, 50
    area = np.repeat(np.arange(J), n // J)
    x1, x2 = rng.standard_normal(n), rng.standard_normal(n)
    g = 0.2 * rng.standard_normal(J)
    y = np.exp(7 + x1 + g[area] + np.exp(-1 + 0.3 * x2) * rng.standard_normal(n))
    data = Dataset(pd.DataFrame({"area": area, "x1": x1, "x2": x2, "y": y}))
    spec = ModelSpec(LogNormal(), {"mu": ParamSpec(("x1",), None, True), "sigma": ParamSpec(("x2",))})
    r = quantile_residuals(fit_gamlss(data, spec, CTRL), data)
    assert abs(r.mean) < 0.05 and abs(r.variance - 1) < 0.1 and abs(r.kurtosis - 3) < 0.4


@pytest.mark.parametrize("family", [Gamma(), Dagum()])
def test_positive_families_with_random_effects_converge(family):
    rng = np.random.default_rng(13)
    J, nj = 15, 40
    area = np.repeat(np.arange(J), nj)
    x1 = rng.standard_normal(area.size)
    g = 0.3 * rng.standard_normal(J)
    mu = np.exp(3 + 0.5 * x1 + g[area])
    if family.name == "Gamma":
        y = family.rvs(rng, mu, np.full(area.size, 0.4), size=area.size)
    else:
        y = family.rvs(rng, mu, np.full(area.size, 3.4), np.full(area.size, 0.8), size=area.size)
    data = Dataset(pd.DataFrame({"area": area, "x1": x1, "y": y}))
    m = fit_gamlss(data, ModelSpec(family, {"mu": ParamSpec(("x1",), None, True)}), CTRL)
    assert m.converged
    assert m.beta["mu"][1] == pytest.approx(0.5, abs=0.1)
    assert 0.05 < math.sqrt(m.sigma2["mu"]) < 0.6


@pytest.mark.slow
def test_a1_recovery_across_replicates():
    # a single draw has sd(beta1) near 0.45, so the bands apply to the
    # replicate average (beta) and the interquartile range (area sd)
    cfg = ScenarioConfig("A1", seed=3)
    assert 1400 <= cfg.allocation().sum() <= 1700
    b, sds = [], []
    for t in range(100):
        pop = generate_population(cfg, t).data
        s = draw_sample(pop, cfg.allocation(), np.random.default_rng(t))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = fit_gamlss(s, NORMAL_RE)
        b.append(m.beta["mu"])
        sds.append(math.sqrt(m.sigma2["mu"]))
    b0, b1 = np.mean(b, axis=0)
    assert abs(b0 - 100) < 1 and abs(b1 - 4) < 0.2
    q1, q3 = np.percentile(sds, [25, 75])
    assert 2.5 <= q1 and q3 <= 5.5
