import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from conftest import CTRL, NORMAL_RE, a1_population, split
from saegamlss import (
    AreaFunctional, Dataset, ModelSpec, Normal, bootstrap_mse, bootstrap_mse_eblup, fit_bhf, fit_gamlss,
)
from saegamlss.errors import ConvergenceError, DegenerateError, DomainError, SpecError
from saegamlss.mse import run_bootstrap


@pytest.fixture(scope="module")
def a_setting():
    frame = a1_population(31, J=20, N_j=400)
    n_j = np.linspace(4, 61, 20).round().astype(int)
    sample, pop = split(frame, n_j, 32)
    return sample, pop, fit_gamlss(sample, NORMAL_RE, CTRL)


def test_no_area_effect_matches_analytic_mse():
    rng = np.random.default_rng(33)
    J, N_j = 10, 300
    area = np.repeat(np.arange(J), N_j)
    frame = pd.DataFrame({"unit_id": np.arange(area.size), "area": area,
                          "y": rng.normal(50, 5, area.size)})
    n_j = np.arange(5, 5 + 3 * J, 3)
    sample, pop = split(frame, n_j, 34)
    model = fit_gamlss(sample, ModelSpec(Normal()), CTRL)
    res = bootstrap_mse(model, sample, pop, AreaFunctional.mean(), B=1000, seed=1)
    s2 = math.exp(2 * model.beta["sigma"][0])
    n_rest = N_j - n_j
    analytic = (n_rest / N_j) ** 2 * s2 * (1 / n_j.sum() + 1 / n_rest)
    np.testing.assert_allclose(res.mse, analytic, rtol=0.15)


def prasad_rao_mse(sample, pop, fit):
    """Second-order MSE of the EBLUP of finite-population area means (ML variances)."""
    s2u, s2e, beta = fit.sigma2_u, fit.sigma2_e, fit.beta
    sf, pf = sample.frame, pop.frame
    rest = pf[~pf["unit_id"].isin(sf["unit_id"])]
    areas = np.unique(sf["area"])
    blocks, info, XVX = [], np.zeros((2, 2)), np.zeros((2, 2))
    for a in areas:
        g = sf[sf["area"] == a]
        X = np.column_stack([np.ones(len(g)), g["x1"]])
        n = len(g)
        V = s2e * np.eye(n) + s2u * np.ones((n, n))
        Vi = np.linalg.inv(V)
        XVX += X.T @ Vi @ X
        dV = (np.ones((n, n)), np.eye(n))
        for i in range(2):
            for k in range(2):
                info[i, k] += 0.5 * np.trace(Vi @ dV[i] @ Vi @ dV[k])
        blocks.append((g, X, n))
    cov_var = np.linalg.inv(info)
    XVXi = np.linalg.inv(XVX)
    out = []
    for a, (g, X, n) in zip(areas, blocks):
        r = rest[rest["area"] == a]
        Nj = n + len(r)
        gam = s2u / (s2u + s2e / n)
        xr = np.array([1.0, r["x1"].mean()])
        xs = X.mean(axis=0)
        g1 = gam * s2e / n
        d = xr - gam * xs
        g2 = d @ XVXi @ d
        g3 = (1 / n ** 2) / (s2u + s2e / n) ** 3 * (
            s2e ** 2 * cov_var[0, 0] + s2u ** 2 * cov_var[1, 1] - 2 * s2e * s2u * cov_var[0, 1])
        f = n / Nj
        out.append((1 - f) ** 2 * (g1 + g2 + 2 * g3 + s2e / (Nj - n)))
    return np.array(out)


def test_bootstrap_close_to_prasad_rao(a_setting):
    sample, pop, model = a_setting
    res = bootstrap_mse(model, sample, pop, AreaFunctional.mean(), B=200, seed=2)
    pr = prasad_rao_mse(sample, pop, fit_bhf(sample, ("x1",)))
    assert 0.8 <= res.mse.mean() / pr.mean() <= 1.2


def test_b2_determinism_and_threads(a_setting):
    sample, pop, model = a_setting
    a = bootstrap_mse(model, sample, pop, AreaFunctional.mean(), B=2, seed=3)
    b = bootstrap_mse(model, sample, pop, AreaFunctional.mean(), B=2, seed=3)
    c = bootstrap_mse(model, sample, pop, AreaFunctional.mean(), B=2, seed=3, threads=2)
    np.testing.assert_array_equal(a.mse, b.mse)
    np.testing.assert_array_equal(a.mse, c.mse)
    np.testing.assert_array_equal(a.log_true, c.log_true)


def test_mse_recomputable_from_log(a_setting):
    sample, pop, model = a_setting
    res = bootstrap_mse(model, sample, pop, AreaFunctional.poverty_rate(), B=6, L=10, seed=4)
    assert res.log_true.shape == (res.B_eff, len(res.areas))
    np.testing.assert_allclose(res.mse, np.mean((res.log_pred - res.log_true) ** 2, axis=0), rtol=1e-14)
    fr = res.to_frame()
    np.testing.assert_allclose(fr["cv_pct"], 100 * fr["rmse"] / fr["H_hat"].abs(), rtol=1e-14)


def test_eblup_bootstrap_close_to_gamlss(a_setting):
    sample, pop, model = a_setting
    g = bootstrap_mse(model, sample, pop, AreaFunctional.mean(), B=100, seed=5)
    e = bootstrap_mse_eblup(fit_bhf(sample, ("x1",)), sample, pop, B=100, seed=5)
    assert 0.85 <= g.mse.mean() / e.mse.mean() <= 1.15


def test_degenerate_when_refits_fail():
    def gen(rng):
        return rng.standard_normal(3), np.zeros(2)

    def refit(y, b):
        if b % 3:
            raise ConvergenceError("no")
        return np.zeros(2)

    with pytest.raises(DegenerateError):
        run_bootstrap(gen, refit, 10, 0)
    with pytest.raises(DomainError):
        run_bootstrap(gen, refit, 1, 0)

    def refit_some(y, b):
        if b == 0:
            raise ConvergenceError("no")
        return np.ones(2)

    truth, pred, nf = run_bootstrap(gen, refit_some, 10, 0)
    assert nf == 1 and pred.shape == (9, 2)


def test_unconverged_model_rejected(a_setting):
    sample, pop, model = a_setting
    with pytest.raises(SpecError):
        bootstrap_mse(replace(model, converged=False), sample, pop, AreaFunctional.mean(), B=2)
