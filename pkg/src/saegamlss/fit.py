"""Penalized maximum likelihood for GAMLSS with area random intercepts.

The RS algorithm cycles over the distribution parameters (mu, sigma, nu,
tau).  For the active parameter an inner loop runs Fisher scoring on the
link scale: the working response and weights come from the score and the
expected information, and the fixed effects and area intercepts are updated
jointly by penalized weighted least squares with ridge penalty
``1 / sigma2_k`` on the intercepts.  Random-effect variances are refreshed
once per outer cycle.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import hermite_e
from scipy import optimize, special, stats

from . import kernels
from .distributions import Family, Identity
from .errors import ConvergenceError, DomainError, NestingError, RankError, SpecError
from .model import Dataset, DesignBundle, ModelSpec, build_design, check_support

SIGMA2_FLOOR = 1e-8
BOUNDARY_SHARE = 1e-2


@dataclass(frozen=True)
class FitControl:
    """Iteration controls.

    ``re_update`` selects the variance-component step: ``"schall"`` is the
    moment-type fixed-point update, ``"profile"`` maximises the working-model
    marginal likelihood in one step.  Both share the same fixed point.
    """

    max_outer: int = 500
    max_inner: int = 20
    tol: float = 1e-6
    var_tol: float = 1e-6
    inner_tol: float = 1e-12
    step_halving: int = 12
    re_update: str = "schall"
    sigma_correction: bool = True
    check_monotone: bool = False

    def __post_init__(self):
        if self.re_update not in ("schall", "profile"):
            raise ValueError("re_update must be 'schall' or 'profile'")


@dataclass(frozen=True)
class FittedModel:
    spec: ModelSpec
    beta: dict
    gamma: dict
    sigma2: dict
    nu: dict
    areas: np.ndarray
    columns: dict
    levels: dict
    gdev: float
    df: float
    n: int
    converged: bool
    trace: tuple
    n_outer: int
    method: str = "RS"
    notes: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def family(self) -> Family:
        return self.spec.family

    @property
    def param_names(self) -> tuple:
        return self.spec.param_names

    def linear_predictors(self, X: dict, area_index: np.ndarray) -> dict:
        """Link-scale predictors; units with ``area_index == -1`` get no area effect."""
        out = {}
        for k in self.param_names:
            eta = X[k] @ self.beta[k]
            if k in self.gamma:
                g = np.append(self.gamma[k], 0.0)
                eta = eta + g[area_index]
            out[k] = eta
        return out

    def params_for(self, X: dict, area_index: np.ndarray) -> list:
        eta = self.linear_predictors(X, area_index)
        return [self.spec.params[k].link.inverse(eta[k]) for k in self.param_names]

    def fitted_params(self, data: Dataset) -> list:
        design = build_design(data, self.spec, levels=self.levels, areas=self.areas, check_rank=False)
        return self.params_for(design.X, design.area_index)

    def gaic(self, penalty: float = 2.0) -> float:
        return gaic(self, penalty)

    def summary(self) -> str:
        return coefficient_table(self)


# ---------------------------------------------------------------------------
# building blocks


def estimate_re_variance(gamma, adjustment: float = 0.0, floor: float = SIGMA2_FLOOR) -> float:
    """Moment update ``sum(gamma^2) / (J - adjustment)`` floored at ``floor``.

    ``adjustment`` is the shrinkage trace sum_j lam / (W_j + lam), so the
    denominator equals the effective degrees of freedom of the area effects.
    """
    gamma = np.asarray(gamma, dtype=float)
    J = gamma.size
    if J < 2:
        raise DomainError("variance update needs at least 2 areas")
    denom = J - adjustment
    ss = float(gamma @ gamma)
    if denom <= 0 or ss <= 0:
        return floor
    return max(ss / denom, floor)


def _profile_re_variance(X, z, w, area, J, current):
    """ML of the area variance in the working model z = X b + g[area] + e/sqrt(w)."""
    p = X.shape[1]
    W = np.bincount(area, weights=w, minlength=J)
    wz = w * z
    Sz = np.bincount(area, weights=wz, minlength=J)
    Sx = np.empty((J, p))
    for c in range(p):
        Sx[:, c] = np.bincount(area, weights=w * X[:, c], minlength=J)
    XtWX = (X * w[:, None]).T @ X
    XtWz = X.T @ wz
    zWz = float(z @ wz)

    def negll(logs):
        s = math.exp(logs)
        c = s / (1.0 + s * W)
        A = XtWX - (Sx * c[:, None]).T @ Sx
        b = XtWz - (Sx * c[:, None]).T @ Sz
        try:
            beta = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            return 1e300
        q = zWz - float(np.sum(c * Sz * Sz)) - float(b @ beta)
        return 0.5 * float(np.sum(np.log1p(s * W))) + 0.5 * q

    scale = 1.0 / max(float(np.mean(w)), 1e-300)
    lo, hi = math.log(SIGMA2_FLOOR), math.log(1e4 * scale + 1.0)
    x0 = math.log(min(max(current, SIGMA2_FLOOR), math.exp(hi)))
    res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10})
    best = res.x if res.fun <= negll(x0) else x0
    if negll(lo) <= min(res.fun, negll(x0)):
        best = lo
    return max(math.exp(best), SIGMA2_FLOOR)


class _State:
    """Mutable iteration state for one RS fit."""

    def __init__(self, family, links, y, X, area, J, re, pw):
        self.family, self.links, self.y, self.X = family, links, y, X
        self.area, self.J, self.re, self.pw = area, J, re, pw
        self.names = family.param_names
        self.beta = {}
        self.gamma = {}
        self.eta = {}
        self.s2 = {}
        self.nu = {k: 0.0 for k in self.names}
        self.wmean = {k: 1.0 for k in self.names}
        cnt = np.bincount(area, minlength=J)
        self.nbar = float(cnt[cnt > 0].mean()) if np.any(cnt > 0) else 1.0

    def theta(self, override=None):
        out = []
        for k, lk in zip(self.names, self.links):
            e = override[1] if override is not None and override[0] == k else self.eta[k]
            out.append(lk.inverse(e))
        return out

    def loglik(self, override=None):
        with np.errstate(all="ignore"):
            ll = self.family.logpdf(self.y, *self.theta(override))
        if self.pw is not None:
            ll = ll * self.pw
        s = float(np.sum(ll))
        return s if math.isfinite(s) else -math.inf

    def penalty(self, override_gamma=None):
        pen = 0.0
        for k in self.names:
            if self.re[k]:
                g = override_gamma[1] if override_gamma is not None and override_gamma[0] == k else self.gamma[k]
                pen += float(g @ g) / self.s2[k]
        return pen

    def pdev(self, k=None, eta=None, gamma=None):
        ov = (k, eta) if k is not None else None
        og = (k, gamma) if (k is not None and gamma is not None) else None
        return -2.0 * self.loglik(ov) + self.penalty(og)

    def set_eta(self, k):
        e = self.X[k] @ self.beta[k]
        if self.re[k]:
            e = e + self.gamma[k][self.area]
        self.eta[k] = e


def _is_quadratic(family, k, link):
    return family.name in ("Normal", "LogNormal") and k == "mu" and isinstance(link, Identity)


def _update_param(st: _State, k: str, ctrl: FitControl, pdev_old: float) -> float:
    fam = st.family
    idx = st.names.index(k)
    link = st.links[idx]
    Xk = st.X[k]
    quad = _is_quadratic(fam, k, link)
    for _ in range(ctrl.max_inner):
        th = st.theta()
        with np.errstate(all="ignore"):
            d = fam.dl(st.y, *th)[idx]
            info = fam.info(*th)[idx]
        dt = link.dtheta_deta(st.eta[k])
        w = info * dt * dt
        if st.pw is not None:
            w = w * st.pw
        w = np.broadcast_to(w, st.y.shape).astype(float)
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(d)):
            raise ConvergenceError(f"non-finite working quantities for {k}")
        wmax = float(np.max(w))
        st.wmean[k] = float(np.mean(w))
        w = np.maximum(w, 1e-12 * wmax if wmax > 0 else 1e-300)
        z = st.eta[k] + d / (info * dt)
        z = np.where(np.isfinite(z), z, st.eta[k])
        try:
            if st.re[k]:
                b_new, g_new, nu = kernels.pwls_re(Xk, z, w, st.area, st.J, 1.0 / st.s2[k])
                st.nu[k] = nu
            else:
                b_new, g_new = kernels.wls(Xk, z, w), None
        except np.linalg.LinAlgError as exc:
            raise RankError(f"singular working system for {k}") from exc
        b_old = st.beta[k]
        g_old = st.gamma.get(k)
        eta_old = st.eta[k]
        accepted = False
        for h in range(ctrl.step_halving + 1):
            eta_new = Xk @ b_new
            if g_new is not None:
                eta_new = eta_new + g_new[st.area]
            pdev_new = st.pdev(k, eta_new, g_new)
            if pdev_new <= pdev_old + 1e-10 * max(abs(pdev_old), 1.0):
                accepted = True
                break
            b_new = 0.5 * (b_new + b_old)
            if g_new is not None:
                g_new = 0.5 * (g_new + g_old)
        if not accepted:
            st.eta[k] = eta_old
            return pdev_old
        st.beta[k] = b_new
        if g_new is not None:
            st.gamma[k] = g_new
        st.set_eta(k)
        pdev_new = st.pdev()
        change = pdev_old - pdev_new
        pdev_old = pdev_new
        if quad or abs(change) < ctrl.inner_tol * (abs(pdev_new) + 1.0):
            break
    return pdev_old


def _init_state(st: _State, start, y):
    fam = st.family
    if start is not None:
        for k in st.names:
            st.beta[k] = np.array(start["beta"][k], dtype=float).copy()
            if st.re[k]:
                st.gamma[k] = np.zeros(st.J)
                st.s2[k] = float(start["sigma2"].get(k, 0.1))
            st.set_eta(k)
        return
    th0 = fam.start(y if st.pw is None else y[st.pw > 0])
    for k, lk, t in zip(st.names, st.links, th0):
        b = np.zeros(st.X[k].shape[1])
        b[0] = float(lk.apply(t))
        st.beta[k] = b
        if st.re[k]:
            st.gamma[k] = np.zeros(st.J)
        st.set_eta(k)
    for k in st.names:
        if st.re[k]:
            st.s2[k] = _initial_s2(st, k)


def _initial_s2(st, k):
    # between-area variance of the working response, an overestimate by design
    idx = st.names.index(k)
    th = st.theta()
    with np.errstate(all="ignore"):
        d = st.family.dl(st.y, *th)[idx]
        info = st.family.info(*th)[idx]
    dt = st.links[idx].dtheta_deta(st.eta[k])
    z = st.eta[k] + d / (info * dt)
    cnt = np.bincount(st.area, minlength=st.J)
    ok = cnt > 0
    means = np.bincount(st.area, weights=z, minlength=st.J)[ok] / cnt[ok]
    v = float(np.var(means)) if ok.sum() > 1 else 0.0
    scale = 1.0 / max(float(np.mean(np.broadcast_to(info * dt * dt, st.y.shape))), 1e-300)
    return max(v, 1e-2 * scale, SIGMA2_FLOOR)


def _sigma_correction_target(st: _State):
    fam = st.family
    if fam.name not in ("Normal", "LogNormal") or "mu" not in st.re or not st.re["mu"]:
        return None
    if not isinstance(st.links[0], Identity):
        return None
    return "sigma"


def _apply_sigma_correction(st: _State, n_eff: float):
    nu = st.nu["mu"]
    if nu <= 0 or n_eff - nu <= 1:
        return 1.0
    f = n_eff / (n_eff - nu)
    k = "sigma"
    link = st.links[1]
    b = st.beta[k].copy()
    if isinstance(link, Identity):
        b = b * math.sqrt(f)
    else:
        b[0] += 0.5 * math.log(f)
    st.beta[k] = b
    st.set_eta(k)
    return f


def _rs_fit(family, links, y, X, area, J, re, ctrl: FitControl, start=None, pw=None):
    """Run the RS algorithm; returns a dict describing the final state."""
    st = _State(family, links, y, X, area, J, re, pw)
    _init_state(st, start, y)
    n_eff = float(np.sum(pw)) if pw is not None else float(y.size)
    correct = ctrl.sigma_correction and _sigma_correction_target(st) is not None
    pdev = st.pdev()
    trace = []
    gdev_prev = None
    converged = False
    outer = 0
    for outer in range(1, ctrl.max_outer + 1):
        sweep_start = pdev
        for k in st.names:
            before = pdev
            pdev = _update_param(st, k, ctrl, pdev)
            if ctrl.check_monotone and pdev > before + 1e-8 * max(abs(before), 1.0):
                raise AssertionError(f"penalized deviance increased in {k} step: {before} -> {pdev}")
        if ctrl.check_monotone and pdev > sweep_start + 1e-8 * max(abs(sweep_start), 1.0):
            raise AssertionError("penalized deviance increased over a sweep")
        if correct:
            _apply_sigma_correction(st, n_eff)
        max_rel = 0.0
        for k in st.names:
            if not st.re[k]:
                continue
            old = st.s2[k]
            # relative to the variance of an area-mean working residual, so
            # that a variance drifting to its zero boundary still converges
            scale = old + 1.0 / (max(st.wmean[k], 1e-300) * st.nbar)
            if ctrl.re_update == "schall":
                new = estimate_re_variance(st.gamma[k], st.J - st.nu[k])
                # near zero the fixed point is approached very slowly; the
                # one-step working ML can land on the boundary directly
                if new < old and new < BOUNDARY_SHARE * scale:
                    new = _profile_working(st, k, old)
            else:
                new = _profile_working(st, k, old)
            st.s2[k] = new
            max_rel = max(max_rel, abs(new - old) / scale)
        gdev = -2.0 * st.loglik()
        pdev = st.pdev()
        trace.append(gdev)
        if not math.isfinite(gdev):
            raise ConvergenceError("global deviance is not finite")
        if gdev_prev is not None and abs(gdev - gdev_prev) < ctrl.tol and max_rel < ctrl.var_tol:
            converged = True
            break
        gdev_prev = gdev
    # refresh smoother traces at the final variances
    for k in st.names:
        if st.re[k]:
            _, _, st.nu[k] = _working_solve(st, k)
    return dict(state=st, trace=tuple(trace), converged=converged, n_outer=outer,
                gdev=-2.0 * st.loglik())


def _working(st: _State, k):
    idx = st.names.index(k)
    th = st.theta()
    with np.errstate(all="ignore"):
        d = st.family.dl(st.y, *th)[idx]
        info = st.family.info(*th)[idx]
    dt = st.links[idx].dtheta_deta(st.eta[k])
    w = np.broadcast_to(info * dt * dt, st.y.shape).astype(float)
    if st.pw is not None:
        w = w * st.pw
    z = st.eta[k] + d / (info * dt)
    return np.where(np.isfinite(z), z, st.eta[k]), np.maximum(w, 1e-300)


def _working_solve(st, k):
    z, w = _working(st, k)
    return kernels.pwls_re(st.X[k], z, w, st.area, st.J, 1.0 / st.s2[k])


def _profile_working(st, k, current):
    z, w = _working(st, k)
    return _profile_re_variance(st.X[k], z, w, st.area, st.J, current)


# ---------------------------------------------------------------------------
# public fitting API


def _design_inputs(data: Dataset, spec: ModelSpec, design: DesignBundle | None = None):
    check_support(data, spec)
    if design is None:
        design = build_design(data, spec)
    return design


def fit_design(y, design: DesignBundle, spec: ModelSpec, ctrl: FitControl | None = None,
               start=None) -> FittedModel:
    """Fit on prebuilt design matrices (used by the bootstrap and simulations).

    ``design.areas`` may contain areas without units; their effects stay 0.
    """
    ctrl = ctrl or FitControl()
    fam = spec.family
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise SpecError("no observations")
    if fam.positive_support and np.any(y <= 0):
        from .errors import SupportError

        raise SupportError(f"{fam.name} requires y > 0")
    if fam.name == "Normal" and float(np.ptp(y)) == 0.0:
        raise ConvergenceError("response has zero variance; sigma would collapse to its floor")
    re = {k: spec.params[k].random_intercept for k in spec.param_names}
    if isinstance(start, FittedModel):
        start = {"beta": start.beta, "sigma2": start.sigma2}
    res = _rs_fit(fam, spec.links, y, design.X, design.area_index, design.J, re, ctrl, start)
    st = res["state"]
    notes = []
    for k, lk in zip(st.names, st.links):
        if not isinstance(lk, Identity):
            e = st.eta[k]
            if np.any(e <= math.log(1e-10) + 1e-9) or np.any(e >= math.log(1e10) - 1e-9):
                notes.append(f"{k} reached its numerical floor/ceiling")
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=2)
    p_total = sum(design.X[k].shape[1] for k in st.names)
    nu = {k: float(st.nu[k]) for k in st.names if re[k]}
    df = p_total + sum(nu.values()) + len(nu)
    model = FittedModel(
        spec=spec,
        beta={k: np.asarray(st.beta[k], dtype=float).copy() for k in st.names},
        gamma={k: np.asarray(st.gamma[k], dtype=float).copy() for k in st.names if re[k]},
        sigma2={k: float(st.s2[k]) for k in st.names if re[k]},
        nu=nu,
        areas=np.asarray(design.areas),
        columns=dict(design.columns),
        levels=dict(design.levels),
        gdev=float(res["gdev"]),
        df=float(df),
        n=int(y.size),
        converged=bool(res["converged"]),
        trace=res["trace"],
        n_outer=int(res["n_outer"]),
        method="RS",
        notes=tuple(notes),
    )
    if not model.converged:
        raise ConvergenceError(
            f"RS did not converge in {ctrl.max_outer} outer iterations", partial=model
        )
    return model


def fit_gamlss(data: Dataset, spec: ModelSpec, ctrl: FitControl | None = None,
               start=None) -> FittedModel:
    """Penalized ML fit of a GAMLSS with per-parameter area random intercepts."""
    design = _design_inputs(data, spec)
    return fit_design(data.y, design, spec, ctrl, start)


# ---------------------------------------------------------------------------
# Gaussian quadrature / EM


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def K(self) -> int:
        return int(self.nodes.size)


def gauss_hermite_grid(K: int) -> QuadratureGrid:
    """Probabilists' Gauss-Hermite rule as a discrete N(0, 1) approximation."""
    if K < 2:
        raise DomainError("quadrature needs K >= 2 points")
    x, w = hermite_e.hermegauss(K)
    w = w / w.sum()
    return QuadratureGrid(np.asarray(x, dtype=float), np.asarray(w, dtype=float))


def fit_quadrature_em(data: Dataset, spec: ModelSpec, K: int = 20,
                      ctrl: FitControl | None = None, max_em: int = 2000) -> FittedModel:
    """Random-intercept model on mu fitted as a K-component mixture by EM.

    Each area's standardized effect takes the quadrature node values with the
    quadrature weights as fixed prior probabilities.  The M-step is a weighted
    RS fit on the data replicated over the nodes, with the node value as an
    extra mu covariate whose coefficient is the random-effect sd.
    """
    ctrl = ctrl or FitControl()
    if spec.random_params() != ("mu",):
        raise SpecError("quadrature EM supports exactly one random intercept, on mu")
    design = _design_inputs(data, spec)
    fam = spec.family
    y = data.y
    n, J = y.size, design.J
    grid = gauss_hermite_grid(K)
    area = design.area_index
    names = spec.param_names

    # expanded data: row r = kappa * n + i
    Xe = {}
    for k in names:
        Xk = np.tile(design.X[k], (K, 1))
        if k == "mu":
            Xk = np.column_stack([Xk, np.repeat(grid.nodes, n)])
        Xe[k] = Xk
    ye = np.tile(y, K)
    area_e = np.tile(area, K)
    no_re = {k: False for k in names}

    # start: fixed-effects fit plus between-area spread of mu residuals
    base = _rs_fit(fam, spec.links, y, design.X, area, J, no_re, ctrl)
    st0 = base["state"]
    r = y - fam.mean(*st0.theta()) if fam.name == "Normal" else st0.eta["mu"] * 0.0
    cnt = np.bincount(area, minlength=J)
    s_start = math.sqrt(max(float(np.var(np.bincount(area, weights=r, minlength=J) / np.maximum(cnt, 1))), 1e-4))
    if fam.name != "Normal":
        s_start = 0.1
    beta = {k: st0.beta[k].copy() for k in names}
    beta["mu"] = np.append(beta["mu"], s_start)

    inner = replace(ctrl, max_outer=50, tol=1e-9, check_monotone=False, sigma_correction=False)
    trace = []
    post = None
    loglik_prev = -math.inf
    converged = False
    logpi = np.log(grid.weights)
    it = 0
    for it in range(1, max_em + 1):
        # E-step at the current parameters
        th = [lk.inverse(Xe[k] @ beta[k]) for k, lk in zip(names, spec.links)]
        with np.errstate(all="ignore"):
            ll = fam.logpdf(ye, *th).reshape(K, n)
        L = np.stack([np.bincount(area, weights=ll[kk], minlength=J) for kk in range(K)], axis=1)
        a = L + logpi[None, :]
        lse = special.logsumexp(a, axis=1)
        loglik = float(np.sum(lse))
        post = np.exp(a - lse[:, None])
        trace.append(-2.0 * loglik)
        if abs(loglik - loglik_prev) < ctrl.tol * 1e-2:
            converged = True
            break
        loglik_prev = loglik
        pw = post[area_e, np.repeat(np.arange(K), n)]
        m = _rs_fit(fam, spec.links, ye, Xe, area_e, J, no_re, inner,
                    start={"beta": beta, "sigma2": {}}, pw=pw)
        beta = {k: m["state"].beta[k].copy() for k in names}
    sd = float(beta["mu"][-1])
    gamma_mu = sd * (post @ grid.nodes)
    beta_out = {k: beta[k].copy() for k in names}
    beta_out["mu"] = beta["mu"][:-1].copy()
    p_total = sum(design.X[k].shape[1] for k in names)
    eta = {k: design.X[k] @ beta_out[k] + (gamma_mu[area] if k == "mu" else 0.0) for k in names}
    th = [lk.inverse(eta[k]) for k, lk in zip(names, spec.links)]
    gdev = -2.0 * float(np.sum(fam.logpdf(y, *th)))
    model = FittedModel(
        spec=spec, beta=beta_out, gamma={"mu": gamma_mu}, sigma2={"mu": sd * sd},
        nu={"mu": 0.0}, areas=np.asarray(design.areas), columns=dict(design.columns),
        levels=dict(design.levels), gdev=gdev, df=float(p_total + 1), n=int(n),
        converged=converged, trace=tuple(trace), n_outer=it, method="EM",
        extra={"K": K, "posterior": post, "marginal_loglik": -0.5 * trace[-1]},
    )
    if not converged:
        raise ConvergenceError(f"EM did not converge in {max_em} iterations", partial=model)
    return model


# ---------------------------------------------------------------------------
# diagnostics


def global_deviance(model: FittedModel, data: Dataset) -> float:
    """-2 times the log-likelihood of ``data`` at the fitted parameters."""
    th = model.fitted_params(data)
    return -2.0 * float(np.sum(model.family.logpdf(data.y, *th)))


def gaic(model: FittedModel, penalty: float = 2.0) -> float:
    return model.gdev + penalty * model.df


def _nested(m0: FittedModel, m1: FittedModel) -> bool:
    if m0.family != m1.family or m0.n != m1.n:
        return False
    for k in m0.param_names:
        p0, p1 = m0.spec.params[k], m1.spec.params[k]
        if not set(p0.terms) <= set(p1.terms) or p0.link != p1.link:
            return False
        if p0.random_intercept and not p1.random_intercept:
            return False
    return True


def lr_test(m0: FittedModel, m1: FittedModel) -> dict:
    """Generalized likelihood-ratio test of ``m0`` nested in ``m1``."""
    if not _nested(m0, m1):
        raise NestingError("m0 is not nested in m1")
    d = m1.df - m0.df
    if d < -1e-9:
        raise NestingError("the larger model has fewer degrees of freedom")
    stat = m0.gdev - m1.gdev
    if abs(d) <= 1e-9:
        return {"stat": stat, "df": 0.0, "p": 1.0}
    return {"stat": stat, "df": d, "p": float(stats.chi2.sf(max(stat, 0.0), d))}


@dataclass(frozen=True)
class ResidualSummary:
    residuals: np.ndarray
    mean: float
    variance: float
    skewness: float
    kurtosis: float


def summarize_residuals(r) -> ResidualSummary:
    r = np.asarray(r, dtype=float)
    if r.size > 2 and np.ptp(r) > 0:
        sk, ku = float(stats.skew(r)), float(stats.kurtosis(r, fisher=False))
    else:
        sk, ku = 0.0, math.nan
    return ResidualSummary(r, float(np.mean(r)), float(np.var(r, ddof=1)) if r.size > 1 else 0.0, sk, ku)


def quantile_residuals(model: FittedModel, data: Dataset) -> ResidualSummary:
    """Normalized quantile residuals Phi^-1(F(y | fitted parameters))."""
    th = model.fitted_params(data)
    u = model.family.cdf(data.y, *th)
    lo, hi = 1e-12, 1 - 1e-12
    if np.any(u < lo) or np.any(u > hi):
        warnings.warn("CDF values clamped to [1e-12, 1 - 1e-12]", RuntimeWarning, stacklevel=2)
        u = np.clip(u, lo, hi)
    return summarize_residuals(special.ndtri(u))


def coefficient_table(model: FittedModel) -> str:
    """Plain-text coefficient table, one block per distribution parameter."""
    lines = []
    for k in model.param_names:
        ps = model.spec.params[k]
        lines.append(f"{k.capitalize()} link function: {ps.link.name}")
        lines.append(f"{k.capitalize()} Coefficients:")
        for name, b in zip(model.columns[k], model.beta[k]):
            lines.append(f"  {name:<24s}{b:>14.6f}")
        if k in model.sigma2:
            lines.append(f"  random intercept sd     {math.sqrt(model.sigma2[k]):>14.6f}"
                         f"   (edf {model.nu.get(k, 0.0):.2f})")
        lines.append("-" * 44)
    lines.append(f"No. of observations in the fit: {model.n}")
    lines.append(f"Degrees of Freedom for the fit: {model.df:.2f}")
    lines.append(f"Residual Deg. of Freedom: {model.n - model.df:.2f}")
    lines.append(f"Global Deviance: {model.gdev:.4f}")
    lines.append(f"AIC: {gaic(model, 2.0):.4f}    SBC: {gaic(model, math.log(model.n)):.4f}")
    return "\n".join(lines)
