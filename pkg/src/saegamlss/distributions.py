"""Response families with up to four parameters (mu, sigma, nu, tau).

Each family exposes vectorised log-density, CDF, quantile function, sampler,
mean, first derivatives of the log-density with respect to each parameter
and the diagonal of the expected Fisher information.  The last two drive the
RS scoring updates in :mod:`saegamlss.fit`.

Parameterisations
-----------------
Normal      mu = mean, sigma = sd.
LogNormal   log(y) ~ Normal(mu, sigma); mu is the log-scale location.
Gamma       mean mu, variance sigma^2 mu^2 (shape 1/sigma^2).
Dagum       f(y) = (sigma nu / y) (y/mu)^(sigma nu) [1 + (y/mu)^sigma]^-(nu+1),
            F(y) = [1 + (y/mu)^-sigma]^-nu; mu is a scale, sigma and nu shapes.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, special

from .errors import ConvergenceError, DomainError, MomentUndefined

PARAM_NAMES = ("mu", "sigma", "nu", "tau")

_ETA_LO = math.log(1e-10)
_ETA_HI = math.log(1e10)


# ---------------------------------------------------------------------------
# links


class Link:
    """Monotone map from the parameter scale to the linear-predictor scale."""

    name = "link"

    def apply(self, theta):
        raise NotImplementedError

    def inverse(self, eta):
        raise NotImplementedError

    def dtheta_deta(self, eta):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(type(self))


class Identity(Link):
    name = "identity"
    domain = (-math.inf, math.inf)

    def apply(self, theta):
        return np.asarray(theta, dtype=float)

    def inverse(self, eta):
        return np.asarray(eta, dtype=float)

    def dtheta_deta(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))


class Log(Link):
    name = "log"
    domain = (0.0, math.inf)

    def apply(self, theta):
        theta = np.asarray(theta, dtype=float)
        if np.any(theta <= 0):
            raise DomainError("log link requires a positive parameter")
        return np.log(theta)

    def inverse(self, eta):
        # clamp keeps inverse-log parameters inside [1e-10, 1e10]
        return np.exp(np.clip(eta, _ETA_LO, _ETA_HI))

    def dtheta_deta(self, eta):
        return self.inverse(eta)


LINKS = {"identity": Identity(), "log": Log()}


def get_link(name) -> Link:
    if isinstance(name, Link):
        return name
    try:
        return LINKS[str(name).lower()]
    except KeyError:
        raise DomainError(f"unknown link {name!r}; expected one of {sorted(LINKS)}") from None


# ---------------------------------------------------------------------------
# parameter vectors


@dataclass(frozen=True)
class ParamVector:
    """Distribution parameters on the natural scale; unused slots are None."""

    mu: object
    sigma: object = None
    nu: object = None
    tau: object = None

    def values(self) -> tuple:
        return tuple(v for v in (self.mu, self.sigma, self.nu, self.tau) if v is not None)

    def as_dict(self) -> dict:
        return {k: v for k, v in zip(PARAM_NAMES, (self.mu, self.sigma, self.nu, self.tau)) if v is not None}


def _as_params(family: "Family", theta) -> tuple:
    if isinstance(theta, ParamVector):
        vals = theta.values()
    elif isinstance(theta, Mapping):
        vals = tuple(theta[k] for k in family.param_names)
    else:
        vals = tuple(theta)
    if len(vals) != family.n_params:
        raise DomainError(
            f"{family.name} takes {family.n_params} parameters, got {len(vals)}"
        )
    return tuple(np.asarray(v, dtype=float) for v in vals)


# ---------------------------------------------------------------------------
# families


class Family:
    """Base class.  Methods take parameters as positional arrays."""

    name: str = ""
    param_names: tuple = ()
    default_links: tuple = ()
    positive_support = False

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def __repr__(self):
        return f"{self.name}()"

    def __eq__(self, other):
        return isinstance(other, Family) and other.name == self.name

    def __hash__(self):
        return hash(self.name)

    # validation -----------------------------------------------------------
    def check_params(self, *params):
        for name, p in zip(self.param_names, params):
            if name in self._positive_params and np.any(~(p > 0)):
                raise DomainError(f"{self.name}: parameter {name} must be > 0")
            if not np.all(np.isfinite(p)):
                raise DomainError(f"{self.name}: parameter {name} must be finite")

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError(f"{self.name}: response must be finite")
        if self.positive_support and np.any(y <= 0):
            raise DomainError(f"{self.name}: response must be > 0")

    _positive_params: tuple = ("sigma",)

    # to be provided by subclasses ------------------------------------------
    def logpdf(self, y, *params):
        raise NotImplementedError

    def cdf(self, y, *params):
        raise NotImplementedError

    def ppf(self, u, *params):
        raise NotImplementedError

    def rvs(self, rng: np.random.Generator, *params, size=None):
        u = rng.random(size=size if size is not None else np.broadcast(*params).shape)
        return self.ppf(u, *params)

    def mean(self, *params):
        raise NotImplementedError

    def dl(self, y, *params) -> list:
        """First derivatives of the log-density, one array per parameter."""
        raise NotImplementedError

    def info(self, *params) -> list:
        """Diagonal of the expected information, one array per parameter."""
        raise NotImplementedError

    def start(self, y) -> tuple:
        """Crude marginal starting values on the natural scale."""
        raise NotImplementedError


class Normal(Family):
    name = "Normal"
    param_names = ("mu", "sigma")
    default_links = (Identity(), Log())

    def logpdf(self, y, mu, sigma):
        r = (y - mu) / sigma
        return -0.5 * math.log(2 * math.pi) - np.log(sigma) - 0.5 * r * r

    def cdf(self, y, mu, sigma):
        return special.ndtr((y - mu) / sigma)

    def ppf(self, u, mu, sigma):
        return mu + sigma * special.ndtri(u)

    def rvs(self, rng, mu, sigma, size=None):
        if size is None:
            size = np.broadcast(mu, sigma).shape
        return mu + sigma * rng.standard_normal(size)

    def mean(self, mu, sigma):
        return np.asarray(mu, dtype=float) + 0.0 * np.asarray(sigma)

    def dl(self, y, mu, sigma):
        r = y - mu
        s2 = sigma * sigma
        return [r / s2, (r * r - s2) / (s2 * sigma)]

    def info(self, mu, sigma):
        s2 = sigma * sigma
        return [1.0 / s2 + 0.0 * mu, 2.0 / s2 + 0.0 * mu]

    def start(self, y):
        return float(np.mean(y)), max(float(np.std(y)), 1e-3 * (abs(float(np.mean(y))) + 1.0))


class LogNormal(Family):
    name = "LogNormal"
    param_names = ("mu", "sigma")
    default_links = (Identity(), Log())
    positive_support = True

    def logpdf(self, y, mu, sigma):
        ly = np.log(y)
        r = (ly - mu) / sigma
        return -0.5 * math.log(2 * math.pi) - np.log(sigma) - ly - 0.5 * r * r

    def cdf(self, y, mu, sigma):
        return special.ndtr((np.log(y) - mu) / sigma)

    def ppf(self, u, mu, sigma):
        return np.exp(mu + sigma * special.ndtri(u))

    def mean(self, mu, sigma):
        return np.exp(mu + 0.5 * np.square(sigma))

    def dl(self, y, mu, sigma):
        r = np.log(y) - mu
        s2 = sigma * sigma
        return [r / s2, (r * r - s2) / (s2 * sigma)]

    def info(self, mu, sigma):
        s2 = sigma * sigma
        return [1.0 / s2 + 0.0 * mu, 2.0 / s2 + 0.0 * mu]

    def start(self, y):
        ly = np.log(y)
        return float(np.mean(ly)), max(float(np.std(ly)), 1e-3)


class Gamma(Family):
    name = "Gamma"
    param_names = ("mu", "sigma")
    default_links = (Log(), Log())
    positive_support = True
    _positive_params = ("mu", "sigma")

    def logpdf(self, y, mu, sigma):
        a = 1.0 / (sigma * sigma)
        scale = mu / a
        return (a - 1.0) * np.log(y) - y / scale - special.gammaln(a) - a * np.log(scale)

    def cdf(self, y, mu, sigma):
        a = 1.0 / (sigma * sigma)
        return special.gammainc(a, y * a / mu)

    def ppf(self, u, mu, sigma):
        a = 1.0 / (sigma * sigma)
        x = special.gammaincinv(a, u)
        if not np.all(np.isfinite(x)):
            raise ConvergenceError("Gamma quantile inversion failed")
        return x * mu / a

    def rvs(self, rng, mu, sigma, size=None):
        # numpy's gamma sampler is Marsaglia-Tsang rejection
        a = 1.0 / (np.asarray(sigma) ** 2)
        if size is None:
            size = np.broadcast(mu, sigma).shape
        return rng.gamma(a, np.asarray(mu) / a, size=size)

    def mean(self, mu, sigma):
        return np.asarray(mu, dtype=float) + 0.0 * np.asarray(sigma)

    def dl(self, y, mu, sigma):
        s2 = sigma * sigma
        dmu = (y - mu) / (s2 * mu * mu)
        dsig = (2.0 / (s2 * sigma)) * (
            y / mu - np.log(y) + np.log(mu) + np.log(s2) - 1.0 + special.digamma(1.0 / s2)
        )
        return [dmu, dsig]

    def info(self, mu, sigma):
        s2 = sigma * sigma
        i_mu = 1.0 / (s2 * mu * mu)
        i_sig = 4.0 / (s2 * s2 * s2) * special.polygamma(1, 1.0 / s2) - 4.0 / (s2 * s2)
        # guard against cancellation for tiny sigma (i_sig -> 2/sigma^2)
        i_sig = np.where(i_sig > 0, i_sig, 2.0 / s2)
        return [i_mu, i_sig]

    def start(self, y):
        m = float(np.mean(y))
        cv = float(np.std(y)) / m
        return m, max(cv, 1e-3)


class Dagum(Family):
    name = "Dagum"
    param_names = ("mu", "sigma", "nu")
    default_links = (Log(), Log(), Log())
    positive_support = True
    _positive_params = ("mu", "sigma", "nu")

    def logpdf(self, y, mu, sigma, nu):
        t = np.log(y / mu)
        st = sigma * t
        return (
            np.log(sigma) + np.log(nu) - np.log(y) + nu * st - (nu + 1.0) * np.logaddexp(0.0, st)
        )

    def cdf(self, y, mu, sigma, nu):
        st = sigma * np.log(y / mu)
        return np.exp(-nu * np.logaddexp(0.0, -st))

    def ppf(self, u, mu, sigma, nu):
        u = np.asarray(u, dtype=float)
        return mu * np.power(np.expm1(-np.log(u) / nu), -1.0 / sigma)

    def mean(self, mu, sigma, nu):
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 1):
            raise MomentUndefined("Dagum mean requires sigma > 1")
        return mu * np.exp(
            special.gammaln(nu + 1.0 / sigma) + special.gammaln(1.0 - 1.0 / sigma) - special.gammaln(nu)
        )

    def dl(self, y, mu, sigma, nu):
        t = np.log(y / mu)
        st = sigma * t
        v = special.expit(st)  # z / (1 + z), z = (y/mu)^sigma
        dmu = (sigma / mu) * ((nu + 1.0) * v - nu)
        dsig = 1.0 / sigma + t * (nu - (nu + 1.0) * v)
        dnu = 1.0 / nu + st - np.logaddexp(0.0, st)
        return [dmu, dsig, dnu]

    def info(self, mu, sigma, nu):
        r = nu / (nu + 2.0)
        i_mu = sigma * sigma * r / (mu * mu)
        d = special.digamma(nu + 1.0) - special.digamma(2.0)
        tg = special.polygamma(1, nu + 1.0) + special.polygamma(1, 2.0)
        i_sig = (1.0 + r * (d * d + tg)) / (sigma * sigma)
        i_nu = 1.0 / (nu * nu) + 0.0 * mu
        return [i_mu + 0.0 * nu, i_sig + 0.0 * mu, i_nu + 0.0 * sigma]

    def start(self, y):
        med = float(np.median(y))
        ly = np.log(y)
        s = float(np.std(ly))
        # logistic log-scale sd is pi / (sigma sqrt 3) when nu = 1
        sigma = max(math.pi / (math.sqrt(3.0) * max(s, 1e-3)), 1.05)
        return med, sigma, 1.0


FAMILIES = {f.name.lower(): f for f in (Normal(), LogNormal(), Gamma(), Dagum())}


def get_family(name) -> Family:
    if isinstance(name, Family):
        return name
    if isinstance(name, type) and issubclass(name, Family):
        name = name.name
    try:
        return FAMILIES[str(name).lower()]
    except KeyError:
        raise DomainError(
            f"unknown family {name!r}; expected one of {[f.name for f in FAMILIES.values()]}"
        ) from None


# ---------------------------------------------------------------------------
# functional API


def _checked(family, y, theta):
    params = _as_params(family, theta)
    family.check_params(*params)
    if y is not None:
        family.check_support(y)
    return params


def log_pdf(family: Family, y, theta):
    """Log-density of ``y`` under ``family`` with parameters ``theta``."""
    family = get_family(family)
    params = _checked(family, y, theta)
    out = family.logpdf(np.asarray(y, dtype=float), *params)
    return float(out) if np.ndim(out) == 0 else out


def cdf(family: Family, y, theta):
    family = get_family(family)
    params = _checked(family, y, theta)
    out = family.cdf(np.asarray(y, dtype=float), *params)
    return float(out) if np.ndim(out) == 0 else out


def quantile(family: Family, u, theta):
    family = get_family(family)
    params = _checked(family, None, theta)
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("quantile level must lie strictly in (0, 1)")
    out = family.ppf(u, *params)
    return float(out) if np.ndim(out) == 0 else out


def sample(family: Family, theta, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws; deterministic given the state of ``rng``."""
    family = get_family(family)
    if n < 1:
        raise DomainError("sample size must be >= 1")
    params = _checked(family, None, theta)
    return np.asarray(family.rvs(rng, *params, size=n), dtype=float)


def mean_of(family: Family, theta):
    family = get_family(family)
    params = _as_params(family, theta)
    if family.name in ("Normal", "LogNormal"):
        # sigma = 0 is admitted as the point-mass limit
        if np.any(params[1] < 0):
            raise DomainError("sigma must be >= 0")
    else:
        family.check_params(*params)
    out = family.mean(*params)
    return float(out) if np.ndim(out) == 0 else out


def score(family: Family, y, theta) -> dict:
    """Gradient of the log-density with respect to each parameter."""
    family = get_family(family)
    params = _checked(family, y, theta)
    grads = family.dl(np.asarray(y, dtype=float), *params)
    return {
        name: (float(g) if np.ndim(g) == 0 else g)
        for name, g in zip(family.param_names, grads)
    }


# ---------------------------------------------------------------------------
# marginal distribution selection


def fit_marginal(family: Family, y) -> tuple[np.ndarray, float]:
    """Intercept-only ML fit on the default link scale.

    Nelder-Mead from moment-based starting values, then a quasi-Newton polish
    using the analytic score.  Returns ``(theta, loglik)``.
    """
    family = get_family(family)
    y = np.asarray(y, dtype=float)
    family.check_support(y)
    links = family.default_links

    def unpack(eta):
        return [lk.inverse(e) for lk, e in zip(links, eta)]

    def nll(eta):
        th = unpack(eta)
        with np.errstate(all="ignore"):
            val = -np.sum(family.logpdf(y, *th))
        return val if np.isfinite(val) else 1e300

    def grad(eta):
        th = unpack(eta)
        with np.errstate(all="ignore"):
            d = family.dl(y, *th)
        return -np.array(
            [np.sum(di) * float(lk.dtheta_deta(e)) for di, lk, e in zip(d, links, eta)]
        )

    eta0 = np.array([float(lk.apply(s)) for lk, s in zip(links, family.start(y))])
    nm = optimize.minimize(
        nll, eta0, method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000 * len(eta0)},
    )
    pol = optimize.minimize(nll, nm.x, jac=grad, method="BFGS", options={"gtol": 1e-8})
    best = pol if pol.fun <= nm.fun else nm
    if not np.isfinite(best.fun) or best.fun >= 1e300:
        raise ConvergenceError(f"marginal {family.name} fit failed")
    theta = np.array([float(v) for v in unpack(best.x)])
    return theta, -float(best.fun)


def select_distribution(y, candidates: Sequence, penalty: float = 2.0) -> pd.DataFrame:
    """Rank candidate families by GAIC on an intercept-only ML fit.

    Families whose support excludes some observations are skipped with a
    warning; per-candidate fitting failures are recorded in the ``error``
    column rather than raised.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise DomainError("select_distribution needs a nonempty sample")
    n = y.size
    rows = []
    for cand in candidates:
        fam = get_family(cand)
        if fam.positive_support and np.any(y <= 0):
            warnings.warn(f"{fam.name} skipped: data contain nonpositive values", stacklevel=2)
            continue
        df = fam.n_params
        try:
            theta, ll = fit_marginal(fam, y)
        except (ConvergenceError, DomainError, FloatingPointError) as exc:
            rows.append(dict(family=fam.name, gdev=np.nan, df=df, gaic=np.nan,
                             bic=np.nan, params=None, error=str(exc)))
            continue
        gdev = -2.0 * ll
        rows.append(dict(
            family=fam.name, gdev=gdev, df=df, gaic=gdev + penalty * df,
            bic=gdev + math.log(n) * df,
            params=dict(zip(fam.param_names, theta.tolist())), error=None,
        ))
    table = pd.DataFrame(rows, columns=["family", "gdev", "df", "gaic", "bic", "params", "error"])
    return table.sort_values("gaic", na_position="last", kind="mergesort").reset_index(drop=True)
