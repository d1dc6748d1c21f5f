"""Battese-Harter-Fuller nested-error EBLUP with optional Box-Cox transform.

The model on the transformed scale is z_ij = x_ij beta + u_j + e_ij with
u_j ~ N(0, sigma2_u) and e_ij ~ N(0, sigma2_e).  Variances are estimated by
maximum likelihood, profiling out beta and sigma2_e so that only the ratio
rho = sigma2_u / sigma2_e is searched numerically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConvergenceError, RankError, SpecError, SupportError
from .model import Dataset, categorical_levels, design_matrix
from .predict import AreaFunctional, Layout, PredictionResult

BOXCOX_GRID = np.round(np.arange(-2.0, 2.0 + 1e-9, 0.05), 10)
SMEAR_NODES = 100


@dataclass(frozen=True)
class Transform:
    """Response transform z = T(y).

    ``boxcox`` works on y / scale (scale is the sample geometric mean) which
    keeps z well conditioned and makes the Jacobian term vanish.
    """

    kind: str = "none"
    lam: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "log", "boxcox"):
            raise SpecError(f"unknown transform {self.kind!r}")

    @property
    def positive(self) -> bool:
        return self.kind != "none"

    def forward(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "none":
            return y
        if self.kind == "log":
            return np.log(y)
        t = y / self.scale
        if self.lam == 0:
            return np.log(t)
        return (t ** self.lam - 1.0) / self.lam

    def inverse(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "none":
            return z
        if self.kind == "log":
            return np.exp(z)
        if self.lam == 0:
            return self.scale * np.exp(z)
        base = np.maximum(self.lam * z + 1.0, 1e-300)
        return self.scale * base ** (1.0 / self.lam)

    def label(self) -> str:
        return f"BoxCox({self.lam:g})" if self.kind == "boxcox" else self.kind


@dataclass(frozen=True)
class BhfFit:
    beta: np.ndarray
    sigma2_u: float
    sigma2_e: float
    u: np.ndarray
    shrinkage: np.ndarray
    areas: np.ndarray
    terms: tuple
    levels: dict
    columns: list
    transform: Transform
    residual_nodes: np.ndarray
    loglik: float
    n: int


def _area_sums(X, z, area, J):
    n_j = np.bincount(area, minlength=J).astype(float)
    Sx = np.column_stack([np.bincount(area, weights=X[:, c], minlength=J) for c in range(X.shape[1])])
    Sz = np.bincount(area, weights=z, minlength=J)
    return n_j, Sx, Sz, X.T @ X, X.T @ z, float(z @ z)


def _profile(rho, stats_):
    n_j, Sx, Sz, XtX, Xtz, ztz = stats_
    c = rho / (1.0 + n_j * rho)
    A = XtX - (Sx * c[:, None]).T @ Sx
    b = Xtz - (Sx * c[:, None]).T @ Sz
    beta = np.linalg.solve(A, b)
    q = ztz - float(np.sum(c * Sz * Sz)) - float(b @ beta)
    n = float(n_j.sum())
    s2e = max(q / n, 1e-300)
    ll = -0.5 * (n * math.log(2 * math.pi * s2e) + float(np.sum(np.log1p(n_j * rho))) + n)
    return ll, beta, s2e


def _bhf_arrays(X, z, area, J):
    """ML fit of the nested-error model; returns (beta, s2u, s2e, u, shrink, loglik)."""
    st = _area_sums(X, z, area, J)
    f = lambda lr: -_profile(math.exp(lr), st)[0]
    res = optimize.minimize_scalar(f, bounds=(math.log(1e-10), math.log(1e6)), method="bounded",
                                   options={"xatol": 1e-10})
    rho = math.exp(res.x)
    ll, beta, s2e = _profile(rho, st)
    ll0, beta0, s2e0 = _profile(0.0, st)
    if ll0 >= ll:
        rho, ll, beta, s2e = 0.0, ll0, beta0, s2e0
    if not math.isfinite(ll):
        raise ConvergenceError("nested-error likelihood is not finite")
    n_j, Sx, Sz = st[0], st[1], st[2]
    shrink = n_j * rho / (1.0 + n_j * rho)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(n_j > 0, shrink * (Sz - Sx @ beta) / np.maximum(n_j, 1), 0.0)
    return beta, rho * s2e, s2e, u, shrink, ll


def _smear_nodes(resid):
    if resid.size <= SMEAR_NODES:
        return np.sort(resid)
    return np.quantile(resid, (np.arange(SMEAR_NODES) + 0.5) / SMEAR_NODES)


def _geomean(y):
    return float(np.exp(np.mean(np.log(y))))


def choose_boxcox(X, y, area, J) -> Transform:
    """Grid search of lambda over [-2, 2] by the Jacobian-adjusted profile likelihood."""
    g = _geomean(y)
    best, best_ll = None, -math.inf
    for lam in BOXCOX_GRID:
        tr = Transform("boxcox", float(lam), g)
        z = tr.forward(y)
        if not np.all(np.isfinite(z)):
            continue
        try:
            ll = _bhf_arrays(X, z, area, J)[5]
        except (np.linalg.LinAlgError, ConvergenceError):
            continue
        # with y scaled by its geometric mean the Jacobian term sum(log y) is 0
        if ll > best_ll:
            best, best_ll = tr, ll
    if best is None:
        raise ConvergenceError("no admissible Box-Cox parameter on the grid")
    return best


def _resolve_transform(transform, y, X, area, J):
    if isinstance(transform, Transform):
        return transform
    kind = "none" if transform is None else str(transform).lower()
    if kind in ("none", "identity"):
        return Transform("none")
    if kind == "log":
        return Transform("log")
    if kind == "boxcox":
        return choose_boxcox(X, y, area, J)
    raise SpecError(f"unknown transform {transform!r}")


def fit_bhf_arrays(X, y, area, areas, transform="none", terms=(), levels=None, columns=None) -> BhfFit:
    y = np.asarray(y, dtype=float)
    J = len(areas)
    positive = transform.positive if isinstance(transform, Transform) else \
        str(transform).lower() not in ("none", "identity")
    if positive and np.any(y <= 0):
        raise SupportError("log and Box-Cox transforms need y > 0")
    tr = _resolve_transform(transform, y, X, area, J)
    z = tr.forward(y)
    if not np.all(np.isfinite(z)):
        raise SupportError("transformed response is not finite")
    beta, s2u, s2e, u, shrink, ll = _bhf_arrays(X, z, area, J)
    resid = z - X @ beta - u[area]
    return BhfFit(beta=beta, sigma2_u=float(s2u), sigma2_e=float(s2e), u=u, shrinkage=shrink,
                  areas=np.asarray(areas), terms=tuple(terms), levels=dict(levels or {}),
                  columns=list(columns or []), transform=tr, residual_nodes=_smear_nodes(resid),
                  loglik=float(ll), n=int(y.size))


def fit_bhf(sample: Dataset, terms=(), transform="none") -> BhfFit:
    """ML fit of the BHF model on ``sample``.

    ``transform`` is ``"none"``, ``"log"``, ``"boxcox"`` (lambda chosen on the
    grid) or a :class:`Transform` with a fixed lambda.
    """
    terms = tuple(terms)
    levels = categorical_levels(sample.frame, terms)
    X, cols = design_matrix(sample.frame, terms, levels)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankError("BHF design is rank deficient")
    areas, area = np.unique(sample.area_labels, return_inverse=True)
    return fit_bhf_arrays(X, sample.y, area, areas, transform, terms, levels, cols)


def bhf_layout(fit: BhfFit, sample: Dataset, pop: Dataset) -> Layout:
    lookup = {a: i for i, a in enumerate(fit.areas.tolist())}

    def builder(ds):
        X, _ = design_matrix(ds.frame, fit.terms, fit.levels)
        idx = np.array([lookup.get(a, -1) for a in ds.area_labels.tolist()], dtype=np.intp)
        return {"mu": X}, idx

    return Layout(sample, pop, fit.areas, builder)


def _unit_eta(fit: BhfFit, lay: Layout):
    u = np.append(fit.u, 0.0)
    return lay.Xr["mu"] @ fit.beta + u[lay.mr]


def unit_predictions(fit: BhfFit, lay: Layout, smearing: bool = True) -> np.ndarray:
    """Predicted values of non-sampled units on the original scale."""
    eta = _unit_eta(fit, lay)
    tr = fit.transform
    if tr.kind == "none" or not smearing:
        return tr.inverse(eta)
    out = np.zeros_like(eta)
    # chunk to bound memory: units x residual nodes
    step = max(1, 2_000_000 // max(fit.residual_nodes.size, 1))
    for a in range(0, eta.size, step):
        blk = eta[a:a + step, None] + fit.residual_nodes[None, :]
        out[a:a + step] = tr.inverse(blk).mean(axis=1)
    return out


def _predict_arrays(fit, lay, y_s, zeta, smearing):
    vals = unit_predictions(fit, lay, smearing)
    if zeta.is_mean:
        tot = np.bincount(lay.s_out, weights=y_s, minlength=lay.J) + np.bincount(lay.r_out, weights=vals, minlength=lay.J)
        return tot / lay.N
    # plug-in: the functional evaluated on observed plus predicted values
    return zeta.evaluate(np.concatenate([y_s, vals]), lay.all_out, lay.J)


def predict_eblup(fit: BhfFit, sample: Dataset, pop: Dataset, zeta: AreaFunctional | None = None,
                  smearing: bool | None = None, layout: Layout | None = None) -> PredictionResult:
    """Composite EBLUP of the area mean (or a plug-in functional).

    Non-sampled units get x beta + u_j back-transformed; with smearing the
    back-transform is averaged over the within-sample residual distribution.
    Smearing defaults to on for the mean and off for other functionals.
    """
    zeta = zeta or AreaFunctional.mean()
    if smearing is None:
        smearing = zeta.is_mean
    lay = layout or bhf_layout(fit, sample, pop)
    h = _predict_arrays(fit, lay, sample.y, zeta, smearing)
    return PredictionResult(lay.areas, h, lay.n, lay.N)
