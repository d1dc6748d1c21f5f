"""Parametric bootstrap MSE for predicted area functionals.

Each replicate draws new area effects from their estimated distribution,
generates a full bootstrap population from the fitted model, records the
true area parameters, refits on the units in the original sample and
predicts again.  The MSE is the average squared prediction error.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .eblup import BhfFit, Transform, _bhf_arrays, _predict_arrays, _smear_nodes, bhf_layout
from .errors import ConvergenceError, DegenerateError, DomainError, RankError, SpecError
from .fit import FitControl, FittedModel, fit_design
from .model import Dataset, build_design
from .predict import AreaFunctional, Layout, _mc, _mean_exact
from .rng import child, substream

BOOT_STREAM = 21
BOOT_MC_STREAM = 22
MC_STREAM_ORIG = 23
MAX_FAIL_SHARE = 0.2

_REFIT_ERRORS = (ConvergenceError, RankError, np.linalg.LinAlgError, FloatingPointError)


@dataclass(frozen=True)
class MseResult:
    areas: np.ndarray
    h_hat: np.ndarray
    mse: np.ndarray
    B: int
    B_eff: int
    n_failed: int
    log_true: np.ndarray | None = None  # B_eff x J
    log_pred: np.ndarray | None = None

    @property
    def rmse(self) -> np.ndarray:
        return np.sqrt(self.mse)

    @property
    def cv(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return 100.0 * self.rmse / np.abs(self.h_hat)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"area": self.areas, "H_hat": self.h_hat, "mse": self.mse,
                             "rmse": self.rmse, "cv_pct": self.cv})


def run_bootstrap(generate, refit_predict, B: int, seed, threads: int = 1):
    """Generic replicate loop.

    ``generate(rng)`` returns ``(y_sample, truth)``; ``refit_predict(y_s, b)``
    returns the bootstrap prediction or raises one of the refit errors.
    Results are collected in replicate order, so the outcome does not
    depend on ``threads``.
    """
    if B < 2:
        raise DomainError("B must be >= 2")

    def one(b):
        rng = substream(seed, BOOT_STREAM, b)
        y_s, truth = generate(rng)
        try:
            pred = refit_predict(y_s, b)
        except _REFIT_ERRORS:
            return truth, None
        if not np.all(np.isfinite(pred)):
            return truth, None
        return truth, pred

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(one, range(B)))
    else:
        out = [one(b) for b in range(B)]
    ok = [(t, p) for t, p in out if p is not None]
    n_failed = B - len(ok)
    if n_failed > MAX_FAIL_SHARE * B:
        raise DegenerateError(f"{n_failed} of {B} bootstrap refits failed")
    truth = np.vstack([t for t, _ in ok])
    pred = np.vstack([p for _, p in ok])
    return truth, pred, n_failed


def _finish(areas, h_hat, truth, pred, B, n_failed, keep_log):
    mse = np.mean((pred - truth) ** 2, axis=0)
    return MseResult(np.asarray(areas), np.asarray(h_hat, dtype=float), mse, B, B - n_failed, n_failed,
                     truth if keep_log else None, pred if keep_log else None)


# ---------------------------------------------------------------------------
# GAMLSS


class GamlssBootstrap:
    """Bootstrap machinery for a fitted GAMLSS, reusable across calls."""

    def __init__(self, model: FittedModel, sample: Dataset, pop: Dataset, zeta: AreaFunctional,
                 L: int = 100, method: str = "auto", ctrl: FitControl | None = None,
                 layout: Layout | None = None):
        if method not in ("auto", "mc", "exact"):
            raise DomainError("method must be 'auto', 'mc' or 'exact'")
        self.model, self.zeta, self.L = model, zeta, L
        self.exact = zeta.is_mean and method != "mc"
        if method == "exact" and not zeta.is_mean:
            raise DomainError("exact prediction is only available for the mean")
        self.lay = layout or Layout.for_model(model, sample, pop)
        self.design = build_design(sample, model.spec, levels=model.levels, areas=model.areas,
                                   check_rank=False)
        self.ctrl = ctrl or FitControl()
        self.y_s = sample.y

    def predict(self, model, y_s, seed, key):
        if self.exact:
            return _mean_exact(model, self.lay, y_s)
        return _mc(model, self.lay, y_s, self.zeta, self.L, child(seed, *key)).mean(axis=0)

    def generate(self, rng):
        m, lay = self.model, self.lay
        fam = m.family
        th_s, th_r = [], []
        for k, lk in zip(m.param_names, m.spec.links):
            es = lay.Xs[k] @ m.beta[k]
            er = lay.Xr[k] @ m.beta[k]
            if k in m.sigma2:
                g = math.sqrt(m.sigma2[k]) * rng.standard_normal(lay.J)
                es = es + g[lay.s_out]
                er = er + g[lay.r_out]
            th_s.append(lk.inverse(es))
            th_r.append(lk.inverse(er))
        y_s = np.asarray(fam.rvs(rng, *th_s, size=lay.s_out.size), dtype=float)
        y_r = np.asarray(fam.rvs(rng, *th_r, size=lay.n_rest), dtype=float)
        truth = self.zeta.evaluate(np.concatenate([y_s, y_r]), lay.all_out, lay.J)
        return y_s, truth

    def refit_predict(self, y_s, b, seed):
        m = fit_design(y_s, self.design, self.model.spec, self.ctrl, start=self.model)
        return self.predict(m, y_s, seed, (BOOT_MC_STREAM, b))

    def run(self, B, seed, threads=1, keep_log=True, h_hat=None) -> MseResult:
        if h_hat is None:
            h_hat = self.predict(self.model, self.y_s, seed, (MC_STREAM_ORIG,))
        truth, pred, nf = run_bootstrap(self.generate, lambda y, b: self.refit_predict(y, b, seed),
                                        B, seed, threads)
        return _finish(self.lay.areas, h_hat, truth, pred, B, nf, keep_log)


def bootstrap_mse(model: FittedModel, sample: Dataset, pop: Dataset, zeta: AreaFunctional,
                  B: int = 200, L: int = 100, seed=0, threads: int = 1, ctrl: FitControl | None = None,
                  method: str = "auto", keep_log: bool = True) -> MseResult:
    """Parametric bootstrap MSE of the GAMLSS predictor of ``zeta``.

    Replicate ``b`` uses the substream keyed ``(seed, b)``; refits are warm
    started at ``model`` and replicates whose refit fails are dropped and
    counted.  More than 20% failures raise :class:`DegenerateError`.
    """
    if not model.converged:
        raise SpecError("bootstrap needs a converged model")
    boot = GamlssBootstrap(model, sample, pop, zeta, L, method, ctrl)
    return boot.run(B, seed, threads, keep_log)


# ---------------------------------------------------------------------------
# EBLUP


class BhfBootstrap:
    """Parametric bootstrap for the BHF EBLUP on the transformed scale.

    The transform parameter stays fixed at its estimate in the refits.
    """

    def __init__(self, fit: BhfFit, sample: Dataset, pop: Dataset, zeta: AreaFunctional,
                 smearing: bool | None = None, layout: Layout | None = None):
        self.fit, self.zeta = fit, zeta
        self.smearing = zeta.is_mean if smearing is None else smearing
        self.lay = layout or bhf_layout(fit, sample, pop)
        self.y_s = sample.y

    def generate(self, rng):
        f, lay = self.fit, self.lay
        u = math.sqrt(f.sigma2_u) * rng.standard_normal(lay.J)
        se = math.sqrt(f.sigma2_e)
        zs = lay.Xs["mu"] @ f.beta + u[lay.s_out] + se * rng.standard_normal(lay.s_out.size)
        zr = lay.Xr["mu"] @ f.beta + u[lay.r_out] + se * rng.standard_normal(lay.n_rest)
        y_s = f.transform.inverse(zs)
        y_r = f.transform.inverse(zr)
        truth = self.zeta.evaluate(np.concatenate([y_s, y_r]), lay.all_out, lay.J)
        return y_s, truth

    def refit(self, y_s) -> BhfFit:
        f, lay = self.fit, self.lay
        X = lay.Xs["mu"]
        z = f.transform.forward(y_s)
        if not np.all(np.isfinite(z)):
            raise ConvergenceError("bootstrap response outside the transform domain")
        beta, s2u, s2e, u, shrink, ll = _bhf_arrays(X, z, lay.ms, len(f.areas))
        resid = z - X @ beta - u[lay.ms]
        return replace(f, beta=beta, sigma2_u=float(s2u), sigma2_e=float(s2e), u=u, shrinkage=shrink,
                       residual_nodes=_smear_nodes(resid), loglik=float(ll))

    def predict(self, fit, y_s):
        return _predict_arrays(fit, self.lay, y_s, self.zeta, self.smearing)

    def run(self, B, seed, threads=1, keep_log=True, h_hat=None) -> MseResult:
        if h_hat is None:
            h_hat = self.predict(self.fit, self.y_s)
        truth, pred, nf = run_bootstrap(self.generate, lambda y, b: self.predict(self.refit(y), y),
                                        B, seed, threads)
        return _finish(self.lay.areas, h_hat, truth, pred, B, nf, keep_log)


def bootstrap_mse_eblup(fit: BhfFit, sample: Dataset, pop: Dataset, zeta: AreaFunctional | None = None,
                        B: int = 200, seed=0, threads: int = 1, smearing: bool | None = None,
                        keep_log: bool = True) -> MseResult:
    """Parametric bootstrap MSE of the EBLUP, same replicate scheme as the GAMLSS one."""
    zeta = zeta or AreaFunctional.mean()
    return BhfBootstrap(fit, sample, pop, zeta, smearing).run(B, seed, threads, keep_log)
