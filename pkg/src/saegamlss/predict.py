"""Prediction of area functionals from a fitted model.

Non-sampled units get parameters from the fitted linear predictors (areas
without sample units get a zero area effect).  The area functional is then
evaluated on the completed population: observed sample values plus either
expected values (closed form for means) or Monte Carlo draws.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from .distributions import Identity
from .errors import DomainError, SpecError
from .fit import FittedModel
from .model import Dataset, build_design, nonsampled
from .rng import substream

# stream tags for keyed substreams
MC_STREAM = 11


@dataclass(frozen=True)
class FixedLine:
    value: float


@dataclass(frozen=True)
class FractionOfMedian:
    fraction: float = 0.6
    scope: str = "global"

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise DomainError("fraction must lie in (0, 1)")
        if self.scope not in ("global", "area"):
            raise DomainError("scope must be 'global' or 'area'")


@dataclass(frozen=True)
class AreaFunctional:
    """Target parameter H_j = zeta(values of area j).

    Use the constructors :meth:`mean`, :meth:`poverty_rate`,
    :meth:`quantile` and :meth:`custom`.
    """

    kind: str
    line: FixedLine | FractionOfMedian | None = None
    u: float | None = None
    func: Callable | None = None
    name: str = ""

    @classmethod
    def mean(cls):
        return cls("mean", name="mean")

    @classmethod
    def poverty_rate(cls, line=None):
        line = FractionOfMedian() if line is None else line
        if isinstance(line, (int, float)):
            line = FixedLine(float(line))
        return cls("poverty_rate", line=line, name="poverty_rate")

    @classmethod
    def quantile(cls, u: float):
        if not 0 < u < 1:
            raise DomainError("quantile level must lie in (0, 1)")
        return cls("quantile", u=float(u), name=f"quantile_{u:g}")

    @classmethod
    def custom(cls, name: str, func: Callable):
        return cls("custom", func=func, name=name)

    @property
    def is_mean(self) -> bool:
        return self.kind == "mean"

    def evaluate(self, values: np.ndarray, area: np.ndarray, J: int) -> np.ndarray:
        """Evaluate on a complete population vector with area codes 0..J-1."""
        values = np.asarray(values, dtype=float)
        counts = np.bincount(area, minlength=J).astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            if self.kind == "mean":
                return np.bincount(area, weights=values, minlength=J) / counts
            if self.kind == "poverty_rate":
                if isinstance(self.line, FixedLine):
                    below = values < self.line.value
                elif self.line.scope == "global":
                    below = values < self.line.fraction * np.median(values)
                else:
                    med = _area_apply(values, area, J, np.median)
                    below = values < self.line.fraction * med[area]
                return np.bincount(area, weights=below.astype(float), minlength=J) / counts
        if self.kind == "quantile":
            return _area_apply(values, area, J, lambda v: np.quantile(v, self.u))
        if self.kind == "custom":
            return _area_apply(values, area, J, lambda v: float(self.func(v)))
        raise DomainError(f"unknown functional {self.kind!r}")


def _area_apply(values, area, J, f):
    order = np.argsort(area, kind="stable")
    bounds = np.searchsorted(area[order], np.arange(J + 1))
    out = np.full(J, np.nan)
    for j in range(J):
        lo, hi = bounds[j], bounds[j + 1]
        if hi > lo:
            out[j] = f(values[order[lo:hi]])
    return out


@dataclass(frozen=True)
class PredictionResult:
    areas: np.ndarray
    h_hat: np.ndarray
    n: np.ndarray
    N: np.ndarray
    mc_draws: np.ndarray | None = None  # L x J

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"area": self.areas, "N_j": self.N, "n_j": self.n, "H_hat": self.h_hat})


class Layout:
    """Index bookkeeping shared by prediction, bootstrap and simulation.

    Output areas are the union of sample and population areas.  ``Xs``/``Xr``
    are design matrices of sample and non-sampled units built with the
    model's coding; ``ms``/``mr`` index the model's areas (-1 if unsampled).
    """

    def __init__(self, sample: Dataset, pop: Dataset, model_areas, builder):
        rest = nonsampled(sample, pop)
        rest_ds = Dataset(rest, area=pop.area, response=None, role="population")
        s_lab = sample.area_labels
        r_lab = rest[pop.area].to_numpy()
        areas = np.array(sorted(set(s_lab.tolist()) | set(r_lab.tolist())), dtype=object)
        try:
            areas = areas.astype(np.asarray(s_lab).dtype)
        except (TypeError, ValueError):
            pass
        lookup = {a: i for i, a in enumerate(areas.tolist())}
        self.areas = areas
        self.J = len(areas)
        self.s_out = np.array([lookup[a] for a in s_lab.tolist()], dtype=np.intp)
        self.r_out = np.array([lookup[a] for a in r_lab.tolist()], dtype=np.intp)
        self.n = np.bincount(self.s_out, minlength=self.J)
        self.N = self.n + np.bincount(self.r_out, minlength=self.J)
        self.Xs, self.ms = builder(sample)
        self.Xr, self.mr = builder(rest_ds)
        self.all_out = np.concatenate([self.s_out, self.r_out])
        # model area -> output area
        self.model_to_out = np.array([lookup.get(a, -1) for a in np.asarray(model_areas).tolist()],
                                     dtype=np.intp)
        self.rest_frame = rest

    @classmethod
    def for_model(cls, model: FittedModel, sample: Dataset, pop: Dataset) -> "Layout":
        def builder(ds):
            d = build_design(ds, model.spec, levels=model.levels, areas=model.areas, check_rank=False)
            return d.X, d.area_index

        return cls(sample, pop, model.areas, builder)

    @property
    def n_rest(self) -> int:
        return int(self.r_out.size)


def predict_units(model: FittedModel, pop: Dataset, sample: Dataset | None = None) -> pd.DataFrame:
    """Fitted distribution parameters for every non-sampled population unit."""
    frame = nonsampled(sample, pop) if sample is not None else pop.frame
    ds = Dataset(frame, area=pop.area, response=None, role="population")
    d = build_design(ds, model.spec, levels=model.levels, areas=model.areas, check_rank=False)
    theta = model.params_for(d.X, d.area_index)
    out = pd.DataFrame({"area": frame[pop.area].to_numpy()})
    for k, v in zip(model.param_names, theta):
        out[k] = np.broadcast_to(v, (len(frame),))
    return out


def _mean_exact(model: FittedModel, lay: Layout, y_s: np.ndarray) -> np.ndarray:
    th = model.params_for(lay.Xr, lay.mr)
    m = np.broadcast_to(model.family.mean(*th), (lay.n_rest,))
    tot = np.bincount(lay.s_out, weights=y_s, minlength=lay.J) + np.bincount(lay.r_out, weights=m, minlength=lay.J)
    return tot / lay.N


def _mc_one(model, lay, y_s, zeta, seed, ell, theta):
    rng = substream(seed, MC_STREAM, ell)
    draws = model.family.rvs(rng, *theta, size=lay.n_rest)
    vals = np.concatenate([y_s, draws])
    return zeta.evaluate(vals, lay.all_out, lay.J)


def _mc(model, lay, y_s, zeta, L, seed, threads=1):
    theta = [np.broadcast_to(t, (lay.n_rest,)) for t in model.params_for(lay.Xr, lay.mr)]
    if lay.n_rest == 0:
        h = zeta.evaluate(y_s, lay.s_out, lay.J)
        return np.tile(h, (L, 1))
    run = lambda ell: _mc_one(model, lay, y_s, zeta, seed, ell, theta)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(run, range(L)))
    else:
        rows = [run(ell) for ell in range(L)]
    return np.vstack(rows)


def predict_area_mc(model: FittedModel, sample: Dataset, pop: Dataset, zeta: AreaFunctional,
                    L: int = 100, seed=0, threads: int = 1, layout: Layout | None = None) -> PredictionResult:
    """Monte Carlo predictor: average of zeta over L completed populations."""
    if L < 1:
        raise DomainError("L must be >= 1")
    lay = layout or Layout.for_model(model, sample, pop)
    draws = _mc(model, lay, sample.y, zeta, L, seed, threads)
    h = draws.mean(axis=0)
    # census areas carry no simulation noise
    census = lay.N == lay.n
    if census.any():
        h[census] = draws[0, census]
    return PredictionResult(lay.areas, h, lay.n, lay.N, draws)


def predict_area_mean_exact(model: FittedModel, sample: Dataset, pop: Dataset,
                            layout: Layout | None = None) -> PredictionResult:
    """Area mean with non-sampled units replaced by their fitted means.

    This is the L -> infinity limit of the MC predictor for zeta = Mean and
    works for any family whose mean exists.
    """
    lay = layout or Layout.for_model(model, sample, pop)
    return PredictionResult(lay.areas, _mean_exact(model, lay, sample.y), lay.n, lay.N)


def predict_area_mean_closed(model: FittedModel, sample: Dataset, pop: Dataset) -> PredictionResult:
    """EBLUP-form mean predictor for a Normal identity-link model.

    The non-sampled part is N_j - n_j times xbar_r beta + gamma_j, with
    xbar_r the non-sampled covariate means.
    """
    if model.family.name != "Normal" or not isinstance(model.spec.params["mu"].link, Identity):
        raise SpecError("closed-form mean predictor needs a Normal family with identity mu link")
    if model.spec.random_params() not in ((), ("mu",)):
        raise SpecError("closed-form mean predictor needs at most a mu random intercept")
    lay = Layout.for_model(model, sample, pop)
    Xr = lay.Xr["mu"]
    cnt_r = lay.N - lay.n
    xbar = np.vstack([np.bincount(lay.r_out, weights=Xr[:, c], minlength=lay.J)
                      for c in range(Xr.shape[1])]).T
    g = np.zeros(lay.J)
    if "mu" in model.gamma:
        ok = lay.model_to_out >= 0
        g[lay.model_to_out[ok]] = model.gamma["mu"][ok]
    rest_total = xbar @ model.beta["mu"] + cnt_r * g
    tot = np.bincount(lay.s_out, weights=sample.y, minlength=lay.J) + rest_total
    return PredictionResult(lay.areas, tot / lay.N, lay.n, lay.N)


def predict_area(model: FittedModel, sample: Dataset, pop: Dataset, zeta: AreaFunctional,
                 L: int = 100, seed=0, method: str = "auto", threads: int = 1) -> PredictionResult:
    """Dispatch: exact expectation for means (``method='auto'``), MC otherwise."""
    if method not in ("auto", "mc", "exact"):
        raise DomainError("method must be 'auto', 'mc' or 'exact'")
    if zeta.is_mean and method in ("auto", "exact"):
        return predict_area_mean_exact(model, sample, pop)
    if method == "exact":
        raise DomainError("exact prediction is only available for the mean")
    return predict_area_mc(model, sample, pop, zeta, L, seed, threads)
