"""Model-based and design-based simulation harness.

Model-based scenarios regenerate the population responses every replicate
(covariates stay fixed), draw a stratified SRSWOR sample and compare the
Direct, GAMLSS and EBLUP estimators of each area parameter.  The
design-based protocol keeps a user-supplied population fixed and only
redraws samples.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from .distributions import Dagum, LogNormal, Normal
from .eblup import Transform, bhf_layout, fit_bhf_arrays, _predict_arrays
from .errors import ConfigError, ConvergenceError, DomainError, RankError
from .fit import FitControl, fit_design
from .model import Dataset, ModelSpec, ParamSpec, build_design
from .mse import BhfBootstrap, GamlssBootstrap
from .predict import AreaFunctional, Layout, _mc, _mean_exact
from .rng import child, substream

COV_STREAM = 31
REP_STREAM = 32
SAMPLE_STREAM = 33
BOOT_SIM_STREAM = 34
MC_SIM_STREAM = 35

METRIC_KEYS = ("ARB", "AARB", "ACV", "ARRMSE", "ACVR", "AEFF", "ATMSE", "ABMSE", "PCR")
ESTIMATORS = ("Direct", "GAMLSS", "EBLUP")


# ---------------------------------------------------------------------------
# scenario definitions


@dataclass(frozen=True)
class Scenario:
    """Data-generating process plus the estimators' model choices."""

    name: str
    target: str  # "mean" or "poverty_rate"
    spec: ModelSpec
    eblup_terms: tuple
    eblup_transform: str
    generate: object  # (x1, x2, area, J, rng) -> y

    @property
    def zeta(self) -> AreaFunctional:
        return AreaFunctional.mean() if self.target == "mean" else AreaFunctional.poverty_rate()


def _gen_a(sd_u, sd_e):
    def g(x1, x2, area, J, rng):
        u = rng.normal(0.0, sd_u, J)
        return 100.0 + 4.0 * x1 + u[area] + rng.normal(0.0, sd_e, x1.size)
    return g


def _gen_b(sd_s):
    def g(x1, x2, area, J, rng):
        gm = rng.normal(0.0, 6.0, J)
        gs = rng.normal(0.0, sd_s, J)
        w = gs[area] + 0.1 * x2
        return 100.0 + 10.0 * x1 + 8.0 * x2 + gm[area] + w * rng.normal(0.0, 22.0, x1.size)
    return g


def _gen_c(sd_m, sd_s):
    def g(x1, x2, area, J, rng):
        gm = rng.normal(0.0, sd_m, J)
        gs = rng.normal(0.0, sd_s, J)
        mu = 7.0 + x1 + gm[area]
        sigma = np.exp(-2.0 + 0.5 * x2 + gs[area])
        return np.exp(mu + sigma * rng.standard_normal(x1.size))
    return g


def _gen_d(kind):
    def g(x1, x2, area, J, rng):
        gm = rng.normal(0.0, 0.15, J)
        mu = np.exp(3.0 + 1.5 * x1 + gm[area])
        if kind == 1:
            sigma = np.full(x1.size, 3.4)
        else:
            gs = rng.normal(0.0, 0.1, J)
            sigma = np.exp(1.2 + 0.1 * x2 + gs[area])
        nu = np.full(x1.size, 0.6) if kind == 2 else np.exp(-0.4 + 0.1 * x2)
        return Dagum().rvs(rng, mu, sigma, nu, size=x1.size)
    return g


def _P(terms=(), re=False, link=None):
    return ParamSpec(tuple(terms), link, re)


def _scenarios() -> dict:
    out = {}
    for i, (su, se) in enumerate([(4, 20), (6, 22), (8, 24)], 1):
        out[f"A{i}"] = Scenario(f"A{i}", "mean", ModelSpec(Normal(), {"mu": _P(["x1"], True)}),
                                ("x1",), "none", _gen_a(su, se))
    for i, ss in enumerate([0.8, 1.0, 1.2], 1):
        out[f"B{i}"] = Scenario(f"B{i}", "mean",
                                ModelSpec(Normal(), {"mu": _P(["x1", "x2"], True), "sigma": _P(["x2"], True)}),
                                ("x1", "x2"), "none", _gen_b(ss))
    for i, (sm, ss) in enumerate([(0.6, 0.2), (0.4, 0.3), (0.6, 0.4)], 1):
        out[f"C{i}"] = Scenario(f"C{i}", "mean",
                                ModelSpec(LogNormal(), {"mu": _P(["x1"], True), "sigma": _P(["x2"], True)}),
                                ("x1",), "boxcox", _gen_c(sm, ss))
    d_specs = {
        1: {"mu": _P(["x1"], True), "sigma": _P(), "nu": _P(["x2"])},
        2: {"mu": _P(["x1"], True), "sigma": _P(["x2"], True), "nu": _P()},
        3: {"mu": _P(["x1"], True), "sigma": _P(["x2"], True), "nu": _P(["x2"])},
    }
    for i in (1, 2, 3):
        out[f"D{i}"] = Scenario(f"D{i}", "poverty_rate", ModelSpec(Dagum(), d_specs[i]),
                                ("x1",), "boxcox", _gen_d(i))
    return out


SCENARIOS = _scenarios()


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulation settings; defaults are the full-scale design."""

    scenario: str = "A1"
    N_total: int = 50_000
    J: int = 50
    n_min: int = 4
    n_max: int = 61
    T: int = 500
    B: int = 200
    L: int = 100
    seed: int = 0
    estimators: tuple = ESTIMATORS
    smearing: bool = True
    threads: int = 1
    ctrl: FitControl = field(default_factory=FitControl)

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad or not self.estimators:
            raise ConfigError(f"estimators must be a nonempty subset of {ESTIMATORS}")
        if self.J < 2 or self.N_total % self.J:
            raise ConfigError("N_total must be a positive multiple of J >= 2")
        if not 1 <= self.n_min <= self.n_max:
            raise ConfigError("need 1 <= n_min <= n_max")
        if self.n_max > self.N_total // self.J:
            raise ConfigError("n_j exceeds N_j")
        if self.T < 1 or self.B < 0 or self.B == 1 or self.L < 1:
            raise ConfigError("need T >= 1, B = 0 or B >= 2, L >= 1")

    @classmethod
    def desk(cls, scenario: str, **kw) -> "ScenarioConfig":
        base = dict(scenario=scenario, N_total=20_000, J=25, T=100, B=100, L=100)
        base.update(kw)
        return cls(**base)

    @property
    def N_j(self) -> int:
        return self.N_total // self.J

    def allocation(self) -> np.ndarray:
        """Fixed n_j vector: rounded equally spaced values from n_min to n_max."""
        return np.round(np.linspace(self.n_min, self.n_max, self.J)).astype(int)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        return d


# ---------------------------------------------------------------------------
# populations and samples


@dataclass(frozen=True)
class GeneratedPopulation:
    data: Dataset
    truth: np.ndarray
    areas: np.ndarray


def fixed_covariates(config: ScenarioConfig) -> pd.DataFrame:
    rng = substream(config.seed, COV_STREAM)
    N = config.N_total
    area = np.repeat(np.arange(1, config.J + 1), config.N_j)
    return pd.DataFrame({"unit_id": np.arange(N), "area": area,
                         "x1": rng.standard_normal(N), "x2": rng.standard_normal(N)})


def generate_population(config: ScenarioConfig, t: int = 0, rng: np.random.Generator | None = None,
                        covariates: pd.DataFrame | None = None) -> GeneratedPopulation:
    """Population of replicate ``t``: fixed covariates, fresh effects and errors."""
    sc = SCENARIOS.get(config.scenario)
    if sc is None:
        raise ConfigError(f"unknown scenario {config.scenario!r}")
    frame = (covariates if covariates is not None else fixed_covariates(config)).copy()
    rng = rng or substream(config.seed, REP_STREAM, t)
    area_code = frame["area"].to_numpy() - 1
    frame["y"] = sc.generate(frame["x1"].to_numpy(), frame["x2"].to_numpy(), area_code, config.J, rng)
    truth = sc.zeta.evaluate(frame["y"].to_numpy(), area_code, config.J)
    return GeneratedPopulation(Dataset(frame, unit_id="unit_id", role="population"), truth,
                               np.arange(1, config.J + 1))


def draw_sample(pop: Dataset, n_alloc, rng: np.random.Generator) -> Dataset:
    """Stratified SRSWOR with ``n_alloc[j]`` units from the j-th sorted area."""
    frame = pop.frame
    labels = frame[pop.area].to_numpy()
    areas, code = np.unique(labels, return_inverse=True)
    n_alloc = np.asarray(n_alloc, dtype=int)
    if n_alloc.size != areas.size:
        raise ConfigError("allocation length differs from the number of areas")
    order = np.argsort(code, kind="stable")
    bounds = np.searchsorted(code[order], np.arange(areas.size + 1))
    picks = []
    for j in range(areas.size):
        members = order[bounds[j]:bounds[j + 1]]
        if n_alloc[j] > members.size:
            raise ConfigError(f"n_j = {n_alloc[j]} exceeds N_j = {members.size} in area {areas[j]!r}")
        picks.append(np.sort(rng.choice(members, size=n_alloc[j], replace=False)))
    idx = np.concatenate(picks)
    return Dataset(frame.iloc[idx].reset_index(drop=True), area=pop.area, response=pop.response,
                   unit_id=pop.unit_id)


# ---------------------------------------------------------------------------
# direct estimator


def _weighted_median(y, w):
    o = np.argsort(y)
    cw = np.cumsum(w[o])
    return float(y[o][np.searchsorted(cw, 0.5 * cw[-1])])


def direct_estimates(sample: Dataset, N_j: np.ndarray, zeta: AreaFunctional, areas):
    """Horvitz-Thompson area estimates and their variance under SRSWOR.

    For poverty rates the line is estimated from the whole sample with
    weights N_j / n_j.
    """
    lookup = {a: i for i, a in enumerate(np.asarray(areas).tolist())}
    code = np.array([lookup[a] for a in sample.area_labels.tolist()])
    J = len(lookup)
    y = sample.y
    n = np.bincount(code, minlength=J).astype(float)
    f = n / N_j
    if zeta.is_mean:
        est = np.bincount(code, weights=y, minlength=J) / n
        ss = np.bincount(code, weights=(y - est[code]) ** 2, minlength=J)
        with np.errstate(invalid="ignore", divide="ignore"):
            s2 = ss / (n - 1)
        var = (1 - f) * s2 / n
    elif zeta.kind == "poverty_rate":
        w = (N_j / n)[code]
        line = zeta.line
        if hasattr(line, "value"):
            z = line.value
            below = y < z
        elif line.scope == "global":
            below = y < line.fraction * _weighted_median(y, w)
        else:
            meds = np.array([np.median(y[code == j]) for j in range(J)])
            below = y < line.fraction * meds[code]
        est = np.bincount(code, weights=below.astype(float), minlength=J) / n
        with np.errstate(invalid="ignore", divide="ignore"):
            var = (1 - f) * est * (1 - est) / (n - 1)
    else:
        raise DomainError("direct estimator supports means and poverty rates")
    return est, var


# ---------------------------------------------------------------------------
# metrics


def _finite_mean(a, axis):
    a = np.where(np.isfinite(a), a, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(a, axis=axis)


def compute_metrics(truth, est, mse=None, direct_mse=None, direct_est=None) -> dict:
    """Performance measures for one estimator from J x T arrays.

    ``truth`` holds the per-replicate true values.  Relative bias averages
    (H_hat - H) / H over replicates.  CV-type terms with zero or undefined
    denominators are dropped from the averages and counted in
    ``n_nonfinite``.  ACVR and AEFF need the direct estimator's MSE.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    est = np.atleast_2d(np.asarray(est, dtype=float))
    if np.any(truth == 0):
        raise DomainError("relative measures need nonzero true values")
    rel = (est - truth) / truth
    rb = rel.mean(axis=1)
    out = {k: None for k in METRIC_KEYS}
    out["ARB"] = float(100 * rb.mean())
    out["AARB"] = float(100 * np.abs(rb).mean())
    out["ATMSE"] = float(np.mean((est - truth) ** 2))
    n_bad = 0
    if mse is not None:
        mse = np.atleast_2d(np.asarray(mse, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            cv = np.sqrt(mse) / est
            rr = mse / est ** 2
        n_bad += int(np.sum(~np.isfinite(cv)))
        out["ACV"] = float(100 * np.nanmean(_finite_mean(cv, 1)))
        out["ARRMSE"] = float(100 * np.nanmean(np.sqrt(_finite_mean(rr, 1))))
        out["ABMSE"] = float(np.mean(mse))
        out["PCR"] = float(100 * np.mean(np.abs(est - truth) <= 1.96 * np.sqrt(mse)))
        if direct_mse is not None and direct_est is not None:
            dmse = np.atleast_2d(np.asarray(direct_mse, dtype=float))
            dest = np.atleast_2d(np.asarray(direct_est, dtype=float))
            with np.errstate(divide="ignore", invalid="ignore"):
                cv_dir = np.sqrt(dmse) / dest
                red = 1.0 - cv / cv_dir
                eff = mse / dmse
            n_bad += int(np.sum(~np.isfinite(red)))
            out["ACVR"] = float(100 * np.nanmean(_finite_mean(red, 1)))
            out["AEFF"] = float(100 * np.nanmean(np.sqrt(_finite_mean(eff, 1))))
    out["n_nonfinite"] = n_bad
    return out


# ---------------------------------------------------------------------------
# replicate engine


@dataclass(frozen=True)
class _Setup:
    spec: ModelSpec
    eblup_terms: tuple
    eblup_transform: str
    zeta: AreaFunctional
    estimators: tuple
    B: int
    L: int
    smearing: bool
    ctrl: FitControl
    seed: int


def _estimate(setup: _Setup, pop: Dataset, sample: Dataset, areas, t: int) -> dict:
    """All estimators on one sample; returns {name: (est, mse)} on ``areas``."""
    out = {}
    zeta = setup.zeta
    N_j = pop.frame.groupby(pop.area).size().reindex(areas).to_numpy(dtype=float)
    if "Direct" in setup.estimators:
        out["Direct"] = direct_estimates(sample, N_j, zeta, areas)
    if "GAMLSS" in setup.estimators:
        design = build_design(sample, setup.spec)
        model = fit_design(sample.y, design, setup.spec, setup.ctrl)
        lay = Layout.for_model(model, sample, pop)
        boot = GamlssBootstrap(model, sample, pop, zeta, setup.L, "auto", setup.ctrl, lay)
        mc_seed = child(setup.seed, MC_SIM_STREAM, t)
        h = boot.predict(model, sample.y, mc_seed, ())
        mse = None
        if setup.B:
            mse = boot.run(setup.B, child(setup.seed, BOOT_SIM_STREAM, t, 1), keep_log=False, h_hat=h).mse
        out["GAMLSS"] = (_align(lay.areas, h, areas), _align(lay.areas, mse, areas))
    if "EBLUP" in setup.estimators:
        d = build_design(sample, ModelSpec(Normal(), {"mu": ParamSpec(setup.eblup_terms)}))
        fit = fit_bhf_arrays(d.X["mu"], sample.y, d.area_index, d.areas, setup.eblup_transform,
                             setup.eblup_terms, d.levels, d.columns["mu"])
        boot = BhfBootstrap(fit, sample, pop, zeta, setup.smearing if zeta.is_mean else False)
        h = boot.predict(fit, sample.y)
        mse = None
        if setup.B:
            mse = boot.run(setup.B, child(setup.seed, BOOT_SIM_STREAM, t, 2), keep_log=False, h_hat=h).mse
        out["EBLUP"] = (_align(boot.lay.areas, h, areas), _align(boot.lay.areas, mse, areas))
    return out


def _align(src_areas, values, areas):
    if values is None:
        return None
    s = pd.Series(np.asarray(values, dtype=float), index=np.asarray(src_areas))
    return s.reindex(np.asarray(areas)).to_numpy()


@dataclass
class SimulationReport:
    """Metrics per estimator plus the J x T arrays they were computed from."""

    config: dict
    areas: np.ndarray
    allocation: np.ndarray
    truth: np.ndarray
    estimates: dict
    mses: dict
    metrics: dict
    failed: list
    notes: list = field(default_factory=list)

    @property
    def T_eff(self) -> int:
        return int(self.truth.shape[1])

    def metrics_json(self) -> dict:
        return {
            "config": self.config,
            "T_effective": self.T_eff,
            "failed_replicates": self.failed,
            "allocation": [int(v) for v in self.allocation],
            "metrics": {e: {k: self.metrics[e].get(k) for k in METRIC_KEYS} for e in self.metrics},
            "nonfinite_excluded": {e: self.metrics[e].get("n_nonfinite", 0) for e in self.metrics},
            "notes": self.notes,
        }

    def area_frame(self) -> pd.DataFrame:
        """Per-area traces averaged over replicates (plot-ready)."""
        rows = []
        for e, est in self.estimates.items():
            rel = (est - self.truth) / self.truth
            mse = self.mses.get(e)
            for j, a in enumerate(self.areas):
                rows.append({
                    "estimator": e, "area": a, "n_j": int(self.allocation[j]),
                    "rel_bias_pct": 100 * rel[j].mean(),
                    "cv_pct": 100 * float(_finite_mean(np.sqrt(mse[j]) / est[j], 0)) if mse is not None else np.nan,
                    "true_mse": float(np.mean((est[j] - self.truth[j]) ** 2)),
                    "est_mse": float(np.mean(mse[j])) if mse is not None else np.nan,
                })
        return pd.DataFrame(rows)

    def replicate_frame(self) -> pd.DataFrame:
        J, T = self.truth.shape
        parts = []
        for e, est in self.estimates.items():
            mse = self.mses.get(e)
            parts.append(pd.DataFrame({
                "estimator": e, "area": np.repeat(self.areas, T), "t": np.tile(np.arange(T), J),
                "H": self.truth.ravel(), "H_hat": est.ravel(),
                "mse": mse.ravel() if mse is not None else np.nan,
            }))
        return pd.concat(parts, ignore_index=True)

    def write(self, outdir: str) -> dict:
        os.makedirs(outdir, exist_ok=True)
        paths = {
            "metrics": os.path.join(outdir, "metrics.json"),
            "areas": os.path.join(outdir, "areas.csv"),
            "replicates": os.path.join(outdir, "replicates.csv"),
        }
        atomic_write(paths["metrics"], json.dumps(self.metrics_json(), indent=2, default=_json_default))
        atomic_write(paths["areas"], self.area_frame().to_csv(index=False))
        atomic_write(paths["replicates"], self.replicate_frame().to_csv(index=False))
        return paths


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _collect(results, areas, alloc, estimators, config_dict, notes):
    ok = [(t, r) for t, r in results if not isinstance(r, str)]
    failed = [{"t": t, "error": r} for t, r in results if isinstance(r, str)]
    if not ok:
        raise ConvergenceError("every replicate failed")
    truth = np.column_stack([r["truth"] for _, r in ok])
    est, mses, metrics = {}, {}, {}
    for e in estimators:
        est[e] = np.column_stack([r["est"][e][0] for _, r in ok])
        m = [r["est"][e][1] for _, r in ok]
        mses[e] = None if any(v is None for v in m) else np.column_stack(m)
    for e in estimators:
        dm = mses.get("Direct") if e != "Direct" else None
        de = est.get("Direct") if e != "Direct" else None
        metrics[e] = compute_metrics(truth, est[e], mses[e], dm, de)
    mses = {e: v for e, v in mses.items() if v is not None}
    return SimulationReport(config_dict, np.asarray(areas), np.asarray(alloc), truth, est, mses, metrics,
                            failed, notes)


def _run_replicates(fn, T, threads):
    def safe(t):
        try:
            return t, fn(t)
        except (ConvergenceError, RankError, np.linalg.LinAlgError) as exc:
            return t, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(safe, range(T)))
    return [safe(t) for t in range(T)]


def run_scenario(config: ScenarioConfig) -> SimulationReport:
    """Model-based simulation of one scenario."""
    sc = SCENARIOS[config.scenario]
    setup = _Setup(sc.spec, sc.eblup_terms, sc.eblup_transform, sc.zeta, config.estimators,
                   config.B, config.L, config.smearing, config.ctrl, config.seed)
    cov = fixed_covariates(config)
    alloc = config.allocation()

    def one(t):
        gp = generate_population(config, t, covariates=cov)
        sample = draw_sample(gp.data, alloc, substream(config.seed, SAMPLE_STREAM, t))
        return {"truth": gp.truth, "est": _estimate(setup, gp.data, sample, gp.areas, t)}

    results = _run_replicates(one, config.T, config.threads)
    notes = []
    if config.B == 0:
        notes.append("B = 0: MSE-based measures not computed")
    return _collect(results, np.arange(1, config.J + 1), alloc, config.estimators, config.to_dict(), notes)


@dataclass(frozen=True)
class DbConfig:
    T: int = 100
    B: int = 100
    L: int = 100
    seed: int = 0
    sampling_fraction: float = 1 / 20
    estimators: tuple = ESTIMATORS
    smearing: bool = True
    threads: int = 1
    ctrl: FitControl = field(default_factory=FitControl)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        return d


def run_db_protocol(pseudo_pop: Dataset, spec: ModelSpec, eblup_terms=(), config: DbConfig | None = None,
                    zeta: AreaFunctional | None = None, eblup_transform: str = "boxcox") -> SimulationReport:
    """Design-based simulation on a fixed pseudo-population.

    Samples are stratified SRSWOR with n_j = round(N_j * sampling_fraction),
    at least 1.
    """
    config = config or DbConfig()
    zeta = zeta or AreaFunctional.mean()
    frame = pseudo_pop.frame
    if pseudo_pop.response is None or pseudo_pop.response not in frame.columns:
        raise ConfigError("pseudo-population needs a response column")
    uid = pseudo_pop.unit_id
    if uid is None:
        frame = frame.copy()
        uid = "_unit"
        frame[uid] = np.arange(len(frame))
    pop = Dataset(frame, area=pseudo_pop.area, response=pseudo_pop.response, role="population", unit_id=uid)
    areas, code = np.unique(pop.area_labels, return_inverse=True)
    N_j = np.bincount(code)
    raw = np.round(N_j * config.sampling_fraction).astype(int)
    notes = []
    if np.any(raw < 1):
        warnings.warn("some areas would get n_j = 0; raised to 1", RuntimeWarning, stacklevel=2)
        notes.append(f"n_j floor of 1 applied in {int(np.sum(raw < 1))} areas")
    alloc = np.maximum(raw, 1)
    truth = zeta.evaluate(pop.y, code, areas.size)
    setup = _Setup(spec, tuple(eblup_terms), eblup_transform, zeta, tuple(config.estimators),
                   config.B, config.L, config.smearing, config.ctrl, config.seed)

    def one(t):
        sample = draw_sample(pop, alloc, substream(config.seed, SAMPLE_STREAM, t))
        return {"truth": truth, "est": _estimate(setup, pop, sample, areas, t)}

    results = _run_replicates(one, config.T, config.threads)
    return _collect(results, areas, alloc, config.estimators, config.to_dict(), notes)
