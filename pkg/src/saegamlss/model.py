"""Data containers, model specification and design matrices."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from .distributions import PARAM_NAMES, Family, Link, get_family, get_link
from .errors import RankError, SpecError, SupportError

SAMPLE = "sample"
POPULATION = "population"


@dataclass(frozen=True)
class Dataset:
    """Unit records for a sample or a population.

    ``frame`` holds one row per unit with an area column, optional response
    and covariates.  Population frames may omit the response.  When both a
    sample and its population carry ``unit_id`` columns, population rows whose
    id appears in the sample are treated as sampled; otherwise population rows
    are taken to be the non-sampled remainder of each area.
    """

    frame: pd.DataFrame
    area: str = "area"
    response: str | None = "y"
    role: str = SAMPLE
    unit_id: str | None = None

    def __post_init__(self):
        if self.role not in (SAMPLE, POPULATION):
            raise SpecError(f"role must be {SAMPLE!r} or {POPULATION!r}")
        if self.area not in self.frame.columns:
            raise SpecError(f"missing area column {self.area!r}")
        if self.frame[self.area].isna().any():
            raise SpecError(f"area column {self.area!r} has missing values")
        if self.role == SAMPLE:
            if self.response is None or self.response not in self.frame.columns:
                raise SpecError(f"sample is missing response column {self.response!r}")
            if self.frame[self.response].isna().any():
                raise SpecError("sample response has missing values")
        if self.unit_id is not None and self.unit_id not in self.frame.columns:
            raise SpecError(f"missing unit id column {self.unit_id!r}")

    def __len__(self):
        return len(self.frame)

    @property
    def y(self) -> np.ndarray:
        return self.frame[self.response].to_numpy(dtype=float)

    @property
    def area_labels(self) -> np.ndarray:
        return self.frame[self.area].to_numpy()

    def area_counts(self) -> pd.Series:
        return self.frame.groupby(self.area, sort=True).size()


@dataclass(frozen=True)
class ParamSpec:
    """Linear predictor for one distribution parameter."""

    terms: tuple = ()
    link: Link | None = None
    random_intercept: bool = False

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.link is not None:
            object.__setattr__(self, "link", get_link(self.link))


@dataclass(frozen=True)
class ModelSpec:
    """Family plus one :class:`ParamSpec` per distribution parameter.

    Parameters left out of ``params`` get an intercept-only predictor with the
    family's default link.
    """

    family: Family
    params: Mapping[str, ParamSpec] = field(default_factory=dict)

    def __post_init__(self):
        fam = get_family(self.family)
        object.__setattr__(self, "family", fam)
        unknown = set(self.params) - set(fam.param_names)
        if unknown:
            raise SpecError(f"{fam.name} has no parameter(s) {sorted(unknown)}")
        full = {}
        for name, default in zip(fam.param_names, fam.default_links):
            ps = self.params.get(name, ParamSpec())
            if ps.link is None:
                ps = ParamSpec(ps.terms, default, ps.random_intercept)
            full[name] = ps
        object.__setattr__(self, "params", full)

    @property
    def param_names(self) -> tuple:
        return self.family.param_names

    @property
    def links(self) -> tuple:
        return tuple(self.params[k].link for k in self.param_names)

    def random_params(self) -> tuple:
        return tuple(k for k in self.param_names if self.params[k].random_intercept)

    def all_terms(self) -> list:
        seen = []
        for k in self.param_names:
            for t in self.params[k].terms:
                if t not in seen:
                    seen.append(t)
        return seen

    def to_dict(self) -> dict:
        return {
            "family": self.family.name,
            "params": {
                k: {"terms": list(p.terms), "link": p.link.name, "random_intercept": p.random_intercept}
                for k, p in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(
            get_family(d["family"]),
            {
                k: ParamSpec(tuple(v.get("terms", ())), v.get("link"), bool(v.get("random_intercept", False)))
                for k, v in d.get("params", {}).items()
            },
        )


@dataclass(frozen=True)
class DesignBundle:
    """Per-parameter design matrices and the unit-to-area index."""

    X: dict
    columns: dict
    area_index: np.ndarray
    areas: np.ndarray
    levels: dict

    @property
    def n(self) -> int:
        return int(self.area_index.size)

    @property
    def J(self) -> int:
        return int(self.areas.size)


def _is_categorical(s: pd.Series) -> bool:
    return not pd.api.types.is_numeric_dtype(s) or isinstance(s.dtype, pd.CategoricalDtype) \
        or pd.api.types.is_bool_dtype(s)


def categorical_levels(frame: pd.DataFrame, terms) -> dict:
    """Sorted levels of every non-numeric term (first level is the reference)."""
    out = {}
    for t in terms:
        if t in frame.columns and _is_categorical(frame[t]):
            out[t] = sorted(frame[t].dropna().astype(str).unique().tolist())
    return out


def design_matrix(frame: pd.DataFrame, terms, levels: Mapping) -> tuple[np.ndarray, list]:
    """Intercept plus numeric columns and treatment-coded factors."""
    n = len(frame)
    cols = [np.ones(n)]
    names = ["(Intercept)"]
    for t in terms:
        if t not in frame.columns:
            raise SpecError(f"term {t!r} not found in data")
        s = frame[t]
        if s.isna().any():
            raise SpecError(f"term {t!r} has missing values")
        if t in levels:
            lv = levels[t]
            vals = s.astype(str).to_numpy()
            unseen = set(np.unique(vals)) - set(lv)
            if unseen:
                raise SpecError(f"term {t!r} has levels {sorted(unseen)} not seen when fitting")
            for level in lv[1:]:
                cols.append((vals == level).astype(float))
                names.append(f"{t}[{level}]")
        else:
            if _is_categorical(s):
                raise SpecError(f"term {t!r} is categorical but has no recorded levels")
            cols.append(s.to_numpy(dtype=float))
            names.append(t)
    return np.column_stack(cols), names


def build_design(data: Dataset, spec: ModelSpec, levels: Mapping | None = None,
                 areas=None, check_rank: bool = True) -> DesignBundle:
    """Design matrices for every distribution parameter.

    ``levels`` and ``areas`` reuse the coding of a previous fit (used when
    building population designs); unknown areas get index -1.
    """
    frame = data.frame
    for t in spec.all_terms():
        if t not in frame.columns:
            raise SpecError(f"term {t!r} not found in data")
    if levels is None:
        levels = categorical_levels(frame, spec.all_terms())
    X, columns = {}, {}
    for k in spec.param_names:
        Xk, names = design_matrix(frame, spec.params[k].terms, levels)
        if check_rank and np.linalg.matrix_rank(Xk) < Xk.shape[1]:
            raise RankError(f"design for {k} is rank deficient (columns {names})")
        X[k], columns[k] = Xk, names
    labels = frame[data.area].to_numpy()
    if areas is None:
        areas, index = np.unique(labels, return_inverse=True)
    else:
        areas = np.asarray(areas)
        lookup = {a: i for i, a in enumerate(areas.tolist())}
        index = np.array([lookup.get(a, -1) for a in labels.tolist()], dtype=np.intp)
    return DesignBundle(X, columns, np.asarray(index, dtype=np.intp), np.asarray(areas), dict(levels))


def validate_spec(data: Dataset, spec: ModelSpec) -> list[str]:
    """Non-fatal problems with ``spec`` on ``data`` (empty list when clean)."""
    out = []
    frame = data.frame
    for t in spec.all_terms():
        if t not in frame.columns:
            out.append(f"missing term: {t!r} not found in data")
    counts = data.area_counts()
    for area, c in counts.items():
        if c < 2:
            out.append(f"singleton area: {area!r} has n_j = {int(c)}")
    if data.response is not None and data.response in frame.columns and spec.family.positive_support:
        y = frame[data.response].to_numpy(dtype=float)
        if np.any(y <= 0):
            out.append(f"support: {spec.family.name} requires y > 0 but data contain nonpositive values")
    if len(counts) < 5:
        for k in spec.random_params():
            out.append(f"random intercept on {k} with only J = {len(counts)} < 5 areas")
    return out


def check_support(data: Dataset, spec: ModelSpec):
    y = data.y
    if spec.family.positive_support and np.any(y <= 0):
        raise SupportError(f"{spec.family.name} requires y > 0")
    if not np.all(np.isfinite(y)):
        raise SupportError("response contains non-finite values")


def nonsampled(sample: Dataset, pop: Dataset) -> pd.DataFrame:
    """Population rows that are not part of ``sample``."""
    if sample.unit_id is not None and pop.unit_id is not None:
        taken = set(sample.frame[sample.unit_id].tolist())
        mask = ~pop.frame[pop.unit_id].isin(taken)
        return pop.frame.loc[mask]
    return pop.frame


def area_sizes(sample: Dataset, pop: Dataset) -> pd.DataFrame:
    """Per-area sample size n_j and population size N_j over all areas."""
    rest = nonsampled(sample, pop)
    n = sample.frame.groupby(sample.area).size()
    r = rest.groupby(pop.area).size()
    areas = sorted(set(n.index.tolist()) | set(r.index.tolist()))
    n = n.reindex(areas, fill_value=0)
    r = r.reindex(areas, fill_value=0)
    return pd.DataFrame({"area": areas, "n": n.to_numpy(), "N": (n + r).to_numpy()})
