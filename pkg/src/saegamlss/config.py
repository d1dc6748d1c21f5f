"""Run configuration: YAML documents and the model formula mini-language.

A formula is ``y ~ x1 + x2 + (1|area)``: column names joined by ``+`` and
at most one ``(1|area)`` random-intercept token.  Formulas for sigma, nu and
tau omit the response (``~ x2`` or just ``x2``); ``1`` means intercept only.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import yaml

from .distributions import get_family, get_link
from .errors import ConfigError, DomainError
from .fit import FitControl
from .model import ModelSpec, ParamSpec

_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_RE = re.compile(r"^\(\s*1\s*\|\s*([A-Za-z_][A-Za-z0-9_.]*)\s*\)$")


@dataclass(frozen=True)
class Formula:
    response: str | None
    terms: tuple
    random_intercept: bool
    area: str | None


def parse_formula(text: str) -> Formula:
    if not isinstance(text, str) or not text.strip():
        raise ConfigError("empty formula")
    lhs, sep, rhs = text.partition("~")
    if not sep:
        lhs, rhs = "", text
    response = lhs.strip() or None
    if response is not None and not _NAME.match(response):
        raise ConfigError(f"bad response name {response!r} in formula {text!r}")
    terms, area = [], None
    for raw in rhs.split("+"):
        tok = raw.strip()
        if not tok:
            raise ConfigError(f"empty term in formula {text!r}")
        m = _RE.match(tok)
        if m:
            if area is not None:
                raise ConfigError(f"more than one random-intercept token in {text!r}")
            area = m.group(1)
        elif tok == "1":
            continue
        elif _NAME.match(tok):
            if tok in terms:
                raise ConfigError(f"duplicate term {tok!r} in formula {text!r}")
            terms.append(tok)
        else:
            raise ConfigError(f"unsupported term {tok!r} in formula {text!r}")
    return Formula(response, tuple(terms), area is not None, area)


_TOP_KEYS = {"family", "response", "area", "unit_id", "formulas", "links", "control",
             "B", "L", "T", "seed", "threads", "zeta", "paths"}
_CONTROL_KEYS = set(FitControl.__dataclass_fields__)
_ZETA_KEYS = {"kind", "fraction", "scope", "line", "u"}
_PATH_KEYS = {"sample", "population", "model", "output"}
_PARAMS = {"mu", "sigma", "nu", "tau"}


@dataclass(frozen=True)
class RunConfig:
    spec: ModelSpec
    response: str
    area: str = "area"
    unit_id: str | None = None
    control: FitControl = field(default_factory=FitControl)
    B: int = 200
    L: int = 100
    T: int = 100
    seed: int = 0
    threads: int = 1
    zeta: dict = field(default_factory=lambda: {"kind": "mean"})
    paths: dict = field(default_factory=dict)


def _where(node, source):
    return f"{source}:{node.start_mark.line + 1}"


def _check_keys(node, allowed, source, section):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(node, source)}: '{section}' must be a mapping")
    for k, _ in node.value:
        if k.value not in allowed:
            raise ConfigError(f"{_where(k, source)}: unknown key '{k.value}' in {section}")


def _child(node, key):
    for k, v in node.value:
        if k.value == key:
            return k, v
    return None, None


def load_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse a YAML run configuration; errors name the offending line."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f"{mark.line + 1}" if mark is not None else "?"
        raise ConfigError(f"{source}:{line}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    if root is None:
        raise ConfigError(f"{source}:1: empty config")
    _check_keys(root, _TOP_KEYS, source, "config")
    for sec, allowed in (("control", _CONTROL_KEYS), ("zeta", _ZETA_KEYS), ("paths", _PATH_KEYS),
                         ("formulas", _PARAMS), ("links", _PARAMS)):
        _, node = _child(root, sec)
        if node is not None:
            _check_keys(node, allowed, source, sec)
    data = yaml.safe_load(text)

    def fail(key, msg):
        k, _ = _child(root, key)
        where = _where(k, source) if k is not None else f"{source}:1"
        raise ConfigError(f"{where}: {msg}")

    if "family" not in data:
        fail("family", "missing required key 'family'")
    try:
        family = get_family(data["family"])
    except DomainError as exc:
        fail("family", str(exc))
    formulas = data.get("formulas") or {}
    if "mu" not in formulas:
        fail("formulas", "formulas.mu is required")
    links = data.get("links") or {}
    params, response, area = {}, data.get("response"), data.get("area")
    _, fnode = _child(root, "formulas")
    for k, text_ in formulas.items():
        kn, vn = _child(fnode, k)
        if k not in family.param_names:
            raise ConfigError(f"{_where(kn, source)}: {family.name} has no parameter '{k}'")
        try:
            f = parse_formula(str(text_))
        except ConfigError as exc:
            raise ConfigError(f"{_where(vn, source)}: {exc}") from None
        if f.response:
            if k != "mu":
                raise ConfigError(f"{_where(vn, source)}: only the mu formula may name the response")
            if response and response != f.response:
                raise ConfigError(f"{_where(vn, source)}: response {f.response!r} conflicts with {response!r}")
            response = f.response
        if f.area:
            if area and area != f.area:
                raise ConfigError(f"{_where(vn, source)}: area {f.area!r} conflicts with {area!r}")
            area = f.area
        try:
            link = get_link(links[k]) if k in links else None
        except (DomainError, ValueError) as exc:
            fail("links", str(exc))
        params[k] = ParamSpec(f.terms, link, f.random_intercept)
    for k in links:
        if k not in params:
            if k not in family.param_names:
                fail("links", f"{family.name} has no parameter '{k}'")
            params[k] = ParamSpec((), get_link(links[k]), False)
    if not response:
        fail("formulas", "no response named (use 'y ~ ...' in formulas.mu or the 'response' key)")
    try:
        control = FitControl(**(data.get("control") or {}))
    except (TypeError, ValueError) as exc:
        fail("control", str(exc))
    for key in ("B", "L", "T", "seed", "threads"):
        if key in data and (not isinstance(data[key], int) or data[key] < 0):
            fail(key, f"'{key}' must be a nonnegative integer")
    return RunConfig(
        spec=ModelSpec(family, params), response=response, area=area or "area",
        unit_id=data.get("unit_id"), control=control,
        B=data.get("B", 200), L=data.get("L", 100), T=data.get("T", 100), seed=data.get("seed", 0),
        threads=data.get("threads", 1), zeta=data.get("zeta") or {"kind": "mean"},
        paths=data.get("paths") or {},
    )


def load_config_file(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    return load_config(text, path)
