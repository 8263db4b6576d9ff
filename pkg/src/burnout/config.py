"""Scenario configuration files.

A scenario is a single JSON object with a ``version`` field.  Unknown keys
are errors.  Hazard formulas are given as expression strings in ``t``
(years) and ``f`` (frailty), e.g. ``"0.2*f*(1 + 0.5*sin(t))"``; they are
compiled with sympy into vectorised numpy functions.  Expressions are
evaluated by sympy's parser, so only load configuration files you trust.

Example::

    {
      "version": 1,
      "name": "gamma_burnout",
      "model": {"type": "frailty_factor", "common": {"type": "constant", "lambda": 0.2}},
      "distribution": {"type": "gamma", "k": 2, "theta": 1},
      "grid": {"t_end": 10, "dt": 0.01},
      "ensemble": {"n": 256, "mode": "quadrature"},
      "checks": [{"type": "burnout", "tolerance": 1e-3, "halvings": 2}]
    }
"""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import BurnoutError
from .hazard_model import (
    Constant,
    CoxPH,
    Deterministic,
    DeterministicPath,
    Discrete,
    FrailtyFactor,
    Gamma,
    ItoHeterogeneous,
    Lognormal,
    MultivariateLognormal,
    TruncatedNormal,
    VectorConstant,
)
from .identities import make_grid, validate_grid

CONFIG_VERSION = 1


class ConfigError(BurnoutError, ValueError):
    """Invalid scenario configuration; ``path`` is the offending key path."""

    def __init__(self, message, path=(), line=None, source=None):
        self.message = message
        self.path = tuple(path)
        self.line = line
        self.source = source
        super().__init__(self._format())

    def _format(self):
        where = ".".join(str(p) for p in self.path) or "<root>"
        prefix = f"{self.source or '<config>'}:{self.line}: " if self.line else ""
        return f"{prefix}{where}: {self.message}"

    def anchored(self, text, source):
        return ConfigError(self.message, self.path, locate_line(text, self.path), source)


def locate_line(text, path):
    """Best-effort 1-based line of a key path inside JSON text."""
    pos = 0
    for key in path:
        if isinstance(key, int):
            for _ in range(key + 1):
                nxt = text.find("{", pos + 1)
                if nxt < 0:
                    break
                pos = nxt
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@lru_cache(maxsize=256)
def compile_expression(text, args=("t", "f")):
    """Compile an expression string into a numpy function of ``args``."""
    import sympy
    from sympy.parsing.sympy_parser import parse_expr, standard_transformations

    if not isinstance(text, str) or not text.strip():
        raise ValueError("expression must be a non-empty string")
    symbols = {a: sympy.Symbol(a, real=True) for a in args}
    try:
        expr = parse_expr(text, local_dict=dict(symbols), transformations=standard_transformations)
    except Exception as exc:  # sympy raises a zoo of exception types
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from None
    if not isinstance(expr, sympy.Expr):
        raise ValueError(f"{text!r} is not a scalar expression")
    unknown = sorted(s.name for s in expr.free_symbols if s.name not in args)
    if unknown:
        raise ValueError(f"expression {text!r} uses unknown symbols {unknown}; allowed: {list(args)}")
    return sympy.lambdify([symbols[a] for a in args], expr, modules="numpy")


# ---------------------------------------------------------------------------
# Schema helpers
# ---------------------------------------------------------------------------


def _expect_obj(value, path):
    if not isinstance(value, dict):
        raise ConfigError("expected an object", path)
    return value


def _keys(obj, path, required=(), optional=()):
    _expect_obj(obj, path)
    allowed = set(required) | set(optional)
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r}; allowed: {sorted(allowed)}", path + (k,))
    for k in required:
        if k not in obj:
            raise ConfigError(f"missing required key {k!r}", path)


def _number(obj, key, path, positive=False, nonneg=False, integer=False):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("expected a number", path + (key,))
    if integer and not (isinstance(v, int) or float(v).is_integer()):
        raise ConfigError("expected an integer", path + (key,))
    if not math.isfinite(v):
        raise ConfigError("must be finite", path + (key,))
    if positive and not v > 0:
        raise ConfigError(f"must be > 0, got {v!r}", path + (key,))
    if nonneg and v < 0:
        raise ConfigError(f"must be >= 0, got {v!r}", path + (key,))
    return int(v) if integer else float(v)


def _numbers(obj, key, path):
    v = obj[key]
    if not isinstance(v, list) or not v:
        raise ConfigError("expected a non-empty list of numbers", path + (key,))
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError("expected a finite number", path + (key, i))
    return [float(x) for x in v]


def _expr(obj, key, path, args=("t", "f")):
    try:
        return compile_expression(obj[key], args)
    except ValueError as exc:
        raise ConfigError(str(exc), path + (key,)) from None


def _wrap(build, path):
    """Run a constructor, re-raising parameter errors as config errors."""
    try:
        return build()
    except ConfigError:
        raise
    except (ValueError, BurnoutError) as exc:
        raise ConfigError(str(exc), path) from None


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_distribution(desc, path=("distribution",)):
    _expect_obj(desc, path)
    kind = desc.get("type")
    if kind == "gamma":
        _keys(desc, path, ("type", "k", "theta"))
        return _wrap(lambda: Gamma(_number(desc, "k", path), _number(desc, "theta", path)), path)
    if kind == "lognormal":
        _keys(desc, path, ("type", "mu", "sigma"))
        return _wrap(lambda: Lognormal(_number(desc, "mu", path), _number(desc, "sigma", path)), path)
    if kind == "truncated_normal":
        _keys(desc, path, ("type", "m", "s"))
        return _wrap(lambda: TruncatedNormal(_number(desc, "m", path), _number(desc, "s", path)), path)
    if kind == "discrete":
        _keys(desc, path, ("type", "values", "probs"))
        return _wrap(lambda: Discrete(_numbers(desc, "values", path), _numbers(desc, "probs", path)), path)
    if kind == "multivariate_lognormal":
        _keys(desc, path, ("type", "mu", "cov"))
        cov = desc["cov"]
        if not isinstance(cov, list) or not all(isinstance(r, list) for r in cov):
            raise ConfigError("cov must be a list of rows", path + ("cov",))
        rows = [_numbers({"r": r}, "r", path + ("cov", i)) for i, r in enumerate(cov)]
        return _wrap(lambda: MultivariateLognormal(_numbers(desc, "mu", path), rows), path)
    raise ConfigError(f"unknown distribution type {kind!r}", path + ("type",))


def build_common(desc, path):
    _expect_obj(desc, path)
    kind = desc.get("type")
    if kind == "constant":
        _keys(desc, path, ("type", "lambda"))
        return _wrap(lambda: Constant(_number(desc, "lambda", path, nonneg=True)), path)
    if kind == "path":
        _keys(desc, path, ("type", "times", "values"))
        return _wrap(lambda: DeterministicPath(_numbers(desc, "times", path), _numbers(desc, "values", path)), path)
    if kind == "cox_ph":
        _keys(desc, path, ("type", "base"), ("base_dot", "beta", "covariates"))
        base = _expr(desc, "base", path, ("t",))
        base_dot = _expr(desc, "base_dot", path, ("t",)) if "base_dot" in desc else None
        beta = _numbers(desc, "beta", path) if "beta" in desc else []
        cov = _numbers(desc, "covariates", path) if "covariates" in desc else []
        return _wrap(lambda: CoxPH(base, tuple(beta), tuple(cov), base_dot), path)
    if kind == "vector_constant":
        _keys(desc, path, ("type", "lambda"))
        return _wrap(lambda: VectorConstant(_numbers(desc, "lambda", path)), path)
    raise ConfigError(f"unknown common factor type {kind!r}", path + ("type",))


def build_spec(desc, path=("model",)):
    _expect_obj(desc, path)
    kind = desc.get("type")
    if kind == "frailty_factor":
        _keys(desc, path, ("type", "common"))
        return FrailtyFactor(build_common(desc["common"], path + ("common",)))
    if kind == "deterministic":
        _keys(desc, path, ("type", "lambda"), ("lambda_dot",))
        dot = _expr(desc, "lambda_dot", path) if "lambda_dot" in desc else None
        return Deterministic(_expr(desc, "lambda", path), dot)
    if kind == "ito":
        _keys(desc, path, ("type", "mu", "sigma", "lambda0"))
        return ItoHeterogeneous(_expr(desc, "mu", path), _expr(desc, "sigma", path),
                                _expr(desc, "lambda0", path, ("f",)))
    raise ConfigError(f"unknown model type {kind!r}", path + ("type",))


def build_grid(desc, path=("grid",)):
    _expect_obj(desc, path)
    if "times" in desc:
        _keys(desc, path, ("times",))
        return _wrap(lambda: validate_grid(_numbers(desc, "times", path)), path + ("times",))
    _keys(desc, path, ("t_end", "dt"))
    t_end = _number(desc, "t_end", path, positive=True)
    dt = _number(desc, "dt", path, positive=True)
    return _wrap(lambda: make_grid(t_end, dt), path)


CHECK_KEYS = {
    "burnout": (("type",), ("tolerance", "halvings", "min_order")),
    "selection": (("type", "phi"), ("phi_dot", "tolerance", "halvings")),
    "monotone": (("type",), ("slack",)),
    "pool_sde": (("type",), ("tolerance_drift", "tolerance_diff", "halvings", "order_range")),
    "gamma_closed_form": (("type",), ("tolerance",)),
}
DETERMINISTIC_CHECKS = {"burnout", "selection", "monotone", "gamma_closed_form"}


def _validate_check(desc, path, scalar):
    _expect_obj(desc, path)
    kind = desc.get("type")
    if kind not in CHECK_KEYS:
        raise ConfigError(f"unknown check type {kind!r}; known: {sorted(CHECK_KEYS)}", path + ("type",))
    required, optional = CHECK_KEYS[kind]
    _keys(desc, path, required, optional)
    for key in ("tolerance", "tolerance_drift", "tolerance_diff", "slack"):
        if key in desc:
            _number(desc, key, path, nonneg=True)
    if "halvings" in desc:
        h = _number(desc, "halvings", path, nonneg=True, integer=True)
        if h > 8:
            raise ConfigError("at most 8 halvings", path + ("halvings",))
    if "min_order" in desc:
        _number(desc, "min_order", path)
    if "order_range" in desc:
        rng = _numbers(desc, "order_range", path)
        if len(rng) != 2 or rng[0] > rng[1]:
            raise ConfigError("order_range must be [low, high]", path + ("order_range",))
    if kind == "selection":
        if not scalar:
            raise ConfigError("selection checks need a scalar frailty distribution", path)
        _expr(desc, "phi", path)
        if "phi_dot" in desc:
            _expr(desc, "phi_dot", path)


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

TOP_REQUIRED = ("version", "model", "distribution", "grid")
TOP_OPTIONAL = ("name", "ensemble", "montecarlo", "seed", "outputs", "checks")


@dataclass
class ScenarioConfig:
    """Validated scenario description; all sections are plain JSON values."""

    model: dict
    distribution: dict
    grid: dict
    version: int = CONFIG_VERSION
    name: str = "scenario"
    ensemble: dict = field(default_factory=lambda: {"n": 256, "mode": "quadrature"})
    montecarlo: dict = field(default_factory=lambda: {"enabled": False, "n_borrowers": 100000})
    seed: int = 0
    outputs: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def to_dict(self):
        return {
            "version": self.version,
            "name": self.name,
            "model": copy.deepcopy(self.model),
            "distribution": copy.deepcopy(self.distribution),
            "grid": copy.deepcopy(self.grid),
            "ensemble": copy.deepcopy(self.ensemble),
            "montecarlo": copy.deepcopy(self.montecarlo),
            "seed": self.seed,
            "outputs": copy.deepcopy(self.outputs),
            "checks": copy.deepcopy(self.checks),
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        cfg, _ = validate(data)
        return cfg

    # built objects, constructed on demand
    def build(self):
        return Built.from_config(self)


@dataclass
class Built:
    spec: object
    dist: object
    grid: np.ndarray
    mc_grid: np.ndarray

    @classmethod
    def from_config(cls, cfg):
        spec = build_spec(cfg.model)
        dist = build_distribution(cfg.distribution)
        grid = build_grid(cfg.grid)
        period = cfg.montecarlo.get("period")
        mc_grid = grid if period is None else make_grid(grid[-1], period)
        return cls(spec, dist, grid, mc_grid)


def validate(data):
    """Validate a parsed JSON object; returns (ScenarioConfig, Built)."""
    path = ()
    _keys(data, path, TOP_REQUIRED, TOP_OPTIONAL)
    version = data["version"]
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported version {version!r}; expected {CONFIG_VERSION}", ("version",))
    name = data.get("name", "scenario")
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        raise ConfigError("name must be a non-empty identifier ([A-Za-z0-9_.-])", ("name",))

    ensemble = {"n": 256, "mode": "quadrature"}
    if "ensemble" in data:
        _keys(data["ensemble"], ("ensemble",), (), ("n", "mode"))
        ensemble.update(data["ensemble"])
    ens_n = _number(ensemble, "n", ("ensemble",), positive=True, integer=True)
    if ens_n < 2:
        raise ConfigError("must be >= 2", ("ensemble", "n"))
    if ensemble["mode"] not in ("quadrature", "sample"):
        raise ConfigError("mode must be 'quadrature' or 'sample'", ("ensemble", "mode"))
    ensemble["n"] = ens_n

    mc = {"enabled": False, "n_borrowers": 100000}
    if "montecarlo" in data:
        _keys(data["montecarlo"], ("montecarlo",), (), ("enabled", "n_borrowers", "period"))
        mc.update(data["montecarlo"])
    if not isinstance(mc["enabled"], bool):
        raise ConfigError("expected true or false", ("montecarlo", "enabled"))
    mc["n_borrowers"] = _number(mc, "n_borrowers", ("montecarlo",), positive=True, integer=True)
    if mc.get("period") is not None:
        _number(mc, "period", ("montecarlo",), positive=True)

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer", ("seed",))

    outputs = {"csv_path": f"{name}.csv", "report_path": f"{name}_report.json", "mc_csv_path": f"{name}_mc.csv"}
    if "outputs" in data:
        _keys(data["outputs"], ("outputs",), (), tuple(outputs))
        for k, v in data["outputs"].items():
            if not isinstance(v, str) or not v:
                raise ConfigError("expected a file path", ("outputs", k))
        outputs.update(data["outputs"])

    checks = data.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigError("expected a list", ("checks",))

    cfg = ScenarioConfig(
        model=copy.deepcopy(data["model"]),
        distribution=copy.deepcopy(data["distribution"]),
        grid=copy.deepcopy(data["grid"]),
        version=version,
        name=name,
        ensemble=ensemble,
        montecarlo=mc,
        seed=seed,
        outputs=outputs,
        checks=copy.deepcopy(checks),
    )
    built = Built.from_config(cfg)
    _validate_combination(cfg, built)
    for i, chk in enumerate(checks):
        _validate_check(chk, ("checks", i), built.dist.dim == 1 and not isinstance(built.dist, MultivariateLognormal))
        kind = chk["type"]
        if kind in DETERMINISTIC_CHECKS and isinstance(built.spec, ItoHeterogeneous):
            raise ConfigError(f"{kind} check needs a deterministic model", ("checks", i, "type"))
        if kind == "pool_sde" and not isinstance(built.spec, ItoHeterogeneous):
            raise ConfigError("pool_sde check needs an ito model", ("checks", i, "type"))
        if kind == "gamma_closed_form" and not (
            isinstance(built.dist, Gamma) and isinstance(built.spec, FrailtyFactor)
            and isinstance(built.spec.common, Constant) and built.spec.common.lam > 0
        ):
            raise ConfigError("gamma_closed_form needs gamma frailty with a positive constant common factor",
                              ("checks", i, "type"))
    return cfg, built


def _validate_combination(cfg, built):
    multivariate = isinstance(built.dist, MultivariateLognormal)
    spec = built.spec
    if multivariate:
        if cfg.ensemble["mode"] != "sample":
            raise ConfigError("multivariate frailty needs ensemble mode 'sample'", ("ensemble", "mode"))
        if not (isinstance(spec, FrailtyFactor) and isinstance(spec.common, VectorConstant)):
            raise ConfigError("multivariate frailty needs a frailty_factor model with a vector_constant common factor",
                              ("model",))
        if spec.common.dim != built.dist.dim:
            raise ConfigError(f"common factor has {spec.common.dim} entries, frailty has {built.dist.dim}",
                              ("model", "common", "lambda"))
    elif isinstance(spec, FrailtyFactor) and isinstance(spec.common, VectorConstant):
        raise ConfigError("vector_constant common factor needs multivariate frailty", ("model", "common", "type"))
    if isinstance(spec, ItoHeterogeneous):
        steps = np.diff(built.grid)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ConfigError("ito models need a uniform grid", ("grid",))
        if cfg.montecarlo.get("period") is not None:
            raise ConfigError("ito models simulate borrowers on the model grid; omit period", ("montecarlo", "period"))


def parse_config(text, source="<string>"):
    """Parse and validate JSON text; errors carry a source line number."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", (), exc.lineno, source) from None
    try:
        return validate(data)
    except ConfigError as exc:
        raise exc.anchored(text, source) from None


def bundled_scenarios():
    root = resources.files("burnout") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def read_config_text(ref):
    """Text of a config file, or of a bundled scenario when ``ref`` names one."""
    path = Path(ref)
    if path.exists():
        return path.read_text(), str(path)
    if ref in bundled_scenarios():
        res = resources.files("burnout") / "scenarios" / f"{ref}.json"
        return res.read_text(), f"<bundled:{ref}>"
    raise ConfigError(f"no such config file or bundled scenario: {ref!r}", ())


def load_config(ref):
    text, source = read_config_text(ref)
    return parse_config(text, source)
