"""YAML experiment files -> model objects.

Every error names the offending field as a dotted path, for example
``polling.cycles[1].epsilon``.  The schema is documented in README.md.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .branching_core import DEFAULT_GENERATION_CAP, Mode, ProcessConfig, START_FROM_IMMIGRATION
from .env_model import (BernoulliImmigration, Deterministic, DegenerateOffspring, EnvironmentDistribution,
                        EnvironmentSample, Exponential, FixedImmigration, GammaAmount, GeometricOffspring,
                        LogNormal, NoImmigration, PoissonImmigration, PoissonOffspring)
from .errors import ConfigurationError, GuardViolation
from .polling_map import CycleDistribution, PollingCycleParams, ProductMode, exhaustive_clearing_mean
from .polling_sim import DEFAULT_MAX_CYCLES, DEFAULT_MAX_SERVICES, PollingConfig

COMMANDS = ("analyze", "simulate-branching", "simulate-polling", "validate-equivalence", "tail-fit")


class _Field:
    """A value plus its dotted path, with typed accessors that raise path-named errors."""

    def __init__(self, value, path: str):
        self.value = value
        self.path = path

    def fail(self, msg):
        raise ConfigurationError(f"{self.path}: {msg}")

    def child(self, key, default=...):
        if not isinstance(self.value, dict):
            self.fail("expected a mapping")
        path = f"{self.path}.{key}" if self.path else key
        if key not in self.value:
            if default is ...:
                raise ConfigurationError(f"{path}: required field missing")
            return _Field(default, path)
        return _Field(self.value[key], path)

    def items(self):
        if not isinstance(self.value, list) or not self.value:
            self.fail("expected a nonempty list")
        return [_Field(v, f"{self.path}[{i}]") for i, v in enumerate(self.value)]

    def number(self, lo=None, hi=None, strict_lo=False) -> float:
        v = self.value
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(f"expected a finite number, got {v!r}")
        if lo is not None and (v < lo or (strict_lo and v == lo)):
            self.fail(f"must be {'>' if strict_lo else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            self.fail(f"must be <= {hi}, got {v}")
        return float(v)

    def integer(self, lo=None) -> int:
        v = self.value
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            self.fail(f"must be >= {lo}, got {v}")
        return int(v)

    def choice(self, options) -> str:
        if self.value not in options:
            self.fail(f"expected one of {list(options)}, got {self.value!r}")
        return self.value

    def array(self, shape=None, nonneg=True) -> np.ndarray:
        try:
            a = np.asarray(self.value, dtype=float)
        except (TypeError, ValueError):
            self.fail("expected a numeric array")
        if a.dtype == object or (shape is not None and a.shape != shape):
            self.fail(f"expected shape {shape}, got {np.shape(self.value)}")
        if not np.all(np.isfinite(a)):
            self.fail("entries must be finite")
        if nonneg and np.any(a < 0):
            bad = tuple(int(i) for i in np.argwhere(a < 0)[0])
            self.fail(f"entries must be >= 0 (entry {list(bad)} is {a[bad]})")
        return a


def _amount(f: _Field):
    v = f.value
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return Deterministic(f.number(lo=0))
    law = f.child("law").choice(("deterministic", "exponential", "gamma", "lognormal"))
    if law == "deterministic":
        return Deterministic(f.child("value").number(lo=0))
    if law == "exponential":
        return Exponential(f.child("mean").number(lo=0, strict_lo=True))
    if law == "gamma":
        return GammaAmount(f.child("shape").number(lo=0, strict_lo=True),
                           f.child("scale").number(lo=0, strict_lo=True))
    return LogNormal(f.child("mu").number(), f.child("sigma").number(lo=0))


def _amounts(f: _Field, m: int):
    if isinstance(f.value, list):
        if len(f.value) != m:
            f.fail(f"expected {m} laws, got {len(f.value)}")
        return tuple(_amount(x) for x in f.items())
    return tuple([_amount(f)] * m)


def _product(f: _Field, m: int):
    return None if f.value is None else _amounts(f, m)


def _offspring(f: _Field, m: int):
    law = f.child("law").choice(("poisson", "geometric", "degenerate"))
    product = _product(f.child("product", None), m)
    if law == "degenerate":
        return DegenerateOffspring(f.child("children").array((m, m)).astype(np.int64), product)
    mean = f.child("mean").array((m, m))
    return (PoissonOffspring if law == "poisson" else GeometricOffspring)(mean, product)


def _immigration(f: _Field, m: int):
    if f.value is None:
        return NoImmigration(m)
    law = f.child("law").choice(("none", "fixed", "poisson", "bernoulli"))
    if law == "none":
        return NoImmigration(m)
    product = f.child("product", None)
    product = None if product.value is None else _amount(product)
    if law == "fixed":
        return FixedImmigration(f.child("counts").array((m,)).astype(np.int64), product)
    if law == "poisson":
        return PoissonImmigration(f.child("means").array((m,)), product)
    return BernoulliImmigration(f.child("prob").number(0, 1), f.child("counts").array((m,)).astype(np.int64),
                                product)


def parse_environment(f: _Field) -> EnvironmentDistribution:
    atoms, weights = [], []
    m = None
    for a in f.child("atoms").items():
        mean = a.child("offspring").child("mean", None).value
        if mean is None:
            mean = a.child("offspring").child("children").value
        m_here = int(np.shape(mean)[0]) if np.ndim(mean) == 2 else 0
        if m_here == 0:
            a.child("offspring").fail("offspring matrix must be 2-dimensional")
        if m is None:
            m = m_here
        elif m_here != m:
            a.fail(f"atom has {m_here} types, expected {m}")
        try:
            atoms.append(EnvironmentSample(_offspring(a.child("offspring"), m),
                                           _immigration(a.child("immigration", None), m),
                                           str(a.child("name", "").value)))
        except ConfigurationError as exc:
            if str(exc).startswith(a.path):
                raise
            a.fail(str(exc))
        weights.append(a.child("weight", 1.0).number(lo=0, strict_lo=True))
    return EnvironmentDistribution(atoms, weights)


def parse_process(f: _Field) -> ProcessConfig:
    env = parse_environment(f)
    mode = f.child("mode", "MBPIFPRE").choice([x.value for x in Mode])
    init = f.child("initial", None)
    initial = init.value
    if initial is not None and initial != START_FROM_IMMIGRATION:
        initial = init.array((env.m,)).astype(np.int64)
    try:
        return ProcessConfig(env, mode, initial, 0.0, f.child("generation_cap", DEFAULT_GENERATION_CAP).integer(1))
    except ConfigurationError as exc:
        f.fail(str(exc))


def parse_cycles(f: _Field) -> CycleDistribution:
    params, weights = [], []
    m = None
    for c in f.child("cycles").items():
        eps_raw = c.child("epsilon").value
        m_here = int(np.shape(eps_raw)[0]) if np.ndim(eps_raw) == 2 else 0
        if m_here == 0:
            c.child("epsilon").fail("expected an m x m matrix")
        if m is None:
            m = m_here
        elif m_here != m:
            c.fail(f"cycle atom has {m_here} stations, expected {m}")
        eps = c.child("epsilon").array((m, m))
        epsI = c.child("epsilon_I").array((m, m))
        gamma = c.child("gamma").array((m, m + 1))
        if not np.allclose(gamma.sum(axis=1), 1.0, atol=1e-9):
            c.child("gamma").fail("rows must sum to 1 (leave probability first)")
        if gamma[:, 0].max() <= 0:
            c.child("gamma").fail("at least one station needs a positive leave probability")
        params.append(PollingCycleParams(eps, epsI, gamma, _amounts(c.child("service"), m),
                                         _amounts(c.child("switchover"), m), str(c.child("name", "").value)))
        weights.append(c.child("weight", 1.0).number(lo=0, strict_lo=True))
    return CycleDistribution(params, weights)


def parse_polling(f: _Field) -> PollingConfig:
    cycles = parse_cycles(f)
    disc = f.child("disciplines", "gated")
    if isinstance(disc.value, list):
        disciplines = tuple(d.choice(("gated", "exhaustive")) for d in disc.items())
        if len(disciplines) != cycles.m:
            disc.fail(f"expected {cycles.m} entries, got {len(disciplines)}")
    else:
        disciplines = disc.choice(("gated", "exhaustive"))
    start = f.child("start_station", 0).integer(0)
    if start >= cycles.m:
        f.child("start_station").fail(f"must be < {cycles.m}")
    mode = f.child("final_product", ProductMode.SERVICE_TIME.value).choice([x.value for x in ProductMode])
    per_station = (disciplines,) * cycles.m if isinstance(disciplines, str) else disciplines
    for k, prm in enumerate(cycles.params):
        for i, d in enumerate(per_station):
            if d == "exhaustive":
                try:
                    exhaustive_clearing_mean(prm, i)
                except GuardViolation as exc:
                    raise GuardViolation(f"{f.path}.cycles[{k}]: {exc}") from None
    return PollingConfig(cycles, disciplines, start, mode,
                         f.child("max_cycles", DEFAULT_MAX_CYCLES).integer(1),
                         f.child("max_services", DEFAULT_MAX_SERVICES).integer(1))


@dataclass
class ExperimentSpec:
    command: str
    raw: dict
    seed: int = 0
    replicates: int = 10_000
    workers: int = 1
    out_dir: str = "out"
    censored_threshold: float = 0.01
    process: ProcessConfig | None = None
    polling: PollingConfig | None = None
    busy_period: str = "standard"
    analysis: dict = field(default_factory=dict)
    tail_fit: dict = field(default_factory=dict)

    @property
    def spec_hash(self) -> str:
        # neither the output location nor the worker count changes results
        content = {k: v for k, v in self.raw.items() if k != "output"}
        if isinstance(content.get("mc"), dict):
            content["mc"] = {k: v for k, v in content["mc"].items() if k != "workers"}
        text = json.dumps(content, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _analysis_options(f: _Field) -> dict:
    opts = {}
    for key, kind in (("lyapunov_n", "int"), ("lyapunov_replicates", "int"), ("s_n", "int"),
                      ("s_replicates", "int"), ("x_max", "num"), ("tol", "num")):
        sub = f.child(key, None)
        if sub.value is not None:
            opts[key] = sub.integer(1) if kind == "int" else sub.number(lo=0, strict_lo=True)
    grid = f.child("x_grid", None)
    if grid.value is not None:
        opts["x_grid"] = tuple(float(x) for x in grid.array())
    method = f.child("method", None)
    if method.value is not None:
        opts["method"] = method.choice(("auto", "closed", "plain", "tilted"))
    kap = f.child("kesten_kappa0", None)
    if kap.value is not None:
        opts["kesten_kappa0"] = kap.number(lo=0, strict_lo=True)
    return opts


def build_spec(raw: dict, overrides: dict | None = None) -> ExperimentSpec:
    """Validate a parsed config mapping and build the experiment it describes."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config: top level must be a mapping")
    raw = json.loads(json.dumps(raw))
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    mc = raw.setdefault("mc", {})
    if not isinstance(mc, dict):
        raise ConfigurationError("mc: expected a mapping")
    for key in ("seed", "replicates", "workers"):
        if key in overrides:
            mc[key] = overrides[key]
    if "out" in overrides:
        raw.setdefault("output", {})["dir"] = overrides["out"]
    root = _Field(raw, "")
    command = root.child("command").choice(COMMANDS)
    mcf = root.child("mc")
    spec = ExperimentSpec(command, raw,
                          seed=mcf.child("seed", 0).integer(0),
                          replicates=mcf.child("replicates", 10_000).integer(0),
                          workers=mcf.child("workers", 1).integer(1),
                          censored_threshold=mcf.child("censored_threshold", 0.01).number(0, 1))
    spec.out_dir = str(root.child("output", {}).child("dir", "out").value)
    if command in ("analyze", "simulate-branching"):
        spec.process = parse_process(root.child("environment"))
    if command in ("simulate-polling", "validate-equivalence"):
        spec.polling = parse_polling(root.child("polling"))
        spec.busy_period = root.child("polling").child("busy_period", "standard").choice(("standard", "generalized"))
    if command == "analyze":
        spec.analysis = _analysis_options(root.child("analysis", {}))
    if command == "tail-fit":
        tf = root.child("tail_fit")
        spec.tail_fit = {"input": str(tf.child("input").value),
                         "column": str(tf.child("column", "theta_total").value),
                         "k": tf.child("k", "auto").value}
        if spec.tail_fit["k"] != "auto":
            tf.child("k").integer(1)
    return spec


def load_spec(path, overrides: dict | None = None) -> ExperimentSpec:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
    return build_spec(raw, overrides)
