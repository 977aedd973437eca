"""Scenario definitions, the built-in suite S1-S8 and the scenario file format.

A scenario file is UTF-8 ``key = value`` text.  Keys before the first
section header describe the run; ``[system]``, ``[controller]`` and
``[analysis]`` follow.  Unknown keys or sections are errors::

    name = S1-exp-flock
    horizon = 5.0
    output_step = 0.05
    p = 2.0
    paths = 20000
    seed = 101

    [system]
    n = 4
    d = 2
    lambda = 1.0
    kernel = const:1.0
    noise = const:0.5
    sampler = uniform_gaussian
    sampler.box = 2.0

    [controller]
    dt = 0.001

    [analysis]
    passes = metrics, fit
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .errors import ConfigError
from .integrator import SAMPLERS, StepController, SystemConfig
from .kernels import parse_kernel
from .noise import ConstantNoise, parse_noise
from .paths import uniform_grid

__all__ = [
    "PASSES",
    "AnalysisSpec",
    "Scenario",
    "builtin_scenarios",
    "get_scenario",
    "parse_scenario",
    "serialize_scenario",
    "load_scenario",
]

PASSES = ("metrics", "fit", "comparison", "event_a", "appendix_a", "dufresne", "envelope")


@dataclass(frozen=True)
class AnalysisSpec:
    passes: tuple = ("metrics",)
    fit_model: str = "Exponential"
    fit_window: Optional[tuple] = None
    cond_fit_model: str = "Algebraic"
    comparison_band: float = 0.05
    beta: Optional[float] = None
    q: Optional[float] = None
    t_trunc: Optional[float] = None
    c_lil: Optional[float] = None
    constant_form: str = "proof"
    extension_dt: float = 0.01
    envelope_a: Optional[float] = None
    envelope_alpha: Optional[float] = None
    expected: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    cfg: SystemConfig
    controller: StepController
    horizon: float
    output_step: float
    p_list: tuple = (2.0,)
    n_paths: int = 1000
    master_seed: int = 0
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    description: str = ""

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.n_paths < 0:
            raise ConfigError("path count must be non-negative")
        uniform_grid(self.horizon, self.output_step)
        unknown = set(self.analysis.passes) - set(PASSES)
        if unknown:
            raise ConfigError(f"unknown analysis passes {sorted(unknown)}")
        passes = self.analysis.passes
        if "appendix_a" in passes and (self.cfg.n != 2 or self.cfg.d != 1):
            raise ConfigError("appendix_a needs N = 2 and d = 1")
        if "appendix_a" in passes and "event_a" in passes:
            raise ConfigError("appendix_a and event_a both define the conditioning event")
        if "event_a" in passes or "dufresne" in passes:
            if not isinstance(self.cfg.noise, ConstantNoise):
                raise ConfigError("event A needs a constant noise intensity")
            if self.analysis.beta is None:
                raise ConfigError("event A needs beta")
        if "event_a" in passes and self.analysis.q is None:
            raise ConfigError("event A needs q")
        if "envelope" in passes and (self.analysis.envelope_a is None
                                     or self.analysis.envelope_alpha is None):
            raise ConfigError("envelope pass needs envelope_a and envelope_alpha")

    @property
    def output_grid(self):
        return uniform_grid(self.horizon, self.output_step)

    def with_overrides(self, paths=None, seed=None) -> "Scenario":
        changes = {}
        if paths is not None:
            changes["n_paths"] = int(paths)
        if seed is not None:
            changes["master_seed"] = int(seed)
        return replace(self, **changes) if changes else self


# ---------------------------------------------------------------------------
# built-in suite


def builtin_scenarios() -> list:
    from .kernels import Constant, PowerLaw

    def system(n, d, kernel, noise, sampler, **params):
        return SystemConfig(n, d, 1.0, kernel, noise, sampler, params)

    return [
        Scenario(
            "S1-exp-flock",
            system(4, 2, Constant(1.0), ConstantNoise(0.5), "uniform_gaussian",
                   box=2.0, vel_std=1.0),
            StepController(1e-3), 5.0, 0.05, (2.0,), 20000, 101,
            AnalysisSpec(("metrics", "fit", "comparison"), fit_window=(1.0, 5.0)),
            "constant weight: E|v(t)| decays like exp(-lambda psi_* t)",
        ),
        Scenario(
            "S2-comparison",
            system(5, 2, PowerLaw(1.2), ConstantNoise(0.4), "uniform_gaussian",
                   box=2.0, vel_std=1.0),
            StepController(1e-3), 2.0, 0.02, (2.0,), 1000, 102,
            AnalysisSpec(("metrics", "comparison")),
            "pathwise domination of |v|_p by the comparison process",
        ),
        Scenario(
            "S3-martingale",
            system(1, 1, Constant(1.0), ConstantNoise(0.5), "gaussian"),
            StepController(1e-2), 5.0, 1.0, (2.0,), 100000, 103,
            AnalysisSpec(("metrics",)),
            "unit mean of the exponential martingale",
        ),
        Scenario(
            "S4-collision-avoid",
            system(5, 1, PowerLaw(1.5), ConstantNoise(0.3), "lattice",
                   spacing=1.0, speed=2.0, jitter=0.1),
            StepController(5e-3), 10.0, 0.1, (2.0,), 2000, 104,
            AnalysisSpec(("metrics",)),
            "no collisions for a non-integrable singular weight",
        ),
        Scenario(
            "S5-event-A",
            system(4, 2, PowerLaw(1.0), ConstantNoise(0.5), "gaussian",
                   pos_std=0.3, vel_std=0.05),
            StepController(5e-3), 20.0, 0.1, (2.0,), 10000, 105,
            AnalysisSpec(("metrics", "event_a", "fit"), beta=4.0, q=2.0),
            "conditional flocking in mean on event A",
        ),
        Scenario(
            "S6-strong-order",
            system(4, 2, Constant(1.0), ConstantNoise(0.5), "uniform_gaussian",
                   box=2.0, vel_std=1.0),
            StepController(1e-2), 1.0, 0.1, (2.0,), 1000, 106,
            AnalysisSpec(("metrics",)),
            "strong convergence against the exact geometric Brownian solution",
        ),
        Scenario(
            "S7-appendixA",
            system(2, 1, PowerLaw(2.0), ConstantNoise(0.3), "two_particle",
                   pos=0.5, vel=1.0),
            StepController(5e-3), 5.0, 0.05, (2.0,), 10000, 107,
            AnalysisSpec(("metrics", "appendix_a")),
            "two particles that do not flock on the tail-integral event",
        ),
        Scenario(
            "S8-dufresne",
            system(1, 1, Constant(1.0), ConstantNoise(0.5), "gaussian"),
            StepController(1e-3), 20.0, 1.0, (2.0,), 10000, 108,
            AnalysisSpec(("dufresne",), beta=4.0),
            "inverse-gamma law of the exponential functional",
        ),
    ]


def get_scenario(name: str) -> Scenario:
    for sc in builtin_scenarios():
        if sc.name == name or sc.name.split("-")[0] == name:
            return sc
    raise ConfigError(f"no built-in scenario named {name!r}")


# ---------------------------------------------------------------------------
# file format


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return "inf" if math.isinf(x) else repr(x)
    return str(x)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _number(text: str, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"expected {kind.__name__}, got {text!r}") from None


def serialize_scenario(sc: Scenario) -> str:
    lines = [
        f"name = {sc.name}",
        f"horizon = {_fmt(float(sc.horizon))}",
        f"output_step = {_fmt(float(sc.output_step))}",
        f"p = {', '.join(_fmt(float(p)) for p in sc.p_list)}",
        f"paths = {sc.n_paths}",
        f"seed = {sc.master_seed}",
    ]
    if sc.description:
        lines.append(f"description = {sc.description}")
    cfg = sc.cfg
    lines += ["", "[system]", f"n = {cfg.n}", f"d = {cfg.d}",
              f"lambda = {_fmt(float(cfg.lam))}", f"kernel = {cfg.kernel.spec()}",
              f"noise = {cfg.noise.spec()}", f"sampler = {cfg.sampler}"]
    for key in sorted(cfg.sampler_params):
        lines.append(f"sampler.{key} = {_fmt(float(cfg.sampler_params[key]))}")
    ctrl = sc.controller
    lines += ["", "[controller]", f"dt = {_fmt(float(ctrl.dt_base))}",
              f"dt_min = {_fmt(float(ctrl.dt_min))}",
              f"collision_threshold = {_fmt(float(ctrl.collision_threshold))}",
              f"c_cfl = {_fmt(float(ctrl.c_cfl))}", f"c_stiff = {_fmt(float(ctrl.c_stiff))}"]
    if ctrl.cutoffs is None:
        lines.append(f"a1 = {_fmt(float(ctrl.a1))}")
    else:
        lines.append(f"cutoffs = {', '.join(_fmt(float(a)) for a in ctrl.cutoffs)}")
    an = sc.analysis
    lines += ["", "[analysis]", f"passes = {', '.join(an.passes)}",
              f"fit_model = {an.fit_model}", f"cond_fit_model = {an.cond_fit_model}",
              f"comparison_band = {_fmt(float(an.comparison_band))}",
              f"constant_form = {an.constant_form}",
              f"extension_dt = {_fmt(float(an.extension_dt))}"]
    if an.fit_window is not None:
        lines.append(f"fit_window = {', '.join(_fmt(float(a)) for a in an.fit_window)}")
    for key in ("beta", "q", "t_trunc", "c_lil", "envelope_a", "envelope_alpha"):
        val = getattr(an, key)
        if val is not None:
            lines.append(f"{key} = {_fmt(float(val))}")
    for key in sorted(an.expected):
        lines.append(f"expect_{key} = {_fmt(float(an.expected[key]))}")
    return "\n".join(lines) + "\n"


_RUN_KEYS = {"name", "horizon", "output_step", "p", "paths", "seed", "description"}
_SYSTEM_KEYS = {"n", "d", "lambda", "kernel", "noise", "sampler"}
_CONTROLLER_KEYS = {"dt", "dt_min", "a1", "collision_threshold", "c_cfl", "c_stiff", "cutoffs"}
_ANALYSIS_KEYS = {f.name for f in fields(AnalysisSpec)} - {"expected"}


def parse_scenario(text: str) -> Scenario:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed scenario file: {exc}") from None
    extra = set(parser.sections()) - {"run", "system", "controller", "analysis"}
    if extra:
        raise ConfigError(f"unknown sections {sorted(extra)}")
    if text.lstrip().startswith("[run]"):
        raise ConfigError("the run keys go before the first section header")
    run = dict(parser["run"])
    system = dict(parser["system"]) if parser.has_section("system") else {}
    ctrl = dict(parser["controller"]) if parser.has_section("controller") else {}
    analysis = dict(parser["analysis"]) if parser.has_section("analysis") else {}

    def check(keys, allowed, section, prefix=None):
        bad = [k for k in keys if k not in allowed and not (prefix and k.startswith(prefix))]
        if bad:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")

    check(run, _RUN_KEYS, "run")
    check(system, _SYSTEM_KEYS, "system", "sampler.")
    check(ctrl, _CONTROLLER_KEYS, "controller")
    check(analysis, _ANALYSIS_KEYS, "analysis", "expect_")
    for key in ("name", "horizon", "output_step"):
        if key not in run:
            raise ConfigError(f"missing run key {key!r}")
    for key in ("n", "d", "kernel", "noise"):
        if key not in system:
            raise ConfigError(f"missing [system] key {key!r}")
    if "dt" not in ctrl:
        raise ConfigError("missing [controller] key 'dt'")

    sampler = system.get("sampler", "uniform_gaussian")
    if sampler not in SAMPLERS:
        raise ConfigError(f"unknown sampler {sampler!r}")
    params = {k.split(".", 1)[1]: _number(v) for k, v in system.items() if k.startswith("sampler.")}
    cfg = SystemConfig(
        _number(system["n"], int), _number(system["d"], int),
        _number(system.get("lambda", "1.0")), parse_kernel(system["kernel"]),
        parse_noise(system["noise"]), sampler, params)

    ckw = {"dt_base": _number(ctrl["dt"])}
    for key in ("dt_min", "a1", "collision_threshold", "c_cfl", "c_stiff"):
        if key in ctrl:
            ckw[key] = _number(ctrl[key])
    if "cutoffs" in ctrl:
        ckw["cutoffs"] = _floats(ctrl["cutoffs"])
    controller = StepController(**ckw)

    akw = {}
    expected = {}
    for key, val in analysis.items():
        if key.startswith("expect_"):
            expected[key[len("expect_"):]] = _number(val)
        elif key == "passes":
            akw["passes"] = tuple(s.strip() for s in val.split(",") if s.strip())
        elif key == "fit_window":
            window = _floats(val)
            if len(window) != 2:
                raise ConfigError("fit_window needs two numbers")
            akw["fit_window"] = window
        elif key in ("fit_model", "cond_fit_model", "constant_form"):
            akw[key] = val.strip()
        else:
            akw[key] = _number(val)
    akw["expected"] = expected
    for key in ("fit_model", "cond_fit_model"):
        if akw.get(key, "Exponential") not in ("Exponential", "Algebraic"):
            raise ConfigError(f"{key} must be Exponential or Algebraic")

    return Scenario(
        name=run["name"].strip(),
        cfg=cfg,
        controller=controller,
        horizon=_number(run["horizon"]),
        output_step=_number(run["output_step"]),
        p_list=_floats(run.get("p", "2.0")),
        n_paths=_number(run.get("paths", "1000"), int),
        master_seed=_number(run.get("seed", "0"), int),
        analysis=AnalysisSpec(**akw),
        description=run.get("description", "").strip(),
    )


def load_scenario(name_or_path: str) -> Scenario:
    """A built-in scenario by (short) name, else a scenario file path."""
    try:
        return get_scenario(name_or_path)
    except ConfigError:
        pass
    try:
        with open(name_or_path, encoding="utf-8") as fh:
            return parse_scenario(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"{name_or_path!r} is neither a built-in scenario nor a file") from None
