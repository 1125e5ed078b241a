"""JSON experiment configuration: schema, defaults and validation.

Example::

    {
      "problem":  {"preset": "c_cubic", "n": 99, "q_star": "one_plus_sine 0.5 1"},
      "adaptive": {"T": 5, "dt": 0.001},
      "noise":    {"delta": 0.01, "sp_width": 0.5, "ti_window": 5},
      "seed": 0
    }

Field descriptors (``q_star``, ``q0``, ``q0_lin``, ``u0``, ``g``) are numbers or
strings ``const c``, ``one_plus_sine amp k`` (``1 + amp sin(k pi s)`` with
``s`` the relative position), ``bump center width height``
(``1 + height exp(-((x - center)/width)^2)``).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .forward import NONLINEARITIES, ProblemSpec, make_problem
from .grid import Grid, GridError
from .mras import AdaptiveConfig, LipschitzMode, Scheme, SigmaMode, StabilizerMode
from .noise import NoiseConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


PRESETS = {
    "c_cubic": {"kind": "c", "q_star": "one_plus_sine 0.5 1", "u0": 1.0, "g": 10.0,
                "boundary": [1.0, 1.0], "c_lower": 1.0},
    "c_linear": {"kind": "c", "q_star": "one_plus_sine 0.5 1", "u0": 1.0, "g": 10.0,
                 "boundary": [1.0, 1.0], "c_lower": 1.0},
    "a_cubic": {"kind": "a", "q_star": "one_plus_sine 0.5 1", "u0": -1.0, "g": -10.0,
                "boundary": [-1.0, -1.0], "c_lower": 1.0},
}

SCHEMA = {
    "problem": {"preset", "kind", "nonlinearity", "n", "a", "b", "q_star", "u0", "g",
                "boundary", "c_lower"},
    "adaptive": {"T", "dt", "M", "C_coe", "q0", "q0_lin", "lipschitz", "sigma", "stabilizer",
                 "scheme"},
    "noise": {"delta", "p", "seed", "sp_width", "ti_window", "sp_boundary"},
    "verify": {"samples", "seed", "dual_norms", "noisy_omega"},
    "output": {"snapshot_stride"},
}
TOP_KEYS = set(SCHEMA) | {"output_dir", "seed"}

ADAPTIVE_DEFAULTS = {"dt": 1e-3, "M": 1.0, "C_coe": None, "q0": "const 1", "q0_lin": None,
                     "lipschitz": "formula", "sigma": "auto", "stabilizer": "guaranteed",
                     "scheme": "auto"}
VERIFY_DEFAULTS = {"samples": 100, "seed": None, "dual_norms": True, "noisy_omega": None}


@dataclass
class ExperimentConfig:
    problem: dict
    adaptive: dict
    noise: dict | None
    verify: dict = field(default_factory=lambda: dict(VERIFY_DEFAULTS))
    output: dict = field(default_factory=lambda: {"snapshot_stride": 1})
    output_dir: str = "out"
    seed: int = 0
    source: str | None = None

    def to_json(self) -> dict:
        d = {"problem": self.problem, "adaptive": self.adaptive, "verify": self.verify,
             "output": self.output, "output_dir": self.output_dir, "seed": self.seed}
        if self.noise is not None:
            d["noise"] = self.noise
        return copy.deepcopy(d)

    def replace(self, section: str, key: str, value) -> "ExperimentConfig":
        raw = self.to_json()
        raw.setdefault(section, {})[key] = value
        return from_dict(raw, source=self.source)

    # builders

    def grid(self) -> Grid:
        p = self.problem
        return Grid(float(p["a"]), float(p["b"]), int(p["n"]))

    def spec(self) -> ProblemSpec:
        p = self.problem
        grid = self.grid()
        return make_problem(p["kind"], grid, p["nonlinearity"],
                            q_star=descriptor(p["q_star"], grid), u0=descriptor(p["u0"], grid),
                            g=float(descriptor(p["g"], grid)(np.array([grid.a]))[0])
                            if _is_constant(p["g"]) else _field_source(grid, p["g"]),
                            boundary=tuple(p["boundary"]), c_lower=p["c_lower"],
                            label=p.get("preset") or "")

    def adaptive_config(self) -> AdaptiveConfig:
        a = self.adaptive
        grid = self.grid()
        x = grid.nodes
        lin = a["q0_lin"] if a["q0_lin"] is not None else a["q0"]
        lip = a["lipschitz"]
        return AdaptiveConfig(
            q0=descriptor(a["q0"], grid)(x), q0_lin=descriptor(lin, grid)(x), dt=a["dt"], T=a["T"],
            M=a["M"], C_coe=a["C_coe"],
            lipschitz_mode=LipschitzMode.FORMULA if lip == "formula" else LipschitzMode.CONSTANT,
            lipschitz_value=0.0 if lip == "formula" else float(lip),
            sigma=SigmaMode(str(a["sigma"])), stabilizer_mode=StabilizerMode(a["stabilizer"]),
            scheme=Scheme(a["scheme"]))

    def noise_config(self) -> NoiseConfig | None:
        if self.noise is None:
            return None
        n = dict(self.noise)
        if n.get("seed") is None:
            n["seed"] = self.seed
        return NoiseConfig(**n)

    @property
    def verify_seed(self) -> int:
        s = self.verify.get("seed")
        return self.seed if s is None else s


# ---------------------------------------------------------------- descriptors

def _is_constant(desc) -> bool:
    if isinstance(desc, (int, float)) and not isinstance(desc, bool):
        return True
    return isinstance(desc, str) and desc.split()[:1] == ["const"]


def descriptor(desc, grid: Grid):
    """Turn a field descriptor into a vectorized function of ``x``."""
    if isinstance(desc, bool):
        raise ConfigError(f"bad field descriptor {desc!r}")
    if isinstance(desc, (int, float)):
        c = float(desc)
        return lambda x: np.full(np.shape(x), c)
    if not isinstance(desc, str) or not desc.split():
        raise ConfigError(f"bad field descriptor {desc!r}")
    name, *args = desc.split()
    try:
        vals = [float(v) for v in args]
    except ValueError:
        raise ConfigError(f"non-numeric argument in descriptor {desc!r}") from None
    arity = {"const": 1, "one_plus_sine": 2, "bump": 3}
    if name not in arity:
        raise ConfigError(f"unknown descriptor {name!r} (known: {', '.join(arity)})")
    if len(vals) != arity[name]:
        raise ConfigError(f"descriptor {name!r} takes {arity[name]} arguments, got {len(vals)}")
    if name == "const":
        c = vals[0]
        return lambda x: np.full(np.shape(x), c)
    if name == "one_plus_sine":
        amp, k = vals
        return lambda x: 1.0 + amp * np.sin(k * np.pi * (np.asarray(x) - grid.a) / grid.length)
    center, width, height = vals
    if not width > 0:
        raise ConfigError("bump width must be positive")
    return lambda x: 1.0 + height * np.exp(-((np.asarray(x) - center) / width) ** 2)


def _field_source(grid: Grid, desc):
    vals = descriptor(desc, grid)(grid.nodes)
    vals.setflags(write=False)

    def g(t):
        return vals

    g.label = str(desc)
    return g


# ---------------------------------------------------------------- parsing

def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def from_dict(raw: dict, source: str | None = None) -> ExperimentConfig:
    errs: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    for k in raw:
        if k not in TOP_KEYS:
            errs.append(f"unknown key {k!r} at top level")
    for sec, keys in SCHEMA.items():
        val = raw.get(sec)
        if val is None:
            continue
        if not isinstance(val, dict):
            errs.append(f"section {sec!r} must be an object")
            continue
        for k in val:
            if k not in keys:
                errs.append(f"unknown key {k!r} in {sec}")
    if errs:
        raise ConfigError(errs)

    prob_raw = dict(raw.get("problem") or {})
    preset = prob_raw.get("preset")
    problem = {"preset": preset, "a": 0.0, "b": 1.0, "n": 99}
    if preset is not None:
        if preset not in PRESETS:
            errs.append(f"unknown preset {preset!r} (known: {', '.join(PRESETS)})")
        else:
            problem.update(PRESETS[preset])
            problem["nonlinearity"] = preset
    problem.update(prob_raw)
    for k in ("kind", "nonlinearity", "q_star", "u0", "g", "boundary", "c_lower"):
        if k not in problem:
            errs.append(f"problem.{k} is required without a preset")
    if problem.get("kind") not in (None, "c", "a"):
        errs.append("problem.kind must be 'c' or 'a'")
    if "nonlinearity" in problem and problem["nonlinearity"] not in NONLINEARITIES:
        errs.append(f"unknown nonlinearity {problem['nonlinearity']!r}")
    n = problem.get("n")
    if not (isinstance(n, int) and not isinstance(n, bool) and n >= 1):
        errs.append("problem.n must be a positive integer")
    for k in ("a", "b"):
        if not _number(problem.get(k)):
            errs.append(f"problem.{k} must be a number")
    if _number(problem.get("a")) and _number(problem.get("b")) and not problem["b"] > problem["a"]:
        errs.append("problem.b must exceed problem.a")
    bnd = problem.get("boundary")
    if "boundary" in problem and not (isinstance(bnd, list) and len(bnd) == 2 and all(map(_number, bnd))):
        errs.append("problem.boundary must be two numbers")
    if "c_lower" in problem and not (_number(problem["c_lower"]) and problem["c_lower"] > 0):
        errs.append("problem.c_lower must be positive")

    adaptive = dict(ADAPTIVE_DEFAULTS)
    adaptive.update(raw.get("adaptive") or {})
    T, dt = adaptive.get("T"), adaptive.get("dt")
    if T is None:
        errs.append("adaptive.T is required")
    elif not (_number(T) and T > 0):
        errs.append("adaptive.T must be positive")
    if not (_number(dt) and dt > 0):
        errs.append("adaptive.dt must be positive")
    elif _number(T) and dt > T:
        errs.append("dt exceeds horizon")
    if not (_number(adaptive["M"]) and adaptive["M"] > 0):
        errs.append("adaptive.M must be positive")
    if adaptive["C_coe"] is not None and not (_number(adaptive["C_coe"]) and adaptive["C_coe"] > 0):
        errs.append("adaptive.C_coe must be positive or null")
    lip = adaptive["lipschitz"]
    if not (lip == "formula" or (_number(lip) and lip >= 0)):
        errs.append("adaptive.lipschitz must be 'formula' or a nonnegative number")
    for key, enum_cls in (("sigma", SigmaMode), ("stabilizer", StabilizerMode), ("scheme", Scheme)):
        try:
            enum_cls(str(adaptive[key]))
        except ValueError:
            errs.append(f"adaptive.{key}: {adaptive[key]!r} not one of "
                        f"{', '.join(m.value for m in enum_cls)}")

    noise = raw.get("noise")
    if noise is not None:
        noise = {"delta": 0.0, "p": 2.0, "seed": None, "sp_width": 0.0, "ti_window": 1,
                 "sp_boundary": "zero", **noise}
        try:
            NoiseConfig(**{**noise, "seed": 0 if noise["seed"] is None else noise["seed"]})
        except (TypeError, ValueError) as exc:
            errs.extend(f"noise: {m}" for m in str(exc).split("; "))

    verify = {**VERIFY_DEFAULTS, **(raw.get("verify") or {})}
    if not (isinstance(verify["samples"], int) and verify["samples"] >= 1):
        errs.append("verify.samples must be a positive integer")
    output = {"snapshot_stride": 1, **(raw.get("output") or {})}
    if not (isinstance(output["snapshot_stride"], int) and output["snapshot_stride"] >= 1):
        errs.append("output.snapshot_stride must be a positive integer")
    seed = raw.get("seed", 0)
    if not (isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2 ** 64):
        errs.append("seed must be a nonnegative 64-bit integer")
    if errs:
        raise ConfigError(errs)

    cfg = ExperimentConfig(problem, adaptive, noise, verify, output,
                           str(raw.get("output_dir", "out")), seed, source)
    # descriptors are checked by building once
    try:
        cfg.spec()
        cfg.adaptive_config()
    except (ConfigError, GridError) as exc:
        raise ConfigError(getattr(exc, "problems", [str(exc)])) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return from_dict(raw, source=str(path))
