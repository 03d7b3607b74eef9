"""INI experiment configuration.

A config file has an ``[experiment]`` section naming the scenario and seeds,
plus whichever component sections that scenario uses. Every key is typed by
the schema below; unknown sections or keys, bad values and missing required
entries raise :class:`ConfigError` with the offending line number.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from ..core import ConfigError
from ..dynamics import BicycleParams, IntegratorConfig, VehicleParams
from ..filter import FilterConfig
from ..rl.reinforce import TrainConfig

SCENARIOS = ("invariance_1d", "recovery_1d", "baselines_1d", "train_4d", "unbiasedness", "adversarial")
BASELINES = ("acbf", "racbf", "racbfs", "cbc")
SHIELD_MODES = ("on", "off", "both")


def _float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _opt_float(s: str) -> Optional[float]:
    return None if s.strip().lower() in ("", "none") else _float(s)


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> Tuple[float, ...]:
    return tuple(_float(p) for p in re.split(r"[,\s]+", s.strip()) if p)


def _ints(s: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in re.split(r"[,\s]+", s.strip()) if p)


def _names(s: str) -> Tuple[str, ...]:
    return tuple(p.strip().lower() for p in re.split(r"[,\s]+", s.strip()) if p.strip())


# section -> key -> parser
SCHEMA: Dict[str, Dict[str, Callable[[str], Any]]] = {
    "experiment": {"scenario": str, "seeds": _ints, "output_dir": str},
    "integrator": {"dt": _float, "method": str, "horizon": _float},
    "system": {"a": _float, "b": _float, "nominal_gain": _float, "half_width": _float, "x0": _floats},
    "filter": {
        "theta": _float,
        "eta": _float,
        "slack": _float,
        "xdot_tol": _float,
        "clip_low": _opt_float,
        "clip_high": _opt_float,
        "alpha_norm": str,
        "frozen_gamma": _opt_float,
    },
    "model": {"lambda_hat": _float, "lower": _float, "upper": _float},
    "baselines": {
        "controllers": _names,
        "gamma_rate": _float,
        "a_known": _float,
        "barrier_k": _float,
        "nu_tilde": _float,
        "d_bound": _float,
        "smid_period": _float,
        "cbc_alpha_bound": _float,
        "cbc_beta_low": _float,
        "cbc_beta_high": _float,
        "cbc_eta": _float,
        "action_clip": _opt_float,
    },
    "rl": {
        "gamma": _float,
        "episodes": int,
        "step_size": _float,
        "ts": _float,
        "max_steps": int,
        "action_clip": _opt_float,
        "hidden": _ints,
        "sigma": _float,
        "mean_subtract": _bool,
        "shield": str,
    },
    "vehicle": {f.name: _float for f in fields(VehicleParams)} | {"x0": _floats},
    "bicycle": {f.name: _float for f in fields(BicycleParams)},
    "unbiasedness": {"n_samples": int, "temperature": _float, "z_limit": _float},
    "adversarial": {"x0": _floats, "random_scale": _float, "euler_dt": _float},
}

REQUIRED: Dict[str, Tuple[str, ...]] = {
    "invariance_1d": ("integrator", "system", "filter", "model"),
    "recovery_1d": ("integrator", "system", "filter", "model"),
    "baselines_1d": ("integrator", "system", "filter", "model", "baselines"),
    "train_4d": ("rl", "filter", "model", "vehicle"),
    "unbiasedness": ("unbiasedness",),
    "adversarial": ("system", "adversarial"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    seeds: Tuple[int, ...]
    output_dir: str
    integrator: Optional[IntegratorConfig] = None
    filter: Optional[FilterConfig] = None
    model: Dict[str, float] = field(default_factory=dict)
    system: Dict[str, Any] = field(default_factory=dict)
    baselines: Tuple[str, ...] = ()
    baseline_params: Dict[str, Any] = field(default_factory=dict)
    rl: Optional[TrainConfig] = None
    shield: str = "both"
    vehicle: VehicleParams = VehicleParams()
    vehicle_x0: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    bicycle: BicycleParams = BicycleParams()
    extra: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    source_text: str = ""
    source_path: str = ""

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.source_text.encode("utf-8")).hexdigest()

    def with_overrides(
        self,
        seed: Optional[int] = None,
        out: Optional[str] = None,
        dt: Optional[float] = None,
        episodes: Optional[int] = None,
    ) -> "ExperimentConfig":
        """Apply command-line overrides; ``dt`` sets the integrator step or, for training, ``T_s``."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=(int(seed),))
        if out is not None:
            cfg = replace(cfg, output_dir=str(out))
        if dt is not None:
            if not dt > 0:
                raise ConfigError("--dt must be positive")
            if cfg.integrator is not None:
                cfg = replace(cfg, integrator=replace(cfg.integrator, dt=float(dt)))
            if cfg.rl is not None:
                cfg = replace(cfg, rl=replace(cfg.rl, ts=float(dt)))
        if episodes is not None:
            if cfg.rl is None:
                raise ConfigError("--episodes only applies to training scenarios")
            if episodes < 1:
                raise ConfigError("--episodes must be >= 1")
            cfg = replace(cfg, rl=replace(cfg.rl, episodes=int(episodes)))
        return cfg


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    """Map ``(section, key)`` (and ``(section, "")`` for headers) to 1-based line numbers."""
    out: Dict[Tuple[str, str], int] = {}
    section = ""
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            out[(section, "")] = i
            continue
        key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
        out[(section, key)] = i
    return out


def _err(path: str, line: Optional[int], msg: str) -> ConfigError:
    where = f"{path}:{line}" if line else path
    return ConfigError(f"{where}: {msg}")


def parse_config(text: str, path: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    lines = _key_lines(text)
    raw: Dict[str, Dict[str, Any]] = {}
    for sec in cp.sections():
        name = sec.lower()
        if name not in SCHEMA:
            raise _err(path, lines.get((name, "")), f"unknown section [{sec}]")
        raw[name] = {}
        for key, val in cp.items(sec):
            conv = SCHEMA[name].get(key)
            if conv is None:
                raise _err(path, lines.get((name, key)), f"unknown key {key!r} in [{sec}]")
            try:
                raw[name][key] = conv(val)
            except (TypeError, ValueError) as exc:
                raise _err(path, lines.get((name, key)), f"bad value for {key!r}: {exc}") from exc

    exp = raw.get("experiment")
    if exp is None:
        raise _err(path, None, "missing [experiment] section")
    scenario = exp.get("scenario")
    if scenario not in SCENARIOS:
        raise _err(path, lines.get(("experiment", "scenario")), f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    seeds = exp.get("seeds", ())
    if not seeds:
        raise _err(path, lines.get(("experiment", "seeds")), "at least one seed is required")
    for sec in REQUIRED[scenario]:
        if sec not in raw:
            raise _err(path, None, f"scenario {scenario} needs a [{sec}] section")

    def build(sec: str, fn):
        try:
            return fn()
        except (ConfigError, TypeError, ValueError) as exc:
            raise _err(path, lines.get((sec, "")), f"[{sec}] {exc}") from exc

    integrator = None
    if "integrator" in raw:
        integrator = build("integrator", lambda: IntegratorConfig(**raw["integrator"]))
    filt = None
    if "filter" in raw:
        filt = build("filter", lambda: FilterConfig(**raw["filter"]))
    model = dict(raw.get("model", {}))
    for k in ("lambda_hat", "lower", "upper"):
        if "model" in raw and k not in model:
            raise _err(path, lines.get(("model", "")), f"[model] missing {k!r}")
    if model and not (0 < model["lower"] <= 1 <= model["upper"]):
        raise _err(path, lines.get(("model", "")), "[model] needs 0 < lower <= 1 <= upper")

    base = dict(raw.get("baselines", {}))
    names = tuple(base.pop("controllers", ()))
    for n in names:
        if n not in BASELINES:
            raise _err(path, lines.get(("baselines", "controllers")), f"unknown baseline {n!r}; choose from {BASELINES}")

    rl_raw = dict(raw.get("rl", {}))
    shield = rl_raw.pop("shield", "both")
    if shield not in SHIELD_MODES:
        raise _err(path, lines.get(("rl", "shield")), f"shield must be one of {SHIELD_MODES}")
    rl = None
    if "rl" in raw:
        if "hidden" in rl_raw:
            rl_raw["hidden"] = tuple(rl_raw["hidden"])
        rl = build("rl", lambda: TrainConfig(**rl_raw))

    veh = dict(raw.get("vehicle", {}))
    vx0 = tuple(veh.pop("x0", (0.0, 0.0, 0.0, 0.0)))
    if len(vx0) != 4:
        raise _err(path, lines.get(("vehicle", "x0")), "vehicle x0 needs 4 entries")
    vehicle = build("vehicle", lambda: VehicleParams(**veh))
    bicycle = build("bicycle", lambda: BicycleParams(**raw.get("bicycle", {})))

    extra = {k: raw[k] for k in ("unbiasedness", "adversarial") if k in raw}
    return ExperimentConfig(
        scenario=scenario,
        seeds=tuple(seeds),
        output_dir=exp.get("output_dir", f"runs/{scenario}"),
        integrator=integrator,
        filter=filt,
        model=model,
        system=dict(raw.get("system", {})),
        baselines=names,
        baseline_params=base,
        rl=rl,
        shield=shield,
        vehicle=vehicle,
        vehicle_x0=vx0,
        bicycle=bicycle,
        extra=extra,
        source_text=text,
        source_path=path,
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return parse_config(text, str(p))


def bundled_config_names() -> List[str]:
    return sorted(p.name[:-4] for p in resources.files("samplesafe.configs").iterdir() if p.name.endswith(".ini"))


def bundled_config(name: str) -> ExperimentConfig:
    """Load one of the shipped scenario configs by stem, e.g. ``"invariance_1d"``."""
    res = resources.files("samplesafe.configs").joinpath(f"{name}.ini")
    if not res.is_file():
        raise ConfigError(f"no bundled config named {name!r}; available: {bundled_config_names()}")
    return parse_config(res.read_text(encoding="utf-8"), f"samplesafe/configs/{name}.ini")


def resolve_config(ref: str) -> ExperimentConfig:
    """A path to an INI file, or the name of a bundled config."""
    if Path(ref).is_file() or ref.endswith(".ini"):
        return load_config(ref)
    return bundled_config(ref)
