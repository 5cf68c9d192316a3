"""Scenario configuration: an INI file with [scenario], [system], [filter], [output] and [raster] sections.

Unknown sections or keys are errors. Example::

    [scenario]
    system = vehicle
    controller = backup_cbf_qp
    dt = 0.001
    t_max = 20

    [filter]
    T = 0.1
    N_c = 200
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..errors import ConfigurationError
from ..systems.pendulum import GAIN_PRESETS, PendulumParams
from ..systems.scalar import ScalarParams
from ..systems.vehicle import V_STOP, VehicleParams

SYSTEMS = ("scalar", "pendulum", "vehicle")
CONTROLLERS = ("select_high", "desired", "cbf_qp_saturated", "cbf_qp", "backup_cbf_qp", "backup_direct")
DESIRED = ("zero", "select_high")
FILTER_KEYS = ("T", "N_c", "alpha", "alpha_b", "fallback")

_PARAM_TYPES = {"scalar": ScalarParams, "pendulum": PendulumParams, "vehicle": VehicleParams}


def system_param_keys(system: str) -> tuple:
    keys = tuple(f.name for f in fields(_PARAM_TYPES[system]) if f.name not in FILTER_KEYS)
    return keys + (("preset",) if system == "pendulum" else ())


@dataclass(frozen=True)
class ScenarioConfig:
    system: str
    controller: str
    initial_state: tuple
    dt: float = 1e-3
    t_max: float = 20.0
    substeps: int = 10
    seed: int = 0
    desired: Optional[str] = None
    v_stop: float = V_STOP
    require_safe: bool = False
    safety_tol: float = 1e-6
    system_params: dict = field(default_factory=dict)
    filter_params: dict = field(default_factory=dict)
    raster: dict = field(default_factory=dict)
    out_dir: str = "out"
    csv_name: Optional[str] = None
    report_name: Optional[str] = None

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigurationError(f"unknown system {self.system!r}; choose from {SYSTEMS}")
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        if self.desired is not None and self.desired not in DESIRED:
            raise ConfigurationError(f"unknown desired controller {self.desired!r}; choose from {DESIRED}")
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.t_max > 0:
            raise ConfigurationError(f"t_max must be positive, got {self.t_max}")
        if self.substeps < 1:
            raise ConfigurationError("substeps must be at least 1")
        allowed = set(system_param_keys(self.system))
        bad = set(self.system_params) - allowed
        if bad:
            raise ConfigurationError(f"unknown [system] keys for {self.system}: {sorted(bad)}")
        bad = set(self.filter_params) - set(FILTER_KEYS)
        if bad:
            raise ConfigurationError(f"unknown [filter] keys: {sorted(bad)}")
        if self.system == "pendulum" and "preset" in self.system_params:
            if self.system_params["preset"] not in GAIN_PRESETS:
                raise ConfigurationError(f"unknown pendulum preset {self.system_params['preset']!r}")
        object.__setattr__(self, "initial_state", tuple(float(v) for v in self.initial_state))

    def with_controller(self, controller: str) -> "ScenarioConfig":
        return replace(self, controller=controller)


def _floats(text: str, key: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigurationError(f"{key}: expected comma-separated numbers, got {text!r}") from exc


def _typed(value: str, key: str, kind):
    try:
        if kind is bool:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {value!r} as {kind.__name__}") from exc


_SCENARIO_KEYS = {
    "system": str,
    "controller": str,
    "initial_state": None,
    "dt": float,
    "t_max": float,
    "substeps": int,
    "seed": int,
    "desired": str,
    "v_stop": float,
    "require_safe": bool,
    "safety_tol": float,
}
_OUTPUT_KEYS = {"dir": "out_dir", "csv": "csv_name", "report": "report_name"}
_RASTER_KEYS = {"x_min": float, "x_max": float, "y_min": float, "y_max": float, "d_theta": float, "speed": float, "delta": float}


def parse_config(text: str) -> ScenarioConfig:
    """Parse INI text into a validated :class:`ScenarioConfig`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep case: parameter names like I_z, N_c
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    unknown = set(cp.sections()) - {"scenario", "system", "filter", "output", "raster"}
    if unknown:
        raise ConfigurationError(f"unknown sections: {sorted(unknown)}")
    if not cp.has_section("scenario"):
        raise ConfigurationError("missing [scenario] section")
    sc = dict(cp.items("scenario"))
    bad = set(sc) - set(_SCENARIO_KEYS)
    if bad:
        raise ConfigurationError(f"unknown [scenario] keys: {sorted(bad)}")
    for req in ("system", "controller"):
        if req not in sc:
            raise ConfigurationError(f"[scenario] needs {req}")
    kw = {}
    for key, val in sc.items():
        kind = _SCENARIO_KEYS[key]
        kw[key] = _floats(val, key) if kind is None else _typed(val, key, kind)
    system = kw["system"]
    if system not in SYSTEMS:
        raise ConfigurationError(f"unknown system {system!r}; choose from {SYSTEMS}")

    sys_params = {}
    if cp.has_section("system"):
        ptype = _PARAM_TYPES[system]
        types = {f.name: f.type for f in fields(ptype)}
        for key, val in cp.items("system"):
            if key == "preset" and system == "pendulum":
                sys_params[key] = val.strip()
            elif key in system_param_keys(system):
                sys_params[key] = _typed(val, key, int if types[key] in (int, "int") else float)
            else:
                raise ConfigurationError(f"unknown [system] key {key!r} for {system}")
    filt = {}
    if cp.has_section("filter"):
        for key, val in cp.items("filter"):
            if key not in FILTER_KEYS:
                raise ConfigurationError(f"unknown [filter] key {key!r}")
            filt[key] = val.strip() if key == "fallback" else _typed(val, key, int if key == "N_c" else float)
    out = {}
    if cp.has_section("output"):
        for key, val in cp.items("output"):
            if key not in _OUTPUT_KEYS:
                raise ConfigurationError(f"unknown [output] key {key!r}")
            out[_OUTPUT_KEYS[key]] = val.strip()
    raster = {}
    if cp.has_section("raster"):
        for key, val in cp.items("raster"):
            if key not in _RASTER_KEYS:
                raise ConfigurationError(f"unknown [raster] key {key!r}")
            raster[key] = _typed(val, key, _RASTER_KEYS[key])
    if "initial_state" not in kw:
        raise ConfigurationError("[scenario] needs initial_state")
    return ScenarioConfig(system_params=sys_params, filter_params=filt, raster=raster, **kw, **out)


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text)
