"""
Scenario files: a YAML (or JSON) description of a simulation. Rates are given
in Mbps, durations in seconds.

    name: scenario1
    tau: 0.05
    horizon: 12000
    seed: 1
    region: {cmax: 400, gamma: 0.5}
    delay_bound: 0.5
    violation_prob: 0.05
    users:
      - {traffic: SAT, rho_g: 150, rho_M: 250}
"""
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import yaml
from yaml.constructor import SafeConstructor

from src.common.errors import InvalidArgumentError, ScenarioError
from src.data.traffic import TrafficKind, TrafficSpec
from src.env.simulator import SimConfig
from src.models.rate_region import RateRegion
from src.models.schedulers import SchedulerKind
from src.models.solver import SolverMethod
from src.models.tbrm import TbrmMode

log = logging.getLogger(__name__)

MBPS = 1e6
# traffic parameters that carry a rate and are therefore scaled from Mbps
RATE_PARAMS = ("base_rate", "amp1", "amp2", "on_rate", "mean_rate")
USER_FIELDS = ("traffic", "rho_g", "rho_M", "delay_bound", "violation_prob", "sigma_g_mult", "sigma_M_mult",
               "params", "seed")
DEFAULT_DELAY_BOUND = 0.5
DEFAULT_VIOLATION_PROB = 0.05

Lines = Dict[str, int]


def _construct(node: yaml.Node, path: str, lines: Lines, constructor: SafeConstructor) -> Any:
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = str(key_node.value)
            out[key] = _construct(value_node, f"{path}.{key}" if path else key, lines, constructor)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, f"{path}[{i}]", lines, constructor) for i, v in enumerate(node.value)]
    return constructor.construct_object(node, deep=True)


def parse_with_lines(text: str, source: Optional[str] = None) -> Tuple[Any, Lines]:
    """Parse YAML/JSON text, returning the data and a map from field path to 1-based line."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError(str(getattr(e, "problem", None) or e), field="<document>", path=source,
                            line=mark.line + 1 if mark is not None else None) from e
    if root is None:
        raise ScenarioError("empty scenario", field="<document>", path=source, line=1)
    lines: Lines = {}
    return _construct(root, "", lines, SafeConstructor()), lines


class _Reader:
    """Typed field access that reports the offending path and line."""

    def __init__(self, lines: Lines, source: Optional[str]):
        self.lines = lines
        self.source = source

    def error(self, message: str, path: str) -> ScenarioError:
        line = self.lines.get(path)
        parent = path
        while line is None and parent:
            parent = parent.rpartition(".")[0] if "." in parent else ""
            line = self.lines.get(parent)
        return ScenarioError(message, field=path, path=self.source, line=line)

    def get(self, data: Mapping, key: str, prefix: str, default: Any = ..., kind: type = float) -> Any:
        path = f"{prefix}.{key}" if prefix else key
        if key not in data:
            if default is ...:
                raise self.error("required field is missing", path)
            return default
        value = data[key]
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise self.error(f"expected a number, got {value!r}", path)
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise self.error(f"expected an integer, got {value!r}", path)
            return value
        if kind is list:
            if not isinstance(value, list) or not value:
                raise self.error("expected a non-empty list", path)
            return value
        if kind is dict:
            if not isinstance(value, dict):
                raise self.error("expected a mapping", path)
            return value
        return kind(value)

    def numbers(self, data: Mapping, key: str, prefix: str, n: int, default: Any = ...) -> np.ndarray:
        """A scalar broadcast to n users or a list of n numbers."""
        path = f"{prefix}.{key}" if prefix else key
        value = data.get(key, default)
        if value is ...:
            raise self.error("required field is missing", path)
        values = value if isinstance(value, list) else [value]
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
            raise self.error(f"expected numbers, got {value!r}", path)
        if len(values) not in (1, n):
            raise self.error(f"expected 1 or {n} values, got {len(values)}", path)
        return np.broadcast_to(np.asarray(values, dtype=float), (n,)).copy()


def _enum(reader: _Reader, data: Mapping, key: str, enum_cls: type, default: Any) -> Any:
    try:
        return enum_cls(data.get(key, default))
    except ValueError:
        raise reader.error(f"expected one of {[e.value for e in enum_cls]}", key) from None


def _user(reader: _Reader, block: Any, index: int, defaults: Mapping[str, float]) -> Dict[str, Any]:
    prefix = f"users[{index}]"
    if not isinstance(block, dict):
        raise reader.error("expected a mapping", prefix)
    unknown = sorted(set(block) - set(USER_FIELDS))
    if unknown:
        raise reader.error(f"unknown field(s) {unknown}", f"{prefix}.{unknown[0]}")
    traffic = reader.get(block, "traffic", prefix, kind=str)
    try:
        kind = TrafficKind(traffic)
    except ValueError:
        raise reader.error(f"unknown traffic kind, expected one of {[k.value for k in TrafficKind]}",
                           f"{prefix}.traffic") from None
    rho_g = reader.get(block, "rho_g", prefix)
    rho_M = reader.get(block, "rho_M", prefix)
    if rho_g < 0:
        raise reader.error("must be >= 0", f"{prefix}.rho_g")
    if rho_g == 0 and rho_M == 0:
        log.warning("%s: bounds [0, 0] read as both bounds disabled", prefix)
        rho_M = np.inf
    elif rho_M <= 0:
        raise reader.error("must be > 0 unless both bounds are 0", f"{prefix}.rho_M")
    elif rho_g > rho_M:
        raise reader.error(f"guaranteed rate {rho_g} exceeds maximal rate {rho_M}", f"{prefix}.rho_g")

    params = dict(reader.get(block, "params", prefix, default={}, kind=dict))
    for key in RATE_PARAMS:
        if key in params:
            params[key] = reader.get(params, key, f"{prefix}.params") * MBPS
    user = {
        "traffic": TrafficSpec(kind=kind, params=params, seed=reader.get(block, "seed", prefix, 0, kind=int)),
        "rho_g": rho_g * MBPS,
        "rho_M": rho_M * MBPS,
    }
    for key in ("delay_bound", "violation_prob", "sigma_g_mult", "sigma_M_mult"):
        user[key] = reader.get(block, key, prefix, defaults[key])
    return user


def config_from_dict(data: Mapping[str, Any], lines: Optional[Lines] = None, source: Optional[str] = None,
                     base_dir: Optional[Path] = None, **overrides: Any) -> SimConfig:
    """
    Build a validated SimConfig from parsed scenario data. `overrides` replace
    top-level run settings (scheduler, tau, horizon, seed, tbrm_* ...).
    """
    reader = _Reader(lines or {}, source)
    if not isinstance(data, Mapping):
        raise reader.error("expected a mapping at the top level", "")
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})

    users_raw = reader.get(data, "users", "", kind=list)
    n = len(users_raw)
    region_raw = reader.get(data, "region", "", kind=dict)
    cmax = reader.numbers(region_raw, "cmax", "region", n) * MBPS
    gamma = reader.get(region_raw, "gamma", "region")
    try:
        region = RateRegion(cmax=cmax, gamma=gamma)
    except InvalidArgumentError as e:
        raise reader.error(str(e), "region") from e

    defaults = {
        "delay_bound": reader.get(data, "delay_bound", "", DEFAULT_DELAY_BOUND),
        "violation_prob": reader.get(data, "violation_prob", "", DEFAULT_VIOLATION_PROB),
        "sigma_g_mult": reader.get(data, "sigma_g_mult", "", 5.0),
        "sigma_M_mult": reader.get(data, "sigma_M_mult", "", 5.0),
    }
    users = [_user(reader, block, i, defaults) for i, block in enumerate(users_raw)]

    def column(key: str) -> np.ndarray:
        return np.array([u[key] for u in users], dtype=float)

    try:
        return SimConfig(
            region=region,
            traffic=[u["traffic"] for u in users],
            rho_g=column("rho_g"),
            rho_M=column("rho_M"),
            delay_bound=column("delay_bound"),
            violation_prob=column("violation_prob"),
            sigma_g_mult=column("sigma_g_mult"),
            sigma_M_mult=column("sigma_M_mult"),
            scheduler=_enum(reader, data, "scheduler", SchedulerKind, SchedulerKind.MW),
            tau=reader.get(data, "tau", "", 0.05),
            horizon=reader.get(data, "horizon", "", 12000, kind=int),
            seed=reader.get(data, "seed", "", 1, kind=int),
            tbrm_enabled=bool(data.get("tbrm_enabled", True)),
            tbrm_mode=_enum(reader, data, "tbrm_mode", TbrmMode, TbrmMode.MULTIPLICATIVE),
            tbrm_alpha=str(data.get("tbrm_alpha", "linear")),
            solver_method=_enum(reader, data, "solver_method", SolverMethod, SolverMethod.CLOSED_FORM),
            name=str(data.get("name", source or "scenario")),
            base_dir=base_dir,
        )
    except ValueError as e:
        if isinstance(e, ScenarioError):
            raise
        raise reader.error(str(e), "") from e


def load_scenario(path: Union[str, Path], **overrides: Any) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario: {e.strerror}", field="<document>", path=str(path)) from e
    data, lines = parse_with_lines(text, str(path))
    overrides.setdefault("name", data.get("name", path.stem) if isinstance(data, dict) else path.stem)
    return config_from_dict(data, lines, str(path), base_dir=path.parent, **overrides)
