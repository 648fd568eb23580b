"""Run configuration: a versioned YAML document.

Layout (every section optional except ``channel``)::

    schema_version: 1
    task: optimize            # evaluate | optimize | scan-distance | scan-compensation
    device:                   # Table-I style device block
      N_t: 1.0e11
      eta_d: 0.65
      dark_count: 8.0e-7
      misalignment_x: 0.005
      misalignment_z: 0.005
      f: 1.16
      epsilon: 1.0e-7
      gamma: 5.3
      projections: psi-       # psi- | both
    channel:
      alpha: 0.2              # dB/km
      db_includes_detector: false
      A: {km: 10}             # or {db: 2.0} or {levels: [[5, 0.2], [7, 0.2], ...]}
      B: {km: 60}
    protocol: {entropy_base: 2, joint: true, kmax: 30, finite: true}
    optimizer: {multistart: 8, seed: 0, ...}   # any OptimizerConfig field
    params: {mu_ax: 0.02, ...}                 # all twelve, evaluate / optimize start
    scan:
      distances: [[10, 60], [30, 60]]          # (L_A, L_B) km
      compensation: [[-8.75, 4.5], [-7, 5]]    # (delta dB, eta_prime dB)

Losses given in dB are multiplied by ``eta_d`` unless ``db_includes_detector``
is true, in which case they are taken as the total arm transmittance.

Validation errors are :class:`ConfigError` and carry the dotted field path
and, when the document came from a file, the line of the offending node.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .bsm import DetectorSpec
from .channel import (
    DEFAULT_ALPHA,
    CompensationPolicy,
    StableChannel,
    UnstableChannel,
    db_to_transmittance,
    distance_to_transmittance,
)
from .keyrate import FluctuationConfig
from .model import SimulationModel
from .optimizer import OptimizerConfig
from .sources import DEFAULT_KMAX, PARAM_NAMES, ParamVector

__all__ = [
    "SCHEMA_VERSION",
    "TASKS",
    "ConfigError",
    "DeviceConfig",
    "ArmConfig",
    "ChannelConfig",
    "ProtocolConfig",
    "ScanConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "dump_config",
]

SCHEMA_VERSION = 1
TASKS = ("evaluate", "optimize", "scan-distance", "scan-compensation")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field name."""

    def __init__(self, path: str, message: str, line: int | None = None, source: str | None = None):
        self.path = path
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(f"{where}{path}: {message}")


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class DeviceConfig:
    N_t: float = 1e11
    eta_d: float = 0.65
    dark_count: float = 8e-7
    misalignment_x: float = 0.005
    misalignment_z: float = 0.005
    f: float = 1.16
    epsilon: float = 1e-7
    gamma: float = 5.3
    projections: str = "psi-"

    def detector(self) -> DetectorSpec:
        return DetectorSpec(self.dark_count, self.misalignment_x, self.misalignment_z, self.projections)

    def fluctuation(self, joint: bool) -> FluctuationConfig:
        return FluctuationConfig(self.gamma, self.epsilon, joint)


@dataclass(frozen=True)
class ArmConfig:
    """One arm: a distance, a fixed dB loss, or a list of ``(dB, probability)`` levels."""

    km: float | None = None
    db: float | None = None
    levels: tuple[tuple[float, float], ...] | None = None

    @property
    def unstable(self) -> bool:
        return self.levels is not None

    def to_dict(self) -> dict:
        if self.km is not None:
            return {"km": self.km}
        if self.db is not None:
            return {"db": self.db}
        return {"levels": [list(lv) for lv in self.levels]}


@dataclass(frozen=True)
class ChannelConfig:
    A: ArmConfig
    B: ArmConfig
    alpha: float = DEFAULT_ALPHA
    db_includes_detector: bool = False

    def _eta(self, arm: ArmConfig, eta_d: float) -> float:
        if arm.km is not None:
            return distance_to_transmittance(arm.km, self.alpha, eta_d)
        scale = 1.0 if self.db_includes_detector else eta_d
        return scale * db_to_transmittance(arm.db)

    def build(self, eta_d: float) -> StableChannel | UnstableChannel:
        if self.A.unstable:
            scale = 1.0 if self.db_includes_detector else eta_d
            return UnstableChannel.from_db(
                [db for db, _ in self.A.levels], [p for _, p in self.A.levels],
                [db for db, _ in self.B.levels], [p for _, p in self.B.levels],
                eta_d=scale,
            )
        return StableChannel(self._eta(self.A, eta_d), self._eta(self.B, eta_d))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "db_includes_detector": self.db_includes_detector,
            "A": self.A.to_dict(),
            "B": self.B.to_dict(),
        }


@dataclass(frozen=True)
class ProtocolConfig:
    entropy_base: float = 2.0
    joint: bool = True
    kmax: int = DEFAULT_KMAX
    finite: bool = True


@dataclass(frozen=True)
class ScanConfig:
    distances: tuple[tuple[float, float], ...] = ()
    compensation: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class RunConfig:
    channel: ChannelConfig
    task: str | None = None
    device: DeviceConfig = field(default_factory=DeviceConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    params: ParamVector | None = None
    scan: ScanConfig = field(default_factory=ScanConfig)
    schema_version: int = SCHEMA_VERSION

    def model(
        self,
        channel: ChannelConfig | None = None,
        compensation: CompensationPolicy | None = None,
    ) -> SimulationModel:
        ch = (channel or self.channel).build(self.device.eta_d)
        return SimulationModel(
            detector=self.device.detector(),
            channel=ch,
            N_t=self.device.N_t,
            f=self.device.f,
            fluctuation=self.device.fluctuation(self.protocol.joint),
            compensation=compensation or CompensationPolicy.disabled(),
            entropy_base=self.protocol.entropy_base,
            kmax=self.protocol.kmax,
            finite=self.protocol.finite,
        )

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"schema_version": self.schema_version}
        if self.task is not None:
            out["task"] = self.task
        out["device"] = dataclasses.asdict(self.device)
        out["channel"] = self.channel.to_dict()
        out["protocol"] = dataclasses.asdict(self.protocol)
        out["optimizer"] = dataclasses.asdict(self.optimizer)
        if self.params is not None:
            out["params"] = self.params.as_dict()
        scan = {}
        if self.scan.distances:
            scan["distances"] = [list(d) for d in self.scan.distances]
        if self.scan.compensation:
            scan["compensation"] = [list(c) for c in self.scan.compensation]
        if scan:
            out["scan"] = scan
        return out

    def digest(self) -> str:
        """Short hash of the canonical form, written into CSV headers."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# parsing


class _Ctx:
    """Maps dotted paths to source lines for error messages."""

    def __init__(self, lines: dict[str, int], source: str | None):
        self.lines = lines
        self.source = source

    def error(self, path: str, message: str) -> ConfigError:
        line = self.lines.get(path)
        probe = path
        while line is None and "." in probe:
            probe = probe.rsplit(".", 1)[0]
            line = self.lines.get(probe)
        return ConfigError(path, message, line, self.source)


def _node_lines(node, prefix: str = "", out: dict[str, int] | None = None) -> dict[str, int]:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = f"{prefix}.{key.value}" if prefix else str(key.value)
            out[path] = key.start_mark.line + 1
            _node_lines(value, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = item.start_mark.line + 1
            _node_lines(item, path, out)
    return out


def _mapping(ctx, data, path, allowed) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ctx.error(path or "<root>", "expected a mapping")
    for key in data:
        if key not in allowed:
            name = f"{path}.{key}" if path else str(key)
            raise ctx.error(name, f"unknown field (allowed: {', '.join(sorted(allowed))})")
    return data


def _number(ctx, path, value, *, integer=False) -> float:
    if isinstance(value, str):
        # YAML 1.1 reads exponents without a dot or sign (1e11) as strings
        try:
            value = float(value)
        except ValueError:
            raise ctx.error(path, f"expected a number, got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ctx.error(path, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ctx.error(path, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ctx.error(path, "must be finite")
    return float(value)


def _bool(ctx, path, value) -> bool:
    if not isinstance(value, bool):
        raise ctx.error(path, f"expected true or false, got {value!r}")
    return value


def _pair_list(ctx, path, value) -> tuple[tuple[float, float], ...]:
    if not isinstance(value, list):
        raise ctx.error(path, "expected a list of pairs")
    out = []
    for i, item in enumerate(value):
        p = f"{path}[{i}]"
        if not isinstance(item, list) or len(item) != 2:
            raise ctx.error(p, "expected a two-element list")
        out.append((_number(ctx, f"{p}[0]", item[0]), _number(ctx, f"{p}[1]", item[1])))
    return tuple(out)


def _build(ctx, path, factory, kwargs):
    # run the section's own validation and re-raise with the field path
    try:
        return factory(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ctx.error(path, str(exc)) from None


def _parse_device(ctx, data) -> DeviceConfig:
    names = [f.name for f in dataclasses.fields(DeviceConfig)]
    data = _mapping(ctx, data, "device", names)
    kw = {}
    for name, value in data.items():
        p = f"device.{name}"
        if name == "projections":
            if value not in ("psi-", "both"):
                raise ctx.error(p, "must be 'psi-' or 'both'")
            kw[name] = value
        else:
            kw[name] = _number(ctx, p, value)
    dev = _build(ctx, "device", DeviceConfig, kw)
    if not dev.N_t > 0:
        raise ctx.error("device.N_t", "must be positive")
    if not 0 <= dev.eta_d <= 1:
        raise ctx.error("device.eta_d", "must lie in [0, 1]")
    if not dev.f >= 1:
        raise ctx.error("device.f", "error-correction inefficiency must be >= 1")
    for name in ("dark_count", "misalignment_x", "misalignment_z"):
        if not 0 <= getattr(dev, name) <= 0.5:
            raise ctx.error(f"device.{name}", "must lie in [0, 0.5]")
    for name, check in (("gamma", lambda v: v > 0), ("epsilon", lambda v: 0 < v < 1)):
        if not check(getattr(dev, name)):
            raise ctx.error(f"device.{name}", "out of range")
    return dev


def _parse_arm(ctx, path, data) -> ArmConfig:
    data = _mapping(ctx, data, path, ("km", "db", "levels"))
    if len(data) != 1:
        raise ctx.error(path, "give exactly one of km, db or levels")
    key, value = next(iter(data.items()))
    p = f"{path}.{key}"
    if key == "levels":
        levels = _pair_list(ctx, p, value)
        if not levels:
            raise ctx.error(p, "must not be empty")
        for i, (db, prob) in enumerate(levels):
            if db < 0:
                raise ctx.error(f"{p}[{i}][0]", "loss must be non-negative")
            if not 0 <= prob <= 1:
                raise ctx.error(f"{p}[{i}][1]", "probability must lie in [0, 1]")
        if abs(math.fsum(pr for _, pr in levels) - 1.0) > 1e-12:
            raise ctx.error(p, "probabilities must sum to 1")
        return ArmConfig(levels=levels)
    v = _number(ctx, p, value)
    if v < 0:
        raise ctx.error(p, "must be non-negative")
    return ArmConfig(**{key: v})


def _parse_channel(ctx, data) -> ChannelConfig:
    if data is None:
        raise ctx.error("channel", "section is required")
    data = _mapping(ctx, data, "channel", ("alpha", "db_includes_detector", "A", "B"))
    for arm in ("A", "B"):
        if arm not in data:
            raise ctx.error(f"channel.{arm}", "arm is required")
    A = _parse_arm(ctx, "channel.A", data["A"])
    B = _parse_arm(ctx, "channel.B", data["B"])
    if A.unstable != B.unstable:
        raise ctx.error("channel", "both arms must be fixed or both given as levels")
    alpha = _number(ctx, "channel.alpha", data.get("alpha", DEFAULT_ALPHA))
    if alpha < 0:
        raise ctx.error("channel.alpha", "must be non-negative")
    inc = _bool(ctx, "channel.db_includes_detector", data.get("db_includes_detector", False))
    return ChannelConfig(A, B, alpha, inc)


def _parse_protocol(ctx, data) -> ProtocolConfig:
    data = _mapping(ctx, data, "protocol", ("entropy_base", "joint", "kmax", "finite"))
    kw = {}
    if "entropy_base" in data:
        base = _number(ctx, "protocol.entropy_base", data["entropy_base"])
        if not (base > 0 and base != 1):
            raise ctx.error("protocol.entropy_base", "must be positive and not 1")
        kw["entropy_base"] = base
    for name in ("joint", "finite"):
        if name in data:
            kw[name] = _bool(ctx, f"protocol.{name}", data[name])
    if "kmax" in data:
        k = _number(ctx, "protocol.kmax", data["kmax"], integer=True)
        if k < 3:
            raise ctx.error("protocol.kmax", "must be at least 3")
        kw["kmax"] = k
    return ProtocolConfig(**kw)


def _parse_optimizer(ctx, data) -> OptimizerConfig:
    names = {f.name: f for f in dataclasses.fields(OptimizerConfig)}
    data = _mapping(ctx, data, "optimizer", names)
    kw = {}
    for name, value in data.items():
        p = f"optimizer.{name}"
        if name == "full_neighborhood":
            kw[name] = value
        else:
            integer = isinstance(OptimizerConfig.__dataclass_fields__[name].default, int)
            kw[name] = _number(ctx, p, value, integer=integer)
    try:
        return OptimizerConfig(**kw)
    except ValueError as exc:
        msg = str(exc)
        bad = next((n for n in kw if msg.startswith(n)), None)
        raise ctx.error(f"optimizer.{bad}" if bad else "optimizer", msg) from None


def _parse_params(ctx, data) -> ParamVector | None:
    if data is None:
        return None
    data = _mapping(ctx, data, "params", PARAM_NAMES)
    missing = [n for n in PARAM_NAMES if n not in data]
    if missing:
        raise ctx.error("params", f"missing {', '.join(missing)}")
    values = {n: _number(ctx, f"params.{n}", data[n]) for n in PARAM_NAMES}
    pv = ParamVector(**values)
    for party in ("a", "b"):
        if not 0 < values[f"mu_{party}x"] < values[f"mu_{party}y"]:
            raise ctx.error(f"params.mu_{party}x", f"need 0 < mu_{party}x < mu_{party}y")
        for lab in "xyz":
            if not 0 < values[f"mu_{party}{lab}"] <= 1.0:
                raise ctx.error(f"params.mu_{party}{lab}", "intensity must lie in (0, 1]")
            if values[f"p_{party}{lab}"] < 0:
                raise ctx.error(f"params.p_{party}{lab}", "must be non-negative")
        if sum(values[f"p_{party}{lab}"] for lab in "xyz") > 1:
            raise ctx.error(f"params.p_{party}x", f"p_{party}x + p_{party}y + p_{party}z exceeds 1")
    return pv


def _parse_scan(ctx, data) -> ScanConfig:
    data = _mapping(ctx, data, "scan", ("distances", "compensation"))
    kw = {}
    if "distances" in data:
        d = _pair_list(ctx, "scan.distances", data["distances"])
        for i, (la, lb) in enumerate(d):
            if la < 0 or lb < 0:
                raise ctx.error(f"scan.distances[{i}]", "distances must be non-negative")
        kw["distances"] = d
    if "compensation" in data:
        kw["compensation"] = _pair_list(ctx, "scan.compensation", data["compensation"])
        for i, (_, e) in enumerate(kw["compensation"]):
            if e < 0:
                raise ctx.error(f"scan.compensation[{i}][1]", "extra loss must be non-negative dB")
    return ScanConfig(**kw)


_TOP = ("schema_version", "task", "device", "channel", "protocol", "optimizer", "params", "scan")


def parse_config(data: Any, *, lines: dict[str, int] | None = None, source: str | None = None) -> RunConfig:
    """Validate a plain mapping (as loaded from YAML) into a :class:`RunConfig`."""
    ctx = _Ctx(lines or {}, source)
    data = _mapping(ctx, data, "", _TOP)
    version = data.get("schema_version")
    if version is None:
        raise ctx.error("schema_version", "is required")
    if version != SCHEMA_VERSION:
        raise ctx.error("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    task = data.get("task")
    if task is not None and task not in TASKS:
        raise ctx.error("task", f"must be one of {', '.join(TASKS)}")
    return RunConfig(
        channel=_parse_channel(ctx, data.get("channel")),
        task=task,
        device=_parse_device(ctx, data.get("device")),
        protocol=_parse_protocol(ctx, data.get("protocol")),
        optimizer=_parse_optimizer(ctx, data.get("optimizer")),
        params=_parse_params(ctx, data.get("params")),
        scan=_parse_scan(ctx, data.get("scan")),
        schema_version=version,
    )


def loads_config(text: str, source: str | None = None) -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("<document>", f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None, source) from None
    return parse_config(data, lines=_node_lines(node) if node is not None else {}, source=source)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return loads_config(path.read_text(), source=str(path))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
