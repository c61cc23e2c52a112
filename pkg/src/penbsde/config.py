"""Experiment configuration: flat dotted-key text format, strict parsing.

The on-disk format is one ``key = value`` assignment per line, ``#`` for
comments.  Unknown keys are rejected so typos never pass silently, and a
parsed config serializes back to the identical canonical text.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .model import builtin_names

FORMAT_VERSION = 1


def _parse_bool(v: str) -> bool:
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {v!r}")


def _parse_float_list(v: str):
    return [float(p) for p in v.split(",") if p.strip()]


def _parse_int_list(v: str):
    return [int(p) for p in v.split(",") if p.strip()]


@dataclass
class ExperimentConfig:
    """All knobs of an experiment run, one field per dotted config key."""

    model_name: str = "fuel1d"
    model_params: dict = field(default_factory=dict)  # model.<param> = <float>
    x0: float = 0.0
    T: float = 1.0
    m: int = 50
    N: int = 100_000
    seed: int = 0
    basis_degree: int = 3
    basis_path_features: bool = False
    basis_bandwidth: float = 0.3  # kernel factor for the secant continuation fit
    j_schedule: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])
    policy_j: float = 8.0
    facelift_l_max: float = 8.0
    facelift_coarse_points: int = 33
    facelift_refine_iters: int = 30
    facelift_j_scale: float = 2.0  # j_large = j_scale * m in the jump diagnostic
    facelift_m_values: list = field(default_factory=lambda: [25, 50, 100])
    oracle_nx: int = 401
    oracle_width_std: float = 5.0
    oracle_dp_m: int = 4
    oracle_dp_b_grid: list = field(default_factory=lambda: [0.0, 4.0, 8.0])
    out_dir: str = "out"
    figures: bool = True

    def validate(self) -> None:
        if self.model_name not in builtin_names():
            raise ConfigError(
                f"model.name {self.model_name!r} is not a builtin "
                f"({', '.join(builtin_names())})"
            )
        if self.T <= 0:
            raise ConfigError("grid.T must be > 0")
        if self.m < 1:
            raise ConfigError("grid.m must be >= 1")
        if self.N < 1:
            raise ConfigError("mc.N must be >= 1")
        if self.basis_degree < 1:
            raise ConfigError("basis.degree must be >= 1")
        if self.basis_bandwidth <= 0:
            raise ConfigError("basis.bandwidth must be > 0")
        if not self.j_schedule or any(
            b <= a for a, b in zip(self.j_schedule, self.j_schedule[1:])
        ):
            raise ConfigError("penalty.schedule must be nonempty and strictly increasing")
        if self.policy_j <= 0:
            raise ConfigError("policy.j must be > 0")
        if self.facelift_l_max <= 0 or self.facelift_coarse_points < 2:
            raise ConfigError("facelift.l_max must be > 0 and facelift.coarse_points >= 2")
        if not self.facelift_m_values or any(v < 2 for v in self.facelift_m_values):
            raise ConfigError("facelift.m_values must be >= 2 each")
        if self.oracle_nx < 3:
            raise ConfigError("oracle.nx must be >= 3")
        if self.oracle_dp_m < 1 or self.oracle_dp_m > 5:
            raise ConfigError("oracle.dp_m must be in 1..5")


# dotted key -> (attribute, parser, serializer)
_KEYS = {
    "model.name": ("model_name", str, str),
    "model.x0": ("x0", float, repr),
    "grid.T": ("T", float, repr),
    "grid.m": ("m", int, str),
    "mc.N": ("N", int, str),
    "mc.seed": ("seed", int, str),
    "basis.degree": ("basis_degree", int, str),
    "basis.path_features": ("basis_path_features", _parse_bool, lambda v: str(v).lower()),
    "basis.bandwidth": ("basis_bandwidth", float, repr),
    "penalty.schedule": (
        "j_schedule",
        _parse_float_list,
        lambda v: ",".join(repr(float(x)) for x in v),
    ),
    "policy.j": ("policy_j", float, repr),
    "facelift.l_max": ("facelift_l_max", float, repr),
    "facelift.coarse_points": ("facelift_coarse_points", int, str),
    "facelift.refine_iters": ("facelift_refine_iters", int, str),
    "facelift.j_scale": ("facelift_j_scale", float, repr),
    "facelift.m_values": ("facelift_m_values", _parse_int_list, lambda v: ",".join(str(x) for x in v)),
    "oracle.nx": ("oracle_nx", int, str),
    "oracle.width_std": ("oracle_width_std", float, repr),
    "oracle.dp_m": ("oracle_dp_m", int, str),
    "oracle.dp_b_grid": (
        "oracle_dp_b_grid",
        _parse_float_list,
        lambda v: ",".join(repr(float(x)) for x in v),
    ),
    "output.dir": ("out_dir", str, str),
    "output.figures": ("figures", _parse_bool, lambda v: str(v).lower()),
}


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if key == "version":
            if int(value) != FORMAT_VERSION:
                raise ConfigError(
                    f"config format version {value} unsupported (expected {FORMAT_VERSION})"
                )
            continue
        if key in _KEYS:
            attr, parser, _ = _KEYS[key]
            try:
                setattr(cfg, attr, parser(value))
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"line {lineno}: cannot parse {key} = {value!r}: {exc}") from exc
        elif key.startswith("model.") and key.count(".") == 1:
            try:
                cfg.model_params[key.split(".", 1)[1]] = float(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: model parameter {key} must be numeric") from exc
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    cfg.validate()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [f"version = {FORMAT_VERSION}"]
    for key in sorted(_KEYS):
        attr, _, dump = _KEYS[key]
        lines.append(f"{key} = {dump(getattr(cfg, attr))}")
    for pname in sorted(cfg.model_params):
        lines.append(f"model.{pname} = {repr(float(cfg.model_params[pname]))}")
    return "\n".join(lines) + "\n"
