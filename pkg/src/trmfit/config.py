"""Per-command run configurations loaded from TOML or JSON plus flag overrides."""
from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUILTIN_PREFIX = "builtin:"


@dataclass
class SynthConfig:
    generator: str = "godunov"  # godunov | trm | two_regime
    x_start: float = -1.5
    x_end: float = 1.5
    dx: float = 1e-3
    cfl: float = 0.25
    t_end: float = 1.0
    v_m: float = 1.0
    crop: list = field(default_factory=lambda: [-1.0, 1.0])
    n_t: int = 51
    n_x: int = 51
    write_every: int = 40  # stride of reference rows written to CSV
    # trm generator: data produced by a TRM rollout at this coefficient
    c_true: float = 0.25
    p_t: int = 1
    p_x: int = 1
    seed: int = 0

    def validate(self):
        if self.generator not in ("godunov", "trm", "two_regime"):
            raise ConfigError(f"generator must be godunov, trm or two_regime, not {self.generator!r}")
        if not self.v_m > 0:
            raise ConfigError("v_m must be positive")
        if not (self.dx > 0 and self.t_end > 0 and self.x_end > self.x_start):
            raise ConfigError("reference grid needs positive dx, t_end and extent")
        if not 0 < self.cfl <= 0.5:
            raise ConfigError("cfl must lie in (0, 1/2]")
        if len(self.crop) != 2 or not self.x_start <= self.crop[0] < self.crop[1] <= self.x_end:
            raise ConfigError("crop must be [lo, hi] inside [x_start, x_end]")
        if self.n_t < 2 or self.n_x < 3:
            raise ConfigError("need n_t >= 2 and n_x >= 3")
        if self.write_every < 1 or self.p_t < 1 or self.p_x < 1:
            raise ConfigError("write_every, p_t and p_x must be >= 1")
        if not 0 < self.c_true < 0.5:
            raise ConfigError("c_true must lie in (0, 1/2)")


@dataclass
class EstimateConfig:
    data: str = "density_matrix.csv"
    flow: str | None = None  # optional measured flow matrix for the fundamental diagram
    rho_max: float = 1.0
    scheme: str = "trm"
    mode: str = "constant"
    p_x: int = 1
    p_t: int | None = None  # None: smallest value meeting the CFL bound for v_max
    v_max: float = 1.0
    observed: object = "all"  # all | half | center | list of column indices
    lam: object = None  # number, list of candidates, or None for the default grid
    max_iters: int = 500
    grad_tol: float = 1e-8
    initial_theta: object = None
    line_search: bool = True
    method: str = "backward"

    def validate(self):
        from .schemes import Mode, SchemeKind

        try:
            kind = SchemeKind.parse(self.scheme)
            Mode.parse(self.mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not kind.differentiable:
            from .errors import UnsupportedScheme
            raise UnsupportedScheme(f"cannot estimate with the {kind.value} scheme; use trm or lxf")
        if not self.rho_max > 0 or not self.v_max > 0:
            raise ConfigError("rho_max and v_max must be positive")
        if self.p_x < 1 or (self.p_t is not None and self.p_t < 1):
            raise ConfigError("subdivisions must be >= 1")
        if isinstance(self.observed, str) and self.observed not in ("all", "half", "center"):
            raise ConfigError("observed must be all, half, center or a list of columns")
        if self.method not in ("backward", "forward"):
            raise ConfigError("method must be backward or forward")
        if self.max_iters < 0 or self.grad_tol < 0:
            raise ConfigError("max_iters and grad_tol must be non-negative")


@dataclass
class GradcheckConfig:
    schemes: list = field(default_factory=lambda: ["trm", "lxf"])
    modes: list = field(default_factory=lambda: ["constant", "time", "space", "spacetime"])
    subdivisions: list = field(default_factory=lambda: [[1, 1], [2, 3]])
    observed: list = field(default_factory=lambda: ["full", "half", "single"])
    repeats: int = 1
    seed: int = 0
    h: float = 1e-6
    threshold: float = 1e-5

    def validate(self):
        from .schemes import Mode, SchemeKind

        try:
            kinds = [SchemeKind.parse(k) for k in self.schemes]
            [Mode.parse(m) for m in self.modes]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for k in kinds:
            if not k.differentiable:
                from .errors import UnsupportedScheme
                raise UnsupportedScheme(f"no gradient for the {k.value} scheme; use trm or lxf")
        if any(len(s) != 2 or min(s) < 1 for s in self.subdivisions):
            raise ConfigError("subdivisions must be [p_t, p_x] pairs of positive integers")
        if any(o not in ("full", "half", "single") for o in self.observed):
            raise ConfigError("observed patterns must be full, half or single")
        if self.repeats < 1 or not self.h > 0 or not self.threshold > 0:
            raise ConfigError("repeats, h and threshold must be positive")


@dataclass
class MappingConfig:
    id_col: str = "id"
    t_col: str = "t"
    x_col: str = "x"
    length_col: str | None = "length"
    time_unit: str = "s"
    position_unit: str = "m"
    frame_rate: float | None = None


@dataclass
class EdieGridConfig:
    x_start: float = 0.0
    x_end: float = 400.0
    n_x: int = 11
    t_start: float = 0.0
    t_end: float = 120.0
    n_t: int = 60


@dataclass
class EdieConfig:
    trajectories: str = "builtin:free_flow"
    lanes: float = 1.0
    rho_max: float | None = None  # None: lanes / mean vehicle length
    direction: float = 1.0
    mapping: MappingConfig = field(default_factory=MappingConfig)
    grid: EdieGridConfig = field(default_factory=EdieGridConfig)

    def validate(self):
        g = self.grid
        if g.n_x < 3 or g.n_t < 2 or not (g.x_end > g.x_start and g.t_end > g.t_start):
            raise ConfigError("edie grid needs n_x >= 3, n_t >= 2 and positive extents")
        if not self.lanes > 0:
            raise ConfigError("lanes must be positive")
        if self.rho_max is not None and not self.rho_max > 0:
            raise ConfigError("rho_max must be positive")
        if self.direction not in (1.0, -1.0, 1, -1):
            raise ConfigError("direction must be 1 or -1")
        try:
            self.column_mapping()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def column_mapping(self):
        from .edie import ColumnMapping

        return ColumnMapping(**dataclasses.asdict(self.mapping))


COMMANDS = {
    "synth": SynthConfig,
    "estimate": EstimateConfig,
    "gradcheck": GradcheckConfig,
    "edie": EdieConfig,
}


def read_document(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def build(cls, doc, where=""):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in doc.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            value = build(type(default), value, f"{where}{name}.")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_value(text):
    """Interpret an override as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(doc, dotted, value):
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a table")
    node[keys[-1]] = value


def load(command, path=None, overrides=()):
    """Effective configuration for ``command``: file values, then overrides."""
    cls = COMMANDS[command]
    doc = {}
    base = Path.cwd()
    if path is not None:
        doc = read_document(path)
        if command in doc and isinstance(doc[command], dict) and len(doc) == 1:
            doc = doc[command]
        base = Path(path).resolve().parent
    for dotted, value in overrides:
        apply_override(doc, dotted, value)
    if command == "edie":
        doc = _with_builtin_defaults(doc)
    cfg = build(cls, doc)
    _resolve_paths(cfg, base)
    _check_types(cfg)
    cfg.validate()
    return cfg


def _with_builtin_defaults(doc):
    """A bundled trajectory set brings its own mapping, grid and lane count."""
    name = doc.get("trajectories", EdieConfig.trajectories)
    if not str(name).startswith(BUILTIN_PREFIX):
        return doc
    merged = builtin_config(name) or {}
    merged["trajectories"] = name
    for key, value in doc.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def _check_types(cfg):
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            _check_types(value)
            continue
        default = f.default if f.default is not dataclasses.MISSING else None
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{f.name} must be true or false")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{f.name} must be a number, got {value!r}")
            if isinstance(default, int):
                if value != int(value):
                    raise ConfigError(f"{f.name} must be an integer, got {value!r}")
                setattr(cfg, f.name, int(value))


def _resolve_paths(cfg, base):
    for name in ("data", "flow", "trajectories"):
        value = getattr(cfg, name, None)
        if isinstance(value, str) and not value.startswith(BUILTIN_PREFIX):
            p = Path(value)
            setattr(cfg, name, str(p if p.is_absolute() else base / p))


def builtin_path(name):
    """Path of a bundled data file, e.g. ``builtin:free_flow`` -> the fixture CSV."""
    stem = name[len(BUILTIN_PREFIX):] if name.startswith(BUILTIN_PREFIX) else name
    root = resources.files("trmfit") / "data"
    target = root / f"{stem}.csv"
    if not target.is_file():
        raise ConfigError(f"no bundled dataset called {stem!r}")
    return Path(str(target))


def builtin_config(name):
    stem = name[len(BUILTIN_PREFIX):] if name.startswith(BUILTIN_PREFIX) else name
    target = resources.files("trmfit") / "data" / f"{stem}.toml"
    if not target.is_file():
        return None
    return tomllib.loads(target.read_text())
