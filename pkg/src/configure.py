# experiment configuration: loading, validation, presets and serialization
import json
import math
import os
import runpy
import types
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass

from src.embeddings import ABLATION_MODES, SyntheticWorld
from src.errors import ConfigParseError, ConfigValidationError, GeolocError
from src.filter import RESAMPLING_STRATEGIES, MeasurementModel
from src.grid import build_grid

WAYPOINTS = "waypoints"
RANDOM_WALK = "random-walk"
TRAJECTORY_MODES = (WAYPOINTS, RANDOM_WALK)


def _fail(path, message):
    raise ConfigValidationError(path, message)


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    spacing: float = 60.0
    origin: tuple = (0.0, 0.0)

    def validate(self, path):
        if not self.spacing > 0:
            _fail(f"{path}.spacing", f"must be positive, got {self.spacing}")
        if self.rows < 1:
            _fail(f"{path}.rows", f"must be at least 1, got {self.rows}")
        if self.cols < 1:
            _fail(f"{path}.cols", f"must be at least 1, got {self.cols}")
        if len(self.origin) != 2:
            _fail(f"{path}.origin", "must be an [x, y] pair")

    def build(self):
        return build_grid(self.origin, self.spacing, self.rows, self.cols)


@dataclass(frozen=True)
class WorldSpec:
    rho: float = 90.0
    kappa: float = 4.0
    sigma_obs: float = 0.1
    confusers: tuple = ()
    mask_tiles: tuple = ()
    mask_rows: tuple = ()
    mask_cols: tuple = ()
    floor_score: typing.Optional[float] = 0.0

    def validate(self, path, grid):
        if not self.rho > 0:
            _fail(f"{path}.rho", f"must be positive, got {self.rho}")
        if self.kappa < 0:
            _fail(f"{path}.kappa", f"must be >= 0, got {self.kappa}")
        if self.sigma_obs < 0:
            _fail(f"{path}.sigma_obs", f"must be >= 0, got {self.sigma_obs}")
        for i, confuser in enumerate(self.confusers):
            if len(confuser) != 3:
                _fail(f"{path}.confusers[{i}]", "must be an [x, y, heading] triple")
        for i, tile in enumerate(self.mask_tiles):
            if len(tile) != 2 or not (0 <= tile[0] < grid.rows and 0 <= tile[1] < grid.cols):
                _fail(f"{path}.mask_tiles[{i}]", f"{list(tile)} is not a tile of the grid")
        for name, limit in (("mask_rows", grid.rows), ("mask_cols", grid.cols)):
            for i, value in enumerate(getattr(self, name)):
                if not 0 <= value < limit:
                    _fail(f"{path}.{name}[{i}]", f"{value} is outside 0..{limit - 1}")

    def build(self, grid):
        mask = set(tuple(tile) for tile in self.mask_tiles)
        mask.update((row, col) for row in self.mask_rows for col in range(grid.cols))
        mask.update((row, col) for col in self.mask_cols for row in range(grid.rows))
        return SyntheticWorld(rho=self.rho, kappa=self.kappa, sigma_obs=self.sigma_obs,
                              confusers=self.confusers, mask=frozenset(mask),
                              floor_score=self.floor_score)


@dataclass(frozen=True)
class TrajectorySpec:
    mode: str = RANDOM_WALK
    waypoints: tuple = ()
    start: typing.Optional[tuple] = None
    start_heading: float = 0.0
    speed: float = 15.0
    turn_rate: float = 0.2
    steps: int = 200

    def validate(self, path, grid):
        if self.mode not in TRAJECTORY_MODES:
            _fail(f"{path}.mode", f"must be one of {list(TRAJECTORY_MODES)}, got {self.mode!r}")
        if not self.speed > 0:
            _fail(f"{path}.speed", f"must be positive, got {self.speed}")
        if self.turn_rate < 0:
            _fail(f"{path}.turn_rate", f"must be >= 0, got {self.turn_rate}")
        if self.steps < 1:
            _fail(f"{path}.steps", f"must be at least 1, got {self.steps}")
        if self.mode == WAYPOINTS:
            if not self.waypoints:
                _fail(f"{path}.waypoints", "waypoint mode needs at least one waypoint")
            for i, point in enumerate(self.waypoints):
                if len(point) != 2 or not grid.contains(point):
                    _fail(f"{path}.waypoints[{i}]", f"{list(point)} is outside the grid")
        if self.start is not None and (len(self.start) != 2 or not grid.contains(self.start)):
            _fail(f"{path}.start", f"{list(self.start)} is outside the grid")

    def start_point(self, grid):
        if self.mode == WAYPOINTS:
            return tuple(self.waypoints[0])
        if self.start is not None:
            return tuple(self.start)
        xmin, ymin, xmax, ymax = grid.bounds
        return ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)


@dataclass(frozen=True)
class MeasurementSpec:
    mu: float = 1.0
    sigma: float = 0.3
    floor: float = 1e-12

    def validate(self, path):
        if not self.sigma > 0:
            _fail(f"{path}.sigma", f"must be positive, got {self.sigma}")
        if not self.floor > 0:
            _fail(f"{path}.floor", f"must be positive, got {self.floor}")

    def build(self):
        return MeasurementModel(mu=self.mu, sigma=self.sigma, floor=self.floor)


@dataclass(frozen=True)
class FilterSpec:
    particles: int = 30000
    init_offset: float = 1300.0
    init_bearing: float = 0.0
    init_sigma: float = 900.0
    odometry_noise: float = 0.02
    heading_noise: float = 0.01
    measurement: MeasurementSpec = field(default_factory=MeasurementSpec)
    strategy: str = "systematic"
    ess_threshold: float = 0.98
    observe_every: int = 1

    def validate(self, path):
        if self.particles < 1:
            _fail(f"{path}.particles", f"must be at least 1, got {self.particles}")
        if self.init_offset < 0:
            _fail(f"{path}.init_offset", f"must be >= 0, got {self.init_offset}")
        if not self.init_sigma > 0:
            _fail(f"{path}.init_sigma", f"must be positive, got {self.init_sigma}")
        if self.odometry_noise < 0:
            _fail(f"{path}.odometry_noise", f"must be >= 0, got {self.odometry_noise}")
        if self.heading_noise < 0:
            _fail(f"{path}.heading_noise", f"must be >= 0, got {self.heading_noise}")
        if self.strategy not in RESAMPLING_STRATEGIES:
            _fail(f"{path}.strategy", f"must be one of {list(RESAMPLING_STRATEGIES)}, got {self.strategy!r}")
        if not 0 < self.ess_threshold <= 1:
            _fail(f"{path}.ess_threshold", f"must be in (0, 1], got {self.ess_threshold}")
        if self.observe_every < 1:
            _fail(f"{path}.observe_every", f"must be at least 1, got {self.observe_every}")
        self.measurement.validate(f"{path}.measurement")


@dataclass(frozen=True)
class EmbeddingSpec:
    """Projection head used when scoring recorded embeddings."""
    dim: int = 64
    base_dim: int = 60
    head_seed: int = 0

    def validate(self, path):
        if self.dim < 1:
            _fail(f"{path}.dim", f"must be at least 1, got {self.dim}")
        if self.base_dim < 1:
            _fail(f"{path}.base_dim", f"must be at least 1, got {self.base_dim}")


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec
    seed: int = 0
    world: WorldSpec = field(default_factory=WorldSpec)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    filter: FilterSpec = field(default_factory=FilterSpec)
    embeddings: EmbeddingSpec = field(default_factory=EmbeddingSpec)
    ablation: str = "pose-aware"
    convergence_radius: float = 60.0
    collapse_fraction: float = 0.01

    def validate(self):
        self.grid.validate("grid")
        grid = self.grid.build()
        self.world.validate("world", grid)
        self.trajectory.validate("trajectory", grid)
        self.filter.validate("filter")
        self.embeddings.validate("embeddings")
        if self.ablation not in ABLATION_MODES:
            _fail("ablation", f"must be one of {list(ABLATION_MODES)}, got {self.ablation!r}")
        if not self.convergence_radius > 0:
            _fail("convergence_radius", f"must be positive, got {self.convergence_radius}")
        if not 0 < self.collapse_fraction < 1:
            _fail("collapse_fraction", f"must be in (0, 1), got {self.collapse_fraction}")
        if self.seed < 0:
            _fail("seed", f"must be >= 0, got {self.seed}")
        if not grid.contains(self.init_center(grid)):
            _fail("filter.init_offset", "places the initial particle cloud center outside the grid")
        return self

    def init_center(self, grid, start=None):
        x, y = start if start is not None else self.trajectory.start_point(grid)
        bearing = self.filter.init_bearing
        return (x + self.filter.init_offset * math.cos(bearing),
                y + self.filter.init_offset * math.sin(bearing))

    def replace(self, **changes):
        """Copy with top-level or dotted-path fields replaced, e.g. {'filter.strategy': 'multinomial'}."""
        data = to_dict(self)
        for dotted, value in changes.items():
            node = data
            *parents, leaf = dotted.replace("__", ".").split(".")
            for key in parents:
                node = node[key]
            node[leaf] = value
        return from_dict(data)


def _is_optional(kind):
    origin = typing.get_origin(kind)
    return (origin is typing.Union or origin is getattr(types, "UnionType", None)) and \
        type(None) in typing.get_args(kind)


def _freeze(value, path):
    if isinstance(value, list):
        return tuple(_freeze(v, f"{path}[{i}]") for i, v in enumerate(value))
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        _fail(path, f"expected a finite number, got {value!r}")
    return value if isinstance(value, int) else float(value)


def _coerce(value, kind, path):
    if _is_optional(kind):
        if value is None:
            return None
        kind = next(k for k in typing.get_args(kind) if k is not type(None))
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            _fail(path, f"expected a finite number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(path, f"expected an integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            _fail(path, f"expected a string, got {value!r}")
        return value
    if kind is tuple:
        if not isinstance(value, list):
            _fail(path, f"expected a list, got {value!r}")
        return _freeze(value, path)
    return value


def _build(cls, data, path):
    if not isinstance(data, dict):
        _fail(path or "<root>", f"expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            _fail(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for name in known:
        field_path = f"{path}.{name}" if path else name
        kind = hints[name]
        if name not in data:
            if known[name].default is MISSING and known[name].default_factory is MISSING:
                _fail(field_path, "required field is missing")
            continue
        if is_dataclass(kind):
            kwargs[name] = _build(kind, data[name], field_path)
        else:
            kwargs[name] = _coerce(data[name], kind, field_path)
    return cls(**kwargs)


def _merge(base, override):
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_presets():
    # Load the presets file
    script_dir = os.path.dirname(os.path.abspath(__file__))
    presets_path = os.path.join(script_dir, '..', 'data', 'config.py')
    return runpy.run_path(presets_path)['config']


def from_dict(data):
    """Builds and validates a config from parsed JSON, applying a named preset first."""
    if not isinstance(data, dict):
        _fail("<root>", "config must be a JSON object")
    if "preset" in data:
        name = data["preset"]
        presets = load_presets()
        if name not in presets:
            _fail("preset", f"unknown preset {name!r}; choose from {sorted(presets)}")
        data = _merge(presets[name], {k: v for k, v in data.items() if k != "preset"})
    config = _build(ExperimentConfig, data, "")
    try:
        return config.validate()
    except ConfigValidationError:
        raise
    except GeolocError as e:
        raise ConfigValidationError("<root>", str(e)) from e


def to_dict(config):
    return json.loads(json.dumps(asdict(config)))


def dump_config(config):
    """Fully resolved config as JSON text; every default is explicit."""
    return json.dumps(to_dict(config), indent=2, sort_keys=True) + "\n"


def parse_config(text, path="<string>"):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(path, e.lineno, e.msg) from None
    return from_dict(data)


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_config(text, path)
