"""
Satellite embedding store, pose-aware composition and similarity scoring.

Embedding-store file layout: an ASCII header line `GEOEMB1 rows cols dim\\n`
followed by rows*cols records in row-major order (row 0 col 0 first), each
record `dim` little-endian float32 values. Base-embedding files use the same
layout with magic `GEOBASE1` and cols = 1; their rows are not normalized.

The projection head used for synthetic runs is a fixed seeded linear map, not
a learned network. Every vector-valued step is written as elementwise
operations plus row-wise reductions so a batch of particles produces exactly
the bits a per-particle loop would.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.errors import (
    CountMismatchError,
    DimensionMismatchError,
    InvalidArgumentError,
    MalformedHeaderError,
    NonFiniteValueError,
    StoreDimensionError,
)
from src.file_utils import atomic_write
from src.grid import TileIndex, locate, tile_centers, tile_of, wrap_angle

logger = logging.getLogger(__name__)

STORE_MAGIC = "GEOEMB1"
BASES_MAGIC = "GEOBASE1"
RECORD_DTYPE = np.dtype("<f4")
UNIT_TOLERANCE = 1e-6

# Scored for particles with no usable observation (outside the grid, or in a
# zero-likelihood mask tile); the filter maps it to its likelihood floor.
NO_OBSERVATION = float("nan")

POSE_AWARE = "pose-aware"
HEADING_ONLY = "heading-only"
ORIENTATION_BLIND = "orientation-blind"
ABLATION_MODES = (POSE_AWARE, HEADING_ONLY, ORIENTATION_BLIND)


def _row_norms(matrix):
    return np.sqrt((matrix * matrix).sum(axis=-1))


def _unit_rows(matrix):
    return matrix / _row_norms(matrix)[..., None]


class EmbeddingVector:
    """A unit-length embedding; normalized on construction."""

    __slots__ = ("values",)

    def __init__(self, values):
        values = np.array(values, dtype=np.float64).reshape(-1)
        if values.size == 0 or not np.all(np.isfinite(values)):
            raise InvalidArgumentError("Embedding values must be finite and non-empty")
        if _row_norms(values) == 0.0:
            raise InvalidArgumentError("Cannot normalize a zero embedding")
        self.values = _unit_rows(values[None, :])[0]

    @classmethod
    def wrap(cls, unit_values):
        """Wraps values that are already unit length, without renormalizing."""
        vector = cls.__new__(cls)
        vector.values = np.asarray(unit_values, dtype=np.float64)
        return vector

    @property
    def dim(self):
        return self.values.shape[0]

    def __repr__(self):
        return f"EmbeddingVector(dim={self.dim})"


@dataclass(frozen=True)
class BaseEmbedding:
    """Pose-free intermediate representation of one ground image."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size == 0 or not np.all(np.isfinite(values)):
            raise InvalidArgumentError("Base embedding must be finite and non-empty")
        object.__setattr__(self, "values", values)

    @property
    def dim(self):
        return self.values.shape[0]


class EmbeddingStore:
    """One unit vector per tile of a bound grid, kept as the float32 file payload."""

    def __init__(self, table):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 3 or min(table.shape) < 1:
            raise InvalidArgumentError(f"Store table must be (rows, cols, dim), got {table.shape}")
        if not np.all(np.isfinite(table)):
            raise InvalidArgumentError("Store table contains non-finite values")
        norms = _row_norms(table)
        if np.any(norms == 0.0):
            raise InvalidArgumentError("Store table contains a zero vector")
        off_unit = np.abs(norms - 1.0) > UNIT_TOLERANCE
        if np.any(off_unit):
            table = np.where(off_unit[..., None], table / norms[..., None], table)
        self.table = table.astype(RECORD_DTYPE)

    @property
    def rows(self):
        return self.table.shape[0]

    @property
    def cols(self):
        return self.table.shape[1]

    @property
    def dim(self):
        return self.table.shape[2]

    def matches(self, grid):
        return (self.rows, self.cols) == (grid.rows, grid.cols)

    def check_grid(self, grid):
        if not self.matches(grid):
            raise DimensionMismatchError(
                f"Store is bound to a {self.rows}x{self.cols} grid, "
                f"got a {grid.rows}x{grid.cols} grid")

    def __getitem__(self, index):
        row, col = index
        return EmbeddingVector.wrap(self.table[row, col].astype(np.float64))


class ProjectionHead:
    """
    Maps [base, pose encoding] to a `dim`-dimensional embedding.

    The pose encoding is (dx / half_tile, dy / half_tile, sin psi, cos psi).
    `base_projections` and `pose_appends` count how often each half of the
    head runs: once per observation for the base, once per particle for the
    pose.
    """

    POSE_WIDTH = 4

    def __init__(self, weights, spacing):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[1] <= self.POSE_WIDTH:
            raise InvalidArgumentError(f"Head weights must be (dim, base_dim + 4), got {weights.shape}")
        if spacing <= 0:
            raise InvalidArgumentError(f"Tile spacing must be positive, got {spacing}")
        self.base_weights = np.ascontiguousarray(weights[:, :-self.POSE_WIDTH])
        self.pose_weights = [np.ascontiguousarray(weights[:, -self.POSE_WIDTH + k])
                             for k in range(self.POSE_WIDTH)]
        self.half_tile = spacing / 2.0
        self.base_projections = 0
        self.pose_appends = 0

    @classmethod
    def seeded(cls, dim, base_dim, spacing, seed):
        rng = np.random.default_rng(seed)
        weights = rng.normal(0.0, 1.0 / math.sqrt(base_dim + cls.POSE_WIDTH),
                             size=(dim, base_dim + cls.POSE_WIDTH))
        return cls(weights, spacing)

    @classmethod
    def identity(cls, base_dim, spacing):
        return cls(np.eye(base_dim + cls.POSE_WIDTH), spacing)

    @property
    def dim(self):
        return self.base_weights.shape[0]

    @property
    def base_dim(self):
        return self.base_weights.shape[1]

    def reset_counters(self):
        self.base_projections = 0
        self.pose_appends = 0

    def encode(self, dxdy, psi, mode=POSE_AWARE):
        """(N, 4) pose encodings; ablation modes zero the channels they hide."""
        dxdy = np.asarray(dxdy, dtype=np.float64).reshape(-1, 2)
        encoding = np.zeros((dxdy.shape[0], self.POSE_WIDTH))
        if mode == POSE_AWARE:
            encoding[:, :2] = dxdy / self.half_tile
        if mode in (POSE_AWARE, HEADING_ONLY):
            encoding[:, 2] = math.sin(psi)
            encoding[:, 3] = math.cos(psi)
        elif mode != ORIENTATION_BLIND:
            raise InvalidArgumentError(f"Unknown ablation mode {mode!r}")
        return encoding

    def project_base(self, base):
        if base.dim != self.base_dim:
            raise DimensionMismatchError(f"Head expects base_dim {self.base_dim}, got {base.dim}")
        self.base_projections += 1
        return (self.base_weights * base.values[None, :]).sum(axis=1)

    def append_pose(self, projected_base, encoding):
        """Unnormalized (N, dim) outputs for one projected base and N encodings."""
        out = np.broadcast_to(projected_base, (encoding.shape[0], self.dim)).copy()
        for k in range(self.POSE_WIDTH):
            out += encoding[:, k:k + 1] * self.pose_weights[k][None, :]
        self.pose_appends += encoding.shape[0]
        return out


def pose_aware_embedding(base, pose, head, mode=POSE_AWARE):
    """Appends one particle pose to a base embedding and projects it to a unit vector."""
    if not isinstance(base, BaseEmbedding):
        base = BaseEmbedding(base)
    projected = head.project_base(base)
    encoding = head.encode([[pose.dx, pose.dy]], pose.psi, mode)
    raw = head.append_pose(projected, encoding)
    if _row_norms(raw)[0] == 0.0:
        raise InvalidArgumentError("Pose-aware embedding projected to the zero vector")
    return EmbeddingVector.wrap(_unit_rows(raw)[0])


def similarity(a, b):
    """Cosine similarity of two unit vectors, clipped to [-1, 1]."""
    a_values = getattr(a, "values", a)
    b_values = getattr(b, "values", b)
    if a_values.shape != b_values.shape:
        raise DimensionMismatchError(f"Cannot compare dimensions {a_values.shape} and {b_values.shape}")
    return float(np.clip((a_values * b_values).sum(axis=-1), -1.0, 1.0))


def pseudo_similarity(particles, base, store, grid, heading, head, mode=POSE_AWARE):
    """
    Scores every particle against the store vector of its own tile.

    One base projection per call, one pose append per particle. Particles
    outside the grid score NO_OBSERVATION.
    """
    store.check_grid(grid)
    if store.dim != head.dim:
        raise DimensionMismatchError(f"Store dim {store.dim} does not match head dim {head.dim}")
    xy = getattr(particles, "xy", particles)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    rows, cols, inside = locate(grid, xy)
    dxdy = np.where(inside[:, None], xy - tile_centers(grid, rows, cols), 0.0)
    psi = wrap_angle(heading)

    projected = head.project_base(base)
    raw = head.append_pose(projected, head.encode(dxdy, psi, mode))
    unit = _unit_rows(raw)
    # float32 gather; the widening multiply is exact
    scores = np.clip((unit * store.table[rows, cols]).sum(axis=1), -1.0, 1.0)
    return np.where(inside, scores, NO_OBSERVATION)


def _read_records(path, magic):
    with open(path, "rb") as f:
        blob = f.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise MalformedHeaderError(path, "missing newline-terminated header")
    try:
        tokens = blob[:newline].decode("ascii").split()
    except UnicodeDecodeError:
        raise MalformedHeaderError(path, "header is not ASCII") from None
    if len(tokens) != 4 or tokens[0] != magic:
        raise MalformedHeaderError(path, f"expected '{magic} rows cols dim', got {tokens[:4]}")
    try:
        rows, cols, dim = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeaderError(path, f"non-integer sizes in header {tokens[1:]}") from None
    if rows < 1 or cols < 1 or dim < 1:
        raise MalformedHeaderError(path, f"sizes must be positive, got {rows} {cols} {dim}")

    payload = blob[newline + 1:]
    record_bytes = dim * RECORD_DTYPE.itemsize
    if len(payload) % record_bytes != 0:
        raise CountMismatchError(path, f"payload of {len(payload)} bytes is not a whole number "
                                       f"of {dim}-float records")
    count = len(payload) // record_bytes
    if count != rows * cols:
        raise CountMismatchError(path, f"header declares {rows * cols} records, found {count}")
    values = np.frombuffer(payload, dtype=RECORD_DTYPE).reshape(rows, cols, dim)
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.all(np.isfinite(values.reshape(count, dim)), axis=1)))
        raise NonFiniteValueError(path, f"record {bad} contains non-finite values")
    return values


def _write_records(path, magic, table):
    table = np.ascontiguousarray(table, dtype=RECORD_DTYPE)
    rows, cols, dim = table.shape
    header = f"{magic} {rows} {cols} {dim}\n".encode("ascii")
    atomic_write(path, header + table.tobytes(), binary=True)


def read_store(path):
    """Parses a store file on its own, without checking it against a grid."""
    values = _read_records(path, STORE_MAGIC)
    if np.any(_row_norms(values.astype(np.float64)) == 0.0):
        raise NonFiniteValueError(path, "store contains a zero vector")
    return EmbeddingStore(values)


def load_store(path, grid, dim=None):
    store = read_store(path)
    if (store.rows, store.cols) != (grid.rows, grid.cols):
        raise StoreDimensionError(path, f"store covers {store.rows}x{store.cols} tiles, "
                                        f"grid has {grid.rows}x{grid.cols}")
    if dim is not None and store.dim != dim:
        raise StoreDimensionError(path, f"store dim {store.dim} does not match expected {dim}")
    logger.debug("Loaded %dx%d store of dim %d from %s", store.rows, store.cols, store.dim, path)
    return store


def write_store(store, path):
    _write_records(path, STORE_MAGIC, store.table)


def load_bases(path):
    values = _read_records(path, BASES_MAGIC)
    if values.shape[1] != 1:
        raise StoreDimensionError(path, f"base-embedding files have one column, got {values.shape[1]}")
    return [BaseEmbedding(row) for row in values[:, 0, :].astype(np.float64)]


def write_bases(bases, path):
    table = np.stack([b.values for b in bases])[:, None, :]
    _write_records(path, BASES_MAGIC, table)


class BaseEmbeddingSequence:
    """Hands out one recorded base embedding per step and counts requests."""

    def __init__(self, bases):
        self.bases = list(bases)
        self.calls = 0

    def __len__(self):
        return len(self.bases)

    def __call__(self, step):
        self.calls += 1
        return self.bases[step]


@dataclass(frozen=True)
class SyntheticWorld:
    """
    Desk-scale stand-in for the trained network.

    Scores fall off with a Gaussian kernel of scale `rho` meters around the
    true position and with heading error at rate `kappa`. `floor_score` is
    what particles inside `mask` tiles score; None makes them score
    NO_OBSERVATION so the filter assigns its likelihood floor.
    """
    rho: float
    kappa: float = 0.0
    sigma_obs: float = 0.0
    confusers: tuple = ()
    mask: frozenset = field(default_factory=frozenset)
    floor_score: float = 0.0

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidArgumentError(f"Kernel scale rho must be positive, got {self.rho}")
        if self.kappa < 0:
            raise InvalidArgumentError(f"Heading sensitivity kappa must be >= 0, got {self.kappa}")
        if self.sigma_obs < 0:
            raise InvalidArgumentError(f"Observation noise must be >= 0, got {self.sigma_obs}")
        object.__setattr__(self, "confusers", tuple(tuple(float(v) for v in c) for c in self.confusers))
        object.__setattr__(self, "mask", frozenset(TileIndex(int(r), int(c)) for r, c in self.mask))

    def check_grid(self, grid):
        for index in self.mask:
            if not (0 <= index.row < grid.rows and 0 <= index.col < grid.cols):
                raise InvalidArgumentError(f"Mask tile {tuple(index)} lies outside the "
                                           f"{grid.rows}x{grid.cols} grid")

    def blind_at(self, grid, position):
        """A camera standing on a mask tile sees nothing it could match."""
        return grid.contains(position) and tile_of(grid, position) in self.mask

    def mask_array(self, grid):
        masked = np.zeros((grid.rows, grid.cols), dtype=bool)
        for row, col in self.mask:
            masked[row, col] = True
        return masked

    def kernel(self, points, heading, true_pose, kappa):
        x, y, psi = true_pose
        d2 = ((points - np.array([x, y])) ** 2).sum(axis=1)
        return np.exp(-d2 / (2.0 * self.rho ** 2)) * math.exp(-kappa * (1.0 - math.cos(heading - psi)))


class SyntheticObservation:
    """
    One synthetic image: a base-embedding surrogate plus a particle scorer.

    Noise is drawn once per particle, in particle order, from the stream
    handed to synth_observe.
    """

    def __init__(self, world, grid, true_pose, rng, base):
        self.world = world
        self.grid = grid
        self.true_pose = tuple(float(v) for v in true_pose)
        self.rng = rng
        self.base = base
        self._masked = world.mask_array(grid)

    def score(self, xy, heading, mode=POSE_AWARE):
        world = self.world
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        rows, cols, inside = locate(self.grid, xy)
        if mode == POSE_AWARE:
            points, kappa = xy, world.kappa
        elif mode == HEADING_ONLY:
            points, kappa = tile_centers(self.grid, rows, cols), world.kappa
        elif mode == ORIENTATION_BLIND:
            points, kappa = tile_centers(self.grid, rows, cols), 0.0
        else:
            raise InvalidArgumentError(f"Unknown ablation mode {mode!r}")

        scores = world.kernel(points, heading, self.true_pose, kappa)
        for confuser in world.confusers:
            scores = scores + world.kernel(points, heading, confuser, kappa)
        if world.sigma_obs > 0:
            scores = scores + self.rng.normal(0.0, world.sigma_obs, size=scores.shape[0])
        scores = np.clip(scores, -1.0, 1.0)

        masked = inside & self._masked[rows, cols]
        floor = NO_OBSERVATION if world.floor_score is None else world.floor_score
        scores = np.where(masked, floor, scores)
        return np.where(inside, scores, NO_OBSERVATION)

    __call__ = score


def _pose_surrogate(true_pose, base_dim, rho):
    x, y, psi = true_pose
    phase = (x + 2.0 * y) / rho + 3.0 * psi
    return BaseEmbedding(np.cos(np.arange(1, base_dim + 1) * phase))


def synth_observe(world, grid, true_pose, rng, base_dim=60):
    if not grid.contains(true_pose[:2]):
        raise InvalidArgumentError(f"True pose {tuple(true_pose)} lies outside the grid")
    base = _pose_surrogate(true_pose, base_dim, world.rho)
    return SyntheticObservation(world, grid, true_pose, rng, base)
