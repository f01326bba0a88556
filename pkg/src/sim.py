"""
Synthetic experiments: ground-truth trajectories, noisy odometry and the
end-to-end filter loop.

Every random draw comes from a named stream seeded with
[seed, stream id] or [seed, stream id, step], so a run is a pure function of
its config. Turning the heading noise up never changes the trajectory, and
replaying a single step does not require replaying the ones before it.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from src.configure import WAYPOINTS
from src.embeddings import BaseEmbeddingSequence, ProjectionHead, pseudo_similarity, synth_observe
from src.errors import DimensionMismatchError, InvalidArgumentError
from src.filter import (EVERY_STEP_MULTINOMIAL, OdometryStep, ess, estimate, init_gaussian,
                        maybe_resample, propagate, reweight)
from src.grid import wrap_angle

logger = logging.getLogger(__name__)

TRAJECTORY_STREAM = 0
ODOMETRY_STREAM = 1
INIT_STREAM = 2
PROPAGATE_STREAM = 3
OBSERVE_STREAM = 4
RESAMPLE_STREAM = 5


def stream(seed, stream_id, step=None):
    key = [int(seed), stream_id] if step is None else [int(seed), stream_id, int(step)]
    return np.random.default_rng(key)


class Trajectory:
    """Ground-truth poses (x, y, heading), one row per time step."""

    def __init__(self, poses):
        poses = np.asarray(poses, dtype=np.float64).reshape(-1, 3)
        if poses.shape[0] < 1:
            raise InvalidArgumentError("A trajectory needs at least one pose")
        self.poses = poses

    @property
    def xy(self):
        return self.poses[:, :2]

    @property
    def headings(self):
        return self.poses[:, 2]

    def __len__(self):
        return self.poses.shape[0]

    def __getitem__(self, t):
        return tuple(float(v) for v in self.poses[t])


def _polyline(waypoints, speed):
    points = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    segments = np.diff(points, axis=0)
    lengths = np.hypot(segments[:, 0], segments[:, 1])
    keep = lengths > 0
    points = np.vstack([points[:1], points[1:][keep]])
    segments, lengths = segments[keep], lengths[keep]
    if lengths.size == 0:
        return np.array([[points[0, 0], points[0, 1], 0.0]])

    total = lengths.sum()
    distances = np.arange(int(math.floor(total / speed + 1e-9)) + 1) * speed
    if total - distances[-1] > 1e-9:
        distances = np.append(distances, total)
    starts = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
    # the final distance belongs to the last segment, not past it
    seg = np.minimum(np.searchsorted(starts, distances, side="right") - 1, lengths.size - 1)
    along = (distances - starts[seg]) / lengths[seg]
    xy = points[seg] + along[:, None] * segments[seg]
    heading = np.arctan2(segments[seg, 1], segments[seg, 0])
    return np.column_stack([xy, heading])


def _heading_vector(heading):
    return np.array([math.cos(heading), math.sin(heading)])


def _random_walk(spec, grid, rng):
    """
    Constant-speed walk with turns drawn uniformly from +-turn_rate. Once the
    walk comes within two turning circles of the half-tile margin it steers
    toward the grid center, so every turn stays inside the turn-rate bound.
    """
    xmin, ymin, xmax, ymax = grid.bounds
    margin = grid.half_spacing
    center = np.array([(xmin + xmax) / 2.0, (ymin + ymax) / 2.0])
    turning_radius = spec.speed / spec.turn_rate if spec.turn_rate > 0 else 0.0
    lookahead = 2.0 * (turning_radius + spec.speed)

    def safe(p):
        return xmin + margin <= p[0] < xmax - margin and ymin + margin <= p[1] < ymax - margin

    position = np.array(spec.start_point(grid), dtype=np.float64)
    heading = wrap_angle(spec.start_heading)
    poses = [(position[0], position[1], heading)]
    turns = rng.uniform(-spec.turn_rate, spec.turn_rate, size=spec.steps - 1)
    for t, turn in enumerate(turns, start=1):
        if not safe(position + lookahead * _heading_vector(wrap_angle(heading + turn))):
            toward = math.atan2(center[1] - position[1], center[0] - position[0])
            turn = float(np.clip(wrap_angle(toward - heading), -spec.turn_rate, spec.turn_rate))
        heading = wrap_angle(heading + turn)
        position = position + spec.speed * _heading_vector(heading)
        if not grid.contains(position):
            raise InvalidArgumentError(f"Random walk left the grid at step {t}; "
                                       "lower the speed or raise the turn rate")
        poses.append((position[0], position[1], heading))
    return np.array(poses)


def generate_trajectory(spec, grid, rng):
    """Waypoints are sampled every `speed` meters; random walks take `steps` poses."""
    if spec.mode == WAYPOINTS:
        for point in spec.waypoints:
            if not grid.contains(point):
                raise InvalidArgumentError(f"Waypoint {tuple(point)} lies outside the grid")
        poses = _polyline(spec.waypoints, spec.speed)
    else:
        if not grid.contains(spec.start_point(grid)):
            raise InvalidArgumentError(f"Start {spec.start_point(grid)} lies outside the grid")
        poses = _random_walk(spec, grid, rng)
    trajectory = Trajectory(poses)
    logger.debug("Generated %s trajectory with %d poses", spec.mode, len(trajectory))
    return trajectory


def noisy_odometry(truth, odo_noise_frac, heading_noise_frac, rng):
    """
    Odometry between consecutive ground-truth poses.

    Displacement noise has per-axis std odo_noise_frac * |true displacement|.
    Headings behave like a compass: each step's measured heading is the true
    heading plus noise of std heading_noise_frac * |true heading change|, and
    dpsi is the difference of consecutive measured headings.
    """
    if odo_noise_frac < 0 or heading_noise_frac < 0:
        raise InvalidArgumentError("Odometry noise fractions must be >= 0")
    steps = len(truth) - 1
    delta = np.diff(truth.xy, axis=0)
    turn = wrap_angle(np.diff(truth.headings))
    draws = rng.normal(0.0, 1.0, size=(steps, 3))

    measured_delta = delta + draws[:, :2] * (odo_noise_frac * np.hypot(delta[:, 0], delta[:, 1]))[:, None]
    compass = np.concatenate([truth.headings[:1],
                              truth.headings[1:] + draws[:, 2] * heading_noise_frac * np.abs(turn)])
    dpsi = wrap_angle(np.diff(compass))
    return [OdometryStep(float(dx), float(dy), float(dp))
            for (dx, dy), dp in zip(measured_delta, dpsi)]


def compass_headings(first_heading, odometry):
    """Measured heading at every step, rebuilt from the first heading and the dpsi increments."""
    increments = np.array([step.dpsi for step in odometry], dtype=np.float64)
    return wrap_angle(np.concatenate([[first_heading], first_heading + np.cumsum(increments)]))


@dataclass
class MetricsLog:
    """Per-step record of a filter run."""
    true_xy: np.ndarray
    est_xy: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    rms: np.ndarray
    std: np.ndarray
    n_particles: int
    convergence_radius: float = 60.0
    collapse_fraction: float = 0.01

    @property
    def error(self):
        return np.hypot(*(self.est_xy - self.true_xy).T)

    def __len__(self):
        return self.true_xy.shape[0]

    def _require_steps(self):
        if len(self) == 0:
            raise InvalidArgumentError("Metrics log is empty")

    @property
    def final_error(self):
        self._require_steps()
        return float(self.error[-1])

    @property
    def average_error(self):
        self._require_steps()
        return float(self.error.mean())

    @property
    def resample_count(self):
        return int(self.resampled.sum())

    @property
    def collapse_count(self):
        return int((self.ess < self.collapse_fraction * self.n_particles).sum())

    def convergence_time(self, radius=None):
        """First step from which rms dispersion stays below `radius`; None if it never settles."""
        self._require_steps()
        radius = self.convergence_radius if radius is None else radius
        below = self.rms < radius
        if not below[-1]:
            return None
        unsettled = np.flatnonzero(~below)
        return int(unsettled[-1] + 1) if unsettled.size else 0

    @property
    def located(self):
        """The cloud settled and its final estimate lies within the convergence radius of the truth."""
        return self.convergence_time() is not None and self.final_error < self.convergence_radius

    def rows(self):
        error = self.error
        for t in range(len(self)):
            yield (t, self.true_xy[t, 0], self.true_xy[t, 1], self.est_xy[t, 0], self.est_xy[t, 1],
                   error[t], self.ess[t], bool(self.resampled[t]), self.rms[t],
                   self.std[t, 0], self.std[t, 1])


class _Recorder:
    def __init__(self, steps):
        self.true_xy = np.zeros((steps, 2))
        self.est_xy = np.zeros((steps, 2))
        self.ess = np.zeros(steps)
        self.resampled = np.zeros(steps, dtype=bool)
        self.rms = np.zeros(steps)
        self.std = np.zeros((steps, 2))

    def record(self, t, true_xy, ess_value, resampled, est):
        self.true_xy[t] = true_xy
        self.est_xy[t] = est.mean
        self.ess[t] = ess_value
        self.resampled[t] = resampled
        self.rms[t] = est.rms_dispersion
        self.std[t] = est.std

    def finish(self, config, n):
        return MetricsLog(self.true_xy, self.est_xy, self.ess, self.resampled, self.rms, self.std,
                          n_particles=n, convergence_radius=config.convergence_radius,
                          collapse_fraction=config.collapse_fraction)


def _run_filter(config, grid, truth, odometry, headings, score, on_step):
    """
    The filter loop shared by synthetic runs and replays. `score(t, xy, heading)`
    returns one similarity per particle for an observed step, or None when
    that step produced no usable image.
    """
    f = config.filter
    model = f.measurement.build()
    center = config.init_center(grid, start=truth[0][:2])
    if not grid.contains(center):
        raise InvalidArgumentError(f"Initial cloud center {center} lies outside the grid")
    particles = init_gaussian(center, f.init_sigma, f.particles, stream(config.seed, INIT_STREAM))
    recorder = _Recorder(len(truth))

    for t in range(len(truth)):
        if t > 0:
            particles = propagate(particles, odometry[t - 1], f.odometry_noise,
                                  stream(config.seed, PROPAGATE_STREAM, t))
        observed = t % f.observe_every == 0
        if observed:
            scores = score(t, particles.xy, headings[t])
            # None: the image carried no usable signal
            observed = scores is not None
            if observed:
                particles = reweight(particles, scores, model)
        ess_value = ess(particles)
        if ess_value < config.collapse_fraction * f.particles:
            logger.warning("Step %d: ESS collapsed to %.1f of %d particles", t, ess_value, f.particles)
        resampled = False
        if observed or f.strategy == EVERY_STEP_MULTINOMIAL:
            particles, resampled = maybe_resample(particles, f.ess_threshold, f.strategy,
                                                  stream(config.seed, RESAMPLE_STREAM, t))
        est = estimate(particles)
        recorder.record(t, truth.xy[t], ess_value, resampled, est)
        if on_step is not None:
            on_step(t, particles, est)
        logger.debug("step %d: ess %.1f, rms %.1f, resampled %s", t, ess_value, est.rms_dispersion, resampled)

    log = recorder.finish(config, f.particles)
    logger.info("Run finished: final error %.1f m, %d resamples", log.final_error, log.resample_count)
    return log


def run_experiment(config, on_step=None):
    """
    Runs one synthetic experiment end to end and returns its MetricsLog.

    `on_step(t, particles, estimate)` is called after every step.
    """
    grid = config.grid.build()
    world = config.world.build(grid)
    world.check_grid(grid)
    f = config.filter
    truth = generate_trajectory(config.trajectory, grid, stream(config.seed, TRAJECTORY_STREAM))
    odometry = noisy_odometry(truth, f.odometry_noise, f.heading_noise, stream(config.seed, ODOMETRY_STREAM))
    headings = compass_headings(truth.headings[0], odometry)

    def score(t, xy, heading):
        if world.blind_at(grid, truth[t][:2]):
            return None
        observation = synth_observe(world, grid, truth[t], stream(config.seed, OBSERVE_STREAM, t),
                                    config.embeddings.base_dim)
        return observation.score(xy, heading, config.ablation)

    return _run_filter(config, grid, truth, odometry, headings, score, on_step)


class PoseRecord(NamedTuple):
    step: int
    timestamp: float
    x: float
    y: float
    heading: float
    dx: float
    dy: float
    dpsi: float


def replay_experiment(config, store, bases, pose_log, head=None, on_step=None):
    """
    Runs the filter over recorded data: one base embedding and one pose
    record per step, scored against the tile store. Odometry for step t is
    the (dx, dy, dpsi) of record t; the first record's odometry is unused.
    """
    grid = config.grid.build()
    store.check_grid(grid)
    if not pose_log:
        raise InvalidArgumentError("Pose log is empty")
    if len(bases) < len(pose_log):
        raise DimensionMismatchError(f"{len(bases)} base embeddings for {len(pose_log)} pose records")
    if head is None:
        e = config.embeddings
        head = ProjectionHead.seeded(store.dim, bases[0].dim, grid.spacing, e.head_seed)

    truth = Trajectory([(r.x, r.y, r.heading) for r in pose_log])
    odometry = [OdometryStep(r.dx, r.dy, r.dpsi) for r in pose_log[1:]]
    headings = compass_headings(pose_log[0].heading, odometry)
    sequence = BaseEmbeddingSequence(bases)

    def score(t, xy, heading):
        return pseudo_similarity(xy, sequence(t), store, grid, heading, head, config.ablation)

    return _run_filter(config, grid, truth, odometry, headings, score, on_step)
