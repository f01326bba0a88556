import itertools
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional

import numpy as np

from src.configure import dump_config
from src.errors import InvalidArgumentError
from src.file_utils import atomic_write
from src.records import write_metrics
from src.sim import run_experiment

logger = logging.getLogger(__name__)

# Per-run metrics compared between arms; lower is better for all of them
WIN_METRICS = ("final_error", "average_error", "convergence_time")


class RunSummary(NamedTuple):
    label: str
    seed: int
    final_error: float
    average_error: float
    final_std: float
    convergence_time: Optional[int]
    resample_count: int
    collapse_count: int
    located: bool = False


class ArmAggregate(NamedTuple):
    label: str
    runs: int
    median_final_error: float
    iqr_final_error: float
    median_average_error: float
    median_final_std: float
    converged: int
    located: int
    median_convergence_time: Optional[float]
    mean_resample_count: float
    mean_collapse_count: float


class Comparison(NamedTuple):
    arms: list
    # (label_a, label_b) -> {metric: fraction of seeds where a beats b}
    win_rates: dict


def summarize(log, label="", seed=0):
    if len(log) == 0:
        raise InvalidArgumentError(f"Cannot summarize an empty log (seed {seed})")
    return RunSummary(label=label, seed=seed, final_error=log.final_error,
                      average_error=log.average_error, final_std=float(log.rms[-1]),
                      convergence_time=log.convergence_time(), resample_count=log.resample_count,
                      collapse_count=log.collapse_count, located=log.located)


def _median_iqr(values):
    q25, q50, q75 = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75])
    return float(q50), float(q75 - q25)


def _aggregate(label, runs):
    median_final, iqr_final = _median_iqr([r.final_error for r in runs])
    times = [r.convergence_time for r in runs if r.convergence_time is not None]
    return ArmAggregate(
        label=label,
        runs=len(runs),
        median_final_error=median_final,
        iqr_final_error=iqr_final,
        median_average_error=_median_iqr([r.average_error for r in runs])[0],
        median_final_std=_median_iqr([r.final_std for r in runs])[0],
        converged=len(times),
        located=sum(1 for r in runs if r.located),
        median_convergence_time=_median_iqr(times)[0] if times else None,
        mean_resample_count=float(np.mean([r.resample_count for r in runs])),
        mean_collapse_count=float(np.mean([r.collapse_count for r in runs])),
    )


def _metric(run, name):
    value = getattr(run, name)
    return math.inf if value is None else value


def win_rate(runs_a, runs_b, metric):
    """Fraction of seeds on which arm a scores lower than arm b; ties count one half."""
    by_seed = {r.seed: r for r in runs_b}
    wins = 0.0
    for run in runs_a:
        a, b = _metric(run, metric), _metric(by_seed[run.seed], metric)
        wins += 1.0 if a < b else 0.5 if a == b else 0.0
    return wins / len(runs_a)


def compare(arms):
    """
    Aggregates per-arm summaries and computes pairwise win rates. Every arm
    must have been run on the same seeds.
    """
    if not arms:
        raise InvalidArgumentError("Nothing to compare")
    seed_sets = {label: sorted(r.seed for r in runs) for label, runs in arms.items()}
    reference = next(iter(seed_sets.values()))
    for label, seeds in seed_sets.items():
        if not seeds:
            raise InvalidArgumentError(f"Arm {label!r} has no runs")
        if seeds != reference:
            raise InvalidArgumentError(f"Arm {label!r} ran on seeds {seeds}, expected {reference}")

    aggregates = [_aggregate(label, runs) for label, runs in arms.items()]
    win_rates = {}
    for a, b in itertools.permutations(arms, 2):
        win_rates[(a, b)] = {metric: win_rate(arms[a], arms[b], metric) for metric in WIN_METRICS}
    return Comparison(arms=aggregates, win_rates=win_rates)


def _cell(value, width, digits=1):
    if value is None:
        return f"{'-':<{width}}"
    if isinstance(value, float):
        return f"{value:<{width}.{digits}f}"
    return f"{value!s:<{width}}"


def render_table(comparison):
    columns = [
        ("arm", None),
        ("runs", "runs"),
        ("final err (m)", "median_final_error"),
        ("iqr (m)", "iqr_final_error"),
        ("avg err (m)", "median_average_error"),
        ("final std (m)", "median_final_std"),
        ("converged", "converged"),
        ("located", "located"),
        ("conv step", "median_convergence_time"),
        ("resamples", "mean_resample_count"),
        ("collapses", "mean_collapse_count"),
    ]
    label_width = max([len("arm")] + [len(a.label) for a in comparison.arms]) + 3
    widths = {name: max(len(name), 6) + 3 for name, _ in columns[1:]}

    header = f"{'arm':<{label_width}}" + "".join(f"{name:<{widths[name]}}" for name, _ in columns[1:])
    lines = [header.rstrip()]
    for arm in comparison.arms:
        line = f"{arm.label:<{label_width}}"
        for name, attr in columns[1:]:
            line += _cell(getattr(arm, attr), widths[name])
        lines.append(line.rstrip())

    if comparison.win_rates:
        lines.append("")
        pair_width = max(len(f"{a} vs {b}") for a, b in comparison.win_rates) + 3
        lines.append((f"{'win rate':<{pair_width}}" + "".join(f"{m:<18}" for m in WIN_METRICS)).rstrip())
        for (a, b), rates in comparison.win_rates.items():
            line = f"{a + ' vs ' + b:<{pair_width}}" + "".join(f"{rates[m]:<18.2f}" for m in WIN_METRICS)
            lines.append(line.rstrip())
    return "\n".join(lines)


def _run_one(label, config, seed, out=None):
    config = config.replace(seed=seed)
    log = run_experiment(config)
    if out is not None:
        run_dir = os.path.join(out, label, f"seed-{seed}")
        atomic_write(os.path.join(run_dir, "config.json"), dump_config(config))
        write_metrics(log, os.path.join(run_dir, "metrics.csv"))
    summary = summarize(log, label=label, seed=seed)
    logger.info("%s seed %d: final error %.1f m", label, seed, summary.final_error)
    return summary


def run_arms(arms, seeds, workers=1, out=None):
    """
    Runs every arm config on every seed. Results are keyed by arm label and
    ordered by seed, whatever the number of workers. With `out`, each run
    writes its own <out>/<label>/seed-<n>/ directory.
    """
    if not seeds:
        raise InvalidArgumentError("Need at least one seed")
    jobs = [(label, config, seed, out) for label, config in arms.items() for seed in seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(lambda job: _run_one(*job), jobs))
    else:
        summaries = [_run_one(*job) for job in jobs]
    results = {label: [] for label in arms}
    for summary in summaries:
        results[summary.label].append(summary)
    return results
