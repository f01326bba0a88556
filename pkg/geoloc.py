#!/usr/bin/env python3

import argparse
import io
import logging
import os
import sys

import numpy as np

from src.configure import dump_config, load_config
from src.embeddings import ABLATION_MODES, load_bases, load_store, read_store
from src.errors import (ConfigError, DimensionMismatchError, GeolocError, InvalidArgumentError, RecordFormatError,
                        StoreFormatError)
from src.file_utils import atomic_write
from src.filter import RESAMPLING_STRATEGIES
from src.losses import (TrinomialParams, central_difference, fancy_pca_augment, triplet_loss,
                        triplet_loss_grad, trinomial_loss, trinomial_loss_grad)
from src.metrics import compare, render_table, run_arms, summarize
from src.records import load_pose_log, write_metrics, write_particles
from src.sim import replay_experiment, run_experiment

logger = logging.getLogger("geoloc")

# Errors caused by bad input files or arguments exit with 1, anything else with 2
INPUT_ERRORS = (ConfigError, StoreFormatError, RecordFormatError, InvalidArgumentError, DimensionMismatchError)


def _load(args):
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.replace(seed=args.seed)
    # The printed config re-runs to an identical result
    print(dump_config(config), end="")
    return config


def _save_run(log, config, out, particles=None, step=None):
    atomic_write(os.path.join(out, "config.json"), dump_config(config))
    write_metrics(log, os.path.join(out, "metrics.csv"))
    if particles is not None:
        write_particles(particles, step, os.path.join(out, "particles.csv"))
    logger.info("Wrote results to %s", out)


def _final_particles():
    """on_step hook that keeps the latest particle set."""
    state = {}

    def hook(t, particles, estimate):
        state["step"], state["particles"] = t, particles

    return state, hook


def cmd_run(args):
    config = _load(args)
    state, hook = _final_particles()
    log = run_experiment(config, on_step=hook)
    if args.out:
        _save_run(log, config, args.out, state["particles"], state["step"])
    print(render_table(compare({"run": [summarize(log, "run", config.seed)]})))
    return 0


def _arms(args, choices, field):
    labels = args.arms.split(",") if args.arms else list(choices)
    for label in labels:
        if label not in choices:
            raise InvalidArgumentError(f"Unknown arm {label!r}; choose from {', '.join(choices)}")
    config = _load(args)
    arms = {label: config.replace(**{field: label}) for label in labels}
    seeds = list(range(config.seed, config.seed + args.seeds))
    results = run_arms(arms, seeds, workers=args.workers, out=args.out)
    print(render_table(compare(results)))
    return 0


def cmd_ablate(args):
    return _arms(args, ABLATION_MODES, "ablation")


def cmd_resample_bench(args):
    return _arms(args, RESAMPLING_STRATEGIES, "filter.strategy")


def cmd_augment(args):
    try:
        image = np.load(args.input)
    except ValueError as e:
        raise InvalidArgumentError(f"{args.input}: not a numpy array file ({e})") from e
    augmented = fancy_pca_augment(image, args.alpha_scale, np.random.default_rng(args.seed))
    buffer = io.BytesIO()
    np.save(buffer, augmented)
    atomic_write(args.output, buffer.getvalue(), binary=True)
    print(f"Augmented {image.shape} image written to {args.output}")
    return 0


def _max_relative_error(analytic, numeric):
    return max(abs(a - n) / max(abs(a), abs(n)) for a, n in zip(analytic, numeric))


def cmd_loss_check(args):
    rng = np.random.default_rng(args.seed)
    triplet, trinomial = 0.0, 0.0
    for _ in range(args.points):
        alpha = rng.uniform(1, 10)
        d_pos = rng.uniform(-1, 1)
        d_neg = d_pos - rng.uniform(-0.5, 0.5)
        triplet = max(triplet, _max_relative_error(
            triplet_loss_grad(d_pos, d_neg, alpha),
            central_difference(lambda a, b: triplet_loss(a, b, alpha), (d_pos, d_neg))))

        margins = rng.uniform(-0.5, 0.5, size=3)
        params = TrinomialParams(*rng.uniform(1, 10, size=3), *margins, *rng.integers(1, 8, size=3).tolist())
        point = margins + rng.uniform(-0.5, 0.5, size=3)
        trinomial = max(trinomial, _max_relative_error(
            trinomial_loss_grad(*point, params),
            central_difference(lambda a, b, c: trinomial_loss(a, b, c, params), point)))

    width = 12
    print(f"{'loss':<{width}}{'points':<{width}}{'max rel err':<{width}}")
    print(f"{'triplet':<{width}}{args.points:<{width}}{triplet:<{width}.2e}")
    print(f"{'trinomial':<{width}}{args.points:<{width}}{trinomial:<{width}.2e}")
    if max(triplet, trinomial) >= args.tolerance:
        logger.error("Gradient check failed: max relative error %.2e >= %.0e",
                     max(triplet, trinomial), args.tolerance)
        return 2
    return 0


def cmd_validate_store(args):
    if args.config:
        config = load_config(args.config)
        store = load_store(args.store, config.grid.build(), config.embeddings.dim)
    else:
        store = read_store(args.store)
    print(f"{args.store}: {store.rows}x{store.cols} tiles, dim {store.dim}, OK")
    return 0


def cmd_replay(args):
    config = _load(args)
    grid = config.grid.build()
    store = load_store(args.store, grid)
    bases = load_bases(args.bases)
    pose_log = load_pose_log(args.pose_log)
    state, hook = _final_particles()
    log = replay_experiment(config, store, bases, pose_log, on_step=hook)
    if args.out:
        _save_run(log, config, args.out, state["particles"], state["step"])
    print(render_table(compare({"replay": [summarize(log, "replay", config.seed)]})))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(description="Particle-filter geolocalization against an aerial tile grid.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log per-step filter progress.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a single synthetic experiment.")
    run.add_argument("--config", required=True, help="Experiment config (JSON).")
    run.add_argument("--seed", type=int, help="Override the config seed.")
    run.add_argument("--out", help="Directory for config.json, metrics.csv and particles.csv.")
    run.set_defaults(func=cmd_run)

    for name, func, choices, help_text in (
            ("ablate", cmd_ablate, ABLATION_MODES, "Compare embedding ablations on matched seeds."),
            ("resample-bench", cmd_resample_bench, RESAMPLING_STRATEGIES,
             "Compare resampling strategies on matched seeds.")):
        bench = sub.add_parser(name, help=help_text)
        bench.add_argument("--config", required=True, help="Experiment config (JSON).")
        bench.add_argument("--seed", type=int, help="First seed; defaults to the config seed.")
        bench.add_argument("--seeds", type=int, default=20, help="Number of consecutive seeds.")
        bench.add_argument("--arms", help=f"Comma-separated subset of {','.join(choices)}.")
        bench.add_argument("--workers", type=int, default=1, help="Runs in parallel.")
        bench.add_argument("--out", help="Directory for per-arm, per-seed results.")
        bench.set_defaults(func=func)

    augment = sub.add_parser("augment", help="Apply Fancy PCA color augmentation to an .npy image.")
    augment.add_argument("input", help="(H, W, 3) float image in [0, 1], saved with numpy.save.")
    augment.add_argument("output")
    augment.add_argument("--alpha-scale", type=float, default=1.0)
    augment.add_argument("--seed", type=int, default=0)
    augment.set_defaults(func=cmd_augment)

    loss_check = sub.add_parser("loss-check", help="Verify loss gradients against finite differences.")
    loss_check.add_argument("--seed", type=int, default=0)
    loss_check.add_argument("--points", type=int, default=100)
    loss_check.add_argument("--tolerance", type=float, default=1e-6)
    loss_check.set_defaults(func=cmd_loss_check)

    validate = sub.add_parser("validate-store", help="Check an embedding store file.")
    validate.add_argument("store")
    validate.add_argument("--config", help="Also check the store against this config's grid.")
    validate.set_defaults(func=cmd_validate_store)

    replay = sub.add_parser("replay", help="Run the filter over recorded embeddings and poses.")
    replay.add_argument("--config", required=True)
    replay.add_argument("--store", required=True)
    replay.add_argument("--bases", required=True)
    replay.add_argument("--pose-log", required=True)
    replay.add_argument("--seed", type=int)
    replay.add_argument("--out")
    replay.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(format="[%(levelname)s] %(message)s",
                        level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except INPUT_ERRORS as e:
        logger.error("%s", e)
        return 1
    except (GeolocError, OSError) as e:
        logger.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
