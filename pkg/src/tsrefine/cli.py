"""Command-line interface.

Exit codes: 0 on success, 2 when some experiment or sweep rows failed,
1 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import baselines, experiment, metrics, nalr
from .ingest import RasterStats, generate_synthetic, rasterize, read_trajectories, synthetic_scenario
from .patches import SEARCH_SHAPES, SampleSet, build_sample_set
from .perturb import PerturbSpec, add_noise, drop_random, impute_nine_cell
from .tsgrid import CellSize, GridError, downsample_mean, load_matrix, save_matrix

log = logging.getLogger("tsrefine")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2
EVAL_FIELDS = ("mae", "mape", "cmjs", "ssim", "gmsd", "mape_excluded_cells")


def _pairs(lows, highs, what):
    lows, highs = lows or [], highs or []
    if len(lows) != len(highs):
        raise experiment.ConfigError(f"{what}: got {len(lows)} low and {len(highs)} high diagrams")
    return [(load_matrix(a), load_matrix(b)) for a, b in zip(lows, highs)]


def _sample_set(pairs) -> SampleSet:
    return SampleSet.concat(build_sample_set(lo, hi) for lo, hi in pairs)


def cmd_rasterize(args) -> int:
    stats = RasterStats()
    d = rasterize(read_trajectories(args.input), CellSize(args.cell_time, args.cell_space),
                  (args.extent_time, args.extent_space), impute=not args.no_impute, stats=stats)
    save_matrix(d, args.output)
    print(f"{d.rows}x{d.cols} cells; {stats.empty_cells} empty, "
          f"{stats.dropped_out_of_extent} points dropped, {stats.clamped_speed} speeds clamped")
    return EXIT_OK


def cmd_refine(args) -> int:
    low = load_matrix(args.input)
    stage1 = _pairs(args.train_low, args.train_high, "training pairs")
    if not stage1:
        raise experiment.ConfigError("give at least one --train-low/--train-high pair")
    cfg = nalr.NalrConfig(k=args.k, search_shape=args.search_shape, ridge_lambda=args.ridge_lambda,
                          clamp_output=not args.no_clamp)
    stage2 = None
    if args.factor == 16:
        # the second level defaults to (train-high, train-high-2)
        lows2 = args.train_low_2 or args.train_high
        if not args.train_high_2:
            raise experiment.ConfigError("--factor 16 needs --train-high-2")
        stage2 = _pairs(lows2, args.train_high_2, "second-stage pairs")

    if args.method == "nalr":
        out = nalr.refine(low, _sample_set(stage1), cfg, args.workers)
        if stage2:
            out = nalr.refine(out, _sample_set(stage2), cfg, args.workers)
    elif args.method == "glr":
        out = baselines.glr_refine(low, baselines.glr_train(_sample_set(stage1), args.glr_threshold))
        if stage2:
            out = baselines.glr_refine(out, baselines.glr_train(_sample_set(stage2), args.glr_threshold))
    else:
        ne_cfg = baselines.NeConfig(k=args.ne_k, distance=args.ne_distance, factor=args.factor)
        if stage2:
            pairs = [(lo, hi2) for (lo, _), (_, hi2) in zip(stage1, stage2)]
        else:
            pairs = stage1
        out = baselines.ne_refine(low, _sample_set(pairs), ne_cfg)
    save_matrix(out, args.output)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth, pred = load_matrix(args.truth), load_matrix(args.pred)
    rep = metrics.evaluate(truth, pred, args.threshold)
    vals = rep.as_dict()
    print(",".join(repr(float(vals[f])) if f != "mape_excluded_cells" else str(vals[f])
                   for f in EVAL_FIELDS))
    print()
    print(f"MAE   {rep.mae:10.4f} km/h")
    print(f"MAPE  {100 * rep.mape:10.4f} %  ({rep.mape_excluded_cells} zero-speed cells excluded)")
    print(f"CMJS  {rep.cmjs:10.4f}    (congestion below {args.threshold:g} km/h)")
    print(f"SSIM  {rep.ssim:10.4f}")
    print(f"GMSD  {rep.gmsd:10.4f}")
    if args.output:
        experiment.write_csv(Path(args.output), list(EVAL_FIELDS), [vals])
    return EXIT_OK


def cmd_perturb(args) -> int:
    spec = PerturbSpec(args.noise_sd, args.missing_rate, args.seed)
    d = load_matrix(args.input)
    if spec.noise_sd > 0:
        d = add_noise(d, spec.noise_sd, spec.seed)
    if spec.missing_rate > 0:
        d = drop_random(d, spec.missing_rate, spec.seed)
    if not args.no_impute:
        d = impute_nine_cell(d)
    save_matrix(d, args.output)
    return EXIT_OK


def cmd_synth(args) -> int:
    extent = (args.extent_time, args.extent_space)
    scenario = synthetic_scenario(args.seed, extent, noise_sd=args.noise_sd)
    high = generate_synthetic(scenario, CellSize(args.cell_time, args.cell_space), extent, args.seed)
    save_matrix(high, args.output)
    if args.low_output:
        save_matrix(downsample_mean(high), args.low_output)
    return EXIT_OK


def _load_experiment(args) -> experiment.ExperimentConfig:
    cfg = experiment.load_config(args.config)
    if args.output:
        cfg.output = Path(args.output)
    if args.workers is not None:
        if args.workers < 1:
            raise experiment.ConfigError("--workers must be >= 1")
        cfg.workers = args.workers
    return cfg


def cmd_experiment(args) -> int:
    failures = experiment.run_experiment(_load_experiment(args))
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_experiment(args)
    if args.kind or args.values:
        kind = args.kind or (cfg.sweep.kind if cfg.sweep else "k")
        values = experiment.parse_values(args.values) if args.values else (cfg.sweep.values if cfg.sweep else [])
        cfg.sweep = experiment.SweepSpec(kind, values)
        experiment.validate(cfg)
    failures = experiment.run_sweep(cfg)
    return EXIT_PARTIAL if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsrefine",
                                description="Refine time-space traffic speed diagrams.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rasterize", help="average trajectory points into a diagram")
    r.add_argument("--input", required=True, help="trajectory CSV (vehicle_id,time_s,position_m,speed_kmh)")
    r.add_argument("--cell-time", type=float, required=True, help="cell span in seconds")
    r.add_argument("--cell-space", type=float, required=True, help="cell span in meters")
    r.add_argument("--extent-time", type=float, required=True)
    r.add_argument("--extent-space", type=float, required=True)
    r.add_argument("--no-impute", action="store_true", help="leave empty cells as NaN")
    r.add_argument("--output", required=True)
    r.set_defaults(func=cmd_rasterize)

    f = sub.add_parser("refine", help="refine one diagram by 4x or 16x")
    f.add_argument("--input", required=True)
    f.add_argument("--train-low", action="append", help="training low diagram (repeatable)")
    f.add_argument("--train-high", action="append", help="matching 2x-per-axis diagram (repeatable)")
    f.add_argument("--train-low-2", action="append",
                   help="second-stage low diagram for 16x (default: the --train-high files)")
    f.add_argument("--train-high-2", action="append", help="4x-per-axis diagram for 16x (repeatable)")
    f.add_argument("--method", choices=experiment.METHODS, default="nalr")
    f.add_argument("--factor", type=int, choices=(4, 16), default=4)
    f.add_argument("--k", type=int, default=100, help="neighbourhood size")
    f.add_argument("--search-shape", choices=sorted(SEARCH_SHAPES), default="3x3",
                   help="window (rows x cols) used for the neighbour search")
    f.add_argument("--ridge-lambda", type=float, default=1e-8)
    f.add_argument("--no-clamp", action="store_true", help="do not clamp output to [0, 100]")
    f.add_argument("--glr-threshold", type=float, default=baselines.CONGESTION_THRESHOLD)
    f.add_argument("--ne-k", type=int, default=5)
    f.add_argument("--ne-distance", choices=("l1", "l2"), default="l1")
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--output", required=True)
    f.set_defaults(func=cmd_refine)

    e = sub.add_parser("evaluate", help="compare a refined diagram with the truth",
                       description="Prints one CSV line (" + ",".join(EVAL_FIELDS) +
                       ") followed by a readable summary.")
    e.add_argument("--truth", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--threshold", type=float, default=30.0, help="congestion threshold in km/h")
    e.add_argument("--output", help="also write the metrics as a CSV file with header")
    e.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("perturb", help="add noise and/or drop cells, then impute")
    q.add_argument("--input", required=True)
    q.add_argument("--noise-sd", type=float, default=0.0)
    q.add_argument("--missing-rate", type=float, default=0.0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--no-impute", action="store_true", help="keep dropped cells as NaN")
    q.add_argument("--output", required=True)
    q.set_defaults(func=cmd_perturb)

    for name, func, text in (("experiment", cmd_experiment, "run every test/method/factor row"),
                             ("sweep", cmd_sweep, "run a parameter sweep")):
        x = sub.add_parser(name, help=text, description=experiment.__doc__,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        x.add_argument("config", help="INI config file")
        x.add_argument("--output", help="override the output directory")
        x.add_argument("--workers", type=int, help="override the worker count")
        if name == "sweep":
            x.add_argument("--kind", choices=experiment.SWEEP_KINDS)
            x.add_argument("--values", help='"a, b, c" or "start:stop:step"')
        x.set_defaults(func=func)

    s = sub.add_parser("synth", help="generate a synthetic shock-wave diagram")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cell-time", type=float, default=30.0)
    s.add_argument("--cell-space", type=float, default=50.0)
    s.add_argument("--extent-time", type=float, default=2400.0)
    s.add_argument("--extent-space", type=float, default=4000.0)
    s.add_argument("--noise-sd", type=float, default=2.5)
    s.add_argument("--output", required=True)
    s.add_argument("--low-output", help="also write the 2x-coarser block-mean diagram")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (experiment.ConfigError, GridError, metrics.MetricError, nalr.SingularFitError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
