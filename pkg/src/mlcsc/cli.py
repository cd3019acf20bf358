"""Command-line entry point ``mlcsc``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure (including a failing selftest).
"""

from __future__ import annotations

import argparse
from dataclasses import replace
import logging
from pathlib import Path
import sys

import numpy as np

from .config import ConfigError, default_config, load_config
from .conv import ShapeError
from .io import (
    FormatError,
    load_params,
    read_cameras,
    read_image,
    read_observations,
    read_operator,
    read_tensor,
    save_params,
    write_csv,
    write_image,
    write_tensor,
    write_trajectories,
)
from .linop import project_consistent
from .solver import NumericalError, infer, predict

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("mlcsc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="experiment config (INI)")
    parser.add_argument("--seed", type=int, default=default, help="seed (overrides config)")
    parser.add_argument("--out", default=default, help="output directory (default: mlcsc-out)")
    parser.add_argument("--threads", type=int, default=default,
                        help="BLAS / OpenMP thread limit")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlcsc", description="Multi-layer convolutional sparse coding tools.")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("train", parents=[common], help="train the model of a config and save it")
    p.add_argument("--evaluate", action="store_true",
                   help="run the full experiment of the config kind instead")

    p = sub.add_parser("infer", parents=[common], help="run inference with a saved model")
    p.add_argument("--model", required=True, help="directory written by 'train'")
    p.add_argument("--input", required=True,
                   help=".mlct tensor, observation .csv (frame,point,u,v) or .ppm/.pgm image")
    p.add_argument("--operator", help=".mlct operator bundle or camera .csv")
    p.add_argument("--qf", type=int, help="JPEG quality factor for an image input")
    p.add_argument("--sweeps", type=int, help="override the sweep count")
    p.add_argument("--consistent", action="store_true",
                   help="project the prediction onto the measurement (for models trained "
                        "with model.consistent)")

    p = sub.add_parser("sweep", parents=[common], help="alpha sweep between inpainting and "
                                                       "block recovery")
    p.add_argument("--alphas", help="comma separated alpha grid")

    p = sub.add_parser("jpeg-ar", parents=[common], help="JPEG artifact removal experiment")
    p.add_argument("--qf", help="comma separated quality factors")

    sub.add_parser("traj", parents=[common], help="planted trajectory reconstruction experiment")
    sub.add_parser("selftest", parents=[common], help="run the invariant and oracle checks")
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out or "mlcsc-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, kind=None):
    if args.config:
        cfg = load_config(args.config, args.seed)
        if kind is not None and cfg.kind != kind:
            raise UsageError(f"config kind {cfg.kind!r} does not match command ({kind!r})")
        return cfg
    if kind is None:
        raise UsageError("this command needs --config")
    return default_config(kind, args.seed or 0)


def _floats(text, what):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"could not parse {what}: {text!r}") from None


def _run_experiment(args, kind, grid=None):
    from .experiments import run_experiment

    cfg = _config(args, kind)
    if grid is not None:
        cfg = replace(cfg, grid=grid).validate()
    out = _out_dir(args)
    rows = run_experiment(cfg, out)
    for r in rows:
        rep = r.report
        print(f"{r.experiment:12s} {r.method:12s} {r.setting:>10g}  rmse={rep.rmse:.5g} "
              f"psnr={rep.psnr:.4g} ssim={rep.ssim:.4g} nrmse={rep.nrmse:.5g}")
    print(f"results written to {out / 'results.csv'}")
    return EXIT_OK


def cmd_train(args):
    from .experiments import run_experiment, training_set, write_results
    from .unroll import train

    cfg = _config(args)
    out = _out_dir(args)
    if args.evaluate:
        rows = run_experiment(cfg, out)
        write_results(out / "results.csv", rows)
        return EXIT_OK
    tc = replace(cfg.train, consistent=cfg.model.consistent)
    if tc.checkpoint_every:
        tc = replace(tc, checkpoint_dir=str(out / "checkpoints"))
    data, init = training_set(cfg)
    result = train(data, init, tc)
    save_params(result.params, out / "model")
    write_csv(out / "train_log.csv", ("epoch", "batch", "loss", "grad_norm"), result.log)
    print(f"trained {cfg.kind} model: final epoch loss {result.epoch_loss[-1]:.6g}; "
          f"saved to {out / 'model'}")
    return EXIT_OK


def _consistent(op, pred, y):
    try:
        return project_consistent(op, pred, y)
    except NotImplementedError as exc:
        raise UsageError(f"--consistent: {exc}") from None


def _prediction(params, y, op, consistent):
    pred = predict(params, infer(params, y, op))
    return _consistent(op, pred, y) if consistent else pred


def cmd_infer(args):
    params = load_params(args.model)
    if args.sweeps is not None:
        if args.sweeps < 1:
            raise UsageError("--sweeps must be >= 1")
        from .solver import with_sweeps
        params = with_sweeps(params, args.sweeps)
    out = _out_dir(args)
    src = Path(args.input)
    suffix = src.suffix.lower()
    if suffix in (".ppm", ".pgm"):
        from .jpeg import build_jpeg_operator, decompress, signal_to_rgb

        if args.qf is None:
            raise UsageError("an image input needs --qf")
        image = read_image(src)
        op, y = build_jpeg_operator(image, args.qf)
        h, w = image.shape[1:]
        restored = np.clip(signal_to_rgb(_prediction(params, y, op, args.consistent)), 0, 1)
        write_image(out / "decompressed.ppm", np.clip(decompress(y, h, w), 0, 1))
        write_image(out / "restored.ppm", restored)
        return EXIT_OK
    if suffix == ".csv":
        from .trajectory import build_traj_operator

        if not args.operator:
            raise UsageError("observation CSV input needs --operator cameras.csv")
        obs = read_observations(src)
        op = build_traj_operator(read_cameras(args.operator))
        recon = np.stack([predict(params, infer(params, o, op)) for o in obs])
        write_trajectories(out / "reconstruction.csv", recon)
        return EXIT_OK
    y = read_tensor(src)
    op = read_operator(args.operator) if args.operator else None
    if args.consistent and op is None:
        raise UsageError("--consistent needs --operator")
    state = infer(params, y, op)
    pred = predict(params, state)
    if args.consistent:
        pred = _consistent(op, pred, y)
    write_tensor(out / "codes.mlct", state.codes[-1])
    write_tensor(out / "prediction.mlct", pred)
    return EXIT_OK


def cmd_selftest(args):
    from .checks import SELFTEST_HEADER, run_all

    out = _out_dir(args)
    results = run_all(seed=args.seed or 0)
    write_csv(out / "selftest.csv", SELFTEST_HEADER, [r.as_row() for r in results])
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _dispatch(args):
    if args.command == "train":
        return cmd_train(args)
    if args.command == "infer":
        return cmd_infer(args)
    if args.command == "sweep":
        grid = _floats(args.alphas, "--alphas") if args.alphas else None
        return _run_experiment(args, "alpha-sweep", grid)
    if args.command == "jpeg-ar":
        grid = tuple(int(q) for q in _floats(args.qf, "--qf")) if args.qf else None
        return _run_experiment(args, "jpeg-ar", grid)
    if args.command == "traj":
        return _run_experiment(args, "traj")
    return cmd_selftest(args)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        print("mlcsc: --seed must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    if args.threads is not None and args.threads < 1:
        print("mlcsc: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return _dispatch(args)
        return _dispatch(args)
    except UsageError as exc:
        print(f"mlcsc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"mlcsc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, ShapeError, ValueError, OSError) as exc:
        print(f"mlcsc: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
