"""Desk-scale experiment drivers.

Each driver is a pure function of its :class:`ExperimentConfig`: it builds
seeded data, trains, evaluates on held-out data and returns a list of
:class:`ResultRow`. With ``out_dir`` set it also writes ``results.csv``
(and an SVG plot where one makes sense) into that directory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
import logging
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .io import read_image, write_csv
from .jpeg import build_jpeg_operator, decompress, jpeg_signal, signal_to_rgb
from .linop import (
    make_alpha_blend,
    make_block_transform,
    make_inpainting_mask,
    project_consistent,
)
from .metrics import MetricReport, nrmse, rmse_psnr, ssim
from .plot import emit_plot_svg
from .solver import infer, lipschitz_bounds, predict, with_sweeps
from .synthetic import make_planted_model
from .trajectory import build_traj_operator, make_orbit_cameras
from .unroll import init_params, train

__all__ = [
    "ResultRow",
    "CSV_HEADER",
    "load_fixture",
    "run_alpha_sweep",
    "run_planted_recovery",
    "run_jpeg_experiment",
    "run_traj_experiment",
    "run_experiment",
    "training_set",
    "write_results",
]

logger = logging.getLogger(__name__)

CSV_HEADER = ("experiment", "alpha_or_qf", "rmse", "psnr", "ssim", "nrmse")
INJECTED_SWEEPS = 20000
N_INJECTED = 2
TRAIN_ALPHA = 0.5


@dataclass(frozen=True)
class ResultRow:
    """One evaluated method at one grid point.

    ``setting`` is alpha, the quality factor, or for sequence experiments
    the number of solver sweeps. In CSV form the experiment column reads
    ``kind/method``.
    """

    experiment: str
    method: str
    setting: float
    report: MetricReport

    def as_tuple(self):
        r = self.report
        return (f"{self.experiment}/{self.method}", self.setting, r.rmse, r.psnr, r.ssim, r.nrmse)


def write_results(path, rows) -> None:
    write_csv(path, CSV_HEADER, [r.as_tuple() for r in rows])


def load_fixture(name: str, fixture_dir: str = "") -> np.ndarray:
    """A bundled (or ``fixture_dir``) 64x64 RGB crop as ``(3, H, W)`` in [0, 1]."""
    if fixture_dir:
        return read_image(Path(fixture_dir) / f"{name}.ppm")
    with resources.as_file(resources.files("mlcsc") / "data" / f"{name}.ppm") as path:
        return read_image(path)


def _mean_report(pairs, images: bool) -> MetricReport:
    """Average per-sample metrics over ``(prediction, truth)`` pairs."""
    rm, ps, ss, nr = [], [], [], []
    for pred, truth in pairs:
        r, p = rmse_psnr(pred, truth)
        rm.append(r)
        ps.append(p)
        nr.append(nrmse(pred, truth))
        if images:
            ss.append(ssim(pred, truth))
    return MetricReport(float(np.mean(rm)), float(np.mean(ps)),
                        float(np.mean(ss)) if images else float("nan"), float(np.mean(nr)))


def _random_crops(images, n, size, rng):
    out = []
    for _ in range(n):
        img = images[rng.integers(len(images))]
        r = rng.integers(0, img.shape[1] - size + 1)
        c = rng.integers(0, img.shape[2] - size + 1)
        crop = img[:, r:r + size, c:c + size]
        if rng.random() < 0.5:
            crop = crop[:, :, ::-1]
        out.append(np.ascontiguousarray(crop))
    return out


def _init(cfg: ExperimentConfig, channels: int, signal_shape, operator, kernel_ndim: int,
          gains=None):
    m = cfg.model
    kernels = [(k,) * kernel_ndim for k in m.kernels]
    delta = None
    if m.init == "delta":
        delta = gains if gains is not None else np.ones(channels)
    return init_params([channels, *m.filters], kernels, signal_shape, operator, m.sweeps,
                       m.bias, cfg.seed, delta_gains=delta, noise=m.noise)


def _fit(cfg: ExperimentConfig, dataset, init):
    result = train(dataset, init, replace(cfg.train, consistent=cfg.model.consistent))
    logger.info("%s: final epoch loss %.6g", cfg.kind, result.epoch_loss[-1] if result.epoch_loss
                else float("nan"))
    return result.params


def _restore(params, y, op, consistent=False):
    z = predict(params, infer(params, y, op))
    return project_consistent(op, z, y) if consistent else z


def _emit(out_dir, rows, plot=None):
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results(out / "results.csv", rows)
    if plot is not None:
        series, labels = plot
        emit_plot_svg(series, out / "results.svg", **labels)


# -- synthetic inpainting / block recovery ------------------------------------

def _blend_pair(shape, cfg, rng):
    seeds = rng.integers(0, 2 ** 31, size=2)
    mask = make_inpainting_mask(shape, cfg.data.drop_rate, seed=seeds[0])
    block = make_block_transform(shape, cfg.data.block_edge, seed=seeds[1])
    return mask, block


def _alpha_setup(cfg: ExperimentConfig):
    rng = np.random.default_rng(cfg.seed)
    d = cfg.data
    train_imgs = [load_fixture(n, d.fixture_dir) for n in d.train_images]
    test_imgs = [load_fixture(n, d.fixture_dir) for n in d.test_images]
    crops = _random_crops(train_imgs, d.n_train, d.crop, rng)
    train_ops = [_blend_pair(c.shape, cfg, rng) for c in crops]
    test_ops = [_blend_pair(t.shape, cfg, rng) for t in test_imgs]
    return crops, train_ops, test_imgs, test_ops


def _alpha_dataset(crops, train_ops, alpha, naive):
    out = []
    for z, (mask, block) in zip(crops, train_ops):
        op = make_alpha_blend(mask, block, alpha)
        y = op.apply(z)
        out.append((op.adjoint(y), None, z) if naive else (y, op, z))
    return out


def _adapt_steps(params, op, reference, signal_shape):
    """Rescale L_1 by the ratio of layer-1 Lipschitz bounds under ``op`` and ``reference``.

    Layer 1 is the only block whose curvature depends on the measurement
    operator, so a step learned for one operator is carried over to another
    in relative terms.
    """
    ratio = (lipschitz_bounds(params, signal_shape, op)[0]
             / lipschitz_bounds(params, signal_shape, reference)[0])
    out = params.copy()
    out.lipschitz[0] *= ratio
    return out


def run_alpha_sweep(cfg: ExperimentConfig, out_dir=None) -> list:
    """Blend of inpainting (alpha 0) and random block mixing (alpha 1).

    One model that knows ``M`` is trained at alpha 0.5 and evaluated across
    the grid, with its layer-1 step rescaled to each operator. A naive model
    of the same architecture, fed ``M^T y`` with the identity as its
    operator, is trained separately for every alpha and evaluated at its
    training depth. The model-aware network runs ``model.eval_sweeps``
    sweeps when that is set, since it is an optimizer for the known ``M``.
    """
    crops, train_ops, test_imgs, test_ops = _alpha_setup(cfg)
    csc_data = _alpha_dataset(crops, train_ops, TRAIN_ALPHA, False)
    csc = _eval_sweeps(cfg, _fit(cfg, csc_data, _init(cfg, 3, crops[0].shape, csc_data[0][1], 2)))
    rows = []
    for alpha in cfg.grid:
        pairs = []
        for z, (mask, block) in zip(test_imgs, test_ops):
            op = make_alpha_blend(mask, block, alpha)
            ref = make_alpha_blend(mask, block, TRAIN_ALPHA)
            p = csc if alpha == TRAIN_ALPHA else _adapt_steps(csc, op, ref, z.shape)
            pairs.append((_restore(p, op.apply(z), op), z))
        rows.append(ResultRow("alpha-sweep", "csc", float(alpha), _mean_report(pairs, True)))
    for alpha in cfg.grid:
        data = _alpha_dataset(crops, train_ops, alpha, True)
        naive = _fit(cfg, data, _init(cfg, 3, crops[0].shape, None, 2))
        pairs = []
        for z, (mask, block) in zip(test_imgs, test_ops):
            op = make_alpha_blend(mask, block, alpha)
            pairs.append((_restore(naive, op.adjoint(op.apply(z)), None), z))
        rows.append(ResultRow("alpha-sweep", "naive", float(alpha), _mean_report(pairs, True)))
    series = [(m, [r.setting for r in rows if r.method == m],
               [r.report.rmse for r in rows if r.method == m]) for m in ("csc", "naive")]
    _emit(out_dir, rows, (series, dict(title="Error vs alpha", xlabel="alpha", ylabel="RMSE")))
    return rows


def _eval_sweeps(cfg: ExperimentConfig, params):
    return with_sweeps(params, cfg.model.eval_sweeps) if cfg.model.eval_sweeps else params


# -- JPEG artifact removal ----------------------------------------------------

def _jpeg_training(cfg: ExperimentConfig, qf: int):
    d = cfg.data
    train_imgs = [load_fixture(n, d.fixture_dir) for n in d.train_images]
    rng = np.random.default_rng([cfg.seed, qf])
    data = []
    for crop in _random_crops(train_imgs, d.n_train, d.crop, rng):
        op, y = build_jpeg_operator(crop, qf)
        data.append((y, op, jpeg_signal(crop)))
    # chroma atoms get gain 2 so the untrained model matches replication upsampling
    init = _init(cfg, 3, data[0][2].shape, data[0][1], 2, gains=(1.0, 2.0, 2.0))
    return data, init


def run_jpeg_experiment(cfg: ExperimentConfig, out_dir=None) -> list:
    """Per quality factor: train on crops, compare against plain decompression."""
    d = cfg.data
    test_imgs = [load_fixture(n, d.fixture_dir) for n in d.test_images]
    rows = []
    for qf in cfg.grid:
        qf = int(qf)
        params = _fit(cfg, *_jpeg_training(cfg, qf))
        base, pred = [], []
        for img in test_imgs:
            op, y = build_jpeg_operator(img, qf)
            h, w = img.shape[1:]
            base.append((np.clip(decompress(y, h, w), 0.0, 1.0), img))
            restored = _restore(params, y, op, cfg.model.consistent)
            pred.append((np.clip(signal_to_rgb(restored), 0.0, 1.0), img))
        rows.append(ResultRow("jpeg-ar", "baseline", float(qf), _mean_report(base, True)))
        rows.append(ResultRow("jpeg-ar", "csc", float(qf), _mean_report(pred, True)))
    if len(cfg.grid) > 1:
        series = [(m, [r.setting for r in rows if r.method == m],
                   [r.report.psnr for r in rows if r.method == m]) for m in ("baseline", "csc")]
        plot = (series, dict(title="PSNR vs quality factor", xlabel="QF", ylabel="PSNR (dB)"))
    else:
        plot = None
    _emit(out_dir, rows, plot)
    return rows


# -- planted 1-D signals and trajectories -------------------------------------

def _sequence_setup(cfg: ExperimentConfig, make_operator):
    d = cfg.data
    rng = np.random.default_rng(cfg.seed)
    truth = make_planted_model(cfg.seed, length=d.frames)

    def sample():
        z = truth.sample(rng)
        op = make_operator(rng)
        return op.apply(z), op, z

    data = [sample() for _ in range(d.n_train)]
    test = [sample() for _ in range(d.n_test)]
    init = _init(cfg, truth.channels, data[0][2].shape, data[0][1], 1)
    return truth, data, test, init


def _sequence_study(cfg: ExperimentConfig, name: str, make_operator, out_dir):
    truth, data, test, init = _sequence_setup(cfg, make_operator)
    params = _fit(cfg, data, init)
    rows = []
    for sweeps, method in ((params.n_sweeps, "csc"), (1, "feedforward")):
        p = with_sweeps(params, sweeps)
        pairs = [(_restore(p, y, op), z) for y, op, z in test]
        rows.append(ResultRow(name, method, float(sweeps), _mean_report(pairs, False)))
    sweeps = cfg.model.eval_sweeps or INJECTED_SWEEPS
    pairs = []
    for y, op, z in test[:N_INJECTED]:
        p = truth.solver_params(op, n_sweeps=sweeps)
        pairs.append((predict(p, infer(p, y, op, guard=False)), z))
    rows.append(ResultRow(name, "injected", float(sweeps), _mean_report(pairs, False)))
    _emit(out_dir, rows)
    return rows


def _orbit_factory(cfg: ExperimentConfig):
    d = cfg.data

    def orbit(rng):
        return build_traj_operator(make_orbit_cameras(d.frames, d.rate, d.fps,
                                                      phase=rng.uniform(0, 2 * np.pi)))
    return orbit


def _mask_factory(cfg: ExperimentConfig):
    d = cfg.data

    def mask(rng):
        return make_inpainting_mask((3, d.frames), d.drop_rate, seed=rng.integers(0, 2 ** 31))
    return mask


def run_traj_experiment(cfg: ExperimentConfig, out_dir=None) -> list:
    """Planted 3-D trajectories seen by an orbiting orthographic camera.

    Every sequence gets its own random starting angle. Reports the trained
    model at its training sweep count, the same parameters run for one
    sweep (a plain feed-forward pass on ``M^T y``), and the generating
    parameters injected into a long solve.
    """
    return _sequence_study(cfg, "traj", _orbit_factory(cfg), out_dir)


def run_planted_recovery(cfg: ExperimentConfig, out_dir=None) -> list:
    """Planted 1-D signals observed through random inpainting masks."""
    return _sequence_study(cfg, "planted", _mask_factory(cfg), out_dir)


def training_set(cfg: ExperimentConfig):
    """``(dataset, init)`` the experiment of ``cfg.kind`` trains its main model on.

    For the alpha sweep that is the model-aware network at alpha 0.5; for
    JPEG the first quality factor of the grid.
    """
    if cfg.kind == "alpha-sweep":
        crops, train_ops, _, _ = _alpha_setup(cfg)
        data = _alpha_dataset(crops, train_ops, TRAIN_ALPHA, False)
        return data, _init(cfg, 3, crops[0].shape, data[0][1], 2)
    if cfg.kind == "jpeg-ar":
        return _jpeg_training(cfg, int(cfg.grid[0]))
    factory = _orbit_factory(cfg) if cfg.kind == "traj" else _mask_factory(cfg)
    _, data, _, init = _sequence_setup(cfg, factory)
    return data, init


_RUNNERS = {
    "alpha-sweep": run_alpha_sweep,
    "jpeg-ar": run_jpeg_experiment,
    "traj": run_traj_experiment,
    "planted": run_planted_recovery,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list:
    return _RUNNERS[cfg.kind](cfg, out_dir)
