"""Optimisation, training loops and evaluation harnesses."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .checkpoint import save_checkpoint
from .data.dataset import Dataset, all_in_one_sampler
from .data.synth import wald_degrade
from .losses import LossWeights, composite_terms
from .model import ConfigError, ModelConfig, PanTiny, build
from .ops import ShapeError, upsample_array
from .tensor import Parameter, Tensor, backward

PARADIGMS = ("all_in_one", "separate")


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


class MissingGradientError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-4
    betas: tuple = (0.9, 0.999)
    epochs: int = 1
    batch: int = 16
    lr_min: float = 0.0
    seed: int = 0
    paradigm: str = "all_in_one"
    loss: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 0
    steps: int | None = None  # when set, overrides epochs x steps_per_epoch

    def violations(self) -> list[str]:
        errs = []
        if not self.lr0 > self.lr_min >= 0:
            errs.append(f"need lr0 > lr_min >= 0 (got lr0={self.lr0}, lr_min={self.lr_min})")
        if self.batch < 1:
            errs.append(f"batch must be >= 1 (got {self.batch})")
        if self.epochs < 0:
            errs.append(f"epochs must be >= 0 (got {self.epochs})")
        if self.steps is not None and self.steps < 0:
            errs.append(f"steps must be >= 0 (got {self.steps})")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            errs.append(f"betas must be two values in [0, 1) (got {self.betas})")
        if self.paradigm not in PARADIGMS:
            errs.append(f"paradigm must be one of {PARADIGMS} (got {self.paradigm!r})")
        if self.eval_every < 0:
            errs.append("eval_every must be >= 0")
        errs += self.loss.violations()
        return errs

    def validate(self) -> "TrainConfig":
        errs = self.violations()
        if errs:
            raise ConfigError("invalid training config: " + "; ".join(errs))
        return self


# -- optimiser ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Parameter], betas=(0.9, 0.999), eps: float = 1e-8) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0, tuple(betas), eps)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update using each parameter's ``.grad``."""
    for p in params:
        if p.grad is None:
            raise MissingGradientError(f"parameter {p.name or '<unnamed>'} has no gradient")
    b1, b2 = state.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (lr * step).astype(p.data.dtype)


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float = 0.0) -> float:
    if total_steps <= 0:
        return lr0
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


# -- logging -------------------------------------------------------------------------------

LOG_COLUMNS = ("step", "lr", "loss_total", "loss_l1", "loss_ssim", "loss_focal")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # tuples in LOG_COLUMNS order
    evals: list = field(default_factory=list)  # (step, domain, ReducedResReport)
    seconds: float = 0.0

    def append(self, step, lr, total, terms) -> None:
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError(f"log steps must increase (got {step} after {self.rows[-1][0]})")
        self.rows.append((step, lr, total, terms["l1"], terms["ssim"], terms["focal"]))

    @property
    def losses(self) -> list[float]:
        return [r[2] for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([r[0], *(repr(float(x)) for x in r[1:])])


# -- prediction ------------------------------------------------------------------------------

# A predictor maps a batch (lrms, pan, hrms-or-None) to fused images.
Predictor = Callable[[np.ndarray, np.ndarray, "np.ndarray | None"], np.ndarray]


def as_predictor(model) -> Predictor:
    if isinstance(model, PanTiny):
        return lambda lrms, pan, hrms: model.predict(lrms, pan)
    return model


def bicubic_predictor(ratio: int = 4) -> Predictor:
    return lambda lrms, pan, hrms: upsample_array(lrms.astype(np.float64), ratio, "bicubic")


def identity_oracle(lrms, pan, hrms):
    if hrms is None:
        raise ValueError("the identity oracle needs reference images")
    return hrms


def classical_predictor(method: Callable) -> Predictor:
    def predict(lrms, pan, hrms):
        return np.stack([method(l, p) for l, p in zip(lrms, pan)])

    return predict


def _predict_all(predictor: Predictor, ds: Dataset, batch: int) -> np.ndarray:
    outs = []
    for i in range(0, len(ds), batch):
        sl = slice(i, i + batch)
        out = np.asarray(predictor(ds.lrms[sl], ds.pan[sl], None if ds.hrms is None else ds.hrms[sl]))
        expected = (len(ds.lrms[sl]), ds.lrms.shape[1], *ds.pan.shape[2:])
        if out.shape != expected:
            raise ShapeError(f"predictor returned {out.shape} for inputs needing {expected}")
        outs.append(out)
    return np.clip(np.concatenate(outs), 0.0, 1.0)


def evaluate(model, dataset: Dataset, batch: int = 8) -> metrics.ReducedResReport:
    """Mean PSNR/SSIM/SAM/ERGAS over a reference split; outputs are clamped to [0, 1]."""
    if dataset.hrms is None:
        raise ValueError(f"{dataset.domain}/{dataset.split} has no reference images")
    fused = _predict_all(as_predictor(model), dataset, batch)
    reports = [metrics.reduced_res_report(f, g, 1.0 / dataset.ratio) for f, g in zip(fused, dataset.hrms)]
    return metrics.mean_report(reports)


def evaluate_full_res(model, dataset: Dataset, batch: int = 1) -> metrics.FullResReport:
    """Mean D_lambda / D_s / QNR of fusing native-scale inputs; no reference is used."""
    inputs_only = Dataset(dataset.domain, dataset.split, dataset.ratio, dataset.lrms, dataset.pan)
    fused = _predict_all(as_predictor(model), inputs_only, batch)
    reports = []
    for f, m, p in zip(fused, dataset.lrms, dataset.pan):
        p_low = wald_degrade(p, dataset.ratio)
        reports.append(metrics.full_res_report(f, p, m, p_low))
    return metrics.mean_report(reports)


# -- training -------------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: PanTiny
    log: TrainLog
    reports: dict  # domain -> final ReducedResReport on its evaluation split


def total_steps(config: TrainConfig, num_samples: int) -> int:
    if config.steps is not None:
        return config.steps
    return config.epochs * math.ceil(num_samples / config.batch)


def train(
    model: PanTiny,
    datasets: Sequence[Dataset],
    config: TrainConfig,
    eval_sets: Sequence[Dataset] = (),
    checkpoint_path=None,
    progress: Callable[[int, int, float], None] | None = None,
) -> TrainResult:
    """Adam with a per-step cosine schedule over shuffled batches of the union of ``datasets``."""
    config.validate()
    datasets = list(datasets)
    if config.paradigm == "all_in_one" and len(datasets) < 2:
        raise ConfigError(f"all_in_one training needs at least 2 datasets, got {len(datasets)}")
    if config.paradigm == "separate" and len(datasets) != 1:
        raise ConfigError(f"separate training takes exactly 1 dataset, got {len(datasets)}")
    n = sum(len(d) for d in datasets)
    total = total_steps(config, n)
    params = model.parameters()
    state = AdamState.for_params(params, config.betas)
    log = TrainLog()
    started = time.perf_counter()

    step, epoch = 0, 0
    while step < total:
        for batch in all_in_one_sampler(datasets, config.batch, config.seed, epoch):
            if step >= total:
                break
            lr = cosine_lr(step, total, config.lr0, config.lr_min)
            out = model(Tensor(batch.lrms), Tensor(batch.pan))
            loss, terms = composite_terms(out, Tensor(batch.hrms), config.loss)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at step {step + 1} (lr {lr:.6g})")
            model.zero_grad()
            backward(loss)
            adam_step(params, state, lr)
            step += 1
            log.append(step, lr, value, terms)
            if progress:
                progress(step, total, value)
            if config.eval_every and step % config.eval_every == 0 and step < total:
                for ds in eval_sets:
                    log.evals.append((step, ds.domain, evaluate(model, ds)))
        epoch += 1

    reports = {}
    for ds in eval_sets:
        reports[ds.domain] = evaluate(model, ds)
        log.evals.append((step, ds.domain, reports[ds.domain]))
    log.seconds = time.perf_counter() - started
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return TrainResult(model, log, reports)


def train_fresh(model_config: ModelConfig, datasets, config: TrainConfig, eval_sets=(), **kw) -> TrainResult:
    """Build a model seeded by ``config.seed`` and train it."""
    return train(build(model_config, config.seed), datasets, config, eval_sets, **kw)


# -- harnesses --------------------------------------------------------------------------------

SWEEP_COLUMNS = ("lambda_l1", "lambda_ssim", "lambda_focal", "dataset", "psnr", "ssim", "sam", "ergas")


def _sweep_row(weights: LossWeights, model_config: ModelConfig, base: TrainConfig,
               train_sets: Sequence[Dataset], test_sets: Sequence[Dataset]) -> list[tuple]:
    cfg = TrainConfig(**{**base.__dict__, "loss": weights})
    result = train_fresh(model_config, train_sets, cfg, test_sets)
    return [(weights.l1, weights.ssim, weights.focal, ds.domain, *_report_values(result.reports[ds.domain]))
            for ds in test_sets]


def _report_values(r: metrics.ReducedResReport) -> tuple:
    return r.psnr, r.ssim, r.sam, r.ergas


def loss_sweep(grid: Sequence[LossWeights], model_config: ModelConfig, base: TrainConfig,
               train_sets: Sequence[Dataset], test_sets: Sequence[Dataset], jobs: int = 1) -> list[tuple]:
    """Train one model per weight combination (same seed for every row) and evaluate on each test set.

    With ``jobs > 1`` rows train in separate processes; output order always follows ``grid``.
    """
    for w in grid:
        w.validate()
    args = [(w, model_config, base, train_sets, test_sets) for w in grid]
    if jobs > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            chunks = list(pool.map(_sweep_row, *zip(*args)))
    else:
        chunks = [_sweep_row(*a) for a in args]
    return [row for chunk in chunks for row in chunk]


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([*(f"{x:g}" for x in r[:3]), r[3], *(f"{x:.4f}" for x in r[4:])])


@dataclass
class CrossDomainResult:
    domains: list
    psnr: np.ndarray  # [train, test]
    reports: dict  # (train, test) -> ReducedResReport

    def rows(self) -> list[tuple]:
        return [(a, b, *(getattr(self.reports[a, b], k) for k in ("psnr", "ssim", "sam", "ergas")))
                for a in self.domains for b in self.domains]


CROSS_COLUMNS = ("train_domain", "test_domain", "psnr", "ssim", "sam", "ergas")


def cross_domain_matrix(model_config: ModelConfig, base: TrainConfig, train_sets: Sequence[Dataset],
                        test_sets: Sequence[Dataset], one_epoch: bool = False) -> CrossDomainResult:
    """Train a separate model per source domain and evaluate each on every test domain."""
    names = [d.domain for d in train_sets]
    if [d.domain for d in test_sets] != names:
        raise ValueError(f"train domains {names} and test domains {[d.domain for d in test_sets]} must match")
    changes = {"paradigm": "separate"}
    if one_epoch:
        changes.update(epochs=1, steps=None)
    cfg = TrainConfig(**{**base.__dict__, **changes})
    psnr = np.zeros((len(names), len(names)))
    reports = {}
    for i, src in enumerate(train_sets):
        result = train_fresh(model_config, [src], cfg, test_sets)
        for j, name in enumerate(names):
            reports[src.domain, name] = result.reports[name]
            psnr[i, j] = result.reports[name].psnr
    return CrossDomainResult(names, psnr, reports)


def write_cross_csv(path, result: CrossDomainResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CROSS_COLUMNS)
        for r in result.rows():
            w.writerow([r[0], r[1], *(f"{x:.4f}" for x in r[2:])])
