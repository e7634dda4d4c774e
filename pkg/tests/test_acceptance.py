"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criteria 6-8 train at desk scale (see conftest) and are marked slow.
"""

import math
import time

import numpy as np
import pytest

import oracles
from conftest import DESK_STEPS, SEEDS, build_dataset
from pantiny import ops
from pantiny.checkpoint import load_checkpoint, save_checkpoint
from pantiny.classical import METHODS, brovey, gs, ihs, sfim
from pantiny.cli import main
from pantiny.config import dump_domain_specs
from pantiny.data import DEFAULT_DOMAINS, RasterImage, load_raster, save_raster
from pantiny.gradcheck import grad_check
from pantiny.losses import LossWeights, charbonnier, composite, composite_terms, focal_regression, ssim_loss
from pantiny.metrics import d_lambda, d_s, ergas, full_res_report, psnr, q_index, sam, ssim_metric
from pantiny.model import BUDGETS, PRESETS, ModelConfig, build, param_count
from pantiny.ops import upsample_array
from pantiny.tensor import Tensor, absolute, chunk, concat, exp, matmul, narrow, sqrt, tsum
from pantiny.train import TrainConfig, bicubic_predictor, classical_predictor, evaluate, train_fresh

GRAD_TOL = 2e-3
GRAD_EPS = 1e-3


def announce(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, f"criterion {n}: {detail}"


# -- 1. gradient correctness --------------------------------------------------------------------------


def _grad_cases(rng):
    def t(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, shape).astype(np.float32))

    def away_from_zero(*shape):
        # magnitudes in [0.2, 1] keep |x|, division and powers off their singular points
        mag = rng.uniform(0.2, 1.0, shape)
        return Tensor((mag * np.where(rng.random(shape) < 0.5, -1, 1)).astype(np.float32))

    def probed(f, out_shape):
        p = Tensor(rng.standard_normal(out_shape).astype(np.float32))
        return lambda *xs: (f(*xs) * p).sum()

    img = (2, 3, 6, 6)
    cases = {
        "add (broadcast)": (probed(lambda a, b: a + b, img), [t(*img), t(1, 3, 1, 1)]),
        "sub": (probed(lambda a, b: a - b, img), [t(*img), t(*img)]),
        "mul (broadcast)": (probed(lambda a, b: a * b, img), [t(*img), t(3, 1, 1)]),
        "div": (probed(lambda a, b: a / b, img), [t(*img), away_from_zero(*img)]),
        "power 2": (probed(lambda a: a ** 2, img), [t(*img)]),
        "power 1.5": (probed(lambda a: a ** 1.5, img), [t(*img, lo=0.2, hi=1.0)]),
        "sqrt": (probed(sqrt, img), [t(*img, lo=0.2, hi=1.0)]),
        "abs": (probed(absolute, img), [away_from_zero(*img)]),
        "exp": (probed(exp, img), [t(*img)]),
        "sum over axes": (probed(lambda a: tsum(a, axis=(2, 3), keepdims=True), (2, 3, 1, 1)), [t(*img)]),
        "mean": (lambda a: a.mean() * 3.0, [t(*img)]),
        "reshape + transpose": (probed(lambda a: a.reshape(2, 3, 36).transpose(0, 2, 1), (2, 36, 3)), [t(*img)]),
        "concat": (probed(lambda a, b: concat([a, b], axis=1), (2, 5, 6, 6)), [t(*img), t(2, 2, 6, 6)]),
        "narrow": (probed(lambda a: narrow(a, 1, 1, 3), (2, 2, 6, 6)), [t(*img)]),
        "chunk": (probed(lambda a: chunk(a, 3, axis=1)[1] * chunk(a, 3, axis=1)[2], (2, 1, 6, 6)), [t(*img)]),
        "matmul (batched)": (probed(matmul, (2, 3, 4, 5)), [t(2, 3, 4, 6), t(2, 3, 6, 5)]),
        "conv2d dense 3x3": (probed(lambda x, w, b: ops.conv2d(x, w, b, padding=1), (2, 4, 6, 6)),
                             [t(*img), t(4, 3, 3, 3), t(4)]),
        "conv2d pointwise": (probed(lambda x, w, b: ops.conv2d(x, w, b), (2, 4, 6, 6)), [t(*img), t(4, 3, 1, 1), t(4)]),
        "conv2d depthwise": (probed(lambda x, w, b: ops.dwconv(x, w, b), img), [t(*img), t(3, 1, 3, 3), t(3)]),
        "conv2d strided": (probed(lambda x, w: ops.conv2d(x, w, stride=2, padding=1), (2, 4, 3, 3)),
                           [t(*img), t(4, 3, 3, 3)]),
        "conv2d grouped": (probed(lambda x, w: ops.conv2d(x, w, padding=1, groups=2), (2, 4, 6, 6)),
                           [t(2, 4, 6, 6), t(4, 2, 3, 3)]),
        "layer norm": (probed(ops.layer_norm, img), [t(*img), t(3, lo=0.5, hi=1.5), t(3)]),
        "gelu": (probed(ops.gelu, img), [t(*img, lo=-3, hi=3)]),
        "softmax": (probed(ops.softmax, img), [t(*img, lo=-2, hi=2)]),
        "l2 normalize": (probed(ops.l2_normalize, img), [t(*img)]),
        "upsample bicubic": (probed(lambda x: ops.upsample(x, 4, "bicubic"), (2, 3, 24, 24)), [t(*img)]),
        "upsample bilinear": (probed(lambda x: ops.upsample(x, 2, "bilinear"), (2, 3, 12, 12)), [t(*img)]),
    }
    # losses: predictions kept 0.05-0.3 from the target, clear of the |d| kink
    G = rng.uniform(0.2, 0.8, (1, 2, 12, 12))
    O = G + rng.uniform(0.05, 0.3, G.shape) * np.where(rng.random(G.shape) < 0.5, -1, 1)
    target = Tensor(G.astype(np.float32))
    pred = lambda: Tensor(O.astype(np.float32))  # noqa: E731
    cases["charbonnier"] = (lambda o: charbonnier(o, target), [pred()])
    cases["focal r1=1"] = (lambda o: focal_regression(o, target, 1.0), [pred()])
    cases["focal r1=2"] = (lambda o: focal_regression(o, target, 2.0), [pred()])
    cases["ssim loss"] = (lambda o: ssim_loss(o, target), [pred()])
    cases["composite loss"] = (lambda o: composite(o, target, LossWeights()), [pred()])
    return cases


def test_criterion_1_gradient_correctness(capsys):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    errors = {}
    for name, (f, xs) in _grad_cases(rng).items():
        errors[name] = grad_check(f, xs, eps=GRAD_EPS)

    # full model + composite loss on a small random sample
    model = build(ModelConfig(channels=8, num_blocks=1))
    lrms = rng.random((1, 4, 8, 8)).astype(np.float32)
    pan = rng.random((1, 1, 32, 32)).astype(np.float32)
    out = model(lrms, pan).data
    sign = np.where(rng.random(out.shape) < 0.5, -1.0, 1.0)
    target = Tensor((out + sign * rng.uniform(0.05, 0.2, out.shape)).astype(np.float32))
    errors["model + composite"] = grad_check(lambda *ps: composite(model(lrms, pan), target), model.parameters(),
                                             eps=GRAD_EPS, samples=40, seed=2)
    elapsed = time.perf_counter() - start

    bad = {k: v for k, v in errors.items() if not v < GRAD_TOL}
    worst = max(errors, key=errors.get)
    ok = not bad and elapsed < 120
    detail = (f"{len(errors)} checks, worst rel err {errors[worst]:.2e} ({worst}) < {GRAD_TOL:g}, "
              f"{elapsed:.1f} s < 120 s")
    if bad:
        detail += f"; failing: {', '.join(f'{k}={v:.2e}' for k, v in bad.items())}"
    announce(capsys, 1, ok, detail)


# -- 2. parameter budgets ------------------------------------------------------------------------------


def test_criterion_2_parameter_budgets(capsys):
    pinned = {"small": 48_614, "big": 83_132}
    rows, ok = [], True
    for name in ("small", "big"):
        count = param_count(PRESETS[name])
        built = sum(p.size for p in build(PRESETS[name]).parameters())
        dev = count / BUDGETS[name] - 1
        ok &= abs(dev) <= 0.10 and count == pinned[name] and built == count
        rows.append(f"{name} {count} ({dev:+.2%} vs {BUDGETS[name]}, built {built})")
    announce(capsys, 2, ok, "; ".join(rows))


# -- 3. loss formula fidelity -----------------------------------------------------------------------


def test_criterion_3_loss_formulas(capsys):
    rng = np.random.default_rng(3)
    O = rng.random((2, 4, 16, 16))
    G = rng.random((2, 4, 16, 16))
    to = lambda a: Tensor(a, dtype=np.float64)  # noqa: E731

    charb_same = charbonnier(to(O), to(O)).item()
    focal_gap = abs(focal_regression(to(O), to(G), 1.0).item() - np.mean((O - G) ** 2))
    w = LossWeights(1.5, 4.0, 1.5)
    total, terms = composite_terms(to(O), to(G), w)
    parts = (w.l1 * charbonnier(to(O), to(G)).item() + w.ssim * ssim_loss(to(O), to(G)).item()
             + w.focal * focal_regression(to(O), to(G), w.r1).item())
    comp_gap = abs(total.item() - parts)

    ok = abs(charb_same - 1e-6) < 1e-15 and focal_gap < 1e-7 and comp_gap < 1e-7
    announce(capsys, 3, ok, f"charbonnier(O,O) = {charb_same:.3e}; |focal_r1=1 - MSE| = {focal_gap:.1e}; "
                            f"|composite - weighted sum| = {comp_gap:.1e}")


# -- 4. metric oracles -------------------------------------------------------------------------------------


def _metric_cases(n=50):
    rng = np.random.default_rng(2024)
    for _ in range(n):
        G = rng.random((4, 32, 32))
        if rng.random() < 0.7:
            O = np.clip(G + rng.normal(0, rng.uniform(0.01, 0.3), G.shape), 0, 1)
        else:
            O = rng.random(G.shape)
        M = rng.random((4, 32, 32))
        P, PL = rng.random((32, 32)), rng.random((32, 32))
        yield O.astype(np.float32), G.astype(np.float32), M.astype(np.float32), P, PL


def test_criterion_4_metric_oracles(capsys):
    worst = dict.fromkeys(["psnr", "ssim", "sam", "ergas", "q", "d_lambda", "d_s", "qnr"], 0.0)

    def track(key, a, b):
        worst[key] = max(worst[key], abs(a - b))

    for O, G, M, P, PL in _metric_cases():
        track("psnr", psnr(O, G), oracles.psnr(O, G))
        track("ssim", ssim_metric(O, G), oracles.ssim_mean(O, G))
        track("sam", sam(O, G), oracles.sam(O, G))
        track("ergas", ergas(O, G), oracles.ergas(O, G))
        for b in range(4):
            track("q", q_index(O[b], G[b]), oracles.q_index(O[b], G[b]))
        dl, ds = oracles.d_lambda(O, M), oracles.d_s(O, P, M, PL)
        track("d_lambda", d_lambda(O, M), dl)
        track("d_s", d_s(O, P, M, PL), ds)
        track("qnr", full_res_report(O, P, M, PL).qnr, (1 - dl) * (1 - ds))

    orth_o, orth_g = np.zeros((4, 3, 3)), np.zeros((4, 3, 3))
    orth_o[0], orth_g[1] = 1, 1
    anchors = {
        "psnr uniform 0.1": (psnr(np.full((4, 8, 8), 0.1), np.zeros((4, 8, 8))), 20.0),
        "sam orthogonal": (sam(orth_o, orth_g), math.pi / 2),
        "ergas closed form": (ergas(np.full((1, 8, 8), 0.6), np.full((1, 8, 8), 0.5), 0.25), 5.0),
    }
    anchor_gap = max(abs(v - ref) for v, ref in anchors.values())

    ok = worst["psnr"] < 1e-4 and all(v < 1e-5 for k, v in worst.items() if k != "psnr") and anchor_gap <= 1e-12
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    announce(capsys, 4, ok, f"50 cases, max |err|: {detail}; anchors within {anchor_gap:.1e}")


# -- 5. classical fusion identities -------------------------------------------------------------------------


def test_criterion_5_classical_identities(capsys):
    rng = np.random.default_rng(5)
    ms = rng.uniform(0.3, 0.7, (4, 8, 8))
    up = upsample_array(ms, 4, "bicubic")
    intensity = up.mean(axis=0)
    gaps = {
        "brovey (PAN = intensity)": np.abs(brovey(ms, intensity) - up).max(),
        "ihs (PAN = intensity)": np.abs(ihs(ms, intensity) - up).max(),
        "sfim (constant PAN)": np.abs(sfim(ms, np.full((32, 32), 0.6)) - up).max(),
        "gs (matched PAN)": np.abs(gs(ms, 0.5 * intensity + 0.1) - up).max(),
    }
    ok = all(v < 1e-6 for v in gaps.values())
    announce(capsys, 5, ok, "; ".join(f"{k} {v:.1e}" for k, v in gaps.items()))


# -- 6-8. desk-scale training ------------------------------------------------------------------------------

DOMAINS = [d.name for d in DEFAULT_DOMAINS]


def _median_metric(results, metric):
    """Per-domain median over seeds of one held-out metric."""
    return np.array([np.median([getattr(r.reports[d], metric) for r in results]) for d in DOMAINS])


@pytest.mark.slow
def test_criterion_6_all_in_one_training(capsys, runs, desk_data):
    results = [runs.all_in_one(s) for s in SEEDS]
    runtime = sum(r.log.seconds for r in results)
    ratios = [r.log.losses[-1] / r.log.losses[9] for r in results]
    ratio = float(np.median(ratios))
    model_psnr = _median_metric(results, "psnr")

    test_sets = desk_data[1]
    bicubic = np.array([evaluate(bicubic_predictor(ds.ratio), ds).psnr for ds in test_sets])
    classical = {name: np.array([evaluate(classical_predictor(fn), ds).psnr for ds in test_sets])
                 for name, fn in METHODS.items()}
    margin = model_psnr - bicubic
    wins = {name: int((model_psnr > p).sum()) for name, p in classical.items()}

    ok_a = ratio <= 0.5
    ok_b = bool((margin >= 1.0).all())
    ok_c = all(w >= 2 for w in wins.values())
    ok_t = runtime < 15 * 60
    detail = (f"(a) loss ratio step {DESK_STEPS}/step 10 median {ratio:.3f} <= 0.5 "
              f"[seeds {', '.join(f'{r:.3f}' for r in ratios)}]; "
              f"(b) PSNR - bicubic {', '.join(f'{d} {m:+.2f}' for d, m in zip(DOMAINS, margin))} dB >= 1.0; "
              f"(c) domains beating each classical method {wins} (need >= 2); "
              f"runtime {runtime / 60:.1f} min < 15")
    announce(capsys, 6, ok_a and ok_b and ok_c and ok_t, detail)


@pytest.mark.slow
def test_criterion_7_loss_ablation(capsys, runs):
    full = _median_metric([runs.all_in_one(s) for s in SEEDS], "ssim")
    l1_only = _median_metric([runs.all_in_one(s, LossWeights(1.0, 0.0, 0.0)) for s in SEEDS], "ssim")
    wins = int((full >= l1_only).sum())
    detail = ", ".join(f"{d} {a:.4f} vs {b:.4f}" for d, a, b in zip(DOMAINS, full, l1_only))
    announce(capsys, 7, wins >= 2, f"SSIM (1.5,4,1.5) vs L1-only: {detail}; {wins}/3 domains (need >= 2)")


@pytest.mark.slow
def test_criterion_8_cross_domain(capsys, runs):
    # matched compute: each separate model gets the steps all-in-one spends per domain on average
    steps = DESK_STEPS // len(DOMAINS)
    sep = np.array([_median_metric([runs.separate(s, i, steps) for s in SEEDS], "psnr") for i in range(len(DOMAINS))])
    all_in_one = _median_metric([runs.all_in_one(s) for s in SEEDS], "psnr")

    diag_is_row_max = all(sep[i, i] >= sep[i].max() for i in range(len(DOMAINS)))
    n = len(DOMAINS)
    sep_worst = max(sep[j, j] - sep[i, j] for i in range(n) for j in range(n) if i != j)
    all_worst = max(sep[j, j] - all_in_one[j] for j in range(n))
    matrix = " / ".join(" ".join(f"{v:.2f}" for v in row) for row in sep)
    detail = (f"separate PSNR matrix (rows train) [{matrix}], diagonal is row max: {diag_is_row_max}; "
              f"worst deficit all-in-one {all_worst:.2f} dB < separate {sep_worst:.2f} dB")
    announce(capsys, 8, diag_is_row_max and all_worst < sep_worst, detail)


# -- 9. determinism and formats ---------------------------------------------------------------------------


def test_criterion_9_determinism_and_formats(capsys, tmp_path):
    specs = [d.replace(patch=32, num_train=6, num_test=2, num_full=0) for d in DEFAULT_DOMAINS]
    train_sets = [build_dataset(d, "train", d.num_train) for d in specs]
    test_sets = [build_dataset(d, "test", d.num_test) for d in specs]
    cfg = TrainConfig(seed=4, batch=2, steps=6)
    mc = ModelConfig(channels=8, num_blocks=1)
    a = train_fresh(mc, train_sets, cfg, test_sets, checkpoint_path=tmp_path / "a.ptck")
    b = train_fresh(mc, train_sets, cfg, test_sets, checkpoint_path=tmp_path / "b.ptck")
    same_trace = a.log.losses == b.log.losses and a.reports == b.reports
    same_ckpt = (tmp_path / "a.ptck").read_bytes() == (tmp_path / "b.ptck").read_bytes()

    # PTCK: load and save again gives identical bytes
    save_checkpoint(load_checkpoint(tmp_path / "a.ptck"), tmp_path / "c.ptck")
    ptck_ok = (tmp_path / "a.ptck").read_bytes() == (tmp_path / "c.ptck").read_bytes()

    # PTRS: array and bytes both survive a round trip
    img = np.random.default_rng(9).random((4, 16, 16)).astype(np.float32)
    save_raster(RasterImage(img), tmp_path / "x.ptrs")
    again = load_raster(tmp_path / "x.ptrs")
    save_raster(again, tmp_path / "y.ptrs")
    ptrs_ok = (np.array_equal(again.data, img)
               and (tmp_path / "x.ptrs").read_bytes() == (tmp_path / "y.ptrs").read_bytes())

    # resolved-config snapshot re-runs to identical artifacts
    spec = tmp_path / "d.spec"
    spec.write_text(dump_domain_specs(specs))
    main(["gen-data", "--spec", str(spec), "--out", str(tmp_path / "data")])
    base = tmp_path / "base.cfg"
    base.write_text(f"data:\n  root: {tmp_path / 'data'}\ntrain:\n  steps: 3\n  batch: 2\nmodel:\n  channels: 8\n"
                    f"  num_blocks: 1\noutput:\n  dir: {tmp_path / 'r1'}\n  log_every: 0\n")
    code1 = main(["train", "--config", str(base)])
    snap = (tmp_path / "r1" / "config.resolved").read_text().replace(str(tmp_path / "r1"), str(tmp_path / "r2"))
    (tmp_path / "snap.cfg").write_text(snap)
    code2 = main(["train", "--config", str(tmp_path / "snap.cfg")])
    capsys.readouterr()
    snap_ok = code1 == code2 == 0 and all(
        (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()
        for f in ("model.ptck", "train_log.csv", "eval.csv"))

    checks = {"loss trace": same_trace, "checkpoint bytes": same_ckpt, "PTCK round trip": ptck_ok,
              "PTRS round trip": ptrs_ok, "snapshot rerun": snap_ok}
    announce(capsys, 9, all(checks.values()), ", ".join(f"{k} {'identical' if v else 'DIFFERS'}"
                                                        for k, v in checks.items()))
