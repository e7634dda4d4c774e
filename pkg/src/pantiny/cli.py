"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or parse
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import classical, metrics
from .checkpoint import load_checkpoint
from .config import Config, load_domain_specs
from .data import RasterImage, export_pgm, load_raster, save_raster
from .data.dataset import Dataset, ManifestError, generate_domain, load_dataset, read_manifest
from .data.raster import RasterFormatError
from .data.synth import DEFAULT_DOMAINS
from .losses import LossWeights
from .model import ConfigError
from .ops import ShapeError
from .report import EmptyReportError, build_report
from .train import (NumericalError, bicubic_predictor, classical_predictor, cross_domain_matrix, evaluate,
                    evaluate_full_res, identity_oracle, loss_sweep, train_fresh, write_cross_csv,
                    write_sweep_csv)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
FUSE_METHODS = ("pantiny", *classical.METHODS)


class UsageError(Exception):
    pass


def _say(*parts) -> None:
    print(*parts, file=sys.stderr)


# -- shared helpers ------------------------------------------------------------------------------


def _load_config(args) -> Config:
    config = Config.load(args.config or (), args.set or ())
    _say("resolved config:")
    _say(config.snapshot().rstrip())
    return config


def _datasets(config: Config, split_key: str, limit_key: str) -> list[Dataset]:
    out = []
    for name in config["data.domains"]:
        ds = load_dataset(config.manifest(name, config[split_key]))
        limit = config[limit_key]
        out.append(ds.subset(slice(0, limit)) if limit else ds)
    return out


def _output_dir(config: Config) -> Path:
    out = Path(config["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(config.snapshot(), encoding="utf-8")
    return out


def _progress(every: int):
    def report(step, total, loss):
        if every and (step % every == 0 or step == total):
            _say(f"step {step}/{total} loss {loss:.6f}")

    return report


# -- commands -----------------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    specs = load_domain_specs(args.spec) if args.spec else list(DEFAULT_DOMAINS)
    for spec in specs:
        manifests = generate_domain(spec, args.seed, args.out)
        counts = ", ".join(f"{split} {len(read_manifest(path)['samples'])}" for split, path in manifests.items())
        print(f"{spec.name}: {counts}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    train_sets = _datasets(config, "data.train_split", "data.train_limit")
    eval_sets = _datasets(config, "data.eval_split", "data.eval_limit")
    out = _output_dir(config)
    result = train_fresh(config.model_config(), train_sets, config.train_config(), eval_sets,
                         checkpoint_path=out / "model.ptck", progress=_progress(config["output.log_every"]))
    result.log.write_csv(out / "train_log.csv")
    rows = [(ds.domain, "pantiny", result.reports[ds.domain]) for ds in eval_sets]
    metrics.write_report_csv(out / "eval.csv", rows)
    print((out / "eval.csv").read_text(), end="")
    _say(f"wrote {out / 'model.ptck'}, {out / 'train_log.csv'}, {out / 'eval.csv'} in {result.log.seconds:.1f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    sources = [x for x in (args.checkpoint, args.identity_oracle, args.baseline) if x]
    if len(sources) != 1:
        raise UsageError("give exactly one of --checkpoint, --identity-oracle or --baseline")
    if args.checkpoint:
        predictor, name = load_checkpoint(args.checkpoint), "pantiny"
    elif args.identity_oracle:
        if args.full_res:
            raise UsageError("--identity-oracle needs reference images; it cannot be used with --full-res")
        predictor, name = identity_oracle, "identity_oracle"
    elif args.baseline == "bicubic":
        predictor, name = None, "bicubic"
    else:
        predictor, name = classical_predictor(classical.METHODS[args.baseline]), args.baseline
    rows = []
    for manifest in args.data:
        ds = load_dataset(manifest)
        pred = predictor or bicubic_predictor(ds.ratio)
        if args.full_res:
            rows.append((ds.domain, name, evaluate_full_res(pred, ds)))
        else:
            if ds.hrms is None:
                raise UsageError(f"{manifest} has no reference images; use --full-res")
            rows.append((ds.domain, name, evaluate(pred, ds)))
    text = metrics.format_report_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_fuse(args) -> int:
    if args.method == "pantiny" and not args.checkpoint:
        raise UsageError("--method pantiny requires --checkpoint")
    ms = load_raster(args.ms).data
    pan = load_raster(args.pan).data
    if pan.shape[0] != 1:
        raise ShapeError(f"{args.pan}: PAN raster must have one band, got {pan.shape[0]}")
    if args.method == "pantiny":
        model = load_checkpoint(args.checkpoint)
        fused = model.predict(ms[None], pan[None])[0]
    else:
        fused = classical.METHODS[args.method](ms, pan)
    img = RasterImage(np.clip(fused, 0.0, 1.0).astype(np.float32))
    save_raster(img, args.out)
    print(f"wrote {args.out} ({img.bands}x{img.height}x{img.width})")
    if args.pgm:
        for p in export_pgm(img, args.pgm):
            print(f"wrote {p}")
    return EXIT_OK


def read_grid(path) -> list[tuple[float, float, float]]:
    """One ``l1, ssim, focal`` triple per line; ``#`` comments allowed."""
    grid = []
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            l1, ssim, focal = (float(x) for x in line.split(","))
        except ValueError:
            raise ConfigError(f"{path}:{n}: expected 'l1, ssim, focal', got {raw.strip()!r}") from None
        grid.append((l1, ssim, focal))
    return grid


def cmd_sweep(args) -> int:
    config = _load_config(args)
    base = config.loss_weights()
    grid = [LossWeights(**{**base.__dict__, "l1": a, "ssim": b, "focal": c}).validate()
            for a, b, c in read_grid(args.grid)]
    train_sets = _datasets(config, "data.train_split", "data.train_limit")
    test_sets = _datasets(config, "data.eval_split", "data.eval_limit")
    out = _output_dir(config)
    rows = loss_sweep(grid, config.model_config(), config.train_config(), train_sets, test_sets, jobs=args.jobs)
    target = Path(args.out) if args.out else out / "sweep.csv"
    write_sweep_csv(target, rows)
    print(target.read_text(), end="")
    return EXIT_OK


def cmd_cross_domain(args) -> int:
    config = _load_config(args)
    train_sets = _datasets(config, "data.train_split", "data.train_limit")
    test_sets = _datasets(config, "data.eval_split", "data.eval_limit")
    out = _output_dir(config)
    result = cross_domain_matrix(config.model_config(), config.train_config(), train_sets, test_sets,
                                 one_epoch=args.one_epoch)
    target = Path(args.out) if args.out else out / "cross_domain.csv"
    write_cross_csv(target, result)
    names = result.domains
    print("PSNR  train \\ test  " + "  ".join(f"{n:>8}" for n in names))
    for name, row in zip(names, result.psnr):
        print(f"      {name:<13} " + "  ".join(f"{v:8.3f}" for v in row))
    _say(f"wrote {target}")
    return EXIT_OK


def cmd_report(args) -> int:
    written, summary = build_report(args.inputs, args.out)
    print(summary, end="")
    _say(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------------


def _add_config_args(p) -> None:
    p.add_argument("--config", action="append", metavar="FILE",
                   help="config file; repeat to layer experiment files over a base")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key (applied last)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pantiny", description="Pan-sharpening toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic domain datasets and manifests")
    p.add_argument("--spec", help="domain spec file (default: the three built-in domains)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a config")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or baseline on manifests")
    p.add_argument("--checkpoint")
    p.add_argument("--identity-oracle", action="store_true", help="score the reference images themselves")
    p.add_argument("--baseline", choices=("bicubic", *classical.METHODS))
    p.add_argument("--data", nargs="+", required=True, metavar="MANIFEST")
    p.add_argument("--full-res", action="store_true", help="no-reference D_lambda / D_s / QNR")
    p.add_argument("--out", help="CSV path (the table is always printed)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="fuse one MS/PAN raster pair")
    p.add_argument("--method", required=True, choices=FUSE_METHODS)
    p.add_argument("--ms", required=True)
    p.add_argument("--pan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--pgm", metavar="STEM", help="also write 8-bit PGM files STEM_b<k>.pgm")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("sweep", help="train one model per loss-weight combination")
    p.add_argument("--grid", required=True)
    _add_config_args(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="CSV path (default: <output.dir>/sweep.csv)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cross-domain", help="train per-domain models and test on every domain")
    _add_config_args(p)
    p.add_argument("--one-epoch", action="store_true")
    p.add_argument("--out", help="CSV path (default: <output.dir>/cross_domain.csv)")
    p.set_defaults(func=cmd_cross_domain)

    p = sub.add_parser("report", help="render result CSVs into SVG charts and a ranking")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    try:
        return args.func(args)
    except (UsageError, ConfigError, EmptyReportError, ShapeError) as e:
        _say(f"pantiny: error: {e}")
        return EXIT_USAGE
    except NumericalError as e:
        _say(f"pantiny: numerical failure: {e}")
        return EXIT_NUMERIC
    except (metrics.DegenerateInputError, FloatingPointError) as e:
        _say(f"pantiny: numerical failure: {e}")
        return EXIT_NUMERIC
    except (RasterFormatError, ManifestError, OSError, UnicodeDecodeError, ValueError) as e:
        _say(f"pantiny: I/O or parse error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
