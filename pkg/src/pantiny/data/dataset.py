"""On-disk datasets: generation, manifests, loading and the multi-domain sampler."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from .raster import RasterImage, load_raster, save_raster
from .synth import SPLITS, DomainSpec, make_sample

MANIFEST_VERSION = 1


class ManifestError(ValueError):
    """Malformed manifest, or one that references missing/unparseable files."""


@dataclass
class Dataset:
    """One split of one domain, held in memory as stacked float32 arrays."""

    domain: str
    split: str
    ratio: int
    lrms: np.ndarray  # (N, 4, h, w)
    pan: np.ndarray  # (N, 1, H, W)
    hrms: np.ndarray | None = None  # (N, 4, H, W); None for the full-resolution split

    def __len__(self) -> int:
        return len(self.lrms)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.domain, self.split, self.ratio, self.lrms[idx], self.pan[idx],
                       None if self.hrms is None else self.hrms[idx])


def _format_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _spec_lines(spec: DomainSpec) -> list[str]:
    return [f"spec.{f.name} = {_format_value(getattr(spec, f.name))}" for f in fields(spec) if f.name != "name"]


def write_manifest(path, spec: DomainSpec, split: str, seed: int, samples: list[tuple[str, ...]]) -> None:
    lines = [
        f"version = {MANIFEST_VERSION}",
        f"domain = {spec.name}",
        f"split = {split}",
        f"seed = {seed}",
        *_spec_lines(spec),
    ]
    lines += ["sample = " + ",".join(paths) for paths in samples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    """Parse a manifest into header keys plus a ``samples`` list of path tuples (as written)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ManifestError(f"{path}: not UTF-8 text ({e})") from None
    header: dict = {}
    samples = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ManifestError(f"{path}:{n}: expected 'key = value', got {raw!r}")
        key, value = key.strip(), value.strip()
        if key == "sample":
            samples.append(tuple(p.strip() for p in value.split(",")))
        else:
            header[key] = value
    for required in ("version", "domain", "split", "spec.ratio"):
        if required not in header:
            raise ManifestError(f"{path}: missing '{required}'")
    if int(header["version"]) != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {header['version']}")
    width = 2 if header["split"] == "full" else 3
    for s in samples:
        if len(s) != width:
            raise ManifestError(f"{path}: sample line has {len(s)} paths, expected {width}")
    header["samples"] = samples
    return header


def generate_domain(spec: DomainSpec, seed: int, out_dir, splits=SPLITS) -> dict[str, Path]:
    """Write every split of one domain under ``out_dir/<name>/``; returns split -> manifest path."""
    spec.validate()
    root = Path(out_dir) / spec.name
    manifests = {}
    counts = {"train": spec.num_train, "test": spec.num_test, "full": spec.num_full}
    for split in splits:
        (root / split).mkdir(parents=True, exist_ok=True)
        entries = []
        for i in range(counts[split]):
            sample = make_sample(spec, seed, split, i)
            names = []
            for kind in ("lrms", "pan", "hrms"):
                if kind in sample:
                    rel = f"{split}/{i:04d}_{kind}.ptrs"
                    save_raster(RasterImage(sample[kind]), root / rel)
                    names.append(rel)
            entries.append(tuple(names))
        manifests[split] = root / f"{split}.manifest"
        write_manifest(manifests[split], spec, split, seed, entries)
    return manifests


def load_dataset(manifest_path) -> Dataset:
    """Load every sample listed in a manifest; paths resolve relative to the manifest's directory."""
    manifest_path = Path(manifest_path)
    info = read_manifest(manifest_path)
    base = manifest_path.parent
    cols: dict[str, list] = {"lrms": [], "pan": [], "hrms": []}
    kinds = ("lrms", "pan") if info["split"] == "full" else ("lrms", "pan", "hrms")
    for paths in info["samples"]:
        for kind, rel in zip(kinds, paths):
            p = base / rel
            if not p.exists():
                raise ManifestError(f"{manifest_path}: referenced file {rel} does not exist")
            cols[kind].append(load_raster(p).data)
    if not info["samples"]:
        raise ManifestError(f"{manifest_path}: no samples listed")
    stack = {k: np.stack(v) for k, v in cols.items() if v}
    return Dataset(info["domain"], info["split"], int(info["spec.ratio"]),
                   stack["lrms"], stack["pan"], stack.get("hrms"))


@dataclass(frozen=True)
class Batch:
    lrms: np.ndarray
    pan: np.ndarray
    hrms: np.ndarray
    domains: tuple  # domain name of every sample


def all_in_one_sampler(datasets: list[Dataset], batch: int, seed: int, epoch: int = 0) -> Iterator[Batch]:
    """One epoch over the shuffled union of ``datasets``; the last batch may be short."""
    if not datasets:
        raise ValueError("sampler needs at least one dataset")
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    ratios = {d.ratio for d in datasets}
    bands = {d.lrms.shape[1] for d in datasets}
    if len(ratios) != 1 or len(bands) != 1:
        raise ValueError(f"datasets disagree on ratio {sorted(ratios)} or band count {sorted(bands)}")
    if any(d.hrms is None for d in datasets):
        raise ValueError("training needs reference images; the full-resolution split has none")
    index = [(k, i) for k, d in enumerate(datasets) for i in range(len(d))]
    order = np.random.default_rng([seed, epoch]).permutation(len(index))
    for start in range(0, len(order), batch):
        picks = [index[j] for j in order[start:start + batch]]
        yield Batch(
            np.stack([datasets[k].lrms[i] for k, i in picks]),
            np.stack([datasets[k].pan[i] for k, i in picks]),
            np.stack([datasets[k].hrms[i] for k, i in picks]),
            tuple(datasets[k].domain for k, _ in picks),
        )
