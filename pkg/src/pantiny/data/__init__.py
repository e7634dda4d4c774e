from .dataset import Batch, Dataset, ManifestError, all_in_one_sampler, generate_domain, load_dataset, read_manifest
from .raster import (
    BadMagicError,
    RasterFormatError,
    RasterImage,
    TruncatedFileError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    export_pgm,
    import_pgm,
    load_raster,
    save_raster,
)
from .synth import DEFAULT_DOMAINS, DomainSpec, default_domains, make_sample, simulate_pan, wald_degrade

__all__ = [
    "Batch", "Dataset", "ManifestError", "all_in_one_sampler", "generate_domain", "load_dataset", "read_manifest",
    "BadMagicError", "RasterFormatError", "RasterImage", "TruncatedFileError", "UnsupportedDtypeError",
    "UnsupportedVersionError", "export_pgm", "import_pgm", "load_raster", "save_raster",
    "DEFAULT_DOMAINS", "DomainSpec", "default_domains", "make_sample", "simulate_pan", "wald_degrade",
]
