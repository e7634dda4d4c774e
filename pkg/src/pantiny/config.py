"""Hierarchical ``key: value`` run configuration.

Text format: UTF-8, one ``key: value`` per line, nesting by two-space
indentation, ``#`` starts a comment.  A key with an empty value opens a
section.  Dotted keys (``train.lr0: 1e-3``) are shorthand for nesting.
Layers are merged in order (base file, experiment files, ``--set``) and
every key is checked against a fixed schema.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .data.synth import DomainSpec, default_domains
from .losses import LossWeights
from .model import FUSION_KINDS, PRESETS, REFINE_KINDS, UPSAMPLE_MODES, ConfigError, ModelConfig
from .train import PARADIGMS, TrainConfig

INDENT = 2


# -- text format -------------------------------------------------------------------------


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if ch in "\"'":
            quote = None if quote == ch else (quote or ch)
        elif ch == "#" and quote is None:
            return line[:i]
    return line


def _unquote(value: str) -> str:
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


def parse_text(text: str, source: str = "<text>") -> dict[str, str]:
    """Flatten a config document into ``{"section.key": "raw value"}``."""
    flat: dict[str, str] = {}
    frames: list[list[str]] = []  # key parts of each open section, one per indentation level
    expect_entries = False
    for n, raw in enumerate(text.splitlines(), 1):
        body = _strip_comment(raw).rstrip()
        if not body.strip():
            continue
        where = f"{source}:{n}"
        lead = body[: len(body) - len(body.lstrip())]
        if "\t" in lead:
            raise ConfigError(f"{where}: tabs are not allowed for indentation")
        if len(lead) % INDENT:
            raise ConfigError(f"{where}: indentation must be a multiple of {INDENT} spaces")
        level = len(lead) // INDENT
        if expect_entries and level != len(frames):
            raise ConfigError(f"{where}: section '{'.'.join(sum(frames, []))}' has no entries")
        if level > len(frames):
            raise ConfigError(f"{where}: unexpected indentation")
        del frames[level:]
        key, sep, value = body.strip().partition(":")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{where}: expected 'key: value', got {raw.strip()!r}")
        parts = key.split(".")
        if any(not p or " " in p for p in parts):
            raise ConfigError(f"{where}: malformed key {key!r}")
        value = value.strip()
        if value:
            full = ".".join(sum(frames, []) + parts)
            if full in flat:
                raise ConfigError(f"{where}: duplicate key '{full}'")
            if any(k.startswith(full + ".") or full.startswith(k + ".") for k in flat):
                raise ConfigError(f"{where}: '{full}' is used both as a section and a value")
            flat[full] = _unquote(value)
            expect_entries = False
        else:
            frames.append(parts)
            expect_entries = True
    if expect_entries:
        raise ConfigError(f"{source}: section '{'.'.join(sum(frames, []))}' has no entries")
    return flat


def read_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError(f"{path}: not UTF-8 text ({e})") from None
    return parse_text(text, str(path))


def parse_assignment(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not of the form key=value")
    return key.strip(), _unquote(value.strip())


def dump_text(flat: dict[str, str]) -> str:
    """Inverse of :func:`parse_text` for flat dotted keys."""
    lines: list[str] = []
    current: list[str] = []
    for key in flat:
        *path, leaf = key.split(".")
        common = 0
        while common < min(len(path), len(current)) and path[common] == current[common]:
            common += 1
        for depth in range(common, len(path)):
            lines.append(" " * (INDENT * depth) + f"{path[depth]}:")
        current = path
        lines.append(" " * (INDENT * len(path)) + f"{leaf}: {flat[key]}")
    return "\n".join(lines) + "\n"


# -- typed schema ------------------------------------------------------------------------------


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(options) -> Callable[[str], str]:
    def convert(s: str) -> str:
        if s not in options:
            raise ValueError(f"{s!r} is not one of {', '.join(options)}")
        return s

    return convert


def _optional(convert) -> Callable[[str], object]:
    return lambda s: None if s.lower() in ("none", "") else convert(s)


def _str_list(s: str) -> tuple:
    items = tuple(x.strip() for x in s.split(",") if x.strip())
    if not items:
        raise ValueError("empty list")
    return items


def _float_list(s: str) -> tuple:
    return tuple(float(x) for x in _str_list(s))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Key:
    convert: Callable[[str], object]
    default: object


_MODEL_OVERRIDES = {
    "channels": int,
    "num_blocks": int,
    "ffn_expansion": float,
    "attn_heads": int,
    "fusion_kind": _choice(FUSION_KINDS),
    "refine_kind": _choice(REFINE_KINDS),
    "global_residual": _bool,
    "fuse_before_body": _bool,
    "upsample_mode": _choice(UPSAMPLE_MODES),
}

_LOSS_DEFAULTS = LossWeights()
_TRAIN_DEFAULTS = TrainConfig()

SCHEMA: dict[str, Key] = {
    "data.root": Key(str, "data"),
    "data.domains": Key(_str_list, ("synthA", "synthB", "synthC")),
    "data.train_split": Key(str, "train"),
    "data.eval_split": Key(str, "test"),
    "data.train_limit": Key(int, 0),
    "data.eval_limit": Key(int, 0),
    "model.preset": Key(_choice((*PRESETS, "custom")), "small"),
    **{f"model.{k}": Key(_optional(conv), None) for k, conv in _MODEL_OVERRIDES.items()},
    "train.lr0": Key(float, _TRAIN_DEFAULTS.lr0),
    "train.beta1": Key(float, _TRAIN_DEFAULTS.betas[0]),
    "train.beta2": Key(float, _TRAIN_DEFAULTS.betas[1]),
    "train.epochs": Key(int, _TRAIN_DEFAULTS.epochs),
    "train.steps": Key(_optional(int), None),
    "train.batch": Key(int, _TRAIN_DEFAULTS.batch),
    "train.lr_min": Key(float, _TRAIN_DEFAULTS.lr_min),
    "train.seed": Key(int, 0),
    "train.paradigm": Key(_choice(PARADIGMS), "all_in_one"),
    "train.eval_every": Key(int, 0),
    **{f"loss.{f.name}": Key(type(getattr(_LOSS_DEFAULTS, f.name)), getattr(_LOSS_DEFAULTS, f.name))
       for f in dataclasses.fields(LossWeights)},
    "output.dir": Key(str, "runs/latest"),
    "output.log_every": Key(int, 100),
}


class Config:
    """Resolved, typed configuration; ``self[key]`` gives a typed value."""

    def __init__(self, values: dict[str, object]):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def resolve(cls, layers: list[tuple[str, dict[str, str]]]) -> "Config":
        """Merge ``(source, flat)`` layers in order; later layers win."""
        raw: dict[str, tuple[str, str]] = {}
        for source, flat in layers:
            for key, value in flat.items():
                if key not in SCHEMA:
                    raise ConfigError(f"{source}: unknown key '{key}'")
                raw[key] = (source, value)
        values = {}
        for key, spec in SCHEMA.items():
            if key in raw:
                source, text = raw[key]
                try:
                    values[key] = spec.convert(text)
                except ValueError as e:
                    raise ConfigError(f"{source}: bad value for '{key}': {e}") from None
            else:
                values[key] = spec.default
        config = cls(values)
        config.model_config()
        config.train_config()
        return config

    @classmethod
    def load(cls, files=(), overrides=()) -> "Config":
        layers = [(str(f), read_file(f)) for f in files]
        layers.append(("--set", dict(parse_assignment(o) for o in overrides)))
        return cls.resolve(layers)

    def flat(self) -> dict[str, str]:
        return {k: _fmt(v) for k, v in self.values.items()}

    def snapshot(self) -> str:
        """Every key, with defaults filled in; valid input for :meth:`load`."""
        return dump_text(self.flat())

    def model_config(self) -> ModelConfig:
        name = self["model.preset"]
        base = ModelConfig() if name == "custom" else PRESETS[name]
        changes = {k: self[f"model.{k}"] for k in _MODEL_OVERRIDES if self[f"model.{k}"] is not None}
        return base.replace(**changes).validate()

    def loss_weights(self) -> LossWeights:
        return LossWeights(**{f.name: self[f"loss.{f.name}"] for f in dataclasses.fields(LossWeights)})

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr0=self["train.lr0"],
            betas=(self["train.beta1"], self["train.beta2"]),
            epochs=self["train.epochs"],
            batch=self["train.batch"],
            lr_min=self["train.lr_min"],
            seed=self["train.seed"],
            paradigm=self["train.paradigm"],
            loss=self.loss_weights(),
            eval_every=self["train.eval_every"],
            steps=self["train.steps"],
        ).validate()

    def manifest(self, domain: str, split: str) -> Path:
        return Path(self["data.root"]) / domain / f"{split}.manifest"


# -- domain spec files ------------------------------------------------------------------------

_DOMAIN_FIELDS = {
    f.name: f for f in dataclasses.fields(DomainSpec) if f.name != "name"
}


def _domain_converter(name: str):
    default = getattr(DomainSpec("x"), name)
    if name == "blur_sigma":
        return _optional(float)
    if isinstance(default, tuple):
        return _float_list
    return type(default)


def parse_domain_specs(flat: dict[str, str], source: str = "<spec>") -> list[DomainSpec]:
    """``domains.<name>.<field>: value`` entries to validated specs.

    A domain that shares a name with a built-in one starts from that domain's
    settings; any other name starts from the generic defaults.
    """
    builtin = default_domains()
    grouped: dict[str, dict[str, str]] = {}
    for key, value in flat.items():
        parts = key.split(".")
        if len(parts) == 2 and parts[0] == "domains" and value.lower() == "default":
            grouped.setdefault(parts[1], {})
            continue
        if len(parts) != 3 or parts[0] != "domains":
            raise ConfigError(f"{source}: unknown key '{key}' (expected domains.<name>.<field>)")
        _, name, field = parts
        if field not in _DOMAIN_FIELDS:
            raise ConfigError(f"{source}: unknown key '{key}'")
        grouped.setdefault(name, {})[field] = value
    if not grouped:
        raise ConfigError(f"{source}: no domains defined")
    specs = []
    for name, fields in grouped.items():
        spec = builtin.get(name, DomainSpec(name))
        changes = {}
        for field, text in fields.items():
            try:
                changes[field] = _domain_converter(field)(text)
            except ValueError as e:
                raise ConfigError(f"{source}: bad value for 'domains.{name}.{field}': {e}") from None
        specs.append(spec.replace(**changes).validate())
    return specs


def dump_domain_specs(specs) -> str:
    flat = {}
    for spec in specs:
        for name in _DOMAIN_FIELDS:
            flat[f"domains.{spec.name}.{name}"] = _fmt(getattr(spec, name))
    return dump_text(flat)


def load_domain_specs(path) -> list[DomainSpec]:
    return parse_domain_specs(read_file(path), str(path))
