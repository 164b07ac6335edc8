"""Model and run configuration, stored as flat ``key = value`` INI sections."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .rng import resolve_seed

VARIANTS = {
    # name: (alpha, k, language)
    "v-cond": (0.0, 1, True),
    "v-dual": (0.0, 2, True),
    "v-gen": (0.5, 2, True),
    "nolang": (0.0, 1, False),
}


@dataclass
class ModelConfig:
    variant: str = "v-cond"
    alpha: float = 0.0
    k: int = 1
    gamma: float = 0.75
    d: int = 64
    depth: int = 2
    heads: int = 2
    p: int = 8
    height: int = 32
    width: int = 32
    channels: int = 3
    max_len: int = 20
    vocab_size: int = 64
    d_lang: int = 768
    d_dec: int = 32
    depth_dec: int = 2
    heads_dec: int = 4
    mlp_ratio: int = 4
    final_norm: bool = True
    gen_weight: float = 1.0
    seed: int = 0

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        alpha, k, _ = VARIANTS[variant]
        cfg = cls(variant=variant, alpha=alpha, k=k, **overrides)
        cfg.validate()
        return cfg

    @classmethod
    def vit_small(cls, variant: str = "v-cond", **overrides) -> "ModelConfig":
        base = dict(d=384, depth=12, heads=6, p=16, height=224, width=224, max_len=20,
                    d_dec=192, depth_dec=4, heads_dec=4)
        base.update(overrides)
        return cls.for_variant(variant, **base)

    @property
    def uses_language(self) -> bool:
        return VARIANTS[self.variant][2]

    @property
    def grid(self) -> tuple:
        return self.height // self.p, self.width // self.p

    @property
    def num_regions(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.p * self.p * self.channels

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        alpha, k, _ = VARIANTS[self.variant]
        if self.alpha != alpha or self.k != k:
            raise ConfigError(f"variant {self.variant} requires alpha={alpha}, k={k}; "
                              f"got alpha={self.alpha}, k={self.k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.p <= 0 or self.height % self.p or self.width % self.p:
            raise ConfigError(f"patch size p={self.p} must divide H={self.height} and W={self.width}")
        for width, heads, what in ((self.d, self.heads, "encoder"), (self.d_dec, self.heads_dec, "decoder")):
            if width % heads:
                raise ConfigError(f"{what} width {width} not divisible by {heads} heads")
            if width % 4:
                raise ConfigError(f"{what} width {width} must be divisible by 4 for 2-D position encodings")
        if self.max_len < 3:
            raise ConfigError("max_len must be >= 3")
        if self.vocab_size < 6:
            raise ConfigError("vocab_size must leave room for the special tokens")

    def replace(self, **changes) -> "ModelConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 8
    frames_per_clip: int = 5
    max_steps: int = 0  # 0 = epochs * steps_per_epoch
    lr: float = 0.0  # peak lr; 0 derives it as base_lr * batch_size / 256
    base_lr: float = 1.5e-4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.05
    warmup_frac: float = 0.05
    clip_norm: float = 1.0
    checkpoint_every: int = 0  # steps; 0 = only the final checkpoint

    @property
    def peak_lr(self) -> float:
        return self.lr if self.lr > 0 else self.base_lr * self.batch_size / 256.0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: str = ""
    output: str = "run"
    metrics: str = ""  # defaults to <output>/metrics.txt

    @property
    def metrics_path(self) -> Path:
        return Path(self.metrics) if self.metrics else Path(self.output) / "metrics.txt"


def _coerce(kind, raw: str, key: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _fill(cls, section, where: str):
    kinds = {f.name: f.type for f in fields(cls)}
    types = {"int": int, "float": float, "bool": bool, "str": str}
    values = {}
    for key, raw in section.items():
        if key not in kinds:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        values[key] = _coerce(types.get(kinds[key], str), raw, f"{where}.{key}")
    return values


def model_config_from_section(section) -> ModelConfig:
    values = _fill(ModelConfig, section, "model")
    variant = values.pop("variant", "v-cond")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    alpha, k, _ = VARIANTS[variant]
    values.setdefault("alpha", alpha)
    values.setdefault("k", k)
    cfg = ModelConfig(variant=variant, **values)
    cfg.validate()
    return cfg


def parse_run_config(text: str, base_dir: Optional[Path] = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = set(parser.sections()) - {"model", "train", "paths"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    model = model_config_from_section(parser["model"] if parser.has_section("model") else {})
    train = TrainConfig(**_fill(TrainConfig, parser["train"] if parser.has_section("train") else {}, "train"))
    paths = _fill(RunConfig, parser["paths"], "paths") if parser.has_section("paths") else {}
    paths = {k: v for k, v in paths.items() if k in ("corpus", "output", "metrics")}
    run = RunConfig(model=model, train=train, **paths)
    if base_dir is not None:
        for key in ("corpus", "output", "metrics"):
            val = getattr(run, key)
            if val and not Path(val).is_absolute():
                setattr(run, key, str(Path(base_dir) / val))
    run.model.seed = resolve_seed(run.model.seed)
    return run


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_run_config(path.read_text(), base_dir=path.parent)


def _section_text(name: str, obj) -> str:
    lines = [f"[{name}]"]
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines)


def model_config_text(cfg: ModelConfig) -> str:
    return _section_text("model", cfg) + "\n"


def run_config_text(run: RunConfig) -> str:
    parts = [_section_text("model", run.model), _section_text("train", run.train),
             "[paths]\n" + f"corpus = {run.corpus}\noutput = {run.output}\nmetrics = {run.metrics}"]
    return "\n\n".join(parts) + "\n"


def parse_model_config(text: str) -> ModelConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_file(io.StringIO(text))
    return model_config_from_section(parser["model"])
