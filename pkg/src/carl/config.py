"""Run configuration: a YAML tree validated up front, with ``key.path=value`` overrides."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .model import ModelConfig, variant_config
from .trainer import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Strict):
    corpus: str | None = None
    name: str = ""


class ModelSection(_Strict):
    latent: int = Field(15, ge=1)
    filters: int = Field(50, ge=1)
    window: int = Field(3, ge=1)
    emb_dim: int = Field(300, ge=1)
    fm_factors: int = Field(50, ge=1)
    fusion_eps: float = Field(1e-8, ge=0)
    factor_init_scale: float = Field(0.05, gt=0)
    reg_embeddings: bool = False
    clamp_predictions: bool = False


class TrainSection(_Strict):
    batch_size: int = Field(100, ge=1)
    lr: float = Field(0.001, gt=0)
    reg: float = Field(0.001, ge=0)
    dropout: float = Field(0.2, ge=0, lt=1)
    epochs: int = Field(60, ge=1)
    eval_every: int = Field(1, ge=1)
    patience: int = Field(10, ge=0)
    select: Literal["best-val", "final"] = "best-val"
    rho: float = Field(0.9, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    eval_batch_size: int = Field(256, ge=1)


class RunConfig(_Strict):
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    variant: str = "CARL"
    variants: list[str] = ["CARL", "Review", "Review-att", "Rating"]
    reference: str | None = None
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    out: str = "runs/default"

    @field_validator("variant")
    @classmethod
    def _known_variant(cls, v):
        variant_config(v)
        return v

    @field_validator("variants")
    @classmethod
    def _known_variants(cls, vs):
        if not vs:
            raise ValueError("at least one variant is required")
        for v in vs:
            variant_config(v)
        return vs

    def model_config_for(self, variant=None):
        return variant_config(variant or self.variant, ModelConfig(**self.model.model_dump()))

    def train_config(self, seed=None):
        seed = self.seeds[0] if seed is None else seed
        return TrainConfig(seed=seed, **self.train.model_dump())


def _set_path(tree, dotted, value):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        child = node.get(k)
        if child is None:
            child = node[k] = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"override {dotted!r}: {k!r} is not a section")
        node = child
    node[keys[-1]] = value


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw) if raw.strip() else None


def load_config(path=None, overrides=(), base=None):
    """Merge a YAML file (or a manifest's ``config``) with overrides and validate.

    All violations are reported together in a single :class:`ConfigError`.
    """
    tree = dict(base or {})
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        loaded = yaml.safe_load(p.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        if "config" in loaded and "command" in loaded:  # a run manifest
            loaded = loaded["config"]
        tree.update(loaded)
    for item in overrides:
        if isinstance(item, str):
            item = parse_override(item)
        key, value = item
        _set_path(tree, key, value)
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        problems = []
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"]) or "<root>"
            problems.append(f"{loc}: {err['msg']}")
        raise ConfigError(f"{len(problems)} configuration error(s):\n  " + "\n  ".join(problems)) from None


def file_digest(path):
    """sha256 over a file, or over every file (sorted by relative name) in a directory."""
    p = Path(path)
    h = hashlib.sha256()
    files = [p] if p.is_file() else sorted(q for q in p.rglob("*") if q.is_file())
    for q in files:
        if p.is_dir():
            h.update(str(q.relative_to(p)).encode() + b"\0")
        with open(q, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()
