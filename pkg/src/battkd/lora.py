"""Low-rank adapters on named projections of a :class:`TimerModel`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import DTYPE, Module, dropout, linear, load_checkpoint, mul, save_checkpoint
from .timer import PROJECTIONS, TimerModel

DEFAULT_TARGETS = ("q_proj", "k_proj", "v_proj")


@dataclass
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    dropout: float = 0.05
    targets: tuple[str, ...] = DEFAULT_TARGETS
    init_std: float = 0.02

    def __post_init__(self):
        self.targets = tuple(self.targets)
        if self.rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("LoRA dropout must be in [0, 1)")

    @property
    def scale(self):
        return self.alpha / self.rank


class LoraAdapter:
    """Computes (alpha/r) * B (A dropout(x)) for one projection."""

    def __init__(self, owner, A, B, cfg: LoraConfig, rng, model):
        self.owner = owner
        self.A, self.B = A, B
        self.cfg = cfg
        self.rng = rng
        self.model = model

    def __call__(self, x):
        x = dropout(x, self.cfg.dropout, self.rng, training=self.model.training)
        return mul(linear(linear(x, self.A), self.B), float(self.cfg.scale))


class LoraSet(Module):
    """Parameter container registered on the model as ``lora``."""


def _full_targets(model: TimerModel, targets):
    names = []
    for t in targets:
        if t.rpartition(".")[2] not in PROJECTIONS:
            raise KeyError(t)
        if "." in t:
            model.projection(t)  # raises KeyError for unknown names
            names.append(t)
        else:
            names.extend(f"block{i}.{t}" for i in range(len(model.blocks)))
    return names


def inject(model: TimerModel, cfg: LoraConfig | None = None, seed: int = 0) -> TimerModel:
    """Freeze the backbone and attach adapters to every target projection, in place.

    Targets may be bare projection names (every block) or ``block{i}.{proj}``.
    """
    cfg = cfg or LoraConfig()
    if getattr(model, "lora", None) is not None:
        raise ValueError("model already carries LoRA adapters")
    try:
        names = _full_targets(model, cfg.targets)
    except KeyError as exc:
        raise ValueError(f"unknown LoRA target {exc}") from None
    for p in model.parameters():
        p.trainable = False
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 23]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 29]))
    holder = LoraSet()
    for name in names:
        proj = model.projection(name)
        A = holder.param(f"{name}.A",
                         (rng.standard_normal((cfg.rank, proj.d_in)) * cfg.init_std).astype(DTYPE))
        B = holder.param(f"{name}.B", np.zeros((proj.d_out, cfg.rank), DTYPE))
        proj.adapter = LoraAdapter(name, A, B, cfg, drop_rng, model)
    model.child("lora", holder)
    model.lora = holder
    model.lora_cfg = cfg
    return model


def adapters(model) -> dict[str, tuple]:
    holder = getattr(model, "lora", None)
    if holder is None:
        return {}
    out = {}
    for name in model.projection_names():
        ad = model.projection(name).adapter
        if ad is not None:
            out[name] = (ad.A, ad.B)
    return out


def merge(model: TimerModel) -> TimerModel:
    """Fold adapters into base weights and drop them; the model becomes plain again."""
    if getattr(model, "lora", None) is None:
        raise ValueError("no LoRA adapters to merge (already merged or never injected)")
    cfg = model.lora_cfg
    for name, (A, B) in adapters(model).items():
        proj = model.projection(name)
        delta = (B.data.astype(np.float64) @ A.data.astype(np.float64)) * cfg.scale
        proj.weight.data = (proj.weight.data + delta).astype(DTYPE)
        proj.adapter = None
    del model._children["lora"]
    model.lora = None
    for p in model.parameters():
        p.trainable = True
    model.TE.trainable = model.cfg.temporal_embedding
    return model


def trainable_fraction(model) -> float:
    named = model.named_parameters()
    total = sum(p.data.size for p in named.values())
    train = sum(p.data.size for p in named.values() if p.trainable)
    return train / total


def save_adapters(model, path, extra_meta=None):
    holder = getattr(model, "lora", None)
    if holder is None:
        raise ValueError("model has no adapters to save")
    cfg = model.lora_cfg
    tensors = {f"lora.{k}": p.data for k, p in holder.named_parameters().items()}
    meta = {"model": "lora", "lora.rank": cfg.rank, "lora.alpha": cfg.alpha,
            "lora.dropout": cfg.dropout, "lora.targets": ",".join(cfg.targets)}
    meta.update(extra_meta or {})
    return save_checkpoint(path, tensors, meta)


def load_adapters(model: TimerModel, path, seed: int = 0) -> TimerModel:
    tensors, meta = load_checkpoint(path)
    if meta.get("model") != "lora":
        raise ValueError(f"{path}: not an adapter checkpoint")
    cfg = LoraConfig(rank=int(meta["lora.rank"]), alpha=float(meta["lora.alpha"]),
                     dropout=float(meta["lora.dropout"]),
                     targets=tuple(meta["lora.targets"].split(",")))
    inject(model, cfg, seed=seed)
    model.load_state_dict({k: v for k, v in tensors.items()}, strict=False)
    missing = set(model.lora.named_parameters()) - {k[5:] for k in tensors}
    if missing:
        raise ValueError(f"{path}: adapter tensors missing for {sorted(missing)}")
    return model
