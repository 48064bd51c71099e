"""Decoder-only segment-token forecaster (the teacher).

A series of length N*S is cut into N tokens of S values. Each token is
embedded linearly, given a learned position embedding, passed through
pre-norm causal self-attention blocks, and mapped back to S values. Output
position i is the prediction of token i+1.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import seqdata
from .diffcore import (DTYPE, LayerNorm, Linear, Module, Tensor, concat, gelu, load_checkpoint,
                       matmul, mean, mul, no_grad, reshape, save_checkpoint, softmax, sub,
                       tensor, transpose)
from .diffcore.nn import init_weight
from .fitting import fit

PROJECTIONS = ("q_proj", "k_proj", "v_proj", "o_proj", "ff1", "ff2")
_MASK_VALUE = -1e9


@dataclass
class TimerConfig:
    segment: int = 24
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_tokens: int = 16
    temporal_embedding: bool = True

    def __post_init__(self):
        if self.segment < 1:
            raise ValueError("segment length must be >= 1")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")


class Block(Module):
    def __init__(self, cfg: TimerConfig, rng):
        super().__init__()
        d, f = cfg.d_model, cfg.d_ff
        self.n_heads = cfg.n_heads
        self.ln1 = self.child("ln1", LayerNorm(d))
        self.q_proj = self.child("q_proj", Linear(d, d, rng))
        self.k_proj = self.child("k_proj", Linear(d, d, rng))
        self.v_proj = self.child("v_proj", Linear(d, d, rng))
        self.o_proj = self.child("o_proj", Linear(d, d, rng, gain=0.5))
        self.ln2 = self.child("ln2", LayerNorm(d))
        self.ff1 = self.child("ff1", Linear(d, f, rng))
        self.ff2 = self.child("ff2", Linear(f, d, rng, gain=0.5))

    def __call__(self, x, mask):
        b, n, d = x.shape
        nh = self.n_heads
        dh = d // nh
        h = self.ln1(x)

        def heads(t):
            return transpose(reshape(t, (b, n, nh, dh)), (0, 2, 1, 3))

        q, k, v = heads(self.q_proj(h)), heads(self.k_proj(h)), heads(self.v_proj(h))
        scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        att = softmax(scores + Tensor(mask[:n, :n].astype(x.data.dtype)), axis=-1)
        o = reshape(transpose(matmul(att, v), (0, 2, 1, 3)), (b, n, d))
        x = x + self.o_proj(o)
        return x + self.ff2(gelu(self.ff1(self.ln2(x))))


class TimerModel(Module):
    def __init__(self, cfg: TimerConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg = cfg or TimerConfig()
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
        s, d = cfg.segment, cfg.d_model
        self.W_e = self.param("W_e", init_weight(rng, d, s))
        self.TE = self.param("TE", (rng.standard_normal((cfg.max_tokens, d)) * 0.1).astype(DTYPE),
                             trainable=cfg.temporal_embedding)
        self.blocks = [self.child(f"block{i}", Block(cfg, rng)) for i in range(cfg.n_layers)]
        self.ln_f = self.child("ln_f", LayerNorm(d))
        # stored D x S and applied as h @ W_d, i.e. the D -> S map
        self.W_d = self.param("W_d", (rng.standard_normal((d, s)) / np.sqrt(d)).astype(DTYPE))
        n = cfg.max_tokens
        self._mask = np.triu(np.full((n, n), _MASK_VALUE, dtype=np.float64), k=1)

    @property
    def step(self):
        return self.cfg.segment

    def projection(self, name: str) -> Linear:
        """Look up ``block{i}.{proj}`` by name."""
        head, _, proj = name.partition(".")
        if not head.startswith("block") or proj not in PROJECTIONS:
            raise KeyError(name)
        idx = int(head[5:])
        if idx >= len(self.blocks):
            raise KeyError(name)
        return getattr(self.blocks[idx], proj)

    def projection_names(self):
        return [f"block{i}.{p}" for i in range(len(self.blocks)) for p in PROJECTIONS]

    def forward(self, tokens) -> Tensor:
        tokens = tensor(tokens)
        if tokens.ndim == 2:
            tokens = reshape(tokens, (1,) + tokens.shape)
        n = tokens.shape[1]
        if n > self.cfg.max_tokens:
            raise ValueError(f"{n} tokens exceed max_tokens={self.cfg.max_tokens}")
        if tokens.shape[2] != self.cfg.segment:
            raise ValueError(f"token length {tokens.shape[2]} != segment {self.cfg.segment}")
        h = matmul(tokens, transpose(self.W_e, (1, 0)))
        if self.cfg.temporal_embedding:
            h = h + self.TE[:n]
        for blk in self.blocks:
            h = blk(h, self._mask)
        return matmul(self.ln_f(h), self.W_d)

    __call__ = forward

    def rollout(self, tokens, n_tokens: int) -> Tensor:
        """Differentiable autoregressive generation of ``n_tokens`` tokens, (B, n_tokens*S)."""
        tokens = tensor(tokens)
        b, n0, s = tokens.shape
        if n0 + n_tokens > self.cfg.max_tokens:
            raise ValueError(f"context {n0} + generated {n_tokens} tokens exceed "
                             f"max_tokens={self.cfg.max_tokens}")
        out = []
        for _ in range(n_tokens):
            nxt = self.forward(tokens)[:, -1:, :]
            out.append(nxt)
            tokens = concat([tokens, nxt], axis=1)
        if not out:
            return Tensor(np.zeros((b, 0), dtype=tokens.data.dtype))
        return reshape(concat(out, axis=1), (b, n_tokens * s))

    def forecast(self, context, n_tokens: int) -> np.ndarray:
        """Autoregressive forecast of ``n_tokens`` tokens from a 1-D or (B, NS) context."""
        ctx = np.asarray(context, dtype=DTYPE)
        single = ctx.ndim == 1
        if single:
            ctx = ctx[None]
        with no_grad():
            out = self.rollout(tokenize(ctx, self.cfg.segment), n_tokens).data
        return out[0] if single else out

    def predict(self, x, horizon: int = seqdata.HORIZON) -> np.ndarray:
        if horizon % self.cfg.segment:
            raise ValueError(f"horizon {horizon} not a multiple of segment {self.cfg.segment}")
        return self.forecast(x, horizon // self.cfg.segment)

    # checkpoints ------------------------------------------------------------
    def save(self, path, extra_meta=None):
        meta = {"model": "timer", **{f"timer.{k}": v for k, v in asdict(self.cfg).items()}}
        meta.update(extra_meta or {})
        state = {k: p.data for k, p in self.named_parameters().items()
                 if not k.startswith("lora.")}
        return save_checkpoint(path, state, meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        if meta.get("model") != "timer":
            raise ValueError(f"{path}: not a timer checkpoint")
        cfg = config_from_meta(meta)
        model = cls(cfg)
        model.load_state_dict(tensors)
        return model


def config_from_meta(meta) -> TimerConfig:
    kw = {}
    for f in TimerConfig.__dataclass_fields__.values():
        raw = meta.get(f"timer.{f.name}")
        if raw is None:
            continue
        kw[f.name] = raw == "True" if f.type in ("bool", bool) else int(raw)
    return TimerConfig(**kw)


def tokenize(x, segment: int) -> np.ndarray:
    """(..., N*S) -> (..., N, S); non-overlapping segments."""
    x = np.asarray(x)
    if x.shape[-1] % segment:
        raise ValueError(f"length {x.shape[-1]} is not divisible by segment {segment}")
    return x.reshape(x.shape[:-1] + (x.shape[-1] // segment, segment))


def detokenize(tokens) -> np.ndarray:
    tokens = np.asarray(tokens)
    return tokens.reshape(tokens.shape[:-2] + (tokens.shape[-2] * tokens.shape[-1],))


def generative_loss(model, tokens) -> Tensor:
    """Next-token MSE over positions 2..N, normalised by the supervised value count."""
    tokens = tensor(tokens)
    if tokens.ndim == 2:
        tokens = reshape(tokens, (1,) + tokens.shape)
    if tokens.shape[1] < 2:
        raise ValueError("generative loss needs at least 2 tokens")
    pred = model.forward(tokens)
    d = sub(pred[:, :-1, :], tokens[:, 1:, :])
    return mean(mul(d, d))


def pretraining_windows(corpora, segment: int, n_tokens: int, stride: int,
                        lookback: int = seqdata.LOOKBACK) -> np.ndarray:
    """Token windows of n_tokens*segment values, scaled by their first ``lookback`` values."""
    length = n_tokens * segment
    rows = []
    for corpus in corpora:
        for s in corpus.series:
            cap = s.capacity
            for start in range(0, len(cap) - length + 1, stride):
                w = cap[start:start + length]
                _, p = seqdata.minmax_scale(w[:lookback])
                rows.append(seqdata.apply_scale(w, p))
    if not rows:
        raise ValueError("empty pretraining corpus: no window fits")
    return tokenize(np.asarray(rows, dtype=DTYPE), segment)


def pretrain(model: TimerModel, corpora, *, epochs: int = 3, batch: int = 64, lr: float = 1e-3,
             seed: int = 0, stride: int = 24, n_tokens: int | None = None, log_every=None):
    """Generative next-token pretraining; returns the per-epoch loss history."""
    n_tokens = n_tokens or model.cfg.max_tokens
    data = pretraining_windows(corpora, model.cfg.segment, n_tokens, stride)
    model.train()

    def step(idx):
        loss = generative_loss(model, data[idx])
        return loss, {"loss": loss.data}

    history = fit(model.parameters(), len(data), epochs=epochs, batch=batch, lr=lr, seed=seed,
                  step_fn=step, log_every=log_every)
    model.eval()
    return history
