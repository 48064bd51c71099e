"""Compact 96 -> 96 student forecasters.

Three families stand in for the usual long-horizon baselines:

* ``LinearDecomp`` -- moving-average trend/remainder split with one affine map
  per branch (DLinear style).
* ``PatchAttn`` -- patch embedding, one self-attention block, flatten head
  (PatchTST style).
* ``SegRec`` -- segment embedding fed through a GRU cell, affine head from the
  last state (SegRNN style).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import seqdata
from .diffcore import (DTYPE, LayerNorm, Linear, Module, Tensor, add, linear, load_checkpoint,
                       matmul, mse, mul, no_grad, relu, reshape, save_checkpoint, sigmoid, softmax,
                       sub, tanh, tensor, transpose)
from .fitting import fit

KINDS = ("LinearDecomp", "PatchAttn", "SegRec")


@dataclass
class ExpertConfig:
    kind: str = "LinearDecomp"
    lookback: int = seqdata.LOOKBACK
    horizon: int = seqdata.HORIZON
    ma_window: int = 25
    patch_len: int = 16
    patch_d_model: int = 32
    patch_heads: int = 4
    patch_ff: int = 64
    seg_len: int = 12
    seg_hidden: int = 48
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown expert kind {self.kind!r}; choose from {KINDS}")


def moving_average_matrix(n: int, window: int) -> np.ndarray:
    """Centered moving average with edge replication, as an (n, n) matrix."""
    half = (window - 1) // 2
    m = np.zeros((n, n))
    for t in range(n):
        for j in range(t - half, t - half + window):
            m[t, min(max(j, 0), n - 1)] += 1.0 / window
    return m.astype(DTYPE)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class Expert(Module):
    kind = ""

    def __init__(self, cfg: ExpertConfig):
        super().__init__()
        self.cfg = cfg

    @property
    def step(self):
        return self.cfg.horizon

    def _check(self, x):
        x = tensor(x)
        if x.ndim == 1:
            x = reshape(x, (1, x.shape[0]))
        if x.shape[-1] != self.cfg.lookback:
            raise ValueError(f"{self.kind}: expected input length {self.cfg.lookback}, "
                             f"got {x.shape[-1]}")
        return x

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        with no_grad():
            out = self.forward(x).data
        return out[0] if x.ndim == 1 else out

    def __call__(self, x):
        return self.forward(x)

    def save(self, path, extra_meta=None):
        meta = {"model": "expert", **{f"expert.{k}": v for k, v in asdict(self.cfg).items()}}
        meta.update(extra_meta or {})
        return save_checkpoint(path, self.state_dict(), meta)


class LinearDecomp(Expert):
    kind = "LinearDecomp"

    def __init__(self, cfg, rng):
        super().__init__(cfg)
        L, H = cfg.lookback, cfg.horizon
        self.M = moving_average_matrix(L, cfg.ma_window)
        self.W_trend = self.param("trend.weight", _uniform(rng, (H, L), L))
        self.W_rem = self.param("remainder.weight", _uniform(rng, (H, L), L))
        self.b_trend = self.param("trend.bias", np.zeros(H, DTYPE)) if cfg.bias else None
        self.b_rem = self.param("remainder.bias", np.zeros(H, DTYPE)) if cfg.bias else None

    def forward(self, x):
        x = self._check(x)
        trend = matmul(x, Tensor(self.M.T.astype(x.data.dtype)))
        rem = sub(x, trend)
        return add(linear(trend, self.W_trend, self.b_trend), linear(rem, self.W_rem, self.b_rem))


class PatchAttn(Expert):
    kind = "PatchAttn"

    def __init__(self, cfg, rng):
        super().__init__(cfg)
        if cfg.lookback % cfg.patch_len:
            raise ValueError("lookback must be a multiple of patch_len")
        if cfg.patch_d_model % cfg.patch_heads:
            raise ValueError("patch_d_model must be divisible by patch_heads")
        self.n_patches = cfg.lookback // cfg.patch_len
        d = cfg.patch_d_model
        self.embed = self.child("embed", Linear(cfg.patch_len, d, rng))
        self.pos = self.param("pos", (rng.standard_normal((self.n_patches, d)) * 0.1).astype(DTYPE))
        self.ln1 = self.child("ln1", LayerNorm(d))
        self.q_proj = self.child("q_proj", Linear(d, d, rng))
        self.k_proj = self.child("k_proj", Linear(d, d, rng))
        self.v_proj = self.child("v_proj", Linear(d, d, rng))
        self.o_proj = self.child("o_proj", Linear(d, d, rng, gain=0.5))
        self.ln2 = self.child("ln2", LayerNorm(d))
        self.ff1 = self.child("ff1", Linear(d, cfg.patch_ff, rng))
        self.ff2 = self.child("ff2", Linear(cfg.patch_ff, d, rng, gain=0.5))
        self.head = self.child("head", Linear(self.n_patches * d, cfg.horizon, rng, gain=0.5))

    def forward(self, x):
        x = self._check(x)
        b = x.shape[0]
        n, d, nh = self.n_patches, self.cfg.patch_d_model, self.cfg.patch_heads
        dh = d // nh
        h = self.embed(reshape(x, (b, n, self.cfg.patch_len))) + self.pos
        z = self.ln1(h)

        def heads(t):
            return transpose(reshape(t, (b, n, nh, dh)), (0, 2, 1, 3))

        q, k, v = heads(self.q_proj(z)), heads(self.k_proj(z)), heads(self.v_proj(z))
        att = softmax(mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh)), axis=-1)
        o = reshape(transpose(matmul(att, v), (0, 2, 1, 3)), (b, n, d))
        h = h + self.o_proj(o)
        h = h + self.ff2(relu(self.ff1(self.ln2(h))))
        return self.head(reshape(h, (b, n * d)))


class SegRec(Expert):
    kind = "SegRec"

    def __init__(self, cfg, rng):
        super().__init__(cfg)
        if cfg.lookback % cfg.seg_len:
            raise ValueError("lookback must be a multiple of seg_len")
        self.n_seg = cfg.lookback // cfg.seg_len
        hdim = cfg.seg_hidden
        self.embed = self.child("embed", Linear(cfg.seg_len, hdim, rng))
        self.W_x = self.param("gru.W_x", _uniform(rng, (3 * hdim, hdim), hdim))
        self.W_h = self.param("gru.W_h", _uniform(rng, (3 * hdim, hdim), hdim))
        self.b_x = self.param("gru.b_x", np.zeros(3 * hdim, DTYPE))
        self.b_h = self.param("gru.b_h", np.zeros(3 * hdim, DTYPE))
        self.head = self.child("head", Linear(hdim, cfg.horizon, rng, gain=0.5))

    def forward(self, x):
        x = self._check(x)
        b = x.shape[0]
        hd = self.cfg.seg_hidden
        last = x[:, -1:]
        segs = reshape(sub(x, last), (b, self.n_seg, self.cfg.seg_len))
        e = relu(self.embed(segs))
        gx_all = linear(e, self.W_x, self.b_x)
        h = Tensor(np.zeros((b, hd), dtype=x.data.dtype))
        for t in range(self.n_seg):
            gx = gx_all[:, t, :]
            gh = linear(h, self.W_h, self.b_h)
            z = sigmoid(gx[:, :hd] + gh[:, :hd])
            r = sigmoid(gx[:, hd:2 * hd] + gh[:, hd:2 * hd])
            n = tanh(gx[:, 2 * hd:] + r * gh[:, 2 * hd:])
            h = n + z * (h - n)
        return self.head(h) + last


_BUILDERS = {"LinearDecomp": LinearDecomp, "PatchAttn": PatchAttn, "SegRec": SegRec}


def build_expert(cfg: ExpertConfig | str, seed: int = 0) -> Expert:
    if isinstance(cfg, str):
        cfg = ExpertConfig(kind=cfg)
    if cfg.kind not in _BUILDERS:
        raise ValueError(f"unknown expert kind {cfg.kind!r}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 31, KINDS.index(cfg.kind)]))
    model = _BUILDERS[cfg.kind](cfg, rng)
    model.eval()
    return model


def load_expert(path) -> tuple[Expert, dict]:
    tensors, meta = load_checkpoint(path)
    if meta.get("model") != "expert":
        raise ValueError(f"{path}: not an expert checkpoint")
    kw = {}
    for f in ExpertConfig.__dataclass_fields__.values():
        raw = meta.get(f"expert.{f.name}")
        if raw is None:
            continue
        if f.name == "kind":
            kw[f.name] = raw
        elif f.name == "bias":
            kw[f.name] = raw == "True"
        else:
            kw[f.name] = int(raw)
    model = build_expert(ExpertConfig(**kw))
    model.load_state_dict(tensors)
    return model, meta


def supervised_train(model: Expert, windows: seqdata.WindowSet, *, epochs: int, batch: int,
                     lr: float, seed: int = 0, log_every=None):
    """Plain MSE training on scaled windows (the "vanilla" regime)."""
    if len(windows) == 0:
        raise ValueError("empty corpus: no training windows")
    model.train()

    def step(idx):
        loss = mse(model.forward(windows.x[idx]), windows.y[idx])
        return loss, {"loss": loss.data}

    history = fit(model.parameters(), len(windows), epochs=epochs, batch=batch, lr=lr, seed=seed,
                  step_fn=step, log_every=log_every)
    model.eval()
    return history
