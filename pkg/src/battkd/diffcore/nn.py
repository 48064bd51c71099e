"""Small module system: named parameters, train/eval mode, layers."""

from __future__ import annotations

import hashlib

import numpy as np

from .tensor import DTYPE, Parameter, layer_norm, linear


class Module:
    """Base class holding an ordered name -> Parameter registry.

    Subclasses register parameters through :meth:`param` and child modules
    through :meth:`child`; names are dotted and stable across runs.
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self._children: dict[str, "Module"] = {}
        self.training = True

    def param(self, name, value, trainable=True) -> Parameter:
        p = Parameter(value, name=name, trainable=trainable)
        self._params[name] = p
        return p

    def child(self, name, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix="") -> dict[str, Parameter]:
        out = {}
        for k, p in self._params.items():
            p.name = prefix + k
            out[prefix + k] = p
        for k, m in self._children.items():
            out.update(m.named_parameters(f"{prefix}{k}."))
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def train(self, flag=True):
        self.training = flag
        for m in self._children.values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict=True):
        named = self.named_parameters()
        if strict:
            missing = set(named) - set(state)
            extra = set(state) - set(named)
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, v in state.items():
            if k not in named:
                continue
            if named[k].shape != v.shape:
                raise ValueError(f"{k}: shape {v.shape} != {named[k].shape}")
            named[k].data = np.array(v, dtype=DTYPE)

    def num_values(self, trainable_only=False) -> int:
        return sum(p.data.size for p in self.parameters() if p.trainable or not trainable_only)

    def digest(self) -> str:
        """sha256 over names and raw bytes; used for freeze/immutability checks."""
        h = hashlib.sha256()
        for k, p in self.named_parameters().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def init_weight(rng, d_out, d_in, gain=1.0):
    return (rng.standard_normal((d_out, d_in)) * gain / np.sqrt(d_in)).astype(DTYPE)


class Linear(Module):
    """Affine map with weight (d_out, d_in); an adapter may wrap it."""

    def __init__(self, d_in, d_out, rng, bias=True, gain=1.0):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.weight = self.param("weight", init_weight(rng, d_out, d_in, gain))
        self.bias = self.param("bias", np.zeros(d_out, DTYPE)) if bias else None
        self.adapter = None

    def __call__(self, x):
        out = linear(x, self.weight, self.bias)
        if self.adapter is not None:
            out = out + self.adapter(x)
        return out


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.param("gamma", np.ones(d, DTYPE))
        self.beta = self.param("beta", np.zeros(d, DTYPE))

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)
