"""Shared trainable layers built on the autodiff tensor.

Every layer exposes `named_params()` (trainable tensors) and, where relevant,
`named_buffers()` (non-trainable running state). Names are slash-separated so
owners can prefix them into a flat state dict.
"""

from __future__ import annotations

import numpy as np

from .numerics import Tensor, dropout, layer_norm, softmax

__all__ = [
    "Linear",
    "LayerNorm",
    "BatchNorm1d",
    "SelfAttention",
    "TransformerLayer",
    "TransformerEncoder",
    "prefix_params",
]


def prefix_params(prefix: str, items: dict[str, Tensor]) -> dict[str, Tensor]:
    return {f"{prefix}/{k}": v for k, v in items.items()}


class Linear:
    """Affine map on the last axis; weights (in, out), optional bias."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, w_std: float | None = None, bias: bool = True):
        std = (1.0 / np.sqrt(d_in)) if w_std is None else w_std
        self.w = Tensor(rng.normal(0.0, std, size=(d_in, d_out)).astype(np.float32), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        d_in, d_out = self.w.shape
        lead = x.shape[:-1]
        flat = x.reshape(-1, d_in) if x.ndim != 2 else x
        out = flat @ self.w
        if self.b is not None:
            out = out + self.b
        return out.reshape(*lead, d_out) if x.ndim != 2 else out

    def named_params(self) -> dict[str, Tensor]:
        out = {"w": self.w}
        if self.b is not None:
            out["b"] = self.b
        return out


class LayerNorm:
    def __init__(self, dim: int):
        self.gamma = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)

    def named_params(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}


class BatchNorm1d:
    """Batch normalization over (B, C, L): stats per channel.

    Training mode normalizes by batch statistics and updates the running
    estimates; eval mode uses the stored running estimates.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if x.ndim != 3:
            raise ValueError(f"BatchNorm1d expects (B, C, L), got {x.shape}")
        if train:
            mu = x.mean(axis=(0, 2), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2), keepdims=True)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu.data.reshape(-1)).astype(np.float32)
            self.running_var = ((1 - m) * self.running_var + m * var.data.reshape(-1)).astype(np.float32)
            xn = centered / (var + self.eps) ** 0.5
        else:
            mu = Tensor(self.running_mean.reshape(1, -1, 1))
            var = Tensor(self.running_var.reshape(1, -1, 1))
            xn = (x - mu) / (var + self.eps) ** 0.5
        g = self.gamma.reshape(1, -1, 1)
        b = self.beta.reshape(1, -1, 1)
        return xn * g + b

    def named_params(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_buffers(self, bufs: dict[str, np.ndarray]) -> None:
        self.running_mean = bufs["running_mean"].astype(np.float32).copy()
        self.running_var = bufs["running_var"].astype(np.float32).copy()


class SelfAttention:
    """Multi-head scaled dot-product self-attention over (B, S, H)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)

    def _split(self, t: Tensor, b: int, s: int) -> Tensor:
        hd = self.dim // self.heads
        return t.reshape(b, s, self.heads, hd).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor) -> Tensor:
        b, s, _ = x.shape
        hd = self.dim // self.heads
        q = self._split(self.q(x), b, s)
        k = self._split(self.k(x), b, s)
        v = self._split(self.v(x), b, s)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        attn = softmax(scores, axis=-1)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, s, self.dim)
        return self.o(out)

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for name, lin in (("q", self.q), ("k", self.k), ("v", self.v), ("o", self.o)):
            out.update(prefix_params(name, lin.named_params()))
        return out


class TransformerLayer:
    """Pre-norm block: x + attn(ln(x)); x + mlp(ln(x))."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, rng: np.random.Generator, p_drop: float = 0.0):
        self.ln1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, rng)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_dim, rng)
        self.fc2 = Linear(mlp_dim, dim, rng)
        self.p_drop = p_drop

    def __call__(self, x: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        h = self.attn(self.ln1(x))
        if train and self.p_drop > 0:
            h = dropout(h, self.p_drop, rng, train)
        x = x + h
        h = self.fc2(self.fc1(self.ln2(x)).relu())
        if train and self.p_drop > 0:
            h = dropout(h, self.p_drop, rng, train)
        return x + h

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        out.update(prefix_params("ln1", self.ln1.named_params()))
        out.update(prefix_params("attn", self.attn.named_params()))
        out.update(prefix_params("ln2", self.ln2.named_params()))
        out.update(prefix_params("fc1", self.fc1.named_params()))
        out.update(prefix_params("fc2", self.fc2.named_params()))
        return out


class TransformerEncoder:
    def __init__(self, dim: int, layers: int, heads: int, mlp_dim: int, rng: np.random.Generator, p_drop: float = 0.0):
        self.layers = [TransformerLayer(dim, heads, mlp_dim, rng, p_drop) for _ in range(layers)]
        self.ln = LayerNorm(dim)

    def __call__(self, x: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, train, rng)
        return self.ln(x)

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(prefix_params(f"layer{i}", layer.named_params()))
        out.update(prefix_params("ln", self.ln.named_params()))
        return out
