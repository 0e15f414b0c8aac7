"""Stage-2 backbone: global convolution, sliding-window attention, gated fusion.

The long-range mixer is a depthwise causal convolution whose kernel is built
from N = log2(L/d) + 1 short parameter vectors: sub-kernel i is upsampled to
length 2^{max(i-1,0)} * d and scaled by alpha^i, so the concatenated kernel
spans exactly L positions with geometrically decaying magnitude and only
d * N learned values per channel. Convolution runs through the spectral path
(O(L log L)). Local structure comes from single-head attention restricted to
a centered window. A multiplicative gate fuses the two paths; each block adds
its residual branch to the stream and contributes a skip branch to the sum
that forms the stack output.
"""

from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from . import nn
from .numerics import (
    Tensor,
    concat,
    dropout,
    fft_convolve,
    fourier,
    rms_norm,
    softmax,
    stack,
)

__all__ = [
    "BenchRow",
    "EegssmBlock",
    "EegssmConfig",
    "EegssmModel",
    "EegssmOutput",
    "GateParams",
    "SgconvSpec",
    "SwaParams",
    "bench_backbones",
    "block_forward",
    "build_kernel",
    "gate",
    "sgconv_forward",
    "sgconv_param_count",
    "stack_forward",
    "swa_forward",
    "write_bench_csv",
]


def _subkernel_count(length: int, base: int) -> int:
    if base < 1 or length < base or length % base:
        raise ValueError(f"kernel length {length} must be a power-of-two multiple of base {base}")
    ratio = length // base
    if ratio & (ratio - 1):
        raise ValueError(f"L/d must be a power of two, got {length}/{base}")
    return ratio.bit_length()  # log2(ratio) + 1


def sgconv_param_count(features: int, length: int, base: int) -> int:
    """Closed-form learned-value count: d * (log2(L/d) + 1) per channel."""
    return features * base * _subkernel_count(length, base)


@dataclass
class SgconvSpec:
    """Multi-resolution depthwise kernel parameters.

    `weights` has shape (features, N, d): N sub-kernel vectors of length d
    per channel. `normalize` divides the assembled kernel by its per-channel
    L1 norm so convolution preserves scale.
    """

    length: int
    base: int
    alpha: float
    weights: Tensor
    normalize: bool = True
    upsample: str = "nearest"  # or "linear"

    def __post_init__(self):
        n = _subkernel_count(self.length, self.base)
        if self.weights.shape[-2:] != (n, self.base):
            raise ValueError(
                f"weights must end in (N={n}, d={self.base}), got {self.weights.shape}"
            )
        if self.weights.ndim != 3:
            raise ValueError("weights must be (features, N, d)")
        if self.upsample not in ("nearest", "linear"):
            raise ValueError(f"unknown upsample mode {self.upsample!r}")

    @property
    def features(self) -> int:
        return self.weights.shape[0]

    @property
    def n_subkernels(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def create(
        cls,
        features: int,
        length: int,
        base: int,
        rng: np.random.Generator,
        alpha: float = 0.5,
        normalize: bool = True,
    ) -> "SgconvSpec":
        n = _subkernel_count(length, base)
        w = rng.normal(0.0, 1.0 / np.sqrt(base * n), size=(features, n, base))
        return cls(
            length=length,
            base=base,
            alpha=alpha,
            weights=Tensor(w.astype(np.float32), requires_grad=True),
            normalize=normalize,
        )


def _upsample_linear(w: Tensor, reps: int) -> Tensor:
    """Piecewise-linear upsample of the last axis by an integer factor."""
    from .numerics import repeat_last

    if reps == 1:
        return w
    d = w.shape[-1]
    # interpolate between consecutive taps; the final tap extends flat
    nxt = concat([w[..., 1:], w[..., d - 1 :]], axis=-1)
    left = repeat_last(w, reps)
    right = repeat_last(nxt, reps)
    ramp = np.tile(np.arange(reps, dtype=np.float32) / reps, d)
    return left + (right - left) * Tensor(ramp)


def build_kernel(spec: SgconvSpec) -> Tensor:
    """Assemble the (features, L) convolution kernel from sub-kernel weights."""
    from .numerics import repeat_last

    parts = []
    for i in range(spec.n_subkernels):
        w_i = spec.weights[:, i, :]
        reps = 2 ** max(i - 1, 0)
        if reps > 1:
            up = repeat_last(w_i, reps) if spec.upsample == "nearest" else _upsample_linear(w_i, reps)
        else:
            up = w_i
        parts.append(up * float(spec.alpha**i))
    kernel = concat(parts, axis=-1)
    if spec.normalize:
        z = kernel.abs().sum(axis=-1, keepdims=True)
        kernel = kernel / (z + 1e-12)
    return kernel


def sgconv_forward(u, spec: SgconvSpec) -> Tensor:
    """Per-feature causal convolution of (B, S, F) or (S, F) with the kernel.

    Sequences shorter than L convolve against the kernel's first S taps
    (later taps can never touch a causal output within the sequence).
    """
    x = u if isinstance(u, Tensor) else Tensor(u)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ValueError(f"expected (B, S, F) or (S, F), got {x.shape}")
    b, s, f = x.shape
    if f != spec.features:
        raise ValueError(f"feature width {f} != kernel channels {spec.features}")
    if s > spec.length:
        raise ValueError(f"sequence length {s} exceeds kernel span {spec.length}")
    kernel = build_kernel(spec)
    if s < spec.length:
        kernel = kernel[:, :s]
    xt = x.transpose(0, 2, 1)  # (B, F, S)
    yt = fft_convolve(xt, kernel)  # kernel broadcasts over the batch axis
    y = yt.transpose(0, 2, 1)
    return y.reshape(s, f) if squeeze else y


@dataclass
class SwaParams:
    """Single-head query/key/value/output maps for windowed attention."""

    q: nn.Linear
    k: nn.Linear
    v: nn.Linear
    o: nn.Linear

    @classmethod
    def create(cls, features: int, rng: np.random.Generator) -> "SwaParams":
        return cls(
            q=nn.Linear(features, features, rng),
            k=nn.Linear(features, features, rng),
            v=nn.Linear(features, features, rng),
            o=nn.Linear(features, features, rng),
        )

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for name, lin in (("q", self.q), ("k", self.k), ("v", self.v), ("o", self.o)):
            out.update(nn.prefix_params(name, lin.named_params()))
        return out


def _shift_seq(t: Tensor, delta: int) -> Tensor:
    """Shift (B, S, F) along S by delta, zero-filling vacated positions.

    Row i of the result holds row i + delta of the input (out-of-range rows
    are zero), so pairing with the unshifted query aligns i with i + delta.
    """
    if delta == 0:
        return t
    b, s, f = t.shape
    zeros = Tensor(np.zeros((b, abs(delta), f), dtype=t.dtype))
    if delta > 0:
        return concat([t[:, delta:, :], zeros], axis=1)
    return concat([zeros, t[:, :s + delta, :]], axis=1)


def swa_forward(
    x,
    params: SwaParams,
    window: int,
    train: bool = False,
    rng: np.random.Generator | None = None,
    p_drop: float = 0.0,
) -> Tensor:
    """Attention where position i attends to |j - i| <= floor(window/2).

    Implemented with shifted key/value copies (O(S * window) work) rather
    than a masked dense score matrix; out-of-range offsets are excluded
    through an additive -1e9 before the softmax, which underflows to an
    exact zero weight.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    x = x if isinstance(x, Tensor) else Tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    b, s, f = x.shape
    q = params.q(x) * (1.0 / np.sqrt(f))
    k = params.k(x)
    v = params.v(x)
    half = window // 2
    deltas = [d for d in range(-half, half + 1) if -s < d < s]
    scores = []
    idx = np.arange(s)
    for d in deltas:
        kd = _shift_seq(k, d)
        s_d = (q * kd).sum(axis=-1)  # (B, S)
        valid = (0 <= idx + d) & (idx + d < s)
        bias = np.where(valid, 0.0, -1e9).astype(np.float32)
        scores.append(s_d + Tensor(bias))
    p = softmax(stack(scores, axis=-1), axis=-1)  # (B, S, W)
    if train and p_drop > 0:
        p = dropout(p, p_drop, rng, train)
    out = None
    for j, d in enumerate(deltas):
        vd = _shift_seq(v, d)
        term = p[:, :, j : j + 1] * vd
        out = term if out is None else out + term
    y = params.o(out)
    return y.reshape(s, f) if squeeze else y


@dataclass
class GateParams:
    """Fusion gate: two (2F -> F) filters plus two (F -> F) output convolutions.

    All four are kernel-size-1 convolutions over the sequence, i.e. position-
    wise linear maps, stored here as weight matrices applied to the last axis.
    """

    wf: nn.Linear
    wg: nn.Linear
    out1: nn.Linear
    out2: nn.Linear

    @classmethod
    def create(cls, features: int, rng: np.random.Generator) -> "GateParams":
        return cls(
            wf=nn.Linear(2 * features, features, rng),
            wg=nn.Linear(2 * features, features, rng),
            out1=nn.Linear(features, features, rng),
            out2=nn.Linear(features, features, rng),
        )

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for name, lin in (("wf", self.wf), ("wg", self.wg), ("out1", self.out1), ("out2", self.out2)):
            out.update(nn.prefix_params(name, lin.named_params()))
        return out


def gate(y_sg: Tensor, y_swa: Tensor, params: GateParams) -> tuple[Tensor, Tensor, Tensor]:
    """z = tanh(Wf . concat) * sigmoid(Wg . concat); y1, y2 = Conv(z), Conv(z)."""
    if y_sg.shape != y_swa.shape:
        raise ValueError("fusion inputs must share a shape")
    cat = concat([y_sg, y_swa], axis=-1)
    z = params.wf(cat).tanh() * params.wg(cat).sigmoid()
    return z, params.out1(z), params.out2(z)


@dataclass
class EegssmBlock:
    rms_scale: Tensor
    sgconv: SgconvSpec
    swa: SwaParams
    window: int
    gate: GateParams
    p_drop: float = 0.0

    @classmethod
    def create(
        cls,
        features: int,
        length: int,
        base: int,
        window: int,
        rng: np.random.Generator,
        alpha: float = 0.5,
        p_drop: float = 0.0,
    ) -> "EegssmBlock":
        if window < 1:
            raise ValueError("window must be >= 1")
        return cls(
            rms_scale=Tensor(np.ones(features, dtype=np.float32), requires_grad=True),
            sgconv=SgconvSpec.create(features, length, base, rng, alpha=alpha),
            swa=SwaParams.create(features, rng),
            window=window,
            gate=GateParams.create(features, rng),
            p_drop=p_drop,
        )

    def named_params(self) -> dict[str, Tensor]:
        out = {"rms_scale": self.rms_scale, "sgconv/weights": self.sgconv.weights}
        out.update(nn.prefix_params("swa", self.swa.named_params()))
        out.update(nn.prefix_params("gate", self.gate.named_params()))
        return out


def block_forward(
    block: EegssmBlock,
    x: Tensor,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """One mixing step: returns (x + residual branch, skip branch)."""
    h = rms_norm(x, block.rms_scale)
    y_sg = sgconv_forward(h, block.sgconv)
    y_swa = swa_forward(h, block.swa, block.window, train, rng, block.p_drop)
    _, y1, y2 = gate(y_sg, y_swa, block.gate)
    if train and block.p_drop > 0:
        y1 = dropout(y1, block.p_drop, rng, train)
        y2 = dropout(y2, block.p_drop, rng, train)
    return x + y1, y2


def stack_forward(
    blocks: list[EegssmBlock],
    x: Tensor,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Run the block stack; the output is the sum of every block's skip branch."""
    if not blocks:
        raise ValueError("need at least one block")
    skip_sum = None
    for block in blocks:
        x, skip = block_forward(block, x, train, rng)
        skip_sum = skip if skip_sum is None else skip_sum + skip
    return skip_sum


# ---- full stage-2 model ------------------------------------------------------


@dataclass(frozen=True)
class EegssmConfig:
    """Backbone + head geometry for masked token prediction."""

    patch_len: int = 200
    features: int = 256
    blocks: int = 8
    kernel_len: int = 1024
    kernel_base: int = 16
    alpha: float = 0.5
    window: int = 31
    codebook_size: int = 4096
    p_drop: float = 0.1

    def __post_init__(self):
        _subkernel_count(self.kernel_len, self.kernel_base)
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class EegssmOutput:
    """Stack features plus the two per-position token-logit heads."""

    features: Tensor  # (B, S, F)
    logits_t: Tensor  # (B, S, K)
    logits_f: Tensor  # (B, S, K)


class EegssmModel:
    """Patch embedding, optional mask substitution, block stack, two heads.

    The patch embedding is a kernel-size-T stride-T 1-D convolution over the
    flattened waveform, which is applied here as a per-patch linear map (the
    two are the same computation). Masked positions are replaced by a learned
    embedding before any mixing, so the only route to a masked target is
    through context.
    """

    def __init__(self, config: EegssmConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.embed = nn.Linear(c.patch_len, c.features, rng)
        self.mask_embed = Tensor(
            rng.normal(0, 0.02, size=(c.features,)).astype(np.float32), requires_grad=True
        )
        self.blocks = [
            EegssmBlock.create(
                c.features, c.kernel_len, c.kernel_base, c.window, rng,
                alpha=c.alpha, p_drop=c.p_drop,
            )
            for _ in range(c.blocks)
        ]
        # small heads: initial logits stay close to uniform over K, but the
        # scale must stay large enough that the backbone sees usable gradient
        # before the heads have grown (1e-3 stalls masked-prediction training)
        self.head_t = nn.Linear(c.features, c.codebook_size, rng, w_std=1e-2)
        self.head_f = nn.Linear(c.features, c.codebook_size, rng, w_std=1e-2)

    def forward(
        self,
        patches: np.ndarray,
        mask: np.ndarray | None = None,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> EegssmOutput:
        """(B, S, T) waveform patches -> features and per-position logits.

        `mask` is an optional (B, S) boolean array; True positions have their
        embeddings replaced by the learned mask embedding.
        """
        b, s, t = patches.shape
        if t != self.config.patch_len:
            raise ValueError(f"patch length {t} != configured {self.config.patch_len}")
        e = self.embed(Tensor(patches))
        if mask is not None:
            if mask.shape != (b, s):
                raise ValueError(f"mask shape {mask.shape} != {(b, s)}")
            m = Tensor(mask.astype(np.float32)[..., None])
            e = e * (1.0 - m) + self.mask_embed * m
        feats = stack_forward(self.blocks, e, train, rng)
        return EegssmOutput(
            features=feats,
            logits_t=self.head_t(feats),
            logits_f=self.head_f(feats),
        )

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(nn.prefix_params("embed", self.embed.named_params()))
        out["mask_embed"] = self.mask_embed
        for i, blk in enumerate(self.blocks):
            out.update(nn.prefix_params(f"block{i}", blk.named_params()))
        out.update(nn.prefix_params("head_t", self.head_t.named_params()))
        out.update(nn.prefix_params("head_f", self.head_f.named_params()))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_params().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.named_params().items():
            if k not in state:
                raise KeyError(f"missing parameter {k!r} in state")
            if state[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k!r}")
            t.data = state[k].astype(t.data.dtype).copy()


# ---- benchmark ---------------------------------------------------------------


@dataclass
class BenchRow:
    backbone: str
    seq_len: int
    features: int
    params: int
    wall_ms: float
    peak_bytes: int


def _time_and_peak(fn, repeats: int) -> tuple[float, int]:
    fn()  # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    tracemalloc.start()
    fn()
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return float(np.median(times) * 1e3), int(peak)


def bench_backbones(
    seq_lens: list[int],
    features: int = 1,
    base: int = 16,
    repeats: int = 3,
    attention_max_len: int = 1 << 12,
    seed: int = 0,
) -> list[BenchRow]:
    """Wall time + parameter count for three sequence mixers at equal shapes.

    Backbones: `sgconv` (multi-resolution kernel, spectral path),
    `direct_conv` (an unstructured full-length kernel applied by direct
    time-domain convolution), and `dense_attention` (single-head full
    attention, only run up to `attention_max_len` to bound its quadratic
    score matrix).
    """
    for s in seq_lens:
        if s & (s - 1):
            raise ValueError(f"sequence lengths must be powers of two, got {s}")
        if s < base:
            raise ValueError(f"sequence length {s} shorter than kernel base {base}")
    rng = np.random.default_rng(seed)
    rows: list[BenchRow] = []
    for s in seq_lens:
        u = rng.normal(size=(features, s)).astype(np.float64)
        n_sub = _subkernel_count(s, base)
        sg_weights = rng.normal(size=(features, n_sub, base))
        spec = SgconvSpec(
            length=s, base=base, alpha=0.5,
            weights=Tensor(sg_weights.astype(np.float32)), normalize=True,
        )
        kernel = build_kernel(spec).data.astype(np.float64)

        def run_sgconv():
            return fourier.fft_convolve_arrays(u, kernel)

        ms, peak = _time_and_peak(run_sgconv, repeats)
        rows.append(BenchRow("sgconv", s, features, sgconv_param_count(features, s, base), ms, peak))

        def run_direct():
            return np.stack([np.convolve(u[f], kernel[f])[:s] for f in range(features)])

        # direct convolution is O(L^2); one repeat is enough at the top sizes
        ms, peak = _time_and_peak(run_direct, 1 if s >= (1 << 15) else repeats)
        rows.append(BenchRow("direct_conv", s, features, features * s, ms, peak))

        if s <= attention_max_len:
            q = rng.normal(size=(s, features))
            wq, wk, wv, wo = (rng.normal(size=(features, features)) for _ in range(4))

            def run_attention():
                qq, kk, vv = q @ wq, q @ wk, q @ wv
                scores = qq @ kk.T / np.sqrt(features)
                scores -= scores.max(axis=-1, keepdims=True)
                e = np.exp(scores)
                p = e / e.sum(axis=-1, keepdims=True)
                return (p @ vv) @ wo

            ms, peak = _time_and_peak(run_attention, repeats)
            rows.append(BenchRow("dense_attention", s, features, 4 * features * features, ms, peak))
    return rows


def write_bench_csv(rows: list[BenchRow], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["backbone", "seq_len", "features", "params", "wall_ms", "peak_bytes"])
        for r in rows:
            w.writerow([r.backbone, r.seq_len, r.features, r.params, f"{r.wall_ms:.4f}", r.peak_bytes])
