"""Dual-codebook signal tokenizer (stage 1).

One encoder reads each one-second patch twice: a strided convolution stack
consumes the raw waveform while a linear map consumes the patch's amplitude
spectrum. The concatenated features feed a transformer over the record's
patch sequence, and the resulting embedding is quantized twice against two
independent codebooks. Two decoders close the loop: a frequency decoder
reconstructs the amplitude and phase spectra from the frequency-side code,
and a temporal decoder reconstructs the raw waveform from the time-side code
while a contrastive term ties together the two halves of each record.

Gradients reach the encoder through a straight-through estimator (the
quantizer's output behaves like the identity map in the backward pass), and
the codebooks themselves learn only from stop-gradient pull terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .numerics import (
    Tensor,
    concat,
    conv1d,
    cross_entropy,
    no_grad,
    take_rows,
)
from .signal import PatchGrid, freq_features_grid

__all__ = [
    "Codebook",
    "DominanceReport",
    "Stage1Batch",
    "TokenGrid",
    "TokenizerConfig",
    "TokenizerModel",
    "UsageReport",
    "class_specific_ratio",
    "code_usage_report",
    "codebook_loss",
    "contrastive_loss",
    "encode_patch",
    "freq_loss",
    "make_stage1_batch",
    "quantize",
    "stage1_losses",
    "temporal_loss",
    "tokenize",
]


@dataclass(frozen=True)
class TokenizerConfig:
    """Architecture and loss hyperparameters for the tokenizer."""

    patch_len: int = 200
    hidden: int = 200
    enc_layers: int = 12
    dec_layers: int = 3
    heads: int = 8
    mlp_dim: int = 800
    codebook_size: int = 4096
    code_dim: int = 32
    max_positions: int = 1024
    temperature: float = 0.5
    commitment_beta: float = 0.0
    conv_channels: tuple[int, ...] = (8, 4, 4)
    conv_kernels: tuple[int, ...] = (15, 3, 3)
    conv_strides: tuple[int, ...] = (8, 1, 1)
    conv_pads: tuple[int, ...] = (7, 1, 1)

    def __post_init__(self):
        if self.patch_len < 2:
            raise ValueError("patch_len must be >= 2")
        if self.codebook_size < 1 or self.code_dim < 1:
            raise ValueError("codebook dimensions must be positive")
        if not (len(self.conv_channels) == len(self.conv_kernels) == len(self.conv_strides) == len(self.conv_pads)):
            raise ValueError("conv stage tuples must have equal length")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def freq_bins(self) -> int:
        # one-sided spectrum length used as the encoder's frequency input
        return self.patch_len // 2 + 1

    def conv_out_len(self) -> int:
        length = self.patch_len
        for k, s, p in zip(self.conv_kernels, self.conv_strides, self.conv_pads):
            length = (length + 2 * p - k) // s + 1
            if length < 1:
                raise ValueError("patch too short for the convolution stack")
        return length

    @property
    def time_feat(self) -> int:
        return self.conv_channels[-1] * self.conv_out_len()


class Codebook:
    """K learnable code vectors of width D, plus lookup usage counters."""

    def __init__(self, size: int, dim: int, rng: np.random.Generator, domain: str):
        if size < 1 or dim < 1:
            raise ValueError("codebook needs at least one code of width >= 1")
        bound = 1.0 / size
        self.codes = Tensor(
            rng.uniform(-bound, bound, size=(size, dim)).astype(np.float32),
            requires_grad=True,
        )
        self.usage = np.zeros(size, dtype=np.int64)
        self.domain = domain

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def nearest(self, queries: np.ndarray, count: bool = True) -> np.ndarray:
        """Index of the closest code per query row (squared Euclidean,
        ties resolved toward the lowest index). Distances are computed in
        float64 so tie resolution does not depend on storage precision."""
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        if q.shape[-1] != self.dim:
            raise ValueError(f"query width {q.shape[-1]} != code width {self.dim}")
        codes = self.codes.data.astype(np.float64)
        out = np.empty(q.shape[0], dtype=np.int64)
        chunk = max(1, (1 << 22) // max(1, self.size * self.dim))
        for lo in range(0, q.shape[0], chunk):
            block = q[lo : lo + chunk]
            d2 = ((block[:, None, :] - codes[None, :, :]) ** 2).sum(axis=-1)
            out[lo : lo + block.shape[0]] = d2.argmin(axis=1)
        if count:
            np.add.at(self.usage, out, 1)
        return out

    def reset_usage(self) -> None:
        self.usage[:] = 0

    def unused_count(self) -> int:
        return int((self.usage == 0).sum())


def quantize(e, codebook: Codebook):
    """Map an embedding (or a batch of embeddings) to its nearest code.

    Returns (index, code_vector) for a single (D,) query and
    (indices, code_matrix) for an (M, D) batch. Each call increments the
    codebook's usage counters.
    """
    arr = np.asarray(e.data if isinstance(e, Tensor) else e, dtype=np.float32)
    single = arr.ndim == 1
    idx = codebook.nearest(arr)
    codes = codebook.codes.data[idx]
    if single:
        return int(idx[0]), codes[0]
    return idx, codes


@dataclass
class TokenGrid:
    """Per-patch discrete codes: temporal and frequency streams, (C, N) each."""

    z_t: np.ndarray
    z_f: np.ndarray

    def __post_init__(self):
        if self.z_t.shape != self.z_f.shape:
            raise ValueError("token streams must share a shape")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.z_t.shape


class TokenizerModel:
    """Encoder, two codebooks, and two decoders; see the module docstring."""

    def __init__(self, config: TokenizerConfig, rng: np.random.Generator):
        self.config = config
        c = config
        in_ch = (1,) + c.conv_channels[:-1]
        self.convs = []
        self.conv_bns = []
        for i, (ci, co, k) in enumerate(zip(in_ch, c.conv_channels, c.conv_kernels)):
            std = 1.0 / np.sqrt(ci * k)
            w = Tensor(rng.normal(0, std, size=(co, ci, k)).astype(np.float32), requires_grad=True)
            b = Tensor(np.zeros(co, dtype=np.float32), requires_grad=True)
            self.convs.append((w, b))
            self.conv_bns.append(nn.BatchNorm1d(co))
        self.freq_proj = nn.Linear(c.freq_bins, c.time_feat, rng)
        self.input_proj = nn.Linear(2 * c.time_feat, c.hidden, rng)
        self.pos_embed = Tensor(
            rng.normal(0, 0.02, size=(c.max_positions, c.hidden)).astype(np.float32),
            requires_grad=True,
        )
        self.encoder = nn.TransformerEncoder(c.hidden, c.enc_layers, c.heads, c.mlp_dim, rng)
        self.down = nn.Linear(c.hidden, c.code_dim, rng)
        self.codebook_t = Codebook(c.codebook_size, c.code_dim, rng, domain="temporal")
        self.codebook_f = Codebook(c.codebook_size, c.code_dim, rng, domain="frequency")
        self.up_t = nn.Linear(c.code_dim, c.hidden, rng)
        self.up_f = nn.Linear(c.code_dim, c.hidden, rng)
        self.f_decoder = nn.TransformerEncoder(c.hidden, c.dec_layers, c.heads, c.mlp_dim, rng)
        self.t_decoder = nn.TransformerEncoder(c.hidden, c.dec_layers, c.heads, c.mlp_dim, rng)
        self.f_head_amp = nn.Linear(c.hidden, c.patch_len, rng)
        self.f_head_phase = nn.Linear(c.hidden, c.patch_len, rng)
        self.t_head = nn.Linear(c.hidden, c.patch_len, rng)

    # ---- forward pieces --------------------------------------------------

    def _conv_stack(self, x: Tensor, train: bool) -> Tensor:
        c = self.config
        for (w, b), bn, s, p in zip(self.convs, self.conv_bns, c.conv_strides, c.conv_pads):
            x = conv1d(x, w, b, stride=s, pad=p)
            x = bn(x, train).relu()
        return x

    def encode(self, patches: np.ndarray, freq_in: np.ndarray, positions: np.ndarray, train: bool = False) -> Tensor:
        """(B, S, T) patches + (B, S, bins) spectra -> (B, S, hidden)."""
        b, s, t = patches.shape
        x = Tensor(patches.reshape(b * s, 1, t))
        h = self._conv_stack(x, train)
        h = h.reshape(b, s, self.config.time_feat)
        fr = self.freq_proj(Tensor(freq_in))
        ep = self.input_proj(concat([h, fr], axis=-1))
        ep = ep + take_rows(self.pos_embed, positions)
        return self.encoder(ep, train)

    # ---- state -----------------------------------------------------------

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"conv{i}/w"] = w
            out[f"conv{i}/b"] = b
            out.update(nn.prefix_params(f"conv{i}/bn", self.conv_bns[i].named_params()))
        out.update(nn.prefix_params("freq_proj", self.freq_proj.named_params()))
        out.update(nn.prefix_params("input_proj", self.input_proj.named_params()))
        out["pos_embed"] = self.pos_embed
        out.update(nn.prefix_params("encoder", self.encoder.named_params()))
        out.update(nn.prefix_params("down", self.down.named_params()))
        out["codebook_t/codes"] = self.codebook_t.codes
        out["codebook_f/codes"] = self.codebook_f.codes
        out.update(nn.prefix_params("up_t", self.up_t.named_params()))
        out.update(nn.prefix_params("up_f", self.up_f.named_params()))
        out.update(nn.prefix_params("f_decoder", self.f_decoder.named_params()))
        out.update(nn.prefix_params("t_decoder", self.t_decoder.named_params()))
        out.update(nn.prefix_params("f_head_amp", self.f_head_amp.named_params()))
        out.update(nn.prefix_params("f_head_phase", self.f_head_phase.named_params()))
        out.update(nn.prefix_params("t_head", self.t_head.named_params()))
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, bn in enumerate(self.conv_bns):
            for k, v in bn.named_buffers().items():
                out[f"conv{i}/bn/{k}"] = v
        out["codebook_t/usage"] = self.codebook_t.usage
        out["codebook_f/usage"] = self.codebook_f.usage
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.named_params().items()}
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        for k, t in params.items():
            if k not in state:
                raise KeyError(f"missing parameter {k!r} in state")
            if state[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k!r}")
            t.data = state[k].astype(t.data.dtype).copy()
        for i, bn in enumerate(self.conv_bns):
            bn.load_buffers({
                "running_mean": state[f"conv{i}/bn/running_mean"],
                "running_var": state[f"conv{i}/bn/running_var"],
            })
        self.codebook_t.usage = state["codebook_t/usage"].astype(np.int64).copy()
        self.codebook_f.usage = state["codebook_f/usage"].astype(np.int64).copy()


# ---- batching ---------------------------------------------------------------


@dataclass
class Stage1Batch:
    """Everything one tokenizer step needs, stacked over records.

    Sequences flatten each record's grid channel-major, so slot c*N + n is
    window n of channel c. `windows_per_channel` is N, used to split records
    into first/second halves for the contrastive term.
    """

    patches: np.ndarray          # (B, S, T) normalized waveforms
    freq_in: np.ndarray          # (B, S, bins) one-sided z-scored amplitude
    amp_target: np.ndarray       # (B, S, T)
    phase_target: np.ndarray     # (B, S, T)
    positions: np.ndarray        # (B, S) int
    windows_per_channel: int

    @property
    def batch_size(self) -> int:
        return self.patches.shape[0]


def make_stage1_batch(grids: list[PatchGrid]) -> Stage1Batch:
    if not grids:
        raise ValueError("empty batch")
    shape = grids[0].patches.shape
    if any(g.patches.shape != shape for g in grids):
        raise ValueError("all records in a batch must share (C, N, T)")
    c, n, t = shape
    bins = t // 2 + 1
    patches = np.stack([g.patches.reshape(c * n, t) for g in grids])
    amps, phases = [], []
    for g in grids:
        f = freq_features_grid(g)
        amps.append(f.amplitude.reshape(c * n, t))
        phases.append(f.phase.reshape(c * n, t))
    amp = np.stack(amps)
    phase = np.stack(phases)
    positions = np.broadcast_to(np.arange(c * n), (len(grids), c * n)).copy()
    return Stage1Batch(
        patches=patches.astype(np.float32),
        freq_in=amp[..., :bins].copy(),
        amp_target=amp,
        phase_target=phase,
        positions=positions,
        windows_per_channel=n,
    )


def encode_patch(model: TokenizerModel, patch_1d: np.ndarray, freq_amp_z: np.ndarray, position: int = 0) -> np.ndarray:
    """Embed one patch (eval mode). `freq_amp_z` is the patch's z-scored
    amplitude spectrum; only the one-sided half feeds the encoder."""
    t = model.config.patch_len
    if patch_1d.shape != (t,):
        raise ValueError(f"expected a ({t},) patch, got {patch_1d.shape}")
    bins = model.config.freq_bins
    with no_grad():
        out = model.encode(
            patch_1d.reshape(1, 1, t).astype(np.float32),
            freq_amp_z.reshape(1, 1, -1)[..., :bins].astype(np.float32),
            np.array([[position]]),
            train=False,
        )
    return out.data[0, 0]


# ---- losses -----------------------------------------------------------------


def _sse_mean(pred: Tensor, target: np.ndarray) -> Tensor:
    """Sum of squares over the last axis, mean over all leading axes."""
    diff = pred - Tensor(target)
    return (diff * diff).sum(axis=-1).mean()


def contrastive_loss(h: Tensor, h_tilde: Tensor, temperature: float = 0.5) -> Tensor:
    """Normalized-temperature cross entropy between two views of B records.

    Views are L2-normalized; every row of the 2B stack treats its partner as
    the positive and all other 2B-2 rows (plus nothing else) as negatives.
    """
    if h.ndim != 2 or h.shape != h_tilde.shape:
        raise ValueError("expected matching (B, H) view matrices")
    b = h.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs at least 2 records in the batch")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    u = concat([h, h_tilde], axis=0)
    norm = ((u * u).sum(axis=-1, keepdims=True) + 1e-12) ** 0.5
    u = u / norm
    sims = (u @ u.transpose(1, 0)) * (1.0 / temperature)
    # a row never treats itself as a candidate
    sims = sims + Tensor(np.diag(np.full(2 * b, -1e9, dtype=np.float32)))
    partners = np.concatenate([np.arange(b) + b, np.arange(b)])
    return cross_entropy(sims, partners).mean()


def _encode_half(model: TokenizerModel, batch: Stage1Batch, second: bool, train: bool) -> Tensor:
    n = batch.windows_per_channel
    if n < 2:
        raise ValueError("contrastive views need at least 2 windows per channel")
    slot_window = batch.positions[0] % n
    keep = slot_window >= (n // 2) if second else slot_window < (n // 2)
    enc = model.encode(
        batch.patches[:, keep],
        batch.freq_in[:, keep],
        batch.positions[:, keep],
        train=train,
    )
    return enc.mean(axis=1)


def _quantize_st(model: TokenizerModel, e_d: Tensor, codebook: Codebook):
    """Nearest codes with a straight-through path back to the embeddings."""
    b, s, d = e_d.shape
    idx = codebook.nearest(e_d.data.reshape(-1, d)).reshape(b, s)
    v = take_rows(codebook.codes, idx)
    st = e_d + (v - e_d).detach()
    return idx, v, st


def stage1_losses(model: TokenizerModel, batch: Stage1Batch, train: bool = False, rng: np.random.Generator | None = None) -> dict[str, Tensor]:
    """All tokenizer loss components from one shared encoder pass.

    Returns tensors keyed: freq_recon, temporal_recon, contrastive,
    codebook_sg, temporal (= contrastive + temporal_recon), and total.
    """
    e = model.encode(batch.patches, batch.freq_in, batch.positions, train=train)
    e_d = model.down(e)

    idx_f, v_f, st_f = _quantize_st(model, e_d, model.codebook_f)
    idx_t, v_t, st_t = _quantize_st(model, e_d, model.codebook_t)

    df = model.f_decoder(model.up_f(st_f), train, rng)
    freq_recon = _sse_mean(model.f_head_amp(df), batch.amp_target) + _sse_mean(
        model.f_head_phase(df), batch.phase_target
    )

    dt = model.t_decoder(model.up_t(st_t), train, rng)
    temporal_recon = _sse_mean(model.t_head(dt), batch.patches)

    h1 = _encode_half(model, batch, second=False, train=train)
    h2 = _encode_half(model, batch, second=True, train=train)
    cl = contrastive_loss(h1, h2, model.config.temperature)

    e_sg = e_d.detach()
    sg_t = ((e_sg - v_t) * (e_sg - v_t)).sum(axis=-1).mean()
    sg_f = ((e_sg - v_f) * (e_sg - v_f)).sum(axis=-1).mean()

    temporal = cl + temporal_recon
    total = freq_recon + sg_t + sg_f + temporal
    beta = model.config.commitment_beta
    if beta > 0:
        vt_sg, vf_sg = v_t.detach(), v_f.detach()
        commit = ((e_d - vt_sg) * (e_d - vt_sg)).sum(axis=-1).mean() + (
            (e_d - vf_sg) * (e_d - vf_sg)
        ).sum(axis=-1).mean()
        total = total + beta * commit

    return {
        "freq_recon": freq_recon,
        "temporal_recon": temporal_recon,
        "contrastive": cl,
        "codebook_sg": sg_t + sg_f,
        "sg_t": sg_t,
        "sg_f": sg_f,
        "temporal": temporal,
        "total": total,
        "idx_t": idx_t,
        "idx_f": idx_f,
    }


def freq_loss(model: TokenizerModel, batch: Stage1Batch) -> Tensor:
    """Amplitude + phase reconstruction error (eval mode)."""
    return stage1_losses(model, batch)["freq_recon"]


def temporal_loss(model: TokenizerModel, batch: Stage1Batch) -> Tensor:
    """Contrastive alignment plus waveform reconstruction (eval mode)."""
    return stage1_losses(model, batch)["temporal"]


def codebook_loss(model: TokenizerModel, batch: Stage1Batch) -> Tensor:
    """The full tokenizer objective (eval mode)."""
    return stage1_losses(model, batch)["total"]


# ---- tokenization -----------------------------------------------------------


def tokenize(model: TokenizerModel, grid: PatchGrid) -> TokenGrid:
    """Deterministically map every patch of a record to its (z_t, z_f) pair."""
    batch = make_stage1_batch([grid])
    with no_grad():
        e = model.encode(batch.patches, batch.freq_in, batch.positions, train=False)
        e_d = model.down(e)
    flat = e_d.data.reshape(-1, model.config.code_dim)
    c, n = grid.patches.shape[:2]
    z_t = model.codebook_t.nearest(flat).reshape(c, n)
    z_f = model.codebook_f.nearest(flat).reshape(c, n)
    return TokenGrid(z_t=z_t.astype(np.int32), z_f=z_f.astype(np.int32))


# ---- analytics --------------------------------------------------------------


@dataclass
class UsageReport:
    domain: str
    counts: np.ndarray
    total_queries: int
    used: int
    unused: int

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["code_index", "count"])
            for i, c in enumerate(self.counts):
                w.writerow([i, int(c)])


def code_usage_report(codebook: Codebook) -> UsageReport:
    counts = codebook.usage.copy()
    return UsageReport(
        domain=codebook.domain,
        counts=counts,
        total_queries=int(counts.sum()),
        used=int((counts > 0).sum()),
        unused=int((counts == 0).sum()),
    )


@dataclass
class DominanceReport:
    """Class-concentration statistics for each token stream.

    For each code, dominance is the largest class share of its occurrences;
    a code is class-specific when that share reaches the threshold. Ratios
    are taken over codes that occur at least once.
    """

    tau: float
    used_t: int
    used_f: int
    specific_t: int
    specific_f: int
    ratio_t: float
    ratio_f: float
    dominance_t: dict[int, float] = field(repr=False, default_factory=dict)
    dominance_f: dict[int, float] = field(repr=False, default_factory=dict)
    distinct_pairs: int = 0


def _dominance_stream(tokens: list[np.ndarray], labels: list[int], n_codes: int, n_classes: int):
    counts = np.zeros((n_codes, n_classes), dtype=np.int64)
    for z, y in zip(tokens, labels):
        np.add.at(counts[:, y], z.reshape(-1), 1)
    totals = counts.sum(axis=1)
    used = np.flatnonzero(totals)
    dominance = {int(c): float(counts[c].max() / totals[c]) for c in used}
    return used, dominance


def class_specific_ratio(samples: list[tuple[TokenGrid, int]], n_codes: int, tau: float = 1.0) -> DominanceReport:
    """Fraction of used codes whose occurrences concentrate on one class.

    `samples` pairs each record's TokenGrid with its class label. A code
    counts as class-specific when max-class-share >= tau; with tau = 1 that
    means it only ever appears under a single label.
    """
    if not samples:
        raise ValueError("no token grids supplied")
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    labels = [int(y) for _, y in samples]
    classes = sorted(set(labels))
    remap = {y: i for i, y in enumerate(classes)}
    ys = [remap[y] for y in labels]
    zt = [g.z_t for g, _ in samples]
    zf = [g.z_f for g, _ in samples]
    used_t, dom_t = _dominance_stream(zt, ys, n_codes, len(classes))
    used_f, dom_f = _dominance_stream(zf, ys, n_codes, len(classes))
    if len(used_t) == 0 or len(used_f) == 0:
        raise ValueError("no codes were used; tokenize some records first")
    spec_t = sum(1 for v in dom_t.values() if v >= tau)
    spec_f = sum(1 for v in dom_f.values() if v >= tau)
    pairs = set()
    for g, _ in samples:
        pairs.update(zip(g.z_t.reshape(-1).tolist(), g.z_f.reshape(-1).tolist()))
    return DominanceReport(
        tau=tau,
        used_t=int(len(used_t)),
        used_f=int(len(used_f)),
        specific_t=spec_t,
        specific_f=spec_f,
        ratio_t=spec_t / len(used_t),
        ratio_f=spec_f / len(used_f),
        dominance_t=dom_t,
        dominance_f=dom_f,
        distinct_pairs=len(pairs),
    )
