"""Training loops for both stages: masking, the masked token-prediction
objective, Adam-with-decoupled-weight-decay, cosine learning-rate schedule,
gradient clipping, loss-history emission, and atomic checkpointing.

Every stochastic choice in a step (batch membership, mask bits, dropout) is
drawn from a generator seeded by (run seed, step index), so an interrupted
run resumed from a checkpoint replays exactly the steps an uninterrupted run
would have taken.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import Tensor, backward, cross_entropy
from .ssm import EegssmModel, EegssmOutput
from .tokenizer import TokenGrid, TokenizerModel, make_stage1_batch, stage1_losses

__all__ = [
    "AdamW",
    "CheckpointError",
    "DivergenceError",
    "MaskPattern",
    "TrainConfig",
    "clip_grad_norm",
    "cosine_lr",
    "load_checkpoint",
    "masked_token_loss",
    "sample_mask",
    "save_checkpoint",
    "train_eegssm",
    "train_tokenizer",
    "write_history_csv",
]


class DivergenceError(RuntimeError):
    """A loss or gradient stopped being finite; the update was not applied."""


class CheckpointError(ValueError):
    """Unreadable, truncated, or incompatible checkpoint data."""


# ---- masking -----------------------------------------------------------------


@dataclass(frozen=True)
class MaskPattern:
    """Per-(channel, window) Bernoulli mask, regeneratable from its seed."""

    bits: np.ndarray
    ratio: float
    seed: int

    @property
    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1)


def sample_mask(shape: tuple[int, ...], r: float, seed: int) -> MaskPattern:
    """Draw i.i.d. Bernoulli(r) mask bits over `shape`."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {r}")
    rng = np.random.default_rng(seed)
    bits = rng.random(shape) < r
    return MaskPattern(bits=bits, ratio=float(r), seed=int(seed))


# ---- objective ----------------------------------------------------------------


def masked_token_loss(backbone_out: EegssmOutput, tokens, mask) -> Tensor:
    """Cross entropy of both token heads, averaged over masked positions.

    `tokens` is a TokenGrid (single record; its (C, N) streams are flattened
    channel-major) or a pair of (B, S) integer arrays. `mask` is boolean with
    the same (B, S) layout. Unmasked positions are removed by multiplication
    with the 0/1 mask, so their logits receive exactly zero gradient.
    """
    if isinstance(tokens, TokenGrid):
        z_t = tokens.z_t.reshape(1, -1)
        z_f = tokens.z_f.reshape(1, -1)
    else:
        z_t, z_f = tokens
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None, :]
    z_t = np.asarray(z_t).reshape(mask.shape)
    z_f = np.asarray(z_f).reshape(mask.shape)
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValueError("mask selects no positions; nothing to predict")
    m = Tensor(mask.astype(np.float32))
    ce_t = cross_entropy(backbone_out.logits_t, z_t)
    ce_f = cross_entropy(backbone_out.logits_f, z_f)
    return ((ce_t + ce_f) * m).sum() / float(n_masked)


def _masked_accuracy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    pred = logits.argmax(axis=-1)
    hits = (pred == targets) & mask
    return float(hits.sum() / max(1, mask.sum()))


# ---- optimization --------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters shared by both stages."""

    steps: int = 200
    batch_size: int = 4
    peak_lr: float = 1e-4
    min_lr: float = 1e-6
    betas: tuple[float, float] = (0.9, 0.99)
    eps: float = 1e-8
    weight_decay: float = 5e-3
    clip_norm: float = 5.0
    mask_ratio: float = 0.5
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.peak_lr < self.min_lr:
            raise ValueError("peak lr must be >= min lr")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask ratio must be in (0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip norm must be positive")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ValueError("betas must be in [0, 1)")


def cosine_lr(step: int, total_steps: int, peak: float, minimum: float) -> float:
    """Cosine decay: exactly `peak` at step 0 and `minimum` at `total_steps`."""
    if total_steps < 1:
        raise ValueError("total_steps must be positive")
    t = min(max(step, 0), total_steps) / total_steps
    return minimum + 0.5 * (peak - minimum) * (1.0 + np.cos(np.pi * t))


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most `max_norm`.

    Returns the pre-clip norm. Parameters without gradients are skipped.
    """
    total = 0.0
    grads = [p.grad for p in params.values() if p.grad is not None]
    for g in grads:
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


class AdamW:
    """Adam moments with decoupled weight decay (decay multiplies the weight
    directly, scaled by lr, outside the adaptive term)."""

    def __init__(
        self,
        params: dict[str, Tensor],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.data.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"adam/t": np.array([self.t], dtype=np.int64)}
        for k in self.params:
            out[f"adam/m/{k}"] = self.m[k]
            out[f"adam/v/{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["adam/t"][0])
        for k in self.params:
            self.m[k] = state[f"adam/m/{k}"].copy()
            self.v[k] = state[f"adam/v/{k}"].copy()


def _check_finite(loss_value: float, params: dict[str, Tensor]) -> None:
    if not np.isfinite(loss_value):
        raise DivergenceError(f"non-finite loss {loss_value}")
    for k, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in {k}")


# ---- checkpoints ---------------------------------------------------------------

_CKPT_VERSION = 1


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path: str, tensors: dict[str, np.ndarray], config: dict, step: int, meta: dict | None = None) -> None:
    """Write a manifest + blob pair atomically (temp names, then rename).

    The manifest is canonical JSON (sorted keys, fixed separators) and the
    blob concatenates tensor bytes in sorted-name order, so saving the same
    state twice produces identical files byte for byte.
    """
    os.makedirs(path, exist_ok=True)
    entries = []
    offset = 0
    names = sorted(tensors)
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        dt = arr.dtype.newbyteorder("<")
        entries.append(
            {
                "name": name,
                "dtype": dt.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": arr.nbytes,
            }
        )
        offset += arr.nbytes
    manifest = {
        "version": _CKPT_VERSION,
        "config": config,
        "config_hash": config_hash(config),
        "step": int(step),
        "meta": meta or {},
        "tensors": entries,
        "total_bytes": offset,
    }
    man_tmp = os.path.join(path, "manifest.json.tmp")
    bin_tmp = os.path.join(path, "tensors.bin.tmp")
    with open(bin_tmp, "wb") as fh:
        for name in names:
            arr = np.ascontiguousarray(tensors[name])
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    with open(man_tmp, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
    os.replace(bin_tmp, os.path.join(path, "tensors.bin"))
    os.replace(man_tmp, os.path.join(path, "manifest.json"))


@dataclass
class Checkpoint:
    config: dict
    step: int
    meta: dict
    tensors: dict[str, np.ndarray]
    config_hash: str


def load_checkpoint(path: str) -> Checkpoint:
    man_path = os.path.join(path, "manifest.json")
    bin_path = os.path.join(path, "tensors.bin")
    try:
        with open(man_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable manifest at {man_path}: {e}") from e
    if manifest.get("version") != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')}")
    try:
        blob = open(bin_path, "rb").read()
    except OSError as e:
        raise CheckpointError(f"unreadable tensor blob at {bin_path}: {e}") from e
    if len(blob) != manifest["total_bytes"]:
        raise CheckpointError(
            f"tensor blob is {len(blob)} bytes, manifest expects {manifest['total_bytes']}"
        )
    tensors = {}
    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(blob[start : start + n], dtype=np.dtype(entry["dtype"]))
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return Checkpoint(
        config=manifest["config"],
        step=manifest["step"],
        meta=manifest.get("meta", {}),
        tensors=tensors,
        config_hash=manifest["config_hash"],
    )


def _verify_resume(ckpt: Checkpoint, config: dict) -> None:
    want = config_hash(config)
    if ckpt.config_hash != want:
        raise CheckpointError(
            "checkpoint was written under a different configuration "
            f"(hash {ckpt.config_hash[:12]}… vs {want[:12]}…); refusing to resume"
        )


# ---- history -------------------------------------------------------------------


def write_history_csv(rows: list[dict], path) -> None:
    import csv

    if not rows:
        raise ValueError("empty history")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step]))


def _derive_seed(seed: int, step: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, step, k]).generate_state(1)[0])


# ---- stage-1 loop --------------------------------------------------------------


def train_tokenizer(
    model: TokenizerModel,
    dataset: list,
    config: TrainConfig,
    out_dir: str | None = None,
    resume_from: str | None = None,
    checkpoint_every: int | None = None,
) -> list[dict]:
    """Optimize the tokenizer on a corpus of PatchGrids; returns history rows.

    Emits one row per step: learning rate, every loss component, and the
    cumulative unused-code counts of both codebooks. On a non-finite loss or
    gradient the step is NOT applied; the last good state is checkpointed to
    `out_dir`/diverged (when out_dir is set) and DivergenceError raised.
    """
    if not dataset:
        raise ValueError("empty dataset")
    params = model.named_params()
    opt = AdamW(params, betas=config.betas, eps=config.eps, weight_decay=config.weight_decay)
    full_config = {"train": _config_dict(config), "model": asdict(model.config)}
    start_step = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        _verify_resume(ckpt, full_config)
        model.load_state_dict(ckpt.tensors)
        opt.load_state_dict(ckpt.tensors)
        start_step = ckpt.step
    else:
        model.codebook_t.reset_usage()
        model.codebook_f.reset_usage()

    history: list[dict] = []
    steps_per_epoch = max(1, config.steps // max(1, config.epochs))
    for step in range(start_step, config.steps):
        rng = _step_rng(config.seed, step)
        idx = rng.choice(len(dataset), size=min(config.batch_size, len(dataset)), replace=len(dataset) < config.batch_size)
        batch = make_stage1_batch([dataset[i] for i in idx])
        lr = cosine_lr(step, config.steps, config.peak_lr, config.min_lr)

        opt.zero_grad()
        losses = stage1_losses(model, batch, train=True, rng=rng)
        total = float(losses["total"].data)
        try:
            backward(losses["total"])
            _check_finite(total, params)
        except DivergenceError:
            if out_dir is not None:
                _save_tokenizer_ckpt(model, opt, full_config, step, os.path.join(out_dir, "diverged"))
            raise
        clip_grad_norm(params, config.clip_norm)
        opt.step(lr)

        history.append(
            {
                "step": step,
                "lr": f"{lr:.8e}",
                "total": f"{total:.6f}",
                "freq_recon": f"{float(losses['freq_recon'].data):.6f}",
                "temporal_recon": f"{float(losses['temporal_recon'].data):.6f}",
                "contrastive": f"{float(losses['contrastive'].data):.6f}",
                "codebook": f"{float(losses['codebook_sg'].data):.6f}",
                "epoch": step // steps_per_epoch,
                "unused_t": model.codebook_t.unused_count(),
                "unused_f": model.codebook_f.unused_count(),
            }
        )
        if checkpoint_every and out_dir and (step + 1) % checkpoint_every == 0:
            _save_tokenizer_ckpt(model, opt, full_config, step + 1, os.path.join(out_dir, f"step_{step + 1:06d}"))

    if out_dir is not None:
        _save_tokenizer_ckpt(model, opt, full_config, config.steps, os.path.join(out_dir, "final"))
        write_history_csv(history, os.path.join(out_dir, "history_stage1.csv"))
    return history


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["betas"] = list(d["betas"])
    return d


def _save_tokenizer_ckpt(model, opt, full_config, step, path):
    tensors = dict(model.state_dict())
    tensors.update(opt.state_dict())
    save_checkpoint(path, tensors, full_config, step)


# ---- stage-2 loop --------------------------------------------------------------


def _flatten_tokens(grid: TokenGrid) -> tuple[np.ndarray, np.ndarray]:
    return grid.z_t.reshape(-1), grid.z_f.reshape(-1)


def train_eegssm(
    model: EegssmModel,
    data: list,
    config: TrainConfig,
    out_dir: str | None = None,
    resume_from: str | None = None,
    checkpoint_every: int | None = None,
) -> list[dict]:
    """Masked token-prediction training over (PatchGrid, TokenGrid) pairs.

    Each step samples a batch, draws a fresh Bernoulli mask per record (from
    the per-step seed, so runs are replayable), replaces masked positions'
    embeddings, and minimizes the summed two-head cross entropy over masked
    positions. History rows carry per-head masked top-1 accuracy.
    """
    if not data:
        raise ValueError("empty dataset")
    params = model.named_params()
    opt = AdamW(params, betas=config.betas, eps=config.eps, weight_decay=config.weight_decay)
    full_config = {"train": _config_dict(config), "model": asdict(model.config)}
    start_step = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        _verify_resume(ckpt, full_config)
        model.load_state_dict(ckpt.tensors)
        opt.load_state_dict(ckpt.tensors)
        start_step = ckpt.step

    t = model.config.patch_len
    history: list[dict] = []
    for step in range(start_step, config.steps):
        rng = _step_rng(config.seed, step)
        idx = rng.choice(len(data), size=min(config.batch_size, len(data)), replace=len(data) < config.batch_size)
        patches, z_t, z_f, masks = [], [], [], []
        for j, i in enumerate(idx):
            grid, tokens = data[i]
            c, n = grid.patches.shape[:2]
            patches.append(grid.patches.reshape(c * n, t))
            zt, zf = _flatten_tokens(tokens)
            z_t.append(zt)
            z_f.append(zf)
            for attempt in range(64):
                pat = sample_mask((c, n), config.mask_ratio, _derive_seed(config.seed, step, j * 64 + attempt))
                if pat.bits.any():
                    break
            masks.append(pat.flat)
        x = np.stack(patches).astype(np.float32)
        z_t = np.stack(z_t)
        z_f = np.stack(z_f)
        mask = np.stack(masks)
        lr = cosine_lr(step, config.steps, config.peak_lr, config.min_lr)

        opt.zero_grad()
        out = model.forward(x, mask, train=True, rng=rng)
        loss = masked_token_loss(out, (z_t, z_f), mask)
        total = float(loss.data)
        try:
            backward(loss)
            _check_finite(total, params)
        except DivergenceError:
            if out_dir is not None:
                _save_eegssm_ckpt(model, opt, full_config, step, os.path.join(out_dir, "diverged"))
            raise
        clip_grad_norm(params, config.clip_norm)
        opt.step(lr)

        history.append(
            {
                "step": step,
                "lr": f"{lr:.8e}",
                "loss": f"{total:.6f}",
                "acc_t": f"{_masked_accuracy(out.logits_t.data, z_t, mask):.4f}",
                "acc_f": f"{_masked_accuracy(out.logits_f.data, z_f, mask):.4f}",
            }
        )
        if checkpoint_every and out_dir and (step + 1) % checkpoint_every == 0:
            _save_eegssm_ckpt(model, opt, full_config, step + 1, os.path.join(out_dir, f"step_{step + 1:06d}"))

    if out_dir is not None:
        _save_eegssm_ckpt(model, opt, full_config, config.steps, os.path.join(out_dir, "final"))
        write_history_csv(history, os.path.join(out_dir, "history_stage2.csv"))
    return history


def _save_eegssm_ckpt(model, opt, full_config, step, path):
    tensors = dict(model.state_dict())
    tensors.update(opt.state_dict())
    save_checkpoint(path, tensors, full_config, step)
