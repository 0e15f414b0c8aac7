"""Frozen-backbone evaluation: a three-layer classification head over pooled
backbone features, its training loop with best-validation selection, and the
metric suite (Cohen's kappa, balanced accuracy, weighted F1, AUROC, AUC-PR)
computed from scratch in float64.

Feature extraction mean-pools the backbone's per-position outputs over the
windows of each channel, giving one vector per channel. The head then
aggregates across channels (layer 1), compresses to a 200-dim vector
(layer 2), and maps to class logits (layer 3), with ELU and dropout between
layers. The backbone is never updated: features are computed once, outside
any gradient tape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .numerics import Tensor, backward, cross_entropy, dropout, no_grad
from .pretrain import AdamW, cosine_lr
from .signal import PatchGrid
from .ssm import EegssmModel, stack_forward

__all__ = [
    "MetricsReport",
    "ProbeConfig",
    "ProbeHead",
    "auc_pr",
    "auroc",
    "cohen_kappa",
    "compute_metrics",
    "confusion_matrix",
    "extract_features",
    "probe_forward",
    "train_probe",
    "train_probe_on_features",
]


# ---- metrics -------------------------------------------------------------------


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError("predictions and labels must be matching 1-D arrays")
    if p.size == 0:
        raise ValueError("empty input")
    if y.min() < 0 or y.max() >= n_classes or p.min() < 0 or p.max() >= n_classes:
        raise ValueError("class ids out of range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def cohen_kappa(cm: np.ndarray) -> float:
    """Agreement beyond chance from a confusion matrix (rows = truth)."""
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    if n == 0:
        raise ValueError("empty confusion matrix")
    p_o = np.trace(cm) / n
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / (n * n)
    if p_e == 1.0:
        raise ValueError("kappa undefined: labels (or predictions) are single-class")
    return float((p_o - p_e) / (1.0 - p_e))


def balanced_accuracy(cm: np.ndarray) -> float:
    """Mean per-class recall over classes that appear in the labels."""
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    present = support > 0
    recall = np.diag(cm)[present] / support[present]
    return float(recall.mean())


def weighted_f1(cm: np.ndarray) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm)
    f1 = np.zeros(cm.shape[0])
    for k in range(cm.shape[0]):
        denom = support[k] + predicted[k]
        if denom > 0:
            f1[k] = 2.0 * tp[k] / denom  # == 2PR/(P+R) without 0/0 cases
    total = support.sum()
    return float((f1 * support).sum() / total)


def _roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tie-grouped ROC curve from (0,0) to (1,1), thresholds descending."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    # group equal scores so ties move diagonally in one step
    boundary = np.nonzero(np.diff(s))[0]
    idx = np.concatenate([boundary, [s.size - 1]])
    tp = np.cumsum(y == 1)[idx]
    fp = np.cumsum(y == 0)[idx]
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    return fpr, tpr


def auroc(scores, labels) -> float:
    """Area under the tie-grouped ROC curve (trapezoidal integration).

    Equals the Mann-Whitney pairwise statistic with ties counted 1/2.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    fpr, tpr = _roc_points(s, y)
    return float(((tpr[1:] + tpr[:-1]) * np.diff(fpr)).sum() / 2.0)


def auc_pr(scores, labels) -> float:
    """Area under the precision-recall curve by right-continuous steps."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_pos = int((y == 1).sum())
    if n_pos == 0 or (y == 0).sum() == 0:
        raise ValueError("AUC-PR needs both classes present")
    order = np.argsort(-s, kind="stable")
    ys = y[order]
    boundary = np.nonzero(np.diff(s[order]))[0]
    idx = np.concatenate([boundary, [ys.size - 1]])
    tp = np.cumsum(ys == 1)[idx].astype(np.float64)
    n_at = (idx + 1).astype(np.float64)
    precision = tp / n_at
    recall = tp / n_pos
    prev_r = 0.0
    area = 0.0
    for p, r in zip(precision, recall):
        area += (r - prev_r) * p
        prev_r = r
    return float(area)


@dataclass
class MetricsReport:
    """Classification quality summary; AUROC/AUC-PR populate for binary tasks."""

    task: str
    kappa: float
    balanced_acc: float
    weighted_f1: float
    confusion: np.ndarray
    support: np.ndarray
    auroc: float | None = None
    auc_pr: float | None = None

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "kappa": self.kappa,
            "balanced_acc": self.balanced_acc,
            "weighted_f1": self.weighted_f1,
            "support": self.support.tolist(),
            "confusion": self.confusion.tolist(),
        }
        if self.auroc is not None:
            out["auroc"] = self.auroc
            out["auc_pr"] = self.auc_pr
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerow(["task", self.task])
            for name in ("kappa", "balanced_acc", "weighted_f1"):
                w.writerow([name, f"{getattr(self, name):.6f}"])
            if self.auroc is not None:
                w.writerow(["auroc", f"{self.auroc:.6f}"])
                w.writerow(["auc_pr", f"{self.auc_pr:.6f}"])

    def confusion_to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            k = self.confusion.shape[0]
            w.writerow(["true\\pred"] + [f"pred_{j}" for j in range(k)])
            for i in range(k):
                w.writerow([f"true_{i}"] + self.confusion[i].tolist())


def compute_metrics(predictions, labels, scores=None, task: str = "multiclass", n_classes: int | None = None) -> MetricsReport:
    """Score hard predictions (and, for binary tasks, positive-class scores).

    `scores` is required when task == "binary": it supplies the ranking for
    AUROC and AUC-PR. Labels must contain at least two distinct classes, else
    chance agreement is 1 and kappa is undefined.
    """
    if task not in ("binary", "multiclass"):
        raise ValueError(f"unknown task {task!r}")
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.size == 0:
        raise ValueError("empty input")
    if n_classes is None:
        n_classes = int(max(p.max(), y.max())) + 1
    if task == "binary" and n_classes > 2:
        raise ValueError("binary task with more than two classes")
    cm = confusion_matrix(p, y, n_classes)
    report = MetricsReport(
        task=task,
        kappa=cohen_kappa(cm),
        balanced_acc=balanced_accuracy(cm),
        weighted_f1=weighted_f1(cm),
        confusion=cm,
        support=cm.sum(axis=1),
    )
    if task == "binary":
        if scores is None:
            raise ValueError("binary metrics need positive-class scores")
        report.auroc = auroc(scores, y)
        report.auc_pr = auc_pr(scores, y)
    return report


# ---- probe head ----------------------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    hidden: int = 256
    compress: int = 200
    p_drop: float = 0.1
    lr: float = 1e-3
    min_lr: float = 1e-5
    steps: int = 300
    batch_size: int = 32
    eval_every: int = 25
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("steps, batch_size and eval_every must be positive")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("dropout must be in [0, 1)")


class ProbeHead:
    """Three affine maps with ELU + dropout between them.

    Layer 1 consumes the flattened (channels x features) matrix, layer 2
    compresses to a fixed-width vector, layer 3 emits class logits.
    """

    def __init__(self, channels: int, features: int, classes: int, config: ProbeConfig, rng: np.random.Generator):
        if classes < 2:
            raise ValueError("need at least two classes")
        self.channels = channels
        self.features = features
        self.classes = classes
        self.config = config
        self.layer1 = nn.Linear(channels * features, config.hidden, rng)
        self.layer2 = nn.Linear(config.hidden, config.compress, rng)
        self.layer3 = nn.Linear(config.compress, classes, rng)

    def forward(self, feats: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """(B, C, F) pooled features -> (B, classes) logits."""
        if feats.shape[-2:] != (self.channels, self.features):
            raise ValueError(
                f"expected (*, {self.channels}, {self.features}) features, got {feats.shape}"
            )
        x = feats.reshape(feats.shape[0], self.channels * self.features)
        x = self.layer1(x).elu()
        x = dropout(x, self.config.p_drop, rng, train)
        x = self.layer2(x).elu()
        x = dropout(x, self.config.p_drop, rng, train)
        return self.layer3(x)

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for name, lin in (("layer1", self.layer1), ("layer2", self.layer2), ("layer3", self.layer3)):
            out.update(nn.prefix_params(name, lin.named_params()))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_params().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.named_params().items():
            t.data = state[k].astype(t.data.dtype).copy()


def extract_features(model: EegssmModel, grids: list[PatchGrid]) -> np.ndarray:
    """Frozen-backbone features: (records, channels, features).

    Runs outside any gradient tape and pools the per-position stack output
    over each channel's windows.
    """
    feats = []
    t = model.config.patch_len
    with no_grad():
        for grid in grids:
            c, n = grid.patches.shape[:2]
            x = grid.patches.reshape(1, c * n, t).astype(np.float32)
            out = model.forward(x)  # no mask, eval mode
            per_pos = out.features.data[0]  # (S, F)
            feats.append(per_pos.reshape(c, n, -1).mean(axis=1))
    return np.stack(feats)


def probe_forward(model: EegssmModel, head: ProbeHead, grid: PatchGrid) -> np.ndarray:
    """Class logits for one record; backbone and head both in eval mode."""
    feats = extract_features(model, [grid])
    with no_grad():
        logits = head.forward(Tensor(feats))
    return logits.data[0]


# ---- probe training -------------------------------------------------------------


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _evaluate(head: ProbeHead, feats: np.ndarray, labels: np.ndarray, task: str, n_classes: int) -> MetricsReport:
    with no_grad():
        logits = head.forward(Tensor(feats)).data
    pred = logits.argmax(axis=-1)
    scores = _softmax_rows(logits)[:, 1] if task == "binary" else None
    return compute_metrics(pred, labels, scores=scores, task=task, n_classes=n_classes)


def _selection_score(report: MetricsReport, task: str) -> float:
    return report.auroc if task == "binary" else report.kappa


def train_probe_on_features(
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray],
    test_set: tuple[np.ndarray, np.ndarray],
    config: ProbeConfig,
    n_classes: int | None = None,
) -> tuple[ProbeHead, MetricsReport]:
    """Fit the head on precomputed (records, C, F) features.

    The head snapshot with the best validation selection metric (kappa for
    multiclass, AUROC for binary) is restored before the test evaluation.
    """
    x_tr, y_tr = train_set
    x_va, y_va = val_set
    x_te, y_te = test_set
    y_tr = np.asarray(y_tr, dtype=np.int64)
    y_va = np.asarray(y_va, dtype=np.int64)
    y_te = np.asarray(y_te, dtype=np.int64)
    if np.unique(y_tr).size < 2:
        raise ValueError("training labels contain a single class; nothing to separate")
    if n_classes is None:
        n_classes = int(max(y_tr.max(), y_va.max(), y_te.max())) + 1
    task = "binary" if n_classes == 2 else "multiclass"
    rng = np.random.default_rng(config.seed)
    head = ProbeHead(x_tr.shape[1], x_tr.shape[2], n_classes, config, rng)
    params = head.named_params()
    opt = AdamW(params, betas=(0.9, 0.999), weight_decay=config.weight_decay)

    best_score = -np.inf
    best_state = head.state_dict()
    n = x_tr.shape[0]
    for step in range(config.steps):
        idx = rng.choice(n, size=min(config.batch_size, n), replace=n < config.batch_size)
        logits = head.forward(Tensor(x_tr[idx]), train=True, rng=rng)
        loss = cross_entropy(logits, y_tr[idx]).mean()
        opt.zero_grad()
        backward(loss)
        opt.step(cosine_lr(step, config.steps, config.lr, config.min_lr))
        if (step + 1) % config.eval_every == 0 or step == config.steps - 1:
            report = _evaluate(head, x_va, y_va, task, n_classes)
            score = _selection_score(report, task)
            if score > best_score:
                best_score = score
                best_state = head.state_dict()

    head.load_state_dict(best_state)
    return head, _evaluate(head, x_te, y_te, task, n_classes)


def train_probe(
    model: EegssmModel,
    splits: dict[str, list[tuple[PatchGrid, int]]],
    config: ProbeConfig,
) -> tuple[ProbeHead, MetricsReport]:
    """Frozen-backbone probing over {"train"|"val"|"test": [(grid, label)]}.

    Features are extracted once per split (the backbone sees no gradients and
    is bit-identical afterwards), then the head is fit on them.
    """
    sets = {}
    for name in ("train", "val", "test"):
        if name not in splits or not splits[name]:
            raise ValueError(f"missing split {name!r}")
        grids = [g for g, _ in splits[name]]
        labels = np.array([int(y) for _, y in splits[name]], dtype=np.int64)
        sets[name] = (extract_features(model, grids), labels)
    return train_probe_on_features(sets["train"], sets["val"], sets["test"], config)
