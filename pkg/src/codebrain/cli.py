"""Command-line pipeline: data generation, both training stages, probing,
analytics, and benchmarks.

Configuration is flat ``section.key = value`` text. A preset supplies the
baseline, an optional ``--config`` file overlays it, and ``--seed`` overrides
every stage seed at once. Unknown keys are rejected before any work starts.

Every command reads and writes under one output tree::

    out/data/      records + split manifest        (gen-data)
    out/stage1/    tokenizer checkpoints + history (train-tokenizer)
    out/stage2/    backbone checkpoints + history  (train-ssm)
    out/probe/     metrics JSON/CSV                (probe)
    out/analysis/  usage/dominance CSVs, SVG plots (analyze)
    out/bench.csv  backbone scaling table          (bench)

Exit codes: 0 success, 2 invalid configuration, 3 missing prerequisite,
4 numeric divergence.
"""

from __future__ import annotations

import os


def _cap_threads() -> None:
    # must run before the first numpy import anywhere in the process:
    # BLAS pools read these variables once, at initialization
    value = os.environ.get("CODEBRAIN_THREADS")
    if value and value.isdigit() and int(value) > 0:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, value)


_cap_threads()

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import presets, signal
from .pretrain import (
    CheckpointError,
    DivergenceError,
    TrainConfig,
    load_checkpoint,
    train_eegssm,
    train_tokenizer,
)
from .probe import ProbeConfig, compute_metrics, extract_features, train_probe_on_features
from .signal import EegRecord, GeneratorSpec, PatchGrid
from .ssm import EegssmConfig, EegssmModel, bench_backbones, write_bench_csv
from .tokenizer import (
    TokenizerConfig,
    TokenizerModel,
    class_specific_ratio,
    code_usage_report,
    tokenize,
)

__all__ = ["ConfigError", "PrerequisiteError", "RunConfig", "main"]


class ConfigError(ValueError):
    """Invalid or unknown configuration; maps to exit code 2."""


class PrerequisiteError(RuntimeError):
    """A required input artifact is missing; maps to exit code 3."""


# ---- configuration -------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``section.key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key or "." not in key:
            raise ConfigError(f"line {lineno}: keys are dotted section.name pairs, got {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


_GENERATOR_SCALARS = ("channels", "sample_rate", "duration", "noise_sigma", "records_per_class")
_SECTION_FIELDS = {
    "tokenizer": {f.name for f in dataclasses.fields(TokenizerConfig)},
    "model": {f.name for f in dataclasses.fields(EegssmConfig)},
    "stage1": {f.name for f in dataclasses.fields(TrainConfig)},
    "stage2": {f.name for f in dataclasses.fields(TrainConfig)},
    "probe": {f.name for f in dataclasses.fields(ProbeConfig)} | {"seeds", "shuffled"},
    "split": {"train", "val", "test", "seed"},
    "bench": {"sizes", "features", "base", "repeats", "attention_max_len"},
    "analyze": {"tau"},
    "paths": {"data", "stage1", "stage2"},
}


def _validate_keys(values: dict[str, str]) -> None:
    for key in values:
        section, _, name = key.partition(".")
        if section == "data":
            good = name in _GENERATOR_SCALARS or (
                name.startswith("class.") and name.endswith(".bands")
            )
            if not good:
                raise ConfigError(f"unknown data key {key!r}")
        elif section in _SECTION_FIELDS:
            if name not in _SECTION_FIELDS[section]:
                raise ConfigError(f"unknown key {key!r}")
        else:
            raise ConfigError(f"unknown config section {section!r} in {key!r}")


@dataclasses.dataclass
class RunConfig:
    """Merged preset + config-file values, plus the output root and seed."""

    values: dict[str, str]
    out: Path
    seed: int | None = None

    def section(self, name: str) -> dict[str, str]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def get(self, key: str, default: str) -> str:
        return self.values.get(key, default)

    def path(self, name: str, default_rel: str) -> Path:
        raw = self.values.get(f"paths.{name}")
        return Path(raw) if raw else self.out / default_rel


def load_run(args: argparse.Namespace) -> RunConfig:
    values = presets.preset(args.preset)  # argparse restricts the choices
    if args.config is not None:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise ConfigError(f"config file not found: {cfg_path}")
        overlay = parse_config_text(cfg_path.read_text())
        if any(k.startswith("data.class.") for k in overlay):
            # the file's class list replaces the preset's, not unions with it
            for key in [k for k in values if k.startswith("data.class.")]:
                del values[key]
        values.update(overlay)
    _validate_keys(values)
    return RunConfig(values=values, out=Path(args.out), seed=args.seed)


def _convert(value: str, like, key: str):
    """Cast a config string to the type of a dataclass default."""
    try:
        if isinstance(like, bool):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            elem = like[0] if like else 0
            return tuple(int(p) if isinstance(elem, int) else float(p) for p in parts)
        return value
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def _build_dataclass(cls, section: str, run: RunConfig, **overrides):
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    kwargs = {}
    for name, raw in run.section(section).items():
        if name not in defaults:
            continue  # extra keys like probe.seeds are consumed elsewhere
        kwargs[name] = _convert(raw, defaults[name], f"{section}.{name}")
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid [{section}] configuration: {exc}") from None


def _train_config(run: RunConfig, section: str) -> TrainConfig:
    overrides = {"seed": run.seed} if run.seed is not None else {}
    return _build_dataclass(TrainConfig, section, run, **overrides)


def _generator_spec(run: RunConfig) -> GeneratorSpec:
    lines = [f"{k} = {v}" for k, v in sorted(run.section("data").items())]
    try:
        return signal.parse_generator_config("\n".join(lines))
    except ValueError as exc:
        raise ConfigError(f"invalid [data] configuration: {exc}") from None


def _split_fractions(run: RunConfig) -> tuple[tuple[float, float, float], int]:
    sec = run.section("split")
    try:
        fracs = (float(sec.get("train", "0.6")), float(sec.get("val", "0.2")), float(sec.get("test", "0.2")))
        seed = int(sec.get("seed", "0"))
    except ValueError as exc:
        raise ConfigError(f"invalid [split] configuration: {exc}") from None
    return fracs, seed


# ---- artifact loading ------------------------------------------------------------


def _load_corpus(run: RunConfig) -> tuple[list[EegRecord], dict]:
    data_dir = run.path("data", "data")
    manifest = data_dir / "manifest.json"
    if not manifest.is_file():
        raise PrerequisiteError(f"no dataset manifest at {manifest}; run gen-data first")
    info = json.loads(manifest.read_text())
    records = [signal.load_record(data_dir / name) for name in info["files"]]
    return records, info


def _grids(records: list[EegRecord], patch_len: int) -> list[PatchGrid]:
    out = []
    for rec in records:
        sec = patch_len / rec.sample_rate
        out.append(signal.patch(signal.preprocess(rec), patch_seconds=sec))
    return out


def _load_tokenizer(run: RunConfig) -> tuple[TokenizerModel, dict]:
    ckpt_dir = run.path("stage1", "stage1/final")
    if not (ckpt_dir / "manifest.json").is_file():
        raise PrerequisiteError(
            f"no tokenizer checkpoint at {ckpt_dir}; run train-tokenizer first"
        )
    ckpt = load_checkpoint(str(ckpt_dir))
    raw = {k: tuple(v) if isinstance(v, list) else v for k, v in ckpt.config["model"].items()}
    model = TokenizerModel(TokenizerConfig(**raw), np.random.default_rng(0))
    model.load_state_dict(ckpt.tensors)
    return model, ckpt.config


def _load_backbone(run: RunConfig) -> tuple[EegssmModel, dict]:
    ckpt_dir = run.path("stage2", "stage2/final")
    if not (ckpt_dir / "manifest.json").is_file():
        raise PrerequisiteError(
            f"no backbone checkpoint at {ckpt_dir}; run train-ssm first"
        )
    ckpt = load_checkpoint(str(ckpt_dir))
    model = EegssmModel(EegssmConfig(**ckpt.config["model"]), np.random.default_rng(0))
    model.load_state_dict(ckpt.tensors)
    return model, ckpt.config


# ---- commands --------------------------------------------------------------------


def cmd_gen_data(run: RunConfig, args: argparse.Namespace) -> int:
    if args.classes is not None:
        if not 2 <= args.classes <= len(presets.CLASS_MENU):
            raise ConfigError(
                f"--classes must be in 2..{len(presets.CLASS_MENU)}, got {args.classes}"
            )
        for key in [k for k in run.values if k.startswith("data.class.")]:
            del run.values[key]
        for name, bands in presets.CLASS_MENU[: args.classes]:
            run.values[f"data.class.{name}.bands"] = bands
    if args.records is not None:
        n_classes = sum(1 for k in run.values if k.startswith("data.class."))
        if args.records < n_classes or args.records % n_classes:
            raise ConfigError(
                f"--records {args.records} is not divisible by {n_classes} classes"
            )
        run.values["data.records_per_class"] = str(args.records // n_classes)

    spec = _generator_spec(run)
    fractions, split_seed = _split_fractions(run)
    seed = run.seed if run.seed is not None else 0
    data_dir = run.path("data", "data")
    data_dir.mkdir(parents=True, exist_ok=True)

    records = signal.synth_generate(spec, seed)
    files = []
    for i, rec in enumerate(records):
        name = f"record_{i:04d}.bin"
        signal.save_record(rec, data_dir / name)
        files.append(name)
    labels = [rec.label for rec in records]
    train, val, test = signal.split_stratified(labels, fractions, split_seed)
    manifest = {
        "version": 1,
        "seed": seed,
        "files": files,
        "labels": labels,
        "splits": {
            "train": train.tolist(),
            "val": val.tolist(),
            "test": test.tolist(),
        },
        "generator": {k: run.values[k] for k in sorted(run.values) if k.startswith("data.")},
    }
    (data_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(files)} records + manifest to {data_dir}")
    return 0


def cmd_train_tokenizer(run: RunConfig, args: argparse.Namespace) -> int:
    tok_cfg = _build_dataclass(TokenizerConfig, "tokenizer", run)
    train_cfg = _train_config(run, "stage1")
    records, info = _load_corpus(run)
    train_idx = info["splits"]["train"]
    grids = _grids([records[i] for i in train_idx], tok_cfg.patch_len)
    if not grids:
        raise PrerequisiteError("training split is empty")

    out_dir = run.out / "stage1"
    out_dir.mkdir(parents=True, exist_ok=True)
    model = TokenizerModel(tok_cfg, np.random.default_rng(train_cfg.seed))
    history = train_tokenizer(model, grids, train_cfg, out_dir=str(out_dir))
    print(
        f"stage-1 done: {len(history)} steps, final total loss "
        f"{history[-1]['total']}, checkpoint at {out_dir / 'final'}"
    )
    return 0


def cmd_train_ssm(run: RunConfig, args: argparse.Namespace) -> int:
    model_cfg = _build_dataclass(EegssmConfig, "model", run)
    train_cfg = _train_config(run, "stage2")
    tok_model, _ = _load_tokenizer(run)
    if tok_model.config.codebook_size != model_cfg.codebook_size:
        raise ConfigError(
            f"model.codebook_size {model_cfg.codebook_size} does not match the "
            f"tokenizer's {tok_model.config.codebook_size}"
        )
    if tok_model.config.patch_len != model_cfg.patch_len:
        raise ConfigError("model.patch_len does not match the tokenizer's patch_len")
    records, info = _load_corpus(run)
    train_idx = info["splits"]["train"]
    grids = _grids([records[i] for i in train_idx], model_cfg.patch_len)
    data = [(g, tokenize(tok_model, g)) for g in grids]

    out_dir = run.out / "stage2"
    out_dir.mkdir(parents=True, exist_ok=True)
    model = EegssmModel(model_cfg, np.random.default_rng(train_cfg.seed))
    history = train_eegssm(model, data, train_cfg, out_dir=str(out_dir))
    print(
        f"stage-2 done: {len(history)} steps, final loss {history[-1]['loss']}, "
        f"checkpoint at {out_dir / 'final'}"
    )
    return 0


def _shuffled_copy(labels: np.ndarray, splits: dict[str, np.ndarray], seed: int) -> np.ndarray:
    # permute within each split so every split keeps its label balance while
    # the label-feature pairing is destroyed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
    out = labels.copy()
    for name in sorted(splits):
        idx = splits[name]
        out[idx] = rng.permutation(out[idx])
    return out


def cmd_probe(run: RunConfig, args: argparse.Namespace) -> int:
    overrides = {"seed": run.seed} if run.seed is not None else {}
    probe_cfg = _build_dataclass(ProbeConfig, "probe", run, **overrides)
    n_seeds = _convert(run.get("probe.seeds", "1"), 1, "probe.seeds")
    shuffled = _convert(run.get("probe.shuffled", "false"), True, "probe.shuffled")
    if n_seeds < 1:
        raise ConfigError("probe.seeds must be positive")

    backbone, _ = _load_backbone(run)
    records, info = _load_corpus(run)
    labels = np.array(info["labels"], dtype=np.int64)
    n_classes = int(labels.max()) + 1
    grids = _grids(records, backbone.config.patch_len)
    features = extract_features(backbone, grids)  # backbone stays frozen
    splits = {k: np.array(v, dtype=np.intp) for k, v in info["splits"].items()}

    out_dir = run.out / "probe"
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for s in range(n_seeds):
        y = _shuffled_copy(labels, splits, probe_cfg.seed + s) if shuffled else labels
        cfg_s = dataclasses.replace(probe_cfg, seed=probe_cfg.seed + s)
        sets = {k: (features[idx], y[idx]) for k, idx in splits.items()}
        _, report = train_probe_on_features(
            sets["train"], sets["val"], sets["test"], cfg_s, n_classes=n_classes
        )
        report.to_json(out_dir / f"metrics_seed{s}.json")
        report.to_csv(out_dir / f"metrics_seed{s}.csv")
        report.confusion_to_csv(out_dir / f"confusion_seed{s}.csv")
        reports.append(report)

    metric_names = ["kappa", "balanced_acc", "weighted_f1"]
    if reports[0].auroc is not None:
        metric_names += ["auroc", "auc_pr"]
    summary = {
        name: {
            "mean": float(np.mean([getattr(r, name) for r in reports])),
            "std": float(np.std([getattr(r, name) for r in reports])),
        }
        for name in metric_names
    }
    summary["seeds"] = n_seeds
    summary["shuffled"] = bool(shuffled)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std"])
        for name in metric_names:
            w.writerow([name, f"{summary[name]['mean']:.6f}", f"{summary[name]['std']:.6f}"])
    kappa = summary["kappa"]
    print(
        f"probe done over {n_seeds} seed(s): kappa {kappa['mean']:.4f} "
        f"+/- {kappa['std']:.4f}, outputs in {out_dir}"
    )
    return 0


# ---- SVG plotting (no charting dependency) ---------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_lines(path: Path, series: dict[str, tuple[np.ndarray, np.ndarray]], title: str, y_label: str) -> None:
    """Minimal polyline plot: one line per named series, axes, and a legend."""
    width, height = 720, 400
    ml, mr, mt, mb = 60, 20, 40, 40
    xs_all = np.concatenate([np.asarray(x, dtype=np.float64) for x, _ in series.values()])
    ys_all = np.concatenate([np.asarray(y, dtype=np.float64) for _, y in series.values()])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * (width - ml - mr)

    def sy(y):
        return height - mb - (y - y0) / (y1 - y0) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="11">step</text>',
        f'<text x="14" y="{height / 2}" font-size="11" '
        f'transform="rotate(-90 14 {height / 2})" text-anchor="middle">{y_label}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{height - mb + 14}" text-anchor="middle" '
            f'font-size="10">{xv:g}</text>'
        )
        parts.append(
            f'<text x="{ml - 6}" y="{sy(yv):.1f}" text-anchor="end" font-size="10">{yv:.3g}</text>'
        )
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(float(x)):.1f},{sy(float(y)):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{width - mr - 150}" y="{mt + 14 * i + 10}" font-size="11" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def _read_history(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"empty history file {path}")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def cmd_analyze(run: RunConfig, args: argparse.Namespace) -> int:
    tau = _convert(run.get("analyze.tau", "1.0"), 1.0, "analyze.tau")
    tok_model, _ = _load_tokenizer(run)
    records, info = _load_corpus(run)
    out_dir = run.out / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)

    code_usage_report(tok_model.codebook_t).to_csv(out_dir / "usage_t.csv")
    code_usage_report(tok_model.codebook_f).to_csv(out_dir / "usage_f.csv")

    grids = _grids(records, tok_model.config.patch_len)
    samples = [(tokenize(tok_model, g), int(y)) for g, y in zip(grids, info["labels"])]
    report = class_specific_ratio(samples, tok_model.config.codebook_size, tau=tau)
    with open(out_dir / "dominance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stream", "used", "class_specific", "ratio"])
        w.writerow(["temporal", report.used_t, report.specific_t, f"{report.ratio_t:.6f}"])
        w.writerow(["frequency", report.used_f, report.specific_f, f"{report.ratio_f:.6f}"])

    distinct_t = len({int(z) for grid, _ in samples for z in grid.z_t.ravel()})
    distinct_f = len({int(z) for grid, _ in samples for z in grid.z_f.ravel()})
    with open(out_dir / "diversity.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stream", "distinct"])
        w.writerow(["temporal", distinct_t])
        w.writerow(["frequency", distinct_f])
        w.writerow(["dual", report.distinct_pairs])

    stage1_hist = run.path("stage1", "stage1/final").parent / "history_stage1.csv"
    if stage1_hist.is_file():
        h = _read_history(stage1_hist)
        _svg_lines(
            out_dir / "loss_stage1.svg",
            {k: (h["step"], h[k]) for k in ("total", "freq_recon", "temporal_recon", "contrastive", "codebook")},
            "stage-1 loss components",
            "loss",
        )
        _svg_lines(
            out_dir / "unused_codes.svg",
            {k: (h["step"], h[k]) for k in ("unused_t", "unused_f")},
            "unused codes per codebook",
            "unused",
        )
    stage2_hist = run.path("stage2", "stage2/final").parent / "history_stage2.csv"
    if stage2_hist.is_file():
        h = _read_history(stage2_hist)
        _svg_lines(
            out_dir / "loss_stage2.svg",
            {"loss": (h["step"], h["loss"]), "acc_t": (h["step"], h["acc_t"]), "acc_f": (h["step"], h["acc_f"])},
            "stage-2 masked-prediction loss and accuracy",
            "value",
        )
    print(f"analysis written to {out_dir}")
    return 0


def cmd_bench(run: RunConfig, args: argparse.Namespace) -> int:
    sec = run.section("bench")
    sizes = _convert(sec.get("sizes", "64,128,256,512"), (1,), "bench.sizes")
    features = _convert(sec.get("features", "1"), 1, "bench.features")
    base = _convert(sec.get("base", "16"), 1, "bench.base")
    repeats = _convert(sec.get("repeats", "3"), 1, "bench.repeats")
    att_max = _convert(sec.get("attention_max_len", str(1 << 12)), 1, "bench.attention_max_len")
    seed = run.seed if run.seed is not None else 0
    try:
        rows = bench_backbones(
            list(sizes),
            features=features,
            base=base,
            repeats=repeats,
            attention_max_len=att_max,
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [bench] configuration: {exc}") from None
    run.out.mkdir(parents=True, exist_ok=True)
    path = run.out / "bench.csv"
    write_bench_csv(rows, path)
    print(f"benchmark table written to {path}")
    return 0


# ---- entry point -----------------------------------------------------------------

_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-tokenizer": cmd_train_tokenizer,
    "train-ssm": cmd_train_ssm,
    "probe": cmd_probe,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codebrain",
        description="two-stage EEG tokenization + masked-prediction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} step")
        p.add_argument("--config", metavar="PATH", help="key=value config file overlaying the preset")
        p.add_argument("--preset", choices=presets.preset_names(), default="desk")
        p.add_argument("--seed", type=int, default=None, help="override every stage seed")
        p.add_argument("--out", metavar="DIR", default="runs/codebrain", help="output tree root")
        if name == "gen-data":
            p.add_argument("--classes", type=int, default=None, help="pick N classes from the band menu")
            p.add_argument("--records", type=int, default=None, help="total record count across classes")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    threads = os.environ.get("CODEBRAIN_THREADS")
    try:
        if threads is not None and (not threads.isdigit() or int(threads) < 1):
            raise ConfigError(f"CODEBRAIN_THREADS must be a positive integer, got {threads!r}")
        run = load_run(args)
        return _COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PrerequisiteError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
