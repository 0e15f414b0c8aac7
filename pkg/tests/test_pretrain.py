"""Training-loop tests: masking, the masked-prediction objective, optimizer
and schedule arithmetic, checkpoint round trips, resume equivalence, and
divergence handling."""

import json
import os

import numpy as np
import pytest

from codebrain.numerics import Tensor, backward
from codebrain.pretrain import (
    AdamW,
    CheckpointError,
    DivergenceError,
    TrainConfig,
    clip_grad_norm,
    cosine_lr,
    load_checkpoint,
    masked_token_loss,
    sample_mask,
    save_checkpoint,
    train_eegssm,
    train_tokenizer,
    write_history_csv,
)
from codebrain.ssm import EegssmConfig, EegssmModel, EegssmOutput
from codebrain.tokenizer import TokenGrid, TokenizerModel
from test_tokenizer import make_grid, tiny_config


class TestSampleMask:
    def test_r_zero_masks_nothing(self):
        assert not sample_mask((4, 8), 0.0, seed=1).bits.any()

    def test_r_one_masks_everything(self):
        assert sample_mask((4, 8), 1.0, seed=1).bits.all()

    def test_out_of_range_ratio_raises(self):
        with pytest.raises(ValueError):
            sample_mask((4, 8), -0.1, seed=1)
        with pytest.raises(ValueError):
            sample_mask((4, 8), 1.1, seed=1)

    def test_half_ratio_concentration(self):
        pat = sample_mask((100, 100), 0.5, seed=7)
        frac = pat.bits.mean()
        assert 0.48 <= frac <= 0.52

    def test_regeneratable_from_seed(self):
        p1 = sample_mask((5, 9), 0.3, seed=123)
        p2 = sample_mask((5, 9), p1.ratio, p1.seed)
        np.testing.assert_array_equal(p1.bits, p2.bits)

    def test_flat_layout(self):
        pat = sample_mask((3, 4), 0.5, seed=2)
        np.testing.assert_array_equal(pat.flat, pat.bits.reshape(-1))


def logits_output(z_t, z_f, k, fill=0.0, boost=None):
    """Build an EegssmOutput with constant logits, optionally boosting the
    target class by `boost` at every position."""
    b, s = z_t.shape
    lt = np.full((b, s, k), fill, dtype=np.float32)
    lf = np.full((b, s, k), fill, dtype=np.float32)
    if boost is not None:
        for i in range(b):
            for j in range(s):
                lt[i, j, z_t[i, j]] += boost
                lf[i, j, z_f[i, j]] += boost
    return EegssmOutput(
        features=Tensor(np.zeros((b, s, 1), dtype=np.float32)),
        logits_t=Tensor(lt, requires_grad=True),
        logits_f=Tensor(lf, requires_grad=True),
    )


class TestMaskedTokenLoss:
    def test_uniform_logits_hand_value(self):
        rng = np.random.default_rng(0)
        k = 256
        z_t = rng.integers(0, k, size=(2, 10))
        z_f = rng.integers(0, k, size=(2, 10))
        mask = rng.random((2, 10)) < 0.5
        out = logits_output(z_t, z_f, k)
        loss = masked_token_loss(out, (z_t, z_f), mask)
        np.testing.assert_allclose(loss.item(), 2 * np.log(256), rtol=1e-5)

    def test_perfect_logits_near_zero(self):
        rng = np.random.default_rng(1)
        k = 16
        z_t = rng.integers(0, k, size=(1, 8))
        z_f = rng.integers(0, k, size=(1, 8))
        mask = np.ones((1, 8), dtype=bool)
        out = logits_output(z_t, z_f, k, boost=40.0)
        assert masked_token_loss(out, (z_t, z_f), mask).item() < 1e-6

    def test_empty_mask_raises(self):
        z = np.zeros((1, 4), dtype=np.int64)
        out = logits_output(z, z, 8)
        with pytest.raises(ValueError):
            masked_token_loss(out, (z, z), np.zeros((1, 4), dtype=bool))

    def test_unmasked_positions_get_zero_gradient(self):
        rng = np.random.default_rng(2)
        k = 8
        z_t = rng.integers(0, k, size=(2, 6))
        z_f = rng.integers(0, k, size=(2, 6))
        mask = np.zeros((2, 6), dtype=bool)
        mask[0, 1] = mask[1, 4] = True
        out = logits_output(z_t, z_f, k, fill=0.3)
        loss = masked_token_loss(out, (z_t, z_f), mask)
        backward(loss)
        for g in (out.logits_t.grad, out.logits_f.grad):
            assert np.all(g[~mask] == 0.0)
            assert np.abs(g[mask]).max() > 0

    def test_token_grid_input_matches_arrays(self):
        rng = np.random.default_rng(3)
        k = 8
        grid = TokenGrid(
            z_t=rng.integers(0, k, size=(2, 3)).astype(np.int32),
            z_f=rng.integers(0, k, size=(2, 3)).astype(np.int32),
        )
        mask = np.array([[1, 0, 1, 0, 0, 1]], dtype=bool)
        out1 = logits_output(grid.z_t.reshape(1, -1), grid.z_f.reshape(1, -1), k, fill=0.1)
        l_grid = masked_token_loss(out1, grid, mask).item()
        out2 = logits_output(grid.z_t.reshape(1, -1), grid.z_f.reshape(1, -1), k, fill=0.1)
        l_arr = masked_token_loss(out2, (grid.z_t.reshape(1, -1), grid.z_f.reshape(1, -1)), mask).item()
        assert l_grid == l_arr

    def test_mean_over_masked_positions(self):
        # doubling the masked count with identical per-position CE keeps the mean
        k = 4
        z = np.zeros((1, 8), dtype=np.int64)
        m1 = np.zeros((1, 8), dtype=bool)
        m1[0, :2] = True
        m2 = np.zeros((1, 8), dtype=bool)
        m2[0, :4] = True
        l1 = masked_token_loss(logits_output(z, z, k), (z, z), m1).item()
        l2 = masked_token_loss(logits_output(z, z, k), (z, z), m2).item()
        np.testing.assert_allclose(l1, l2, rtol=1e-6)


class TestCosineSchedule:
    def test_exact_endpoints(self):
        assert abs(cosine_lr(0, 100, 1e-3, 1e-5) - 1e-3) < 1e-9
        assert abs(cosine_lr(100, 100, 1e-3, 1e-5) - 1e-5) < 1e-9

    def test_midpoint(self):
        np.testing.assert_allclose(cosine_lr(50, 100, 2.0, 1.0), 1.5, rtol=1e-12)

    def test_monotone_decreasing(self):
        vals = [cosine_lr(s, 200, 1e-3, 1e-6) for s in range(201)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_clamps_out_of_range_steps(self):
        assert cosine_lr(300, 100, 1e-3, 1e-5) == cosine_lr(100, 100, 1e-3, 1e-5)

    def test_invalid_total_raises(self):
        with pytest.raises(ValueError):
            cosine_lr(0, 0, 1e-3, 1e-5)


class TestClipGradNorm:
    def test_large_gradients_scaled_to_max(self):
        p = Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
        p.grad = np.full(4, 10.0, dtype=np.float32)
        pre = clip_grad_norm({"p": p}, 5.0)
        np.testing.assert_allclose(pre, 20.0, rtol=1e-6)
        np.testing.assert_allclose(np.linalg.norm(p.grad), 5.0, rtol=1e-5)

    def test_small_gradients_untouched(self):
        p = Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
        g = np.array([0.1, 0.2, -0.1, 0.0], dtype=np.float32)
        p.grad = g.copy()
        clip_grad_norm({"p": p}, 5.0)
        np.testing.assert_array_equal(p.grad, g)

    def test_global_norm_across_params(self):
        a = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        b = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        a.grad = np.full(3, 4.0, dtype=np.float32)
        b.grad = np.full(3, 3.0, dtype=np.float32)
        none = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
        pre = clip_grad_norm({"a": a, "b": b, "c": none}, 1.0)
        np.testing.assert_allclose(pre, np.sqrt(3 * 16 + 3 * 9), rtol=1e-6)
        total = np.linalg.norm(np.concatenate([a.grad, b.grad]))
        np.testing.assert_allclose(total, 1.0, rtol=1e-5)


class TestAdamW:
    def test_matches_reference_formulas(self):
        p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        opt = AdamW({"p": p}, betas=(0.9, 0.99), eps=1e-8, weight_decay=0.0)
        w = np.array([1.0, -2.0])
        m = np.zeros(2)
        v = np.zeros(2)
        rng = np.random.default_rng(4)
        for t in range(1, 4):
            g = rng.normal(size=2)
            p.grad = g.astype(np.float32)
            opt.step(0.1)
            gg = p.grad.astype(np.float64)
            m = 0.9 * m + 0.1 * gg
            v = 0.99 * v + 0.01 * gg * gg
            w = w - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-8)
            np.testing.assert_allclose(p.data, w, rtol=1e-5)

    def test_decoupled_decay_with_zero_gradient(self):
        p = Tensor(np.array([4.0], dtype=np.float32), requires_grad=True)
        opt = AdamW({"p": p}, weight_decay=0.5)
        p.grad = np.zeros(1, dtype=np.float32)
        opt.step(0.1)
        # zero moments -> adaptive term 0; only decay applies: 4 - 0.1*0.5*4
        np.testing.assert_allclose(p.data, [3.8], rtol=1e-6)

    def test_missing_gradient_skipped(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        q = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
        opt = AdamW({"p": p, "q": q}, weight_decay=0.5)
        p.grad = np.ones(1, dtype=np.float32)
        opt.step(0.1)
        assert q.data[0] == 2.0  # untouched, decay included

    def test_state_round_trip(self):
        p = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
        opt = AdamW({"p": p})
        p.grad = np.array([0.5, -0.5], dtype=np.float32)
        opt.step(0.01)
        state = opt.state_dict()
        opt2 = AdamW({"p": p})
        opt2.load_state_dict(state)
        assert opt2.t == 1
        np.testing.assert_array_equal(opt2.m["p"], opt.m["p"])
        np.testing.assert_array_equal(opt2.v["p"], opt.v["p"])


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(peak_lr=1e-6, min_lr=1e-3)
        with pytest.raises(ValueError):
            TrainConfig(mask_ratio=0.0)
        with pytest.raises(ValueError):
            TrainConfig(mask_ratio=1.0)
        with pytest.raises(ValueError):
            TrainConfig(steps=0)
        with pytest.raises(ValueError):
            TrainConfig(clip_norm=0.0)


class TestCheckpoint:
    def sample_state(self):
        rng = np.random.default_rng(5)
        return {
            "w": rng.normal(size=(3, 4)).astype(np.float32),
            "b": rng.normal(size=4).astype(np.float64),
            "steps": np.arange(5, dtype=np.int64),
        }

    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "ckpt")
        tensors = self.sample_state()
        save_checkpoint(path, tensors, {"lr": 0.1}, step=7, meta={"note": "x"})
        ck = load_checkpoint(path)
        assert ck.step == 7
        assert ck.config == {"lr": 0.1}
        assert ck.meta == {"note": "x"}
        for k, v in tensors.items():
            np.testing.assert_array_equal(ck.tensors[k], v)
            assert ck.tensors[k].dtype == v.dtype

    def test_save_load_save_identical_bytes(self, tmp_path):
        p1 = str(tmp_path / "c1")
        p2 = str(tmp_path / "c2")
        tensors = self.sample_state()
        save_checkpoint(p1, tensors, {"a": 1}, step=3)
        ck = load_checkpoint(p1)
        save_checkpoint(p2, ck.tensors, ck.config, ck.step, ck.meta)
        for name in ("manifest.json", "tensors.bin"):
            b1 = open(os.path.join(p1, name), "rb").read()
            b2 = open(os.path.join(p2, name), "rb").read()
            assert b1 == b2, f"{name} differs after round trip"

    def test_truncated_blob_rejected(self, tmp_path):
        path = str(tmp_path / "ckpt")
        save_checkpoint(path, self.sample_state(), {}, step=0)
        blob = os.path.join(path, "tensors.bin")
        data = open(blob, "rb").read()
        open(blob, "wb").write(data[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = str(tmp_path / "ckpt")
        save_checkpoint(path, self.sample_state(), {}, step=0)
        man = os.path.join(path, "manifest.json")
        j = json.load(open(man))
        j["version"] = 99
        json.dump(j, open(man, "w"))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "nope"))


def stage1_setup(seed=0, n_records=6):
    rng = np.random.default_rng(seed)
    model = TokenizerModel(tiny_config(), np.random.default_rng(seed))
    dataset = [make_grid(rng, c=1, n=4, t=16) for _ in range(n_records)]
    return model, dataset


class TestTrainTokenizer:
    def config(self, steps=8, **kw):
        base = dict(steps=steps, batch_size=2, peak_lr=1e-3, min_lr=1e-5,
                    betas=(0.9, 0.99), weight_decay=1e-2, seed=11)
        base.update(kw)
        return TrainConfig(**base)

    def test_runs_and_reports(self):
        model, data = stage1_setup()
        history = train_tokenizer(model, data, self.config())
        assert len(history) == 8
        for row in history:
            assert np.isfinite(float(row["total"]))
            assert {"freq_recon", "temporal_recon", "contrastive", "codebook", "unused_t", "unused_f"} <= set(row)

    def test_deterministic_replay(self):
        m1, data = stage1_setup()
        h1 = train_tokenizer(m1, data, self.config())
        m2, _ = stage1_setup()
        h2 = train_tokenizer(m2, data, self.config())
        assert h1 == h2
        for k, v in m1.state_dict().items():
            np.testing.assert_array_equal(v, m2.state_dict()[k])

    def test_unused_counts_non_increasing(self):
        model, data = stage1_setup()
        history = train_tokenizer(model, data, self.config(steps=12))
        for key in ("unused_t", "unused_f"):
            vals = [row[key] for row in history]
            assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = self.config(steps=10)
        m1, data = stage1_setup()
        h_full = train_tokenizer(m1, data, cfg)

        m2, _ = stage1_setup()
        train_tokenizer(m2, data, cfg, out_dir=str(tmp_path / "full"), checkpoint_every=5)
        m3, _ = stage1_setup()
        h_rest = train_tokenizer(
            m3, data, cfg, resume_from=str(tmp_path / "full" / "step_000005")
        )
        assert h_rest == h_full[5:]
        for k, v in m3.state_dict().items():
            np.testing.assert_array_equal(v, m1.state_dict()[k])

    def test_config_mismatch_refused(self, tmp_path):
        model, data = stage1_setup()
        out = str(tmp_path / "run")
        train_tokenizer(model, data, self.config(steps=4), out_dir=out, checkpoint_every=2)
        m2, _ = stage1_setup()
        with pytest.raises(CheckpointError):
            train_tokenizer(m2, data, self.config(steps=4, peak_lr=5e-4),
                            resume_from=os.path.join(out, "step_000002"))

    def test_divergence_aborts_with_checkpoint(self, tmp_path):
        model, data = stage1_setup()
        model.input_proj.w.data[0, 0] = np.nan
        out = str(tmp_path / "run")
        with pytest.raises(DivergenceError):
            train_tokenizer(model, data, self.config(), out_dir=out)
        assert os.path.exists(os.path.join(out, "diverged", "manifest.json"))

    def test_empty_dataset_raises(self):
        model, _ = stage1_setup()
        with pytest.raises(ValueError):
            train_tokenizer(model, [], self.config())

    def test_writes_history_and_final_checkpoint(self, tmp_path):
        model, data = stage1_setup()
        out = str(tmp_path / "run")
        train_tokenizer(model, data, self.config(steps=3), out_dir=out)
        assert os.path.exists(os.path.join(out, "final", "tensors.bin"))
        lines = open(os.path.join(out, "history_stage1.csv")).read().strip().split("\n")
        assert lines[0].startswith("step,lr,total,")
        assert len(lines) == 4


def stage2_setup(seed=0, n_records=6, k=12):
    rng = np.random.default_rng(seed)
    cfg = EegssmConfig(
        patch_len=16, features=8, blocks=1, kernel_len=16, kernel_base=4,
        window=3, codebook_size=k, p_drop=0.0,
    )
    model = EegssmModel(cfg, np.random.default_rng(seed))
    data = []
    for _ in range(n_records):
        grid = make_grid(rng, c=2, n=8, t=16)
        tokens = TokenGrid(
            z_t=rng.integers(0, k, size=(2, 8)).astype(np.int32),
            z_f=rng.integers(0, k, size=(2, 8)).astype(np.int32),
        )
        data.append((grid, tokens))
    return model, data


class TestTrainEegssm:
    def config(self, steps=6, **kw):
        base = dict(steps=steps, batch_size=2, peak_lr=1e-3, min_lr=1e-5,
                    betas=(0.9, 0.999), weight_decay=5e-3, mask_ratio=0.5, seed=21)
        base.update(kw)
        return TrainConfig(**base)

    def test_runs_and_reports(self):
        model, data = stage2_setup()
        history = train_eegssm(model, data, self.config())
        assert len(history) == 6
        for row in history:
            assert np.isfinite(float(row["loss"]))
            assert 0.0 <= float(row["acc_t"]) <= 1.0

    def test_initial_loss_near_two_log_k(self):
        model, data = stage2_setup(k=12)
        history = train_eegssm(model, data, self.config(steps=1, peak_lr=0.0, min_lr=0.0))
        assert abs(float(history[0]["loss"]) - 2 * np.log(12)) / (2 * np.log(12)) < 0.05

    def test_deterministic_replay(self):
        m1, data = stage2_setup()
        h1 = train_eegssm(m1, data, self.config())
        m2, _ = stage2_setup()
        h2 = train_eegssm(m2, data, self.config())
        assert h1 == h2

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = self.config(steps=8)
        m1, data = stage2_setup()
        h_full = train_eegssm(m1, data, cfg)
        m2, _ = stage2_setup()
        train_eegssm(m2, data, cfg, out_dir=str(tmp_path / "run"), checkpoint_every=4)
        m3, _ = stage2_setup()
        h_rest = train_eegssm(m3, data, cfg, resume_from=str(tmp_path / "run" / "step_000004"))
        assert h_rest == h_full[4:]

    def test_divergence_detected(self):
        model, data = stage2_setup()
        model.embed.w.data[0, 0] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(DivergenceError):
            train_eegssm(model, data, self.config())


class TestHistoryCsv:
    def test_round_trip(self, tmp_path):
        rows = [{"step": 0, "loss": "1.5"}, {"step": 1, "loss": "1.2"}]
        path = tmp_path / "h.csv"
        write_history_csv(rows, path)
        lines = path.read_text().strip().split("\n")
        assert lines == ["step,loss", "0,1.5", "1,1.2"]

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_history_csv([], tmp_path / "h.csv")
