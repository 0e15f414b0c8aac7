"""Tokenizer tests: quantization against brute-force search, contrastive and
reconstruction losses against hand values, straight-through gradients,
tokenization determinism, and the usage/dominance analytics."""

import numpy as np
import pytest

from codebrain.numerics import Tensor, backward, finite_diff_check, no_grad
from codebrain.signal import PatchGrid
from codebrain.tokenizer import (
    Codebook,
    Stage1Batch,
    TokenGrid,
    TokenizerConfig,
    TokenizerModel,
    class_specific_ratio,
    code_usage_report,
    codebook_loss,
    contrastive_loss,
    encode_patch,
    freq_loss,
    make_stage1_batch,
    quantize,
    stage1_losses,
    temporal_loss,
    tokenize,
)
from codebrain.tokenizer import _quantize_st


def tiny_config(**kw):
    base = dict(
        patch_len=16,
        hidden=8,
        enc_layers=1,
        dec_layers=1,
        heads=2,
        mlp_dim=16,
        codebook_size=8,
        code_dim=4,
        max_positions=64,
        conv_channels=(4, 4),
        conv_kernels=(5, 3),
        conv_strides=(2, 1),
        conv_pads=(2, 1),
    )
    base.update(kw)
    return TokenizerConfig(**base)


def tiny_batch(rng, b=2, c=1, n=4, t=16):
    s = c * n
    return Stage1Batch(
        patches=rng.normal(size=(b, s, t)).astype(np.float32),
        freq_in=rng.normal(size=(b, s, t // 2 + 1)).astype(np.float32),
        amp_target=rng.normal(size=(b, s, t)).astype(np.float32),
        phase_target=rng.normal(size=(b, s, t)).astype(np.float32),
        positions=np.broadcast_to(np.arange(s), (b, s)).copy(),
        windows_per_channel=n,
    )


def nearest_bruteforce(queries, codes):
    # exhaustive float64 search, first index wins ties
    q = queries.astype(np.float64)
    c = codes.astype(np.float64)
    d2 = ((q[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)
    return d2.argmin(axis=1)


class TestQuantize:
    def test_obvious_nearest(self):
        rng = np.random.default_rng(0)
        cb = Codebook(2, 2, rng, domain="temporal")
        cb.codes.data = np.array([[0, 0], [1, 1]], dtype=np.float32)
        idx, code = quantize(np.array([0.9, 1.2], dtype=np.float32), cb)
        assert idx == 1
        np.testing.assert_array_equal(code, [1, 1])

    def test_tie_breaks_to_lowest_index(self):
        rng = np.random.default_rng(1)
        cb = Codebook(2, 2, rng, domain="temporal")
        cb.codes.data = np.array([[0, 0], [1, 1]], dtype=np.float32)
        idx, code = quantize(np.array([0.5, 0.5], dtype=np.float32), cb)
        assert idx == 0
        np.testing.assert_array_equal(code, [0, 0])

    @pytest.mark.parametrize("k", [16, 256])
    def test_bruteforce_oracle(self, k):
        rng = np.random.default_rng(2)
        cb = Codebook(k, 8, rng, domain="frequency")
        cb.codes.data = rng.normal(size=(k, 8)).astype(np.float32)
        q = rng.normal(size=(1000, 8)).astype(np.float32)
        idx, _ = quantize(q, cb)
        np.testing.assert_array_equal(idx, nearest_bruteforce(q, cb.codes.data))

    def test_planted_duplicate_codes_tie_low(self):
        # identical code rows force exact ties; the lower index must win
        rng = np.random.default_rng(3)
        cb = Codebook(16, 4, rng, domain="temporal")
        codes = rng.normal(size=(16, 4)).astype(np.float32)
        codes[11] = codes[3]
        codes[9] = codes[5]
        cb.codes.data = codes
        q = np.concatenate([codes[3:4], codes[11:12], codes[5:6], codes[9:10]])
        idx, _ = quantize(q, cb)
        np.testing.assert_array_equal(idx, [3, 3, 5, 5])

    def test_usage_counts_sum_to_calls(self):
        rng = np.random.default_rng(4)
        cb = Codebook(8, 4, rng, domain="temporal")
        quantize(rng.normal(size=(30, 4)).astype(np.float32), cb)
        quantize(rng.normal(size=(4,)).astype(np.float32), cb)
        assert cb.usage.sum() == 31

    def test_empty_codebook_rejected(self):
        with pytest.raises(ValueError):
            Codebook(0, 4, np.random.default_rng(5), domain="temporal")

    def test_query_width_mismatch(self):
        cb = Codebook(4, 4, np.random.default_rng(6), domain="temporal")
        with pytest.raises(ValueError):
            quantize(np.zeros(3, dtype=np.float32), cb)


class TestEncodePatch:
    def test_paper_defaults_embedding_length(self):
        cfg = TokenizerConfig()  # paper-scale defaults
        assert cfg.hidden == 200
        assert cfg.conv_out_len() == 25  # floor((200+14-15)/8)+1 stays 25 through k3 s1 p1
        rng = np.random.default_rng(7)
        model = TokenizerModel(cfg, rng)
        patch = rng.normal(size=200).astype(np.float32)
        amp = rng.normal(size=200).astype(np.float32)
        e = encode_patch(model, patch, amp, position=0)
        assert e.shape == (200,)
        assert np.all(np.isfinite(e))

    def test_identical_patches_identical_embeddings(self):
        cfg = tiny_config()
        rng = np.random.default_rng(8)
        model = TokenizerModel(cfg, rng)
        patch = rng.normal(size=16).astype(np.float32)
        amp = rng.normal(size=16).astype(np.float32)
        e1 = encode_patch(model, patch, amp, position=3)
        e2 = encode_patch(model, patch, amp, position=3)
        np.testing.assert_array_equal(e1, e2)

    def test_shape_mismatch_raises(self):
        cfg = tiny_config()
        model = TokenizerModel(cfg, np.random.default_rng(9))
        with pytest.raises(ValueError):
            encode_patch(model, np.zeros(17, dtype=np.float32), np.zeros(16, dtype=np.float32))

    def test_conv_arithmetic_oracle(self):
        # output length oracle: floor((L + 2p - k)/s) + 1 per stage
        cfg = TokenizerConfig()
        length = 200
        for k, s, p in zip(cfg.conv_kernels, cfg.conv_strides, cfg.conv_pads):
            length = (length + 2 * p - k) // s + 1
        assert cfg.conv_out_len() == length == 25


class TestContrastiveLoss:
    def test_orthogonal_pairs_hand_value(self):
        h = Tensor(np.array([[1, 0], [0, 1]], dtype=np.float32))
        ht = Tensor(np.array([[1, 0], [0, 1]], dtype=np.float32))
        loss = contrastive_loss(h, ht, temperature=0.5)
        expected = np.log(1 + 2 * np.exp(-2.0))  # per-anchor value, same for all four
        np.testing.assert_allclose(loss.item(), expected, rtol=1e-5)

    @pytest.mark.parametrize("b", [2, 3, 5])
    def test_identical_embeddings_log_2b_minus_1(self, b):
        v = np.tile(np.array([0.3, -0.7, 0.2], dtype=np.float32), (b, 1))
        loss = contrastive_loss(Tensor(v.copy()), Tensor(v.copy()), 0.5)
        np.testing.assert_allclose(loss.item(), np.log(2 * b - 1), rtol=1e-5)

    def test_positive_rescaling_invariance(self):
        rng = np.random.default_rng(10)
        h = rng.normal(size=(3, 6)).astype(np.float32)
        ht = rng.normal(size=(3, 6)).astype(np.float32)
        l1 = contrastive_loss(Tensor(h.copy()), Tensor(ht.copy()), 0.5).item()
        h2 = h.copy()
        h2[1] *= 37.0
        ht2 = ht * 0.01
        l2 = contrastive_loss(Tensor(h2), Tensor(ht2), 0.5).item()
        np.testing.assert_allclose(l1, l2, rtol=1e-4)

    def test_formula_oracle_random(self):
        rng = np.random.default_rng(11)
        b, d, tau = 4, 5, 0.7
        h = rng.normal(size=(b, d))
        ht = rng.normal(size=(b, d))
        loss = contrastive_loss(Tensor(h), Tensor(ht), tau).item()
        u = np.concatenate([h, ht])
        u = u / np.linalg.norm(u, axis=1, keepdims=True)
        sims = u @ u.T / tau
        total = 0.0
        for i in range(2 * b):
            j = (i + b) % (2 * b)
            negs = [sims[i, m] for m in range(2 * b) if m != i]
            total += -sims[i, j] + np.log(np.sum(np.exp(negs)))
        np.testing.assert_allclose(loss, total / (2 * b), rtol=1e-5)

    def test_single_pair_raises(self):
        with pytest.raises(ValueError):
            contrastive_loss(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 4))), 0.5)

    def test_gradient(self):
        rng = np.random.default_rng(12)
        h0 = rng.normal(size=(3, 4))
        ht = Tensor(rng.normal(size=(3, 4)))

        def fn(x):
            return contrastive_loss(x, ht, 0.5)

        assert finite_diff_check(fn, h0, eps=1e-4) < 1e-4


class TestLosses:
    def test_zero_head_zero_target_gives_zero_freq_loss(self):
        cfg = tiny_config()
        rng = np.random.default_rng(13)
        model = TokenizerModel(cfg, rng)
        model.f_head_amp.w.data[:] = 0
        model.f_head_amp.b.data[:] = 0
        model.f_head_phase.w.data[:] = 0
        model.f_head_phase.b.data[:] = 0
        batch = tiny_batch(rng)
        batch.amp_target[:] = 0
        batch.phase_target[:] = 0
        assert freq_loss(model, batch).item() == 0.0

    def test_off_by_one_amplitude_gives_patch_len(self):
        # head pinned to constant 1, target 0: sum over T of 1^2 == T
        cfg = tiny_config(patch_len=200, conv_channels=(4,), conv_kernels=(15,),
                          conv_strides=(8,), conv_pads=(7,))
        rng = np.random.default_rng(14)
        model = TokenizerModel(cfg, rng)
        model.f_head_amp.w.data[:] = 0
        model.f_head_amp.b.data[:] = 1.0
        model.f_head_phase.w.data[:] = 0
        model.f_head_phase.b.data[:] = 0
        batch = tiny_batch(rng, t=200)
        batch.amp_target[:] = 0
        batch.phase_target[:] = 0
        np.testing.assert_allclose(freq_loss(model, batch).item(), 200.0, rtol=1e-6)

    def test_perfect_reconstruction_temporal_equals_contrastive(self):
        cfg = tiny_config()
        rng = np.random.default_rng(15)
        model = TokenizerModel(cfg, rng)
        model.t_head.w.data[:] = 0
        model.t_head.b.data[:] = 0
        batch = tiny_batch(rng)
        batch.patches[:] = 0  # input and reconstruction target both zero
        losses = stage1_losses(model, batch)
        assert losses["temporal_recon"].item() == 0.0
        assert losses["temporal"].item() == losses["contrastive"].item()

    def test_temporal_recon_matches_direct_evaluation(self):
        cfg = tiny_config()
        rng = np.random.default_rng(16)
        model = TokenizerModel(cfg, rng)
        batch = tiny_batch(rng)
        losses = stage1_losses(model, batch)
        with no_grad():
            e = model.encode(batch.patches, batch.freq_in, batch.positions, train=False)
            e_d = model.down(e)
            _, _, st = _quantize_st(model, e_d, model.codebook_t)
            y = model.t_head(model.t_decoder(model.up_t(st), False, None))
        direct = ((y.data.astype(np.float64) - batch.patches) ** 2).sum(axis=-1).mean()
        np.testing.assert_allclose(losses["temporal_recon"].item(), direct, rtol=1e-5)

    def test_total_equals_sum_of_parts(self):
        cfg = tiny_config()
        rng = np.random.default_rng(17)
        model = TokenizerModel(cfg, rng)
        batch = tiny_batch(rng)
        losses = stage1_losses(model, batch)
        parts = (
            losses["freq_recon"].item()
            + losses["sg_t"].item()
            + losses["sg_f"].item()
            + losses["contrastive"].item()
            + losses["temporal_recon"].item()
        )
        np.testing.assert_allclose(losses["total"].item(), parts, rtol=1e-6)

    def test_standalone_ops_match_components(self):
        cfg = tiny_config()
        rng = np.random.default_rng(18)
        model = TokenizerModel(cfg, rng)
        batch = tiny_batch(rng)
        losses = stage1_losses(model, batch)
        np.testing.assert_allclose(freq_loss(model, batch).item(), losses["freq_recon"].item(), rtol=1e-6)
        np.testing.assert_allclose(temporal_loss(model, batch).item(), losses["temporal"].item(), rtol=1e-6)
        np.testing.assert_allclose(codebook_loss(model, batch).item(), losses["total"].item(), rtol=1e-6)

    def test_codes_equal_to_embeddings_zero_sg_terms(self):
        cfg = tiny_config(codebook_size=8)
        rng = np.random.default_rng(19)
        model = TokenizerModel(cfg, rng)
        batch = tiny_batch(rng, b=2, n=4)  # 8 embeddings, 8 codes
        with no_grad():
            e_d = model.down(model.encode(batch.patches, batch.freq_in, batch.positions))
        flat = e_d.data.reshape(8, cfg.code_dim)
        model.codebook_t.codes.data = flat.copy()
        model.codebook_f.codes.data = flat.copy()
        losses = stage1_losses(model, batch)
        assert losses["sg_t"].item() == 0.0
        assert losses["sg_f"].item() == 0.0

    def test_sg_terms_do_not_touch_encoder(self):
        cfg = tiny_config()
        rng = np.random.default_rng(20)
        model = TokenizerModel(cfg, rng)
        batch = tiny_batch(rng)
        losses = stage1_losses(model, batch)
        backward(losses["codebook_sg"])
        assert model.codebook_t.codes.grad is not None
        assert np.abs(model.codebook_t.codes.grad).max() > 0
        for name, p in model.named_params().items():
            if not name.startswith("codebook"):
                assert p.grad is None, f"{name} received gradient from stop-gradient terms"

    def test_straight_through_gradient_identity(self):
        cfg = tiny_config()
        rng = np.random.default_rng(21)
        model = TokenizerModel(cfg, rng)
        e_d = Tensor(rng.normal(size=(2, 3, cfg.code_dim)).astype(np.float32), requires_grad=True)
        probe = rng.normal(size=(2, 3, cfg.code_dim)).astype(np.float32)
        _, _, st = _quantize_st(model, e_d, model.codebook_t)
        backward((st * Tensor(probe)).sum())
        np.testing.assert_allclose(e_d.grad, probe, rtol=1e-6)
        assert model.codebook_t.codes.grad is None  # forward substitution is detached

    def test_commitment_flag_adds_weighted_term(self):
        rng = np.random.default_rng(22)
        model0 = TokenizerModel(tiny_config(), rng)
        batch = tiny_batch(np.random.default_rng(23))
        base = stage1_losses(model0, batch)["total"].item()
        model1 = TokenizerModel(tiny_config(commitment_beta=0.25), np.random.default_rng(22))
        model1.load_state_dict(model0.state_dict())
        losses = stage1_losses(model1, batch)
        assert losses["total"].item() > base  # positive commitment distance

    def test_freq_loss_gradient_through_decoder(self):
        # FD only makes sense downstream of the quantizer: the forward value
        # of the straight-through path is the code itself, so encoder-side
        # numeric derivatives are zero by construction while the ST gradient
        # is intentionally nonzero. Decoder-side parameters are unaffected.
        cfg = tiny_config()
        rng = np.random.default_rng(24)
        model = TokenizerModel(cfg, rng)
        batch = tiny_batch(rng)
        w0 = model.up_f.w.data.copy()

        def fn(wt):
            model.up_f.w = wt
            return stage1_losses(model, batch)["freq_recon"]

        try:
            err = finite_diff_check(fn, w0, eps=1e-4, scale_relative=True)
        finally:
            model.up_f.w = Tensor(w0, requires_grad=True)
        assert err < 1e-4

    def test_temporal_loss_gradient_through_head(self):
        cfg = tiny_config()
        rng = np.random.default_rng(25)
        model = TokenizerModel(cfg, rng)
        batch = tiny_batch(rng)
        w0 = model.t_head.w.data.copy()

        def fn(wt):
            model.t_head.w = wt
            return stage1_losses(model, batch)["temporal"]

        try:
            err = finite_diff_check(fn, w0, eps=1e-4, scale_relative=True)
        finally:
            model.t_head.w = Tensor(w0, requires_grad=True)
        assert err < 1e-4


def make_grid(rng, c=2, n=4, t=16):
    return PatchGrid(
        patches=rng.normal(size=(c, n, t)).astype(np.float32),
        channel_ids=tuple(f"ch{i}" for i in range(c)),
        patch_times=np.arange(n, dtype=np.float64),
        sample_rate=t,
    )


class TestTokenize:
    def make_grid(self, rng, c=2, n=4, t=16):
        return make_grid(rng, c, n, t)

    def test_deterministic(self):
        cfg = tiny_config()
        rng = np.random.default_rng(26)
        model = TokenizerModel(cfg, rng)
        grid = self.make_grid(rng)
        g1 = tokenize(model, grid)
        g2 = tokenize(model, grid)
        np.testing.assert_array_equal(g1.z_t, g2.z_t)
        np.testing.assert_array_equal(g1.z_f, g2.z_f)

    def test_570_patch_grid(self):
        cfg = tiny_config(max_positions=1024)
        rng = np.random.default_rng(27)
        model = TokenizerModel(cfg, rng)
        grid = self.make_grid(rng, c=19, n=30)
        tokens = tokenize(model, grid)
        assert tokens.shape == (19, 30)
        assert tokens.z_t.size == 570 and tokens.z_f.size == 570
        assert tokens.z_t.min() >= 0 and tokens.z_t.max() < cfg.codebook_size
        assert tokens.z_f.min() >= 0 and tokens.z_f.max() < cfg.codebook_size

    def test_matches_per_patch_quantize(self):
        cfg = tiny_config()
        rng = np.random.default_rng(28)
        model = TokenizerModel(cfg, rng)
        grid = self.make_grid(rng)
        tokens = tokenize(model, grid)
        batch = make_stage1_batch([grid])
        with no_grad():
            e_d = model.down(model.encode(batch.patches, batch.freq_in, batch.positions))
        flat = e_d.data.reshape(-1, cfg.code_dim)
        for s in range(flat.shape[0]):
            it, _ = quantize(flat[s], model.codebook_t)
            if_, _ = quantize(flat[s], model.codebook_f)
            assert tokens.z_t.reshape(-1)[s] == it
            assert tokens.z_f.reshape(-1)[s] == if_

    def test_streams_can_disagree(self):
        # two independent codebooks generally pick different indices
        cfg = tiny_config()
        rng = np.random.default_rng(29)
        model = TokenizerModel(cfg, rng)
        grid = self.make_grid(rng, c=4, n=8)
        tokens = tokenize(model, grid)
        assert np.any(tokens.z_t != tokens.z_f)


class TestUsageReport:
    def test_fresh_codebook_all_unused(self):
        cb = Codebook(16, 4, np.random.default_rng(30), domain="temporal")
        rep = code_usage_report(cb)
        assert rep.unused == 16
        assert rep.counts.sum() == 0

    def test_self_quantization_uses_everything(self):
        cb = Codebook(16, 4, np.random.default_rng(31), domain="temporal")
        quantize(cb.codes.data.copy(), cb)
        rep = code_usage_report(cb)
        assert rep.unused == 0
        assert rep.counts.sum() == 16

    def test_csv_export(self, tmp_path):
        cb = Codebook(4, 2, np.random.default_rng(32), domain="frequency")
        cb.codes.data = np.array([[0, 0], [1, 1], [2, 2], [3, 3]], dtype=np.float32)
        quantize(np.array([[0.1, 0.1], [0.9, 1.1], [1.1, 0.9]], dtype=np.float32), cb)
        rep = code_usage_report(cb)
        path = tmp_path / "usage.csv"
        rep.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "code_index,count"
        assert lines[1] == "0,1"
        assert lines[2] == "1,2"
        assert rep.unused == 2


class TestClassSpecificRatio:
    def grid(self, z):
        z = np.asarray(z, dtype=np.int32)
        return TokenGrid(z_t=z, z_f=z.copy())

    def test_every_code_single_class_ratio_one(self):
        samples = [
            (self.grid([[0, 1]]), 0),
            (self.grid([[2, 3]]), 1),
        ]
        rep = class_specific_ratio(samples, n_codes=8)
        assert rep.ratio_t == 1.0
        assert rep.ratio_f == 1.0

    def test_perfectly_shared_codes_ratio_zero(self):
        samples = [
            (self.grid([[0, 1]]), 0),
            (self.grid([[0, 1]]), 1),
        ]
        rep = class_specific_ratio(samples, n_codes=8, tau=1.0)
        assert rep.ratio_t == 0.0
        assert rep.ratio_f == 0.0

    def test_bruteforce_count_oracle(self):
        rng = np.random.default_rng(33)
        n_codes, n_classes, tau = 12, 3, 0.8
        samples = []
        for _ in range(30):
            z_t = rng.integers(0, n_codes, size=(2, 5)).astype(np.int32)
            z_f = rng.integers(0, n_codes, size=(2, 5)).astype(np.int32)
            samples.append((TokenGrid(z_t=z_t, z_f=z_f), int(rng.integers(0, n_classes))))
        rep = class_specific_ratio(samples, n_codes=n_codes, tau=tau)
        for stream, got in (("z_t", rep.ratio_t), ("z_f", rep.ratio_f)):
            counts = np.zeros((n_codes, n_classes))
            for grid_, label in samples:
                for code in getattr(grid_, stream).reshape(-1):
                    counts[code, label] += 1
            used = counts.sum(axis=1) > 0
            dom = np.zeros(n_codes)
            dom[used] = counts[used].max(axis=1) / counts[used].sum(axis=1)
            expected = (dom[used] >= tau).sum() / used.sum()
            np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_empty_samples_raise(self):
        with pytest.raises(ValueError):
            class_specific_ratio([], n_codes=4)


class TestBatchAssembly:
    def test_channel_major_layout_and_targets(self):
        rng = np.random.default_rng(34)
        c, n, t = 2, 4, 16
        grid = make_grid(rng, c, n, t)
        batch = make_stage1_batch([grid])
        assert batch.patches.shape == (1, c * n, t)
        # slot layout: channel-major, window n at slot c*N + n
        np.testing.assert_array_equal(batch.patches[0, 5], grid.patches[1, 1])
        assert batch.freq_in.shape == (1, c * n, t // 2 + 1)
        assert batch.amp_target.shape == (1, c * n, t)
        assert batch.windows_per_channel == n

    def test_mismatched_shapes_raise(self):
        rng = np.random.default_rng(35)
        g1 = make_grid(rng, 2, 4, 16)
        g2 = make_grid(rng, 2, 3, 16)
        with pytest.raises(ValueError):
            make_stage1_batch([g1, g2])
        with pytest.raises(ValueError):
            make_stage1_batch([])
