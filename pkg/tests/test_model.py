"""Model forward pass: shapes, distribution invariants, coverage, gradients."""

import numpy as np
import pytest

from conftest import TINY_SPEC, tiny_batch, tiny_config
from seqlab.data import UNK_ID, encode_example, make_batch, Example
from seqlab.errors import ContractError
from seqlab.model import (
    ModelConfig,
    attention_step,
    decode_step,
    encode,
    final_distribution,
    forward_loss,
    mask_penalty,
    param_shapes,
    step_nll,
    vocab_distribution,
)
from seqlab.sharing import single_task_params
from seqlab.tensor import Tensor, backward, gradient_check, matmul, minimum, reduce_sum, tensor


class TestConfigAndShapes:
    def test_full_scale_preset(self):
        cfg = ModelConfig.full_scale()
        assert (cfg.vocab_size, cfg.emb_dim, cfg.hidden) == (50000, 128, 256)

    def test_bad_vocab_size(self):
        with pytest.raises(ContractError):
            ModelConfig(vocab_size=4)

    def test_bad_dtype(self):
        with pytest.raises(ContractError):
            ModelConfig(vocab_size=20, dtype="float16")

    def test_all_tags_covered(self):
        shapes = param_shapes(tiny_config())
        assert set(shapes) == {"Emb", "E1", "E2", "Attn", "D1", "D2", "Out", "Ptr"}

    def test_key_shapes(self):
        cfg = tiny_config()
        shapes = param_shapes(cfg)
        h, d, v, a = cfg.hidden, cfg.emb_dim, cfg.vocab_size, cfg.attention_dim
        assert shapes["Emb"]["table"] == (v, d)
        assert shapes["E2"]["fwd_wi"] == (2 * h, h)   # layer 2 consumes both directions
        assert shapes["Attn"]["enc_w"] == (2 * h, a)
        assert shapes["Out"]["mix_w"] == (3 * h, h)
        assert shapes["Ptr"]["ctx_w"] == (2 * h, 1)
        assert shapes["D1"]["init_h_w"] == (2 * h, h)


def run_steps(cfg, params, batch, n_steps=None, use_coverage=True):
    """Drive decode_step by hand, returning per-step outputs and coverages."""
    from seqlab.model import prepare_decoder
    from seqlab.tensor import add

    enc = encode(params.groups, cfg, batch.src_ids, batch.src_mask)
    ctx = prepare_decoder(params.groups, cfg, enc, batch.src_mask, batch.src_ext, batch.max_oov)
    state = ctx.init_state
    coverage = ctx.fresh_coverage() if use_coverage else None
    outs, covs = [], []
    steps = n_steps or batch.dec_in.shape[1]
    for t in range(steps):
        covs.append(None if coverage is None else coverage.values.copy())
        out, state = decode_step(ctx, state, batch.dec_in[:, t], coverage)
        if coverage is not None:
            coverage = add(coverage, out.alpha)
        outs.append(out)
    return outs, covs


class TestDistributionInvariants:
    def test_all_sum_to_one_and_nonnegative(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        outs, _ = run_steps(cfg, params, batch)
        for out in outs:
            for dist in (out.alpha, out.vocab_dist, out.final_dist):
                v = dist.values
                assert (v >= 0).all()
                np.testing.assert_allclose(v.sum(axis=-1), 1.0, atol=1e-9)

    def test_masked_positions_exactly_zero(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        outs, _ = run_steps(cfg, params, batch)
        pad = batch.src_mask == 0
        assert pad.any(), "fixture should include padding"
        for out in outs:
            assert (out.alpha.values[pad] == 0.0).all()

    def test_p_gen_strictly_inside_unit_interval(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        outs, _ = run_steps(cfg, params, batch)
        for out in outs:
            assert (out.p_gen.values > 0).all() and (out.p_gen.values < 1).all()

    def test_final_distribution_mixes_by_gate(self):
        p = tensor(np.array([[0.6]]))
        pv = tensor(np.array([[0.5, 0.5, 0.0]]))
        pc = tensor(np.array([[0.0, 0.5, 0.5]]))
        mixed = final_distribution(p, pv, pc)
        np.testing.assert_allclose(mixed.values, [[0.3, 0.5, 0.2]], atol=1e-15)

    def test_final_distribution_zero_extends_vocab(self):
        p = tensor(np.array([[0.5]]))
        pv = tensor(np.array([[1.0, 0.0]]))
        pc = tensor(np.array([[0.0, 0.0, 0.5, 0.5]]))
        mixed = final_distribution(p, pv, pc)
        np.testing.assert_allclose(mixed.values, [[0.5, 0.0, 0.25, 0.25]])

    def test_final_distribution_width_check(self):
        p = tensor(np.ones((1, 1)))
        with pytest.raises(ContractError):
            final_distribution(p, tensor(np.ones((1, 4))), tensor(np.ones((1, 2))))


class TestCoverage:
    def test_coverage_is_running_attention_sum(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        outs, covs = run_steps(cfg, params, batch)
        # coverage before step t equals the exact sum of earlier attentions
        acc = np.zeros_like(batch.src_mask)
        for out, cov in zip(outs, covs):
            np.testing.assert_array_equal(cov, acc)
            acc = acc + out.alpha.values

    def test_step_zero_coverage_term_is_exactly_zero(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        outs, covs = run_steps(cfg, params, batch, n_steps=1)
        overlap = minimum(outs[0].alpha, tensor(covs[0]))
        assert reduce_sum(overlap).item() == 0.0

    def test_overlap_term_value(self):
        alpha = tensor(np.array([0.6, 0.4]))
        cov = tensor(np.array([0.5, 1.0]))
        assert reduce_sum(minimum(alpha, cov)).item() == pytest.approx(0.9, abs=1e-15)

    def test_coverage_changes_loss(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        with_cov = forward_loss(params.groups, cfg, batch, use_coverage=True)
        without = forward_loss(params.groups, cfg, batch, use_coverage=False)
        assert with_cov.coverage is not None and without.coverage is None
        assert with_cov.total.item() == pytest.approx(
            with_cov.nll.item() + with_cov.coverage.item()
        )
        assert without.total.item() == pytest.approx(without.nll.item())

    def test_cov_weight_scales_total(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        half = forward_loss(params.groups, cfg, batch, cov_weight=0.5)
        assert half.total.item() == pytest.approx(
            half.nll.item() + 0.5 * half.coverage.item()
        )


class TestPaddingInvariance:
    def test_extra_padding_changes_nothing(self):
        cfg = tiny_config()
        params = single_task_params(cfg, seed=3)
        vocab = TINY_SPEC.vocab()
        ex = encode_example(Example(("w01", "w02", "w03"), ("w01", "w02")), vocab)
        short = make_batch([ex])
        padded = make_batch([ex])
        extra = 3
        for name in ("src_ids", "src_ext"):
            arr = getattr(padded, name)
            setattr(padded, name, np.pad(arr, ((0, 0), (0, extra))))
        padded.src_mask = np.pad(padded.src_mask, ((0, 0), (0, extra)))

        loss_a = forward_loss(params.groups, cfg, short, collect_steps=True)
        loss_b = forward_loss(params.groups, cfg, padded, collect_steps=True)
        assert abs(loss_a.total.item() - loss_b.total.item()) < 1e-9
        for sa, sb in zip(loss_a.steps, loss_b.steps):
            np.testing.assert_allclose(
                sa.alpha.values, sb.alpha.values[:, : sa.alpha.shape[1]], atol=1e-9
            )
            assert (sb.alpha.values[:, sa.alpha.shape[1] :] == 0).all()


class TestLossValues:
    def test_certain_prediction_gives_zero_nll(self):
        dist = tensor(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]))
        logp = step_nll(dist, np.array([1, 0]))
        np.testing.assert_array_equal(logp.values, [0.0, 0.0])

    def test_gold_id_out_of_range(self):
        with pytest.raises(ContractError):
            step_nll(tensor(np.ones((1, 3)) / 3), np.array([3]))

    def test_loss_finite_and_positive(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        loss = forward_loss(params.groups, cfg, batch)
        assert np.isfinite(loss.total.item())
        assert loss.nll.item() > 0
        assert loss.coverage.item() >= 0

    def test_no_pointer_collapses_oov_targets(self):
        cfg = tiny_config(use_pointer=False)
        params = single_task_params(cfg, seed=2)
        batch, _ = tiny_batch(with_oov=True)
        assert (batch.dec_out >= cfg.vocab_size).any(), "need OOV targets"
        loss = forward_loss(params.groups, cfg, batch, collect_steps=True)
        for out in loss.steps:
            assert out.final_dist.shape[-1] == cfg.vocab_size
            assert out.p_gen is None

    def test_float32_mode_runs(self):
        cfg = tiny_config(dtype="float32")
        params = single_task_params(cfg, seed=2)
        batch, _ = tiny_batch()
        loss = forward_loss(params.groups, cfg, batch)
        assert loss.total.values.dtype == np.float32


class TestEncoderContracts:
    def test_empty_row_rejected(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        mask = batch.src_mask.copy()
        mask[0] = 0.0
        with pytest.raises(ContractError, match="real token"):
            encode(params.groups, cfg, batch.src_ids, mask)

    def test_decode_step_rejects_extended_input_ids(self, tiny_setup):
        from seqlab.model import prepare_decoder

        cfg, params, batch, _ = tiny_setup
        enc = encode(params.groups, cfg, batch.src_ids, batch.src_mask)
        ctx = prepare_decoder(params.groups, cfg, enc, batch.src_mask, batch.src_ext, batch.max_oov)
        bad = np.full(batch.size, cfg.vocab_size, dtype=np.int64)
        with pytest.raises(ContractError, match="in-vocabulary"):
            decode_step(ctx, ctx.init_state, bad, None)

    def test_final_encoder_state_ignores_padding(self):
        # A row padded by 3 ends in the same decoder start state as the
        # unpadded version of the same tokens.
        cfg = tiny_config()
        params = single_task_params(cfg, seed=5)
        vocab = TINY_SPEC.vocab()
        ex = encode_example(Example(("w04", "w05"), ("w04",)), vocab)
        a = make_batch([ex])
        enc_a = encode(params.groups, cfg, a.src_ids, a.src_mask)
        ids = np.pad(a.src_ids, ((0, 0), (0, 3)))
        mask = np.pad(a.src_mask, ((0, 0), (0, 3)))
        enc_b = encode(params.groups, cfg, ids, mask)
        for (ha, ca), (hb, cb) in [(enc_a.init1, enc_b.init1), (enc_a.init2, enc_b.init2)]:
            np.testing.assert_allclose(ha.values, hb.values, atol=1e-12)
            np.testing.assert_allclose(ca.values, cb.values, atol=1e-12)


class TestAttention:
    def test_attention_without_coverage_feature(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        enc = encode(params.groups, cfg, batch.src_ids, batch.src_mask)
        pen = mask_penalty(batch.src_mask)
        state = enc.init2[0]
        alpha, ctx = attention_step(params.groups["Attn"], state, enc.states, None, pen)
        assert alpha.shape == batch.src_ids.shape
        assert ctx.shape == (batch.size, 2 * cfg.hidden)
        np.testing.assert_allclose(alpha.values.sum(axis=1), 1.0, atol=1e-12)

    def test_coverage_feature_shifts_attention(self, tiny_setup):
        cfg, params, batch, _ = tiny_setup
        enc = encode(params.groups, cfg, batch.src_ids, batch.src_mask)
        pen = mask_penalty(batch.src_mask)
        state = enc.init2[0]
        base, _ = attention_step(params.groups["Attn"], state, enc.states, None, pen)
        # uneven coverage: softmax cancels a uniform feature, so load one side
        lopsided = np.zeros_like(batch.src_mask)
        lopsided[:, 0] = 5.0
        loaded, _ = attention_step(
            params.groups["Attn"], state, enc.states, tensor(lopsided), pen,
        )
        assert not np.allclose(base.values, loaded.values)


class TestModelGradients:
    def test_full_loss_gradient_check_small(self):
        """Every parameter of a small model against central differences."""
        spec = TINY_SPEC
        vocab = spec.vocab()
        cfg = ModelConfig(vocab_size=len(vocab), emb_dim=3, hidden=3, attn_dim=4)
        params = single_task_params(cfg, seed=7, init_range=0.5)
        rng = np.random.default_rng(3)
        from seqlab.data import gen_copy
        enc = [encode_example(e, vocab) for e in gen_copy(rng, 2, spec)]
        batch = make_batch(enc)
        arrays = {k: t.values for k, t in params.flat().items()}

        def build(leaves):
            groups = {tag: {} for tag in params.groups}
            for key, leaf in leaves.items():
                tag, name = key.split("/")
                groups[tag][name] = leaf
            return forward_loss(groups, cfg, batch).total

        # Step 1e-4 balances truncation against float64 cancellation noise
        # on the smallest-magnitude coordinates.
        report = gradient_check(build, arrays, step=1e-4, tolerance=5e-5)
        assert report.passed, report.summary()
