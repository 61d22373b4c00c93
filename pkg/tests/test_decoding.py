"""Greedy and beam-search decoding."""

import itertools

import numpy as np
import pytest

from conftest import TINY_SPEC, tiny_batch, tiny_config
from seqlab.data import (
    END_ID,
    PAD_ID,
    START_ID,
    UNK_ID,
    Example,
    SynthSpec,
    encode_example,
    gen_copy,
    make_batch,
)
from seqlab.decoding import (
    Hypothesis,
    beam_search,
    greedy_decode,
    greedy_decode_batch,
    score_sequence,
)
from seqlab.errors import ContractError
from seqlab.model import decode_step, encode, prepare_decoder
from seqlab.sharing import single_task_params
from seqlab.tensor import no_grad, tensor


def fresh(seed=0, **overrides):
    cfg = tiny_config(**overrides)
    params = single_task_params(cfg, seed=seed, init_range=0.5)
    return cfg, params


def one_example(seed=1, with_oov=True):
    spec = TINY_SPEC if with_oov else SynthSpec(
        content_words=16, oov_pool=5, min_len=4, max_len=6, oov_rate=0.0
    )
    rng = np.random.default_rng(seed)
    ex = gen_copy(rng, 1, spec)[0]
    return encode_example(ex, spec.vocab())


class TestGreedy:
    def test_deterministic(self):
        cfg, params = fresh()
        ex = one_example()
        a = greedy_decode(params, cfg, ex, max_len=8)
        b = greedy_decode(params, cfg, ex, max_len=8)
        assert a == b

    def test_max_len_zero_is_empty(self):
        cfg, params = fresh()
        assert greedy_decode(params, cfg, one_example(), max_len=0) == []

    def test_emits_only_admissible_ids(self):
        cfg, params = fresh()
        for seed in range(5):
            ex = one_example(seed)
            ids = greedy_decode(params, cfg, ex, max_len=10)
            assert len(ids) <= 10
            for tok in ids:
                assert tok not in (PAD_ID, UNK_ID, START_ID, END_ID)
                assert 0 <= tok < cfg.vocab_size + len(ex.oovs)

    def test_min_len_defers_end(self):
        cfg, params = fresh()
        ex = one_example()
        ids = greedy_decode(params, cfg, ex, max_len=10, min_len=4)
        assert len(ids) >= 4

    def test_batch_matches_single(self):
        cfg, params = fresh()
        batch, _ = tiny_batch(n=4, seed=2)
        batched = greedy_decode_batch(params, cfg, batch, max_len=8)
        for i, enc_ex in enumerate(batch.examples):
            solo = greedy_decode(params, cfg, enc_ex, max_len=8)
            assert batched[i] == solo

    def test_padding_rows_do_not_change_output(self):
        # decoding one source alone and alongside a longer padded row agree
        cfg, params = fresh()
        spec = TINY_SPEC
        rng = np.random.default_rng(3)
        short = encode_example(gen_copy(rng, 1, spec)[0], spec.vocab())
        longer_spec = SynthSpec(
            content_words=16, oov_pool=5, min_len=10, max_len=12
        )
        longer = encode_example(gen_copy(rng, 1, longer_spec)[0], spec.vocab())
        alone = greedy_decode_batch(params, cfg, make_batch([short]), max_len=8)[0]
        padded = greedy_decode_batch(params, cfg, make_batch([short, longer]), max_len=8)[0]
        assert alone == padded

    def test_min_len_validation(self):
        cfg, params = fresh()
        with pytest.raises(ContractError, match="min_len"):
            greedy_decode(params, cfg, one_example(), max_len=2, min_len=3)

    def test_no_pointer_model_decodes(self):
        cfg, params = fresh(use_pointer=False)
        ids = greedy_decode(params, cfg, one_example(with_oov=False), max_len=6)
        assert all(0 <= t < cfg.vocab_size for t in ids)


class TestBeam:
    def test_beam_one_equals_greedy(self):
        cfg, params = fresh()
        for seed in range(4):
            ex = one_example(seed)
            hyp = beam_search(params, cfg, ex, beam=1, max_len=8)[0]
            assert list(hyp.tokens) == greedy_decode(params, cfg, ex, max_len=8)

    def test_returns_sorted_capped_list(self):
        cfg, params = fresh()
        hyps = beam_search(params, cfg, one_example(), beam=3, max_len=6)
        assert 1 <= len(hyps) <= 3
        scores = [h.score for h in hyps]
        assert scores == sorted(scores, reverse=True)

    def test_always_at_least_one_hypothesis(self):
        cfg, params = fresh()
        hyps = beam_search(params, cfg, one_example(), beam=2, max_len=0)
        assert len(hyps) == 1
        assert hyps[0].tokens == () and hyps[0].logp == 0.0

    def test_min_len_blocks_early_end(self):
        cfg, params = fresh()
        hyps = beam_search(params, cfg, one_example(), beam=4, max_len=8, min_len=2)
        for h in hyps:
            assert len(h.tokens) >= 2

    def test_logp_is_sum_of_step_logps(self):
        cfg, params = fresh()
        ex = one_example()
        for h in beam_search(params, cfg, ex, beam=3, max_len=5):
            replay = score_sequence(params, cfg, ex, h.tokens, include_end=h.finished)
            assert h.logp == pytest.approx(replay, rel=1e-10, abs=1e-10)

    def test_coverage_is_own_attention_sum(self):
        cfg, params = fresh()
        ex = one_example()
        hyp = beam_search(params, cfg, ex, beam=2, max_len=5)[0]
        # replay the hypothesis and accumulate attention by hand
        with no_grad():
            batch = make_batch([ex], dtype=cfg.np_dtype)
            enc = encode(params, cfg, batch.src_ids, batch.src_mask)
            ctx = prepare_decoder(params, cfg, enc, batch.src_mask, batch.src_ext, batch.max_oov)
            state = ctx.init_state
            coverage = ctx.fresh_coverage()
            total = np.zeros(enc.src_len)
            prev = START_ID
            targets = list(hyp.tokens) + ([END_ID] if hyp.finished else [])
            for tok in targets:
                out, state = decode_step(ctx, state, np.array([prev]), coverage)
                total += out.alpha.values[0]
                coverage = tensor(coverage.values + out.alpha.values)
                prev = tok if tok < cfg.vocab_size else UNK_ID
        np.testing.assert_allclose(hyp.coverage, total, atol=1e-12)

    def test_exhaustive_beam_matches_enumeration(self):
        # content alphabet of 3 tokens, length 2: beam 9 must recover the
        # argmax over all 9 sequences under summed log P_f
        spec = SynthSpec(
            content_words=3, oov_pool=2, min_len=3, max_len=4, oov_rate=0.0, keyword_pool=2
        )
        cfg = tiny_config(vocab_size=7)
        params = single_task_params(cfg, seed=3, init_range=0.5)
        content = [4, 5, 6]
        rng = np.random.default_rng(11)
        for _ in range(6):
            ex = encode_example(gen_copy(rng, 1, spec)[0], spec.vocab())
            best_ids, best_lp = None, -np.inf
            for seq in itertools.product(content, repeat=2):
                lp = score_sequence(params, cfg, ex, seq)
                if lp > best_lp:
                    best_ids, best_lp = seq, lp
            hyp = beam_search(params, cfg, ex, beam=9, max_len=2, min_len=2)[0]
            assert hyp.tokens == best_ids
            assert hyp.logp == pytest.approx(best_lp, rel=1e-12)

    def test_no_coverage_model(self):
        cfg, params = fresh(use_coverage=False)
        hyps = beam_search(params, cfg, one_example(), beam=2, max_len=4)
        assert hyps[0].coverage is None

    def test_validation(self):
        cfg, params = fresh()
        with pytest.raises(ContractError, match="beam"):
            beam_search(params, cfg, one_example(), beam=0, max_len=3)
        with pytest.raises(ContractError, match="min_len"):
            beam_search(params, cfg, one_example(), beam=2, max_len=3, min_len=4)

    def test_score_normalizes_by_steps(self):
        h = Hypothesis(tokens=(5, 6), logp=-3.0, state=(None,) * 4, coverage=None, finished=True)
        assert h.steps == 3
        assert h.score == pytest.approx(-1.0)
        forced = Hypothesis(tokens=(5, 6), logp=-3.0, state=(None,) * 4, coverage=None)
        assert forced.steps == 2
        assert forced.score == pytest.approx(-1.5)


class TestScoreSequence:
    def test_rejects_out_of_range_ids(self):
        cfg, params = fresh()
        ex = one_example()
        too_big = cfg.vocab_size + len(ex.oovs)
        with pytest.raises(ContractError, match="outside extended"):
            score_sequence(params, cfg, ex, [too_big])

    def test_end_extends_sum(self):
        cfg, params = fresh()
        ex = one_example()
        base = score_sequence(params, cfg, ex, [4, 5])
        with_end = score_sequence(params, cfg, ex, [4, 5], include_end=True)
        assert with_end < base  # adds one more negative log term
