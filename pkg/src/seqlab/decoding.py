"""Greedy and beam-search decoding over the extended vocabulary.

Both decoders run grad-free on a parameter snapshot.  Structural symbols
(padding, the start marker) and the unknown token are never emitted; the
end token is admissible only once a hypothesis has at least `min_len`
content tokens.  Copied out-of-vocabulary ids are fed back into the
decoder as the unknown embedding (they have no embedding rows of their
own), and are mapped back to their source surface forms at text time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import END_ID, PAD_ID, START_ID, UNK_ID, EncodedExample, Batch, make_batch
from .errors import ContractError
from .model import (
    DecodeContext,
    EncoderOutput,
    ModelConfig,
    Params,
    decode_step,
    encode,
    prepare_decoder,
)
from .tensor import Tensor, no_grad, tensor

__all__ = [
    "BANNED_IDS",
    "Hypothesis",
    "greedy_decode",
    "greedy_decode_batch",
    "beam_search",
    "score_sequence",
]

BANNED_IDS = (PAD_ID, UNK_ID, START_ID)


@dataclass(frozen=True)
class Hypothesis:
    """One decoded candidate.

    `tokens` are the emitted content ids in the extended vocabulary (no
    start/end markers); `logp` is the exact sum of per-step log P_f over
    every chosen token, including the end token when `finished`; `coverage`
    is the sum of this hypothesis's own attention vectors.
    """

    tokens: tuple[int, ...]
    logp: float
    state: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    coverage: np.ndarray | None
    finished: bool = False

    @property
    def steps(self) -> int:
        return len(self.tokens) + (1 if self.finished else 0)

    @property
    def score(self) -> float:
        """Length-normalized log-probability (sum over steps / steps)."""
        return self.logp / max(1, self.steps)


def _single_context(params: Params, cfg: ModelConfig, example: EncodedExample):
    batch = make_batch([example], dtype=cfg.np_dtype)
    enc = encode(params, cfg, batch.src_ids, batch.src_mask)
    return prepare_decoder(params, cfg, enc, batch.src_mask, batch.src_ext, batch.max_oov)


def _tile(ctx: DecodeContext, k: int) -> DecodeContext:
    """Replicate a one-row context into a k-row batch."""
    if k == 1:
        return ctx

    def rep(t: Tensor) -> Tensor:
        return tensor(np.repeat(t.values, k, axis=0))

    enc = ctx.enc
    tiled = EncoderOutput(
        states=rep(enc.states),
        init1=(rep(enc.init1[0]), rep(enc.init1[1])),
        init2=(rep(enc.init2[0]), rep(enc.init2[1])),
        src_len=enc.src_len,
    )
    return DecodeContext(
        params=ctx.params,
        cfg=ctx.cfg,
        enc=tiled,
        enc_feat=rep(ctx.enc_feat),
        penalty=rep(ctx.penalty),
        src_ext=np.repeat(ctx.src_ext, k, axis=0),
        ext_size=ctx.ext_size,
        d1=ctx.d1,
        d2=ctx.d2,
    )


def greedy_decode_batch(
    params: Params, cfg: ModelConfig, batch: Batch, max_len: int, min_len: int = 0
) -> list[list[int]]:
    """Argmax decode of every row; ties pick the lowest token id."""
    if min_len > max_len:
        raise ContractError(f"min_len {min_len} exceeds max_len {max_len}")
    bsz = batch.src_ids.shape[0]
    outputs: list[list[int]] = [[] for _ in range(bsz)]
    if max_len == 0:
        return outputs
    with no_grad():
        enc = encode(params, cfg, batch.src_ids, batch.src_mask)
        ctx = prepare_decoder(
            params, cfg, enc, batch.src_mask, batch.src_ext, batch.max_oov
        )
        state = ctx.init_state
        coverage = ctx.fresh_coverage() if cfg.use_coverage else None
        inputs = np.full(bsz, START_ID)
        alive = np.ones(bsz, dtype=bool)
        for _ in range(max_len):
            out, state = decode_step(ctx, state, inputs, coverage)
            probs = out.final_dist.values.copy()
            probs[:, list(BANNED_IDS)] = 0.0
            for i in range(bsz):
                if len(outputs[i]) < min_len:
                    probs[i, END_ID] = 0.0
            choice = probs.argmax(axis=-1)
            # a row whose every admissible token has zero mass simply ends
            choice = np.where(probs[np.arange(bsz), choice] > 0.0, choice, END_ID)
            for i in range(bsz):
                if alive[i] and choice[i] != END_ID:
                    outputs[i].append(int(choice[i]))
            alive &= choice != END_ID
            if not alive.any():
                break
            if coverage is not None:
                coverage = tensor(coverage.values + out.alpha.values)
            inputs = np.where(choice >= cfg.vocab_size, UNK_ID, choice)
            inputs[~alive] = END_ID
    return outputs


def greedy_decode(
    params: Params, cfg: ModelConfig, example: EncodedExample, max_len: int, min_len: int = 0
) -> list[int]:
    """Greedy token ids for one source."""
    batch = make_batch([example], dtype=cfg.np_dtype)
    return greedy_decode_batch(params, cfg, batch, max_len, min_len)[0]


def beam_search(
    params: Params,
    cfg: ModelConfig,
    example: EncodedExample,
    beam: int,
    max_len: int,
    min_len: int = 0,
) -> list[Hypothesis]:
    """Beam expansion over P_f, best-first, deterministic.

    Hypotheses that choose the end token move to the finished pool with
    that step's log-probability included; the rest are pruned to the top
    `beam` by cumulative log-probability.  Anything still alive at
    `max_len` is kept as a forced (unfinished) candidate.  The return is
    sorted by length-normalized score and always holds at least one entry.
    """
    if beam < 1:
        raise ContractError(f"beam must be >= 1, got {beam}")
    if min_len > max_len:
        raise ContractError(f"min_len {min_len} exceeds max_len {max_len}")
    with no_grad():
        base = _single_context(params, cfg, example)
        src_len = base.enc.src_len
        init_cov = np.zeros(src_len, dtype=cfg.np_dtype) if cfg.use_coverage else None
        live = [
            Hypothesis(
                tokens=(),
                logp=0.0,
                state=tuple(s.values[0] for s in base.init_state),
                coverage=init_cov,
            )
        ]
        finished: list[Hypothesis] = []
        contexts: dict[int, DecodeContext] = {1: base}
        for _ in range(max_len):
            k = len(live)
            ctx = contexts.get(k)
            if ctx is None:
                ctx = contexts[k] = _tile(base, k)
            state = tuple(
                tensor(np.stack([h.state[j] for h in live])) for j in range(4)
            )
            inputs = np.array(
                [h.tokens[-1] if h.tokens else START_ID for h in live]
            )
            inputs = np.where(inputs >= cfg.vocab_size, UNK_ID, inputs)
            cov = (
                tensor(np.stack([h.coverage for h in live]))
                if cfg.use_coverage
                else None
            )
            out, new_state = decode_step(ctx, state, inputs, cov)
            probs = out.final_dist.values
            with np.errstate(divide="ignore"):
                logp = np.log(probs)
            logp[:, list(BANNED_IDS)] = -np.inf
            for i, h in enumerate(live):
                if len(h.tokens) < min_len:
                    logp[i, END_ID] = -np.inf
            totals = logp + np.array([h.logp for h in live])[:, None]
            flat = totals.ravel()
            # stable sort: ties resolve to the earlier parent, then lower id
            order = np.argsort(-flat, kind="stable")
            width = probs.shape[1]
            alphas = out.alpha.values
            rows = tuple(s.values for s in new_state)
            next_live: list[Hypothesis] = []
            for idx in order:
                if len(next_live) >= beam:
                    break
                score = float(flat[idx])
                if score == -np.inf:
                    break
                i, tok = divmod(int(idx), width)
                parent = live[i]
                cov_i = (
                    parent.coverage + alphas[i] if cfg.use_coverage else None
                )
                child_state = tuple(r[i] for r in rows)
                if tok == END_ID:
                    finished.append(
                        Hypothesis(parent.tokens, score, child_state, cov_i, True)
                    )
                else:
                    next_live.append(
                        Hypothesis(parent.tokens + (tok,), score, child_state, cov_i)
                    )
            live = next_live
            if not live:
                break
    pool = finished + live
    if not pool:  # max_len 0, or no admissible first token
        pool = [
            Hypothesis((), 0.0, tuple(s.values[0] for s in base.init_state), init_cov)
        ]
    pool.sort(key=lambda h: (-h.score, h.tokens))
    return pool[:beam]


def score_sequence(
    params: Params,
    cfg: ModelConfig,
    example: EncodedExample,
    token_ids,
    include_end: bool = False,
) -> float:
    """Teacher-forced sum of log P_f over `token_ids` (extended vocabulary).

    The exact quantity beam search accumulates for a hypothesis with these
    tokens; with `include_end` the end token's final step is added, matching
    a finished hypothesis.
    """
    token_ids = list(token_ids)
    targets = token_ids + ([END_ID] if include_end else [])
    with no_grad():
        ctx = _single_context(params, cfg, example)
        state = ctx.init_state
        coverage = ctx.fresh_coverage() if cfg.use_coverage else None
        prev = START_ID
        total = 0.0
        for tok in targets:
            if not 0 <= tok < ctx.ext_size:
                raise ContractError(
                    f"score_sequence: id {tok} outside extended vocabulary "
                    f"of size {ctx.ext_size}"
                )
            out, state = decode_step(ctx, state, np.array([prev]), coverage)
            with np.errstate(divide="ignore"):
                total += float(np.log(out.final_dist.values[0, tok]))
            if coverage is not None:
                coverage = tensor(coverage.values + out.alpha.values)
            prev = tok if tok < cfg.vocab_size else UNK_ID
    return total
