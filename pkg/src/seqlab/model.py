"""Pointer-generator sequence-to-sequence model with coverage attention.

Architecture, end to end:

* embeddings shared between encoder and decoder within a task (tag ``Emb``);
* a two-layer bidirectional LSTM encoder (tags ``E1``, ``E2``), where the
  second layer consumes the concatenated forward/backward outputs of the
  first and its own concatenated outputs form the attention memory;
* a two-layer unidirectional LSTM decoder (tags ``D1``, ``D2``) whose
  layers start from linear projections of the matching encoder layer's
  final forward+backward states;
* additive attention over encoder states with an optional coverage term
  (tag ``Attn``), where coverage is the running sum of past attention;
* a two-layer output projection from [decoder state; context] to the
  vocabulary softmax (tag ``Out``);
* a scalar generate-vs-copy gate from context, decoder state, and the
  current input embedding (tag ``Ptr``), mixing the vocabulary softmax
  with attention mass scattered onto extended (source OOV) ids.

Every function takes parameters as a mapping ``tag -> name -> Tensor`` so a
sharing registry can alias or duplicate groups without the model noticing.
Padded source positions receive an additive -1e9 score penalty, which the
max-shifted softmax turns into exactly zero attention.

The per-step coverage penalty is sum_i min(attention_i, coverage_i); both
it and the token negative log-likelihood are averaged over real decoder
steps per example, then over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Batch, UNK_ID
from .errors import ContractError
from .tensor import (
    Tensor,
    add,
    concat,
    gather,
    log,
    matmul,
    minimum,
    multiply,
    reduce_sum,
    reshape,
    scale,
    scatter_add,
    sigmoid,
    softmax,
    subtract,
    tanh,
    tensor,
)

TAGS = ("Emb", "E1", "E2", "Attn", "D1", "D2", "Out", "Ptr")
GATES = ("i", "f", "g", "o")
MASK_PENALTY = -1e9

ParamGroup = Mapping[str, Tensor]
Params = Mapping[str, ParamGroup]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    emb_dim: int = 32
    hidden: int = 64
    attn_dim: int | None = None
    use_pointer: bool = True
    use_coverage: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ContractError(f"vocab_size {self.vocab_size} below reserved ids + 1")
        if min(self.emb_dim, self.hidden) < 1:
            raise ContractError("emb_dim and hidden must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ContractError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def attention_dim(self) -> int:
        return self.attn_dim if self.attn_dim is not None else 2 * self.hidden

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @classmethod
    def full_scale(cls, vocab_size: int = 50000, **overrides) -> "ModelConfig":
        """The large-corpus preset: 256 hidden units, 128-dim embeddings."""
        merged = dict(vocab_size=vocab_size, emb_dim=128, hidden=256)
        merged.update(overrides)
        return cls(**merged)


def _cell_shapes(prefix: str, in_dim: int, hid: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for g in GATES:
        shapes[f"{prefix}_w{g}"] = (in_dim, hid)
        shapes[f"{prefix}_u{g}"] = (hid, hid)
        shapes[f"{prefix}_b{g}"] = (hid,)
    return shapes


def param_shapes(cfg: ModelConfig) -> dict[str, dict[str, tuple[int, ...]]]:
    """Every parameter array, grouped by sharing tag."""
    d, h, a, v = cfg.emb_dim, cfg.hidden, cfg.attention_dim, cfg.vocab_size
    init = {
        "init_h_w": (2 * h, h),
        "init_h_b": (h,),
        "init_c_w": (2 * h, h),
        "init_c_b": (h,),
    }
    return {
        "Emb": {"table": (v, d)},
        "E1": _cell_shapes("fwd", d, h) | _cell_shapes("bwd", d, h),
        "E2": _cell_shapes("fwd", 2 * h, h) | _cell_shapes("bwd", 2 * h, h),
        "D1": _cell_shapes("cell", d, h) | init,
        "D2": _cell_shapes("cell", h, h) | dict(init),
        "Attn": {
            "enc_w": (2 * h, a),
            "dec_w": (h, a),
            "cov_w": (a,),
            "score_v": (a,),
            "bias": (a,),
        },
        "Out": {
            "mix_w": (3 * h, h),
            "mix_b": (h,),
            "vocab_w": (h, v),
            "vocab_b": (v,),
        },
        "Ptr": {
            "ctx_w": (2 * h, 1),
            "state_w": (h, 1),
            "emb_w": (d, 1),
            "bias": (1,),
        },
    }


def cell_weights(cell: ParamGroup, prefix: str) -> tuple[Tensor, ...]:
    """Prefetch one LSTM cell's weights in (w, u, b) x (i, f, g, o) order."""
    out: list[Tensor] = []
    for g in GATES:
        out += [cell[f"{prefix}_w{g}"], cell[f"{prefix}_u{g}"], cell[f"{prefix}_b{g}"]]
    return tuple(out)


def lstm_step(weights: tuple[Tensor, ...], x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell update (input, forget, cell, output gates; no peepholes)."""
    wi, ui, bi, wf, uf, bf, wg, ug, bg, wo, uo, bo = weights
    i = sigmoid(add(add(matmul(x, wi), matmul(h, ui)), bi))
    f = sigmoid(add(add(matmul(x, wf), matmul(h, uf)), bf))
    g = tanh(add(add(matmul(x, wg), matmul(h, ug)), bg))
    o = sigmoid(add(add(matmul(x, wo), matmul(h, uo)), bo))
    c_new = add(multiply(f, c), multiply(i, g))
    h_new = multiply(o, tanh(c_new))
    return h_new, c_new


def _run_direction(
    cell: ParamGroup,
    prefix: str,
    inputs: Sequence[Tensor],
    masks: Sequence[tuple[Tensor, Tensor]],
    reverse: bool,
    batch: int,
    hid: int,
    dt,
) -> tuple[list[Tensor], Tensor, Tensor]:
    weights = cell_weights(cell, prefix)
    h = tensor(np.zeros((batch, hid), dtype=dt))
    c = tensor(np.zeros((batch, hid), dtype=dt))
    outs: list[Tensor | None] = [None] * len(inputs)
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    for t in order:
        h_new, c_new = lstm_step(weights, inputs[t], h, c)
        keep, drop = masks[t]
        # Padded steps freeze the state, so the final state always belongs
        # to the last (first, when reversed) real token.
        h = add(multiply(h_new, keep), multiply(h, drop))
        c = add(multiply(c_new, keep), multiply(c, drop))
        outs[t] = h
    return outs, h, c  # type: ignore[return-value]


@dataclass
class EncoderOutput:
    states: Tensor                      # [B, T, 2h] second-layer outputs
    init1: tuple[Tensor, Tensor]        # decoder layer-1 start state
    init2: tuple[Tensor, Tensor]
    src_len: int


def _init_state(group: ParamGroup, enc_h: Tensor, enc_c: Tensor) -> tuple[Tensor, Tensor]:
    h0 = add(matmul(enc_h, group["init_h_w"]), group["init_h_b"])
    c0 = add(matmul(enc_c, group["init_c_w"]), group["init_c_b"])
    return h0, c0


def encode(params: Params, cfg: ModelConfig, src_ids: np.ndarray, src_mask: np.ndarray) -> EncoderOutput:
    """Run both encoder layers; also derive the decoder's start states."""
    if src_ids.ndim != 2:
        raise ContractError(f"encode: src_ids must be [batch, time], got {src_ids.shape}")
    bsz, steps = src_ids.shape
    if steps < 1 or not (src_mask.sum(axis=1) >= 1).all():
        raise ContractError("encode: every row needs at least one real token")
    dt = cfg.np_dtype
    h = cfg.hidden
    table = params["Emb"]["table"]
    embs = [gather(table, src_ids[:, t]) for t in range(steps)]
    masks = []
    for t in range(steps):
        col = src_mask[:, t : t + 1].astype(dt)
        masks.append((tensor(col), tensor(1.0 - col)))

    f1, f1_h, f1_c = _run_direction(params["E1"], "fwd", embs, masks, False, bsz, h, dt)
    b1, b1_h, b1_c = _run_direction(params["E1"], "bwd", embs, masks, True, bsz, h, dt)
    layer1 = [concat([f, b]) for f, b in zip(f1, b1)]

    f2, f2_h, f2_c = _run_direction(params["E2"], "fwd", layer1, masks, False, bsz, h, dt)
    b2, b2_h, b2_c = _run_direction(params["E2"], "bwd", layer1, masks, True, bsz, h, dt)
    layer2 = [concat([f, b]) for f, b in zip(f2, b2)]

    states = reshape(concat(layer2), (bsz, steps, 2 * h))
    init1 = _init_state(params["D1"], concat([f1_h, b1_h]), concat([f1_c, b1_c]))
    init2 = _init_state(params["D2"], concat([f2_h, b2_h]), concat([f2_c, b2_c]))
    return EncoderOutput(states, init1, init2, steps)


def mask_penalty(src_mask: np.ndarray, dt=np.float64) -> Tensor:
    """Additive score penalty: 0 on real tokens, -1e9 on padding."""
    return tensor(((1.0 - src_mask) * MASK_PENALTY).astype(dt))


def attention_step(
    attn: ParamGroup,
    dec_state: Tensor,
    enc_states: Tensor,
    coverage: Tensor | None,
    penalty: Tensor,
    enc_feat: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Additive attention with an optional coverage feature.

    Returns (attention weights [B, T], context vector [B, 2h]).  Pass
    ``enc_feat`` (the projected encoder states) to amortize that product
    across decode steps; ``coverage=None`` drops the coverage feature.
    """
    bsz, steps, _ = enc_states.shape
    if enc_feat is None:
        enc_feat = matmul(enc_states, attn["enc_w"])
    dec_feat = add(matmul(dec_state, attn["dec_w"]), attn["bias"])
    feats = add(enc_feat, reshape(dec_feat, (bsz, 1, -1)))
    if coverage is not None:
        cov_feat = multiply(reshape(coverage, (bsz, steps, 1)), attn["cov_w"])
        feats = add(feats, cov_feat)
    scores = matmul(tanh(feats), attn["score_v"])      # [B, T]
    alpha = softmax(add(scores, penalty))
    context = reshape(matmul(reshape(alpha, (bsz, 1, steps)), enc_states), (bsz, -1))
    return alpha, context


def vocab_distribution(out: ParamGroup, dec_state: Tensor, context: Tensor) -> Tensor:
    """Vocabulary softmax from [decoder state; context], two affine layers."""
    mix = add(matmul(concat([dec_state, context]), out["mix_w"]), out["mix_b"])
    logits = add(matmul(mix, out["vocab_w"]), out["vocab_b"])
    return softmax(logits)


def generation_prob(ptr: ParamGroup, context: Tensor, dec_state: Tensor, prev_emb: Tensor) -> Tensor:
    """Probability of generating from the vocabulary rather than copying; [B, 1]."""
    z = add(
        add(matmul(context, ptr["ctx_w"]), matmul(dec_state, ptr["state_w"])),
        add(matmul(prev_emb, ptr["emb_w"]), ptr["bias"]),
    )
    return sigmoid(z)


def copy_distribution(alpha: Tensor, src_ext: np.ndarray, ext_size: int) -> Tensor:
    """Scatter attention mass onto extended token ids (duplicates add up)."""
    return scatter_add(alpha, src_ext, ext_size)


def final_distribution(p_gen: Tensor, vocab_dist: Tensor, copy_dist: Tensor) -> Tensor:
    """Mix generation and copy distributions: p*P_vocab + (1-p)*P_copy.

    The vocabulary distribution is zero-padded up to the copy
    distribution's width, since extended ids can never be generated.
    """
    v = vocab_dist.shape[-1]
    e = copy_dist.shape[-1]
    if e < v:
        raise ContractError(f"final_distribution: extended size {e} below vocab {v}")
    if e > v:
        pad = tensor(np.zeros((vocab_dist.shape[0], e - v), dtype=vocab_dist.dtype))
        vocab_dist = concat([vocab_dist, pad])
    stay = subtract(tensor(np.ones((1, 1), dtype=copy_dist.dtype)), p_gen)
    return add(multiply(vocab_dist, p_gen), multiply(copy_dist, stay))


DecoderState = tuple[Tensor, Tensor, Tensor, Tensor]  # (h1, c1, h2, c2)


@dataclass
class DecodeContext:
    """Everything that stays fixed across decode steps for one batch."""

    params: Params
    cfg: ModelConfig
    enc: EncoderOutput
    enc_feat: Tensor
    penalty: Tensor
    src_ext: np.ndarray
    ext_size: int
    d1: tuple[Tensor, ...]
    d2: tuple[Tensor, ...]

    @property
    def init_state(self) -> DecoderState:
        return (*self.enc.init1, *self.enc.init2)

    def fresh_coverage(self) -> Tensor:
        bsz = self.src_ext.shape[0]
        return tensor(np.zeros((bsz, self.enc.src_len), dtype=self.cfg.np_dtype))


def prepare_decoder(
    params: Params,
    cfg: ModelConfig,
    enc: EncoderOutput,
    src_mask: np.ndarray,
    src_ext: np.ndarray,
    max_oov: int,
) -> DecodeContext:
    ext_size = cfg.vocab_size + max_oov if cfg.use_pointer else cfg.vocab_size
    return DecodeContext(
        params=params,
        cfg=cfg,
        enc=enc,
        enc_feat=matmul(enc.states, params["Attn"]["enc_w"]),
        penalty=mask_penalty(src_mask, cfg.np_dtype),
        src_ext=src_ext,
        ext_size=ext_size,
        d1=cell_weights(params["D1"], "cell"),
        d2=cell_weights(params["D2"], "cell"),
    )


@dataclass
class StepOutput:
    alpha: Tensor
    context: Tensor
    vocab_dist: Tensor
    final_dist: Tensor
    p_gen: Tensor | None


def decode_step(
    ctx: DecodeContext,
    state: DecoderState,
    input_ids: np.ndarray,
    coverage: Tensor | None,
) -> tuple[StepOutput, DecoderState]:
    """Advance the decoder one step.

    ``input_ids`` must be in-vocabulary (callers map copied OOVs to the
    unknown id before feeding them back).  ``coverage`` is the attention sum
    over all earlier steps, or None when the coverage feature is off.
    """
    params, cfg = ctx.params, ctx.cfg
    if input_ids.max(initial=0) >= cfg.vocab_size:
        raise ContractError("decode_step: input ids must be in-vocabulary")
    h1, c1, h2, c2 = state
    emb = gather(params["Emb"]["table"], input_ids)
    h1, c1 = lstm_step(ctx.d1, emb, h1, c1)
    h2, c2 = lstm_step(ctx.d2, h1, h2, c2)
    alpha, context = attention_step(
        params["Attn"], h2, ctx.enc.states, coverage, ctx.penalty, ctx.enc_feat
    )
    vocab_dist = vocab_distribution(params["Out"], h2, context)
    if cfg.use_pointer:
        p_gen = generation_prob(params["Ptr"], context, h2, emb)
        copy_dist = copy_distribution(alpha, ctx.src_ext, ctx.ext_size)
        final = final_distribution(p_gen, vocab_dist, copy_dist)
    else:
        if ctx.ext_size != cfg.vocab_size:
            raise ContractError("decode_step: extended ids need the pointer enabled")
        p_gen = None
        final = vocab_dist
    return StepOutput(alpha, context, vocab_dist, final, p_gen), (h1, c1, h2, c2)


@dataclass
class LossParts:
    nll: Tensor
    coverage: Tensor | None
    total: Tensor
    steps: list[StepOutput] | None = None


def step_nll(final_dist: Tensor, gold_ids: np.ndarray) -> Tensor:
    """Per-row log-likelihood of the gold token under the mixed distribution."""
    bsz, width = final_dist.shape
    if gold_ids.min(initial=0) < 0 or gold_ids.max(initial=0) >= width:
        raise ContractError(
            f"step_nll: gold id outside distribution of width {width}"
        )
    onehot = np.zeros((bsz, width), dtype=final_dist.dtype)
    onehot[np.arange(bsz), gold_ids] = 1.0
    return log(reduce_sum(multiply(final_dist, tensor(onehot)), axis=-1))


def forward_loss(
    params: Params,
    cfg: ModelConfig,
    batch: Batch,
    cov_weight: float = 1.0,
    use_coverage: bool | None = None,
    collect_steps: bool = False,
) -> LossParts:
    """Teacher-forced loss over a batch.

    Token negative log-likelihood and the coverage penalty are both averaged
    over each example's real decoder steps, then over the batch; the total
    is ``nll + cov_weight * coverage``.
    """
    if use_coverage is None:
        use_coverage = cfg.use_coverage
    dt = cfg.np_dtype
    bsz = batch.src_ids.shape[0]
    dec_len = batch.dec_in.shape[1]
    gold = batch.dec_out
    if not cfg.use_pointer:
        # Without a pointer the model can never emit extended ids: collapse
        # copied-OOV references back to the unknown token.
        gold = np.where(gold >= cfg.vocab_size, UNK_ID, gold)

    enc = encode(params, cfg, batch.src_ids, batch.src_mask)
    ctx = prepare_decoder(params, cfg, enc, batch.src_mask, batch.src_ext, batch.max_oov)
    state = ctx.init_state
    coverage = ctx.fresh_coverage() if use_coverage else None

    logp_acc: Tensor | None = None
    cov_acc: Tensor | None = None
    steps: list[StepOutput] = []
    for t in range(dec_len):
        out, state = decode_step(ctx, state, batch.dec_in[:, t], coverage)
        mask_col = tensor(batch.dec_mask[:, t].astype(dt))
        logp = multiply(step_nll(out.final_dist, gold[:, t]), mask_col)
        logp_acc = logp if logp_acc is None else add(logp_acc, logp)
        if use_coverage:
            overlap = reduce_sum(minimum(out.alpha, coverage), axis=-1)
            overlap = multiply(overlap, mask_col)
            cov_acc = overlap if cov_acc is None else add(cov_acc, overlap)
            coverage = add(coverage, out.alpha)
        if collect_steps:
            steps.append(out)

    inv_steps = tensor((1.0 / batch.dec_mask.sum(axis=1)).astype(dt))
    nll = scale(reduce_sum(multiply(logp_acc, inv_steps)), -1.0 / bsz)
    if use_coverage:
        cov = scale(reduce_sum(multiply(cov_acc, inv_steps)), 1.0 / bsz)
        total = add(nll, scale(cov, cov_weight))
    else:
        cov = None
        total = nll
    return LossParts(nll, cov, total, steps if collect_steps else None)
