"""Attention LSTM decoder with direction-selected dual attention heads.

Per timestep: the previous character's embedding and the attention context
vector are summed into the LSTM input; the new hidden state is projected to
character logits. With the selective-attention flag on, the score projection
W_s comes in a horizontal and a vertical copy and the sample's known text
direction picks exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bivex import tensor as T
from bivex.encoder import FeatureMap
from bivex.routing import Direction
from bivex.tensor import LstmParams, Tensor

DEFAULT_T_MAX = 24


class SequenceLengthError(RuntimeError):
    """Decoding was asked to run past the configured maximum length."""


class Vocabulary:
    """Stable symbol table: a-z, 0-9, then EOS and PAD; START is an extra
    embedding-only row and never a logit class. Case folds at the boundary."""

    CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"

    def __init__(self, chars: str = CHARS):
        self.chars = chars
        self.eos = len(chars)
        self.pad = len(chars) + 1
        self.size = len(chars) + 2  # V: logit classes incl. EOS and PAD
        self.start = self.size  # embedding row only
        self._index = {c: i for i, c in enumerate(chars)}

    def encode(self, label: str) -> list[int]:
        label = label.lower()
        try:
            return [self._index[c] for c in label]
        except KeyError as exc:
            raise ValueError(f"label {label!r} contains symbol {exc.args[0]!r} outside the vocabulary") from None

    def char(self, index: int) -> str:
        if 0 <= index < len(self.chars):
            return self.chars[index]
        if index == self.eos:
            return "<eos>"
        if index == self.pad:
            return "<pad>"
        raise IndexError(f"class index {index} out of range")

    def decode(self, indices) -> str:
        """Indices to text: stops at EOS; PAD renders as '_'."""
        out = []
        for i in indices:
            if i == self.eos:
                break
            out.append("_" if i == self.pad else self.chars[i])
        return "".join(out)


DEFAULT_VOCAB = Vocabulary()


@dataclass
class DecoderParams:
    """All decoder weights. ``w_s_v`` is absent unless selective attention
    is enabled; the horizontal head then serves both directions."""

    w_c: Tensor  # (V+1, d_e) embedding, last row = START
    lstm: LstmParams
    w_s_h: Tensor  # (d_a, d_h)
    w_s_v: Tensor | None  # (d_a, d_h) when SAN enabled
    w_f: Tensor  # (d_a, C_f)
    v_a: Tensor  # (d_a,)
    w_o: Tensor  # (V, d_h)
    b_o: Tensor  # (V,)

    @property
    def d_h(self) -> int:
        return self.lstm.d_h

    @property
    def d_a(self) -> int:
        return self.w_f.shape[0]

    @property
    def c_f(self) -> int:
        return self.w_f.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w_o.shape[0]

    @property
    def use_san(self) -> bool:
        return self.w_s_v is not None


@dataclass
class DecoderState:
    """Per-timestep decoding state: LSTM (hidden, cell), previous character
    class, timestep, and the sample's direction."""

    h: Tensor
    c: Tensor
    prev_char: int
    t: int
    direction: Direction


@dataclass
class AttentionRecord:
    """One timestep's attention map over the feature grid and the head used."""

    alpha: np.ndarray  # (H_f, W_f), nonnegative, sums to 1
    head: str  # "h" or "v"


@dataclass
class DecodeResult:
    logits: np.ndarray  # (T, V)
    text: str
    attention: list[AttentionRecord]


def init_state(direction: Direction, params: DecoderParams, vocab: Vocabulary = DEFAULT_VOCAB) -> DecoderState:
    dtype = params.w_c.dtype
    zeros = np.zeros(params.d_h, dtype=dtype)
    return DecoderState(h=Tensor(zeros.copy()), c=Tensor(zeros.copy()), prev_char=vocab.start, t=0, direction=direction)


def char_embed(prev: int, params: DecoderParams) -> Tensor:
    """Embedding row for the previous character (matrix x one-hot)."""
    if not 0 <= prev < params.w_c.shape[0]:
        raise IndexError(f"character index {prev} out of range for {params.w_c.shape[0]} embedding rows")
    return T.reshape(T.take_rows(params.w_c, np.asarray([prev])), (-1,))


# ---------------------------------------------------------------------------
# attention (batched core + per-sample wrapper)
# ---------------------------------------------------------------------------


@dataclass
class _AttnCtx:
    """Per-sequence attention precomputation shared by all timesteps."""

    feats: Tensor  # (B, N, C_f), channels last
    proj: Tensor  # (B, N, d_a) = W_f f
    grid: tuple[int, int]  # (H_f, W_f)


def prepare_attention(feats: Tensor, params: DecoderParams) -> _AttnCtx:
    """Project a channels-last (B, H_f, W_f, C_f) feature batch once per
    sequence; the W_f term of the score is timestep-invariant."""
    b, h_f, w_f, c_f = feats.shape
    n = h_f * w_f
    f3 = T.reshape(feats, (b, n, c_f))
    proj = T.reshape(T.matmul(T.reshape(f3, (b * n, c_f)), T.transpose(params.w_f)), (b, n, params.d_a))
    return _AttnCtx(feats=f3, proj=proj, grid=(h_f, w_f))


def _attention_step(ctx: _AttnCtx, h: Tensor, horiz_mask: np.ndarray, params: DecoderParams):
    """Scores e = V_a . tanh(W_s^(dir) h + W_f f) per grid cell, softmax over
    cells, and the attention-weighted feature sum."""
    b, n, c_f = ctx.feats.shape
    q = T.matmul(h, T.transpose(params.w_s_h))
    if params.use_san:
        q_v = T.matmul(h, T.transpose(params.w_s_v))
        q = T.where_mask(horiz_mask[:, None], q, q_v)
    scores = T.additive_score(ctx.proj, q, params.v_a)
    alpha = T.softmax(scores, axis=-1)
    context = T.reshape(T.matmul(T.reshape(alpha, (b, 1, n)), ctx.feats), (b, c_f))
    return context, alpha


def _nhwc_single(f: FeatureMap) -> Tensor:
    """(C_f, H_f, W_f) feature map -> (1, H_f, W_f, C_f)."""
    t = T.transpose(f.values, (1, 2, 0))
    return T.reshape(t, (1,) + tuple(t.shape))


def attend(s_t: Tensor, f: FeatureMap, direction: Direction, params: DecoderParams):
    """Single-sample attention; returns (context vector, AttentionRecord)."""
    ctx = prepare_attention(_nhwc_single(f), params)
    horiz = np.asarray([direction is Direction.HORIZONTAL])
    context, alpha = _attention_step(ctx, T.reshape(s_t, (1, -1)), horiz, params)
    head = "h" if (direction is Direction.HORIZONTAL or not params.use_san) else "v"
    record = AttentionRecord(alpha=alpha.data.reshape(ctx.grid).copy(), head=head)
    return T.reshape(context, (-1,)), record


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


def _step_batch(h: Tensor, c: Tensor, prev: np.ndarray, ctx: _AttnCtx, horiz_mask: np.ndarray, params: DecoderParams):
    x_c = T.take_rows(params.w_c, prev)
    x_v, alpha = _attention_step(ctx, h, horiz_mask, params)
    x_t = T.add(x_c, x_v)
    _, (h_new, c_new) = T.lstm_step(x_t, (h, c), params.lstm)
    logits = T.add(T.matmul(h_new, T.transpose(params.w_o)), params.b_o)
    return logits, h_new, c_new, alpha


def decode_step(
    state: DecoderState,
    f: FeatureMap,
    params: DecoderParams,
    teacher: int | None = None,
    t_max: int = DEFAULT_T_MAX,
):
    """One decoding step; the next previous-character is the teacher index
    when given (training) and the argmax of the logits otherwise."""
    if state.t >= t_max:
        raise SequenceLengthError(f"decode_step at t={state.t} exceeds t_max={t_max}")
    ctx = prepare_attention(_nhwc_single(f), params)
    horiz = np.asarray([state.direction is Direction.HORIZONTAL])
    logits, h_new, c_new, alpha = _step_batch(
        T.reshape(state.h, (1, -1)), T.reshape(state.c, (1, -1)), np.asarray([state.prev_char]), ctx, horiz, params
    )
    logits1 = T.reshape(logits, (-1,))
    next_prev = int(teacher) if teacher is not None else int(np.argmax(logits1.data))
    head = "h" if (state.direction is Direction.HORIZONTAL or not params.use_san) else "v"
    record = AttentionRecord(alpha=alpha.data.reshape(ctx.grid).copy(), head=head)
    new_state = DecoderState(
        h=T.reshape(h_new, (-1,)),
        c=T.reshape(c_new, (-1,)),
        prev_char=next_prev,
        t=state.t + 1,
        direction=state.direction,
    )
    return logits1, new_state, record


def decode_sequence(
    f: FeatureMap,
    direction: Direction,
    params: DecoderParams,
    teacher: str | None = None,
    t_max: int = DEFAULT_T_MAX,
    vocab: Vocabulary = DEFAULT_VOCAB,
) -> DecodeResult:
    """Decode from the START symbol and zero state.

    Greedy mode (no ``teacher``) stops at EOS or ``t_max``; teacher mode runs
    exactly len(teacher)+1 steps (the characters plus EOS). The returned text
    never includes EOS.
    """
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    state = init_state(direction, params, vocab)
    steps: list[np.ndarray] = []
    records: list[AttentionRecord] = []
    emitted: list[int] = []
    if teacher is not None:
        targets = vocab.encode(teacher) + [vocab.eos]
        if len(targets) > t_max:
            raise SequenceLengthError(f"teacher sequence needs {len(targets)} steps, t_max is {t_max}")
        for tgt in targets:
            logits, state, rec = decode_step(state, f, params, teacher=tgt, t_max=t_max)
            steps.append(logits.data.copy())
            records.append(rec)
            emitted.append(int(np.argmax(logits.data)))
    else:
        while state.t < t_max:
            logits, state, rec = decode_step(state, f, params, t_max=t_max)
            steps.append(logits.data.copy())
            records.append(rec)
            emitted.append(state.prev_char)
            if state.prev_char == vocab.eos:
                break
    return DecodeResult(logits=np.stack(steps), text=vocab.decode(emitted), attention=records)


# ---------------------------------------------------------------------------
# batched training / inference paths
# ---------------------------------------------------------------------------


def teacher_loss_batch(
    feats: Tensor,
    horiz_mask: np.ndarray,
    labels: list[str],
    params: DecoderParams,
    vocab: Vocabulary = DEFAULT_VOCAB,
    t_max: int = DEFAULT_T_MAX,
) -> Tensor:
    """Teacher-forced mean cross-entropy over a batch, PAD-masked.

    Every label contributes len(label)+1 supervised steps (its characters
    plus EOS); shorter sequences are padded and masked out of the mean.
    """
    b = feats.shape[0]
    encoded = [vocab.encode(lab) for lab in labels]
    lengths = np.asarray([len(e) + 1 for e in encoded])
    t_steps = int(lengths.max())
    if t_steps > t_max:
        raise SequenceLengthError(f"batch needs {t_steps} steps, t_max is {t_max}")
    inputs = np.full((b, t_steps), vocab.pad, dtype=np.intp)
    targets = np.full((b, t_steps), vocab.pad, dtype=np.intp)
    for i, e in enumerate(encoded):
        inputs[i, 0] = vocab.start
        inputs[i, 1 : len(e) + 1] = e
        targets[i, : len(e)] = e
        targets[i, len(e)] = vocab.eos
    weights = (np.arange(t_steps)[None, :] < lengths[:, None]).astype(feats.dtype)

    ctx = prepare_attention(feats, params)
    dtype = feats.dtype
    h = Tensor(np.zeros((b, params.d_h), dtype=dtype))
    c = Tensor(np.zeros((b, params.d_h), dtype=dtype))
    total = None
    for t in range(t_steps):
        logits, h, c, _ = _step_batch(h, c, inputs[:, t], ctx, horiz_mask, params)
        # t_steps is the longest sequence, so every step has weight mass >= 1
        step_nll = T.cross_entropy(logits, targets[:, t], weights=weights[:, t])
        piece = T.scale(step_nll, float(weights[:, t].sum()))
        total = piece if total is None else T.add(total, piece)
    return T.scale(total, 1.0 / float(weights.sum()))


def greedy_batch(
    feats: Tensor,
    horiz_mask: np.ndarray,
    params: DecoderParams,
    vocab: Vocabulary = DEFAULT_VOCAB,
    t_max: int = DEFAULT_T_MAX,
) -> list[str]:
    """Greedy decode of a feature batch; no gradients are recorded."""
    b = feats.shape[0]
    ctx = prepare_attention(feats, params)
    dtype = feats.dtype
    h = Tensor(np.zeros((b, params.d_h), dtype=dtype))
    c = Tensor(np.zeros((b, params.d_h), dtype=dtype))
    prev = np.full(b, vocab.start, dtype=np.intp)
    done = np.zeros(b, dtype=bool)
    emitted = np.full((b, t_max), vocab.eos, dtype=np.intp)
    for t in range(t_max):
        logits, h, c, _ = _step_batch(h, c, prev, ctx, horiz_mask, params)
        prev = logits.data.argmax(axis=1)
        emitted[~done, t] = prev[~done]
        done |= prev == vocab.eos
        if done.all():
            break
    return [vocab.decode(row) for row in emitted]
