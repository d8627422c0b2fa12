"""Shared fixtures: hand-built decoder weights that emit a planted label.

The construction uses only saturating gates and one-hot algebra, so the
expected output is known without running any training: attention context is
forced to zero (zero encoder), the LSTM input is the previous character's
one-hot row, and a transition matrix maps each character's one-hot onto the
next character's hidden coordinate.
"""

from __future__ import annotations

import numpy as np

from bivex import encoder as E
from bivex.decoder import DecoderParams, Vocabulary
from bivex.model import ModelConfig, ModelParams
from bivex.tensor import LstmParams, Tensor

BIG = 50.0


def planted_decoder_params(label: str, vocab: Vocabulary, c_f: int, dtype=np.float64) -> DecoderParams:
    """Decoder weights whose greedy decode is exactly ``label`` then EOS,
    for any feature map equal to zero."""
    v = vocab.size
    d = max(c_f, v + 1)
    if c_f < v + 1:
        raise ValueError(f"need c_f >= vocab.size+1 ({v + 1}), got {c_f}")
    d_h = c_f
    chain = [vocab.start] + vocab.encode(label) + [vocab.eos]

    w_c = np.zeros((v + 1, c_f))
    for idx in range(v + 1):
        w_c[idx, idx] = 1.0

    # gates: input/output saturated open, forget closed -> c' = tanh(W_gx x)
    w_x = np.zeros((4 * d_h, c_f))
    b = np.zeros(4 * d_h)
    b[:d_h] = BIG  # input gate
    b[d_h : 2 * d_h] = -BIG  # forget gate
    b[3 * d_h :] = BIG  # output gate
    for prev, nxt in zip(chain[:-1], chain[1:]):
        w_x[2 * d_h + nxt, prev] = BIG  # candidate maps e_prev -> e_next

    w_o = np.zeros((v, d_h))
    for cls in range(v):
        w_o[cls, cls] = BIG

    t = lambda a: Tensor(np.asarray(a, dtype=dtype), requires_grad=True)
    return DecoderParams(
        w_c=t(w_c),
        lstm=LstmParams(w_x=t(w_x), w_h=t(np.zeros((4 * d_h, d_h))), b=t(b)),
        w_s_h=t(np.zeros((4, d_h))),
        w_s_v=None,
        w_f=t(np.zeros((4, c_f))),
        v_a=t(np.zeros(4)),
        w_o=t(w_o),
        b_o=t(np.zeros(v)),
    )


def planted_model(label: str, dtype: str = "float64") -> ModelParams:
    """Full model that decodes ``label`` for every input image: the encoder
    weights are all zero, so the feature map (and the attention context) is
    zero and only the planted decoder transition chain speaks."""
    config = ModelConfig(dtype=dtype)
    params_shell = ModelParams(
        config=config,
        encoder=[
            (
                Tensor(np.zeros((l.out_channels, cin, l.kernel, l.kernel), dtype=np.dtype(dtype)), requires_grad=True),
                Tensor(np.zeros(l.out_channels, dtype=np.dtype(dtype)), requires_grad=True),
            )
            for l, cin in zip(
                config.encoder.layers,
                [config.encoder.in_channels] + [l.out_channels for l in config.encoder.layers[:-1]],
            )
        ],
        decoder=planted_decoder_params(label, Vocabulary(), config.feature_shape()[0], dtype=np.dtype(dtype)),
    )
    return params_shell


def brute_force_attend(f_chw: np.ndarray, s: np.ndarray, w_s: np.ndarray, w_f: np.ndarray, v_a: np.ndarray):
    """Independent double-loop oracle for the attention math."""
    c_f, h_f, w_f_cols = f_chw.shape
    scores = np.zeros((h_f, w_f_cols))
    for i in range(h_f):
        for j in range(w_f_cols):
            scores[i, j] = v_a @ np.tanh(w_s @ s + w_f @ f_chw[:, i, j])
    e = np.exp(scores - scores.max())
    alpha = e / e.sum()
    context = np.zeros(c_f)
    for i in range(h_f):
        for j in range(w_f_cols):
            context += alpha[i, j] * f_chw[:, i, j]
    return context, alpha
