"""Pure-numpy reference implementation of the policy math kernels.

This backend defines the semantics; the compiled backend in ``_fast.pyx``
must agree with it to float64 round-off. All arrays are float64 and
C-contiguous. Shapes: X (B, D), hidden (B, H), coordinate heads stacked as
(4, H, G), format head (H, 2).
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def batch_forward(w_in, b_in, w_coord, b_coord, w_fmt, b_fmt, X):
    """Hidden activations and per-head log-probabilities for a feature batch.

    Returns (hidden (B,H), logp_coord (B,4,G), logp_fmt (B,2)).
    """
    hidden = np.tanh(X @ w_in + b_in)
    logits_c = np.einsum("bh,khg->bkg", hidden, w_coord) + b_coord
    logits_f = hidden @ w_fmt + b_fmt
    return hidden, _log_softmax(logits_c), _log_softmax(logits_f)


def backward(w_coord, w_fmt, X, hidden, dl_coord, dl_fmt):
    """Parameter gradients from per-head logit gradients, summed over the batch.

    dl_coord (B,4,G) and dl_fmt (B,2) hold dL/dlogits; the return order is
    (g_w_in, g_b_in, g_w_coord, g_b_coord, g_w_fmt, g_b_fmt).
    """
    g_w_coord = np.einsum("bh,bkg->khg", hidden, dl_coord)
    g_b_coord = dl_coord.sum(axis=0)
    g_w_fmt = hidden.T @ dl_fmt
    g_b_fmt = dl_fmt.sum(axis=0)

    dhidden = np.einsum("khg,bkg->bh", w_coord, dl_coord) + dl_fmt @ w_fmt.T
    dpre = dhidden * (1.0 - hidden * hidden)
    g_w_in = X.T @ dpre
    g_b_in = dpre.sum(axis=0)
    return g_w_in, g_b_in, g_w_coord, g_b_coord, g_w_fmt, g_b_fmt
