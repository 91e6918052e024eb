"""Tape-composed reference implementations of the two hot kernels.

These are the definitional versions: each step is spelled out in the
fine-grained primitives of `rnntlab.autodiff`, so every gradient comes out
of the reverse-mode tape and there is no hand-written adjoint code here.
The compiled backend must reproduce these values to rounding error.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad


def lstm_sequence(x: ad.Tensor, w_ih: ad.Tensor, w_hh: ad.Tensor,
                  b: ad.Tensor, w_proj: ad.Tensor) -> ad.Tensor:
    """Projected LSTM over x (T,Din) -> projected outputs (T,P).

    Gate order along the 4H axis is i, f, g, o; the recurrent input is the
    projected output of the previous step.
    """
    T, din = x.shape
    h4 = w_ih.shape[1]
    H = h4 // 4
    rows = []
    p_prev = None
    c_prev = None
    for t in range(T):
        xt = ad.slice_block(x, t, t + 1, 0, din)
        z = ad.matmul(xt, w_ih)
        if p_prev is not None:
            z = ad.add(z, ad.matmul(p_prev, w_hh))
        z = ad.add_bias(z, b)
        i = ad.sigmoid(ad.slice_block(z, 0, 1, 0, H))
        f = ad.sigmoid(ad.slice_block(z, 0, 1, H, 2 * H))
        g = ad.tanh(ad.slice_block(z, 0, 1, 2 * H, 3 * H))
        o = ad.sigmoid(ad.slice_block(z, 0, 1, 3 * H, 4 * H))
        c = ad.mul(i, g)
        if c_prev is not None:
            c = ad.add(c, ad.mul(f, c_prev))
        tc = ad.tanh(c)
        h = ad.mul(o, tc)
        p_prev = ad.matmul(h, w_proj)
        c_prev = c
        rows.append(p_prev)
    return ad.concat_rows(rows)


def _cell(lattice: ad.Tensor, t: int, u: int) -> ad.Tensor:
    return ad.gather_pairs(lattice, np.array([t]), np.array([u]))


def transducer_loss(blank: ad.Tensor, label: ad.Tensor) -> ad.Tensor:
    """Negative log-likelihood of the full alignment lattice.

    blank (T,U+1) and label (T,U) hold per-cell log-probabilities.
    The forward variable obeys

        alpha[t,u] = logsumexp(alpha[t-1,u] + blank[t-1,u],
                               alpha[t,u-1] + label[t,u-1])

    with out-of-range terms omitted and alpha[0,0] = 0, and the loss is
    -(alpha[T-1,U] + blank[T-1,U]). Forward-only: the backward pass is
    whatever the tape replays, not a second hand-written recursion.
    """
    T, U1 = blank.shape
    if label.shape != (T, U1 - 1):
        raise ad.GradError(f"label lattice {label.shape} does not match blank {blank.shape}")
    alpha: list[list[ad.Tensor | None]] = [[None] * U1 for _ in range(T)]
    for u in range(1, U1):
        term = _cell(label, 0, u - 1)
        alpha[0][u] = term if u == 1 else ad.add(alpha[0][u - 1], term)
    for t in range(1, T):
        term = _cell(blank, t - 1, 0)
        alpha[t][0] = term if t == 1 else ad.add(alpha[t - 1][0], term)
        for u in range(1, U1):
            via_blank = ad.add(alpha[t - 1][u], _cell(blank, t - 1, u))
            via_label = ad.add(alpha[t][u - 1], _cell(label, t, u - 1))
            alpha[t][u] = ad.logaddexp(via_blank, via_label)
    final_blank = _cell(blank, T - 1, U1 - 1)
    top = alpha[T - 1][U1 - 1]
    total = final_blank if top is None else ad.add(top, final_blank)
    return ad.neg(ad.sum_all(total))
