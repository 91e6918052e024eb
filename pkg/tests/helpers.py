"""Independent oracles shared by the test suite.

Everything here is deliberately naive and written without reference to the
library's own kernels: finite differences, explicit alignment enumeration,
a memoized Levenshtein recursion, and a step-by-step LSTM recurrence.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np


def finite_difference(f, leaves, eps: float = 1e-6):
    """Central differences of the scalar f() w.r.t. each leaf tensor.

    f takes no arguments and must recompute from the leaves' current .data;
    the data is perturbed in place and restored.
    """
    grads = []
    for leaf in leaves:
        g = np.zeros_like(leaf.data)
        flat = leaf.data.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Componentwise |a-n| / max(1, |a|, |n|), maximized."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def enumerated_transducer_loss(blank: np.ndarray, label: np.ndarray) -> float:
    """-log sum over every monotone lattice path, enumerated explicitly.

    A path takes T'-1 frame advances (blank) and U label advances in some
    order from (0,0) to (T'-1,U), then the final blank at (T'-1,U); there
    are C(T'-1+U, U) such paths.
    """
    T, U1 = blank.shape
    U = U1 - 1
    moves = T - 1 + U
    scores = []
    for label_steps in combinations(range(moves), U):
        label_set = set(label_steps)
        t = u = 0
        s = 0.0
        for step in range(moves):
            if step in label_set:
                s += label[t, u]
                u += 1
            else:
                s += blank[t, u]
                t += 1
        scores.append(s + blank[T - 1, U])
    m = max(scores)
    return -(m + np.log(sum(np.exp(s - m) for s in scores)))


def levenshtein_cost(ref: tuple, hyp: tuple) -> int:
    """Plain memoized edit-distance recursion with unit costs."""

    @lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(d(i + 1, j + 1) + (ref[i] != hyp[j]),
                   d(i + 1, j) + 1,
                   d(i, j + 1) + 1)

    return d(0, 0)


def lstm_reference(x, w_ih, w_hh, b, w_proj):
    """Step-by-step projected LSTM recurrence (gate order i, f, g, o)."""
    T = x.shape[0]
    H = b.size // 4
    P = w_proj.shape[1]
    p = np.zeros(P)
    c = np.zeros(H)
    outs = np.zeros((T, P))
    for t in range(T):
        z = x[t] @ w_ih + p @ w_hh + b
        gi = 1.0 / (1.0 + np.exp(-z[:H]))
        gf = 1.0 / (1.0 + np.exp(-z[H:2 * H]))
        gg = np.tanh(z[2 * H:3 * H])
        go = 1.0 / (1.0 + np.exp(-z[3 * H:]))
        c = gf * c + gi * gg
        p = (go * np.tanh(c)) @ w_proj
        outs[t] = p
    return outs
