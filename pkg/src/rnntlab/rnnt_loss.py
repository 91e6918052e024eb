"""Transducer negative log-likelihood over the alignment lattice.

An utterance with T' encoded frames and U reference labels induces a
(T', U+1) grid; blank moves advance t, label moves advance u. The loss is
the negative log of the summed probability of all monotone paths, computed
by the forward DP in `rnntlab.kernels`. Gradients reach the model through
the reverse-mode tape.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .model import TransducerModel


def label_lattices(model: TransducerModel, enc: ad.Tensor, lm: ad.Tensor,
                   label_ids: Sequence[int]) -> tuple[ad.Tensor, ad.Tensor]:
    """Split the joint table into blank (T',U+1) and label (T',U) lattices."""
    T = enc.shape[0]
    U = len(label_ids)
    logp = model.joint_lattice(enc, lm)
    rows_all = np.arange(T * (U + 1))
    blank_col = np.full(T * (U + 1), model.config.blank_id)
    blank = ad.reshape(ad.gather_pairs(logp, rows_all, blank_col), (T, U + 1))
    ids = np.asarray(label_ids, dtype=np.intp)
    rows = (np.arange(T)[:, None] * (U + 1) + np.arange(U)[None, :]).ravel()
    cols = np.tile(ids, T)
    label = ad.reshape(ad.gather_pairs(logp, rows, cols), (T, U))
    return blank, label


def utterance_loss(model: TransducerModel, features, label_ids: Sequence[int]) -> ad.Tensor:
    """-log P(labels | features) for one utterance."""
    enc = model.encode(features)
    lm = model.predict(label_ids)
    blank, label = label_lattices(model, enc, lm, label_ids)
    return kernels.transducer_loss(blank, label)


def batch_loss(model: TransducerModel, batch: Sequence[tuple]) -> ad.Tensor:
    """Mean per-utterance loss; the mean keeps the learning rate comparable
    across batch sizes."""
    if not batch:
        raise ValueError("empty batch")
    total = None
    for features, label_ids in batch:
        loss = utterance_loss(model, features, label_ids)
        total = loss if total is None else ad.add(total, loss)
    return ad.mul(total, 1.0 / len(batch))
