"""Elastic Weight Consolidation: Fisher estimation and the anchor penalty.

The penalty (lambda/2) * sum_i F_i (theta_i - theta*_i)^2 anchors training
to the base-task optimum, weighted per component by the empirical Fisher
information: the average squared gradient of the training loss at the
ground-truth transcripts of base-corpus utterances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rnnt_loss
from .model import TransducerModel, load_container, save_container


@dataclass(frozen=True)
class AnchorParameters:
    values: dict[str, np.ndarray]

    @classmethod
    def from_model(cls, model: TransducerModel) -> "AnchorParameters":
        return cls(model.snapshot_values())

    def save(self, path) -> None:
        save_container(path, "anchors", self.values)

    @classmethod
    def load(cls, path) -> "AnchorParameters":
        return cls(load_container(path, expect_kind="anchors")["arrays"])


@dataclass(frozen=True)
class FisherEstimate:
    values: dict[str, np.ndarray]
    sample_count: int

    def save(self, path) -> None:
        save_container(path, "fisher", self.values,
                       meta={"sample_count": self.sample_count})

    @classmethod
    def load(cls, path) -> "FisherEstimate":
        doc = load_container(path, expect_kind="fisher")
        return cls(doc["arrays"], int(doc["meta"]["sample_count"]))


def estimate_fisher(model: TransducerModel, corpus, sample_count: int) -> FisherEstimate:
    """Mean squared per-component gradient over the first sample_count utterances.

    corpus holds (features, label_ids) pairs; the model's gradients are
    cleared in the process.
    """
    if not corpus:
        raise ValueError("cannot estimate Fisher information from an empty corpus")
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    used = list(corpus[:sample_count])
    acc = {name: np.zeros_like(model.param(name).value) for name in model.parameter_ids()}
    for features, label_ids in used:
        model.zero_grad()
        with ad.Tape() as tape:
            loss = rnnt_loss.utterance_loss(model, features, label_ids)
            tape.backward(loss)
        for name in acc:
            g = model.param(name).grad
            acc[name] += g * g
    n = len(used)
    return FisherEstimate({name: a / n for name, a in acc.items()}, n)


def ewc_penalty(model: TransducerModel, anchors: AnchorParameters,
                fisher: FisherEstimate, lam: float) -> ad.Tensor:
    """Differentiable (lambda/2) * sum_i F_i (theta_i - theta*_i)^2."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0.0:
        return ad.Tensor(0.0)
    ids = set(model.parameter_ids())
    if set(anchors.values) != ids or set(fisher.values) != ids:
        raise ValueError("anchors/fisher parameter ids do not match the model")
    total = None
    for name in model.parameter_ids():
        diff = ad.sub(model.param(name).tensor, ad.Tensor(anchors.values[name]))
        term = ad.sum_all(ad.mul(ad.mul(diff, diff), ad.Tensor(fisher.values[name])))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, lam / 2.0)
