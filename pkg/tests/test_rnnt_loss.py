"""End-to-end transducer loss composition and gradient flow."""

import numpy as np
import pytest

from rnntlab import autodiff as ad
from rnntlab import rnnt_loss
from rnntlab.model import ModelConfig, TransducerModel

from helpers import finite_difference, max_rel_error


def tiny_model(seed=0):
    cfg = ModelConfig(input_dim=3, frame_stack=2, encoder_layers=2,
                      encoder_stride_after=1, lm_layers=1, hidden_units=4,
                      projection_units=3, joint_hidden=4, vocab_size=5)
    return TransducerModel(cfg, seed=seed)


def test_utterance_loss_is_finite_scalar():
    m = tiny_model()
    rng = np.random.default_rng(0)
    loss = rnnt_loss.utterance_loss(m, rng.uniform(-1, 1, (10, 3)), [0, 3, 1])
    assert loss.size == 1
    assert np.isfinite(loss.item())
    assert loss.item() > 0.0


def test_empty_label_sequence_allowed():
    m = tiny_model()
    rng = np.random.default_rng(1)
    loss = rnnt_loss.utterance_loss(m, rng.uniform(-1, 1, (8, 3)), [])
    assert np.isfinite(loss.item())


def test_batch_loss_is_mean():
    m = tiny_model()
    rng = np.random.default_rng(2)
    batch = [(rng.uniform(-1, 1, (8, 3)), [1, 2]),
             (rng.uniform(-1, 1, (10, 3)), [0]),
             (rng.uniform(-1, 1, (6, 3)), [4, 3, 2])]
    mean = rnnt_loss.batch_loss(m, batch).item()
    singles = [rnnt_loss.utterance_loss(m, f, y).item() for f, y in batch]
    assert mean == pytest.approx(sum(singles) / 3.0, rel=1e-12)


def test_batch_loss_rejects_empty():
    with pytest.raises(ValueError):
        rnnt_loss.batch_loss(tiny_model(), [])


def test_end_to_end_gradient_wrt_features():
    m = tiny_model(seed=3)
    rng = np.random.default_rng(3)
    feats = ad.Tensor(rng.uniform(-1, 1, (6, 3)), is_leaf=True)
    ids = [2, 0]

    def build():
        return rnnt_loss.utterance_loss(m, feats, ids)

    with ad.Tape() as tape:
        tape.backward(build())
    numeric = finite_difference(lambda: build().item(), [feats])
    assert max_rel_error(feats.grad, numeric[0]) < 1e-4


def test_end_to_end_gradient_wrt_parameters():
    m = tiny_model(seed=4)
    rng = np.random.default_rng(4)
    feats = rng.uniform(-1, 1, (6, 3))
    ids = [1, 4]
    leaves = [m.param(n).tensor for n in
              ("encoder.layer0.w_ih", "lm.layer0.w_hh", "joint.w_out", "joint.b_out")]

    def build():
        return rnnt_loss.utterance_loss(m, feats, ids)

    m.zero_grad()
    with ad.Tape() as tape:
        tape.backward(build())
    numeric = finite_difference(lambda: build().item(), leaves)
    for leaf, num in zip(leaves, numeric):
        assert max_rel_error(leaf.grad, num) < 1e-5


def test_loss_deterministic_bitwise():
    rng = np.random.default_rng(5)
    feats = rng.uniform(-1, 1, (8, 3))
    vals = set()
    for _ in range(2):
        m = tiny_model(seed=6)
        vals.add(rnnt_loss.utterance_loss(m, feats, [0, 1, 2]).item())
    assert len(vals) == 1
