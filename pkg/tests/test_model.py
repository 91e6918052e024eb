"""Model shapes, causality, grouping, and checkpoint round-trips."""

import numpy as np
import pytest

from rnntlab import autodiff as ad
from rnntlab.model import (ALPHABET, ModelConfig, TransducerModel, decode_ids,
                           encode_text, load_checkpoint, load_container,
                           save_checkpoint)

from helpers import finite_difference, max_rel_error


def tiny_config(**overrides):
    base = dict(input_dim=4, frame_stack=2, encoder_layers=2, encoder_stride_after=1,
                lm_layers=1, hidden_units=5, projection_units=3, joint_hidden=4,
                vocab_size=6)
    base.update(overrides)
    return ModelConfig(**base)


def test_alphabet_layout():
    assert len(ALPHABET) == 28
    assert ALPHABET[0] == "a"
    assert ALPHABET[25] == "z"
    assert ALPHABET[26] == " "
    assert ALPHABET[27] == "'"


def test_text_round_trip():
    text = "isn't a test"
    assert decode_ids(encode_text(text)) == text
    with pytest.raises(ValueError):
        encode_text("Uppercase")


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(input_dim=0)
    with pytest.raises(ValueError):
        ModelConfig(encoder_layers=2, encoder_stride_after=2)
    with pytest.raises(ValueError):
        ModelConfig(encoder_layers=2, encoder_stride_after=0)


def test_frame_arithmetic_stride_after_layer_two():
    cfg = tiny_config(input_dim=2, frame_stack=3, encoder_layers=3, encoder_stride_after=2)
    m = TransducerModel(cfg, seed=0)
    out = m.encode(np.zeros((12, 2)))
    assert out.shape == (2, cfg.projection_units)  # 12 -> 4 -> 2


def test_frame_arithmetic_default_shape():
    cfg = ModelConfig()
    m = TransducerModel(cfg, seed=0)
    out = m.encode(np.zeros((12, cfg.input_dim)))
    assert out.shape == (2, cfg.projection_units)


def test_encode_rejects_short_input():
    cfg = tiny_config()
    m = TransducerModel(cfg, seed=0)
    with pytest.raises(ValueError):
        m.encode(np.zeros((1, cfg.input_dim)))


def test_zero_weights_give_zero_output():
    cfg = tiny_config()
    m = TransducerModel(cfg, seed=0)
    for p in m.parameters():
        p.value = np.zeros_like(p.value)
    out = m.encode(np.ones((8, cfg.input_dim)))
    assert out.shape == (2, cfg.projection_units)
    np.testing.assert_array_equal(out.data, np.zeros_like(out.data))


def test_encoder_causality():
    cfg = ModelConfig()
    m = TransducerModel(cfg, seed=3)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (24, cfg.input_dim))
    y = x.copy()
    y[18:] += 5.0
    a = m.encode(x).data
    b = m.encode(y).data
    # total compression 6: output row k sees input frames < 6k + 6
    assert np.array_equal(a[:3], b[:3])
    assert not np.array_equal(a[3], b[3])


def test_predict_start_row_and_prefix_property():
    cfg = tiny_config()
    m = TransducerModel(cfg, seed=1)
    start = m.predict([])
    assert start.shape == (1, cfg.projection_units)
    np.testing.assert_array_equal(start.data, np.zeros_like(start.data))

    full = m.predict([0, 2, 1]).data
    prefix = m.predict([0, 2]).data
    assert np.array_equal(full[:3], prefix)


def test_predict_rejects_blank_and_out_of_range():
    cfg = tiny_config()
    m = TransducerModel(cfg, seed=1)
    with pytest.raises(ValueError):
        m.predict([cfg.vocab_size])
    with pytest.raises(ValueError):
        m.predict([-1])


def test_joint_normalizes():
    cfg = tiny_config()
    m = TransducerModel(cfg, seed=2)
    rng = np.random.default_rng(1)
    out = m.joint(ad.Tensor(rng.uniform(-1, 1, (1, cfg.projection_units))),
                  ad.Tensor(rng.uniform(-1, 1, (1, cfg.projection_units))))
    assert out.shape == (1, cfg.vocab_size + 1)
    assert np.exp(out.data).sum() == pytest.approx(1.0, abs=1e-12)


def test_joint_zero_weights_uniform():
    cfg = tiny_config()
    m = TransducerModel(cfg, seed=2)
    for name in m.select_trainable("Joint"):
        p = m.param(name)
        p.value = np.zeros_like(p.value)
    out = m.joint(ad.Tensor(np.ones((1, cfg.projection_units))),
                  ad.Tensor(np.ones((1, cfg.projection_units))))
    np.testing.assert_allclose(out.data, -np.log(cfg.vocab_size + 1.0))


def test_joint_gradient_matches_fd():
    cfg = tiny_config()
    m = TransducerModel(cfg, seed=4)
    rng = np.random.default_rng(2)
    enc = ad.Tensor(rng.uniform(-1, 1, (1, cfg.projection_units)), is_leaf=True)
    lm = ad.Tensor(rng.uniform(-1, 1, (1, cfg.projection_units)), is_leaf=True)
    weight = ad.Tensor(rng.uniform(-1, 1, (1, cfg.vocab_size + 1)))
    leaves = [enc, lm] + [m.param(n).tensor for n in m.select_trainable("Joint")]

    def build():
        return ad.sum_all(ad.mul(m.joint(enc, lm), weight))

    for t in leaves:
        t.zero_grad()
    with ad.Tape() as tape:
        tape.backward(build())
    numeric = finite_difference(lambda: build().item(), leaves)
    for leaf, num in zip(leaves, numeric):
        assert max_rel_error(leaf.grad, num) < 1e-5


def test_joint_lattice_matches_pairwise_joint():
    cfg = tiny_config()
    m = TransducerModel(cfg, seed=5)
    rng = np.random.default_rng(3)
    enc = ad.Tensor(rng.uniform(-1, 1, (3, cfg.projection_units)))
    lm = ad.Tensor(rng.uniform(-1, 1, (2, cfg.projection_units)))
    lattice = m.joint_lattice(enc, lm).data
    for t in range(3):
        for u in range(2):
            row = m.joint(ad.slice_block(enc, t, t + 1, 0, cfg.projection_units),
                          ad.slice_block(lm, u, u + 1, 0, cfg.projection_units))
            np.testing.assert_allclose(lattice[t * 2 + u], row.data[0], atol=1e-12)


def test_group_selection_partitions():
    m = TransducerModel(ModelConfig(), seed=0)
    joint = set(m.select_trainable("Joint"))
    lm = set(m.select_trainable("LM"))
    enc = set(m.select_trainable("Encoder"))
    dec = set(m.select_trainable("Decoder"))
    allp = set(m.select_trainable("All"))
    assert dec == lm | joint
    assert allp == enc | dec
    assert not (enc & dec) and not (lm & joint)
    counts = m.param_counts()
    assert counts["All"] == counts["Encoder"] + counts["Decoder"]
    assert counts["Decoder"] == counts["LM"] + counts["Joint"]
    with pytest.raises(ValueError):
        m.select_trainable("decoder")


def test_lm_step_matches_predict():
    cfg = tiny_config(lm_layers=2)
    m = TransducerModel(cfg, seed=6)
    ids = [1, 4, 0, 3]
    rows = m.predict(ids).data
    state = m.lm_start_state()
    np.testing.assert_allclose(state[-1][0], rows[0], atol=1e-14)
    for u, label in enumerate(ids):
        state = m.lm_step(state, label)
        np.testing.assert_allclose(state[-1][0], rows[u + 1], rtol=1e-12, atol=1e-13)


def test_joint_eager_matches_joint():
    cfg = tiny_config()
    m = TransducerModel(cfg, seed=7)
    rng = np.random.default_rng(4)
    e = rng.uniform(-1, 1, cfg.projection_units)
    l = rng.uniform(-1, 1, cfg.projection_units)
    tape_row = m.joint(ad.Tensor(e[None, :]), ad.Tensor(l[None, :])).data[0]
    np.testing.assert_allclose(m.joint_eager(e, l), tape_row, atol=1e-13)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    m = TransducerModel(ModelConfig(), seed=11)
    path = tmp_path / "model.json"
    save_checkpoint(m, path, meta={"note": "unit"})
    loaded = load_checkpoint(path)
    assert loaded.config == m.config
    for name in m.parameter_ids():
        assert np.array_equal(loaded.param(name).value, m.param(name).value)
    with pytest.raises(ValueError):
        load_container(path, expect_kind="fisher")


def test_checkpoint_rerun_same_seed_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_checkpoint(TransducerModel(ModelConfig(), seed=9), a)
    save_checkpoint(TransducerModel(ModelConfig(), seed=9), b)
    assert a.read_bytes() == b.read_bytes()
