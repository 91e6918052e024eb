"""Deterministic synthetic audio, corpora, and supervision conditions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnntlab import metrics
from rnntlab.decode import beam_decode, compile_bias, greedy_decode
from rnntlab.model import ModelConfig, TransducerModel, decode_ids
from rnntlab.synthdata import (CONDITION_TAGS, World, build_condition,
                               clean_tts_voice, correct_names, eval_pairs,
                               make_base_corpus, make_user_profile,
                               prototype_table, sample_voice, stable_seed,
                               synth_features, utterance_features)

WORLD = World()


def small_profile(world=WORLD, user_seed=0):
    corpus = make_base_corpus(world, n_train=0, n_test=0, vocab_size=20)
    return make_user_profile(world, corpus.vocab, user_seed,
                             n_names=2, train_per_name=2, test_per_name=1)


def small_model(seed=0):
    cfg = ModelConfig(input_dim=8, frame_stack=3, encoder_layers=1,
                      encoder_stride_after=None, lm_layers=1, hidden_units=8,
                      projection_units=6, joint_hidden=8, vocab_size=28)
    return TransducerModel(cfg, seed=seed)


# -- seeds and features ------------------------------------------------------


def test_stable_seed_is_frozen_across_platforms():
    assert stable_seed("check", 1, "x") == 12036858679767124443
    assert stable_seed("check", 1, "y") == 10120279697003090381


def test_features_are_pure_functions_of_identifiers():
    voice = sample_voice(WORLD, "s0")
    a = synth_features("abc", voice, "user_voice", WORLD, salt="s")
    b = synth_features("abc", voice, "user_voice", WORLD, salt="s")
    assert np.array_equal(a, b)
    c = synth_features("abc", voice, "user_voice", WORLD, salt="t")
    assert not np.array_equal(a, c)


def test_tts_mode_swaps_the_affine_law_not_the_rng():
    voice = sample_voice(WORLD, "s0")
    user = synth_features("abc", voice, "user_voice", WORLD)
    tts = synth_features("abc", voice, "clean_tts", WORLD)
    assert user.shape[1] == tts.shape[1] == WORLD.input_dim
    assert not np.array_equal(user, tts)
    with pytest.raises(ValueError):
        synth_features("abc", voice, "studio", WORLD)


@settings(max_examples=60, deadline=None)
@given(st.text(alphabet="abcde ", min_size=1, max_size=12))
def test_frame_count_bounded_by_duration_range(text):
    voice = sample_voice(WORLD, "s1")
    feats = synth_features(text, voice, "user_voice", WORLD)
    n = len(text)
    assert WORLD.min_dur * n <= feats.shape[0] <= WORLD.max_dur * n
    assert feats.shape[1] == WORLD.input_dim


def test_prototypes_are_even_parity_corners():
    protos = prototype_table(WORLD)
    assert protos.shape == (28, WORLD.input_dim)
    assert np.all(np.abs(protos) == 1.0)
    assert np.all(np.prod(protos, axis=1) > 0)
    # distinct rows: any two corners differ in at least two coordinates
    assert len({tuple(r) for r in protos}) == 28


def test_voices_are_deterministic_and_speaker_specific():
    v1 = sample_voice(WORLD, "alice")
    v2 = sample_voice(WORLD, "alice")
    v3 = sample_voice(WORLD, "bob")
    assert v1 == v2
    assert v1 != v3
    assert clean_tts_voice(WORLD) == clean_tts_voice(WORLD)


# -- corpora -----------------------------------------------------------------


def test_base_corpus_shape_and_determinism():
    c1 = make_base_corpus(WORLD, n_train=30, n_test=10, vocab_size=50)
    c2 = make_base_corpus(WORLD, n_train=30, n_test=10, vocab_size=50)
    assert c1 == c2
    assert len(c1.vocab) == 50
    assert len(set(c1.vocab)) == 50
    assert all(3 <= len(w) <= 5 for w in c1.vocab)
    assert len(c1.train) == 30 and len(c1.test) == 10
    uids = [u.uid for u in c1.train + c1.test]
    assert len(set(uids)) == len(uids)
    assert all(u.split == "train" for u in c1.train)
    assert all(u.split == "test" for u in c1.test)
    assert all(w in c1.vocab for u in c1.train for w in u.text.split())


def test_user_profile_names_are_out_of_vocabulary_and_interior():
    corpus = make_base_corpus(WORLD, n_train=0, n_test=0, vocab_size=40)
    profile = make_user_profile(WORLD, corpus.vocab, user_seed=3)
    assert len(profile.names) == 5
    assert all(6 <= len(n) <= 8 for n in profile.names)
    assert not set(profile.names) & set(corpus.vocab)
    assert len(profile.train) == 50 and len(profile.test) == 20
    for ut in profile.train + profile.test:
        words = ut.text.split()
        hits = [w for w in words if w in profile.names]
        assert len(hits) == 1
        # the name never sits at an utterance edge
        assert words[0] not in profile.names
        assert words[-1] not in profile.names


def test_eval_pairs_carry_normalized_references():
    profile = small_profile()
    pairs = eval_pairs(profile.test, WORLD)
    assert len(pairs) == len(profile.test)
    for (feats, ref), ut in zip(pairs, profile.test):
        assert ref == metrics.normalize_words(ut.text)
        assert np.array_equal(feats, utterance_features(ut, WORLD))


# -- name-corrected transcripts ----------------------------------------------


def test_correct_names_worked_example():
    ref = "zhuge dan was from yangdu".split()
    hyp = "zhuge was from young zhuge".split()
    names = ("zhuge", "dan", "yangdu")
    assert correct_names(ref, hyp, names) == \
        "zhuge dan was from yangdu zhuge".split()


def test_correct_names_leaves_non_name_errors_alone():
    ref = "go to the red house".split()
    hyp = "go do the blue mouse".split()
    assert correct_names(ref, hyp, ("zhuge",)) == hyp


def test_correct_names_is_idempotent_on_worked_example():
    ref = "zhuge dan was from yangdu".split()
    names = ("zhuge", "dan", "yangdu")
    once = correct_names(ref, "zhuge was from young zhuge".split(), names)
    assert correct_names(ref, once, names) == once


_WORDS = st.sampled_from(["fila", "demo", "kuro", "belo", "amesora", "tivuno"])


@settings(max_examples=150, deadline=None)
@given(st.lists(_WORDS, min_size=1, max_size=6),
       st.lists(_WORDS, max_size=6))
def test_correct_names_restores_every_reference_name(ref, hyp):
    names = ("amesora", "tivuno")
    out = correct_names(ref, hyp, names)
    for name in names:
        assert out.count(name) >= ref.count(name)


# -- supervision conditions ---------------------------------------------------


def test_condition_rejects_unknown_tag():
    with pytest.raises(ValueError):
        build_condition("oracle", small_profile(), small_model(), WORLD)


def test_tts_names_condition_is_name_copies():
    profile = small_profile()
    cache = build_condition("tts_names", profile, small_model(), WORLD,
                            train_per_name=10)
    items = cache.snapshot()
    assert len(items) == 10 * len(profile.names)
    counts = {n: 0 for n in profile.names}
    for item in items:
        assert item.transcript in profile.names
        assert item.source == "tts_names"
        counts[item.transcript] += 1
    assert set(counts.values()) == {10}


def test_supervised_condition_uses_reference_transcripts():
    profile = small_profile()
    cache = build_condition("supervised", profile, small_model(), WORLD)
    assert [i.transcript for i in cache.snapshot()] == \
        [u.text for u in profile.train]
    for item, ut in zip(cache.snapshot(), profile.train):
        assert np.array_equal(item.features, utterance_features(ut, WORLD))


def test_unsupervised_condition_uses_model_output():
    profile = small_profile()
    model = small_model()
    cache = build_condition("unsupervised", profile, model, WORLD)
    for item, ut in zip(cache.snapshot(), profile.train):
        want = decode_ids(greedy_decode(model, utterance_features(ut, WORLD)))
        assert item.transcript == want


def test_biased_condition_uses_biased_beam_output():
    profile = small_profile()
    model = small_model()
    cache = build_condition("biased", profile, model, WORLD, boost=2.0,
                            beam_width=2)
    bias = compile_bias(profile.names, 2.0, 0.0)
    for item, ut in zip(cache.snapshot(), profile.train):
        feats = utterance_features(ut, WORLD)
        assert item.transcript == beam_decode(model, feats, 2, bias)[0].text


def test_semi_supervised_condition_repairs_only_names():
    profile = small_profile()
    model = small_model()
    cache = build_condition("semi_supervised", profile, model, WORLD)
    for item, ut in zip(cache.snapshot(), profile.train):
        hyp = decode_ids(greedy_decode(model, utterance_features(ut, WORLD)))
        want = correct_names(metrics.normalize_words(ut.text), hyp.split(),
                             profile.names)
        assert item.transcript == " ".join(want)
        # every reference name survives the repair
        for name in profile.names:
            assert item.transcript.split().count(name) >= \
                metrics.normalize_words(ut.text).count(name)


def test_tts_sentences_condition_resynthesizes_train_split():
    profile = small_profile()
    cache = build_condition("tts_sentences", profile, small_model(), WORLD)
    items = cache.snapshot()
    assert [i.transcript for i in items] == [u.text for u in profile.train]
    for item, ut in zip(items, profile.train):
        tts = synth_features(ut.text, profile.voice, "clean_tts", WORLD,
                             salt=ut.uid)
        assert np.array_equal(item.features, tts)
        assert not np.array_equal(item.features, utterance_features(ut, WORLD))


def test_condition_tags_cover_the_studied_ladder():
    assert set(CONDITION_TAGS) == {"unsupervised", "biased", "tts_names",
                                   "tts_sentences", "semi_supervised",
                                   "supervised"}
