"""Beam search scoring, biasing credit, rollback, and termination."""

import numpy as np
import pytest

from rnntlab import autodiff as ad
from rnntlab import decode
from rnntlab.decode import U_MAX, beam_decode, compile_bias, greedy_decode
from rnntlab.model import CHAR_TO_ID

VOCAB = 28
BLANK = 28


class _Config:
    blank_id = BLANK
    vocab_size = VOCAB


class ScriptedModel:
    """Plays back a fixed log-prob table indexed by (frame, emitted count).

    The prediction-network state is just the emission count, which is all
    the table needs; rows beyond the scripted depth repeat the last row.
    """

    config = _Config()

    def __init__(self, table):
        self.table = [[np.log(np.asarray(row)) for row in frame] for frame in table]

    def encode(self, features):
        return ad.Tensor(np.arange(len(self.table), dtype=float).reshape(-1, 1))

    def lm_start_state(self):
        return [(np.zeros(1),)]

    def lm_step(self, state, k):
        return [(state[-1][0] + 1.0,)]

    def joint_eager(self, enc_row, lm_row):
        frame = self.table[int(enc_row[0])]
        return frame[min(int(lm_row[0]), len(frame) - 1)]


def _uniform_row(p_a, p_b, p_blank):
    row = np.full(VOCAB + 1, 1e-12)
    row[CHAR_TO_ID["a"]] = p_a
    row[CHAR_TO_ID["b"]] = p_b
    row[BLANK] = p_blank
    return row


def _spelling_model(word, p_hit=0.9, p_blank_end=0.98):
    """One frame; the u-th emission strongly prefers the u-th grapheme."""
    rows = []
    for ch in word:
        row = np.full(VOCAB + 1, 1e-9)
        row[CHAR_TO_ID[ch]] = p_hit
        row[BLANK] = 1.0 - p_hit - 1e-9 * (VOCAB - 1)
        rows.append(row)
    end = np.full(VOCAB + 1, 1e-9)
    end[BLANK] = p_blank_end
    rows.append(end)
    return ScriptedModel([rows])


TWO_FRAME = ScriptedModel([[_uniform_row(0.3, 0.1, 0.6)],
                           [_uniform_row(0.3, 0.1, 0.6)]])


def test_beam_scores_sum_over_alignments():
    hyps = beam_decode(TWO_FRAME, None, 8)
    by_text = {h.text: h for h in hyps}
    # "" = blank,blank; "a" can be emitted in frame 0 or frame 1
    assert by_text[""].model_score == pytest.approx(np.log(0.6 * 0.6))
    assert by_text["a"].model_score == pytest.approx(np.log(2 * 0.3 * 0.6 * 0.6))
    assert by_text["b"].model_score == pytest.approx(np.log(2 * 0.1 * 0.6 * 0.6))
    assert hyps[0].text == ""


def test_greedy_on_blank_dominant_model_is_empty():
    assert greedy_decode(TWO_FRAME, None) == []


def test_greedy_follows_argmax():
    model = _spelling_model("ab")
    assert decode.decode_ids(greedy_decode(model, None)) == "ab"


def test_emission_cap_bounds_output():
    greedy_frames = 2
    model = ScriptedModel([[_uniform_row(0.9, 0.05, 0.05)]] * greedy_frames)
    ys = greedy_decode(model, None)
    assert len(ys) == greedy_frames * U_MAX


def test_beam_of_one_matches_greedy_with_low_id_tie_break():
    # 'a' and 'b' tie exactly; both searches must take the lower grapheme id
    model = ScriptedModel([[_uniform_row(0.45, 0.45, 0.1),
                            _uniform_row(0.1, 0.1, 0.8)]])
    greedy = decode.decode_ids(greedy_decode(model, None))
    assert greedy == "a"
    assert beam_decode(model, None, 1)[0].text == "a"


def test_zero_boost_is_bit_identical():
    ctx = compile_bias(["ab", "b"], 0.0, 0.0)
    plain = beam_decode(TWO_FRAME, None, 4)
    neutral = beam_decode(TWO_FRAME, None, 4, ctx)
    assert [(h.ys, h.model_score, h.bias_score) for h in plain] == \
           [(h.ys, h.model_score, h.bias_score) for h in neutral]


def test_boost_flips_ranking_only_past_threshold():
    # total("b") catches total("") once the one-grapheme boost exceeds
    # log(0.36) - log(0.072) = log(5)
    below = beam_decode(TWO_FRAME, None, 4, compile_bias(["b"], 1.0, 0.0))
    assert below[0].text == ""
    above = beam_decode(TWO_FRAME, None, 4, compile_bias(["b"], 1.7, 0.0))
    assert above[0].text == "b"
    assert above[0].bias_score == pytest.approx(1.7)
    assert above[0].model_score == pytest.approx(np.log(2 * 0.1 * 0.6 * 0.6))


def test_dead_end_partial_match_rolls_back_to_zero():
    # phrase "ab": hypotheses ending after the bare "a" must carry no credit
    ctx = compile_bias(["ab"], 2.0, 0.0)
    for h in beam_decode(TWO_FRAME, None, 8, ctx):
        if h.text == "a":
            assert h.bias_score == 0.0
        if h.text == "ab":
            assert h.bias_score == pytest.approx(4.0)
        assert not h.cursors


def test_completion_locks_credit_even_if_word_continues():
    ctx = compile_bias(["a"], 2.0, 0.5)
    for h in beam_decode(TWO_FRAME, None, 8, ctx):
        if h.text == "ab":
            # "a" completed (locked 2.0 + 0.5); the trailing b is off-trie
            assert h.bias_score == pytest.approx(2.5)


def test_nested_phrases_share_the_cursor():
    model = _spelling_model("zhuge")
    ctx = compile_bias(["zhu", "zhuge"], 1.5, 0.5)
    top = beam_decode(model, None, 4, ctx)[0]
    assert top.text == "zhuge"
    # one cursor walks z-h-u-g-e: 5 per-grapheme credits, 2 completions
    assert top.bias_score == pytest.approx(5 * 1.5 + 2 * 0.5)


def test_match_must_start_at_word_boundary():
    model = _spelling_model("ba")
    ctx = compile_bias(["a"], 2.0, 0.0)
    hyps = {h.text: h for h in beam_decode(model, None, 4, ctx)}
    assert hyps["ba"].bias_score == 0.0


def test_wider_beams_never_lose_score():
    best = [beam_decode(TWO_FRAME, None, w)[0].total for w in (1, 2, 4, 8)]
    assert all(a <= b + 1e-12 for a, b in zip(best, best[1:]))


def test_compile_bias_validation():
    with pytest.raises(ValueError):
        compile_bias([""], 1.0)
    with pytest.raises(ValueError):
        compile_bias(["ok"], -1.0)
    with pytest.raises(ValueError):
        compile_bias(["No"], 1.0)  # uppercase is out of vocabulary
    ctx = compile_bias(["dan", "dan", "ada"], 1.0)
    assert ctx.phrases == ("ada", "dan")


def test_read_bias_phrases(tmp_path):
    f = tmp_path / "phrases.txt"
    f.write_text(" Zhuge \n\ndan\n", encoding="utf-8")
    assert decode.read_bias_phrases(f) == ["zhuge", "dan"]


def test_beam_width_validation():
    with pytest.raises(ValueError):
        beam_decode(TWO_FRAME, None, 0)
