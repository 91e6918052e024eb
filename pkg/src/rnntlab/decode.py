"""Greedy and beam transducer decoding with optional contextual biasing.

Biasing is shallow fusion against a grapheme trie: while a hypothesis
extends a trie path it collects a tentative per-grapheme boost, completing
a phrase locks that credit in (plus an optional completion bonus), and
falling off the trie or ending the utterance mid-phrase rolls the tentative
credit back. The bias component of a hypothesis score is therefore a pure
function of its emitted string, which keeps score merging sound.

Phrase matches are word-boundary anchored: a trie path may start only at
the beginning of the utterance or right after a space.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import SPACE_ID, decode_ids, encode_text

U_MAX = 5  # per-frame emission cap so decoding always terminates


class BiasNode:
    __slots__ = ("children", "terminal")

    def __init__(self):
        self.children: dict[int, "BiasNode"] = {}
        self.terminal = False


@dataclass(frozen=True)
class BiasContext:
    root: BiasNode
    boost: float
    final_boost: float
    phrases: tuple[str, ...]


def compile_bias(phrases: Sequence[str], boost: float, final_boost: float = 0.0) -> BiasContext:
    """Build the phrase trie; duplicates collapse, characters must be in-vocabulary."""
    if boost < 0 or final_boost < 0:
        raise ValueError("boost weights must be non-negative")
    root = BiasNode()
    kept: list[str] = []
    seen: set[tuple[int, ...]] = set()
    for phrase in phrases:
        if not phrase:
            raise ValueError("empty bias phrase")
        ids = tuple(encode_text(phrase))
        if ids in seen:
            continue
        seen.add(ids)
        kept.append(phrase)
        node = root
        for g in ids:
            node = node.children.setdefault(g, BiasNode())
        node.terminal = True
    return BiasContext(root=root, boost=float(boost), final_boost=float(final_boost),
                       phrases=tuple(sorted(kept)))


def read_bias_phrases(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.strip().lower() for line in f.read().splitlines()]
    return [line for line in lines if line]


Cursor = tuple[BiasNode, int]  # (trie node, graphemes of tentative credit)


def _bias_advance(ctx: BiasContext, cursors: tuple[Cursor, ...], at_boundary: bool,
                  symbol: int) -> tuple[tuple[Cursor, ...], float]:
    """Extend every live trie path by one grapheme; returns (cursors, score delta)."""
    delta = 0.0
    alive: list[Cursor] = []
    for node, unlocked in cursors:
        child = node.children.get(symbol)
        if child is None:
            delta -= ctx.boost * unlocked  # path died: tentative credit rolls back
        else:
            delta += ctx.boost
            pending = unlocked + 1
            if child.terminal:
                delta += ctx.final_boost
                pending = 0  # completed phrase: credit becomes permanent
            alive.append((child, pending))
    if at_boundary:
        child = ctx.root.children.get(symbol)
        if child is not None:
            delta += ctx.boost
            pending = 1
            if child.terminal:
                delta += ctx.final_boost
                pending = 0
            alive.append((child, pending))
    return tuple(alive), delta


def _bias_end_rollback(ctx: BiasContext, cursors: tuple[Cursor, ...]) -> float:
    return -ctx.boost * sum(unlocked for _, unlocked in cursors)


@dataclass
class Hypothesis:
    ys: tuple[int, ...]
    model_score: float
    bias_score: float
    lm_state: list
    cursors: tuple[Cursor, ...]

    @property
    def total(self) -> float:
        return self.model_score + self.bias_score

    @property
    def text(self) -> str:
        return decode_ids(self.ys)


def greedy_decode(model, features) -> list[int]:
    """Emit the argmax symbol while non-blank (at most U_MAX per frame)."""
    enc = np.asarray(model.encode(features).data)
    blank = model.config.blank_id
    state = model.lm_start_state()
    ys: list[int] = []
    for t in range(enc.shape[0]):
        for _ in range(U_MAX):
            logp = model.joint_eager(enc[t], state[-1][0])
            k = int(np.argmax(logp))
            if k == blank:
                break
            ys.append(k)
            state = model.lm_step(state, k)
    return ys


def _merge(pool: dict, ys: tuple, model_score: float, bias_score: float,
           lm_state, cursors) -> None:
    old = pool.get(ys)
    if old is None:
        pool[ys] = Hypothesis(ys, model_score, bias_score, lm_state, cursors)
    else:
        # same emitted string: sum path probabilities, bias part is shared
        old.model_score = np.logaddexp(old.model_score, model_score)


def beam_decode(model, features, beam_width: int,
                bias: BiasContext | None = None) -> list[Hypothesis]:
    """Frame-synchronous beam search with blank-terminated merging.

    Returns hypotheses ranked by total score; ties prefer the
    lexicographically smaller grapheme sequence (lower id, then shorter).
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    enc = np.asarray(model.encode(features).data)
    blank = model.config.blank_id
    vocab = model.config.vocab_size

    start = Hypothesis((), 0.0, 0.0, model.lm_start_state(), ())
    frontier = {(): start}
    for t in range(enc.shape[0]):
        alive = list(frontier.values())
        frontier = {}
        for _round in range(U_MAX + 1):
            candidates: dict[tuple, list] = {}
            for hyp in alive:
                logp = model.joint_eager(enc[t], hyp.lm_state[-1][0])
                _merge(frontier, hyp.ys, hyp.model_score + logp[blank],
                       hyp.bias_score, hyp.lm_state, hyp.cursors)
                if _round == U_MAX:
                    continue
                boundary = not hyp.ys or hyp.ys[-1] == SPACE_ID
                for k in range(vocab):
                    ys = hyp.ys + (k,)
                    score = hyp.model_score + logp[k]
                    entry = candidates.get(ys)
                    if entry is None:
                        if bias is not None:
                            cursors, delta = _bias_advance(bias, hyp.cursors, boundary, k)
                            bias_score = hyp.bias_score + delta
                        else:
                            cursors, bias_score = (), 0.0
                        candidates[ys] = [score, bias_score, hyp, k, cursors]
                    else:
                        entry[0] = np.logaddexp(entry[0], score)
            if not candidates:
                break
            ranked = sorted(candidates.items(),
                            key=lambda kv: (-(kv[1][0] + kv[1][1]), kv[0]))
            alive = []
            for ys, (score, bias_score, parent, k, cursors) in ranked[:beam_width]:
                alive.append(Hypothesis(ys, score, bias_score,
                                        model.lm_step(parent.lm_state, k), cursors))

        ranked = sorted(frontier.items(), key=lambda kv: (-kv[1].total, kv[0]))
        frontier = dict(ranked[:beam_width])

    final = []
    for hyp in frontier.values():
        if bias is not None and hyp.cursors:
            hyp.bias_score += _bias_end_rollback(bias, hyp.cursors)
            hyp.cursors = ()
        final.append(hyp)
    final.sort(key=lambda h: (-h.total, h.ys))
    return final
