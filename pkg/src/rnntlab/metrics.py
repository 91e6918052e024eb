"""Word error rate and keyword-restricted precision/recall.

Alignment is minimal-cost Levenshtein over words with unit costs. Ties are
broken deterministically: a suffix-cost table is computed first and the
alignment is then walked from the front, preferring match, then
substitution, then deletion, then insertion among the cost-optimal moves.
Walking from the front (rather than backtracking from the end) is what
makes the preference order bite at the earliest divergence point.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

MATCH = "match"
SUB = "substitution"
DEL = "deletion"
INS = "insertion"

_KEEP = re.compile(r"[^a-z' ]+")


def normalize_words(text: str) -> list[str]:
    """Lowercase, drop punctuation except apostrophes, collapse whitespace."""
    cleaned = _KEEP.sub(" ", text.lower().replace("\t", " "))
    return [w for w in cleaned.split(" ") if w]


@dataclass(frozen=True)
class AlignedPair:
    op: str
    ref: str | None
    hyp: str | None


@dataclass
class Alignment:
    pairs: list[AlignedPair]

    @property
    def cost(self) -> int:
        return sum(p.op != MATCH for p in self.pairs)

    def counts(self) -> dict[str, int]:
        out = {MATCH: 0, SUB: 0, DEL: 0, INS: 0}
        for p in self.pairs:
            out[p.op] += 1
        return out

    def ref_words(self) -> list[str]:
        return [p.ref for p in self.pairs if p.ref is not None]

    def hyp_words(self) -> list[str]:
        return [p.hyp for p in self.pairs if p.hyp is not None]


def align(ref: Sequence[str], hyp: Sequence[str]) -> Alignment:
    """Minimal-cost word alignment with the documented tie-break."""
    n, m = len(ref), len(hyp)
    # suffix costs: d[i][j] = edit distance between ref[i:] and hyp[j:]
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][m] = n - i
    for j in range(m + 1):
        d[n][j] = m - j
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            step = d[i + 1][j + 1] + (ref[i] != hyp[j])
            d[i][j] = min(step, d[i + 1][j] + 1, d[i][j + 1] + 1)

    pairs: list[AlignedPair] = []
    i = j = 0
    while i < n or j < m:
        best = d[i][j]
        if i < n and j < m and ref[i] == hyp[j] and d[i + 1][j + 1] == best:
            pairs.append(AlignedPair(MATCH, ref[i], hyp[j]))
            i, j = i + 1, j + 1
        elif i < n and j < m and ref[i] != hyp[j] and d[i + 1][j + 1] + 1 == best:
            pairs.append(AlignedPair(SUB, ref[i], hyp[j]))
            i, j = i + 1, j + 1
        elif i < n and d[i + 1][j] + 1 == best:
            pairs.append(AlignedPair(DEL, ref[i], None))
            i += 1
        else:
            pairs.append(AlignedPair(INS, None, hyp[j]))
            j += 1
    return Alignment(pairs)


def wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> float:
    """(substitutions + insertions + deletions) / total reference words."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    errors = 0
    ref_words = 0
    for r, h in zip(refs, hyps):
        a = align(r, h)
        errors += a.cost
        ref_words += len(r)
    if ref_words == 0:
        raise ValueError("reference corpus has no words")
    return errors / ref_words


@dataclass
class KeywordReport:
    n_ref: int
    n_hyp: int
    n_correct: int
    precision: float
    recall: float
    vacuous_precision: bool
    vacuous_recall: bool

    def to_dict(self) -> dict:
        return {
            "n_ref": self.n_ref, "n_hyp": self.n_hyp, "n_correct": self.n_correct,
            "precision": self.precision, "recall": self.recall,
            "vacuous_precision": self.vacuous_precision,
            "vacuous_recall": self.vacuous_recall,
        }


def keyword_pr(alignments: Iterable[Alignment], keywords: Iterable[str]) -> KeywordReport:
    """Micro-averaged precision/recall restricted to the keyword set.

    N_r and N_h count keyword tokens on each side; N_c counts matched pairs
    whose word is a keyword. Vacuous ratios (empty denominator) report 1.0
    and are flagged.
    """
    kw = set(keywords)
    n_ref = n_hyp = n_correct = 0
    for a in alignments:
        for p in a.pairs:
            if p.ref in kw:
                n_ref += 1
            if p.hyp in kw:
                n_hyp += 1
            if p.op == MATCH and p.ref in kw:
                n_correct += 1
    precision = n_correct / n_hyp if n_hyp else 1.0
    recall = n_correct / n_ref if n_ref else 1.0
    return KeywordReport(n_ref, n_hyp, n_correct, precision, recall,
                         vacuous_precision=n_hyp == 0, vacuous_recall=n_ref == 0)


def score_corpus(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]],
                 keywords: Iterable[str]) -> dict:
    """WER plus keyword and complement precision/recall over parallel corpora."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    alignments = [align(r, h) for r, h in zip(refs, hyps)]
    errors = sum(a.cost for a in alignments)
    ref_words = sum(len(r) for r in refs)
    if ref_words == 0:
        raise ValueError("reference corpus has no words")
    kw = set(keywords)
    others = {w for r in refs for w in r if w not in kw}
    others |= {w for h in hyps for w in h if w not in kw}
    return {
        "wer": errors / ref_words,
        "keywords": keyword_pr(alignments, kw).to_dict(),
        "non_keywords": keyword_pr(alignments, others).to_dict(),
    }


def read_utterance_lines(path) -> list[list[str]]:
    """One utterance per line, normalized to word lists."""
    with open(path, "r", encoding="utf-8") as f:
        return [normalize_words(line) for line in f.read().splitlines()]


def read_keywords(path) -> set[str]:
    with open(path, "r", encoding="utf-8") as f:
        words = [w.strip().lower() for w in f.read().splitlines()]
    return {w for w in words if w}
