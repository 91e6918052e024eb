"""Synthetic speech-like data and the supervision-condition simulator.

Audio stands in for nothing fancy: each grapheme is a fixed prototype
vector repeated for 2-4 frames, passed through a per-speaker affine map
(gain and bias) and seeded Gaussian noise. A separate speaker-independent
affine map plays the role of a TTS engine, so "synthesized" and "spoken"
features are systematically mismatched. Base-corpus words are 3-5 letters;
user names are 6-8 letters, which keeps them out of the base vocabulary by
construction.

Everything derives from hashed seeds, so corpora, voices, and features are
pure functions of their identifiers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from itertools import product

import numpy as np

from . import metrics
from .decode import beam_decode, compile_bias, greedy_decode
from .model import decode_ids, encode_text
from .training import TrainingCache

CONDITION_TAGS = ("unsupervised", "biased", "tts_names", "tts_sentences",
                  "semi_supervised", "supervised")


def stable_seed(*parts) -> int:
    """Platform-stable 64-bit seed from structured string parts."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


@dataclass(frozen=True)
class World:
    input_dim: int = 8
    seed: int = 0
    noise_sigma: float = 0.1
    speaker_strength: float = 0.35
    # the engine voice is a deliberate acoustic outlier relative to the
    # speaker population, so training on synthesized audio carries a cost
    tts_strength: float = 0.8
    min_dur: int = 2
    max_dur: int = 4

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("input_dim", "seed", "noise_sigma", "speaker_strength",
                 "tts_strength", "min_dur", "max_dur")}


DEFAULT_WORLD = World()


@dataclass(frozen=True)
class Voice:
    speaker_id: str
    gain: tuple[float, ...]
    bias: tuple[float, ...]


@dataclass(frozen=True)
class Utterance:
    uid: str
    text: str
    voice: Voice
    split: str


def prototype_table(world: World = DEFAULT_WORLD) -> np.ndarray:
    """One prototype vector per grapheme.

    Prototypes sit on even-parity corners of the {-1,+1}^input_dim hypercube,
    so any two differ in at least two coordinates and their sign pattern
    survives per-speaker gains (positive) and biases (magnitude < 1).
    """
    rng = np.random.default_rng(stable_seed("prototypes", world.seed, world.input_dim))
    corners = [c for c in product((-1.0, 1.0), repeat=world.input_dim)
               if np.prod(c) > 0]
    if len(corners) < 28:  # tiny input_dim in tests: fall back to gaussian
        return rng.normal(0.0, 1.0, (28, world.input_dim))
    idx = rng.choice(len(corners), size=28, replace=False)
    return np.array([corners[i] for i in idx])


def sample_voice(world: World, speaker_id: str) -> Voice:
    rng = np.random.default_rng(stable_seed("voice", world.seed, speaker_id))
    gain = 1.0 + world.speaker_strength * rng.uniform(-1.0, 1.0, world.input_dim)
    bias = world.speaker_strength * rng.uniform(-1.0, 1.0, world.input_dim)
    return Voice(speaker_id, tuple(gain), tuple(bias))


def clean_tts_voice(world: World = DEFAULT_WORLD) -> Voice:
    rng = np.random.default_rng(stable_seed("tts-engine", world.seed))
    gain = 1.0 + world.tts_strength * rng.uniform(-1.0, 1.0, world.input_dim)
    bias = world.tts_strength * rng.uniform(-1.0, 1.0, world.input_dim)
    return Voice("tts", tuple(gain), tuple(bias))


def synth_features(transcript: str, voice: Voice, mode: str,
                   world: World = DEFAULT_WORLD, salt="") -> np.ndarray:
    """Render a transcript to (T, input_dim) features.

    mode 'user_voice' applies the given voice's affine map; 'clean_tts'
    substitutes the fixed engine voice. Deterministic in all arguments.
    """
    if mode == "user_voice":
        law = voice
    elif mode == "clean_tts":
        law = clean_tts_voice(world)
    else:
        raise ValueError(f"unknown synthesis mode {mode!r}")
    ids = encode_text(transcript)
    rng = np.random.default_rng(
        stable_seed("features", world.seed, voice.speaker_id, mode, transcript, salt))
    protos = prototype_table(world)
    gain = np.asarray(law.gain)
    bias = np.asarray(law.bias)
    frames = []
    for g in ids:
        dur = int(rng.integers(world.min_dur, world.max_dur + 1))
        clean = protos[g] * gain + bias
        frames.append(clean + rng.normal(0.0, world.noise_sigma, (dur, world.input_dim)))
    return np.concatenate(frames, axis=0)


def utterance_features(ut: Utterance, world: World = DEFAULT_WORLD,
                       mode: str = "user_voice") -> np.ndarray:
    return synth_features(ut.text, ut.voice, mode, world, salt=ut.uid)


def eval_pairs(utterances, world: World = DEFAULT_WORLD) -> list[tuple[np.ndarray, list[str]]]:
    return [(utterance_features(u, world), metrics.normalize_words(u.text))
            for u in utterances]


_CONSONANTS = "bcdfghjklmnpqrstvwxyz"
_VOWELS = "aeiou"


def _make_word(rng, lo: int, hi: int) -> str:
    # alternating consonant-vowel keeps the grapheme transitions learnable
    length = int(rng.integers(lo, hi + 1))
    chars = []
    while len(chars) < length:
        chars.append(_CONSONANTS[int(rng.integers(0, len(_CONSONANTS)))])
        chars.append(_VOWELS[int(rng.integers(0, len(_VOWELS)))])
    return "".join(chars[:length])


def _unique_words(rng, count: int, lo: int, hi: int) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        w = _make_word(rng, lo, hi)
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass(frozen=True)
class BaseCorpus:
    vocab: tuple[str, ...]
    train: tuple[Utterance, ...]
    test: tuple[Utterance, ...]


def make_base_corpus(world: World = DEFAULT_WORLD, n_train: int = 500,
                     n_test: int = 100, vocab_size: int = 200, seed: int = 0) -> BaseCorpus:
    rng = np.random.default_rng(stable_seed("base-corpus", world.seed, seed))
    vocab = _unique_words(rng, vocab_size, 3, 5)
    utts = []
    for i in range(n_train + n_test):
        n_words = int(rng.integers(3, 7))
        words = [vocab[int(k)] for k in rng.integers(0, vocab_size, n_words)]
        split = "train" if i < n_train else "test"
        voice = sample_voice(world, f"base{i}")
        utts.append(Utterance(f"base-{split}-{i}", " ".join(words), voice, split))
    return BaseCorpus(tuple(vocab), tuple(utts[:n_train]), tuple(utts[n_train:]))


@dataclass(frozen=True)
class UserProfile:
    speaker_id: str
    voice: Voice
    names: tuple[str, ...]
    train: tuple[Utterance, ...]
    test: tuple[Utterance, ...]


def make_user_profile(world: World, base_vocab, user_seed: int,
                      n_names: int = 5, train_per_name: int = 10,
                      test_per_name: int = 4) -> UserProfile:
    """A speaker with personal name words embedded in base-vocabulary carrier
    sentences; names are longer than every base-vocabulary word."""
    rng = np.random.default_rng(stable_seed("user-profile", world.seed, user_seed))
    speaker_id = f"user{user_seed}"
    voice = sample_voice(world, speaker_id)
    names = _unique_words(rng, n_names, 6, 8)
    vocab = list(base_vocab)

    def sentence(name: str) -> str:
        # the name always sits between carrier words, never at an edge
        n_fill = int(rng.integers(2, 5))
        words = [vocab[int(k)] for k in rng.integers(0, len(vocab), n_fill)]
        pos = int(rng.integers(1, n_fill))
        return " ".join(words[:pos] + [name] + words[pos:])

    train, test = [], []
    for ni, name in enumerate(names):
        for j in range(train_per_name):
            train.append(Utterance(f"{speaker_id}-train-{ni}-{j}", sentence(name),
                                   voice, "train"))
        for j in range(test_per_name):
            test.append(Utterance(f"{speaker_id}-test-{ni}-{j}", sentence(name),
                                  voice, "test"))
    return UserProfile(speaker_id, voice, tuple(names), tuple(train), tuple(test))


def correct_names(ref_words, hyp_words, names) -> list[str]:
    """Repair only the name errors in a hypothesis, guided by the alignment.

    Substituted names are restored in place, deleted names are inserted at
    their aligned position; every other hypothesis word (including inserted
    names, the false alarms) is left untouched.
    """
    name_set = set(names)
    out: list[str] = []
    for p in metrics.align(list(ref_words), list(hyp_words)).pairs:
        if p.op == metrics.MATCH:
            out.append(p.hyp)
        elif p.op == metrics.SUB:
            out.append(p.ref if p.ref in name_set else p.hyp)
        elif p.op == metrics.INS:
            out.append(p.hyp)
        elif p.ref in name_set:  # deletion of a name
            out.append(p.ref)
    return out


def build_condition(tag: str, profile: UserProfile, base_model,
                    world: World = DEFAULT_WORLD, boost: float = 2.0,
                    final_boost: float = 0.0, beam_width: int = 4,
                    train_per_name: int = 10) -> TrainingCache:
    """Assemble the training cache for one supervision condition."""
    if tag not in CONDITION_TAGS:
        raise ValueError(f"unknown supervision condition {tag!r}")
    cache = TrainingCache(capacity=max(1, len(profile.train), len(profile.names) * train_per_name))

    if tag == "tts_names":
        for ni, name in enumerate(profile.names):
            for j in range(train_per_name):
                feats = synth_features(name, profile.voice, "clean_tts", world,
                                       salt=f"ttsname-{ni}-{j}")
                cache.append(f"{profile.speaker_id}-ttsname-{ni}-{j}", feats, name, tag)
        return cache

    if tag == "tts_sentences":
        for ut in profile.train:
            feats = synth_features(ut.text, profile.voice, "clean_tts", world, salt=ut.uid)
            cache.append(f"{ut.uid}-tts", feats, ut.text, tag)
        return cache

    bias = compile_bias(profile.names, boost, final_boost) if tag == "biased" else None
    for ut in profile.train:
        feats = utterance_features(ut, world)
        if tag == "supervised":
            transcript = ut.text
        elif tag == "unsupervised":
            transcript = decode_ids(greedy_decode(base_model, feats))
        elif tag == "biased":
            transcript = beam_decode(base_model, feats, beam_width, bias)[0].text
        else:  # semi_supervised
            hyp = decode_ids(greedy_decode(base_model, feats))
            corrected = correct_names(metrics.normalize_words(ut.text),
                                      hyp.split(), profile.names)
            transcript = " ".join(corrected)
        cache.append(ut.uid, feats, transcript, tag)
    return cache
