"""Transducer network: acoustic encoder, label prediction network, joint.

The encoder stacks input frames in non-overlapping groups, runs a stack of
projected LSTM layers, and halves the frame rate once by concatenating
consecutive frame pairs after a configurable layer. The prediction network
(LM) consumes one-hot grapheme labels; row u of its output is the state
after u labels, row 0 the zero-history start state. The joint adds linear
maps of one encoder row and one LM row, applies a tanh hidden layer, and
normalizes with log_softmax over the grapheme vocabulary plus blank.

Parameters are named ``<component>.<layer>.<matrix>`` so that training can
select the groups Encoder, LM, Joint, Decoder (= LM + Joint), or All.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels

ALPHABET = "abcdefghijklmnopqrstuvwxyz '"
CHAR_TO_ID = {c: i for i, c in enumerate(ALPHABET)}
SPACE_ID = CHAR_TO_ID[" "]
GROUPS = ("Joint", "LM", "Decoder", "Encoder", "All")

CONTAINER_FORMAT = "rnntlab-container-v1"


def encode_text(text: str) -> list[int]:
    """Map a lowercase string to grapheme ids; raises on unknown characters."""
    ids = []
    for ch in text:
        if ch not in CHAR_TO_ID:
            raise ValueError(f"character {ch!r} is not in the grapheme vocabulary")
        ids.append(CHAR_TO_ID[ch])
    return ids


def decode_ids(ids: Sequence[int]) -> str:
    out = []
    for i in ids:
        if not 0 <= int(i) < len(ALPHABET):
            raise ValueError(f"grapheme id {i} out of range")
        out.append(ALPHABET[int(i)])
    return "".join(out)


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 8
    frame_stack: int = 3
    encoder_layers: int = 2
    # time stride-2 stacking is applied after this 1-based layer (None: never)
    encoder_stride_after: int | None = 1
    lm_layers: int = 1
    hidden_units: int = 48
    projection_units: int = 24
    joint_hidden: int = 32
    vocab_size: int = 28

    def __post_init__(self):
        positive = ("input_dim", "frame_stack", "encoder_layers", "lm_layers",
                    "hidden_units", "projection_units", "joint_hidden", "vocab_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.encoder_stride_after is not None:
            if not 1 <= self.encoder_stride_after < self.encoder_layers:
                raise ValueError("encoder_stride_after must lie strictly inside the encoder stack")

    @property
    def blank_id(self) -> int:
        return self.vocab_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _lstm_param_shapes(in_dim: int, hidden: int, proj: int) -> dict[str, tuple[int, ...]]:
    return {
        "w_ih": (in_dim, 4 * hidden),
        "w_hh": (proj, 4 * hidden),
        "b": (4 * hidden,),
        "w_proj": (hidden, proj),
    }


class TransducerModel:
    """Encoder + prediction network + joint with named parameter groups."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self._params: dict[str, ad.Parameter] = {}
        rng = np.random.Generator(np.random.PCG64(seed))
        H = config.hidden_units
        P = config.projection_units
        for i in range(config.encoder_layers):
            in_dim = self._encoder_layer_input(i)
            self._add_lstm(f"encoder.layer{i}", in_dim, H, P, rng)
        for i in range(config.lm_layers):
            in_dim = config.vocab_size if i == 0 else P
            self._add_lstm(f"lm.layer{i}", in_dim, H, P, rng)
        J = config.joint_hidden
        V1 = config.vocab_size + 1
        self._add_param("joint.w_enc", (P, J), rng)
        self._add_param("joint.w_lm", (P, J), rng)
        self._add_param("joint.b_hidden", (J,), rng)
        self._add_param("joint.w_out", (J, V1), rng)
        self._add_param("joint.b_out", (V1,), rng)

    def _encoder_layer_input(self, i: int) -> int:
        cfg = self.config
        if i == 0:
            return cfg.input_dim * cfg.frame_stack
        if cfg.encoder_stride_after is not None and i == cfg.encoder_stride_after:
            return 2 * cfg.projection_units
        return cfg.projection_units

    def _add_param(self, name: str, shape: tuple[int, ...], rng) -> None:
        self._params[name] = ad.Parameter(name, rng.uniform(-0.1, 0.1, size=shape))

    def _add_lstm(self, prefix: str, in_dim: int, hidden: int, proj: int, rng) -> None:
        for suffix, shape in _lstm_param_shapes(in_dim, hidden, proj).items():
            self._add_param(f"{prefix}.{suffix}", shape, rng)
        # forget-gate bias starts at 1.0 to keep small LSTMs stable early on
        b = self._params[f"{prefix}.b"]
        b.value[hidden:2 * hidden] = 1.0

    # -- parameter access ---------------------------------------------------

    def parameter_ids(self) -> list[str]:
        return list(self._params)

    def param(self, name: str) -> ad.Parameter:
        return self._params[name]

    def parameters(self) -> list[ad.Parameter]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def select_trainable(self, group: str) -> list[str]:
        """Parameter ids of one of Joint, LM, Decoder, Encoder, All."""
        if group not in GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        prefixes = {
            "Joint": ("joint.",),
            "LM": ("lm.",),
            "Encoder": ("encoder.",),
            "Decoder": ("lm.", "joint."),
            "All": ("encoder.", "lm.", "joint."),
        }[group]
        return [n for n in self._params if n.startswith(prefixes)]

    def param_counts(self) -> dict[str, int]:
        return {g: sum(self._params[n].value.size for n in self.select_trainable(g))
                for g in GROUPS}

    def snapshot_values(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            raise ValueError("value snapshot does not cover the model's parameter ids")
        for n, p in self._params.items():
            p.value = np.array(values[n], dtype=np.float64)

    # -- forward pieces -----------------------------------------------------

    def _lstm_tensors(self, prefix: str) -> tuple[ad.Tensor, ...]:
        return tuple(self._params[f"{prefix}.{s}"].tensor
                     for s in ("w_ih", "w_hh", "b", "w_proj"))

    def encode(self, features) -> ad.Tensor:
        """features (T, input_dim) -> encoder output (T', projection_units)."""
        cfg = self.config
        x = features if isinstance(features, ad.Tensor) else ad.Tensor(
            np.asarray(features, dtype=np.float64))
        T, d = x.shape
        if d != cfg.input_dim:
            raise ValueError(f"features are {d}-dimensional, expected {cfg.input_dim}")
        if T < cfg.frame_stack:
            raise ValueError(f"need at least frame_stack={cfg.frame_stack} frames, got {T}")
        pad = (-T) % cfg.frame_stack
        if pad:
            x = ad.concat_rows([x, ad.Tensor(np.zeros((pad, d)))])
        stacked = (T + pad) // cfg.frame_stack
        # row-major reshape concatenates each group of frame_stack rows
        x = ad.reshape(x, (stacked, cfg.frame_stack * d))
        for i in range(cfg.encoder_layers):
            x = kernels.lstm_sequence(x, *self._lstm_tensors(f"encoder.layer{i}"))
            if cfg.encoder_stride_after is not None and i == cfg.encoder_stride_after - 1:
                t_cur, width = x.shape
                if t_cur >= 2:
                    if t_cur % 2:
                        x = ad.slice_block(x, 0, t_cur - 1, 0, width)
                    x = ad.reshape(x, (x.shape[0] // 2, 2 * width))
                else:
                    raise ValueError("too few frames left for stride-2 stacking")
        return x

    def predict(self, labels: Sequence[int]) -> ad.Tensor:
        """Label ids (length U) -> LM states ((U+1), projection_units), row 0 zero-history."""
        cfg = self.config
        ids = [int(u) for u in labels]
        for u in ids:
            if not 0 <= u < cfg.vocab_size:
                raise ValueError(f"label id {u} out of range (blank is never an input)")
        start = ad.Tensor(np.zeros((1, cfg.projection_units)))
        if not ids:
            return start
        onehot = np.zeros((len(ids), cfg.vocab_size))
        onehot[np.arange(len(ids)), ids] = 1.0
        x: ad.Tensor = ad.Tensor(onehot)
        for i in range(cfg.lm_layers):
            x = kernels.lstm_sequence(x, *self._lstm_tensors(f"lm.layer{i}"))
        return ad.concat_rows([start, x])

    def joint(self, enc_row: ad.Tensor, lm_row: ad.Tensor) -> ad.Tensor:
        """(1,P) x (1,P) -> (1, vocab+1) log-probabilities."""
        he = ad.matmul(enc_row, self._params["joint.w_enc"].tensor)
        hl = ad.matmul(lm_row, self._params["joint.w_lm"].tensor)
        h = ad.tanh(ad.add_bias(ad.add(he, hl), self._params["joint.b_hidden"].tensor))
        logits = ad.add_bias(ad.matmul(h, self._params["joint.w_out"].tensor),
                             self._params["joint.b_out"].tensor)
        return ad.log_softmax(logits)

    def joint_lattice(self, enc: ad.Tensor, lm: ad.Tensor) -> ad.Tensor:
        """All (t,u) pairs at once: rows t*(U+1)+u of a (T'*(U+1), vocab+1) table."""
        he = ad.matmul(enc, self._params["joint.w_enc"].tensor)
        hl = ad.matmul(lm, self._params["joint.w_lm"].tensor)
        s = ad.add_bias(ad.outer_add_rows(he, hl), self._params["joint.b_hidden"].tensor)
        logits = ad.add_bias(ad.matmul(ad.tanh(s), self._params["joint.w_out"].tensor),
                             self._params["joint.b_out"].tensor)
        return ad.log_softmax(logits)

    # -- eager single-step helpers for decoding -----------------------------

    def lm_start_state(self) -> list[tuple[np.ndarray, np.ndarray]]:
        cfg = self.config
        return [(np.zeros(cfg.projection_units), np.zeros(cfg.hidden_units))
                for _ in range(cfg.lm_layers)]

    def lm_step(self, state: list[tuple[np.ndarray, np.ndarray]],
                label_id: int) -> list[tuple[np.ndarray, np.ndarray]]:
        """Advance the prediction network by one label; returns the new state.

        state[k] = (projected output, cell) of LM layer k; the projected
        output of the last layer is the row predict() would produce.
        """
        cfg = self.config
        if not 0 <= label_id < cfg.vocab_size:
            raise ValueError(f"label id {label_id} out of range")
        H = cfg.hidden_units
        x = np.zeros(cfg.vocab_size)
        x[label_id] = 1.0
        new_state = []
        for i, (p_prev, c_prev) in enumerate(state):
            w_ih, w_hh, b, w_proj = (self._params[f"lm.layer{i}.{s}"].value
                                     for s in ("w_ih", "w_hh", "b", "w_proj"))
            z = x @ w_ih + p_prev @ w_hh + b
            gate_i = _sigmoid_np(z[:H])
            gate_f = _sigmoid_np(z[H:2 * H])
            gate_g = np.tanh(z[2 * H:3 * H])
            gate_o = _sigmoid_np(z[3 * H:])
            c = gate_f * c_prev + gate_i * gate_g
            p = (gate_o * np.tanh(c)) @ w_proj
            new_state.append((p, c))
            x = p
        return new_state

    def joint_eager(self, enc_row: np.ndarray, lm_row: np.ndarray) -> np.ndarray:
        """Numpy-only joint for decoding; matches joint() bit-for-bit."""
        h = np.tanh(enc_row @ self._params["joint.w_enc"].value
                    + lm_row @ self._params["joint.w_lm"].value
                    + self._params["joint.b_hidden"].value)
        logits = h @ self._params["joint.w_out"].value + self._params["joint.b_out"].value
        m = logits.max()
        s = logits - m
        return s - np.log(np.exp(s).sum())


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# container format: one JSON document for checkpoints, Fisher/anchor
# snapshots, and any other named-array payload
# ---------------------------------------------------------------------------


def save_container(path, kind: str, arrays: dict[str, np.ndarray],
                   config: ModelConfig | None = None, meta: dict | None = None) -> None:
    doc = {
        "format": CONTAINER_FORMAT,
        "kind": kind,
        "arrays": {
            name: {"shape": list(a.shape), "values": [float(v) for v in np.asarray(a).ravel()]}
            for name, a in arrays.items()
        },
    }
    if config is not None:
        doc["config"] = config.to_dict()
    if meta is not None:
        doc["meta"] = meta
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_container(path, expect_kind: str | None = None) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != CONTAINER_FORMAT:
        raise ValueError(f"{path}: not a {CONTAINER_FORMAT} document")
    if expect_kind is not None and doc.get("kind") != expect_kind:
        raise ValueError(f"{path}: kind {doc.get('kind')!r}, expected {expect_kind!r}")
    arrays = {
        name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["arrays"].items()
    }
    out = {"kind": doc.get("kind"), "arrays": arrays, "meta": doc.get("meta", {})}
    if "config" in doc:
        out["config"] = ModelConfig.from_dict(doc["config"])
    return out


def save_checkpoint(model: TransducerModel, path, meta: dict | None = None) -> None:
    save_container(path, "checkpoint", model.snapshot_values(),
                   config=model.config, meta=meta)


def load_checkpoint(path) -> TransducerModel:
    doc = load_container(path, expect_kind="checkpoint")
    model = TransducerModel(doc["config"], seed=0)
    model.load_values(doc["arrays"])
    return model
