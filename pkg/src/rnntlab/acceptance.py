"""The ten release checks for this workbench, runnable as one gate.

Five are direct computations (worked examples, oracles, neutrality); four
read experiment reports; one reruns the pipeline and compares bytes. Both
the CLI `accept` subcommand and the test suite drive these functions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels, metrics
from .decode import beam_decode, compile_bias
from .ewc import AnchorParameters, FisherEstimate, ewc_penalty
from .experiments import Harness, deep_merge, run_experiment, train_base
from .model import ModelConfig, TransducerModel
from .rnnt_loss import utterance_loss
from .synthdata import correct_names

TABLE_REF = "zhuge dan was from yangdu".split()
TABLE_HYP = "zhuge was from young zhuge".split()
TABLE_NAMES = frozenset({"zhuge", "dan", "yangdu"})
CORRECTED = "zhuge dan was from yangdu zhuge".split()


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str


# -- 1 -----------------------------------------------------------------------


def check_keyword_scoring() -> tuple[bool, str]:
    rep = metrics.keyword_pr([metrics.align(TABLE_REF, TABLE_HYP)], TABLE_NAMES)
    ok = ((rep.n_ref, rep.n_hyp, rep.n_correct) == (3, 2, 1)
          and rep.precision == 0.5 and rep.recall == 1.0 / 3.0)
    return ok, (f"N_r={rep.n_ref} N_h={rep.n_hyp} N_c={rep.n_correct} "
                f"P={rep.precision:.3f} R={rep.recall:.3f}")


# -- 2 -----------------------------------------------------------------------


def check_name_correction() -> tuple[bool, str]:
    got = correct_names(TABLE_REF, TABLE_HYP, TABLE_NAMES)
    return got == CORRECTED, " ".join(got)


# -- 3 -----------------------------------------------------------------------


def _enumerated_loss(blank: np.ndarray, label: np.ndarray) -> float:
    """Sum over every alignment path explicitly; usable only for tiny lattices."""
    T, U1 = blank.shape
    U = U1 - 1
    moves = T - 1 + U
    total = -np.inf
    for label_moves in itertools.combinations(range(moves), U):
        chosen = set(label_moves)
        t = u = 0
        lp = 0.0
        for m in range(moves):
            if m in chosen:
                lp += label[t, u]
                u += 1
            else:
                lp += blank[t, u]
                t += 1
        total = np.logaddexp(total, lp + blank[T - 1, U])
    if moves == 0:
        total = blank[T - 1, U]
    return -float(total)


def check_loss_oracle(lattices_per_shape: int = 100) -> tuple[bool, str]:
    rng = np.random.default_rng(20240901)
    worst = 0.0
    for T in range(1, 5):
        for U in range(0, 4):
            for _ in range(lattices_per_shape):
                blank = rng.normal(-1.0, 1.0, (T, U + 1))
                label = rng.normal(-1.5, 1.0, (T, U))
                got = float(kernels.transducer_loss(
                    ad.Tensor(blank), ad.Tensor(label)).data)
                want = _enumerated_loss(blank, label)
                worst = max(worst, abs(got - want))
    return worst < 1e-10, f"max |dp - enumeration| = {worst:.3e} over " \
                          f"{16 * lattices_per_shape} lattices"


# -- 4 -----------------------------------------------------------------------


def _fd_error(build, leaves, eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences."""
    for leaf in leaves:
        leaf.zero_grad()
    with ad.Tape() as tape:
        tape.backward(build())
    # copy every gradient before the probe evaluations: build() may zero grads
    grads = [np.array(leaf.grad, copy=True) for leaf in leaves]
    worst = 0.0
    for leaf, grad in zip(leaves, grads):
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = float(build().data)
            flat[i] = keep - eps
            lo = float(build().data)
            flat[i] = keep
            num = (hi - lo) / (2 * eps)
            a = grad.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst


def _primitive_cases(rng):
    a = ad.Tensor(rng.normal(0, 1, (3, 4)), is_leaf=True)
    b = ad.Tensor(rng.normal(0, 1, (4, 3)), is_leaf=True)
    c = ad.Tensor(rng.normal(0, 1, (3, 4)), is_leaf=True)
    v = ad.Tensor(rng.normal(0, 1, 4), is_leaf=True)
    rows = np.array([0, 2, 1])
    cols = np.array([1, 3, 0])
    return [
        ("matmul", lambda: ad.sum_all(ad.matmul(a, b)), [a, b]),
        ("add", lambda: ad.sum_all(ad.add(a, c)), [a, c]),
        ("sub", lambda: ad.sum_all(ad.mul(ad.sub(a, c), a)), [a, c]),
        ("mul", lambda: ad.sum_all(ad.mul(a, c)), [a, c]),
        ("neg+exp", lambda: ad.sum_all(ad.exp(ad.neg(a))), [a]),
        ("sigmoid", lambda: ad.sum_all(ad.sigmoid(a)), [a]),
        ("tanh", lambda: ad.sum_all(ad.tanh(a)), [a]),
        ("logaddexp", lambda: ad.sum_all(ad.logaddexp(a, c)), [a, c]),
        ("log_softmax", lambda: ad.sum_all(ad.mul(ad.log_softmax(a), c)), [a, c]),
        ("reshape", lambda: ad.sum_all(ad.mul(ad.reshape(a, (4, 3)), b)), [a, b]),
        ("slice", lambda: ad.sum_all(ad.slice_block(a, 1, 3, 0, 2)), [a]),
        ("concat_rows", lambda: ad.sum_all(ad.mul(ad.concat_rows([a, c]),
                                                  ad.concat_rows([c, a]))), [a, c]),
        ("concat_cols", lambda: ad.sum_all(ad.concat_cols([a, c])), [a, c]),
        ("gather_pairs", lambda: ad.sum_all(ad.gather_pairs(a, rows, cols)), [a]),
        ("outer_add_rows", lambda: ad.sum_all(ad.mul(
            ad.outer_add_rows(a, c), ad.outer_add_rows(c, a))), [a, c]),
        ("add_bias", lambda: ad.sum_all(ad.mul(ad.add_bias(a, v), c)), [a, c, v]),
    ]


def _tiny_model() -> tuple[TransducerModel, np.ndarray, list[int]]:
    cfg = ModelConfig(input_dim=3, frame_stack=2, encoder_layers=2,
                      encoder_stride_after=1, lm_layers=1, hidden_units=5,
                      projection_units=4, joint_hidden=6, vocab_size=5)
    model = TransducerModel(cfg, seed=9)
    rng = np.random.default_rng(17)
    return model, rng.normal(0, 0.5, (9, 3)), [2, 0, 4]


def check_gradient_suite() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    worst_prim = 0.0
    for _, build, leaves in _primitive_cases(rng):
        worst_prim = max(worst_prim, _fd_error(build, leaves))

    model, feats, label_ids = _tiny_model()
    joint_leaves = [model.param(n).tensor for n in model.select_trainable("Joint")]
    e = ad.Tensor(rng.normal(0, 0.5, (1, 4)), is_leaf=True)
    l_ = ad.Tensor(rng.normal(0, 0.5, (1, 4)), is_leaf=True)
    probe = ad.Tensor(np.linspace(-1, 1, 6).reshape(1, 6))

    def joint_build():
        model.zero_grad()
        return ad.sum_all(ad.mul(model.joint(e, l_), probe))

    worst_joint = _fd_error(joint_build, joint_leaves + [e, l_])

    anchors = AnchorParameters({n: model.param(n).value + rng.normal(0, 0.1, model.param(n).value.shape)
                                for n in model.parameter_ids()})
    fisher = FisherEstimate({n: rng.uniform(0.1, 2.0, model.param(n).value.shape)
                             for n in model.parameter_ids()}, sample_count=1)

    def penalty_build():
        model.zero_grad()
        return ewc_penalty(model, anchors, fisher, lam=3.0)

    penalty_leaves = [model.param(n).tensor for n in model.parameter_ids()]
    worst_pen = _fd_error(penalty_build, penalty_leaves)

    x_leaf = ad.Tensor(feats, is_leaf=True)
    loss_params = ["encoder.layer0.w_ih", "encoder.layer1.w_proj",
                   "lm.layer0.w_hh", "joint.w_out"]
    loss_leaves = [x_leaf] + [model.param(n).tensor for n in loss_params]

    def loss_build():
        model.zero_grad()
        return utterance_loss(model, x_leaf, label_ids)

    worst_loss = _fd_error(loss_build, loss_leaves, eps=1e-5)

    ok = worst_prim < 1e-7 and worst_pen < 1e-7 and worst_joint < 1e-5 \
        and worst_loss < 1e-5
    return ok, (f"rel err: primitives {worst_prim:.2e} (<1e-7), "
                f"penalty {worst_pen:.2e} (<1e-7), joint {worst_joint:.2e}, "
                f"loss {worst_loss:.2e} (<1e-5)")


# -- 5, 6, 7: read experiment reports ----------------------------------------


def check_ewc_direction(report: dict) -> tuple[bool, str]:
    ev = report["evaluation"]
    zero = report["summary"]["zero_lambda"]
    if ev["best_lambda"] is None:
        return False, "every positive lambda aborted"
    best = next(r for r in report["summary"]["rows"]
                if r["lambda"] == ev["best_lambda"])
    detail = (f"best lambda={ev['best_lambda']:g}: degradation "
              f"{best['median_base_degradation']:+.4f} vs {zero['median_base_degradation']:+.4f} "
              f"at lambda=0; user WER {best['median_user_wer']:.4f} vs "
              f"{zero['median_user_wer']:.4f}")
    return bool(ev["pass"]), detail


def check_layer_selection(report: dict) -> tuple[bool, str]:
    ev = report["evaluation"]
    med = report["summary"]["median_wer"]
    detail = ("supervised WER All/Decoder/Joint = "
              f"{med['All']['wer_supervised']:.4f}/{med['Decoder']['wer_supervised']:.4f}/"
              f"{med['Joint']['wer_supervised']:.4f}; tts WER LM/All = "
              f"{med['LM']['wer_tts']:.4f}/{med['All']['wer_tts']:.4f}")
    return bool(ev["pass"]), detail


def check_supervision_ladder(report: dict) -> tuple[bool, str]:
    ev = report["evaluation"]
    ladder = ev["recall_ladder"]
    detail = ("name recall " + " -> ".join(f"{ladder[c]:.3f}" for c in ladder)
              + f"; biasing recall/precision clauses: "
                f"{ev['bias_recall_never_lower']}/{ev['bias_precision_never_higher']}")
    return bool(ev["pass"]), detail


# -- 8 -----------------------------------------------------------------------


def _reference_bias(text: str, phrases, boost: float, final_boost: float) -> float:
    """Score a finished transcript by plain string matching, no trie.

    At each word-boundary anchor the per-grapheme credit that survives is
    boost times the longest phrase matching there (completions lock credit,
    whatever follows rolls back), plus the completion bonus once per
    matching phrase.
    """
    total = 0.0
    for i in range(len(text)):
        if i and text[i - 1] != " ":
            continue
        hits = [len(p) for p in phrases if text.startswith(p, i)]
        if hits:
            total += boost * max(hits) + final_boost * len(hits)
    return total


def check_bias_neutrality(model, features_list, names,
                          beam_width: int = 4) -> tuple[bool, str]:
    names = sorted(names)
    zero_bias = compile_bias(names, 0.0, 0.0)
    boosted = compile_bias(names, 2.5, 1.0)
    dead_ends = [n[:-1] + ("z" if not n.endswith("z") else "q") for n in names]
    adversarial = compile_bias(dead_ends, 3.0, 0.0)
    nested = compile_bias([names[0], names[0][:3]], 1.5, 0.5)

    checked = 0
    for feats in features_list:
        plain = beam_decode(model, feats, beam_width)
        neutral = beam_decode(model, feats, beam_width, zero_bias)
        if [(h.ys, h.model_score, h.bias_score, h.total) for h in plain] != \
           [(h.ys, h.model_score, h.bias_score, h.total) for h in neutral]:
            return False, "boost=0 beam differs from unbiased beam"

        for ctx in (boosted, adversarial, nested):
            for h in beam_decode(model, feats, beam_width, ctx):
                expect = _reference_bias(h.text, ctx.phrases, ctx.boost,
                                         ctx.final_boost)
                if abs(h.bias_score - expect) > 1e-9:
                    return False, (f"net bias {h.bias_score} != expected {expect} "
                                   f"for {h.text!r}")
                checked += 1
    return True, (f"boost=0 bit-identical on {len(features_list)} utterances; "
                  f"net boost exact on {checked} hypotheses incl. dead-end "
                  f"and nested prefixes")


# -- 9 -----------------------------------------------------------------------


def check_throughput(timing: dict) -> tuple[bool, str]:
    ev = timing["evaluation"]
    secs = ev["median_epoch_seconds"]
    curve = ", ".join(f"b={k}: {v:.3f}s" for k, v in secs.items())
    return bool(ev["pass"]), curve


# -- 10 ----------------------------------------------------------------------

_DETERMINISM_OVERRIDES = {
    "corpus": {"n_train": 40, "n_test": 10, "vocab_size": 30},
    "base_train": {"epochs": 3, "patience": 3, "eval_utterances": 5,
                   "fisher_samples": 5, "stop_wer": 0.0},
    "personalize": {"epochs": 2, "patience": 2},
}


def check_determinism(work_dir, overrides: dict | None = None) -> tuple[bool, str]:
    work = Path(work_dir)
    small = deep_merge(overrides or {}, _DETERMINISM_OVERRIDES)
    pairs = []
    for tag in ("a", "b"):
        train_base(small, work / f"base-{tag}")
        run_experiment("biasing_grid", [0], work / f"base-{tag}", small,
                       work / f"exp-{tag}")
    for fname in ("checkpoint.json", "fisher.json", "anchors.json", "report.json"):
        pairs.append((work / "base-a" / fname, work / "base-b" / fname))
    pairs.append((work / "exp-a" / "biasing_grid" / "report.json",
                  work / "exp-b" / "biasing_grid" / "report.json"))
    for pa, pb in pairs:
        if pa.read_bytes() != pb.read_bytes():
            return False, f"{pa.name} differs between identical reruns"
    return True, f"{len(pairs)} artifacts byte-identical across reruns"


# -- gate --------------------------------------------------------------------


def _load_or_run(name: str, seeds, base_dir, overrides, out_dir, reuse: bool):
    report_path = Path(out_dir) / name / "report.json"
    timing_path = Path(out_dir) / name / "timing.json"
    if reuse and report_path.exists() and timing_path.exists():
        with open(report_path, "r", encoding="utf-8") as f:
            report = json.load(f)
        with open(timing_path, "r", encoding="utf-8") as f:
            timing = json.load(f)
        return report, timing
    return run_experiment(name, seeds, base_dir, overrides, out_dir)


def run_all(out_dir, overrides: dict | None = None, seeds=(0, 1, 2),
            reuse: bool = True) -> list[CriterionResult]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []

    def add(number, name, outcome):
        results.append(CriterionResult(number, name, outcome[0], outcome[1]))

    add(1, "keyword_scoring_worked_example", check_keyword_scoring())
    add(2, "name_correction_worked_example", check_name_correction())
    add(3, "transducer_loss_enumeration_oracle", check_loss_oracle())
    add(4, "gradient_finite_difference_suite", check_gradient_suite())

    base_dir = out / "base"
    if not reuse or not (base_dir / "checkpoint.json").exists():
        train_base(overrides, base_dir)

    ewc, _ = _load_or_run("ewc_ablation", seeds, base_dir, overrides, out, reuse)
    add(5, "ewc_forgetting_direction", check_ewc_direction(ewc))

    layer, _ = _load_or_run("layer_selection", seeds, base_dir, overrides, out, reuse)
    add(6, "layer_selection_direction", check_layer_selection(layer))

    sup, _ = _load_or_run("supervision_levels", seeds, base_dir, overrides, out, reuse)
    add(7, "supervision_ladder_and_biasing", check_supervision_ladder(sup))

    h = Harness(base_dir, overrides)
    profile = h.profile(seeds[0])
    feats = [f for f, _ in h.user_eval(profile)[:6]]
    add(8, "bias_neutrality_and_rollback",
        check_bias_neutrality(h.base_model, feats, profile.names,
                              h.config["decode"]["beam_width"]))

    _, tp_timing = _load_or_run("throughput_benchmark", [seeds[0]], base_dir,
                                overrides, out, reuse)
    add(9, "batch_size_throughput_direction", check_throughput(tp_timing))

    add(10, "deterministic_reruns", check_determinism(out / "determinism", overrides))
    return results
