"""Desk-scale transducer personalization workbench.

Everything runs on synthetic speech-like features so the full pipeline
(base training, per-user fine-tuning, consolidation, biased decoding,
keyword scoring) fits in minutes on a laptop while keeping the moving
parts of the real system intact.
"""

from .decode import beam_decode, compile_bias, greedy_decode
from .ewc import AnchorParameters, FisherEstimate, estimate_fisher, ewc_penalty
from .metrics import align, keyword_pr, score_corpus, wer
from .model import ModelConfig, TransducerModel, load_checkpoint, save_checkpoint
from .rnnt_loss import batch_loss, utterance_loss
from .synthdata import World, correct_names, make_base_corpus, make_user_profile
from .training import TrainConfig, TrainingCache, personalize

__version__ = "0.1.0"

__all__ = [
    "AnchorParameters", "FisherEstimate", "ModelConfig", "TrainConfig",
    "TrainingCache", "TransducerModel", "World", "align", "batch_loss",
    "beam_decode", "compile_bias", "correct_names", "estimate_fisher",
    "ewc_penalty", "greedy_decode", "keyword_pr", "load_checkpoint",
    "make_base_corpus", "make_user_profile", "personalize", "save_checkpoint",
    "score_corpus", "utterance_loss", "wer", "__version__",
]
