"""Router-gated cross-modal feature fusion on synthetic paired-modality data.

A reliability router (paired masked autoencoders + cross-modal translators)
scores how trustworthy the audio stream is patch by patch; a recognizer with
gated cross-attention decoder blocks uses that score to lean on the visual
stream exactly when the audio degrades. Everything runs on a small
hand-rolled float64 autodiff core, deterministically from a single seed.
"""

from .autodiff import (
    Tensor,
    backward,
    cosine_similarity,
    cross_entropy,
    layer_norm,
    mse_loss,
    no_grad,
    reset_tape,
    softmax,
    tanh,
)
from .data import CorpusConfig, PairedSample, gen_corpus, mix_noise, read_corpus, write_corpus
from .evaluation import EvalReport, edit_distance, rerr, run_matrix, score_sweep, wer
from .fusion import FusionConfig, FusionModel, greedy_decode, load_fusion, save_fusion
from .optim import Adam
from .router import (
    ReliabilityScores,
    RouterConfig,
    RouterModel,
    load_router,
    local_gate,
    save_router,
    score,
)
from .training import TrainConfig, finetune, pretrain_router

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CorpusConfig",
    "EvalReport",
    "FusionConfig",
    "FusionModel",
    "PairedSample",
    "ReliabilityScores",
    "RouterConfig",
    "RouterModel",
    "Tensor",
    "TrainConfig",
    "backward",
    "cosine_similarity",
    "cross_entropy",
    "edit_distance",
    "finetune",
    "gen_corpus",
    "greedy_decode",
    "layer_norm",
    "load_fusion",
    "load_router",
    "local_gate",
    "mix_noise",
    "mse_loss",
    "no_grad",
    "pretrain_router",
    "read_corpus",
    "rerr",
    "reset_tape",
    "run_matrix",
    "save_fusion",
    "save_router",
    "score",
    "score_sweep",
    "softmax",
    "tanh",
    "wer",
    "write_corpus",
]
