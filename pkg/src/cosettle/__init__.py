"""Consistency/separability trade-off objective on patch-embedding data.

Trains a projection head with a temporal cycle loss plus a per-token KL
regularizer, augments positional encodings against position shortcuts,
computes distance-based trade-off metrics and checks the spectral results
numerically.
"""

from .data import SyntheticModelSpec, VideoEmbeddingSequence, generate_corpus, read_corpus, write_corpus
from .errors import (
    CoSettleError,
    ContractError,
    FormatError,
    InvalidInputError,
    NumericError,
    ParameterError,
    ShapeError,
)
from .metrics import TradeoffMetrics, evaluate
from .pea import ProbeConfig, ShortcutProbeReport, pea_augment, shortcut_probe, sinusoidal_grid
from .projection import init_projection, load_checkpoint, save_checkpoint
from .theory import optimal_eigs_closed_form, optimize_surrogate_linear, verify_spectrum
from .trainer import TrainConfig, TrainHistory, train

__version__ = "0.1.0"
