"""Reconstruction of the symmetric Potts channel on regular trees."""
from .channel import ChannelParams, KSRegime, LambdaHat, ks_regime, transition_matrix
from .errors import (AtomBudgetExceeded, BracketNotFound, DegenerateNormalization,
                     GridFailure, InvalidParameters, PottsReconError, PrecisionExhausted)

__all__ = [
    "ChannelParams", "KSRegime", "LambdaHat", "ks_regime", "transition_matrix",
    "AtomBudgetExceeded", "BracketNotFound", "DegenerateNormalization", "GridFailure",
    "InvalidParameters", "PottsReconError", "PrecisionExhausted",
]
__version__ = "0.1.0"
