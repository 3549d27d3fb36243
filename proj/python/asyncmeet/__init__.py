"""Meeting transcription over asynchronous distributed microphones."""

from ._core import (
    Error,
    InvalidInput,
    IoError,
    NumericalError,
    ban_gain,
    cer,
    close_gaps,
    estimate_shift,
    istft,
    mvdr_weights,
    read_wav,
    reduce_duplicates,
    score,
    set_log_level,
    similarity,
    simulate,
    stft,
    tokenize,
    transcribe,
    write_wav,
)

__version__ = "0.3.0"

__all__ = [
    "Error",
    "InvalidInput",
    "IoError",
    "NumericalError",
    "ban_gain",
    "cer",
    "close_gaps",
    "estimate_shift",
    "istft",
    "mvdr_weights",
    "read_wav",
    "reduce_duplicates",
    "score",
    "set_log_level",
    "similarity",
    "simulate",
    "stft",
    "tokenize",
    "transcribe",
    "write_wav",
]
