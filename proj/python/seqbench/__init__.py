"""Python surface of the seqbench engine.

Everything lives in the compiled ``_core`` module; this package just
re-exports it.
"""

from seqbench._core import (
    CURVE_HEADER,
    ConfigError,
    DataError,
    IoError,
    ParseError,
    describe,
    display_name,
    encode_chars,
    model_names,
    parameter_counts,
    synthetic_corpus,
    tokenize,
    train_synthetic,
    verify,
)

__all__ = [
    "CURVE_HEADER",
    "ConfigError",
    "DataError",
    "IoError",
    "ParseError",
    "describe",
    "display_name",
    "encode_chars",
    "model_names",
    "parameter_counts",
    "synthetic_corpus",
    "tokenize",
    "train_synthetic",
    "verify",
]
