"""Python access to the telecg simulator, storage reader and analytics."""

from ._core import (
    NotFoundError,
    Server,
    StateError,
    StorageError,
    ValidationError,
    backoff_base_ms,
    beat_value,
    crc32,
    dequantize,
    detect_beats,
    detect_beats_codes,
    generate_analog,
    quality_window,
    quantize,
    read_range,
    recover,
    sample_count,
    scan_segment,
    simulate,
)

__all__ = [
    "NotFoundError",
    "Server",
    "StateError",
    "StorageError",
    "ValidationError",
    "backoff_base_ms",
    "beat_value",
    "crc32",
    "dequantize",
    "detect_beats",
    "detect_beats_codes",
    "generate_analog",
    "quality_window",
    "quantize",
    "read_range",
    "recover",
    "sample_count",
    "scan_segment",
    "simulate",
]
__version__ = "0.1.0"

