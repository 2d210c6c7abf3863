"""Feature-extraction bridge for the multimodal dialogue analysis engine."""

from .errors import AdapterError, ToolkitMissingError
from .extract import build_manifest, extract
from .jobs import AUDIO_SETS, VIDEO_SETS, ExtractionJob, load_transcript, parse_time_ms, segment

__version__ = "0.1.0"

__all__ = [
    "AUDIO_SETS", "VIDEO_SETS", "AdapterError", "ExtractionJob", "ToolkitMissingError",
    "build_manifest", "extract", "load_transcript", "parse_time_ms", "segment",
]
