class AdapterError(Exception):
    """Base class: bad jobs, bad media, malformed transcripts."""


class ToolkitMissingError(AdapterError):
    """A required external toolkit or model is unavailable; message says how to fix."""
