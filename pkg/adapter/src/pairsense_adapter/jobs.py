"""Extraction jobs: media paths, transcript rows, selected feature sets.

Transcripts carry one utterance per line as ``time<TAB>speaker<TAB>text``
with time as ``min:sec`` (fractional seconds allowed). Lines must be in
temporal order; the segmenter derives utterance ends from the next start.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import AdapterError

# Frame-level feature sets the adapter can emit, with their row widths.
# Matches the analysis engine's registry for the names it knows; eye gaze is
# emitted as the 8 per-face direction features the toolkit produces, under a
# distinct name so declared dims stay truthful.
AUDIO_SETS = {"loudness": 11, "pitch": 10, "shimmer": 2, "jitter": 2, "mfccs": 16}
VIDEO_SETS = {"head_pose": 6, "facial_aus": 35, "gaze_direction": 8}
SELECTABLE_VIDEO_NAMES = {"head_pose", "facial_aus", "eye_gaze", "gaze_direction"}

_TIME = re.compile(r"^(\d+):(\d{1,2}(?:\.\d+)?)$")


@dataclass(frozen=True)
class TranscriptRow:
    t_start_ms: int
    speaker: str
    text: str


@dataclass(frozen=True)
class ExtractionJob:
    """One session's extraction: inputs, selected sets, identity mapping, output."""

    transcript: Path
    out: Path
    audio: Path | None = None
    video_features: Path | None = None
    face_map: Path | None = None
    audio_sets: tuple[str, ...] = ()
    video_sets: tuple[str, ...] = ()
    sentence_model: str | None = None
    sentiment_model: str | None = None
    pair_id: str = "pair"
    session_id: str = "session"
    speakers: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        bad_audio = [s for s in self.audio_sets if s not in AUDIO_SETS]
        if bad_audio:
            raise AdapterError(f"unknown audio feature sets {bad_audio}; known: {sorted(AUDIO_SETS)}")
        bad_video = [s for s in self.video_sets if s not in SELECTABLE_VIDEO_NAMES]
        if bad_video:
            raise AdapterError(f"unknown video feature sets {bad_video}; known: {sorted(SELECTABLE_VIDEO_NAMES)}")
        # the paper-style selection name maps onto what the toolkit emits
        object.__setattr__(self, "video_sets",
                           tuple("gaze_direction" if s == "eye_gaze" else s for s in self.video_sets))
        if self.audio_sets and self.audio is None:
            raise AdapterError("audio feature sets selected but no audio file given")
        if self.video_sets and self.video_features is None:
            raise AdapterError("video feature sets selected but no facial-features file given")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExtractionJob":
        path = Path(path)
        if not path.exists():
            raise AdapterError(f"job file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("schema_version") != 1:
            raise AdapterError(f"job schema_version {obj.get('schema_version')!r} unsupported")
        base = path.parent

        def rel(p):
            return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

        text_cfg = obj.get("text", {})
        return cls(
            transcript=rel(obj["transcript"]),
            out=rel(obj["out"]),
            audio=rel(obj.get("audio")),
            video_features=rel(obj.get("video_features")),
            face_map=rel(obj.get("face_map")),
            audio_sets=tuple(obj.get("audio_sets", ())),
            video_sets=tuple(obj.get("video_sets", ())),
            sentence_model=text_cfg.get("sentence_model"),
            sentiment_model=text_cfg.get("sentiment_model"),
            pair_id=obj.get("pair_id", "pair"),
            session_id=obj.get("session_id", "session"),
            speakers=obj.get("speakers", {}),
        )

    def speaker_id(self, transcript_speaker: str) -> str:
        return self.speakers.get(transcript_speaker, f"{self.pair_id}_{transcript_speaker}")


def parse_time_ms(text: str) -> int:
    m = _TIME.match(text.strip())
    if not m:
        raise AdapterError(f"bad timestamp {text!r}; expected min:sec")
    minutes, seconds = int(m.group(1)), float(m.group(2))
    if seconds >= 60:
        raise AdapterError(f"bad timestamp {text!r}: seconds must be < 60")
    return round(1000 * (60 * minutes + seconds))


def load_transcript(path: str | Path) -> list[TranscriptRow]:
    """Parse and validate a transcript; rows must be in temporal order."""
    path = Path(path)
    if not path.exists():
        raise AdapterError(f"transcript not found: {path}")
    rows: list[TranscriptRow] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise AdapterError(f"transcript line {line_no}: expected time<TAB>speaker<TAB>utterance")
            t, speaker, text = parts
            rows.append(TranscriptRow(parse_time_ms(t), speaker.strip(), text.strip()))
    if not rows:
        raise AdapterError(f"transcript is empty: {path}")
    for prev, cur in zip(rows, rows[1:]):
        if cur.t_start_ms < prev.t_start_ms:
            raise AdapterError(
                f"transcript timestamps not monotone non-decreasing: "
                f"{cur.t_start_ms} ms follows {prev.t_start_ms} ms")
    return rows


def segment(rows: Sequence[TranscriptRow], media_end_ms: int) -> list[tuple[int, int]]:
    """Per-utterance spans: each starts at its timestamp and ends at the next
    utterance's start, the last at media end."""
    if media_end_ms < rows[-1].t_start_ms:
        raise AdapterError(
            f"media ends at {media_end_ms} ms, before the last utterance at {rows[-1].t_start_ms} ms")
    spans = []
    for i, row in enumerate(rows):
        end = rows[i + 1].t_start_ms if i + 1 < len(rows) else media_end_ms
        spans.append((row.t_start_ms, end))
    return spans
