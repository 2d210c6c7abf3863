"""Fixtures: a deterministic 30-second WAV clip and a 3-utterance transcript."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
import pytest

SR = 16000


def write_wav(path: Path, seconds: float = 30.0, sr: int = SR, seed: int = 0) -> Path:
    """Synthesized speech-like audio: tone bursts over noise, PCM16 mono."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * sr)) / sr
    signal = 0.05 * rng.standard_normal(len(t))
    for start, dur, f0 in ((0.5, 8.0, 180.0), (10.5, 8.0, 240.0), (20.5, 8.5, 140.0)):
        seg = (t >= start) & (t < start + dur)
        envelope = 0.4 + 0.2 * np.sin(2 * np.pi * 3.0 * t[seg])
        signal[seg] += envelope * np.sin(2 * np.pi * f0 * t[seg])
    pcm = np.clip(signal, -1.0, 1.0)
    data = (pcm * 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sr)
        wf.writeframes(data.tobytes())
    return path


@pytest.fixture(scope="session")
def fixture_clip(tmp_path_factory) -> Path:
    return write_wav(tmp_path_factory.mktemp("media") / "session.wav")


@pytest.fixture(scope="session")
def fixture_transcript(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("media") / "transcript.tsv"
    path.write_text(
        "0:00\tS1\tI don't know how this works\n"
        "0:10\tS2\tclick the blue block first\n"
        "0:20\tS1\tokay that looks right\n",
        encoding="utf-8",
    )
    return path
