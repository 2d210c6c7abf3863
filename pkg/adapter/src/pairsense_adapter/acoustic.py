"""Frame-level acoustic features from WAV audio.

Low-level descriptors are computed on 20 ms windows with 10 ms shifts. The
built-in backend is a deterministic numpy DSP implementation producing the
registry widths per category (loudness 11, pitch 10, shimmer 2, jitter 2,
mfccs 16); external toolkit backends can register alongside it but this
environment ships none.
"""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .errors import AdapterError, ToolkitMissingError
from .jobs import AUDIO_SETS

WINDOW_MS = 20
HOP_MS = 10
_EPS = 1e-10


def load_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Mono float64 samples in [-1, 1] plus the sample rate (PCM WAV only)."""
    path = Path(path)
    if not path.exists():
        raise AdapterError(f"audio file not found: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            sr = wf.getframerate()
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as e:
        raise AdapterError(f"cannot decode {path}: {e}")
    if width == 2:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 4:
        samples = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    elif width == 1:
        samples = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    else:
        raise AdapterError(f"unsupported PCM sample width {width} in {path}")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, sr


def duration_ms(samples: np.ndarray, sr: int) -> int:
    return round(1000 * len(samples) / sr)


def frame_signal(samples: np.ndarray, sr: int) -> np.ndarray:
    """(T, window) matrix of 20 ms windows at 10 ms hops; empty -> (0, window)."""
    win = round(sr * WINDOW_MS / 1000)
    hop = round(sr * HOP_MS / 1000)
    if len(samples) < win:
        return np.zeros((0, win))
    n = 1 + (len(samples) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def _band_energy_ratios(frames: np.ndarray, sr: int) -> np.ndarray:
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    freqs = np.fft.rfftfreq(frames.shape[1], d=1.0 / sr)
    total = spec.sum(axis=1) + _EPS
    low = spec[:, freqs <= 500].sum(axis=1) / total
    mid = spec[:, (freqs > 500) & (freqs <= 1500)].sum(axis=1) / total
    high = spec[:, freqs > 1500].sum(axis=1) / total
    return np.stack([low, mid, high], axis=1)


def loudness_features(frames: np.ndarray, sr: int) -> np.ndarray:
    """11 energy-derived values per frame."""
    rms = np.sqrt((frames ** 2).mean(axis=1))
    peak = np.abs(frames).max(axis=1) if frames.size else np.zeros(len(frames))
    mean_abs = np.abs(frames).mean(axis=1)
    std = frames.std(axis=1)
    energy = (frames ** 2).sum(axis=1)
    crest = peak / (rms + _EPS)
    bands = _band_energy_ratios(frames, sr)
    delta = np.diff(rms, prepend=rms[:1]) if len(rms) else rms
    return np.stack([rms, np.log(rms + _EPS), peak, mean_abs, std, crest, energy,
                     bands[:, 0], bands[:, 1], bands[:, 2], delta], axis=1)


def _autocorr_pitch(frames: np.ndarray, sr: int) -> tuple[np.ndarray, np.ndarray]:
    """Fundamental frequency and voicing strength per frame (autocorrelation)."""
    if not len(frames):
        return np.zeros(0), np.zeros(0)
    win = frames.shape[1]
    x = frames - frames.mean(axis=1, keepdims=True)
    spec = np.fft.rfft(x, n=2 * win, axis=1)
    ac = np.fft.irfft(spec * np.conj(spec), axis=1)[:, :win]
    lag_min = max(2, int(sr / 500))   # <= 500 Hz
    lag_max = min(win - 1, int(sr / 60))  # >= 60 Hz
    if lag_max <= lag_min:
        return np.zeros(len(frames)), np.zeros(len(frames))
    band = ac[:, lag_min:lag_max + 1]
    best = band.argmax(axis=1) + lag_min
    strength = np.take_along_axis(ac, best[:, None], axis=1)[:, 0] / (ac[:, 0] + _EPS)
    f0 = np.where(strength > 0.3, sr / best, 0.0)
    return f0, np.clip(strength, 0.0, 1.0)


def _spectral_moments(frames: np.ndarray, sr: int) -> np.ndarray:
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    freqs = np.fft.rfftfreq(frames.shape[1], d=1.0 / sr)
    total = spec.sum(axis=1) + _EPS
    centroid = (spec * freqs).sum(axis=1) / total
    spread = np.sqrt((spec * (freqs[None, :] - centroid[:, None]) ** 2).sum(axis=1) / total)
    cum = np.cumsum(spec, axis=1)
    roll_idx = (cum >= 0.85 * total[:, None]).argmax(axis=1)
    rolloff = freqs[roll_idx]
    flatness = np.exp(np.log(spec + _EPS).mean(axis=1)) / (spec.mean(axis=1) + _EPS)
    dominant = freqs[spec.argmax(axis=1)]
    return np.stack([centroid, spread, rolloff, flatness, dominant], axis=1)


def pitch_features(frames: np.ndarray, sr: int) -> np.ndarray:
    """10 frequency-domain values per frame."""
    f0, strength = _autocorr_pitch(frames, sr)
    voiced = (f0 > 0).astype(np.float64)
    log_f0 = np.log(f0 + 1.0)
    delta = np.diff(f0, prepend=f0[:1]) if len(f0) else f0
    moments = _spectral_moments(frames, sr)
    return np.concatenate([np.stack([f0, strength, voiced, log_f0, delta], axis=1), moments], axis=1)


def shimmer_features(frames: np.ndarray, sr: int) -> np.ndarray:
    """2 values: relative frame-to-frame amplitude change and its local spread."""
    amp = np.abs(frames).max(axis=1) if frames.size else np.zeros(len(frames))
    rel = np.abs(np.diff(amp, prepend=amp[:1])) / (amp + _EPS) if len(amp) else amp
    spread = np.abs(np.diff(rel, prepend=rel[:1])) if len(rel) else rel
    return np.stack([rel, spread], axis=1)


def jitter_features(frames: np.ndarray, sr: int) -> np.ndarray:
    """2 values: relative frame-to-frame fundamental-period change and its spread."""
    f0, _ = _autocorr_pitch(frames, sr)
    period = np.where(f0 > 0, 1.0 / (f0 + _EPS), 0.0)
    rel = np.abs(np.diff(period, prepend=period[:1])) / (period + _EPS)
    rel = np.where(period > 0, rel, 0.0)
    spread = np.abs(np.diff(rel, prepend=rel[:1])) if len(rel) else rel
    return np.stack([rel, spread], axis=1)


def _mel_filterbank(sr: int, n_fft: int, n_mels: int = 26) -> np.ndarray:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sr / 2), n_mels + 2)
    hz = mel_to_hz(mel_points)
    bins = np.floor((n_fft + 1) * hz / sr).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        left, center, right = bins[m - 1], bins[m], bins[m + 1]
        for k in range(left, center):
            if center > left:
                fb[m - 1, k] = (k - left) / (center - left)
        for k in range(center, right):
            if right > center:
                fb[m - 1, k] = (right - k) / (right - center)
    return fb


def mfcc_features(frames: np.ndarray, sr: int) -> np.ndarray:
    """16 mel-frequency cepstral coefficients per frame."""
    if not len(frames):
        return np.zeros((0, 16))
    win = frames.shape[1]
    hamming = np.hamming(win)
    spec = np.abs(np.fft.rfft(frames * hamming, axis=1)) ** 2
    fb = _mel_filterbank(sr, win)
    logmel = np.log(spec @ fb.T + _EPS)
    n_mels = logmel.shape[1]
    k = np.arange(16)[:, None]
    n = np.arange(n_mels)[None, :]
    dct = np.cos(np.pi * k * (2 * n + 1) / (2 * n_mels))
    return logmel @ dct.T


_EXTRACTORS = {
    "loudness": loudness_features,
    "pitch": pitch_features,
    "shimmer": shimmer_features,
    "jitter": jitter_features,
    "mfccs": mfcc_features,
}


def extract_acoustic(samples: np.ndarray, sr: int, sets: tuple[str, ...]) -> np.ndarray:
    """Concatenated frame-level matrix for the selected feature sets."""
    frames = frame_signal(samples, sr)
    width = sum(AUDIO_SETS[s] for s in sets)
    if not len(frames):
        return np.zeros((0, width))
    parts = []
    for name in sets:
        feats = _EXTRACTORS[name](frames, sr)
        if feats.shape[1] != AUDIO_SETS[name]:
            raise AdapterError(f"backend produced width {feats.shape[1]} for {name}, "
                               f"registry says {AUDIO_SETS[name]}")
        parts.append(feats)
    return np.concatenate(parts, axis=1)


def check_audio_toolkit() -> None:
    """The built-in DSP backend has no external dependency; nothing to check.

    Kept as the hook where an external toolkit backend would verify its
    binary, raising ToolkitMissingError with installation guidance.
    """
    return None
