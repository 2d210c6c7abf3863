"""Run an extraction job and emit the canonical JSON-lines feature file.

The output format is the analysis engine's ingestion interface: one JSON
object per utterance (matrices as arrays of arrays, row = frame) plus a
sidecar manifest declaring each modality's feature set and row width.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import acoustic
from .errors import AdapterError
from .facial import load_face_map, load_facial_csv
from .jobs import AUDIO_SETS, VIDEO_SETS, ExtractionJob, load_transcript, segment
from .textenc import SentenceEncoder, SentimentEncoder

MANIFEST_SUFFIX = ".manifest.json"


def _feature_set_name(sets: tuple[str, ...]) -> str:
    return sets[0] if len(sets) == 1 else "+".join(sets)


def build_manifest(job: ExtractionJob) -> dict:
    modalities = {}
    if job.audio_sets:
        modalities["audio"] = {
            "feature_set": _feature_set_name(job.audio_sets),
            "dim": sum(AUDIO_SETS[s] for s in job.audio_sets),
        }
    if job.video_sets:
        modalities["video"] = {
            "feature_set": _feature_set_name(job.video_sets),
            "dim": sum(VIDEO_SETS[s] for s in job.video_sets),
        }
    return {"schema_version": 1, "modalities": modalities}


def extract(job: ExtractionJob) -> Path:
    """Produce the feature file; returns its path.

    One record per transcript utterance. A face never seen inside an
    utterance's span leaves that record without video features and with the
    video presence flag cleared.
    """
    rows = load_transcript(job.transcript)

    samples = sr = None
    if job.audio_sets or job.audio is not None:
        acoustic.check_audio_toolkit()
        samples, sr = acoustic.load_wav(job.audio)
        media_end = acoustic.duration_ms(samples, sr)
    else:
        media_end = rows[-1].t_start_ms + 1

    facial = face_map = None
    if job.video_sets:
        facial = load_facial_csv(job.video_features, job.video_sets)
        face_map = load_face_map(job.face_map)
        speaker_to_face = {}
        for face_id, speaker in face_map.items():
            if speaker in speaker_to_face:
                raise AdapterError(f"face map assigns two faces to speaker {speaker!r}")
            speaker_to_face[speaker] = face_id

    sentence_enc = SentenceEncoder(job.sentence_model) if job.sentence_model else None
    sentiment_enc = SentimentEncoder(job.sentiment_model) if job.sentiment_model else None

    spans = segment(rows, media_end)
    records = []
    for row, (start, end) in zip(rows, spans):
        audio_frames = None
        if job.audio_sets:
            lo = round(sr * start / 1000)
            hi = round(sr * end / 1000)
            audio_frames = acoustic.extract_acoustic(samples[lo:hi], sr, job.audio_sets)
        video_frames = None
        if job.video_sets:
            face_id = speaker_to_face.get(row.speaker)
            if face_id is not None:
                video_frames = facial.utterance_matrix(face_id, start, end, job.video_sets)
        sentence_vec = sentence_enc.encode(row.text) if sentence_enc else None
        sentiment_vec = sentiment_enc.encode(row.text) if sentiment_enc else None

        has_audio = audio_frames is not None
        has_video = video_frames is not None
        records.append({
            "session_id": job.session_id,
            "pair_id": job.pair_id,
            "speaker_id": job.speaker_id(row.speaker),
            "t_start_ms": row.t_start_ms,
            "label": None,
            "text": row.text,
            "sentence_vec": None if sentence_vec is None else [float(v) for v in sentence_vec],
            "sentiment_vec": None if sentiment_vec is None else [float(v) for v in sentiment_vec],
            "audio_vec": None,
            "audio_frames": None if audio_frames is None else [[float(v) for v in r] for r in audio_frames],
            "video_frames": None if video_frames is None else [[float(v) for v in r] for r in video_frames],
            "modality_mask": {
                "language": bool(row.text) or sentence_vec is not None or sentiment_vec is not None,
                "audio": has_audio,
                "video": has_video,
            },
        })

    out = Path(job.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    with open(out.with_name(out.name + MANIFEST_SUFFIX), "w", encoding="utf-8") as fh:
        json.dump(build_manifest(job), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
