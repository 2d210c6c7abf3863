"""Canonical data types, feature-file I/O, normalization, and a synthetic corpus generator.

The on-disk format is JSON lines, one object per utterance, with matrices as
arrays of arrays (row = frame), plus a sidecar manifest that declares which
frame-level feature set (and hence row width) each modality carries.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError, ParseError, SchemaError


class Label(enum.IntEnum):
    """Grouped dialogue categories; the class-index encoding is fixed."""

    CONFUSION = 0
    CONFLICT = 1
    OTHER = 2

    @classmethod
    def from_name(cls, name: str) -> "Label":
        try:
            return _LABEL_BY_NAME[name]
        except KeyError:
            raise DataError(f"unknown label {name!r}; expected one of {sorted(_LABEL_BY_NAME)}")

    @property
    def display_name(self) -> str:
        return self.name.capitalize()


_LABEL_BY_NAME = {
    "Confusion": Label.CONFUSION,
    "Conflict": Label.CONFLICT,
    "Other": Label.OTHER,
}

N_CLASSES = 3

MODALITY_ORDER = ("language", "audio", "video")

# Frame-level and precomputed feature sets with their fixed dimensions.
# Frame widths are validated against the manifest; unknown set names are
# allowed and treated as opaque (dim comes from the manifest alone).
FEATURE_DIMS: Mapping[str, Mapping[str, int]] = {
    "language": {"sentence": 768, "sentiment": 3},
    "audio": {
        "loudness": 11,
        "pitch": 10,
        "shimmer": 2,
        "jitter": 2,
        "mfccs": 16,
        "wav2vec": 768,
    },
    "video": {"eye_gaze": 112, "head_pose": 6, "facial_aus": 35},
}

SENTENCE_DIM = FEATURE_DIMS["language"]["sentence"]
SENTIMENT_DIM = FEATURE_DIMS["language"]["sentiment"]
AUDIO_VEC_DIM = FEATURE_DIMS["audio"]["wav2vec"]

MANIFEST_SUFFIX = ".manifest.json"


def _freeze(a: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return None
    a = np.asarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ModalityMask:
    """Presence flags per modality; must agree with which fields are set."""

    language: bool = True
    audio: bool = True
    video: bool = True

    def as_dict(self) -> dict[str, bool]:
        return {"language": self.language, "audio": self.audio, "video": self.video}

    def has(self, modality: str) -> bool:
        return bool(getattr(self, modality))


@dataclass(frozen=True, eq=False)
class UtteranceRecord:
    """One spoken utterance with its label, text, and per-modality features.

    Optional fields are None when the modality (or that particular feature)
    was not extracted; modality_mask must be consistent with field presence.
    """

    session_id: str
    pair_id: str
    speaker_id: str
    t_start_ms: int
    text: str
    label: Label | None = None
    sentence_vec: np.ndarray | None = None
    sentiment_vec: np.ndarray | None = None
    audio_vec: np.ndarray | None = None
    audio_frames: np.ndarray | None = None
    video_frames: np.ndarray | None = None
    modality_mask: ModalityMask = field(default_factory=ModalityMask)

    def __post_init__(self):
        if self.t_start_ms < 0:
            raise SchemaError(f"t_start_ms must be >= 0, got {self.t_start_ms}")
        for name, dim in (("sentence_vec", SENTENCE_DIM), ("sentiment_vec", SENTIMENT_DIM), ("audio_vec", AUDIO_VEC_DIM)):
            v = getattr(self, name)
            if v is not None:
                v = _freeze(np.atleast_1d(v))
                if v.shape != (dim,):
                    raise SchemaError(f"{name}: expected dim {dim}, got shape {v.shape}")
                object.__setattr__(self, name, v)
        for name in ("audio_frames", "video_frames"):
            m = getattr(self, name)
            if m is not None:
                m = _freeze(np.atleast_2d(m))
                if m.ndim != 2:
                    raise SchemaError(f"{name}: expected a 2-D frame matrix, got ndim {m.ndim}")
                object.__setattr__(self, name, m)
        expected = ModalityMask(
            language=bool(self.text) or self.sentence_vec is not None or self.sentiment_vec is not None,
            audio=self.audio_frames is not None or self.audio_vec is not None,
            video=self.video_frames is not None,
        )
        if self.modality_mask != expected:
            raise SchemaError(
                f"modality_mask {self.modality_mask.as_dict()} inconsistent with present fields "
                f"(expected {expected.as_dict()})"
            )

    def __eq__(self, other) -> bool:
        if not isinstance(other, UtteranceRecord):
            return NotImplemented
        scalar = ("session_id", "pair_id", "speaker_id", "t_start_ms", "text", "label", "modality_mask")
        arrays = ("sentence_vec", "sentiment_vec", "audio_vec", "audio_frames", "video_frames")
        if any(getattr(self, f) != getattr(other, f) for f in scalar):
            return False
        for f in arrays:
            a, b = getattr(self, f), getattr(other, f)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or not np.array_equal(a, b)):
                return False
        return True


@dataclass(frozen=True)
class Corpus:
    """Ordered utterance records plus pair -> speakers grouping."""

    records: tuple[UtteranceRecord, ...]
    groups: Mapping[str, frozenset[str]]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        groups = {k: frozenset(v) for k, v in self.groups.items()}
        object.__setattr__(self, "groups", groups)
        for i, r in enumerate(self.records):
            if r.pair_id not in groups:
                raise SchemaError(f"record {i}: pair_id {r.pair_id!r} missing from groups")
            if r.speaker_id not in groups[r.pair_id]:
                raise SchemaError(f"record {i}: speaker {r.speaker_id!r} not in pair {r.pair_id!r}")

    @classmethod
    def from_records(cls, records: Iterable[UtteranceRecord]) -> "Corpus":
        records = tuple(records)
        groups: dict[str, set[str]] = {}
        for r in records:
            groups.setdefault(r.pair_id, set()).add(r.speaker_id)
        return cls(records, {k: frozenset(v) for k, v in groups.items()})

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[UtteranceRecord]:
        return iter(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.groups == other.groups and self.records == other.records

    def pair_ids(self) -> list[str]:
        return sorted(self.groups)

    def subset(self, pairs: Iterable[str]) -> "Corpus":
        """Records belonging to the given pairs, original order preserved."""
        wanted = set(pairs)
        return Corpus.from_records(r for r in self.records if r.pair_id in wanted)

    def labels(self) -> np.ndarray:
        missing = [i for i, r in enumerate(self.records) if r.label is None]
        if missing:
            raise DataError(f"records without labels (first at index {missing[0]})")
        return np.array([int(r.label) for r in self.records], dtype=np.int64)


# ---------------------------------------------------------------------------
# Feature-file I/O


def _default_manifest_path(path: Path) -> Path:
    return path.with_name(path.name + MANIFEST_SUFFIX)


def _validate_frame_width(name: str, modality: str, width: int, manifest: Mapping, line: int) -> None:
    decl = manifest.get("modalities", {}).get(modality)
    if decl is None:
        raise SchemaError(f"line {line}: {name} present but manifest declares no {modality!r} modality")
    expected = decl.get("dim")
    feature_set = decl.get("feature_set")
    if feature_set in FEATURE_DIMS.get(modality, {}):
        table_dim = FEATURE_DIMS[modality][feature_set]
        if expected != table_dim:
            raise SchemaError(
                f"manifest: {modality} feature set {feature_set!r} must have dim {table_dim}, declared {expected}"
            )
    if width != expected:
        raise SchemaError(f"line {line}: {name} row width {width}, expected {expected} ({feature_set})")


def _record_from_obj(obj: dict, manifest: Mapping, line: int) -> UtteranceRecord:
    def opt_vec(name):
        v = obj.get(name)
        return None if v is None else np.asarray(v, dtype=np.float64)

    def opt_mat(name, modality):
        v = obj.get(name)
        if v is None:
            return None
        if v and any(len(row) != len(v[0]) for row in v):
            raise SchemaError(f"line {line}: {name} has ragged rows")
        width = len(v[0]) if v else manifest.get("modalities", {}).get(modality, {}).get("dim", 0)
        _validate_frame_width(name, modality, width, manifest, line)
        return np.asarray(v, dtype=np.float64).reshape(len(v), width)

    try:
        label = obj.get("label")
        mask = obj.get("modality_mask")
        rec = UtteranceRecord(
            session_id=str(obj["session_id"]),
            pair_id=str(obj["pair_id"]),
            speaker_id=str(obj["speaker_id"]),
            t_start_ms=int(obj["t_start_ms"]),
            text=str(obj["text"]),
            label=None if label is None else Label.from_name(label),
            sentence_vec=opt_vec("sentence_vec"),
            sentiment_vec=opt_vec("sentiment_vec"),
            audio_vec=opt_vec("audio_vec"),
            audio_frames=opt_mat("audio_frames", "audio"),
            video_frames=opt_mat("video_frames", "video"),
            modality_mask=ModalityMask(**mask) if mask else ModalityMask(
                language=bool(obj["text"]) or obj.get("sentence_vec") is not None or obj.get("sentiment_vec") is not None,
                audio=obj.get("audio_frames") is not None or obj.get("audio_vec") is not None,
                video=obj.get("video_frames") is not None,
            ),
        )
    except KeyError as e:
        raise ParseError(f"missing required field {e.args[0]!r}", line)
    except SchemaError as e:
        if str(e).startswith("line "):
            raise
        raise SchemaError(f"line {line}: {e}")
    return rec


def load_corpus(path: str | Path, manifest: Mapping | str | Path | None = None) -> Corpus:
    """Load a JSON-lines feature file, validating dims against its manifest.

    ``manifest`` may be a dict, a path, or None (sidecar ``<path>.manifest.json``
    is used when present; otherwise frame dims are unchecked only if no frame
    fields occur).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature file not found: {path}")
    if manifest is None:
        side = _default_manifest_path(path)
        manifest = side if side.exists() else {}
    if isinstance(manifest, (str, Path)):
        with open(manifest, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)

    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line_no)
            if not isinstance(obj, dict):
                raise ParseError("record is not a JSON object", line_no)
            records.append(_record_from_obj(obj, manifest, line_no))
    return Corpus.from_records(records)


def save_corpus(corpus: Corpus, path: str | Path, manifest: Mapping | None = None) -> None:
    """Write JSON lines plus the sidecar manifest (when given)."""
    path = Path(path)

    def vec(v):
        return None if v is None else [float(x) for x in v]

    def mat(m):
        return None if m is None else [[float(x) for x in row] for row in m]

    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus:
            obj = {
                "session_id": r.session_id,
                "pair_id": r.pair_id,
                "speaker_id": r.speaker_id,
                "t_start_ms": r.t_start_ms,
                "label": None if r.label is None else r.label.display_name,
                "text": r.text,
                "sentence_vec": vec(r.sentence_vec),
                "sentiment_vec": vec(r.sentiment_vec),
                "audio_vec": vec(r.audio_vec),
                "audio_frames": mat(r.audio_frames),
                "video_frames": mat(r.video_frames),
                "modality_mask": r.modality_mask.as_dict(),
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
    if manifest is not None:
        with open(_default_manifest_path(path), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def make_manifest(audio_set: str = "pitch", video_set: str = "facial_aus",
                  audio_dim: int | None = None, video_dim: int | None = None) -> dict:
    """Build a sidecar manifest for the named frame feature sets."""
    audio_dim = audio_dim if audio_dim is not None else FEATURE_DIMS["audio"][audio_set]
    video_dim = video_dim if video_dim is not None else FEATURE_DIMS["video"][video_set]
    return {
        "schema_version": 1,
        "modalities": {
            "audio": {"feature_set": audio_set, "dim": audio_dim},
            "video": {"feature_set": video_set, "dim": video_dim},
        },
    }


# ---------------------------------------------------------------------------
# Normalization

VECTOR_FIELDS = ("sentence_vec", "sentiment_vec", "audio_vec")
FRAME_FIELDS = ("audio_frames", "video_frames")
ALL_FEATURE_FIELDS = VECTOR_FIELDS + FRAME_FIELDS


@dataclass(frozen=True)
class NormStats:
    """Per-column mean and population std, keyed by record field name."""

    stats: Mapping[str, tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        object.__setattr__(
            self, "stats", {k: (_freeze(m), _freeze(s)) for k, (m, s) in self.stats.items()}
        )
        for k, (_, s) in self.stats.items():
            if np.any(s < 0):
                raise DataError(f"negative std for field {k}")

    def fields(self) -> list[str]:
        return sorted(self.stats)

    def __getitem__(self, fieldname: str) -> tuple[np.ndarray, np.ndarray]:
        return self.stats[fieldname]

    def __contains__(self, fieldname: str) -> bool:
        return fieldname in self.stats


def fit_norm_stats(train: Corpus, fields: Sequence[str] = ALL_FEATURE_FIELDS) -> NormStats:
    """Column means/stds over all values of the selected fields in ``train``.

    Frame fields pool every frame of every record (combined statistics of the
    whole training partition); std is the population std.
    """
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for fieldname in fields:
        if fieldname in VECTOR_FIELDS:
            rows = [r for rec in train if (r := getattr(rec, fieldname)) is not None]
        elif fieldname in FRAME_FIELDS:
            rows = [m for rec in train if (m := getattr(rec, fieldname)) is not None and m.shape[0] > 0]
        else:
            raise DataError(f"unknown feature field {fieldname!r}")
        if not rows:
            raise DataError(f"no values to fit normalization stats for column {fieldname!r}")
        stacked = np.vstack([np.atleast_2d(r) for r in rows])
        out[fieldname] = (stacked.mean(axis=0), stacked.std(axis=0))
    return NormStats(out)


def norm_apply_matrix(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """(x - mean)/std per column; columns with std == 0 map to 0."""
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(std == 0.0, 1.0, std)
    out = (x - mean) / safe
    return np.where(std == 0.0, 0.0, out)


def apply_norm(x: Corpus | np.ndarray, stats: NormStats, fieldname: str | None = None):
    """Normalize a corpus (all fields present in ``stats``) or a single matrix.

    For matrix input, ``fieldname`` selects which stats entry applies.
    """
    if isinstance(x, np.ndarray):
        if fieldname is None:
            raise DataError("fieldname is required when normalizing a bare matrix")
        if fieldname not in stats:
            raise DataError(f"normalization stats missing column {fieldname!r}")
        mean, std = stats[fieldname]
        return norm_apply_matrix(x, mean, std)

    records = []
    for rec in x:
        updates = {}
        for fieldname_ in stats.fields():
            v = getattr(rec, fieldname_)
            if v is None:
                continue
            mean, std = stats[fieldname_]
            if v.ndim == 2 and v.shape[0] == 0:
                updates[fieldname_] = v
            else:
                updates[fieldname_] = norm_apply_matrix(v, mean, std)
        records.append(_replace_features(rec, updates))
    return Corpus(tuple(records), x.groups)


def _replace_features(rec: UtteranceRecord, updates: dict) -> UtteranceRecord:
    kw = {
        "session_id": rec.session_id,
        "pair_id": rec.pair_id,
        "speaker_id": rec.speaker_id,
        "t_start_ms": rec.t_start_ms,
        "text": rec.text,
        "label": rec.label,
        "sentence_vec": rec.sentence_vec,
        "sentiment_vec": rec.sentiment_vec,
        "audio_vec": rec.audio_vec,
        "audio_frames": rec.audio_frames,
        "video_frames": rec.video_frames,
        "modality_mask": rec.modality_mask,
    }
    kw.update(updates)
    return UtteranceRecord(**kw)


# ---------------------------------------------------------------------------
# Synthetic corpus generator

DEFAULT_CLASS_MIX = (0.047, 0.093, 0.860)

# Word pools for synthetic transcripts; class words appear with a
# separability-dependent probability so zero separability means no text signal.
_CLASS_WORDS = (
    ("confused", "stuck", "help", "lost", "what", "huh"),
    ("no", "wrong", "stop", "disagree", "bad", "never"),
    ("okay", "click", "move", "block", "good", "then"),
)
_FILLER_WORDS = ("the", "we", "it", "this", "and", "a", "that", "one")


def _apportion(n: int, mix: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of n items to the mix proportions."""
    raw = [n * p for p in mix]
    counts = [math.floor(v) for v in raw]
    remainders = sorted(range(len(mix)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(n - sum(counts)):
        counts[remainders[i % len(mix)]] += 1
    return counts


def synth_corpus(
    seed: int,
    n_pairs: int,
    class_mix: Sequence[float] = DEFAULT_CLASS_MIX,
    separability: float = 3.0,
    *,
    utterances_per_pair: int = 50,
    audio_set: str = "pitch",
    video_set: str = "facial_aus",
    audio_len: tuple[int, int] = (8, 8),
    video_len: tuple[int, int] = (6, 6),
    profile: str = "shared",
) -> Corpus:
    """Deterministic synthetic corpus with per-class Gaussian feature clusters.

    Class centroids sit at distance ~``separability`` (in noise-std units)
    in each modality; ``profile="shared"`` gives every modality signal for
    all classes, ``profile="complementary"`` gives each modality signal for
    exactly one class (language->Confusion, audio->Conflict, video->Other).
    Class counts follow ``class_mix`` by largest-remainder apportionment.
    """
    if n_pairs < 1:
        raise DataError(f"n_pairs must be >= 1, got {n_pairs}")
    if len(class_mix) != N_CLASSES:
        raise DataError(f"class_mix needs {N_CLASSES} proportions")
    if any(p < 0 for p in class_mix) or abs(sum(class_mix) - 1.0) > 1e-9:
        raise DataError(f"class_mix must be nonnegative and sum to 1, got {tuple(class_mix)}")
    if profile not in ("shared", "complementary"):
        raise DataError(f"unknown profile {profile!r}")
    if separability < 0:
        raise DataError("separability must be >= 0")

    d_a = FEATURE_DIMS["audio"][audio_set]
    d_v = FEATURE_DIMS["video"][video_set]
    rng = np.random.default_rng(seed)

    def unit(d: int) -> np.ndarray:
        v = rng.standard_normal(d)
        return v / np.linalg.norm(v)

    # Per-class centroid directions, drawn once per corpus. In the
    # complementary profile a modality's non-target classes share the origin.
    dims = {"sentence": SENTENCE_DIM, "sentiment": SENTIMENT_DIM, "audio_vec": AUDIO_VEC_DIM,
            "audio": d_a, "video": d_v}
    target_class = {"sentence": 0, "sentiment": 0, "audio_vec": 1, "audio": 1, "video": 2}
    centroids: dict[str, np.ndarray] = {}
    for key, d in dims.items():
        mu = np.zeros((N_CLASSES, d))
        for c in range(N_CLASSES):
            if profile == "shared" or c == target_class[key]:
                mu[c] = separability * unit(d)
        centroids[key] = mu

    n_total = n_pairs * utterances_per_pair
    counts = _apportion(n_total, class_mix)
    labels = np.repeat(np.arange(N_CLASSES), counts)
    rng.shuffle(labels)

    p_key = min(0.9, separability / (separability + 2.0)) if separability > 0 else 0.0

    records = []
    idx = 0
    for p in range(n_pairs):
        pair_id = f"pair{p:03d}"
        speakers = (f"{pair_id}_s1", f"{pair_id}_s2")
        t_ms = 0
        for u in range(utterances_per_pair):
            c = int(labels[idx])
            idx += 1
            t_ms += int(rng.integers(500, 4000))
            n_words = int(rng.integers(3, 9))
            words = []
            for _ in range(n_words):
                if rng.random() < p_key:
                    words.append(_CLASS_WORDS[c][int(rng.integers(len(_CLASS_WORDS[c])))])
                else:
                    words.append(_FILLER_WORDS[int(rng.integers(len(_FILLER_WORDS)))])
            t_a = int(rng.integers(audio_len[0], audio_len[1] + 1))
            t_v = int(rng.integers(video_len[0], video_len[1] + 1))
            records.append(
                UtteranceRecord(
                    session_id=pair_id,
                    pair_id=pair_id,
                    speaker_id=speakers[u % 2],
                    t_start_ms=t_ms,
                    text=" ".join(words),
                    label=Label(c),
                    sentence_vec=centroids["sentence"][c] + rng.standard_normal(SENTENCE_DIM),
                    sentiment_vec=centroids["sentiment"][c] + rng.standard_normal(SENTIMENT_DIM),
                    audio_vec=centroids["audio_vec"][c] + rng.standard_normal(AUDIO_VEC_DIM),
                    audio_frames=centroids["audio"][c] + rng.standard_normal((t_a, d_a)),
                    video_frames=centroids["video"][c] + rng.standard_normal((t_v, d_v)),
                )
            )
    return Corpus.from_records(records)
