"""Facial-behavior features from the face toolkit's multiple-faces CSV output.

The CSV carries one row per detected face per video frame. A face-map file
assigns face ids to speakers (seat swaps are a manual correction in the
source process, so the mapping is an explicit input, never guessed); faces
not mapped to one of the two learners are dropped.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import AdapterError
from .jobs import VIDEO_SETS

GAZE_COLUMNS = ["gaze_0_x", "gaze_0_y", "gaze_0_z", "gaze_1_x", "gaze_1_y", "gaze_1_z",
                "gaze_angle_x", "gaze_angle_y"]
POSE_COLUMNS = ["pose_Tx", "pose_Ty", "pose_Tz", "pose_Rx", "pose_Ry", "pose_Rz"]
AU_INTENSITY = ["AU01_r", "AU02_r", "AU04_r", "AU05_r", "AU06_r", "AU07_r", "AU09_r",
                "AU10_r", "AU12_r", "AU14_r", "AU15_r", "AU17_r", "AU20_r", "AU23_r",
                "AU25_r", "AU26_r", "AU45_r"]
AU_PRESENCE = ["AU01_c", "AU02_c", "AU04_c", "AU05_c", "AU06_c", "AU07_c", "AU09_c",
               "AU10_c", "AU12_c", "AU14_c", "AU15_c", "AU17_c", "AU20_c", "AU23_c",
               "AU25_c", "AU26_c", "AU28_c", "AU45_c"]

SET_COLUMNS = {
    "gaze_direction": GAZE_COLUMNS,
    "head_pose": POSE_COLUMNS,
    "facial_aus": AU_INTENSITY + AU_PRESENCE,
}

for _name, _cols in SET_COLUMNS.items():
    assert len(_cols) == VIDEO_SETS[_name]


class FacialFrames:
    """Parsed per-face frame rows: timestamps (ms), face ids, feature columns."""

    def __init__(self, t_ms: np.ndarray, face_ids: np.ndarray, values: dict[str, np.ndarray]):
        self.t_ms = t_ms
        self.face_ids = face_ids
        self.values = values

    def utterance_matrix(self, face_id: int, start_ms: int, end_ms: int,
                         sets: tuple[str, ...]) -> np.ndarray | None:
        """Rows for one face within [start, end); None when the face was not seen."""
        keep = (self.face_ids == face_id) & (self.t_ms >= start_ms) & (self.t_ms < end_ms)
        if not keep.any():
            return None
        cols = [self.values[c][keep] for s in sets for c in SET_COLUMNS[s]]
        return np.stack(cols, axis=1)


def load_facial_csv(path: str | Path, sets: tuple[str, ...]) -> FacialFrames:
    path = Path(path)
    if not path.exists():
        raise AdapterError(f"facial-features file not found: {path}")
    needed = [c for s in sets for c in SET_COLUMNS[s]]
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise AdapterError(f"facial-features file has no header: {path}")
        fields = {name.strip(): name for name in reader.fieldnames}
        face_col = fields.get("face_id") or fields.get("face")
        time_col = fields.get("timestamp")
        if face_col is None or time_col is None:
            raise AdapterError(f"{path}: need 'face_id' (or 'face') and 'timestamp' columns")
        missing = [c for c in needed if c not in fields]
        if missing:
            raise AdapterError(f"{path}: missing feature columns {missing[:4]}")
        t_ms, face_ids = [], []
        values: dict[str, list[float]] = {c: [] for c in needed}
        for row in reader:
            t_ms.append(round(1000 * float(row[time_col])))
            face_ids.append(int(float(row[face_col])))
            for c in needed:
                values[c].append(float(row[fields[c]]))
    return FacialFrames(np.asarray(t_ms), np.asarray(face_ids),
                        {c: np.asarray(v) for c, v in values.items()})


def load_face_map(path: str | Path | None) -> dict[int, str]:
    """face id -> transcript speaker; ids absent from the map are dropped."""
    if path is None:
        return {0: "S1", 1: "S2"}  # the toolkit's first two detections, in seat order
    path = Path(path)
    if not path.exists():
        raise AdapterError(f"face map not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return {int(k): str(v) for k, v in raw.items()}
