import csv

import pytest

from pairsense_adapter.errors import AdapterError
from pairsense_adapter.facial import SET_COLUMNS, load_face_map, load_facial_csv
from pairsense_adapter.jobs import VIDEO_SETS


def write_facial_csv(path, rows):
    cols = ["frame", "face_id", "timestamp", "confidence", "success"]
    cols += SET_COLUMNS["gaze_direction"] + SET_COLUMNS["head_pose"] + SET_COLUMNS["facial_aus"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for frame, face_id, t in rows:
            feature_values = [0.1 * face_id + 0.01 * frame] * (len(cols) - 5)
            w.writerow([frame, face_id, f"{t:.3f}", 0.98, 1] + feature_values)


@pytest.fixture
def facial_csv(tmp_path):
    path = tmp_path / "faces.csv"
    rows = []
    for frame in range(30):  # 30 fps for 1 s: faces 0 and 1 always, face 2 sometimes
        t = frame / 30.0
        rows.append((frame, 0, t))
        rows.append((frame, 1, t))
        if frame % 3 == 0:
            rows.append((frame, 2, t))
    write_facial_csv(path, rows)
    return path


class TestFacialCsv:
    def test_loads_selected_columns(self, facial_csv):
        frames = load_facial_csv(facial_csv, ("facial_aus",))
        m = frames.utterance_matrix(0, 0, 1000, ("facial_aus",))
        assert m.shape == (30, VIDEO_SETS["facial_aus"])

    def test_extra_faces_are_excluded_by_mapping(self, facial_csv):
        frames = load_facial_csv(facial_csv, ("head_pose",))
        face_map = load_face_map(None)
        assert set(face_map) == {0, 1}  # face 2 (background) has no mapping
        m = frames.utterance_matrix(2, 0, 1000, ("head_pose",))
        assert m is not None  # present in file, but never selected by speaker mapping

    def test_span_slicing(self, facial_csv):
        frames = load_facial_csv(facial_csv, ("head_pose",))
        m = frames.utterance_matrix(1, 0, 500, ("head_pose",))
        assert m.shape == (15, 6)

    def test_absent_face_in_span_returns_none(self, facial_csv):
        frames = load_facial_csv(facial_csv, ("head_pose",))
        assert frames.utterance_matrix(7, 0, 1000, ("head_pose",)) is None

    def test_missing_columns_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("frame,face_id,timestamp\n1,0,0.0\n")
        with pytest.raises(AdapterError, match="missing feature columns"):
            load_facial_csv(path, ("facial_aus",))

    def test_face_map_file(self, tmp_path):
        p = tmp_path / "map.json"
        p.write_text('{"3": "S1", "5": "S2"}')
        assert load_face_map(p) == {3: "S1", 5: "S2"}

    def test_widths_match_registry(self):
        for name, cols in SET_COLUMNS.items():
            assert len(cols) == VIDEO_SETS[name]
