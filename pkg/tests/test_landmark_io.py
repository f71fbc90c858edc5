import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from au3d.errors import (
    DuplicateFrame,
    EmptyTable,
    MalformedLine,
    ManifestError,
    NonFinite,
    UnknownCellValue,
    WrongCount,
)
from au3d.landmark_io import (
    AUState,
    LabelTable,
    LandmarkSet,
    au_column,
    au_number,
    format_label_file,
    format_landmark_file,
    format_stats_csv,
    load_dataset,
    load_labels,
    occurrence_stats,
    parse_label_file,
    parse_landmark_file,
    parse_manifest,
    state_counts,
    write_dataset,
)


def test_parse_three_lines():
    pts = parse_landmark_file(b"0 0 0\n1 2 4\n2 4 8\n", expected_n=3)
    np.testing.assert_array_equal(pts, [[0, 0, 0], [1, 2, 4], [2, 4, 8]])


def test_parse_83_zeros():
    pts = parse_landmark_file("0 0 0\n" * 83, expected_n=83)
    assert pts.shape == (83, 3)
    assert not pts.any()


def test_wrong_count():
    with pytest.raises(WrongCount):
        parse_landmark_file("0 0 0\n" * 82, expected_n=83)


@pytest.mark.parametrize("text", ["0 0 x\n", "0 0\n", "0 0 0 0\n", "\n"])
def test_malformed(text):
    with pytest.raises(MalformedLine):
        parse_landmark_file(text, expected_n=1)


@pytest.mark.parametrize("tok", ["nan", "inf", "-inf"])
def test_non_finite(tok):
    with pytest.raises(NonFinite):
        parse_landmark_file(f"0 {tok} 0\n", expected_n=1)


def test_blank_line_counts_against_n():
    with pytest.raises(WrongCount):
        parse_landmark_file("0 0 0\n\n1 1 1\n", expected_n=2)


def test_parsed_points_are_read_only():
    pts = parse_landmark_file("1 2 3\n", expected_n=1)
    with pytest.raises(ValueError):
        pts[0, 0] = 5


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50)
@given(st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=20))
def test_landmark_round_trip_bit_exact(rows):
    pts = np.array(rows, dtype=np.float64)
    back = parse_landmark_file(format_landmark_file(pts), expected_n=len(rows))
    assert back.tobytes() == pts.tobytes()


def test_landmark_set_validates():
    with pytest.raises(NonFinite):
        LandmarkSet("f", "s", [[0, 0, np.nan]])
    ls = LandmarkSet("f", "s", [[0, 0, 0], [1, 1, 1]])
    assert ls.n == 2


LABELS = "frame_id,subject_id,AU01,AU12\nf1,s1,1,0\nf2,s1,9,1\n"


def test_parse_labels():
    t = parse_label_file(LABELS.encode())
    assert t.au_ids == ("AU01", "AU12")
    assert t.row("f1") == {"AU01": AUState.PRESENT, "AU12": AUState.ABSENT}
    assert t.row("f2") == {"AU01": AUState.UNKNOWN, "AU12": AUState.PRESENT}
    assert t.subject_of("f2") == "s1"


def test_unknown_cell_value():
    with pytest.raises(UnknownCellValue):
        parse_label_file(LABELS + "f3,s1,2,0\n")


def test_duplicate_frame():
    with pytest.raises(DuplicateFrame):
        parse_label_file(LABELS + "f1,s1,0,0\n")


def test_label_round_trip():
    assert format_label_file(parse_label_file(LABELS)) == LABELS


def _table(states, au_ids=("AU12",)):
    states = np.asarray(states).reshape(len(states), -1)
    n = len(states)
    return LabelTable(au_ids, tuple(f"f{i}" for i in range(n)), ("s",) * n, states)


def test_occurrence_75_percent():
    stats = occurrence_stats(_table([1, 1, 1, 0]))
    assert stats == {"AU12": 75.0}


def test_occurrence_ignores_unknown_and_omits_unlabelled():
    t = _table([[1, 9], [0, 9], [9, 9]], au_ids=("AU12", "AU17"))
    assert occurrence_stats(t) == {"AU12": 50.0}


def test_occurrence_empty():
    with pytest.raises(EmptyTable):
        occurrence_stats(LabelTable(("AU12",), (), (), np.zeros((0, 1), dtype=int)))


def test_occurrence_table1_reference_value():
    # 5618 of 10000 frames present -> 56.18, the AU12 row of the reference table
    states = np.array([1] * 5618 + [0] * 4382)
    assert occurrence_stats(_table(states))["AU12"] == pytest.approx(56.18, abs=1e-9)


@settings(max_examples=30)
@given(st.lists(st.sampled_from([0, 1, 9]), min_size=1, max_size=60), st.randoms())
def test_occurrence_permutation_invariant_and_bounded(codes, rnd):
    t = _table(codes)
    perm = list(codes)
    rnd.shuffle(perm)
    assert occurrence_stats(t) == occurrence_stats(_table(perm))
    for pct in occurrence_stats(t).values():
        assert 0 <= pct <= 100
    pos, neg, unk = state_counts(t)["AU12"]
    assert pos + neg + unk == len(codes)


def test_stats_csv_layout():
    assert format_stats_csv({"AU01": 21.07, "AU12": 56.18}) == "au,occurrence_pct\n1,21.07\n12,56.18\n"


def test_au_names():
    assert au_number("AU01") == "1"
    assert au_number("AU24") == "24"
    assert au_column(4) == "AU04"


def test_dataset_write_and_load(tmp_path):
    pts = np.random.default_rng(0).normal(size=(4, 5, 3))
    t = LabelTable(("AU01", "AU02"), ("a", "b", "c", "d"), ("s1", "s1", "s2", "s2"),
                   np.array([[1, 0], [0, 9], [1, 1], [0, 0]]))
    manifest = write_dataset(tmp_path, t.frame_ids, t.subject_ids, pts, t)
    ds = load_dataset(manifest)
    np.testing.assert_array_equal(ds.points, pts)
    assert ds.labels.states.tolist() == t.states.tolist()
    assert ds.subject_ids == t.subject_ids
    assert load_labels(manifest).frame_ids == t.frame_ids
    obj = json.loads(manifest.read_text())
    assert obj["n_landmarks"] == 5 and obj["label_file"] == "labels.csv"


def test_manifest_missing_label_row(tmp_path):
    (tmp_path / "l.csv").write_text("frame_id,subject_id,AU01\nf1,s1,1\n")
    (tmp_path / "f2.txt").write_text("0 0 0\n1 1 1\n")
    (tmp_path / "m.json").write_text(json.dumps(
        {"n_landmarks": 2, "label_file": "l.csv",
         "entries": [{"frame_id": "f2", "subject_id": "s1", "landmark_file": "f2.txt"}]}))
    with pytest.raises(ManifestError):
        load_dataset(tmp_path / "m.json")


def test_manifest_malformed():
    with pytest.raises(ManifestError):
        parse_manifest('{"entries": []}')
    with pytest.raises(DuplicateFrame):
        parse_manifest(json.dumps({"label_file": "x", "entries": [
            {"frame_id": "a", "subject_id": "s", "landmark_file": "a"},
            {"frame_id": "a", "subject_id": "s", "landmark_file": "b"}]}))
