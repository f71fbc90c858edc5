import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from au3d.metrics import (
    ConfusionCounts,
    MetricsReport,
    binary_counts,
    combine_reports,
    emit_report,
    f1_frame,
    f1_macro_3class,
    f1_micro_3class,
    f1_micro_pooled,
    multiclass_counts,
    parse_report_csv,
)

from .oracles import f1_oracle


def test_f1_hand_value():
    assert f1_frame(3, 1, 2) == pytest.approx(2 * 0.75 * 0.6 / 1.35, abs=1e-15)
    assert round(f1_frame(3, 1, 2), 4) == 0.6667


@pytest.mark.parametrize("tp,fp,fn", [(0, 0, 5), (0, 5, 0), (0, 0, 0), (0, 3, 4)])
def test_f1_degenerate_is_zero(tp, fp, fn):
    assert f1_frame(tp, fp, fn) == 0.0


def test_f1_equal_p_r():
    assert f1_frame(4, 1, 1) == pytest.approx(0.8)


def test_f1_one_iff_perfect():
    assert f1_frame(5, 0, 0) == 1.0
    assert f1_frame(5, 1, 0) < 1 and f1_frame(5, 0, 1) < 1


def test_macro_and_micro_examples():
    c = ConfusionCounts(("AU01",), np.array([[9, 9, 9]]), np.array([[1, 1, 1]]),
                        np.array([[1, 1, 1]]), np.zeros((1, 3), int))
    assert f1_macro_3class(c)[0] == pytest.approx(0.9)
    assert f1_micro_3class(c)[0] == pytest.approx(0.9)
    # F1s (1, 0, 0) with supports (8, 1, 1)
    c = ConfusionCounts(("AU01",), np.array([[8, 0, 0]]), np.array([[0, 1, 1]]),
                        np.array([[0, 1, 1]]), np.zeros((1, 3), int))
    assert f1_micro_3class(c)[0] == pytest.approx(0.8)
    # F1s (1, 0.5, 0)
    c = ConfusionCounts(("AU01",), np.array([[4, 1, 0]]), np.array([[0, 1, 2]]),
                        np.array([[0, 1, 2]]), np.zeros((1, 3), int))
    assert f1_frame(c.tp, c.fp, c.fn)[0].tolist() == [1.0, 0.5, 0.0]
    assert f1_macro_3class(c)[0] == pytest.approx(0.5)


def test_ten_frame_hand_set():
    truth = [0, 0, 0, 1, 1, 2, 2, 2, 2, 0]
    pred = [0, 1, 0, 1, 2, 2, 2, 0, 2, 0]
    probs = np.eye(3)[pred][:, None, :]
    c = multiclass_counts(probs, np.array(truth)[:, None], ["AU01"])
    assert f1_macro_3class(c)[0] == pytest.approx(f1_oracle.macro(pred, truth), abs=1e-15)
    assert f1_micro_3class(c)[0] == pytest.approx(f1_oracle.micro_weighted(pred, truth), abs=1e-15)


def test_single_class_labels():
    truth = [2] * 6
    pred = [2, 2, 1, 2, 0, 2]
    c = multiclass_counts(np.eye(3)[pred][:, None, :], np.array(truth)[:, None], ["AU01"])
    assert f1_micro_3class(c)[0] == pytest.approx(f1_oracle.class_f1s(pred, truth)[2])


@pytest.mark.parametrize("seed", range(50))
def test_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    f, a = int(rng.integers(1, 30)), int(rng.integers(1, 4))
    probs = rng.random((f, a))
    truth = rng.random((f, a)) < rng.random()
    c = binary_counts(probs, truth.astype(float), None, [f"AU{i:02d}" for i in range(a)])
    for j in range(a):
        expect = f1_oracle.binary_f1((probs[:, j] >= 0.5).tolist(), truth[:, j].tolist())
        assert c.f1()[j] == pytest.approx(expect, abs=1e-15)
    assert np.all(c.total == f)

    p3 = rng.dirichlet(np.ones(3), size=(f, a))
    t3 = rng.integers(0, 3, (f, a))
    c3 = multiclass_counts(p3, t3, [f"AU{i:02d}" for i in range(a)])
    pred = p3.argmax(-1)
    for j in range(a):
        assert f1_macro_3class(c3)[j] == pytest.approx(f1_oracle.macro(pred[:, j].tolist(), t3[:, j].tolist()), abs=1e-15)
        assert f1_micro_3class(c3)[j] == pytest.approx(
            f1_oracle.micro_weighted(pred[:, j].tolist(), t3[:, j].tolist()), abs=1e-15)


def test_mask_excludes_unknown():
    probs = np.array([[0.9], [0.9], [0.1]])
    y = np.array([[1.0], [0.0], [1.0]])
    c = binary_counts(probs, y, np.array([[1], [0], [1]]), ["AU01"])
    assert (c.tp[0], c.fp[0], c.fn[0], c.tn[0]) == (1, 0, 1, 0)


def test_threshold_inclusive():
    c = binary_counts(np.array([[0.5]]), np.array([[1.0]]), None, ["AU01"])
    assert c.tp[0] == 1


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=40), st.randoms())
def test_accumulation_order_and_sharding(rows, rnd):
    probs = np.array([[p] for p, _ in rows])
    y = np.array([[float(t)] for _, t in rows])
    whole = binary_counts(probs, y, None, ["AU01"])
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    shuffled = binary_counts(probs[perm], y[perm], None, ["AU01"])
    cut = len(rows) // 2
    sharded = binary_counts(probs[:cut], y[:cut], None, ["AU01"]) + binary_counts(probs[cut:], y[cut:], None, ["AU01"])
    for other in (shuffled, sharded):
        assert (other.tp, other.fp, other.fn, other.tn) == (whole.tp, whole.fp, whole.fn, whole.tn)
    assert 0 <= whole.f1()[0] <= 1


def test_pooled_micro_differs_from_weighted():
    c = ConfusionCounts(("AU01",), np.array([[8, 0, 1]]), np.array([[1, 1, 0]]),
                        np.array([[0, 1, 1]]), np.zeros((1, 3), int))
    assert f1_micro_pooled(c)[0] == pytest.approx(f1_frame(9, 2, 2))
    assert f1_micro_pooled(c)[0] != pytest.approx(f1_micro_3class(c)[0])


def _report():
    return MetricsReport(("AU01", "AU12"), ("f1_3fold",), {"f1_3fold": [81.234, 97.89]},
                         experiment={"seed": 1})


def test_csv_row_layout():
    lines = emit_report(_report(), "csv").decode().splitlines()
    assert lines[0].startswith("# ")
    assert json.loads(lines[0][2:])["experiment"] == {"seed": 1}
    assert lines[1] == "au,f1_3fold"
    assert lines[2:] == ["1,81.23", "12,97.89", "avg,89.56"]


def test_csv_and_json_agree():
    r = _report()
    from_csv = parse_report_csv(emit_report(r, "csv"))
    obj = json.loads(emit_report(r, "json"))
    from_json = {row["au"]: {"f1_3fold": row["f1_3fold"]} for row in obj["rows"]}
    from_json["avg"] = obj["avg"]
    assert from_csv == from_json


def test_empty_report():
    r = MetricsReport((), ("f1_macro", "f1_micro"), {"f1_macro": [], "f1_micro": []})
    lines = emit_report(r, "csv").decode().splitlines()
    assert lines[1:] == ["au,f1_macro,f1_micro", "avg,-,-"]
    assert "Avg" in emit_report(r, "text").decode()


def test_average_matches_listed_values():
    rng = np.random.default_rng(0)
    vals = (rng.random(12) * 100).tolist()
    r = MetricsReport(tuple(f"AU{i:02d}" for i in range(12)), ("f1",), {"f1": vals})
    parsed = parse_report_csv(emit_report(r, "csv"))
    listed = [parsed[k]["f1"] for k in parsed if k != "avg"]
    assert abs(parsed["avg"]["f1"] - np.mean(listed)) <= 0.005 + 1e-9


def test_combine_reports():
    a = _report()
    b = MetricsReport(a.au_ids, ("f1_10fold",), {"f1_10fold": [80.0, 90.0]})
    c = combine_reports([a, b])
    assert c.columns == ("f1_3fold", "f1_10fold")
    assert emit_report(c, "csv").decode().splitlines()[1] == "au,f1_3fold,f1_10fold"
    with pytest.raises(ValueError):
        combine_reports([a, a])
