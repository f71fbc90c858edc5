"""Confusion counts, F1 variants and table-style reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .landmark_io import au_number


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den != 0)


def f1_frame(tp, fp, fn):
    """F1 = 2RP / (R + P); 0 whenever precision, recall or their sum is undefined/zero.

    Accepts scalars or arrays.
    """
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    p = _safe_div(tp, tp + fp)
    r = _safe_div(tp, tp + fn)
    f = _safe_div(2 * r * p, r + p)
    return float(f) if f.ndim == 0 else f


@dataclass
class ConfusionCounts:
    """Per-AU counts. For 3-class evaluation every array has a trailing class axis."""

    au_ids: tuple[str, ...]
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        if self.au_ids != other.au_ids:
            raise ValueError("cannot merge counts over different AU lists")
        return ConfusionCounts(self.au_ids, self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> np.ndarray:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def support(self) -> np.ndarray:
        return self.tp + self.fn

    def f1(self) -> np.ndarray:
        return f1_frame(self.tp, self.fp, self.fn)

    @classmethod
    def zeros(cls, au_ids: Sequence[str], n_classes: int | None = None) -> ConfusionCounts:
        shape = (len(au_ids),) if n_classes is None else (len(au_ids), n_classes)
        z = lambda: np.zeros(shape, dtype=np.int64)  # noqa: E731
        return cls(tuple(au_ids), z(), z(), z(), z())


def binary_counts(probs: np.ndarray, targets: np.ndarray, mask: np.ndarray | None,
                  au_ids: Sequence[str], threshold: float = 0.5) -> ConfusionCounts:
    """Counts from sigmoid outputs (F, A); a prediction is positive when p >= threshold.
    Entries with mask == 0 (unknown labels) are skipped."""
    pred = np.asarray(probs) >= threshold
    y = np.asarray(targets) > 0.5
    m = np.ones(y.shape, bool) if mask is None else np.asarray(mask) > 0
    return ConfusionCounts(
        tuple(au_ids),
        (pred & y & m).sum(axis=0), (pred & ~y & m).sum(axis=0),
        (~pred & y & m).sum(axis=0), (~pred & ~y & m).sum(axis=0),
    )


def multiclass_counts(probs: np.ndarray, target_idx: np.ndarray, au_ids: Sequence[str]) -> ConfusionCounts:
    """One-vs-rest counts per AU and class from (F, A, K) probabilities; prediction = argmax."""
    probs = np.asarray(probs)
    k = probs.shape[-1]
    pred = probs.argmax(axis=-1)[..., None] == np.arange(k)
    y = np.asarray(target_idx)[..., None] == np.arange(k)
    return ConfusionCounts(
        tuple(au_ids),
        (pred & y).sum(axis=0), (pred & ~y).sum(axis=0),
        (~pred & y).sum(axis=0), (~pred & ~y).sum(axis=0),
    )


def f1_macro_3class(counts: ConfusionCounts):
    """Unweighted mean of the per-class F1 scores (last axis)."""
    return f1_frame(counts.tp, counts.fp, counts.fn).mean(axis=-1)


def f1_micro_3class(counts: ConfusionCounts):
    """Support-weighted mean of the per-class F1 scores."""
    f = f1_frame(counts.tp, counts.fp, counts.fn)
    s = counts.support.astype(np.float64)
    return _safe_div((f * s).sum(axis=-1), s.sum(axis=-1))


def f1_micro_pooled(counts: ConfusionCounts):
    """F1 of the class-pooled tp/fp/fn counts (the usual 'micro' definition)."""
    return f1_frame(counts.tp.sum(axis=-1), counts.fp.sum(axis=-1), counts.fn.sum(axis=-1))


@dataclass
class MetricsReport:
    """Per-AU scores in percent, one column per score type.

    ``columns`` e.g. ("f1_3fold",) or ("f1_macro", "f1_micro"); ``values[col]``
    is aligned with ``au_ids``.
    """

    au_ids: tuple[str, ...]
    columns: tuple[str, ...]
    values: dict[str, list[float]]
    experiment: dict[str, Any] = field(default_factory=dict)
    notes: dict[str, Any] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    def average(self, column: str) -> float | None:
        vals = self.values[column]
        return float(np.mean(vals)) if vals else None

    def value(self, au_id: str, column: str | None = None) -> float:
        return self.values[column or self.columns[0]][self.au_ids.index(au_id)]


def combine_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Side-by-side columns (e.g. 3-fold next to 10-fold) over the shared AU rows."""
    au_ids = reports[0].au_ids
    if any(r.au_ids != au_ids for r in reports):
        raise ValueError("reports cover different AUs")
    columns, values = [], {}
    for r in reports:
        for c in r.columns:
            if c in values:
                raise ValueError(f"duplicate column {c!r}")
            columns.append(c)
            values[c] = list(r.values[c])
    return MetricsReport(au_ids, tuple(columns), values,
                         experiment={"combined": [r.experiment for r in reports]},
                         notes={k: v for r in reports for k, v in r.notes.items()},
                         flags=sorted({f for r in reports for f in r.flags}))


def _fmt(v: float | None) -> str:
    return "-" if v is None else f"{v:.2f}"


def report_rows(report: MetricsReport) -> list[list[str]]:
    rows = [[au_number(au), *(_fmt(report.values[c][i]) for c in report.columns)]
            for i, au in enumerate(report.au_ids)]
    rows.append(["avg", *(_fmt(report.average(c)) for c in report.columns)])
    return rows


def _provenance(report: MetricsReport) -> dict[str, Any]:
    return {"experiment": report.experiment, "notes": report.notes, "flags": report.flags}


def emit_report(report: MetricsReport, fmt: str = "text") -> bytes:
    rows = report_rows(report)
    if fmt == "csv":
        buf = io.StringIO()
        buf.write("# " + json.dumps(_provenance(report), sort_keys=True, default=str) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["au", *report.columns])
        w.writerows(rows)
        return buf.getvalue().encode("utf-8")
    if fmt == "json":
        obj = {
            **_provenance(report),
            "columns": list(report.columns),
            "rows": [{"au": r[0], **{c: (None if v == "-" else float(v)) for c, v in zip(report.columns, r[1:])}}
                     for r in rows[:-1]],
            "avg": {c: (None if v == "-" else float(v)) for c, v in zip(report.columns, rows[-1][1:])},
        }
        return (json.dumps(obj, indent=1, sort_keys=True, default=str) + "\n").encode("utf-8")
    if fmt == "text":
        header = ["AU", *report.columns]
        table = [header] + [[("Avg" if r[0] == "avg" else r[0]), *r[1:]] for r in rows]
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(wd) for cell, wd in zip(r, widths)).rstrip() for r in table]
        for k, v in report.notes.items():
            lines.append(f"# {k}: {v}")
        for f in report.flags:
            lines.append(f"# flag: {f}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report_csv(data: bytes | str) -> dict[str, dict[str, float | None]]:
    """{au: {column: value}} from :func:`emit_report` CSV output (avg row keyed 'avg')."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = {}
    for rec in csv.DictReader(lines):
        au = rec.pop("au")
        out[au] = {k: (None if v == "-" else float(v)) for k, v in rec.items()}
    return out
