"""Readers and writers for landmark files, AU label tables and dataset manifests."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateFrame,
    EmptyTable,
    MalformedLine,
    ManifestError,
    NonFinite,
    UnknownCellValue,
    WrongCount,
)

DEFAULT_N_LANDMARKS = 83
DEFAULT_AU_IDS = ("AU01", "AU02", "AU04", "AU06", "AU07", "AU10",
                  "AU12", "AU14", "AU15", "AU17", "AU23", "AU24")


class AUState(enum.IntEnum):
    """Per-frame annotation state; values are the label-file cell codes."""

    ABSENT = 0
    PRESENT = 1
    UNKNOWN = 9


def _text(raw: bytes | str) -> str:
    return raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def au_number(au_id: str) -> str:
    """``"AU01"`` -> ``"1"``; identifiers without the prefix pass through."""
    s = au_id[2:] if au_id.upper().startswith("AU") else au_id
    return s.lstrip("0") or "0"


def au_column(au: int | str) -> str:
    """Canonical zero-padded header name for an AU number."""
    return f"AU{int(au_number(str(au))):02d}"


# -- landmark files ---------------------------------------------------------

@dataclass(frozen=True)
class LandmarkSet:
    frame_id: str
    subject_id: str
    points: np.ndarray  # (N, 3) float64, read-only

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise MalformedLine(f"frame {self.frame_id}: points must be N x 3, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise NonFinite(f"frame {self.frame_id}: non-finite coordinate")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]


def parse_landmark_file(raw: bytes | str, expected_n: int = DEFAULT_N_LANDMARKS,
                        source: str = "<landmarks>") -> np.ndarray:
    """Parse ``expected_n`` whitespace-separated xyz lines into an (N, 3) array."""
    if expected_n < 1:
        raise ValueError("expected_n must be >= 1")
    lines = _text(raw).splitlines()
    if len(lines) != expected_n:
        raise WrongCount(f"{source}: expected {expected_n} landmark lines, found {len(lines)}")
    out = np.empty((expected_n, 3), dtype=np.float64)
    for i, line in enumerate(lines):
        tokens = line.split()
        if len(tokens) != 3:
            raise MalformedLine(f"{source}:{i + 1}: expected 3 values, got {len(tokens)}")
        for j, tok in enumerate(tokens):
            try:
                v = float(tok)
            except ValueError:
                raise MalformedLine(f"{source}:{i + 1}: non-numeric token {tok!r}") from None
            if not math.isfinite(v):
                raise NonFinite(f"{source}:{i + 1}: non-finite coordinate {tok!r}")
            out[i, j] = v
    return _frozen(out)


def format_landmark_file(points: np.ndarray) -> str:
    # repr() of a Python float is the shortest round-tripping decimal
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in np.asarray(points))


# -- label tables -----------------------------------------------------------

@dataclass(frozen=True)
class LabelTable:
    """Per-frame AU states, one row per frame in file order.

    ``states`` holds :class:`AUState` codes with shape (n_frames, n_aus).
    """

    au_ids: tuple[str, ...]
    frame_ids: tuple[str, ...]
    subject_ids: tuple[str, ...]
    states: np.ndarray
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int8).reshape(len(self.frame_ids), len(self.au_ids))
        bad = ~np.isin(states, [s.value for s in AUState])
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise UnknownCellValue(f"frame {self.frame_ids[r]}, {self.au_ids[c]}: code {states[r, c]}")
        index = {}
        for i, fid in enumerate(self.frame_ids):
            if fid in index:
                raise DuplicateFrame(f"duplicate frame_id {fid!r}")
            index[fid] = i
        if len(self.subject_ids) != len(self.frame_ids):
            raise ValueError("subject_ids and frame_ids differ in length")
        object.__setattr__(self, "au_ids", tuple(self.au_ids))
        object.__setattr__(self, "frame_ids", tuple(self.frame_ids))
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.frame_ids)

    def row(self, frame_id: str) -> dict[str, AUState]:
        i = self._index[frame_id]
        return {au: AUState(int(s)) for au, s in zip(self.au_ids, self.states[i])}

    def subject_of(self, frame_id: str) -> str:
        return self.subject_ids[self._index[frame_id]]

    def position(self, frame_id: str) -> int:
        return self._index[frame_id]

    def __contains__(self, frame_id: str) -> bool:
        return frame_id in self._index

    def select(self, frame_ids: Sequence[str] | None = None,
               au_ids: Sequence[str] | None = None) -> LabelTable:
        rows = [self._index[f] for f in frame_ids] if frame_ids is not None else list(range(len(self)))
        cols = [self.au_ids.index(a) for a in au_ids] if au_ids is not None else list(range(len(self.au_ids)))
        return LabelTable(
            au_ids=tuple(self.au_ids[c] for c in cols),
            frame_ids=tuple(self.frame_ids[r] for r in rows),
            subject_ids=tuple(self.subject_ids[r] for r in rows),
            states=self.states[np.ix_(rows, cols)],
        )


def parse_label_file(raw: bytes | str, source: str = "<labels>") -> LabelTable:
    reader = csv.reader(io.StringIO(_text(raw)))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyTable(f"{source}: no header row") from None
    if header[:2] != ["frame_id", "subject_id"] or len(header) < 3:
        raise MalformedLine(f"{source}: header must start with frame_id,subject_id,AU..")
    au_ids = tuple(header[2:])
    frames, subjects, rows = [], [], []
    seen = set()
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise MalformedLine(f"{source}:{lineno}: expected {len(header)} cells, got {len(rec)}")
        fid, sid = rec[0].strip(), rec[1].strip()
        if fid in seen:
            raise DuplicateFrame(f"{source}:{lineno}: duplicate frame_id {fid!r}")
        seen.add(fid)
        codes = []
        for au, cell in zip(au_ids, rec[2:]):
            cell = cell.strip()
            if cell not in ("0", "1", "9"):
                raise UnknownCellValue(f"{source}:{lineno}: frame {fid}, {au}: {cell!r} not in {{0,1,9}}")
            codes.append(int(cell))
        frames.append(fid)
        subjects.append(sid)
        rows.append(codes)
    states = np.array(rows, dtype=np.int8).reshape(len(rows), len(au_ids))
    return LabelTable(au_ids, tuple(frames), tuple(subjects), states)


def format_label_file(table: LabelTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_id", "subject_id", *table.au_ids])
    for fid, sid, row in zip(table.frame_ids, table.subject_ids, table.states):
        w.writerow([fid, sid, *(int(v) for v in row)])
    return buf.getvalue()


def state_counts(table: LabelTable) -> dict[str, tuple[int, int, int]]:
    """(present, absent, unknown) per AU."""
    s = table.states
    return {
        au: (int((s[:, j] == AUState.PRESENT).sum()),
             int((s[:, j] == AUState.ABSENT).sum()),
             int((s[:, j] == AUState.UNKNOWN).sum()))
        for j, au in enumerate(table.au_ids)
    }


def occurrence_stats(table: LabelTable) -> dict[str, float]:
    """Percentage of labelled frames in which each AU is present.

    Unknown frames are excluded from the denominator; AUs with no labelled
    frame at all are left out of the result.
    """
    if len(table) == 0:
        raise EmptyTable("label table has no frames")
    out = {}
    for au, (pos, neg, _) in state_counts(table).items():
        if pos + neg:
            out[au] = 100.0 * pos / (pos + neg)
    return out


def format_stats_csv(stats: Mapping[str, float]) -> str:
    lines = ["au,occurrence_pct"]
    lines += [f"{au_number(au)},{pct:.2f}" for au, pct in stats.items()]
    return "\n".join(lines) + "\n"


# -- manifests and datasets -------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    frame_id: str
    subject_id: str
    landmark_file: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    label_file: str
    n_landmarks: int = DEFAULT_N_LANDMARKS
    base_dir: Path = Path(".")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def parse_manifest(raw: bytes | str, base_dir: str | Path = ".") -> DatasetManifest:
    try:
        obj = json.loads(_text(raw))
        entries = tuple(ManifestEntry(str(e["frame_id"]), str(e["subject_id"]), str(e["landmark_file"]))
                        for e in obj["entries"])
        manifest = DatasetManifest(entries, str(obj["label_file"]), int(obj.get("n_landmarks", DEFAULT_N_LANDMARKS)),
                                   Path(base_dir))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest: {exc}") from None
    seen = set()
    for e in entries:
        if e.frame_id in seen:
            raise DuplicateFrame(f"manifest: duplicate frame_id {e.frame_id!r}")
        seen.add(e.frame_id)
    return manifest


def format_manifest(manifest: DatasetManifest) -> str:
    return json.dumps({
        "n_landmarks": manifest.n_landmarks,
        "label_file": manifest.label_file,
        "entries": [{"frame_id": e.frame_id, "subject_id": e.subject_id, "landmark_file": e.landmark_file}
                    for e in manifest.entries],
    }, indent=1) + "\n"


@dataclass(frozen=True)
class Dataset:
    """Landmarks and labels joined by frame, in manifest order."""

    frame_ids: tuple[str, ...]
    subject_ids: tuple[str, ...]
    points: np.ndarray  # (F, N, 3)
    labels: LabelTable  # rows aligned with frame_ids

    def __len__(self) -> int:
        return len(self.frame_ids)

    @property
    def au_ids(self) -> tuple[str, ...]:
        return self.labels.au_ids

    def subset(self, idx: Sequence[int] | np.ndarray) -> Dataset:
        idx = np.asarray(idx, dtype=np.intp)
        fids = tuple(self.frame_ids[i] for i in idx)
        return Dataset(fids, tuple(self.subject_ids[i] for i in idx), self.points[idx],
                       self.labels.select(fids))

    def with_aus(self, au_ids: Sequence[str]) -> Dataset:
        return Dataset(self.frame_ids, self.subject_ids, self.points, self.labels.select(None, au_ids))


def join_dataset(frame_ids: Sequence[str], subject_ids: Sequence[str], points: np.ndarray,
                 labels: LabelTable) -> Dataset:
    missing = [f for f in frame_ids if f not in labels]
    if missing:
        raise ManifestError(f"frame {missing[0]!r} has no row in the label table ({len(missing)} missing)")
    for f, s in zip(frame_ids, subject_ids):
        if labels.subject_of(f) != s:
            raise ManifestError(f"frame {f!r}: subject {s!r} in manifest, {labels.subject_of(f)!r} in labels")
    pts = np.asarray(points, dtype=np.float64)
    return Dataset(tuple(frame_ids), tuple(subject_ids), _frozen(pts), labels.select(list(frame_ids)))


def load_dataset(manifest_path: str | Path) -> Dataset:
    path = Path(manifest_path)
    manifest = parse_manifest(path.read_bytes(), path.parent)
    labels = parse_label_file(manifest.resolve(manifest.label_file).read_bytes(), manifest.label_file)
    points = np.empty((len(manifest.entries), manifest.n_landmarks, 3))
    for i, e in enumerate(manifest.entries):
        points[i] = parse_landmark_file(manifest.resolve(e.landmark_file).read_bytes(),
                                        manifest.n_landmarks, e.landmark_file)
    return join_dataset([e.frame_id for e in manifest.entries], [e.subject_id for e in manifest.entries],
                        points, labels)


def load_labels(manifest_path: str | Path) -> LabelTable:
    path = Path(manifest_path)
    manifest = parse_manifest(path.read_bytes(), path.parent)
    labels = parse_label_file(manifest.resolve(manifest.label_file).read_bytes(), manifest.label_file)
    fids = [e.frame_id for e in manifest.entries]
    missing = [f for f in fids if f not in labels]
    if missing:
        raise ManifestError(f"frame {missing[0]!r} has no row in the label table")
    return labels.select(fids)


def write_dataset(directory: str | Path, frame_ids: Sequence[str], subject_ids: Sequence[str],
                  points: np.ndarray, labels: LabelTable) -> Path:
    """Write landmark files, ``labels.csv`` and ``manifest.json``; returns the manifest path."""
    root = Path(directory)
    (root / "landmarks").mkdir(parents=True, exist_ok=True)
    entries = []
    for fid, sid, pts in zip(frame_ids, subject_ids, points):
        rel = f"landmarks/{fid}.txt"
        (root / rel).write_text(format_landmark_file(pts), encoding="utf-8")
        entries.append(ManifestEntry(fid, sid, rel))
    (root / "labels.csv").write_text(format_label_file(labels), encoding="utf-8")
    manifest = DatasetManifest(tuple(entries), "labels.csv", int(np.asarray(points).shape[1]), root)
    out = root / "manifest.json"
    out.write_text(format_manifest(manifest), encoding="utf-8")
    return out
