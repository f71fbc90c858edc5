"""Synthetic landmark datasets with a known AU -> landmark displacement structure.

Every frame is an analytic 83-point neutral face plus the displacements of
its active AUs, Gaussian jitter, and a random translation and uniform scale
(which the voxel encoding removes again). Randomness comes from a
counter-based SplitMix64 stream keyed on (seed, frame index), so datasets
are reproducible bit-for-bit on any platform and can be generated in any
order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidSpec
from .landmark_io import DEFAULT_AU_IDS, AUState, Dataset, LabelTable, join_dataset, write_dataset

# Occurrence percentages per AU for the two reference datasets (AU24 never
# occurs in the second one).
BP4D_RATES = {"AU01": 21.07, "AU02": 17.04, "AU04": 20.22, "AU06": 46.10, "AU07": 54.90, "AU10": 59.39,
              "AU12": 56.18, "AU14": 46.60, "AU15": 16.96, "AU17": 34.37, "AU23": 16.56, "AU24": 15.16}
BP4D_PLUS_RATES = {"AU01": 9.54, "AU02": 8.01, "AU04": 0.67, "AU06": 65.88, "AU07": 3.46, "AU10": 57.37,
                   "AU12": 59.99, "AU14": 32.46, "AU15": 12.96, "AU17": 0.67, "AU23": 2.35}

# -- counter-based SplitMix64 -----------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, indices: np.ndarray) -> np.ndarray:
    """One 64-bit key per index, derived from the seed."""
    base = _mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    with np.errstate(over="ignore"):
        return _mix64(base ^ _mix64(np.asarray(indices, dtype=np.uint64) * _GOLDEN))


def uniform_block(keys: np.ndarray, n: int) -> np.ndarray:
    """(len(keys), n) doubles in [0, 1): SplitMix64 outputs 1..n of each key's stream."""
    with np.errstate(over="ignore"):
        ctr = keys[:, None] + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)[None, :]
    return (_mix64(ctr) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def _box_muller(u: np.ndarray, n: int) -> np.ndarray:
    """Standard normals from pairs of uniforms along the last axis."""
    u1, u2 = 1.0 - u[..., 0::2], u[..., 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)], axis=-1)
    return z[..., :n]


# -- neutral face -----------------------------------------------------------

def _ring(cx, cy, rx, ry, count, start=0.0):
    ang = start + 2 * np.pi * np.arange(count) / count
    return np.stack([cx + rx * np.cos(ang), cy + ry * np.sin(ang)], axis=1)


def neutral_template() -> np.ndarray:
    """83 points: contour 15, brows 2x10, eyes 2x8, nose 12, outer lip 12, inner lip 8.

    x to the subject's left, y up, z towards the viewer. The contour encloses
    everything else in x and y; the nose tip is the most forward point.
    The contour ring is turned slightly off the midline so no landmark sits
    at the exact centre of the bounding box, where every odd ``C - 1`` puts
    a half-cell rounding boundary.
    """
    parts = []
    contour = _ring(0, -10, 70, 90, 15, np.pi / 2 + 0.18)
    parts.append(np.column_stack([contour, np.full(15, -20.0)]))
    for side in (1, -1):
        bx = 15 + 40 * np.arange(10) / 9
        by = 35 + 8 * np.sin(np.pi * np.arange(10) / 9)
        parts.append(np.column_stack([side * bx, by, 14 - 0.15 * (bx - 15)]))
    for side in (1, -1):
        eye = _ring(side * 32, 18, 12, 5, 8)
        parts.append(np.column_stack([eye, np.full(8, 10.0)]))
    bridge = np.array([[0, 20, 22], [0, 12, 27], [0, 4, 32], [0, -4, 37], [0, -12, 42]])
    base = np.array([[-14, -18, 24], [-9, -21, 27], [-4, -22, 29], [0, -22, 30],
                     [4, -22, 29], [9, -21, 27], [14, -18, 24]])
    parts += [bridge, base]
    outer = _ring(0, -48, 25, 11, 12)
    parts.append(np.column_stack([outer, 18 - 0.12 * np.abs(outer[:, 0])]))
    inner = _ring(0, -48, 16, 4, 8)
    parts.append(np.column_stack([inner, np.full(8, 19.0)]))
    pts = np.concatenate(parts).astype(np.float64)
    assert pts.shape == (83, 3)
    return pts


# landmark index ranges of the template
CONTOUR = range(0, 15)
BROW_R, BROW_L = range(15, 25), range(25, 35)
EYE_R, EYE_L = range(35, 43), range(43, 51)
NOSE = range(51, 63)
LIP_OUT, LIP_IN = range(63, 75), range(75, 83)


def _eye(base, *offs):
    return [base.start + o for o in offs]


def default_displacements() -> dict[str, dict[int, tuple[float, float, float]]]:
    """Unit-free direction per moved landmark for each of the 12 default AUs."""
    t = neutral_template()
    side = np.sign(t[:, 0])
    d: dict[str, dict[int, tuple[float, float, float]]] = {}
    inner_brows = [15, 16, 17, 25, 26, 27]
    outer_brows = [22, 23, 24, 32, 33, 34]
    d["AU01"] = {i: (0, 1, 0.3) for i in inner_brows}
    d["AU02"] = {i: (0, 1, 0) for i in outer_brows}
    d["AU04"] = {i: (-0.5 * side[i], -1, 0) for i in [15, 16, 17, 18, 19, 25, 26, 27, 28, 29]}
    d["AU06"] = {i: (0, 1, 0.2) for i in _eye(EYE_R, 5, 6, 7) + _eye(EYE_L, 5, 6, 7)}
    d["AU07"] = {i: (0, -1, -0.5) for i in _eye(EYE_R, 1, 2, 3) + _eye(EYE_L, 1, 2, 3)}
    d["AU07"].update({i: (0, 0, -1) for i in _eye(EYE_R, 4) + _eye(EYE_L, 0)})
    d["AU10"] = {i: (0, 1, 0.5) for i in [65, 66, 67, 77]}
    d["AU10"].update({i: (0, 1, 0) for i in [57, 58, 60, 61]})
    corners = [63, 69, 75, 79]
    d["AU12"] = {i: (side[i], 1, -0.3) for i in corners}
    d["AU14"] = {i: (-0.3 * side[i], 0, -1) for i in corners}
    d["AU15"] = {i: (0, -1, 0) for i in [63, 69, 74, 70]}
    d["AU17"] = {i: (0, 1, 1) for i in [71, 72, 73, 81]}
    d["AU23"] = {i: (0, -1, 0) for i in [76, 77, 78]}
    d["AU23"].update({i: (0, 1, 0) for i in [80, 81, 82]})
    d["AU24"] = {i: (0, 0, -1) for i in [65, 66, 67, 71, 72, 73]}
    d["AU24"].update({66: (0, -1, -1), 72: (0, 1, -1)})
    return {au: {int(i): tuple(float(v) for v in vec) for i, vec in m.items()} for au, m in d.items()}


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    ``rates`` are occurrence probabilities in [0, 1] among labelled frames.
    ``magnitude`` and ``sigma`` are fractions of the template's largest
    bounding-box extent. With probability ``unknown_rate`` an AU's label is
    Unknown for a frame; such AUs are applied at ``unknown_intensity``
    (0.5 by default, a partial activation; a negative value displaces the
    landmarks against the pattern, giving Unknown its own appearance).
    """

    n_subjects: int = 20
    frames_per_subject: int = 50
    au_ids: tuple[str, ...] = DEFAULT_AU_IDS
    rates: Mapping[str, float] | None = None
    displacements: Mapping[str, Mapping[int, tuple[float, float, float]]] | None = None
    magnitude: float = 0.04
    sigma: float = 0.02
    unknown_rate: float = 0.0
    unknown_intensity: float = 0.5
    translation_range: float = 100.0
    scale_range: tuple[float, float] = (0.5, 2.0)
    seed: int = 0
    subject_prefix: str = "S"

    def resolved_rates(self) -> np.ndarray:
        rates = self.rates if self.rates is not None else {au: 0.5 for au in self.au_ids}
        try:
            return np.array([float(rates[au]) for au in self.au_ids])
        except KeyError as exc:
            raise InvalidSpec(f"no rate for {exc.args[0]}") from None

    def resolved_displacements(self) -> list[dict[int, tuple[float, float, float]]]:
        disp = self.displacements if self.displacements is not None else default_displacements()
        out = []
        for au in self.au_ids:
            if au not in disp or not disp[au]:
                raise InvalidSpec(f"no displacement pattern for {au}")
            out.append(dict(disp[au]))
        return out

    def validate(self):
        rates = self.resolved_rates()
        if np.any((rates < 0) | (rates > 1)):
            raise InvalidSpec("rates must lie in [0, 1]")
        if self.sigma < 0 or self.magnitude <= 0:
            raise InvalidSpec("sigma must be >= 0 and magnitude > 0")
        if not 0 <= self.unknown_rate <= 1:
            raise InvalidSpec("unknown_rate must lie in [0, 1]")
        if self.n_subjects < 1 or self.frames_per_subject < 1:
            raise InvalidSpec("need at least one subject and one frame")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise InvalidSpec("scale_range must be positive and ordered")
        for d in self.resolved_displacements():
            for i, v in d.items():
                if not 0 <= i < 83 or not np.any(np.asarray(v)):
                    raise InvalidSpec(f"bad displacement entry {i}: {v}")


def rates_from_percentages(pcts: Mapping[str, float]) -> dict[str, float]:
    return {au: p / 100.0 for au, p in pcts.items()}


def _displacement_tensor(spec: SynthSpec, template: np.ndarray) -> np.ndarray:
    """(A, 83, 3) displacement per AU at full intensity."""
    extent = float((template.max(axis=0) - template.min(axis=0)).max())
    out = np.zeros((len(spec.au_ids), template.shape[0], 3))
    for a, pattern in enumerate(spec.resolved_displacements()):
        for i, vec in pattern.items():
            v = np.asarray(vec, dtype=np.float64)
            out[a, i] = spec.magnitude * extent * v / np.linalg.norm(v)
    return out


def generate(spec: SynthSpec) -> Dataset:
    spec.validate()
    template = neutral_template()
    n_pts, n_au = template.shape[0], len(spec.au_ids)
    n_frames = spec.n_subjects * spec.frames_per_subject
    extent = float((template.max(axis=0) - template.min(axis=0)).max())
    disp = _displacement_tensor(spec, template)
    rates = spec.resolved_rates()

    n_norm = n_pts * 3
    n_norm_u = n_norm + (n_norm % 2)
    keys = stream_keys(spec.seed, np.arange(n_frames))
    u = uniform_block(keys, 2 * n_au + n_norm_u + 4)
    u_unknown, u_active = u[:, :n_au], u[:, n_au:2 * n_au]
    noise = _box_muller(u[:, 2 * n_au:2 * n_au + n_norm_u], n_norm).reshape(n_frames, n_pts, 3)
    u_rigid = u[:, 2 * n_au + n_norm_u:]

    unknown = u_unknown < spec.unknown_rate
    present = ~unknown & (u_active < rates)
    intensity = np.where(present, 1.0, np.where(unknown, spec.unknown_intensity, 0.0))

    pts = template + np.einsum("fa,anc->fnc", intensity, disp) + spec.sigma * extent * noise
    lo, hi = spec.scale_range
    s = lo + (hi - lo) * u_rigid[:, 0]
    shift = spec.translation_range * (2 * u_rigid[:, 1:4] - 1)
    pts = pts * s[:, None, None] + shift[:, None, :]

    states = np.where(unknown, AUState.UNKNOWN, np.where(present, AUState.PRESENT, AUState.ABSENT)).astype(np.int8)
    subjects = [f"{spec.subject_prefix}{i + 1:03d}" for i in range(spec.n_subjects)
                for _ in range(spec.frames_per_subject)]
    frames = [f"{sid}_F{j:04d}" for sid, j in
              zip(subjects, [j for _ in range(spec.n_subjects) for j in range(spec.frames_per_subject)])]
    labels = LabelTable(tuple(spec.au_ids), tuple(frames), tuple(subjects), states)
    return join_dataset(frames, subjects, pts, labels)


def write_synthetic(spec: SynthSpec, directory: str | Path) -> Path:
    """Generate and write a dataset directory; returns the manifest path."""
    ds = generate(spec)
    return write_dataset(directory, ds.frame_ids, ds.subject_ids, ds.points, ds.labels)


def spec_from_dict(d: Mapping) -> SynthSpec:
    d = dict(d)
    if "au_ids" in d:
        d["au_ids"] = tuple(d["au_ids"])
    if "scale_range" in d:
        d["scale_range"] = tuple(d["scale_range"])
    if "displacements" in d and d["displacements"] is not None:
        d["displacements"] = {au: {int(i): tuple(v) for i, v in m.items()} for au, m in d["displacements"].items()}
    try:
        return SynthSpec(**d)
    except TypeError as exc:
        raise InvalidSpec(str(exc)) from None


def subset_aus(au_ids: Sequence[str], drop: Sequence[str]) -> tuple[str, ...]:
    return tuple(a for a in au_ids if a not in set(drop))
