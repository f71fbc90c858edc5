"""Fold planning, label encoding, class balancing and the train/evaluate drivers."""

from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, EmptyAUIntersection, TooFewFolds, TooFewSubjects
from .landmark_io import AUState, Dataset, LabelTable, load_dataset
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    binary_counts,
    f1_macro_3class,
    f1_micro_3class,
    f1_micro_pooled,
    multiclass_counts,
)
from .neuralnet import (
    BINARY,
    THREE_CLASS,
    AdamState,
    ArchitectureDescriptor,
    Network,
    adam_step,
    binary_cross_entropy,
    categorical_cross_entropy,
    init_network,
)
from .voxelizer import encode_frames

log = logging.getLogger(__name__)

EpochCallback = Callable[[int, float], None]
BatchHook = Callable[[Sequence[str]], None]


# -- folds ------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: dict[str, int]
    seed: int

    def sizes(self) -> list[int]:
        return [sum(1 for f in self.assignments.values() if f == i) for i in range(self.k)]

    def subjects(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.assignments.items() if f == fold)

    def split(self, subject_ids: Sequence[str], fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train, test) frame indices for one fold."""
        folds = np.array([self.assignments[s] for s in subject_ids])
        return np.flatnonzero(folds != fold), np.flatnonzero(folds == fold)


def make_folds(subjects: Sequence[str], k: int, seed: int = 0) -> FoldPlan:
    """Subject-disjoint folds: shuffle the sorted unique subjects, deal them round-robin."""
    if k < 2:
        raise TooFewFolds(f"need k >= 2 folds, got {k}")
    uniq = sorted(set(subjects))
    if len(uniq) < k:
        raise TooFewSubjects(f"{len(uniq)} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(uniq))
    return FoldPlan(k, {uniq[j]: pos % k for pos, j in enumerate(order)}, seed)


# -- targets ----------------------------------------------------------------

@dataclass(frozen=True)
class EncodedTargets:
    """Binary: ``values`` in {0, 1} with ``mask`` 0 on Unknown entries.
    3-class: ``values`` are class indices (0 absent, 1 unknown, 2 present),
    i.e. the -1/0/1 codes shifted by one; ``mask`` is all ones."""

    variant: str
    au_ids: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray

    def codes(self) -> np.ndarray:
        """3-class targets as -1 / 0 / 1."""
        return self.values.astype(np.int64) - 1

    def take(self, idx) -> EncodedTargets:
        return EncodedTargets(self.variant, self.au_ids, self.values[idx], self.mask[idx])


def encode_labels(table: LabelTable, variant: str) -> EncodedTargets:
    s = table.states
    if variant == BINARY:
        return EncodedTargets(variant, table.au_ids, (s == AUState.PRESENT).astype(np.float64),
                              (s != AUState.UNKNOWN).astype(np.float64))
    if variant == THREE_CLASS:
        idx = np.select([s == AUState.ABSENT, s == AUState.UNKNOWN, s == AUState.PRESENT], [0, 1, 2])
        return EncodedTargets(variant, table.au_ids, idx.astype(np.int64), np.ones(s.shape))
    raise ConfigError(f"unknown variant {variant!r}")


# -- balancing --------------------------------------------------------------

BALANCE_MODES = ("weight", "undersample", "none")


@dataclass
class Balance:
    mode: str
    pos_weight: np.ndarray | None
    flagged: list[str] = field(default_factory=list)
    class_weight: np.ndarray | None = None  # (A, 3), 3-class only


def positive_weights(targets: EncodedTargets) -> tuple[np.ndarray, list[str]]:
    """w+ = n_neg / n_pos per AU over labelled entries. AUs without positives
    keep weight 1 and are returned in the flagged list."""
    if targets.variant == BINARY:
        pos = (targets.values * targets.mask).sum(axis=0)
        neg = ((1 - targets.values) * targets.mask).sum(axis=0)
    else:
        pos = (targets.values == 2).sum(axis=0).astype(np.float64)
        neg = (targets.values == 0).sum(axis=0).astype(np.float64)
    flagged = [au for au, p in zip(targets.au_ids, pos) if p == 0]
    return _ratio(neg, pos), flagged


def _ratio(neg: np.ndarray, n: np.ndarray) -> np.ndarray:
    w = np.divide(neg, n, out=np.ones_like(n), where=n > 0)
    w[(n > 0) & (neg == 0)] = 1.0
    return w


def class_weights(targets: EncodedTargets) -> np.ndarray:
    """(A, 3) weights for the 3-class loss: the binary rule applied to every
    class, w_c = n_absent / n_c, so Absent keeps weight 1 and Present gets w+."""
    counts = np.stack([(targets.values == c).sum(axis=0) for c in range(3)], axis=1).astype(np.float64)
    return np.stack([_ratio(counts[:, 0], counts[:, c]) for c in range(3)], axis=1)


def balance(targets: EncodedTargets, mode: str = "weight") -> Balance:
    """Balancing plan computed from the training split only."""
    if mode not in BALANCE_MODES:
        raise ConfigError(f"unknown balance mode {mode!r}")
    w, flagged = positive_weights(targets)
    flagged = [f"{au}: no positive training frames, trained unweighted" for au in flagged]
    if mode != "weight":
        return Balance(mode, None, flagged)
    if targets.variant == BINARY:
        return Balance(mode, w, flagged)
    return Balance(mode, w, flagged, class_weights(targets))


def undersample(targets: EncodedTargets, rng: np.random.Generator) -> np.ndarray:
    """Greedy per-epoch subset that pushes every AU towards a 50% positive rate.

    AUs are visited from rarest to most common. For each, surplus frames of the
    majority class are dropped at random, but a frame is never dropped if it is
    a minority-class example for an AU already visited. Returns sorted indices.
    """
    if targets.variant == BINARY:
        y, m = targets.values > 0.5, targets.mask > 0
    else:
        y, m = targets.values == 2, targets.values != 1
    keep = np.ones(len(y), dtype=bool)
    protected = np.zeros(len(y), dtype=bool)
    rate = np.where(m.sum(0) > 0, (y & m).sum(0) / np.maximum(m.sum(0), 1), 0.5)
    for a in np.argsort(np.abs(rate - 0.5))[::-1]:
        pos = keep & m[:, a] & y[:, a]
        neg = keep & m[:, a] & ~y[:, a]
        n_pos, n_neg = int(pos.sum()), int(neg.sum())
        if n_pos == 0 or n_neg == 0:
            continue
        major, surplus = (neg, n_neg - n_pos) if n_neg > n_pos else (pos, n_pos - n_neg)
        candidates = np.flatnonzero(major & ~protected)
        if surplus > 0 and len(candidates):
            drop = rng.choice(candidates, size=min(surplus, len(candidates)), replace=False)
            keep[drop] = False
        protected |= keep & m[:, a] & ~(major & keep)
    return np.flatnonzero(keep)


# -- configuration ----------------------------------------------------------

@dataclass
class ExperimentConfig:
    variant: str = BINARY
    train_manifest: str | None = None
    test_manifest: str | None = None
    k: int = 3
    seed: int = 0
    epochs: int = 250
    balance: str = "weight"
    c: int = 24
    batch_size: int = 64
    learning_rate: float = 0.001
    threshold: float = 0.5
    pooling: str = "pooled"          # or "per_fold"
    micro: str = "weighted"          # or "pooled"
    deterministic: bool = True
    relaxed_degenerate: bool = False
    descriptor: dict[str, Any] = field(default_factory=dict)

    def validate(self):
        if self.variant not in (BINARY, THREE_CLASS):
            raise ConfigError(f"variant must be {BINARY!r} or {THREE_CLASS!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.k < 2:
            raise TooFewFolds(f"need k >= 2 folds, got {self.k}")
        if self.balance not in BALANCE_MODES:
            raise ConfigError(f"balance must be one of {BALANCE_MODES}")
        if self.pooling not in ("pooled", "per_fold"):
            raise ConfigError("pooling must be 'pooled' or 'per_fold'")
        if self.micro not in ("weighted", "pooled"):
            raise ConfigError("micro must be 'weighted' or 'pooled'")
        if self.batch_size < 1 or self.c < 2:
            raise ConfigError("batch_size must be >= 1 and c >= 2")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def from_json(cls, path: str | Path) -> ExperimentConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def architecture(self, au_count: int) -> ArchitectureDescriptor:
        d = {k: v for k, v in self.descriptor.items()}
        d.update(variant=self.variant, input_c=self.c, au_count=au_count)
        try:
            return ArchitectureDescriptor(**d)
        except TypeError as exc:
            raise ConfigError(f"bad descriptor override: {exc}") from None


@contextlib.contextmanager
def execution_mode(deterministic: bool):
    """Deterministic mode pins BLAS to one thread so reductions run in a fixed order."""
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


# -- encoded data -----------------------------------------------------------

@dataclass
class EncodedData:
    frame_ids: tuple[str, ...]
    subject_ids: tuple[str, ...]
    grids: np.ndarray
    targets: EncodedTargets
    flagged_frames: list[str]

    def take(self, idx) -> EncodedData:
        idx = np.asarray(idx)
        return EncodedData(tuple(self.frame_ids[i] for i in idx), tuple(self.subject_ids[i] for i in idx),
                           self.grids[idx], self.targets.take(idx),
                           [f for f in self.flagged_frames if f in {self.frame_ids[i] for i in idx}])


def encode_dataset(ds: Dataset, variant: str, c: int, relaxed: bool = False) -> EncodedData:
    grids, flagged = encode_frames(ds.points, c, relaxed=relaxed)
    return EncodedData(ds.frame_ids, ds.subject_ids, grids, encode_labels(ds.labels, variant),
                       [ds.frame_ids[i] for i in np.flatnonzero(flagged)])


# -- training ---------------------------------------------------------------

def _loss(net: Network, probs: np.ndarray, targets: EncodedTargets, plan: Balance):
    if net.variant == BINARY:
        return binary_cross_entropy(probs, targets.values, targets.mask, plan.pos_weight)
    return categorical_cross_entropy(probs, targets.values, plan.class_weight)


def train_network(data: EncodedData, config: ExperimentConfig, seed: int | None = None,
                  on_epoch: EpochCallback | None = None, batch_hook: BatchHook | None = None,
                  net: Network | None = None) -> tuple[Network, list[float], Balance]:
    """Train from scratch (or continue ``net``) on already-encoded frames.

    Returns the network, the mean batch loss per epoch, and the balancing plan.
    """
    seed = config.seed if seed is None else seed
    if net is None:
        net = init_network(config.architecture(len(data.targets.au_ids)), seed)
    plan = balance(data.targets, config.balance)
    state = AdamState(lr=config.learning_rate)
    rng = np.random.default_rng([seed, 1])
    losses = []
    for epoch in range(1, config.epochs + 1):
        pool = undersample(data.targets, rng) if plan.mode == "undersample" else np.arange(len(data.grids))
        order = pool[rng.permutation(len(pool))]
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            if batch_hook is not None:
                batch_hook([data.frame_ids[i] for i in idx])
            t = data.targets.take(idx)
            probs = net.forward(data.grids[idx], train=True)
            loss, dp = _loss(net, probs, t, plan)
            grads = net.backward(dp)
            adam_step(net.params, grads, state)
            total += loss * len(idx)
            count += len(idx)
        net.clear_cache()
        mean = total / max(count, 1)
        if not np.isfinite(mean):
            from .errors import NonFiniteValue

            raise NonFiniteValue(f"training loss became non-finite at epoch {epoch}")
        losses.append(mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return net, losses, plan


@dataclass
class Evaluation:
    counts: ConfusionCounts
    probs: np.ndarray
    max_simplex_error: float | None = None


def evaluate_network(net: Network, data: EncodedData, threshold: float = 0.5,
                     columns: Sequence[int] | None = None) -> Evaluation:
    """Score ``net`` on encoded frames. ``columns`` picks the network outputs
    that line up with ``data``'s AUs when the two AU lists differ."""
    probs = net.predict(data.grids)
    if columns is not None:
        probs = probs[:, list(columns)]
    if net.variant == BINARY:
        return Evaluation(binary_counts(probs, data.targets.values, data.targets.mask,
                                        data.targets.au_ids, threshold), probs)
    err = float(np.abs(probs.sum(axis=-1) - 1).max()) if len(probs) else 0.0
    return Evaluation(multiclass_counts(probs, data.targets.values, data.targets.au_ids), probs, err)


def _score_columns(variant: str, counts: ConfusionCounts, micro: str, binary_column: str) -> dict[str, np.ndarray]:
    if variant == BINARY:
        return {binary_column: 100 * counts.f1()}
    mic = f1_micro_3class(counts) if micro == "weighted" else f1_micro_pooled(counts)
    return {"f1_macro": 100 * f1_macro_3class(counts), "f1_micro": 100 * mic}


def report_from_counts(variant: str, counts: ConfusionCounts, config: ExperimentConfig,
                       binary_column: str = "f1", per_fold: Sequence[ConfusionCounts] | None = None,
                       **extra) -> MetricsReport:
    """Turn counts into a report; with ``per_fold`` the per-AU scores are fold averages."""
    if per_fold:
        cols = [_score_columns(variant, c, config.micro, binary_column) for c in per_fold]
        scores = {k: np.mean([c[k] for c in cols], axis=0) for k in cols[0]}
    else:
        scores = _score_columns(variant, counts, config.micro, binary_column)
    notes = {"tool_version": __version__, "variant": variant, "seed": config.seed,
             "mode": "deterministic" if config.deterministic else "parallel (not bit-reproducible)"}
    if variant == THREE_CLASS:
        notes["f1_micro_definition"] = ("support-weighted mean of class F1" if config.micro == "weighted"
                                        else "F1 of class-pooled counts")
    notes.update(extra)
    return MetricsReport(counts.au_ids, tuple(scores), {k: [float(v) for v in vals] for k, vals in scores.items()},
                         experiment=config.to_dict(), notes=notes)


def _load(manifest: str | None, dataset: Dataset | None, what: str) -> Dataset:
    if dataset is not None:
        return dataset
    if manifest is None:
        raise ConfigError(f"no {what} manifest given")
    return load_dataset(manifest)


def run_cv(config: ExperimentConfig, dataset: Dataset | None = None, on_epoch=None,
           batch_hook=None) -> MetricsReport:
    """Subject-disjoint k-fold cross-validation on one dataset."""
    config.validate()
    ds = _load(config.train_manifest, dataset, "training")
    data = encode_dataset(ds, config.variant, config.c, config.relaxed_degenerate)
    plan = make_folds(ds.subject_ids, config.k, config.seed)
    fold_counts, losses, flags, simplex = [], [], set(), []
    with execution_mode(config.deterministic):
        for fold in range(config.k):
            tr, te = plan.split(ds.subject_ids, fold)
            cb = (lambda e, l, f=fold: on_epoch(f, e, l)) if on_epoch else None
            hook = (lambda ids, f=fold: batch_hook(f, ids)) if batch_hook else None
            net, fold_losses, bal = train_network(data.take(tr), config, seed=config.seed + fold,
                                                  on_epoch=cb, batch_hook=hook)
            ev = evaluate_network(net, data.take(te), config.threshold)
            log.info("fold %d: %d train / %d test frames", fold, len(tr), len(te))
            fold_counts.append(ev.counts)
            losses.append(fold_losses)
            flags.update(f"fold {fold}: {f}" for f in bal.flagged)
            if ev.max_simplex_error is not None:
                simplex.append(ev.max_simplex_error)
    pooled = fold_counts[0]
    for c in fold_counts[1:]:
        pooled = pooled + c
    report = report_from_counts(config.variant, pooled, config, f"f1_{config.k}fold",
                                per_fold=fold_counts if config.pooling == "per_fold" else None,
                                folds=config.k, fold_scores=config.pooling)
    report.flags = sorted(flags) + [f"degenerate frame {f}" for f in data.flagged_frames]
    report.details = {"fold_losses": losses, "fold_counts": fold_counts, "pooled_counts": pooled,
                      "fold_plan": plan}
    if simplex:
        report.details["max_simplex_error"] = max(simplex)
    return report


def intersect_aus(a: Sequence[str], b: Sequence[str]) -> tuple[str, ...]:
    shared = tuple(x for x in a if x in set(b))
    if not shared:
        raise EmptyAUIntersection("training and test datasets share no AU columns")
    return shared


def run_cross_dataset(config: ExperimentConfig, train: Dataset | None = None, test: Dataset | None = None,
                      on_epoch=None, batch_hook=None) -> MetricsReport:
    """Train k fold models on the training dataset; score each on the whole test
    dataset and average the per-AU F1 over the fold models."""
    config.validate()
    tr_ds = _load(config.train_manifest, train, "training")
    te_ds = _load(config.test_manifest, test, "test")
    aus = intersect_aus(tr_ds.au_ids, te_ds.au_ids)
    tr_ds, te_ds = tr_ds.with_aus(aus), te_ds.with_aus(aus)
    tr_data = encode_dataset(tr_ds, config.variant, config.c, config.relaxed_degenerate)
    te_data = encode_dataset(te_ds, config.variant, config.c, config.relaxed_degenerate)
    plan = make_folds(tr_ds.subject_ids, config.k, config.seed)
    counts, losses, flags, simplex, nets = [], [], set(), [], []
    with execution_mode(config.deterministic):
        for fold in range(config.k):
            tr, _ = plan.split(tr_ds.subject_ids, fold)
            cb = (lambda e, l, f=fold: on_epoch(f, e, l)) if on_epoch else None
            hook = (lambda ids, f=fold: batch_hook(f, ids)) if batch_hook else None
            net, fold_losses, bal = train_network(tr_data.take(tr), config, seed=config.seed + fold,
                                                  on_epoch=cb, batch_hook=hook)
            ev = evaluate_network(net, te_data, config.threshold)
            counts.append(ev.counts)
            losses.append(fold_losses)
            nets.append(net)
            flags.update(f"fold {fold}: {f}" for f in bal.flagged)
            if ev.max_simplex_error is not None:
                simplex.append(ev.max_simplex_error)
    pooled = counts[0]
    for c in counts[1:]:
        pooled = pooled + c
    report = report_from_counts(config.variant, pooled, config, f"f1_{config.k}fold", per_fold=counts,
                                folds=config.k, fold_scores="per_fold", au_intersection=list(aus))
    report.flags = sorted(flags)
    report.details = {"fold_losses": losses, "fold_counts": counts, "networks": nets}
    if simplex:
        report.details["max_simplex_error"] = max(simplex)
    return report


def fit(config: ExperimentConfig, dataset: Dataset | None = None, on_epoch: EpochCallback | None = None):
    """Train one network on a whole dataset. Returns (network, losses, balance plan)."""
    config.validate()
    ds = _load(config.train_manifest, dataset, "training")
    data = encode_dataset(ds, config.variant, config.c, config.relaxed_degenerate)
    with execution_mode(config.deterministic):
        return train_network(data, config, on_epoch=on_epoch)


def evaluate(net: Network, config: ExperimentConfig, dataset: Dataset | None = None,
             au_ids: Sequence[str] | None = None) -> MetricsReport:
    """Score a trained network on a whole dataset.

    ``au_ids`` names the network's outputs in order. When given, only the AUs
    shared with the dataset are scored; otherwise the dataset header is taken
    as the output order and the counts must match.
    """
    ds = _load(config.test_manifest or config.train_manifest, dataset, "evaluation")
    columns, extra = None, {}
    if au_ids is not None:
        if len(au_ids) != net.descriptor.au_count:
            raise ConfigError(f"network predicts {net.descriptor.au_count} AUs, {len(au_ids)} AU names given")
        aus = intersect_aus(au_ids, ds.au_ids)
        columns = [list(au_ids).index(a) for a in aus]
        ds = ds.with_aus(aus)
        extra = {"au_intersection": list(aus)}
    elif len(ds.au_ids) != net.descriptor.au_count:
        raise ConfigError(f"network predicts {net.descriptor.au_count} AUs, dataset has {len(ds.au_ids)}")
    data = encode_dataset(ds, net.variant, net.descriptor.input_c, config.relaxed_degenerate)
    with execution_mode(config.deterministic):
        ev = evaluate_network(net, data, config.threshold, columns)
    report = report_from_counts(net.variant, ev.counts, config, "f1", **extra)
    report.details = {"counts": ev.counts, "probs": ev.probs}
    if ev.max_simplex_error is not None:
        report.details["max_simplex_error"] = ev.max_simplex_error
    return report
