"""Command-line entry point: ``au3d <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
Diagnostics and ``epoch,loss`` progress lines go to stderr; artifacts go to
``--out`` or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .errors import AU3DError, ConfigError, GradientCheckFailed
from .experiments import ExperimentConfig, evaluate, fit, run_cross_dataset, run_cv
from .landmark_io import format_stats_csv, load_dataset, load_labels, occurrence_stats
from .metrics import emit_report
from .neuralnet import load_checkpoint, save_checkpoint
from .neuralnet.gradcheck import check_network, run_all, small_descriptor
from .neuralnet.network import BINARY, THREE_CLASS, ArchitectureDescriptor
from .synthgen import BP4D_PLUS_RATES, BP4D_RATES, SynthSpec, rates_from_percentages, spec_from_dict, write_synthetic
from .voxelizer import encode_frames, write_voxel_grid

log = logging.getLogger("au3d")

VARIANTS = {"binary": BINARY, "3class": THREE_CLASS}
GRAD_TOL = 1e-4


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _provenance(command: str, resolved: dict[str, Any]) -> dict[str, Any]:
    return {"command": command, "config": resolved, "tool_version": __version__}


def _write(args, data: bytes):
    if args.out and args.out != "-":
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def _experiment_flags(p: argparse.ArgumentParser, manifests: bool = True):
    p.add_argument("--config", help="experiment config JSON; flags override its values")
    if manifests:
        p.add_argument("--manifest")
        p.add_argument("--train-manifest")
        p.add_argument("--test-manifest")
    p.add_argument("--variant", choices=list(VARIANTS))
    p.add_argument("--folds", type=int, choices=[3, 10])
    p.add_argument("--epochs", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--balance", choices=["weight", "undersample", "none"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--descriptor-json", help="JSON object of descriptor overrides, e.g. '{\"conv_filters\": [8,8,16,16]}'")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    mode.add_argument("--parallel", dest="deterministic", action="store_false")
    p.add_argument("--out")
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")


def resolve_config(args) -> ExperimentConfig:
    base: dict[str, Any] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        base = ExperimentConfig.from_json(path).to_dict()
    overrides = {
        "variant": VARIANTS.get(args.variant) if getattr(args, "variant", None) else None,
        "k": getattr(args, "folds", None),
        "epochs": getattr(args, "epochs", None),
        "c": getattr(args, "c", None),
        "seed": getattr(args, "seed", None),
        "balance": getattr(args, "balance", None),
        "threshold": getattr(args, "threshold", None),
        "batch_size": getattr(args, "batch_size", None),
        "deterministic": getattr(args, "deterministic", None),
        "train_manifest": getattr(args, "train_manifest", None) or getattr(args, "manifest", None),
        "test_manifest": getattr(args, "test_manifest", None),
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "descriptor_json", None):
        try:
            base["descriptor"] = {**base.get("descriptor", {}), **json.loads(args.descriptor_json)}
        except json.JSONDecodeError as exc:
            raise UsageError(f"--descriptor-json: {exc}") from None
    return ExperimentConfig.from_dict(base)


class _EpochPrinter:
    def __init__(self):
        self.fold = None
        print("epoch,loss", file=sys.stderr, flush=True)

    def single(self, epoch: int, loss: float):
        print(f"{epoch},{loss:.6f}", file=sys.stderr, flush=True)

    def folded(self, fold: int, epoch: int, loss: float):
        if fold != self.fold:
            self.fold = fold
            print(f"# fold {fold}", file=sys.stderr, flush=True)
        self.single(epoch, loss)


# -- subcommands ------------------------------------------------------------

def cmd_stats(args) -> int:
    table = load_labels(args.manifest)
    stats = occurrence_stats(table)
    prov = _provenance("stats", {"manifest": args.manifest})
    if args.format == "json":
        out = json.dumps({**prov, "occurrence_pct": {k: round(v, 2) for k, v in stats.items()}}, indent=1) + "\n"
    else:
        out = "# " + json.dumps(prov, sort_keys=True) + "\n" + format_stats_csv(stats)
    _write(args, out.encode("utf-8"))
    return 0


def cmd_voxelize(args) -> int:
    ds = load_dataset(args.manifest)
    grids, flagged = encode_frames(ds.points, args.c, relaxed=args.relaxed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fid, g in zip(ds.frame_ids, grids):
        (out / f"{fid}.auvx").write_bytes(write_voxel_grid(g))
    prov = _provenance("voxelize", {"manifest": args.manifest, "c": args.c, "relaxed": args.relaxed})
    prov["flagged_frames"] = [ds.frame_ids[i] for i in range(len(ds)) if flagged[i]]
    (out / "provenance.json").write_text(json.dumps(prov, indent=1) + "\n", encoding="utf-8")
    for f in prov["flagged_frames"]:
        log.warning("frame %s has a degenerate axis", f)
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if not args.out:
        raise UsageError("train: --out checkpoint path is required")
    printer = _EpochPrinter()
    net, losses, plan = fit(cfg, on_epoch=printer.single)
    Path(args.out).write_bytes(save_checkpoint(net))
    prov = _provenance("train", cfg.to_dict())
    prov.update(final_loss=losses[-1], flags=plan.flagged, au_ids=list(load_labels(cfg.train_manifest).au_ids))
    Path(args.out + ".json").write_text(json.dumps(prov, indent=1) + "\n", encoding="utf-8")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    net = load_checkpoint(Path(args.checkpoint).read_bytes())
    # the sidecar written by train names the outputs; without it the dataset header must match
    sidecar = Path(args.checkpoint + ".json")
    au_ids = json.loads(sidecar.read_text(encoding="utf-8")).get("au_ids") if sidecar.exists() else None
    report = evaluate(net, cfg, au_ids=au_ids)
    report.experiment = {**report.experiment, "checkpoint": args.checkpoint,
                         "checkpoint_descriptor": net.descriptor.to_dict()}
    _write(args, emit_report(report, args.format))
    return 0


def cmd_crossval(args) -> int:
    cfg = resolve_config(args)
    printer = _EpochPrinter()
    report = run_cv(cfg, on_epoch=printer.folded)
    _write(args, emit_report(report, args.format))
    return 0


def cmd_crossdataset(args) -> int:
    cfg = resolve_config(args)
    if not cfg.train_manifest or not cfg.test_manifest:
        raise UsageError("crossdataset needs --train-manifest and --test-manifest")
    printer = _EpochPrinter()
    report = run_cross_dataset(cfg, on_epoch=printer.folded)
    _write(args, emit_report(report, args.format))
    return 0


def _named_descriptor(name: str) -> ArchitectureDescriptor:
    kind, _, variant = name.partition("-")
    if variant not in VARIANTS or kind not in ("default", "small"):
        raise UsageError(f"--descriptor must be default-binary, default-3class, small-binary or small-3class")
    if kind == "small":
        return small_descriptor(VARIANTS[variant])
    return ArchitectureDescriptor(variant=VARIANTS[variant])


def cmd_gradcheck(args) -> int:
    if args.descriptor == "all":
        results = run_all(seeds=range(args.seed, args.seed + args.seeds))
    else:
        desc = _named_descriptor(args.descriptor)
        sample = None if desc.input_c <= 8 else args.sample
        results = [check_network(desc, s, batch=2, max_entries=sample)
                   for s in range(args.seed, args.seed + args.seeds)]
    worst = max(r.max_rel_error for r in results)
    lines = [f"{r.name},{r.max_rel_error:.3e},{int(r.per_tensor.get('kinks_skipped', 0))}" for r in results]
    prov = _provenance("gradcheck", {"descriptor": args.descriptor, "seed": args.seed, "seeds": args.seeds})
    out = "# " + json.dumps(prov, sort_keys=True) + "\ncheck,max_rel_error,kinks_skipped\n" + "\n".join(lines) + "\n"
    out += f"max_rel_error,{worst:.3e},\n"
    _write(args, out.encode("utf-8"))
    if not worst < GRAD_TOL:
        raise GradientCheckFailed(f"max relative error {worst:.3e} >= {GRAD_TOL}")
    return 0


def cmd_synth(args) -> int:
    d: dict[str, Any] = {}
    if args.spec:
        d = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    for key in ("n_subjects", "frames_per_subject", "sigma", "magnitude", "unknown_rate", "unknown_intensity", "seed"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    if args.rates:
        table = {"bp4d": BP4D_RATES, "bp4d+": BP4D_PLUS_RATES}.get(args.rates.lower())
        if table is None:
            raise UsageError("--rates must be bp4d or bp4d+")
        d["rates"] = rates_from_percentages(table)
        d["au_ids"] = tuple(table)
    spec = spec_from_dict(d)
    manifest = write_synthetic(spec, args.out)
    prov = _provenance("synth", {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()})
    (Path(args.out) / "provenance.json").write_text(json.dumps(prov, indent=1, default=str) + "\n",
                                                    encoding="utf-8")
    print(manifest, file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="au3d", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("stats", help="per-AU occurrence percentages")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out")
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("voxelize", help="write one .auvx grid per frame")
    s.add_argument("--manifest", required=True)
    s.add_argument("--c", type=int, default=24)
    s.add_argument("--relaxed", action="store_true", help="map flat axes to 0 instead of failing")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_voxelize)

    s = sub.add_parser("train", help="train one network on a whole dataset")
    _experiment_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _experiment_flags(s)
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("crossval", help="subject-disjoint k-fold cross-validation")
    _experiment_flags(s)
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("crossdataset", help="train on one dataset, test on another")
    _experiment_flags(s)
    s.set_defaults(func=cmd_crossdataset)

    s = sub.add_parser("gradcheck", help="finite-difference gradient check")
    s.add_argument("--descriptor", default="all",
                   help="all | default-binary | default-3class | small-binary | small-3class")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    s.add_argument("--sample", type=int, default=6, help="entries checked per tensor for large networks")
    s.add_argument("--out")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic dataset directory")
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="JSON file with SynthSpec fields")
    s.add_argument("--subjects", dest="n_subjects", type=int)
    s.add_argument("--frames", dest="frames_per_subject", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--magnitude", type=float)
    s.add_argument("--unknown-rate", type=float)
    s.add_argument("--unknown-intensity", type=float, help="activation applied to AUs labelled Unknown (default 0.5)")
    s.add_argument("--rates", help="bp4d | bp4d+ (default: 50%% for every AU)")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * args.verbose, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except AU3DError as exc:
        print(f"au3d: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"au3d: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
