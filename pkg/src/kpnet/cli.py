"""``kpnet`` command-line interface.

Settings are layered: built-in defaults, then a JSON ``--config`` file, then
flags.  Every command prints a human-readable report on stdout; pass
``--format json`` for a single JSON document instead.  With ``--out`` the
JSON report is also written next to the other outputs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Failures print one JSON line on stderr:
``{"error": "<kind>", "message": "...", "exit_code": N}``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from collections import Counter
from pathlib import Path
from typing import Optional

from .checkpoint import TrainLog, load_checkpoint
from .data import Dataset, SubsetSpec, class_balanced_subset, load_split, save_manifest, train_val_split
from .errors import ConfigError, DataError, KPNError, NumericError
from .graph import PRESET_NAMES, Architecture, count_complexity, load_arch, preset, small_cnn
from .graph.complexity import conv_receptive_fields
from .projection import MASK_SOURCES
from .routes import PRUNE_DIRECTIONS, enumerate_routes
from .trainer import (
    TrainConfig,
    export_student,
    load_kpn,
    load_network,
    save_kpn,
    save_network,
    train_kpn,
    train_plain,
    train_teacher,
)

log = logging.getLogger("kpnet")

PATH_KEYS = {
    "data": None,
    "teacher": None,
    "arch": None,
    "checkpoint": None,
    "out": None,
    "subset_size": None,
    "repeats": 8,
    "input_shape": [1, 28, 28],
    "split": "test",
    "baseline": False,
}
TEACHER_ARCH = "small-cnn"


# settings


def defaults() -> dict:
    return {**PATH_KEYS, **TrainConfig().to_dict()}


def load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(doc) - set(defaults())
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return doc


FLAG_KEYS = {
    "data": "data", "teacher": "teacher", "arch": "arch", "checkpoint": "checkpoint", "out": "out",
    "seed": "seed", "subset_size": "subset_size", "beta": "beta", "eta": "eta", "lambda0": "lambda0",
    "prune_period": "prune_period", "mask_source": "mask_source", "prune_direction": "prune_direction",
    "iterations": "total_iterations", "batch_size": "batch_size", "lr_schedule": "lr_schedule",
    "repeats": "repeats", "split": "split", "input_shape": "input_shape", "baseline": "baseline",
}


def settings_from(args: argparse.Namespace) -> dict:
    merged = defaults()
    if args.config:
        merged.update(load_config_file(args.config))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None and value is not False:
            merged[key] = value
    return merged


def train_config(settings: dict) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    return TrainConfig.from_dict({k: v for k, v in settings.items() if k in fields})


def require(settings: dict, *keys: str) -> None:
    missing = [k for k in keys if settings.get(k) in (None, "")]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


# resolution helpers


def resolve_arch(spec: str, input_shape=(1, 28, 28), num_classes: int = 10) -> Architecture:
    """A preset name, ``small-cnn``, or a path to an architecture JSON file."""
    shape = tuple(input_shape)
    if spec in PRESET_NAMES:
        return preset(spec, input_shape=shape, num_classes=num_classes)
    if spec == TEACHER_ARCH:
        return small_cnn(input_shape=shape, num_classes=num_classes)
    path = Path(spec)
    if path.exists():
        return load_arch(path)
    raise ConfigError(f"unknown architecture {spec!r}: not a preset ({', '.join(PRESET_NAMES)}, {TEACHER_ARCH}) "
                      "and no such file")


def resolve_teacher_arch(spec: str, input_shape) -> Architecture:
    """Teacher given either as a checkpoint or as an architecture."""
    path = Path(spec)
    if path.exists() and path.read_bytes()[:4] == b"KPNC":
        meta, _ = load_checkpoint(path)
        return Architecture.from_dict(meta["arch"])
    return resolve_arch(spec, input_shape)


def load_data(settings: dict, split: str) -> Dataset:
    require(settings, "data")
    return load_split(settings["data"], split)


def training_subset(train: Dataset, settings: dict, seed: int) -> Dataset:
    n = settings.get("subset_size")
    return class_balanced_subset(train, SubsetSpec(int(n), seed)) if n else train


def try_test(settings: dict) -> Optional[Dataset]:
    try:
        return load_data(settings, "test")
    except DataError:
        return None


def out_dir(settings: dict) -> Optional[Path]:
    if not settings.get("out"):
        return None
    path = Path(settings["out"])
    path.mkdir(parents=True, exist_ok=True)
    return path


# reporting


def emit(report: dict, text: str, fmt: str, out: Optional[Path] = None, name: str = "report.json") -> None:
    if out is not None:
        (out / name).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if fmt == "json":
        print(json.dumps(report, sort_keys=True))
    else:
        print(text)


def table(rows: list[list], headers: list[str]) -> str:
    cells = [headers] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# commands


def cmd_complexity(args, settings) -> int:
    require(settings, "arch")
    arch = resolve_arch(settings["arch"], settings["input_shape"])
    rep = count_complexity(arch)
    report = {"arch": arch.name, "conv_layers": arch.depth(), **rep.to_dict()}
    rows = [[n, m, p] for n, m, p in zip(rep.names, rep.multiply_adds, rep.params)]
    text = table(rows, ["layer", "multiply_adds", "params"])
    text += f"\n{arch.name}: {arch.depth()} conv layers, {rep.total_params} params, {rep.total_multiply_adds} multiply-adds"
    emit(report, text, args.format, out_dir(settings), "complexity.json")
    return 0


def cmd_routes(args, settings) -> int:
    require(settings, "teacher", "arch")
    teacher = resolve_teacher_arch(settings["teacher"], settings["input_shape"])
    student = resolve_arch(settings["arch"], settings["input_shape"])
    routes = enumerate_routes(teacher, student, settings["beta"])
    report = {
        "teacher": teacher.name,
        "student": student.name,
        "beta": settings["beta"],
        "teacher_receptive_fields": {str(k): v for k, v in conv_receptive_fields(teacher).items()},
        "student_receptive_fields": {str(k): v for k, v in conv_receptive_fields(student).items()},
        "routes": [r.to_dict() | {"label": r.label} for r in routes],
    }
    rows = [[r.label, r.knowledge, r.injection, r.teacher_rf, r.student_rf, "x".join(map(str, r.spatial))]
            for r in routes]
    text = table(rows, ["route", "i", "j", "S_i", "S_j", "spatial"])
    text += f"\n{len(routes)} admissible route(s) between {teacher.name} and {student.name} at beta={settings['beta']}"
    emit(report, text, args.format, out_dir(settings), "routes.json")
    return 0


def cmd_teacher_train(args, settings) -> int:
    cfg = train_config(settings)
    train = training_subset(load_data(settings, "train"), settings, cfg.seed)
    test = try_test(settings)
    arch = resolve_arch(settings.get("arch") or TEACHER_ARCH, train.images.shape[1:], train.num_classes)
    out = out_dir(settings)
    started = time.perf_counter()
    tlog = TrainLog(out / "teacher_log.ndjson" if out else None)
    teacher = train_teacher(arch, train, cfg, log_to=tlog)
    report = {"arch": arch.name, "train_samples": len(train), "iterations": cfg.total_iterations,
              "final_task_loss": tlog.records[-1]["task_loss"], "checksum": teacher.checksum()}
    if test is not None:
        report["test_accuracy"] = teacher.accuracy(test.images, test.labels)
    if out:
        save_network(out / "teacher.kpnc", teacher, kind="teacher", config=cfg.to_dict())
        report["checkpoint"] = str(out / "teacher.kpnc")
    text = f"teacher {arch.name}: {cfg.total_iterations} iterations on {len(train)} samples"
    if "test_accuracy" in report:
        text += f", test accuracy {report['test_accuracy']:.4f}"
    report["elapsed_seconds"] = round(time.perf_counter() - started, 3)
    emit(report, text, args.format, out, "teacher_metrics.json")
    return 0


def _kpn_inputs(settings):
    require(settings, "teacher", "arch", "data")
    cfg = train_config(settings)
    teacher = load_network(settings["teacher"]).freeze()
    full = load_data(settings, "train")
    sub = training_subset(full, settings, cfg.seed)
    train, val = train_val_split(sub, cfg.val_fraction, cfg.seed)
    student = resolve_arch(settings["arch"], full.images.shape[1:], full.num_classes)
    return cfg, teacher, full, sub, train, val, student


def cmd_kpn_train(args, settings) -> int:
    cfg, teacher, _, sub, train, val, student_arch = _kpn_inputs(settings)
    test = try_test(settings)
    out = out_dir(settings)
    before = teacher.checksum()
    started = time.perf_counter()
    result = train_kpn(teacher, student_arch, train, val, cfg, log_to=TrainLog(out / "log.ndjson" if out else None))
    if teacher.checksum() != before:
        raise NumericError("teacher parameters changed during training")
    c = result.survivor
    report = {
        "student": student_arch.name,
        "teacher": teacher.arch.name,
        "routes": [r.label for r in result.routes],
        "survivor": c.route.to_dict() | {"label": c.route.label},
        "prune_events": [e.to_dict() for e in result.events],
        "revocations": result.revocations,
        "train_samples": len(train),
        "val_samples": len(val),
        "config": cfg.to_dict(),
    }
    if test is not None:
        report["test_accuracy"] = c.student.accuracy(test.images, test.labels)
    if settings.get("baseline"):
        plain = train_plain(student_arch, train, cfg)
        report["baseline_test_accuracy"] = plain.accuracy(test.images, test.labels) if test is not None else None
    if out:
        save_kpn(out / "kpn.kpnc", c, teacher.arch, cfg, cfg.total_iterations, result.events)
        save_manifest(out / "subset.json", sub, seed=cfg.seed, subset_size=settings.get("subset_size"))
        report["checkpoint"] = str(out / "kpn.kpnc")
    lines = [f"routes: {', '.join(report['routes'])}"]
    lines += [f"round {e.round} (iter {e.iteration}): pruned {e.pruned}  "
              + ", ".join(f"{k}={v:.4f}" for k, v in e.losses.items()) for e in result.events]
    lines.append(f"survivor {c.route.label}, {result.revocations} init-stage revocation(s)")
    if "test_accuracy" in report:
        lines.append(f"KPN student test accuracy {report['test_accuracy']:.4f}")
    if report.get("baseline_test_accuracy") is not None:
        lines.append(f"plain student test accuracy {report['baseline_test_accuracy']:.4f}")
    report["elapsed_seconds"] = round(time.perf_counter() - started, 3)
    emit(report, "\n".join(lines), args.format, out, "metrics.json")
    return 0


def cmd_eval(args, settings) -> int:
    require(settings, "checkpoint", "data")
    net = load_network(settings["checkpoint"])
    d = load_data(settings, settings["split"])
    if d.images.shape[1:] != tuple(net.arch.input_shape):
        raise DataError(f"dataset images are {d.images.shape[1:]}, network expects {tuple(net.arch.input_shape)}")
    acc = net.accuracy(d.images, d.labels)
    report = {"checkpoint": str(settings["checkpoint"]), "split": settings["split"], "samples": len(d),
              "accuracy": acc}
    emit(report, f"{net.arch.name} on {settings['split']} ({len(d)} samples): accuracy {acc:.4f}", args.format)
    return 0


def cmd_export(args, settings) -> int:
    require(settings, "checkpoint", "out")
    c, meta = load_kpn(settings["checkpoint"])
    net = export_student(c)
    out = Path(settings["out"])
    target = out if out.suffix else out / "student.kpnc"
    target.parent.mkdir(parents=True, exist_ok=True)
    save_network(target, net, kind="student", route=meta["route"])
    rep = count_complexity(net.arch)
    report = {"exported": str(target), "arch": net.arch.name, "params": rep.total_params,
              "multiply_adds": rep.total_multiply_adds, "checksum": net.checksum()}
    emit(report, f"wrote standalone {net.arch.name} student to {target} "
                 f"({rep.total_params} params, {rep.total_multiply_adds} multiply-adds)", args.format)
    return 0


def cmd_prune_stats(args, settings) -> int:
    cfg, teacher, full, _, _, _, student_arch = _kpn_inputs(settings)
    repeats = int(settings["repeats"])
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    tally: Counter = Counter()
    runs = []
    for r in range(repeats):
        seed = cfg.seed + r
        run_cfg = dataclasses.replace(cfg, seed=seed)
        train, val = train_val_split(training_subset(full, settings, seed), cfg.val_fraction, seed)
        result = train_kpn(teacher, student_arch, train, val, run_cfg, race_only=True)
        tally[result.survivor.route.label] += 1
        runs.append({"seed": seed, "survivor": result.survivor.route.label,
                     "events": [e.to_dict() for e in result.events]})
    report = {"repeats": repeats, "tally": dict(sorted(tally.items())), "runs": runs}
    text = table([[k, v] for k, v in sorted(tally.items())], ["route", "survived"])
    emit(report, text, args.format, out_dir(settings), "prune_stats.json")
    return 0


COMMANDS = {
    "teacher-train": (cmd_teacher_train, "train and freeze a teacher network"),
    "routes": (cmd_routes, "list admissible projection routes"),
    "complexity": (cmd_complexity, "per-layer and total parameter / multiply-add counts"),
    "kpn-train": (cmd_kpn_train, "route race plus two-stage training of a student"),
    "eval": (cmd_eval, "accuracy of a checkpoint on a dataset split"),
    "export": (cmd_export, "write the trained student as a standalone network"),
    "prune-stats": (cmd_prune_stats, "repeat the route race and tally survivors"),
}


def _json_list(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not valid JSON: {exc}") from None


def _shape(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected C,H,W, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--data", help="directory holding train-*/t10k-* IDX files")
    common.add_argument("--teacher", help="teacher checkpoint (or architecture for `routes`)")
    common.add_argument("--arch", help=f"preset ({', '.join(PRESET_NAMES)}), {TEACHER_ARCH}, or architecture JSON")
    common.add_argument("--checkpoint", help="checkpoint to evaluate or export")
    common.add_argument("--out", help="output directory (or file for `export`)")
    common.add_argument("--seed", type=int)
    common.add_argument("--subset-size", type=int)
    common.add_argument("--beta", type=float)
    common.add_argument("--eta", type=float)
    common.add_argument("--lambda0", type=float)
    common.add_argument("--prune-period", type=int)
    common.add_argument("--mask-source", choices=MASK_SOURCES)
    common.add_argument("--prune-direction", choices=PRUNE_DIRECTIONS)
    common.add_argument("--iterations", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr-schedule", type=_json_list, help='JSON, e.g. "[[0,0.1],[0.5,0.01]]"')
    common.add_argument("--repeats", type=int, help="races to run for prune-stats")
    common.add_argument("--split", help="dataset split for eval (train or test)")
    common.add_argument("--input-shape", type=_shape, help="C,H,W for commands without data")
    common.add_argument("--baseline", action="store_true", help="kpn-train: also train a plain student")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--print-defaults", action="store_true", default=argparse.SUPPRESS,
                        help="print every default setting as JSON")

    parser = argparse.ArgumentParser(prog="kpnet", description="Knowledge projection training toolkit")
    parser.add_argument("--print-defaults", action="store_true", help="print every default setting as JSON")
    sub = parser.add_subparsers(dest="command")
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


EXIT_CODES = ((ConfigError, 2), (DataError, 3), (NumericError, 4))


def exit_code_for(exc: BaseException) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(exc, kind):
            return code
    if isinstance(exc, (FileNotFoundError, IsADirectoryError)):
        return 3
    return 2


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(json.dumps(defaults(), indent=2, sort_keys=True))
        return 0
    if not args.command:
        parser.print_help()
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = settings_from(args)
        return COMMANDS[args.command][0](args, settings)
    except (KPNError, ValueError, KeyError, OSError) as exc:
        code = exit_code_for(exc)
        kind = type(exc).__name__
        print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
