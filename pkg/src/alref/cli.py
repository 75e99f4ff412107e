"""Command-line entry point wiring the modules into reproducible workflows.

Subcommands: gen-data, simulate-coarse, run, report. Every subcommand
honors --seed (default 0, never wall-clock entropy). Config precedence for
run: CLI flags > run manifest > built-in defaults. Exit codes: 0 success,
1 usage, 2 IO, 3 internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, loop, report
from .coarse import CoarseSimConfig, noise_rate, simulate_coarse
from .predictor import PredictorConfig
from .raster import LabelRaster, MultiBandRaster, read_bras, write_bras
from .strategies import StrategyKind
from .synthdata import SceneSpec, generate_pool

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INTERNAL = 3

POOL_MANIFEST_FORMAT = "alref-pool-v1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="alref", description=__doc__)
    p.add_argument("--version", action="version", version=f"alref {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic image pool", parents=[])
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--images", type=int, default=6)
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--height", type=int, default=256)
    g.add_argument("--bands", type=int, default=5)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--blob-count", type=int, default=5)
    g.add_argument("--noise-sigma", type=float, default=0.05)
    g.add_argument("--small-object-rate", type=float, default=0.02)

    c = sub.add_parser("simulate-coarse", help="simulate coarse labels for a pool")
    c.add_argument("--manifest", required=True, help="pool manifest from gen-data")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--min-filter", type=int, default=2)
    c.add_argument("--max-filter", type=int, default=32)
    c.add_argument("--rounds", type=int, default=1)

    r = sub.add_parser("run", help="run an active-learning experiment")
    r.add_argument("--manifest", help="pool manifest from gen-data")
    r.add_argument("--run-manifest", help="rerun from a previous run manifest")
    r.add_argument("--out", help="output directory (default: current)")
    r.add_argument("--strategy", choices=[s.value for s in StrategyKind])
    r.add_argument("--seed", type=int)
    r.add_argument("--cycles", type=int)
    r.add_argument("--repeats", type=int)
    r.add_argument("--n-candidates", type=int)
    r.add_argument("--k-select", type=int)
    r.add_argument("--candidate-size", type=int)
    r.add_argument("--jobs", type=int, help="parallel folds (env ALREF_JOBS)")
    r.add_argument("--epochs", type=int)
    r.add_argument("--chips-per-epoch", type=int)
    r.add_argument("--chip-size", type=int)
    r.add_argument("--window", type=int)
    r.add_argument("--learning-rate", type=float)
    r.add_argument("--min-filter", type=int)
    r.add_argument("--max-filter", type=int)
    r.add_argument("--predictor", choices=["baseline", "sidecar"])
    r.add_argument("--sidecar-cmd")

    t = sub.add_parser("report", help="aggregate result CSVs into plots")
    t.add_argument("csvs", nargs="+", help="result CSV paths or glob patterns")
    t.add_argument("--out", default=".", help="output directory")
    return p


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.images < 2:
        raise UsageError("--images must be >= 2 so leave-one-out is possible")
    spec = SceneSpec(seed=args.seed, width=args.width, height=args.height,
                     bands=args.bands, num_classes=args.classes,
                     blob_count=args.blob_count, noise_sigma=args.noise_sigma,
                     small_object_rate=args.small_object_rate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = generate_pool(args.seed, args.images, spec)
    entries = []
    for i, (img, lab) in enumerate(pairs):
        img_name, lab_name = f"img_{i:03d}.bras", f"lab_{i:03d}.bras"
        write_bras(out / img_name, img)
        write_bras(out / lab_name, lab)
        entries.append({"image": img_name, "labels": lab_name})
    manifest = {
        "format": POOL_MANIFEST_FORMAT,
        "seed": args.seed,
        "images": entries,
        "width": args.width,
        "height": args.height,
        "bands": args.bands,
        "num_classes": args.classes,
        "blob_count": args.blob_count,
        "noise_sigma": args.noise_sigma,
        "small_object_rate": args.small_object_rate,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(entries)} image/label pairs and manifest.json to {out}")
    return EXIT_OK


def load_pool_manifest(path) -> tuple[loop.Pool, dict]:
    path = Path(path)
    doc = _read_json(path)
    if doc.get("format") != POOL_MANIFEST_FORMAT:
        raise IOError(f"{path} is not a pool manifest")
    images, labels = [], []
    for entry in doc["images"]:
        img = read_bras(path.parent / entry["image"])
        lab = read_bras(path.parent / entry["labels"], num_classes=doc["num_classes"])
        if not isinstance(img, MultiBandRaster) or not isinstance(lab, LabelRaster):
            raise IOError(f"manifest entry {entry} does not point at image/label rasters")
        images.append(img)
        labels.append(lab)
    return loop.Pool(images, labels), doc


# ---------------------------------------------------------------------------
# simulate-coarse
# ---------------------------------------------------------------------------


def cmd_simulate_coarse(args) -> int:
    pool, doc = load_pool_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_entries = []
    for i, fine in enumerate(pool.fine_labels):
        cfg = CoarseSimConfig(seed=loop.derive_seed(args.seed, i),
                              min_filter=args.min_filter, max_filter=args.max_filter,
                              rounds=args.rounds)
        coarse_labels, steps = simulate_coarse(fine, cfg)
        name = f"coarse_{i:03d}.bras"
        write_bras(out / name, coarse_labels)
        log_entries.append({
            "labels": name,
            "source": doc["images"][i]["labels"],
            "steps": [[s.class_id, s.fw, s.fh] for s in steps],
            "noise_rate": noise_rate(coarse_labels, fine),
        })
    log = {"seed": args.seed, "min_filter": args.min_filter,
           "max_filter": args.max_filter, "rounds": args.rounds,
           "images": log_entries}
    _write_json(out / "coarse_log.json", log)
    rates = ", ".join(f"{e['noise_rate']:.3f}" for e in log_entries)
    print(f"wrote {len(log_entries)} coarse label rasters to {out} (noise rates {rates})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

_RUN_DEFAULTS = {
    "strategy": "us",
    "seed": 0,
    "cycles": 30,
    "repeats": 5,
    "n_candidates": 128,
    "k_select": 16,
    "candidate_size": None,
    "jobs": 1,
    "predictor_backend": "baseline",
    "sidecar_cmd": None,
    "predictor": PredictorConfig().to_dict(),
    "coarse": {"min_filter": 2, "max_filter": 32, "rounds": 1},
}

# CLI flag -> (config section, key)
_RUN_FLAGS = {
    "strategy": (None, "strategy"),
    "seed": (None, "seed"),
    "cycles": (None, "cycles"),
    "repeats": (None, "repeats"),
    "n_candidates": (None, "n_candidates"),
    "k_select": (None, "k_select"),
    "candidate_size": (None, "candidate_size"),
    "jobs": (None, "jobs"),
    "predictor": (None, "predictor_backend"),
    "sidecar_cmd": (None, "sidecar_cmd"),
    "epochs": ("predictor", "epochs"),
    "chips_per_epoch": ("predictor", "chips_per_epoch"),
    "chip_size": ("predictor", "chip_size"),
    "window": ("predictor", "window"),
    "learning_rate": ("predictor", "learning_rate"),
    "min_filter": ("coarse", "min_filter"),
    "max_filter": ("coarse", "max_filter"),
}


def _resolve_run_config(args) -> tuple[dict, str]:
    """Merge defaults < run manifest < explicit CLI flags; returns the
    resolved config dict and the data manifest path."""
    resolved = json.loads(json.dumps(_RUN_DEFAULTS))  # deep copy
    data_manifest = args.manifest
    if args.run_manifest:
        doc = _read_json(args.run_manifest)
        prior = doc.get("config", {})
        for key, value in prior.items():
            if key in ("predictor", "coarse"):
                resolved[key].update(value)
            elif key in resolved:
                resolved[key] = value
        if data_manifest is None:
            data_manifest = doc.get("data_manifest")
    for flag, (section, key) in _RUN_FLAGS.items():
        value = getattr(args, flag)
        if value is None:
            continue
        if section is None:
            resolved[key] = value
        else:
            resolved[section][key] = value
    if args.jobs is None and "ALREF_JOBS" in os.environ and not args.run_manifest:
        try:
            resolved["jobs"] = int(os.environ["ALREF_JOBS"])
        except ValueError:
            raise UsageError("ALREF_JOBS must be an integer")
    if data_manifest is None:
        raise UsageError("run needs --manifest (or --run-manifest pointing at one)")
    return resolved, data_manifest


def _experiment_config(resolved: dict) -> loop.ExperimentConfig:
    try:
        strategy = StrategyKind(resolved["strategy"])
    except ValueError:
        raise UsageError(f"--strategy must be one of rs|cs|us, got {resolved['strategy']!r}")
    try:
        pcfg = PredictorConfig.from_dict(resolved["predictor"])
        ccfg = CoarseSimConfig(seed=0, **resolved["coarse"])
        return loop.ExperimentConfig(
            strategy=strategy,
            n_candidates=resolved["n_candidates"],
            k_select=resolved["k_select"],
            cycles=resolved["cycles"],
            repeats=resolved["repeats"],
            candidate_size=resolved["candidate_size"],
            predictor=pcfg,
            coarse=ccfg,
            seed=resolved["seed"],
            predictor_backend=resolved["predictor_backend"],
            sidecar_cmd=resolved["sidecar_cmd"],
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))


def cmd_run(args) -> int:
    resolved, data_manifest = _resolve_run_config(args)
    config = _experiment_config(resolved)
    pool, _ = load_pool_manifest(data_manifest)
    records = loop.run_experiment(config, pool, jobs=max(1, int(resolved["jobs"])))

    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"results_{config.strategy.value}.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(loop.records_to_csv(records))
    manifest = {
        "tool_version": __version__,
        "data_manifest": str(data_manifest),
        "data_manifest_sha256": _sha256_file(data_manifest),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": resolved,
    }
    _write_json(out / f"run_manifest_{config.strategy.value}.json", manifest)
    print(f"wrote {len(records)} records to {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    paths: list[str] = []
    for pattern in args.csvs:
        matched = sorted(glob.glob(pattern))
        paths.extend(matched if matched else ([pattern] if os.path.exists(pattern) else []))
    if not paths:
        raise IOError(f"no result CSVs match {args.csvs}")
    records = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            records.extend(loop.records_from_csv(fh.read()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    acc = report.aggregate(records, "accuracy")
    acq = report.aggregate(records, "acquisition_rate")
    report.render_svg(acc, "accuracy", out / "accuracy.svg")
    report.render_svg(acq, "acquisition rate", out / "acquisition.svg")
    with open(out / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write(report.summary_csv(acc, acq))
    print(f"wrote accuracy.svg, acquisition.svg and summary.csv to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise IOError(f"no such file: {path}")
    except json.JSONDecodeError as exc:
        raise IOError(f"{path} is not valid JSON: {exc}")


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "simulate-coarse": cmd_simulate_coarse,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IOError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # internal failure, keep the message terse
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
