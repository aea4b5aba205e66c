"""Command-line entry point: ``tricam {gen,train,eval,clickfilter}``.

Diagnostics go to stderr, data to files under ``--out``, and one summary line
to stdout.  Every run writes ``run_manifest.json`` (resolved config, seed,
paths, sha256 of each artifact, timing) next to its outputs.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import clickcalib as cc
from . import harness as hs
from .dataset import DatasetFormatError, EmptyDatasetError, gen_dataset, load_dataset, sha256_file
from .geometry import Rig, ScreenModel
from .network import CheckpointError, DivergedError, load_checkpoint, save_checkpoint
from .synthgen import SceneConfig

log = logging.getLogger("tricam")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_FAIL):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------------------
# io helpers


def read_json_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}", EXIT_USAGE) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_USAGE) from None
    if not isinstance(data, dict):
        raise CliError(f"config {path} must be a JSON object", EXIT_USAGE)
    return data


def atomic_write_text(path: Path, text: str) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return atomic_write_text(path, buf.getvalue())


def fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def input_hashes(inputs: dict) -> dict:
    """sha256 of each input file; a dataset directory is hashed by its record file."""
    out = {}
    for k, v in inputs.items():
        if v is None:
            continue
        p = Path(v)
        if p.is_dir() and (p / "samples.bin").is_file():
            p = p / "samples.bin"
        if p.is_file():
            out[k] = sha256_file(p)
    return out


def write_manifest(out_dir: Path, subcommand: str, config: dict, seed, inputs: dict,
                   artifacts: list[Path], started: float, metrics: dict | None = None) -> Path:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "input_sha256": input_hashes(inputs),
        "metrics": metrics or {},
        "outputs": {"out": str(out_dir)},
        "artifacts": {str(p.relative_to(out_dir)): sha256_file(p) for p in sorted(artifacts)},
        "timing_s": round(time.time() - started, 3),
    }
    return atomic_write_text(out_dir / "run_manifest.json",
                             json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"{what} must be a comma-separated list of numbers", EXIT_USAGE) from None


def rigs_match(a: Rig, b: Rig, tol: float = 1e-9) -> bool:
    if a.screen != b.screen or len(a.cameras) != len(b.cameras):
        return False
    for ca, cb in zip(a.cameras, b.cameras):
        if (ca.res_w, ca.res_h) != (cb.res_w, cb.res_h):
            return False
        va = np.concatenate([ca.position, ca.orientation.ravel(), [ca.focal_px], ca.principal_point])
        vb = np.concatenate([cb.position, cb.orientation.ravel(), [cb.focal_px], cb.principal_point])
        if not np.allclose(va, vb, rtol=0, atol=tol):
            return False
    return True


def _load_dataset(path):
    try:
        ds = load_dataset(path)
    except (DatasetFormatError, OSError) as exc:
        raise CliError(f"bad dataset: {exc}") from None
    if ds.config is None:
        raise CliError(f"bad dataset: {path} carries no scene config")
    return ds


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> str:
    started = time.time()
    raw = read_json_config(args.config)
    try:
        cfg = SceneConfig.from_dict(raw)
    except (TypeError, ValueError, KeyError) as exc:
        raise CliError(f"bad scene config: {exc}", EXIT_USAGE) from None
    if args.n is None or args.n < 1:
        raise CliError("--n must be a positive integer", EXIT_USAGE)
    out = Path(args.out)
    try:
        gen_dataset(cfg, args.n, args.seed, out)
    except EmptyDatasetError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    write_manifest(out, "gen", cfg.to_dict(), args.seed, {"config": args.config},
                   [out / "samples.bin", out / "manifest.json"], started, {"count": args.n})
    return f"gen: wrote {args.n} samples to {out}"


def _train_config(args) -> hs.TrainRunConfig:
    raw = read_json_config(args.config)
    try:
        cfg = hs.TrainRunConfig.from_dict(raw)
        if args.epochs is not None:
            cfg = replace(cfg, epochs=args.epochs)
        return replace(cfg, seed=args.seed)
    except (TypeError, ValueError, KeyError) as exc:
        raise CliError(f"bad run config: {exc}", EXIT_USAGE) from None


def cmd_train(args) -> str:
    started = time.time()
    cfg = _train_config(args)
    ds = _load_dataset(args.dataset)
    try:
        train, val, _ = hs.split_dataset(ds, hs.SplitSpec(seed=args.seed))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    try:
        res = hs.train_model(train, val, cfg)
    except DivergedError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"rig": ds.config.rig.to_dict(), "scene": ds.config.to_dict(), "train": cfg.to_dict(),
            "best_epoch": res.best_epoch, "dataset_sha256": sha256_file(Path(args.dataset) / "samples.bin")}
    ckpt = save_checkpoint(res.model, out / "model.ckpt", meta)
    curves = write_csv(out / "curves.csv", ["epoch", "train_joint", "train_main", "val_cm"],
                       [[c["epoch"], fmt(c["train_joint"]), fmt(c["train_main"]), fmt(c["val_cm"])]
                        for c in res.curves])
    best = res.curves[res.best_epoch]["val_cm"]
    write_manifest(out, "train", cfg.to_dict(), args.seed, {"dataset": args.dataset},
                   [ckpt, curves], started, {"best_epoch": res.best_epoch, "val_cm": best})
    return f"train: best epoch {res.best_epoch}, val error {best:.4f} cm -> {ckpt}"


def cmd_eval(args) -> str:
    started = time.time()
    try:
        model, meta = load_checkpoint(args.model)
    except (CheckpointError, OSError) as exc:
        raise CliError(f"bad checkpoint: {exc}") from None
    ds = _load_dataset(args.dataset)
    if "rig" not in meta or not rigs_match(Rig.from_dict(meta["rig"]), ds.config.rig):
        raise CliError("config mismatch: checkpoint rig differs from dataset rig")
    try:
        _, _, test = hs.split_dataset(ds, hs.SplitSpec(seed=args.seed))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    screen: ScreenModel = ds.config.screen
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    rep = hs.evaluate(model, test, screen, heatmap_bin=args.heatmap_bin)
    artifacts.append(write_csv(out / "summary.csv", ["n", "mean_cm", "median_cm"],
                               [[len(test), fmt(rep.mean_cm), fmt(rep.median_cm)]]))
    resolved = {"heatmap_bin": args.heatmap_bin, "angles": None, "ablate": args.ablate,
                "mix_pct": None}

    if rep.heatmap is not None:
        g = rep.heatmap
        rows = [[r, c, int(g.counts[r, c]), fmt(g.mean_cm[r, c])]
                for r in range(g.counts.shape[0]) for c in range(g.counts.shape[1])]
        artifacts.append(write_csv(out / "heatmap.csv", ["row", "col", "count", "mean_cm"], rows))
        g.to_pgm(out / "heatmap.pgm")
        artifacts.append(out / "heatmap.pgm")
    if args.angles:
        angles = parse_floats(args.angles, "--angles")
        resolved["angles"] = angles
        sweep = hs.angle_sweep(model, hs.angle_scenarios(angles), ds.config,
                               n_per_angle=args.n or 200, seed=args.seed)
        artifacts.append(write_csv(out / "angles.csv", ["theta_deg", "dx_cm", "mean_cm"],
                                   [[fmt(sc.theta_deg), fmt(sc.dx_cm), fmt(sweep[sc.theta_deg])]
                                    for sc in hs.angle_scenarios(angles)]))
    train_cfg = hs.TrainRunConfig.from_dict(meta["train"]) if "train" in meta else hs.TrainRunConfig()
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    if args.ablate:
        seeds = [args.seed, args.seed + 1, args.seed + 2]
        table = hs.ablation_suite(ds, train_cfg, seeds, hs.SplitSpec(seed=args.seed))
        artifacts.append(write_csv(
            out / "ablation.csv", ["variant", "median_cm", "delta", *[f"seed_{s}" for s in seeds]],
            [[name, fmt(table["median"][name]), fmt(table["delta"][name]),
              *[fmt(e) for e in table["per_seed"][name]]] for name in table["median"]]))
    if args.mix_pct:
        pcts = parse_floats(args.mix_pct, "--mix-pct")
        resolved["mix_pct"] = pcts
        implicit = hs.make_implicit_set(ds.config, len(ds), args.seed + 1)
        mix = hs.mix_experiment(ds, implicit, pcts, replace(train_cfg, seed=args.seed),
                                hs.SplitSpec(seed=args.seed))
        artifacts.append(write_csv(out / "mix.csv", ["implicit_pct", "mean_cm"],
                                   [[fmt(p), fmt(e)] for p, e in mix.items()]))
    write_manifest(out, "eval", resolved, args.seed,
                   {"model": args.model, "dataset": args.dataset}, artifacts, started,
                   {"n_test": len(test), "mean_cm": rep.mean_cm, "median_cm": rep.median_cm})
    return f"eval: mean error {rep.mean_cm:.4f} cm over {len(test)} test samples"


def cmd_clickfilter(args) -> str:
    started = time.time()
    try:
        criteria = cc.FilterCriteria.from_dict(read_json_config(args.criteria))
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad criteria: {exc}", EXIT_USAGE) from None
    try:
        events = cc.read_log(args.log)
        cc.check_sorted(events)
        gaze = cc.read_gaze(args.gaze) if args.gaze else None
        report = cc.replay(events, criteria, ScreenModel(), gaze)
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}") from None
    except (cc.LogFormatError, cc.UnsortedLogError, cc.EmptyGazeStreamError) as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = [
        atomic_write_text(out / "stages.csv", report.stage_table()),
        atomic_write_text(out / "contexts.csv", report.context_table()),
        write_csv(out / "samples.csv", ["capture_t", "cursor_x", "cursor_y", "opportunity", "phase"],
                  [[repr(s.capture_t), repr(s.cursor[0]), repr(s.cursor[1]), s.opportunity_id, s.phase]
                   for s in report.samples]),
        atomic_write_text(out / "summary.json",
                          json.dumps(report.summary(), indent=2, sort_keys=True) + "\n"),
    ]
    write_manifest(out, "clickfilter", criteria.to_dict(), None,
                   {"log": args.log, "criteria": args.criteria, "gaze": args.gaze}, artifacts, started,
                   {"stage_counts": report.stage_counts, "n_samples": report.n_samples})
    c = report.stage_counts
    return f"clickfilter: stages {c['raw']},{c['A']},{c['B']},{c['C']}; {report.n_samples} samples"


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tricam", description="Three-camera gaze tracking toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug diagnostics on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config", help="scene config JSON (defaults when omitted)")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("dataset")
    t.add_argument("--config", help="run config JSON")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("model")
    e.add_argument("dataset")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--angles", help="comma-separated gaze angles in degrees")
    e.add_argument("--n", type=int, help="samples per angle for --angles")
    e.add_argument("--heatmap-bin", type=int, help="heatmap bin size in px")
    e.add_argument("--ablate", action="store_true", help="run the ablation suite")
    e.add_argument("--mix-pct", help="comma-separated implicit-label percentages")
    e.add_argument("--epochs", type=int, help="epochs for --ablate/--mix-pct retraining")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("clickfilter", help="replay a usage log through the click filters")
    c.add_argument("log")
    c.add_argument("--criteria", help="filter criteria JSON")
    c.add_argument("--gaze", help="gaze stream file (t,x,y); default: gaze events in the log")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_clickfilter)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="tricam: %(message)s")
    try:
        line = args.func(args)
    except CliError as exc:
        print(f"tricam {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
