"""Command line entry point: preprocess / synth / train / predict / evaluate.

Exit codes: 0 success, 2 usage error (argparse), 1 runtime error. Every
artifact-producing run writes run_manifest.json (command, resolved config,
seed, timestamps) into its output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import evaluate as evaluate_mod
from . import preprocess as preprocess_mod
from . import raster, synth
from .inference import BlendPlan, binarize, predict_scene
from .network import NetConfig, load_checkpoint
from .trainer import TrainConfig, train


class CliError(RuntimeError):
    pass


def write_run_manifest(out_dir: Path, command: str, config: dict, seed: int | None,
                       started: float, finished: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "started_unix": started,
        "finished_unix": finished,
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _set_override(config: dict, dotted: str, raw_value: str) -> None:
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node = config
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def build_train_config(path: str | None, overrides: list[str]) -> TrainConfig:
    config: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise CliError(f"config file not found: {p}")
        config = json.loads(p.read_text())
    for item in overrides or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_override(config, key, value)
    net = NetConfig(**config.pop("net", {}))
    try:
        return TrainConfig(net=net, **config)
    except TypeError as exc:
        raise CliError(f"bad training config: {exc}") from exc


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def _load_raw_bundle(raw_dir: Path):
    meta = json.loads((raw_dir / "meta.json").read_text())
    h, w = meta["H"], meta["W"]
    acquisitions = []
    for band_file in sorted(raw_dir.glob("s2_*.bin")):
        day = int(band_file.stem.split("_")[1])
        raw = np.fromfile(band_file, dtype="<f4").reshape(h, w, 10)
        bands = raster.normalize_s2(raw)
        mask_file = raw_dir / f"cloud_{day}.csv"
        if mask_file.exists():
            mask = raster.read_labels_csv(mask_file).astype(bool)
        else:
            mask = preprocess_mod.fallback_cloud_mask(bands)
        acquisitions.append(
            preprocess_mod.Acquisition(day_of_year=day, bands=bands, cloud_mask=mask)
        )
    s1_series = []
    for s1_file in sorted(raw_dir.glob("s1_*.bin")):
        day = int(s1_file.stem.split("_")[1])
        raw = np.fromfile(s1_file, dtype="<f4").reshape(h, w, 2)
        s1_series.append((day, raster.normalize_s1(raw)))
    dem = np.fromfile(raw_dir / "dem.bin", dtype="<f4").reshape(h, w).astype(np.float64)
    if not acquisitions:
        raise CliError(f"no s2_<day>.bin acquisitions in {raw_dir}")
    if not s1_series:
        raise CliError(f"no s1_<day>.bin acquisitions in {raw_dir}")
    acquisitions.sort(key=lambda a: a.day_of_year)
    return meta, acquisitions, s1_series, dem


def cmd_preprocess(args) -> int:
    started = time.time()
    raw_dir = Path(args.input)
    if not raw_dir.is_dir():
        raise CliError(f"input bundle not found: {raw_dir}")
    meta, acquisitions, s1_series, dem = _load_raw_bundle(raw_dir)
    cfg = preprocess_mod.PreprocessConfig(
        whittaker=preprocess_mod.WhittakerConfig(lam=args.lam),
        shadow_b8=args.shadow_b8,
        shadow_b11=args.shadow_b11,
    )
    s2, s1, _indices, _slope = preprocess_mod.preprocess_plot(
        acquisitions, s1_series, dem, cfg
    )
    out_dir = Path(args.output)
    labels = None
    if (raw_dir / "labels.csv").exists():
        labels = raster.read_labels_csv(raw_dir / "labels.csv")
    raster.save_plot_bundle(
        out_dir,
        plot_id=meta.get("plot_id", raw_dir.name),
        s2=s2,
        s1=s1,
        dem=dem,
        timestamps=raster.default_timestamps(cfg.time_steps),
        labels=labels,
        lat=meta.get("lat", 0.0),
        lon=meta.get("lon", 0.0),
    )
    write_run_manifest(
        out_dir, "preprocess",
        {"input": str(raw_dir), "lambda": args.lam,
         "shadow_b8": args.shadow_b8, "shadow_b11": args.shadow_b11},
        None, started, time.time(),
    )
    print(f"wrote plot bundle to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.time()
    out_dir = Path(args.out)
    base = synth.SynthConfig(
        cloud_gap_fraction=args.cloud_gap_fraction,
        noise_sigma=args.noise_sigma,
        height=args.size,
        width=args.size,
    )
    configs = synth.dataset_configs(args.n, args.seed, args.cover_mix, base)
    for i, cfg in enumerate(configs):
        plot = synth.generate_raw(cfg)
        stack = plot.sample.stack
        raster.save_plot_bundle(
            out_dir / f"plot_{i:04d}",
            plot_id=stack.plot_id,
            s2=stack.data[..., 0:10],
            s1=stack.data[..., 13:15],
            dem=plot.dem,
            timestamps=stack.timestamps,
            labels=plot.sample.label.values,
        )
    write_run_manifest(
        out_dir, "synth",
        {"n": args.n, "cover_mix": args.cover_mix,
         "cloud_gap_fraction": args.cloud_gap_fraction,
         "noise_sigma": args.noise_sigma, "size": args.size},
        args.seed, started, time.time(),
    )
    print(f"wrote {args.n} plot bundles to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    started = time.time()
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise CliError(f"training data directory not found: {data_dir}")
    bundles = raster.list_bundles(data_dir)
    if not bundles:
        raise CliError(f"no plot bundles under {data_dir}")
    dataset = [raster.load_plot_bundle(b) for b in bundles]
    cfg = build_train_config(args.config, args.set)
    result = train(cfg, dataset, args.seed, args.out, resume=args.resume)
    write_run_manifest(
        Path(args.out), "train",
        {"data": str(data_dir), "resume": args.resume,
         "train": dataclasses.asdict(cfg)},
        args.seed, started, time.time(),
    )
    ua = result.final_metrics.get("ua")
    pa = result.final_metrics.get("pa")
    print(
        f"trained {result.epochs_run} epochs; final checkpoint {result.checkpoint_dir}; "
        f"train ua={ua} pa={pa}"
    )
    return 0


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def _predict_one(bundle: Path, model, threshold: float, out_dir: Path) -> None:
    stack = raster.load_stack(bundle)
    grid = predict_scene(stack, model, BlendPlan())
    out_dir.mkdir(parents=True, exist_ok=True)
    probs32 = grid.probs.astype("<f4")
    probs32.tofile(out_dir / "probs.bin")
    (out_dir / "probs.json").write_text(json.dumps({
        "plot_id": stack.plot_id,
        "height": int(grid.probs.shape[0]),
        "width": int(grid.probs.shape[1]),
        "dtype": "<f4",
        "threshold": threshold,
    }, indent=2) + "\n")
    raster.write_labels_csv(out_dir / "mask.csv", binarize(grid.probs, threshold).values)


def cmd_predict(args) -> int:
    started = time.time()
    scene_dir = Path(args.scene)
    model_dir = Path(args.model)
    if not scene_dir.is_dir():
        raise CliError(f"scene bundle not found: {scene_dir}")
    if not (model_dir / "model.json").exists():
        raise CliError(f"model checkpoint not found: {model_dir}")
    model, manifest = load_checkpoint(model_dir)
    if args.threshold == "auto":
        threshold = manifest.get("threshold") or 0.5
    else:
        threshold = float(args.threshold)
    out_dir = Path(args.out)
    bundles = raster.list_bundles(scene_dir)
    if not bundles:
        raise CliError(f"no bundles under {scene_dir}")
    if len(bundles) == 1 and bundles[0] == scene_dir:
        _predict_one(scene_dir, model, threshold, out_dir)
    else:
        for bundle in bundles:
            _predict_one(bundle, model, threshold, out_dir / bundle.name)
    write_run_manifest(
        out_dir, "predict",
        {"scene": str(scene_dir), "model": str(model_dir), "threshold": threshold},
        None, started, time.time(),
    )
    print(f"wrote predictions to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _load_prediction_mask(pred_dir: Path, threshold: float) -> np.ndarray:
    mask_path = pred_dir / "mask.csv"
    if mask_path.exists():
        return raster.read_labels_csv(mask_path)
    probs_path = pred_dir / "probs.bin"
    header_path = pred_dir / "probs.json"
    if probs_path.exists() and header_path.exists():
        header = json.loads(header_path.read_text())
        probs = np.fromfile(probs_path, dtype="<f4").reshape(header["height"], header["width"])
        return binarize(probs.astype(np.float64), threshold).values
    raise CliError(f"no mask.csv or probs.bin under {pred_dir}")


def cmd_evaluate(args) -> int:
    started = time.time()
    labels_dir = Path(args.labels)
    pred_dir = Path(args.pred)
    if not labels_dir.is_dir():
        raise CliError(f"labels directory not found: {labels_dir}")
    if not pred_dir.is_dir():
        raise CliError(f"predictions directory not found: {pred_dir}")
    bundles = raster.list_bundles(labels_dir)
    if not bundles:
        raise CliError(f"no labeled bundles under {labels_dir}")
    labels, preds = [], []
    for bundle in bundles:
        label_path = bundle / "labels.csv"
        if not label_path.exists():
            raise CliError(f"bundle {bundle} has no labels.csv")
        labels.append(raster.read_labels_csv(label_path))
        candidate = pred_dir / bundle.name
        if not candidate.is_dir():
            candidate = pred_dir
        preds.append(_load_prediction_mask(candidate, args.threshold))
    report = evaluate_mod.dataset_report(labels, preds, seed=args.seed)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=2) + "\n")
    write_run_manifest(
        out_path.parent, "evaluate",
        {"pred": str(pred_dir), "labels": str(labels_dir), "threshold": args.threshold},
        args.seed, started, time.time(),
    )
    print(f"wrote report to {out_path}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=0,
                        help="torch CPU threads (0 = library default)")

    parser = argparse.ArgumentParser(
        prog="toftrees",
        description="Tree detection in multi-temporal satellite imagery",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common],
                       help="raw acquisitions -> clean 24-step plot bundle")
    p.add_argument("--input", required=True, help="raw bundle directory")
    p.add_argument("--output", required=True, help="output plot bundle directory")
    p.add_argument("--lambda", dest="lam", type=float, default=800.0,
                   help="smoothing weight")
    p.add_argument("--shadow-b8", type=float, default=preprocess_mod.SHADOW_B8_THRESHOLD)
    p.add_argument("--shadow-b11", type=float, default=preprocess_mod.SHADOW_B11_THRESHOLD)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic plot bundles")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--cover-mix", default="uniform",
                   help='"uniform", "low", or a fixed cover fraction')
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--cloud-gap-fraction", type=float, default=0.0)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--size", type=int, default=raster.PLOT_SIZE)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train the detector")
    p.add_argument("--data", required=True, help="directory of plot bundles")
    p.add_argument("--config", default=None, help="JSON training config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    p.add_argument("--set", action="append", default=[],
                   help="dotted config override, e.g. --set net.hidden_per_direction=16")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="tiled scene prediction")
    p.add_argument("--scene", required=True, help="scene bundle (or directory of bundles)")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--threshold", default="auto", help='"auto" or a float in (0, 1)')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="tolerant accuracy report")
    p.add_argument("--pred", required=True, help="directory of predictions")
    p.add_argument("--labels", required=True, help="directory of labeled bundles")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="binarization threshold when only probs are stored")
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads > 0:
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
