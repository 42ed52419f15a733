"""Command-line entry point.

Subcommands:
  gen-dataset   synthesize a dataset directory (scenes, CSI, point clouds)
  reconstruct   run BIM / BIM-CS over a dataset split and score with log-CD
  evaluate      merge record CSVs and prediction directories into one report

Every run writes a resolved-config snapshot beside its outputs. Exit codes:
0 success, 2 configuration error, 3 processing error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import tensorio
from .em_core import ForwardOperators, PhysicsConfig, ViewLayout
from .errors import DegenerateSceneError
from .inversion import BimConfig, bim
from .link_sim import PilotConfig, estimate_from_channels
from .metrics import EvalRecord, aggregate, chamfer, log_cd, reconstruction_to_point_cloud
from .scene_gen import Dataset, DatasetConfig, build_dataset

ENV_OUTPUT_ROOT = "MVSENSE_OUTPUT_ROOT"
_METHODS = {"bim": "ls", "bim-cs": "cs"}


class ConfigError(Exception):
    pass


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(p) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a key-value mapping")
    return data


def _apply_overrides(config: dict, pairs: list[str]) -> dict:
    out = dict(config)
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _resolve(args, keys: dict) -> dict:
    """Merge defaults < config file < --set overrides < explicit CLI flags."""
    merged = dict(keys)
    merged.update(_load_config_file(args.config))
    merged.update(_apply_overrides({}, args.set))
    for key in keys:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            merged[key] = flag
    unknown = set(merged) - set(keys)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return merged


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(ENV_OUTPUT_ROOT, ".")
    return Path(root) / default_name


def _write_snapshot(out: Path, command: str, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    snapshot = {"command": command, "config": resolved}
    with open(out / "resolved_config.yaml", "w") as fh:
        yaml.safe_dump(snapshot, fh, sort_keys=True)


# ---------------------------------------------------------------------------
# gen-dataset
# ---------------------------------------------------------------------------

_GEN_KEYS = dict(samples=512, seed=0, dataset="digits", grid=32, roi_side=0.5,
                 bs=8, ue=16, antennas=4, points=1000, eps_lo=1.5, eps_hi=2.5,
                 sigma_lo=0.0, sigma_hi=0.1, clutter_lo=0, clutter_hi=0,
                 fill_fraction=0.8, snr=None, pilots=32, workers=0)


def cmd_gen_dataset(args) -> int:
    try:
        cfgv = _resolve(args, _GEN_KEYS)
        if cfgv["dataset"] not in ("digits", "multi-obj"):
            raise ConfigError(f"unknown dataset source {cfgv['dataset']!r}")
        out = _out_dir(args, "dataset")
        dconf = DatasetConfig(
            num_samples=int(cfgv["samples"]), seed=int(cfgv["seed"]),
            source=cfgv["dataset"], grid_resolution=int(cfgv["grid"]),
            roi_side=float(cfgv["roi_side"]), num_bs=int(cfgv["bs"]),
            num_ue=int(cfgv["ue"]), num_bs_antennas=int(cfgv["antennas"]),
            eps_range=(float(cfgv["eps_lo"]), float(cfgv["eps_hi"])),
            sigma_range=(float(cfgv["sigma_lo"]), float(cfgv["sigma_hi"])),
            points_per_cloud=int(cfgv["points"]),
            clutter_range=(int(cfgv["clutter_lo"]), int(cfgv["clutter_hi"])),
            fill_fraction=float(cfgv["fill_fraction"]),
            snr_db=None if cfgv["snr"] is None else float(cfgv["snr"]),
            num_pilots=int(cfgv["pilots"]),
        )
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        _write_snapshot(out, "gen-dataset", cfgv)
        build_dataset(dconf, out, workers=int(cfgv["workers"]))
    except (OSError, DegenerateSceneError) as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return 3
    print(f"dataset written to {out}")
    return 0


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------

_REC_KEYS = dict(method="bim", split="test", limit=None, snr=None, pilots=32,
                 noiseless=False, born_iters=3, inner_iters=2000, tol=1e-6,
                 cs_weight=None, points=None, seed=0)


def cmd_reconstruct(args) -> int:
    try:
        cfgv = _resolve(args, _REC_KEYS)
        if cfgv["method"] not in _METHODS:
            raise ConfigError(f"unknown method {cfgv['method']!r}; "
                              f"choose from {sorted(_METHODS)}")
        if args.data is None:
            raise ConfigError("--data is required")
        data = Dataset(args.data)
        out = _out_dir(args, f"recon-{cfgv['method']}")
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    _write_snapshot(out, "reconstruct", {**cfgv, "data": str(args.data)})
    physics = data.physics
    grid = data.grid
    stats = data.norm_stats
    m_points = int(cfgv["points"] or data.manifest["points_per_cloud"])
    sigma_scale = (2.0 * math.pi * physics.center_frequency
                   * physics.vacuum_permittivity)
    ranges = data.manifest["em_ranges"]
    x_max = (max(ranges["eps_r"][1] - 1.0, 1e-6),
             max(ranges["sigma"][1], 1e-9) / sigma_scale)
    bcfg = BimConfig(num_born_iters=int(cfgv["born_iters"]),
                     max_inner_iters=int(cfgv["inner_iters"]),
                     tol=float(cfgv["tol"]),
                     cs_weight=cfgv["cs_weight"], x_max=x_max)
    variant = _METHODS[cfgv["method"]]
    snr_db = None if cfgv["noiseless"] else cfgv["snr"]

    indices = data.indices(cfgv["split"])
    if cfgv["limit"] is not None:
        indices = indices[: int(cfgv["limit"])]
    if not indices:
        print("no samples in the requested split", file=sys.stderr)
        return 3

    ops_cache: dict = {}
    records, meta = [], {}
    failures = 0
    for idx in indices:
        rec = data.load(cfgv["split"], idx)
        channels = data.channel_set(cfgv["split"], idx)
        layout_key = (channels.bs_positions.tobytes(),
                      channels.ue_positions.tobytes())
        if layout_key not in ops_cache:
            ops_cache.clear()  # layouts differ per sample; keep one entry
            layout = ViewLayout.build(channels.bs_positions,
                                      channels.ue_positions,
                                      channels.csi.shape[2], physics)
            ops_cache[layout_key] = (layout, ForwardOperators(grid, layout, physics))
        layout, ops = ops_cache[layout_key]
        if snr_db is not None:
            pilot = PilotConfig(num_symbols=int(cfgv["pilots"]),
                                snr_db=float(snr_db),
                                seed=int(cfgv["seed"]) + idx)
            channels = estimate_from_channels(channels, pilot)
        t0 = time.perf_counter()
        try:
            result = bim(channels, grid, layout, physics, bcfg, variant=variant,
                         ops=ops)
            cloud = reconstruction_to_point_cloud(
                result.eps_r, result.sigma, grid, m_points, stats,
                np.random.default_rng(int(cfgv["seed"]) + idx), physics)
        except Exception as exc:  # partial failures logged, run continues
            failures += 1
            print(f"sample {idx}: {exc}", file=sys.stderr)
            continue
        runtime = time.perf_counter() - t0
        truth = stats.normalize(rec["cloud"][:, :4])
        value = log_cd(chamfer(truth, cloud))
        tensorio.write_tensor(out / f"{idx:08d}.eps_r.bin", result.eps_r)
        tensorio.write_tensor(out / f"{idx:08d}.sigma.bin", result.sigma)
        records.append(EvalRecord(
            sample_id=f"{cfgv['split']}/{idx:08d}", method=cfgv["method"],
            log_cd=value, runtime_s=runtime,
            num_bs=channels.csi.shape[0], num_ue=channels.csi.shape[1],
            snr_db=None if snr_db is None else float(snr_db)))
        meta[str(idx)] = {"residuals": result.residuals,
                          "cs_weight": result.cs_weight,
                          "inner_iterations": result.inner_iterations,
                          "runtime_s": runtime}

    if not records:
        print("all samples failed", file=sys.stderr)
        return 3
    _write_records(out / "records.csv", records)
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(f"{len(records)} reconstructions written to {out} "
          f"({failures} failures)")
    return 0


def _write_records(path: Path, records: list[EvalRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "method", "log_cd_db", "runtime_s",
                         "num_bs", "num_ue", "snr_db"])
        for r in records:
            writer.writerow([r.sample_id, r.method, repr(r.log_cd),
                             f"{r.runtime_s:.6f}", r.num_bs, r.num_ue,
                             "" if r.snr_db is None else r.snr_db])


def _read_records(path: Path) -> list[EvalRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EvalRecord(
                sample_id=row["sample_id"], method=row["method"],
                log_cd=float(row["log_cd_db"]),
                runtime_s=float(row["runtime_s"]),
                num_bs=int(row["num_bs"]), num_ue=int(row["num_ue"]),
                snr_db=float(row["snr_db"]) if row["snr_db"] else None))
    return out


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _prediction_records(pred_dir: Path, data: Dataset) -> list[EvalRecord]:
    summary_path = pred_dir / "run_summary.json"
    method, split = pred_dir.name, "test"
    if summary_path.exists():
        with open(summary_path) as fh:
            summary = json.load(fh)
        method = summary.get("method", method)
        split = summary.get("split", split)
    stats = data.norm_stats
    records = []
    for path in sorted(pred_dir.glob("*.pred.bin")):
        idx = int(path.name.split(".")[0])
        pred = tensorio.read_tensor(path)
        truth = stats.normalize(data.load(split, idx)["cloud"])
        layout = data.manifest["layout"]
        records.append(EvalRecord(
            sample_id=f"{split}/{idx:08d}", method=method,
            log_cd=log_cd(chamfer(truth, pred)), runtime_s=0.0,
            num_bs=layout["num_bs"], num_ue=layout["num_ue"]))
    return records


def cmd_evaluate(args) -> int:
    try:
        if not args.records and not args.predictions:
            raise ConfigError("provide --records and/or --predictions")
        if args.predictions and not args.data:
            raise ConfigError("--predictions requires --data for ground truth")
        out = _out_dir(args, "evaluation")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    records: list[EvalRecord] = []
    try:
        for path in args.records or []:
            records.extend(_read_records(Path(path)))
        if args.predictions:
            data = Dataset(args.data)
            for pred in args.predictions:
                records.extend(_prediction_records(Path(pred), data))
    except (OSError, ValueError) as exc:
        print(f"failed reading inputs: {exc}", file=sys.stderr)
        return 3
    if not records:
        print("no evaluation records found", file=sys.stderr)
        return 3

    summary = aggregate(records)
    _write_snapshot(out, "evaluate",
                    {"records": list(args.records or []),
                     "predictions": list(args.predictions or []),
                     "data": args.data})
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    for method, block in summary["methods"].items():
        with open(out / f"cdf_{method}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["log_cd_db", "cdf"])
            writer.writerows(zip(block["cdf_x_db"], block["cdf_p"]))
    with open(out / "view_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        methods = sorted(summary["methods"])
        writer.writerow(["views"] + methods)
        for key, cell in summary["view_table"].items():
            writer.writerow([key] + [cell.get(m, "") for m in methods])
    for method, block in sorted(summary["methods"].items()):
        mean = block["mean_log_cd_db"]
        shown = "all zero-CD" if mean is None else f"mean log-CD {mean:.2f} dB"
        print(f"{method}: {shown} over {block['count']} samples")
    print(f"evaluation written to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="YAML config file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config key")
    sub.add_argument("--out", help="output directory "
                     f"(default under ${ENV_OUTPUT_ROOT} or cwd)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvsense",
                                     description=__doc__.split("\n\n")[0])
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen-dataset", help="synthesize a dataset directory")
    _add_common(gen)
    gen.add_argument("--samples", type=int)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--dataset", choices=["digits", "multi-obj"])
    gen.add_argument("--grid", type=int)
    gen.add_argument("--bs", type=int)
    gen.add_argument("--ue", type=int)
    gen.add_argument("--antennas", type=int)
    gen.add_argument("--points", type=int)
    gen.add_argument("--eps-lo", type=float)
    gen.add_argument("--eps-hi", type=float)
    gen.add_argument("--sigma-lo", type=float)
    gen.add_argument("--sigma-hi", type=float)
    gen.add_argument("--clutter-lo", type=int)
    gen.add_argument("--clutter-hi", type=int)
    gen.add_argument("--snr", type=float)
    gen.add_argument("--pilots", type=int)
    gen.add_argument("--workers", type=int)
    gen.set_defaults(func=cmd_gen_dataset)

    rec = subs.add_parser("reconstruct", help="run a BIM baseline over a split")
    _add_common(rec)
    rec.add_argument("--data", help="dataset directory")
    rec.add_argument("--method", choices=sorted(_METHODS))
    rec.add_argument("--split", choices=["train", "val", "test"])
    rec.add_argument("--limit", type=int)
    rec.add_argument("--snr", type=float)
    rec.add_argument("--pilots", type=int)
    rec.add_argument("--noiseless", action="store_const", const=True)
    rec.add_argument("--born-iters", type=int)
    rec.add_argument("--inner-iters", type=int)
    rec.add_argument("--tol", type=float)
    rec.add_argument("--cs-weight", type=float)
    rec.add_argument("--points", type=int)
    rec.add_argument("--seed", type=int)
    rec.set_defaults(func=cmd_reconstruct)

    ev = subs.add_parser("evaluate", help="aggregate records and predictions")
    _add_common(ev)
    ev.add_argument("--records", action="append", metavar="CSV")
    ev.add_argument("--predictions", action="append", metavar="DIR")
    ev.add_argument("--data", help="dataset directory for prediction truth")
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
