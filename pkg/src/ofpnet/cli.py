"""Command-line entry point tying the modules together.

Every command writes a `manifest.json` into its output directory holding the
fully resolved config, the seed, the applied overrides, and SHA-256 hashes
of the artifacts it produced, so a run can be reproduced from the manifest
alone. Exit codes: 0 success, 2 usage error, 3 config error, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .data import (
    LightFieldDataset,
    degrade_tree,
    write_synthetic_dataset,
)
from .errors import ConfigError, OfpnetError
from .evaluate import (
    emit_table,
    estimate_epi_slope,
    evaluate_baseline,
    evaluate_model,
    export_epi_strip,
    write_report,
)
from .lightfield import EpiOrientation, ScaleTag, extract_epi, scale_tag_for
from .model import (
    ABLATION_VARIANTS,
    build_model,
    count_params,
    make_ablation,
    super_resolve,
)
from .train import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    LOG_FILE,
    finetune as run_finetune,
    load_checkpoint,
    model_config_from_checkpoint,
    restore_model,
    train as run_train,
)


def _default_out(command: str) -> Path:
    return Path(os.environ.get("OFPNET_OUT", "runs")) / command


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_artifacts(out_dir: Path, items: list[Path]) -> dict[str, str]:
    hashes: dict[str, str] = {}
    for item in items:
        files = sorted(p for p in item.rglob("*") if p.is_file()) if item.is_dir() else [item]
        for f in files:
            if f.name == "manifest.json":
                continue
            try:
                rel = str(f.relative_to(out_dir))
            except ValueError:
                rel = str(f)
            hashes[rel] = _sha256(f)
    return hashes


def _write_manifest(
    out_dir: Path,
    command: str,
    args: argparse.Namespace,
    flat_config: dict,
    seed: int,
    artifacts: list[Path],
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "overrides": list(getattr(args, "set", None) or []),
        "config": flat_config,
        "seed": seed,
        "artifacts": _hash_artifacts(out_dir, [p for p in artifacts if p.exists()]),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _resolve_configs(args):
    values = config_mod.parse_config_file(args.config) if getattr(args, "config", None) else {}
    values = config_mod.apply_overrides(values, getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        values["train.seed"] = args.seed
    model_cfg, train_cfg, data = config_mod.resolve(values)
    explicit_model = any(k.startswith("model.") for k in values)
    return values, model_cfg, train_cfg, data, explicit_model


def _data_root(args, data: dict) -> Path:
    root = getattr(args, "data", None) or data.get("data.root")
    if not root:
        raise ConfigError("no dataset root: pass --data or set data.root")
    return Path(root)


def _parse_pair(text: str, sep: str, what: str) -> tuple[int, int]:
    try:
        a, b = text.split(sep)
        return int(a), int(b)
    except ValueError as exc:
        raise ConfigError(f"bad {what} {text!r}, expected e.g. 96{sep}96") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_degrade(args) -> int:
    out_dir = Path(args.out) if args.out else _default_out("degrade")
    scales = (2, 4) if args.scale == "both" else (int(args.scale),)
    split_counts = None
    if args.split:
        parts = args.split.split(",")
        if len(parts) != 3:
            raise ConfigError(f"--split wants train,val,test counts, got {args.split!r}")
        split_counts = tuple(int(p) for p in parts)

    if args.synthetic is not None:
        height, width = _parse_pair(args.size, "x", "--size")
        angular = _parse_pair(args.angular, "x", "--angular")
        lo, hi = args.disparity.split(":")
        records = write_synthetic_dataset(
            out_dir / "data",
            args.synthetic,
            height=height,
            width=width,
            angular_size=angular,
            scales=scales,
            chain_spec=args.chain,
            disparity_range=(float(lo), float(hi)),
            seed=args.seed,
            split_counts=split_counts,
        )
    else:
        records = degrade_tree(
            args.inp, out_dir / "data",
            scales=scales, chain_spec=args.chain, seed=args.seed,
        )
        if split_counts is not None:
            from .data import split_scenes, write_split

            write_split(split_scenes(records, split_counts, args.seed), out_dir / "data")

    flat = {
        "data.root": str(out_dir / "data"),
        "degrade.scales": list(scales),
        "degrade.chain": args.chain,
        "degrade.scenes": len(records),
    }
    _write_manifest(out_dir, "degrade", args, flat, args.seed, [out_dir / "data"])
    print(f"wrote {len(records)} scenes to {out_dir / 'data'}")
    return 0


def cmd_train(args) -> int:
    _, model_cfg, train_cfg, data, _ = _resolve_configs(args)
    out_dir = Path(args.out) if args.out else _default_out("train")
    dataset = LightFieldDataset.from_root(_data_root(args, data))
    model = build_model(model_cfg, seed=train_cfg.seed)
    best = run_train(model, dataset, train_cfg, out_dir, resume=args.resume)
    flat = config_mod.flatten(model_cfg, train_cfg, data)
    _write_manifest(
        out_dir, "train", args, flat, train_cfg.seed,
        [out_dir / BEST_CHECKPOINT, out_dir / LAST_CHECKPOINT,
         out_dir / LOG_FILE],
    )
    print(f"best checkpoint: {best}")
    return 0


def cmd_finetune(args) -> int:
    _, model_cfg, train_cfg, data, explicit_model = _resolve_configs(args)
    if train_cfg.phase != "finetune":
        train_cfg = dataclasses.replace(train_cfg, phase="finetune")
    out_dir = Path(args.out) if args.out else _default_out("finetune")
    dataset = LightFieldDataset.from_root(_data_root(args, data))
    best = run_finetune(
        args.checkpoint, dataset, train_cfg, out_dir,
        model_config=model_cfg if explicit_model else None,
    )
    flat = config_mod.flatten(model_cfg, train_cfg, data)
    _write_manifest(
        out_dir, "finetune", args, flat, train_cfg.seed,
        [out_dir / BEST_CHECKPOINT, out_dir / LAST_CHECKPOINT,
         out_dir / LOG_FILE],
    )
    print(f"best checkpoint: {best}")
    return 0


def cmd_eval(args) -> int:
    _, model_cfg, train_cfg, data, _ = _resolve_configs(args)
    out_dir = Path(args.out) if args.out else _default_out("eval")
    dataset = LightFieldDataset.from_root(_data_root(args, data))
    reports = []
    artifacts: list[Path] = []
    scale = args.scale

    if args.checkpoint:
        payload = load_checkpoint(args.checkpoint)
        model = restore_model(payload)
        if scale is None:
            scale = payload.get("train_config", {}).get("scale")
        if scale is None:
            raise ConfigError("pass --scale; the checkpoint does not record one")
        report = evaluate_model(
            model, dataset, args.split, int(scale),
            variant_label=args.label,
            config_fingerprint=config_mod.config_fingerprint(model.config),
            dump_sr_dir=(out_dir / "sr") if args.dump_sr else None,
        )
        reports.append(report)
        if args.dump_sr:
            artifacts.append(out_dir / "sr")
    elif scale is None:
        raise ConfigError("pass --scale when evaluating without a checkpoint")

    if args.baseline != "none" or not args.checkpoint:
        reports.append(
            evaluate_baseline(dataset, args.split, int(scale), variant_label="identity")
        )

    for report in reports:
        csv_path, txt_path = write_report(report, out_dir)
        artifacts += [csv_path, txt_path]
        print(
            f"{report.variant_label}: PSNR {report.aggregate_psnr:.4f} dB  "
            f"SSIM {report.aggregate_ssim:.4f}"
        )
    if len(reports) > 1:
        artifacts += list(emit_table(reports, "table1", out_dir, name="summary"))
        delta = reports[0].aggregate_psnr - reports[-1].aggregate_psnr
        print(f"delta vs {reports[-1].variant_label}: {delta:+.4f} dB")

    flat = config_mod.flatten(model_cfg, train_cfg, data)
    flat["eval.split"] = args.split
    flat["eval.scale"] = int(scale)
    _write_manifest(out_dir, "eval", args, flat, train_cfg.seed, artifacts)
    return 0


def _ablation_payload(args, variant: str, out_dir: Path) -> dict:
    return {
        "config": getattr(args, "config", None),
        "set": list(getattr(args, "set", None) or []),
        "seed": getattr(args, "seed", None),
        "data": getattr(args, "data", None),
        "variant": variant,
        "out": str(out_dir / variant.replace(":", "_")),
    }


def _run_ablation_variant(payload: dict):
    """Train and evaluate one ablation variant; used by both the sequential
    path and the process pool, so results never depend on scheduling."""
    ns = argparse.Namespace(
        config=payload["config"], set=payload["set"], seed=payload["seed"],
        data=payload["data"],
    )
    _, base_cfg, train_cfg, data, _ = _resolve_configs(ns)
    variant = payload["variant"]
    cfg = make_ablation(base_cfg, variant)
    out_dir = Path(payload["out"])
    dataset = LightFieldDataset.from_root(_data_root(ns, data))
    model = build_model(cfg, seed=train_cfg.seed)
    run_train(model, dataset, train_cfg, out_dir)
    report = evaluate_model(
        model, dataset, "test", train_cfg.scale,
        variant_label=variant,
        config_fingerprint=config_mod.config_fingerprint(cfg),
    )
    write_report(report, out_dir)
    return report


def cmd_ablate(args) -> int:
    _, model_cfg, train_cfg, data, _ = _resolve_configs(args)
    out_dir = Path(args.out) if args.out else _default_out("ablate")
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.variants == "all":
        variants = list(ABLATION_VARIANTS)
    else:
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        make_ablation(model_cfg, v)  # validate names and base before training
    payloads = [_ablation_payload(args, v, out_dir) for v in variants]

    if args.parallel and args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            reports = list(pool.map(_run_ablation_variant, payloads))
    else:
        reports = [_run_ablation_variant(p) for p in payloads]

    csv_path, txt_path = emit_table(reports, "table3", out_dir, name="ablation_table")
    print(txt_path.read_text())
    flat = config_mod.flatten(model_cfg, train_cfg, data)
    flat["ablate.variants"] = variants
    _write_manifest(
        out_dir, "ablate", args, flat, train_cfg.seed,
        [csv_path, txt_path] + [Path(p["out"]) for p in payloads],
    )
    return 0


def cmd_epi(args) -> int:
    _, model_cfg, train_cfg, data, _ = _resolve_configs(args)
    out_dir = Path(args.out) if args.out else _default_out("epi")
    dataset = LightFieldDataset.from_root(_data_root(args, data))
    source = args.source
    if source == "sr":
        if not args.checkpoint:
            raise ConfigError("--source sr needs --checkpoint")
        payload = load_checkpoint(args.checkpoint)
        model = restore_model(payload)
        lf = super_resolve(
            model, dataset.load_y(args.scene, scale_tag_for(args.scale))
        )
    else:
        tag = ScaleTag.GT if source == "gt" else ScaleTag(source)
        lf = dataset.load_y(args.scene, tag)

    orientation = EpiOrientation(args.orientation)
    h, w = lf.spatial_size
    un, vn = lf.angular_size
    if args.lines:
        rows = [_parse_pair(tok, ":", "--lines entry") for tok in args.lines.split(",")]
    else:
        extent = h if orientation is EpiOrientation.HORIZONTAL else w
        centre = (un if orientation is EpiOrientation.HORIZONTAL else vn) // 2
        rows = [(centre, int(extent * frac)) for frac in (0.3, 0.5, 0.7)]

    paths = export_epi_strip(lf, rows, out_dir / "epi" / args.scene, orientation)
    for (view_index, line_index), path in zip(rows, paths):
        epi = extract_epi(lf, orientation, view_index, line_index)
        slope = estimate_epi_slope(epi.data)
        print(f"{path}  slope {slope:+.3f} px/view")

    flat = config_mod.flatten(model_cfg, train_cfg, data)
    flat["epi.scene"] = args.scene
    flat["epi.source"] = source
    _write_manifest(out_dir, "epi", args, flat, train_cfg.seed, [out_dir / "epi"])
    return 0


def cmd_info(args) -> int:
    if args.checkpoint:
        payload = load_checkpoint(args.checkpoint)
        cfg = model_config_from_checkpoint(payload)
        meta = payload.get("meta", {})
        print(f"checkpoint: {args.checkpoint}")
        for key, value in sorted(meta.items()):
            print(f"  {key}: {value}")
    else:
        _, cfg, train_cfg, _, _ = _resolve_configs(args)
        print(f"train config: {train_cfg}")
    print(f"model config: {cfg}")
    print(f"parameters: {count_params(cfg)}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub, config=True):
    if config:
        sub.add_argument("--config", help="flat dotted-key config file")
        sub.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="config override, repeatable, last wins",
        )
    sub.add_argument("--out", help="output directory (default $OFPNET_OUT/<command>)")
    sub.add_argument("--seed", type=int, help="seed override")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ofpnet",
        description="Light field super-resolution: data synthesis, training, evaluation.",
    )
    subs = parser.add_subparsers(dest="command", metavar="command")

    p = subs.add_parser("degrade", help="build a dataset tree (synthetic or from HR scenes)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", type=int, metavar="N", help="generate N procedural scenes")
    src.add_argument("--in", dest="inp", help="directory of HR scenes to degrade")
    p.add_argument("--scale", choices=["2", "4", "both"], default="4")
    p.add_argument("--chain", default="bicubic", help="degradation chain spec")
    p.add_argument("--size", default="96x96", help="synthetic scene size HxW")
    p.add_argument("--angular", default="5x5", help="synthetic angular grid UxV")
    p.add_argument("--disparity", default="-1.5:1.5", help="synthetic disparity range lo:hi")
    p.add_argument("--split", help="train,val,test scene counts, e.g. 8,0,2")
    _add_common(p, config=False)
    p.set_defaults(handler=cmd_degrade, seed=0, set=[])

    p = subs.add_parser("train", help="train a model from scratch")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--resume", help="checkpoint to resume from")
    _add_common(p)
    p.set_defaults(handler=cmd_train)

    p = subs.add_parser("finetune", help="adapt a checkpoint to a new dataset")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--checkpoint", required=True)
    _add_common(p)
    p.set_defaults(handler=cmd_finetune)

    p = subs.add_parser("eval", help="score a checkpoint and/or the identity baseline")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test")
    p.add_argument("--scale", type=int, choices=[2, 4])
    p.add_argument("--label", default="ofpnet", help="variant label in reports")
    p.add_argument("--baseline", choices=["identity", "none"], default="identity")
    p.add_argument("--dump-sr", action="store_true", help="write RGB SR view PNGs")
    _add_common(p)
    p.set_defaults(handler=cmd_eval)

    p = subs.add_parser("ablate", help="train and tabulate ablation variants")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--variants", default="all", help="'all' or comma list")
    p.add_argument("--parallel", type=int, default=1, metavar="N")
    _add_common(p)
    p.set_defaults(handler=cmd_ablate)

    p = subs.add_parser("epi", help="export EPI strips and report fitted slopes")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--scene", required=True)
    p.add_argument("--source", choices=["gt", "lr_x2", "lr_x4", "sr"], default="gt")
    p.add_argument("--checkpoint", help="needed for --source sr")
    p.add_argument("--scale", type=int, choices=[2, 4], default=4,
                   help="LR scale fed to the model for --source sr")
    p.add_argument("--orientation", choices=["horizontal", "vertical"],
                   default="horizontal")
    p.add_argument("--lines", help="view:line pairs, e.g. 2:48,2:64")
    _add_common(p)
    p.set_defaults(handler=cmd_epi)

    p = subs.add_parser("info", help="inspect a checkpoint or resolved config")
    p.add_argument("--checkpoint")
    _add_common(p)
    p.set_defaults(handler=cmd_info)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        return 0 if code == 0 else 2
    if not hasattr(args, "handler"):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.handler(args) or 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except OfpnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
