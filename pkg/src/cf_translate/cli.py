"""Command-line pipeline: synth/ingest -> train -> infer -> analyze.

Every subcommand appends a provenance record (parameters, library versions,
wall time) to run.json in its output directory, so a finished directory tree
documents how it was produced.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analysis import (
    build_report,
    write_report_csv,
    write_report_figures,
    write_report_json,
)
from .images import (
    DatasetManifest,
    IngestOptions,
    channel_ranges,
    ingest,
    normalize_channels,
    store_image,
)
from .inference import load_ensemble, load_results, translate_dataset, write_panels
from .synth import SynthSpec, write_dataset
from .training import CONFIG_NAME, TrainConfig, load_config, save_run, train

RUN_RECORD = "run.json"


def record_run(out_dir: Path, command: str, params: dict, seconds: float) -> Path:
    """Append one provenance record to OUT_DIR/run.json."""
    import numpy
    import scipy
    import torch

    path = Path(out_dir) / RUN_RECORD
    data = {"runs": []}
    if path.exists():
        data = json.loads(path.read_text())
    data["runs"].append(
        {
            "command": command,
            "params": params,
            "versions": {
                "cf_translate": __version__,
                "numpy": numpy.__version__,
                "scipy": scipy.__version__,
                "torch": torch.__version__,
            },
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "seconds": round(seconds, 3),
        }
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1))
    return path


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    spec = SynthSpec(
        channels=args.channels,
        height=args.height,
        width=args.width,
        n_per_group=args.n_per_group,
        effect_channel=args.effect_channel,
        effect_magnitude=args.delta,
        disk_count=args.disks,
        radius_range=tuple(args.radius),
        blur_sigma=args.blur,
        noise_level=args.noise,
        seed=args.seed,
    )
    manifest = write_dataset(spec, args.out)
    record_run(Path(args.out), "synth", spec.to_json(), time.perf_counter() - t0)
    print(
        f"wrote {len(manifest.entries)} images "
        f"({spec.channels}x{spec.height}x{spec.width}, "
        f"{spec.n_per_group} per group, effect {spec.effect_magnitude:+g} "
        f"in channel {spec.effect_channel}) to {args.out}"
    )
    return 0


def _split_names(raw: str | None) -> list[str] | None:
    if raw is None:
        return None
    names = [n.strip() for n in raw.split(",")]
    if any(not n for n in names):
        raise ValueError(f"empty channel name in {raw!r}")
    return names


def cmd_ingest(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    names = _split_names(args.channel_names)
    out = Path(args.out)
    manifest: DatasetManifest | None = None
    count = 0
    for group, paths in ((0, args.group0), (1, args.group1)):
        for p in paths:
            img = ingest(p, group, IngestOptions(channel_names=names))
            normalization = None
            if args.normalize:
                normalization = channel_ranges(img)
                img = normalize_channels(img)
            if manifest is None:
                manifest = DatasetManifest(channel_names=img.channel_names)
            store_image(
                manifest,
                out,
                img,
                normalization=normalization,
                validation=(img.image_id == args.validation),
            )
            count += 1
    if manifest is None:
        raise ValueError("no input files given")
    if args.validation is not None and manifest.validation_entry is None:
        raise ValueError(
            f"--validation {args.validation!r} matches no ingested image id"
        )
    manifest.require_both_groups()
    manifest.save(out)
    record_run(
        out,
        "ingest",
        {
            "group0": [str(p) for p in args.group0],
            "group1": [str(p) for p in args.group1],
            "normalize": args.normalize,
            "validation": args.validation,
            "channel_names": list(manifest.channel_names),
        },
        time.perf_counter() - t0,
    )
    print(f"ingested {count} images into {out}")
    return 0


def _parse_direction(raw: str) -> tuple[int, int]:
    parts = raw.split(",")
    if len(parts) != 2:
        raise ValueError(f"--direction must be 'SRC,TGT' (e.g. 0,1), got {raw!r}")
    return (int(parts[0]), int(parts[1]))


def cmd_train(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    manifest = DatasetManifest.load(args.data)
    config = TrainConfig(
        p=args.p,
        s=args.s,
        d=args.d,
        l1_weight=args.l1,
        learning_rate=args.lr,
        gp_weight=args.gp,
        n_critic=args.n_critic,
        max_epochs=args.epochs,
        checkpoint_window=tuple(args.window),
        n_ensemble=args.ensemble,
        seed=args.seed,
        batch_size=args.batch,
        direction=_parse_direction(args.direction),
        max_steps=args.max_steps,
        base_width=args.base_width,
        depth=args.depth,
        critic_blocks=args.critic_blocks,
        critic_base_width=args.critic_base_width,
    )
    run = train(manifest, config, progress=args.progress)
    run_dir = Path(args.run)
    save_run(run, run_dir)
    record_run(run_dir, "train", config.to_json(), time.perf_counter() - t0)
    val = f", final val L1 {run.validation[-1][1]:.5f}" if run.validation else ""
    print(
        f"trained {run.epochs_run} epochs ({run.steps} updates), "
        f"saved {len(run.checkpoints)} checkpoints to {run_dir}{val}"
    )
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    run_dir = Path(args.run)
    config_path = run_dir / CONFIG_NAME
    if not config_path.exists():
        raise FileNotFoundError(
            f"missing {config_path}; train a model into this directory first"
        )
    config = load_config(config_path)
    ensemble = load_ensemble(run_dir)
    manifest = DatasetManifest.load(args.data)
    if ensemble.channels != len(manifest.channel_names):
        raise ValueError(
            f"run {run_dir} was trained for {ensemble.channels} channels but "
            f"dataset {args.data} has {len(manifest.channel_names)}; "
            "point --run and --data at a matching pair"
        )
    source = config.direction[0] if args.source is None else args.source
    out = run_dir / "counterfactuals" if args.out is None else Path(args.out)
    results = translate_dataset(
        ensemble, manifest, source_group=source, p=config.p, s=config.s, out_dir=out
    )
    if args.panels:
        for result in results:
            write_panels(result, Path(out) / "panels" / result.image_id)
    record_run(
        out,
        "infer",
        {
            "run": str(run_dir),
            "data": str(args.data),
            "source_group": source,
            "ensemble_epochs": ensemble.epochs,
            "panels": args.panels,
        },
        time.perf_counter() - t0,
    )
    member_s = sum(sum(r.member_seconds) for r in results)
    print(
        f"translated {len(results)} group-{source} images with "
        f"{len(ensemble.members)} ensemble members to {out} "
        f"({member_s:.1f}s in generators)"
    )
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    manifest = DatasetManifest.load(args.data)
    results = load_results(args.results, manifest)
    report = build_report(results, manifest, top_k=args.top)
    out = Path(args.out) if args.out is not None else Path(args.results)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv")
    write_report_json(report, out / "report.json")
    figures = write_report_figures(report, out / "figures")
    record_run(
        out,
        "analyze",
        {"data": str(args.data), "results": str(args.results), "top": args.top},
        time.perf_counter() - t0,
    )
    print(
        f"report on {report.n_source} translated images "
        f"(group {report.source_group} -> {report.target_group}) -> {out}"
    )
    for row in report.rows:
        paired = f"{row.paired.p_value:.3g}" if row.paired.ok else row.paired.status
        unpaired = (
            f"{row.unpaired.p_value:.3g}" if row.unpaired.ok else row.unpaired.status
        )
        print(
            f"  {row.channel}: ACV {row.acv:+.3f} MCV {row.mcv:+.3f} "
            f"p_unpaired {unpaired} p_paired {paired}"
        )
    print(f"figures: {', '.join(str(f) for f in figures)}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cf-translate",
        description=(
            "Learn a translation between two groups of multi-channel images "
            "and quantify which channels the translation changes."
        ),
    )
    parser.add_argument(
        "--threads", type=int, default=None, help="torch CPU thread count"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-group benchmark")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--n-per-group", type=int, default=16)
    p.add_argument("--effect-channel", type=int, default=2)
    p.add_argument("--delta", type=float, default=0.25, help="injected effect size")
    p.add_argument("--disks", type=int, default=5, help="disks per image")
    p.add_argument("--radius", type=int, nargs=2, default=(4, 10), metavar=("LO", "HI"))
    p.add_argument("--blur", type=float, default=None, help="texture smoothing sigma")
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="build a dataset from TIFF/raw image files")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--group0", nargs="+", required=True, metavar="FILE")
    p.add_argument("--group1", nargs="+", required=True, metavar="FILE")
    p.add_argument(
        "--channel-names", default=None, help="comma-separated names for all channels"
    )
    p.add_argument(
        "--normalize",
        action="store_true",
        help="min-max normalize each channel to [0,1] (recording the ranges)",
    )
    p.add_argument(
        "--validation", default=None, metavar="IMAGE_ID",
        help="image id to hold out for the validation curve",
    )
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the translator on a dataset")
    p.add_argument("--data", required=True, help="dataset directory (with manifest)")
    p.add_argument("--run", required=True, help="output run directory")
    p.add_argument("--direction", default="0,1", help="SRC,TGT groups (e.g. 1,0)")
    p.add_argument("--p", type=int, default=256, help="patch size")
    p.add_argument("--s", type=int, default=60, help="patch stride")
    p.add_argument("--d", type=int, default=2, help="downscale factor")
    p.add_argument("--l1", type=float, default=50.0, help="identity-penalty weight")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--gp", type=float, default=10.0, help="gradient-penalty weight")
    p.add_argument("--n-critic", type=int, default=5)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument(
        "--window", type=int, nargs=2, default=(300, 500), metavar=("LO", "HI"),
        help="epoch window the checkpoint ensemble is drawn from",
    )
    p.add_argument("--ensemble", type=int, default=9, help="ensemble size")
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None, help="hard update budget")
    p.add_argument("--base-width", type=int, default=64)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--critic-blocks", type=int, default=5)
    p.add_argument("--critic-base-width", type=int, default=64)
    p.add_argument("--progress", action="store_true", help="print epoch progress")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="translate a group with a trained run")
    p.add_argument("--run", required=True, help="run directory from `train`")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument(
        "--out", default=None, help="results directory (default RUN/counterfactuals)"
    )
    p.add_argument(
        "--source", type=int, default=None,
        help="group to translate (default: the run's source group)",
    )
    p.add_argument(
        "--panels", action="store_true",
        help="write per-channel input/output/difference panels",
    )
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("analyze", help="per-channel effect report from results")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--results", required=True, help="results directory from `infer`")
    p.add_argument(
        "--out", default=None, help="report directory (default: the results directory)"
    )
    p.add_argument("--top", type=int, default=7, help="channels in the top-k figures")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        import torch

        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
