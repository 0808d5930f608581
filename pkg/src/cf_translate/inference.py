"""Full-image counterfactual generation with a checkpoint ensemble.

Each ensemble member translates every patch of the input image; the patch
outputs are stitched to a full image, and the ensemble result is the mean of
the member images. Members are evaluated in ascending epoch order so the
reduction is deterministic regardless of how the ensemble was assembled.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .images import DatasetManifest, MultiChannelImage, read_raw, write_raw
from .networks import ResidualGenerator, load_checkpoint
from .patches import build_grid, extract, stitch

_PATCH_BATCH = 64  # patches per forward pass during inference


@dataclass
class Ensemble:
    """Generator snapshots from the checkpoint window, sorted by epoch."""

    members: list[tuple[int, ResidualGenerator]]

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        self.members = sorted(self.members, key=lambda m: m[0])
        first = self.members[0][1].config
        for epoch, member in self.members:
            if member.config != first:
                raise ValueError(
                    f"member at epoch {epoch} has architecture {member.config}, "
                    f"expected {first}"
                )

    @property
    def channels(self) -> int:
        return self.members[0][1].config.channels

    @property
    def epochs(self) -> list[int]:
        return [e for e, _ in self.members]


def load_ensemble(run_dir: Path | str) -> Ensemble:
    """Load every checkpoint under RUNDIR/checkpoints into an ensemble."""
    ck_dir = Path(run_dir) / "checkpoints"
    paths = sorted(ck_dir.glob("epoch_*.pt"))
    if not paths:
        raise FileNotFoundError(f"no checkpoints under {ck_dir}")
    members = []
    for path in paths:
        gen, epoch = load_checkpoint(path)
        members.append((epoch, gen))
    return Ensemble(members=members)


@dataclass
class CounterfactualResult:
    """One translated image: input, ensemble output, and their difference.

    The difference map is float64 so input + difference == output holds
    exactly; on disk it is stored as float32.
    """

    image_id: str
    source_group: int
    channel_names: tuple[str, ...]
    input_pixels: np.ndarray  # (C, H, W) float32, the normalized input
    output_pixels: np.ndarray  # (C, H, W) float32, in (0, 1)
    member_seconds: list[float] = field(default_factory=list)

    @property
    def difference(self) -> np.ndarray:
        return self.output_pixels.astype(np.float64) - self.input_pixels.astype(np.float64)


def _member_translate(
    gen: ResidualGenerator, patches: np.ndarray, grid
) -> np.ndarray:
    """Run one member over all patches and stitch to a full image."""
    gen.eval()
    outputs = np.empty_like(patches)
    with torch.no_grad():
        for start in range(0, len(patches), _PATCH_BATCH):
            batch = torch.from_numpy(patches[start : start + _PATCH_BATCH])
            outputs[start : start + _PATCH_BATCH] = gen(batch).numpy()
    return stitch(outputs, grid)


def translate_image(
    ensemble: Ensemble, img: MultiChannelImage, p: int, s: int
) -> CounterfactualResult:
    """Translate one normalized image; output = mean over member outputs."""
    if img.n_channels != ensemble.channels:
        raise ValueError(
            f"ensemble built for {ensemble.channels} channels, "
            f"image {img.image_id!r} has {img.n_channels}"
        )
    lo, hi = float(img.pixels.min()), float(img.pixels.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(
            f"image {img.image_id!r} must be normalized to [0, 1]; range [{lo}, {hi}]"
        )
    _, h, w = img.pixels.shape
    grid = build_grid(h, w, p, s)
    patches = extract(img.pixels.astype(np.float32, copy=False), grid)

    total = np.zeros(img.pixels.shape, dtype=np.float64)
    seconds = []
    for _, member in ensemble.members:  # ascending epoch: fixed reduction order
        t0 = time.perf_counter()
        total += _member_translate(member, patches, grid)
        seconds.append(time.perf_counter() - t0)
    output = (total / len(ensemble.members)).astype(np.float32)
    return CounterfactualResult(
        image_id=img.image_id,
        source_group=img.group,
        channel_names=img.channel_names,
        input_pixels=img.pixels.astype(np.float32, copy=False),
        output_pixels=output,
        member_seconds=seconds,
    )


def translate_dataset(
    ensemble: Ensemble,
    manifest: DatasetManifest,
    source_group: int,
    p: int,
    s: int,
    out_dir: Path | str | None = None,
) -> list[CounterfactualResult]:
    """Translate every source-group image in manifest order.

    Per-image failures are collected and re-raised together with image ids
    after the remaining images have been attempted.
    """
    entries = manifest.group_entries(source_group)
    if not entries:
        raise ValueError(f"empty source group {source_group}")
    results = []
    failures = []
    for entry in entries:
        try:
            img = manifest.load_image(entry)
            results.append(translate_image(ensemble, img, p, s))
        except Exception as exc:  # noqa: BLE001 - reported with context below
            failures.append((entry.image_id, exc))
    if failures:
        detail = "; ".join(f"{image_id}: {exc}" for image_id, exc in failures)
        raise RuntimeError(f"translation failed for {len(failures)} image(s): {detail}")
    if out_dir is not None:
        save_results(results, out_dir)
    return results


# ---------------------------------------------------------------------------
# Result persistence

RESULTS_INDEX = "results.json"


def save_results(results: list[CounterfactualResult], out_dir: Path | str) -> Path:
    """Persist counterfactuals and difference maps as raw tensors + index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for res in results:
        cf_name = f"{res.image_id}_counterfactual.raw"
        diff_name = f"{res.image_id}_difference.raw"
        write_raw(out_dir / cf_name, res.output_pixels, res.channel_names)
        write_raw(out_dir / diff_name, res.difference.astype(np.float32), res.channel_names)
        index.append(
            {
                "image_id": res.image_id,
                "source_group": res.source_group,
                "counterfactual": cf_name,
                "difference": diff_name,
                "member_seconds": res.member_seconds,
            }
        )
    (out_dir / RESULTS_INDEX).write_text(json.dumps({"results": index}, indent=1))
    return out_dir


def load_results(
    out_dir: Path | str, manifest: DatasetManifest
) -> list[CounterfactualResult]:
    """Reload persisted results, pairing each with its manifest input image."""
    out_dir = Path(out_dir)
    index_path = out_dir / RESULTS_INDEX
    if not index_path.exists():
        raise FileNotFoundError(
            f"missing results index {index_path}; run the translation step first"
        )
    index = json.loads(index_path.read_text())
    results = []
    for rec in index["results"]:
        img = manifest.load_image(rec["image_id"])
        output, _ = read_raw(out_dir / rec["counterfactual"])
        results.append(
            CounterfactualResult(
                image_id=rec["image_id"],
                source_group=int(rec["source_group"]),
                channel_names=manifest.channel_names,
                input_pixels=img.pixels,
                output_pixels=output,
                member_seconds=list(rec.get("member_seconds", [])),
            )
        )
    return results


# ---------------------------------------------------------------------------
# Visualization

def write_panels(result: CounterfactualResult, out_dir: Path | str) -> list[Path]:
    """Per-channel PNG: input, added pixels, subtracted pixels, output."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    diff = result.difference
    paths = []
    for k, name in enumerate(result.channel_names):
        added = np.clip(diff[k], 0.0, None)
        subtracted = np.clip(-diff[k], 0.0, None)
        fig, axes = plt.subplots(1, 4, figsize=(12, 3.2))
        panels = [
            (result.input_pixels[k], "input", "gray", 0.0, 1.0),
            (added, "added", "viridis", 0.0, None),
            (subtracted, "subtracted", "magma", 0.0, None),
            (result.output_pixels[k], "output", "gray", 0.0, 1.0),
        ]
        for ax, (pixels, title, cmap, vmin, vmax) in zip(axes, panels):
            ax.imshow(pixels, cmap=cmap, vmin=vmin, vmax=vmax)
            ax.set_title(title, fontsize=9)
            ax.axis("off")
        fig.suptitle(f"{result.image_id} — {name}", fontsize=10)
        fig.tight_layout()
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in name)
        path = out_dir / f"{result.image_id}_ch{k}_{safe}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths
