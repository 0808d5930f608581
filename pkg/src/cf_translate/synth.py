"""Synthetic two-group datasets with a known, recoverable group effect.

Each image is a smoothed random texture per channel (rescaled to span [0, 1]
exactly) plus optional pixel noise. Group 1 images additionally receive a
constant intensity offset inside randomly placed disks, in one designated
channel. The disk geometry of every image — both groups — is recorded, so an
exact oracle translator can apply the true effect to a group-0 image for
validating the analysis metrics without any learned model.

Channel means are controlled so the null (zero effect) is actually null:
with a handful of images per group, freely drawn textures leave accidental
between-group mean differences comparable to a small real effect, and a
translator trained on such data correctly reproduces them — they are real
differences of the finite sample, not artifacts. Each channel is therefore
monotonically remapped to hit a per-image target mean drawn from a stream
keyed by image index but NOT by group: image i in either group gets the same
target means, so group mean differences vanish by construction while the
means still vary image-to-image (which is what makes the unpaired test
noisier than the paired one on the real effect).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .images import DatasetManifest, MultiChannelImage, store_image

GEOMETRY_NAME = "geometry.json"


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic dataset."""

    channels: int = 4
    height: int = 64
    width: int = 64
    n_per_group: int = 16
    effect_channel: int = 2
    effect_magnitude: float = 0.25  # delta; 0 gives the null benchmark
    disk_count: int = 5
    radius_range: tuple[int, int] = (4, 10)
    blur_sigma: float | None = None  # texture smoothing; default height / 8
    noise_level: float = 0.02
    target_mean_range: tuple[float, float] = (0.4, 0.6)  # per-image channel means
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.height < 4 or self.width < 4:
            raise ValueError("need at least 1 channel and 4x4 pixels")
        if self.n_per_group < 1:
            raise ValueError("n_per_group must be >= 1")
        if not 0 <= self.effect_channel < self.channels:
            raise ValueError(
                f"effect_channel {self.effect_channel} outside [0, {self.channels})"
            )
        if not 0.0 <= self.effect_magnitude < 1.0:
            raise ValueError(
                f"effect_magnitude must lie in [0, 1), got {self.effect_magnitude}"
            )
        lo, hi = self.radius_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad radius_range {self.radius_range}")
        if self.disk_count < 1:
            raise ValueError("disk_count must be >= 1")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        mlo, mhi = self.target_mean_range
        if not 0.0 < mlo <= mhi < 1.0:
            raise ValueError(f"bad target_mean_range {self.target_mean_range}")

    @property
    def sigma(self) -> float:
        return self.blur_sigma if self.blur_sigma is not None else self.height / 8.0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "SynthSpec":
        known = dict(data)
        for key in ("radius_range", "target_mean_range"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)


def disk_mask(height: int, width: int, disks: list[tuple[int, int, int]]) -> np.ndarray:
    """Boolean (H, W) union of the given (center_row, center_col, radius) disks."""
    yy, xx = np.ogrid[:height, :width]
    mask = np.zeros((height, width), dtype=bool)
    for cy, cx, r in disks:
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
    return mask


def _image_rng(spec: SynthSpec, group: int, index: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, group, index])


def _target_means(spec: SynthSpec, index: int) -> np.ndarray:
    """Per-channel target means for image `index`, identical in both groups.

    The stream is keyed by index only (the 7 separates it from the per-image
    [seed, group, index] streams), so image i of group 0 and image i of group
    1 share targets and the groups' channel means match by construction.
    """
    lo, hi = spec.target_mean_range
    return np.random.default_rng([spec.seed, 7, index]).uniform(lo, hi, spec.channels)


def _power_remap(channel: np.ndarray, target_mean: float) -> np.ndarray:
    """Monotone x**alpha remap of a [0, 1]-spanning channel to a target mean.

    Preserves the exact range (0**a == 0, 1**a == 1) and the pixel ordering;
    alpha is found by bisection in log space, where the mean is decreasing.
    """
    lo_a, hi_a = 1.0 / 64.0, 64.0
    for _ in range(50):
        mid = math.sqrt(lo_a * hi_a)
        if float(np.mean(channel**mid)) > target_mean:
            lo_a = mid
        else:
            hi_a = mid
    return channel ** math.sqrt(lo_a * hi_a)


def _texture(spec: SynthSpec, rng: np.random.Generator, index: int) -> np.ndarray:
    """Smoothed uniform noise, each channel rescaled to span [0, 1] exactly
    and remapped to that channel's group-independent target mean."""
    field = rng.uniform(0.0, 1.0, (spec.channels, spec.height, spec.width))
    field = gaussian_filter(field, sigma=(0.0, spec.sigma, spec.sigma))
    targets = _target_means(spec, index)
    for k in range(spec.channels):
        lo, hi = field[k].min(), field[k].max()
        field[k] = _power_remap((field[k] - lo) / (hi - lo), targets[k])
    if spec.noise_level > 0:
        field += rng.normal(0.0, spec.noise_level, field.shape)
        field = np.clip(field, 0.0, 1.0)
    return field


def _sample_disks(spec: SynthSpec, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    lo, hi = spec.radius_range
    return [
        (
            int(rng.integers(spec.height)),
            int(rng.integers(spec.width)),
            int(rng.integers(lo, hi + 1)),
        )
        for _ in range(spec.disk_count)
    ]


def generate_image(
    spec: SynthSpec, group: int, index: int
) -> tuple[MultiChannelImage, list[tuple[int, int, int]]]:
    """One synthetic image plus its sampled disk geometry.

    Both groups draw texture and geometry identically; only group 1 has the
    effect applied, so the groups differ solely by it in expectation.
    """
    if group not in (0, 1):
        raise ValueError(f"group must be 0 or 1, got {group}")
    rng = _image_rng(spec, group, index)
    pixels = _texture(spec, rng, index)
    disks = _sample_disks(spec, rng)
    if group == 1 and spec.effect_magnitude > 0:
        pixels = apply_effect(pixels, spec, disks, image_id=f"g{group}i{index:02d}")
    img = MultiChannelImage(
        pixels=pixels.astype(np.float32),
        channel_names=tuple(f"ch{k}" for k in range(spec.channels)),
        image_id=f"g{group}i{index:02d}",
        group=group,
    )
    return img, disks


def apply_effect(
    pixels: np.ndarray,
    spec: SynthSpec,
    disks: list[tuple[int, int, int]],
    image_id: str = "?",
) -> np.ndarray:
    """Add the group effect inside the disks, clipping to [0, 1]."""
    out = np.array(pixels, dtype=np.float64, copy=True)
    mask = disk_mask(spec.height, spec.width, disks)
    k = spec.effect_channel
    raised = out[k][mask] + spec.effect_magnitude
    clipped_frac = float((raised > 1.0).mean()) if raised.size else 0.0
    if clipped_frac > 0.5:
        warnings.warn(
            f"effect on {image_id}: {clipped_frac:.0%} of affected pixels clipped "
            f"at 1.0; the injected effect is no longer purely additive",
            stacklevel=2,
        )
    out[k][mask] = np.minimum(raised, 1.0)
    return out


def write_dataset(spec: SynthSpec, out_dir: Path | str) -> DatasetManifest:
    """Generate and persist the dataset, its manifest, and geometry records."""
    out_dir = Path(out_dir)
    manifest = DatasetManifest(
        channel_names=tuple(f"ch{k}" for k in range(spec.channels))
    )
    geometry: dict[str, list[tuple[int, int, int]]] = {}
    for group in (0, 1):
        for index in range(spec.n_per_group):
            img, disks = generate_image(spec, group, index)
            store_image(manifest, out_dir, img)
            geometry[img.image_id] = disks
    manifest.save(out_dir)
    (out_dir / GEOMETRY_NAME).write_text(
        json.dumps({"spec": spec.to_json(), "geometry": geometry}, indent=1)
    )
    return manifest


def load_geometry(dataset_dir: Path | str) -> tuple[SynthSpec, dict[str, list[tuple[int, int, int]]]]:
    path = Path(dataset_dir) / GEOMETRY_NAME
    if not path.exists():
        raise FileNotFoundError(f"missing geometry record: {path}")
    payload = json.loads(path.read_text())
    spec = SynthSpec.from_json(payload["spec"])
    geometry = {
        image_id: [tuple(d) for d in disks]
        for image_id, disks in payload["geometry"].items()
    }
    return spec, geometry


def oracle_translate(
    img: MultiChannelImage,
    spec: SynthSpec,
    geometry: dict[str, list[tuple[int, int, int]]],
):
    """The exact counterfactual of a group-0 image: +delta inside its own
    recorded disks, clipped — no model involved."""
    from .inference import CounterfactualResult

    if img.image_id not in geometry:
        raise KeyError(f"no geometry record for image {img.image_id!r}")
    out = apply_effect(img.pixels, spec, geometry[img.image_id], image_id=img.image_id)
    return CounterfactualResult(
        image_id=img.image_id,
        source_group=img.group,
        channel_names=img.channel_names,
        input_pixels=img.pixels,
        output_pixels=out.astype(np.float32),
    )
