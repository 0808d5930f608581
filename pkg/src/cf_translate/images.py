"""Multi-channel image ingest, normalization, downscaling, and dataset storage.

Images are C x H x W float32 arrays with named channels and a binary group
label. Two container formats are supported: multi-page TIFF (one page per
channel) for interchange, and a raw little-endian float32 tensor with a JSON
sidecar as the canonical internal format (bit-exact round trips).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

RAW_DTYPE = "<f4"  # canonical on-disk pixel type


@dataclass(frozen=True)
class MultiChannelImage:
    """One multi-channel image with its group label.

    pixels: float array of shape (C, H, W).
    channel_names: C unique names.
    group: binary outcome-group label, 0 or 1.
    """

    pixels: np.ndarray
    channel_names: tuple[str, ...]
    image_id: str
    group: int

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise ValueError(f"pixels must be (C, H, W), got shape {self.pixels.shape}")
        c = self.pixels.shape[0]
        if c < 1:
            raise ValueError("image must have at least one channel")
        if len(self.channel_names) != c:
            raise ValueError(
                f"{len(self.channel_names)} channel names for {c} channels"
            )
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ValueError("channel names must be unique")
        if self.group not in (0, 1):
            raise ValueError(f"group must be 0 or 1, got {self.group}")
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.pixels.shape)


def channel_ranges(img: MultiChannelImage) -> list[tuple[float, float]]:
    """Per-channel (min, max) over this image's pixels."""
    return [
        (float(ch.min()), float(ch.max()))
        for ch in img.pixels
    ]


def normalize_channels(img: MultiChannelImage) -> MultiChannelImage:
    """Min-max normalize each channel of one image independently to [0, 1].

    Constant channels map to all zeros. Idempotent on its own output.
    """
    out = np.empty_like(img.pixels, dtype=np.float32)
    for k, (lo, hi) in enumerate(channel_ranges(img)):
        if hi == lo:
            out[k] = 0.0
        else:
            out[k] = (img.pixels[k].astype(np.float32) - np.float32(lo)) / np.float32(hi - lo)
    return replace(img, pixels=out)


def downscale(img: MultiChannelImage, d: int) -> MultiChannelImage:
    """Nearest-neighbor downscale by integer factor d.

    Output pixel (i, j) is input pixel (i*d, j*d); output shape
    (C, H//d, W//d).
    """
    if d < 1:
        raise ValueError(f"downscale factor must be >= 1, got {d}")
    _, h, w = img.pixels.shape
    if h < d or w < d:
        raise ValueError(f"cannot downscale {h}x{w} image by {d}")
    out = img.pixels[:, : (h // d) * d : d, : (w // d) * d : d]
    return replace(img, pixels=np.ascontiguousarray(out))


# ---------------------------------------------------------------------------
# Containers


def write_raw(path: Path | str, pixels: np.ndarray, channel_names) -> None:
    """Write a raw little-endian float32 tensor plus JSON sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(pixels, dtype=RAW_DTYPE)
    arr.tofile(path)
    sidecar = {
        "shape": list(arr.shape),
        "dtype": RAW_DTYPE,
        "channel_names": list(channel_names),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def read_raw(path: Path | str) -> tuple[np.ndarray, list[str]]:
    """Read a raw tensor container; validates sidecar shape against file size."""
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise ValueError(f"missing JSON sidecar for raw tensor: {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    shape = tuple(int(s) for s in sidecar["shape"])
    if len(shape) != 3:
        raise ValueError(f"sidecar shape must be 3-dimensional, got {shape}")
    dtype = np.dtype(sidecar.get("dtype", RAW_DTYPE))
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = path.stat().st_size
    if expected != actual:
        raise ValueError(
            f"{path}: sidecar declares shape {shape} ({expected} bytes) "
            f"but file holds {actual} bytes"
        )
    pixels = np.fromfile(path, dtype=dtype).reshape(shape)
    names = sidecar.get("channel_names") or [str(i) for i in range(shape[0])]
    return pixels.astype(np.float32, copy=False), [str(n) for n in names]


def write_tiff(path: Path | str, pixels: np.ndarray) -> None:
    """Write one page per channel as a multi-page float32 TIFF."""
    import tifffile

    tifffile.imwrite(
        str(path),
        np.asarray(pixels, dtype=np.float32),
        photometric="minisblack",
    )


def read_tiff(path: Path | str) -> tuple[np.ndarray, list[str]]:
    """Read a multi-page TIFF as (C, H, W); page index used as channel name."""
    import tifffile

    with tifffile.TiffFile(str(path)) as tif:
        pages = [p.asarray() for p in tif.pages]
    if not pages:
        raise ValueError(f"{path}: TIFF contains no pages")
    arr0 = np.asarray(pages[0])
    if arr0.ndim == 3:
        # single volumetric page already stacked as (C, H, W)
        pixels = arr0
    else:
        for i, page in enumerate(pages):
            if np.asarray(page).shape != arr0.shape:
                raise ValueError(
                    f"{path}: page {i} has shape {np.asarray(page).shape}, "
                    f"expected {arr0.shape}"
                )
        pixels = np.stack(pages, axis=0)
    if pixels.ndim != 3:
        raise ValueError(f"{path}: cannot interpret TIFF with shape {pixels.shape}")
    names = [str(i) for i in range(pixels.shape[0])]
    return pixels.astype(np.float32), names


@dataclass
class IngestOptions:
    """Knobs for a single file ingest."""

    image_id: str | None = None
    channel_names: list[str] | None = None  # override names from the container


def ingest(path: Path | str, group: int, options: IngestOptions | None = None) -> MultiChannelImage:
    """Load one image file (TIFF or raw tensor) into a MultiChannelImage."""
    path = Path(path)
    options = options or IngestOptions()
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix in (".tif", ".tiff"):
        pixels, names = read_tiff(path)
    elif suffix in (".raw", ".bin"):
        pixels, names = read_raw(path)
    else:
        raise ValueError(f"unsupported container {suffix!r} (expected .tif/.tiff/.raw)")
    if options.channel_names is not None:
        if len(options.channel_names) != pixels.shape[0]:
            raise ValueError(
                f"{len(options.channel_names)} channel names given for "
                f"{pixels.shape[0]} channels"
            )
        names = list(options.channel_names)
    image_id = options.image_id or path.stem
    return MultiChannelImage(
        pixels=pixels, channel_names=tuple(names), image_id=image_id, group=group
    )


# ---------------------------------------------------------------------------
# Dataset manifest

MANIFEST_NAME = "manifest.json"


@dataclass
class ManifestEntry:
    image_id: str
    path: str  # relative to the manifest directory
    group: int
    shape: tuple[int, int, int]
    patient_id: str | None = None
    validation: bool = False
    normalization: list[tuple[float, float]] | None = None  # per-channel (min, max) at ingest


@dataclass
class DatasetManifest:
    """Index of a dataset directory: entries plus the shared channel names."""

    channel_names: tuple[str, ...]
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None  # set on load/save; base for entry paths

    def add_entry(self, entry: ManifestEntry) -> None:
        if any(e.image_id == entry.image_id for e in self.entries):
            raise ValueError(f"duplicate image_id {entry.image_id!r} in manifest")
        if len(self.channel_names) != entry.shape[0]:
            raise ValueError(
                f"entry {entry.image_id!r} has {entry.shape[0]} channels, "
                f"manifest declares {len(self.channel_names)}"
            )
        if self.entries and entry.shape != self.entries[0].shape:
            raise ValueError(
                f"entry {entry.image_id!r} shape {entry.shape} differs from "
                f"dataset shape {self.entries[0].shape}"
            )
        if entry.validation and any(e.validation for e in self.entries):
            raise ValueError("manifest already has a validation image")
        self.entries.append(entry)

    def group_entries(self, group: int) -> list[ManifestEntry]:
        return [e for e in self.entries if e.group == group]

    @property
    def validation_entry(self) -> ManifestEntry | None:
        for e in self.entries:
            if e.validation:
                return e
        return None

    def require_both_groups(self) -> None:
        for g in (0, 1):
            if not self.group_entries(g):
                raise ValueError(f"group {g} has no images in the manifest")

    def to_dict(self) -> dict:
        return {
            "channel_names": list(self.channel_names),
            "entries": [
                {
                    "image_id": e.image_id,
                    "path": e.path,
                    "group": e.group,
                    "shape": list(e.shape),
                    "patient_id": e.patient_id,
                    "validation": e.validation,
                    "normalization": e.normalization,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, root: Path | None = None) -> "DatasetManifest":
        manifest = cls(channel_names=tuple(data["channel_names"]), root=root)
        for raw in data["entries"]:
            manifest.add_entry(
                ManifestEntry(
                    image_id=raw["image_id"],
                    path=raw["path"],
                    group=int(raw["group"]),
                    shape=tuple(int(s) for s in raw["shape"]),
                    patient_id=raw.get("patient_id"),
                    validation=bool(raw.get("validation", False)),
                    normalization=(
                        [tuple(pair) for pair in raw["normalization"]]
                        if raw.get("normalization") is not None
                        else None
                    ),
                )
            )
        return manifest

    def save(self, directory: Path | str) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=1))
        self.root = directory
        return path

    @classmethod
    def load(cls, path: Path | str) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise FileNotFoundError(f"missing manifest: {path}")
        return cls.from_dict(json.loads(path.read_text()), root=path.parent)

    def load_image(self, entry: ManifestEntry | str) -> MultiChannelImage:
        if isinstance(entry, str):
            matches = [e for e in self.entries if e.image_id == entry]
            if not matches:
                raise KeyError(f"no manifest entry with image_id {entry!r}")
            entry = matches[0]
        if self.root is None:
            raise ValueError("manifest has no root directory; save or load it first")
        pixels, _ = read_raw(self.root / entry.path)
        return MultiChannelImage(
            pixels=pixels,
            channel_names=self.channel_names,
            image_id=entry.image_id,
            group=entry.group,
        )

    def load_group(self, group: int) -> list[MultiChannelImage]:
        return [self.load_image(e) for e in self.group_entries(group)]


def store_image(
    manifest: DatasetManifest,
    directory: Path | str,
    img: MultiChannelImage,
    normalization: list[tuple[float, float]] | None = None,
    patient_id: str | None = None,
    validation: bool = False,
) -> ManifestEntry:
    """Persist one image as a raw tensor and register it in the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fname = f"{img.image_id}.raw"
    write_raw(directory / fname, img.pixels, img.channel_names)
    entry = ManifestEntry(
        image_id=img.image_id,
        path=fname,
        group=img.group,
        shape=img.shape,
        patient_id=patient_id,
        validation=validation,
        normalization=normalization,
    )
    manifest.add_entry(entry)
    manifest.root = directory
    return entry
