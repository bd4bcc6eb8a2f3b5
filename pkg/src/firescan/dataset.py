"""Patch extraction, labelling, class balancing, and channel selection."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .raster_io import MaskImage, RasterImage

PATCH_SIZE = 256
POSITIVE_FRACTION = 0.005


@dataclass
class Patch:
    """One ``(C, size, size)`` tile in [0, 1] plus provenance."""

    data: np.ndarray
    source_id: str
    row_off: int
    col_off: int
    fire_fraction: float = 0.0
    label: str = "negative"
    channels: tuple = tuple(range(1, 13))

    @property
    def positive(self) -> bool:
        return self.label == "positive"


@dataclass
class MaskPatch:
    data: np.ndarray
    source_id: str
    row_off: int
    col_off: int


@dataclass
class DatasetSplit:
    patches: list
    split: str = "train"
    rng_seed: int = 0

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    @property
    def n_positive(self) -> int:
        return sum(p.positive for p, _ in self.patches)

    @property
    def n_negative(self) -> int:
        return len(self.patches) - self.n_positive

    def images(self) -> np.ndarray:
        """Stack patch data to ``(N, C, H, W)`` float32."""
        return np.stack([p.data for p, _ in self.patches]).astype(np.float32, copy=False)

    def masks(self) -> np.ndarray:
        return np.stack([m.data for _, m in self.patches])

    def labels(self) -> np.ndarray:
        return np.array([p.positive for p, _ in self.patches], dtype=np.uint8)

    def positives(self) -> "DatasetSplit":
        return replace(self, patches=[pm for pm in self.patches if pm[0].positive])

    def source_ids(self) -> list:
        seen = []
        for p, _ in self.patches:
            if p.source_id not in seen:
                seen.append(p.source_id)
        return seen

    def subset_by_source(self, ids) -> "DatasetSplit":
        ids = set(ids)
        return replace(self, patches=[pm for pm in self.patches if pm[0].source_id in ids])


def label_patch(mask_patch, threshold: float = POSITIVE_FRACTION):
    """Return ``(fire_fraction, label)``; positive iff fraction strictly exceeds ``threshold``."""
    data = mask_patch.data if isinstance(mask_patch, (MaskPatch, MaskImage)) else np.asarray(mask_patch)
    fire = int(np.count_nonzero(data))
    fraction = fire / data.size
    return fraction, ("positive" if fraction > threshold else "negative")


def _make_pair(image, mask, r, c, size, source_id, threshold):
    data = image.data[:, r:r + size, c:c + size].copy()
    mdata = mask.data[r:r + size, c:c + size].copy()
    mp = MaskPatch(mdata, source_id, r, c)
    fraction, label = label_patch(mp, threshold)
    patch = Patch(data, source_id, r, c, fraction, label, tuple(image.band_indices))
    return patch, mp


def _check_pair(image: RasterImage, mask: MaskImage, size: int = PATCH_SIZE):
    if size < 1:
        raise ConfigError(f"patch size must be >= 1, got {size}")
    if image.units_state != "normalized":
        raise ConfigError("patches must be cut from a normalized image")
    if (mask.height, mask.width) != (image.height, image.width):
        raise ConfigError(
            f"mask {mask.height}x{mask.width} does not match image {image.height}x{image.width}"
        )


def grid_patches(image: RasterImage, mask: MaskImage, size: int = PATCH_SIZE, source_id: str = "",
                 threshold: float = POSITIVE_FRACTION):
    """Non-overlapping row-major tiling; right/bottom remainders are dropped."""
    _check_pair(image, mask, size)
    out = []
    for r in range(0, image.height - size + 1, size):
        for c in range(0, image.width - size + 1, size):
            out.append(_make_pair(image, mask, r, c, size, source_id, threshold))
    return out


def sample_random_patches(image: RasterImage, mask: MaskImage, n: int, rng_seed: int,
                          size: int = PATCH_SIZE, source_id: str = "",
                          threshold: float = POSITIVE_FRACTION):
    """``n`` patches at offsets drawn uniformly over the valid range (may overlap)."""
    _check_pair(image, mask, size)
    if image.height < size or image.width < size:
        raise ConfigError(f"image {image.height}x{image.width} smaller than patch size {size}")
    if n < 0:
        raise ConfigError("n must be >= 0")
    rng = np.random.default_rng(rng_seed)
    rows = rng.integers(0, image.height - size + 1, size=n)
    cols = rng.integers(0, image.width - size + 1, size=n)
    return [
        _make_pair(image, mask, int(r), int(c), size, source_id, threshold)
        for r, c in zip(rows, cols)
    ]


def oversample_positives(split: DatasetSplit, rng_seed: int) -> DatasetSplit:
    """Duplicate positives (with replacement) until they match the negative count."""
    pos = [i for i, (p, _) in enumerate(split.patches) if p.positive]
    if not pos:
        raise DataError("cannot oversample: split has no positive patches")
    deficit = split.n_negative - len(pos)
    if deficit <= 0:
        return replace(split, patches=list(split.patches))
    rng = np.random.default_rng(rng_seed)
    extra = rng.choice(pos, size=deficit, replace=True)
    return replace(split, patches=list(split.patches) + [split.patches[i] for i in extra])


_RANGE = re.compile(r"^\s*(\d+)\s*-\s*(\d+)\s*$")


def parse_channels(text: str) -> list:
    """``"10,9,2"`` -> [10, 9, 2]; ``"1-8"`` -> [1..8]; mixed forms allowed."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = _RANGE.match(part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo > hi:
                raise ConfigError(f"bad channel range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            try:
                out.append(int(part))
            except ValueError:
                raise ConfigError(f"bad channel index {part!r}") from None
    return out


def format_channels(subset: Sequence[int]) -> str:
    subset = list(subset)
    if len(subset) > 2 and subset == list(range(subset[0], subset[-1] + 1)):
        return f"{subset[0]}-{subset[-1]}"
    return ",".join(str(i) for i in subset)


def _positions(available, subset):
    subset = [int(i) for i in subset]
    if not subset:
        raise ConfigError("channel subset is empty")
    if len(set(subset)) != len(subset):
        raise ConfigError(f"duplicate channel in subset {subset}")
    available = list(available)
    try:
        return [available.index(i) for i in subset]
    except ValueError:
        bad = [i for i in subset if i not in available]
        raise ConfigError(f"channel(s) {bad} not available (have {available})") from None


def select_channels(obj, subset):
    """Extract ``subset`` (1-based band indices, in the given order).

    Works on a Patch, a RasterImage, a DatasetSplit, or a ``(C, H, W)`` array
    assumed to hold bands 1..C.
    """
    if isinstance(obj, Patch):
        pos = _positions(obj.channels, subset)
        return replace(obj, data=obj.data[pos], channels=tuple(int(i) for i in subset))
    if isinstance(obj, RasterImage):
        pos = _positions(obj.band_indices, subset)
        return obj.with_data(obj.data[pos], bands=tuple(obj.bands[i] for i in pos))
    if isinstance(obj, DatasetSplit):
        return replace(obj, patches=[(select_channels(p, subset), m) for p, m in obj.patches])
    arr = np.asarray(obj)
    pos = _positions(range(1, arr.shape[-3] + 1), subset)
    return arr[..., pos, :, :]


def split_by_source(pairs, test_sources) -> tuple:
    """Partition pairs into (train, test) by flight/source id; no flight straddles both."""
    test_sources = set(test_sources)
    train = [pm for pm in pairs if pm[0].source_id not in test_sources]
    test = [pm for pm in pairs if pm[0].source_id in test_sources]
    return DatasetSplit(train, "train"), DatasetSplit(test, "test")


# -- manifests ---------------------------------------------------------------

@dataclass
class ManifestEntry:
    raster: Path
    mask: Path
    split: str


def read_manifest(path) -> list:
    """Dataset manifest: JSON list of ``{"raster", "mask", "split"}`` objects.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    items = doc["entries"] if isinstance(doc, dict) and "entries" in doc else doc
    if not isinstance(items, list):
        raise DataError(f"{path}: manifest must be a list of entries")
    out = []
    for i, item in enumerate(items):
        try:
            split = item["split"]
            raster = Path(item["raster"])
            mask = Path(item["mask"])
        except (KeyError, TypeError):
            raise DataError(f"{path}: entry {i} needs raster, mask and split") from None
        if split not in ("train", "test"):
            raise DataError(f"{path}: entry {i} has unknown split {split!r}")
        if not raster.is_absolute():
            raster = path.parent / raster
        if not mask.is_absolute():
            mask = path.parent / mask
        out.append(ManifestEntry(raster, mask, split))
    return out


def write_manifest(entries, path) -> None:
    doc = [{"raster": str(e.raster), "mask": str(e.mask), "split": e.split} for e in entries]
    Path(path).write_text(json.dumps(doc, indent=2))


# -- on-disk patch datasets --------------------------------------------------

def write_patch_dataset(splits, out_dir) -> Path:
    """Write each split's patches as raster + mask containers plus ``patches.json``.

    ``splits`` maps a split name to a DatasetSplit. Returns the index path.
    """
    from .raster_io import AMS_BANDS, write_mask, write_raster

    out_dir = Path(out_dir)
    by_index = {b.index: b for b in AMS_BANDS}
    records = []
    for name, split in splits.items():
        sub = out_dir / name
        sub.mkdir(parents=True, exist_ok=True)
        for k, (patch, mpatch) in enumerate(split.patches):
            raster_rel = f"{name}/{k:05d}.msrf"
            mask_rel = f"{name}/{k:05d}_mask.msrf"
            bands = tuple(by_index[c] for c in patch.channels)
            write_raster(RasterImage(patch.data, bands, gsd_m=10.0, units_state="normalized"),
                         out_dir / raster_rel)
            write_mask(MaskImage(mpatch.data), out_dir / mask_rel)
            records.append({
                "split": name,
                "raster": raster_rel,
                "mask": mask_rel,
                "source_id": patch.source_id,
                "row_off": patch.row_off,
                "col_off": patch.col_off,
                "fire_fraction": patch.fire_fraction,
                "label": patch.label,
            })
    index = out_dir / "patches.json"
    index.write_text(json.dumps(records, indent=1))
    return index


def read_patch_dataset(path) -> dict:
    """Inverse of :func:`write_patch_dataset`; ``path`` is the directory or its index."""
    from .raster_io import read_mask, read_raster

    path = Path(path)
    index = path / "patches.json" if path.is_dir() else path
    if not index.exists():
        raise DataError(f"patch index not found: {index}")
    try:
        records = json.loads(index.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{index}: invalid JSON ({exc})") from None
    splits = {}
    for rec in records:
        try:
            image = read_raster(index.parent / rec["raster"])
            mask = read_mask(index.parent / rec["mask"])
            patch = Patch(image.data, rec["source_id"], rec["row_off"], rec["col_off"],
                          rec["fire_fraction"], rec["label"], tuple(image.band_indices))
            mp = MaskPatch(mask.data, rec["source_id"], rec["row_off"], rec["col_off"])
            name = rec["split"]
        except (KeyError, TypeError):
            raise DataError(f"{index}: malformed patch record") from None
        splits.setdefault(name, DatasetSplit([], name)).patches.append((patch, mp))
    return splits


def summarize_splits(splits) -> dict:
    """Patch counts and positive fraction per split (and overall)."""
    out = {}
    total = pos = 0
    for name, split in splits.items():
        n, p = len(split), split.n_positive
        out[name] = {"patches": n, "positive": p, "negative": n - p,
                     "positive_fraction": p / n if n else None}
        total += n
        pos += p
    out["all"] = {"patches": total, "positive": pos, "negative": total - pos,
                  "positive_fraction": pos / total if total else None}
    return out
