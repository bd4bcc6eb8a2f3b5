"""Multi-band raster container, binary masks, and model checkpoints.

Raster layout (all little-endian)::

    "MSRF" | version u16 | height u32 | width u32 | band_count u16 | dtype u8 | reserved u8
    payload: band-planar, row-major (f32 for rasters, u8 for masks)

Radiometric metadata for a raster lives in a JSON sidecar at ``<path>.json``.
Checkpoints use a separate ``"FSCK"`` container of named float32 tensors.
"""

from __future__ import annotations

import json
import os
import struct
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    LengthMismatchError,
    MaskValueError,
    MetadataError,
    NonFiniteError,
    TruncatedError,
    VersionError,
)

PathLike = Union[str, os.PathLike]

RASTER_MAGIC = b"MSRF"
CHECKPOINT_MAGIC = b"FSCK"
FORMAT_VERSION = 1
DTYPE_F32 = 0
DTYPE_U8 = 1

_HEADER = struct.Struct("<4sHIIHBB")
HEADER_SIZE = _HEADER.size  # 18 bytes

UNITS_STATES = ("raw_radiance", "brightness_temperature_mixed", "normalized")
BAND_KINDS = ("reflective", "thermal")


@dataclass(frozen=True)
class BandSpec:
    index: int
    label: str
    wavelength_lo_um: float
    wavelength_hi_um: float
    kind: str = "reflective"
    solar_irradiance: Optional[float] = None

    def __post_init__(self):
        if not 1 <= self.index <= 12:
            raise MetadataError(f"band index {self.index} outside 1..12")
        if self.kind not in BAND_KINDS:
            raise MetadataError(f"band {self.index}: unknown kind {self.kind!r}")
        if not self.wavelength_lo_um < self.wavelength_hi_um:
            raise MetadataError(f"band {self.index}: wavelength range is empty")
        if self.kind == "reflective":
            if self.solar_irradiance is None:
                raise MetadataError(f"band {self.index}: reflective band needs solar_irradiance")
            if not self.solar_irradiance > 0:
                raise MetadataError(f"band {self.index}: solar_irradiance must be > 0")

    def to_dict(self) -> dict:
        d = {
            "index": self.index,
            "label": self.label,
            "wavelength_lo_um": self.wavelength_lo_um,
            "wavelength_hi_um": self.wavelength_hi_um,
            "kind": self.kind,
        }
        if self.solar_irradiance is not None:
            d["solar_irradiance"] = self.solar_irradiance
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "BandSpec":
        try:
            return cls(
                index=int(d["index"]),
                label=str(d["label"]),
                wavelength_lo_um=float(d["wavelength_lo_um"]),
                wavelength_hi_um=float(d["wavelength_hi_um"]),
                kind=str(d["kind"]),
                solar_irradiance=(
                    float(d["solar_irradiance"]) if d.get("solar_irradiance") is not None else None
                ),
            )
        except KeyError as exc:
            raise MetadataError(f"band entry missing field {exc.args[0]!r}") from None


# AMS bands 1-12. Wavelengths for bands not tabulated by the sensor docs we
# ship with are approximate; irradiances are rough exo-atmospheric band means
# (W/m^2/um). Real data should carry its own sidecar values.
AMS_BANDS = (
    BandSpec(1, "Violet", 0.42, 0.45, "reflective", 1720.0),
    BandSpec(2, "Blue", 0.45, 0.52, "reflective", 1970.0),
    BandSpec(3, "Green", 0.52, 0.60, "reflective", 1840.0),
    BandSpec(4, "Yellow", 0.60, 0.62, "reflective", 1720.0),
    BandSpec(5, "Red", 0.63, 0.69, "reflective", 1550.0),
    BandSpec(6, "Red edge", 0.69, 0.75, "reflective", 1410.0),
    BandSpec(7, "NIR", 0.76, 0.90, "reflective", 1100.0),
    BandSpec(8, "NIR II", 0.91, 1.05, "reflective", 830.0),
    BandSpec(9, "SWIR II", 1.55, 1.75, "reflective", 235.0),
    BandSpec(10, "SWIR", 2.08, 2.35, "reflective", 85.0),
    BandSpec(11, "Infrared(IR)", 3.60, 3.79, "reflective", 11.5),
    BandSpec(12, "Thermal", 10.26, 11.26, "thermal", None),
)


@dataclass
class RasterImage:
    """Multi-band float32 raster, shape ``(bands, height, width)``."""

    data: np.ndarray
    bands: tuple
    gsd_m: float
    units_state: str = "normalized"
    acquisition: Optional[datetime] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.bands = tuple(self.bands)
        if self.data.ndim != 3:
            raise LengthMismatchError(f"raster data must be 3-D (bands, H, W), got {self.data.shape}")
        if len(self.bands) == 0 or self.data.shape[0] == 0:
            raise MetadataError("raster must have at least one band")
        if self.data.shape[0] != len(self.bands):
            raise LengthMismatchError(
                f"data has {self.data.shape[0]} planes but {len(self.bands)} band specs"
            )
        if not self.gsd_m > 0:
            raise MetadataError("gsd_m must be > 0")
        if self.units_state not in UNITS_STATES:
            raise MetadataError(f"unknown units_state {self.units_state!r}")
        if not np.isfinite(self.data).all():
            raise NonFiniteError("raster contains NaN or Inf")
        if self.units_state == "normalized" and self.data.size:
            if self.data.min() < 0.0 or self.data.max() > 1.0:
                raise MetadataError("normalized raster has values outside [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def band_indices(self) -> list:
        return [b.index for b in self.bands]

    def band(self, index: int) -> np.ndarray:
        """Plane for 1-based AMS band ``index``."""
        for pos, b in enumerate(self.bands):
            if b.index == index:
                return self.data[pos]
        raise KeyError(f"band {index} not present")

    def with_data(self, data, **changes) -> "RasterImage":
        return replace(self, data=data, **changes)


@dataclass
class MaskImage:
    """Binary mask, shape ``(height, width)``, values in {0, 1}."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise LengthMismatchError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise MaskValueError("mask values must be 0 or 1")
        self.data = arr.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def _pack_header(height, width, bands, dtype):
    return _HEADER.pack(RASTER_MAGIC, FORMAT_VERSION, height, width, bands, dtype, 0)


def _read_container(path: PathLike):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    buf = path.read_bytes()
    if len(buf) < HEADER_SIZE:
        raise TruncatedError(f"{path}: shorter than header")
    magic, version, h, w, b, dtype, _ = _HEADER.unpack_from(buf, 0)
    if magic != RASTER_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if dtype == DTYPE_F32:
        np_dtype = np.dtype("<f4")
    elif dtype == DTYPE_U8:
        np_dtype = np.dtype("u1")
    else:
        raise MetadataError(f"{path}: unknown dtype code {dtype}")
    payload = buf[HEADER_SIZE:]
    expected = h * w * b * np_dtype.itemsize
    if len(payload) != expected:
        raise LengthMismatchError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} for {b}x{h}x{w}"
        )
    data = np.frombuffer(payload, dtype=np_dtype).reshape(b, h, w)
    return data, dtype


def sidecar_path(path: PathLike) -> Path:
    return Path(str(path) + ".json")


def write_raster(image: RasterImage, path: PathLike) -> None:
    b, h, w = image.data.shape
    if b == 0:
        raise MetadataError("cannot write a zero-band raster")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_pack_header(h, w, b, DTYPE_F32))
        fh.write(np.ascontiguousarray(image.data, dtype="<f4").tobytes())
    meta = {
        "bands": [band.to_dict() for band in image.bands],
        "gsd_m": image.gsd_m,
        "units_state": image.units_state,
    }
    if image.acquisition is not None:
        meta["acquisition"] = image.acquisition.isoformat()
    sidecar_path(path).write_text(json.dumps(meta, indent=2))


def read_raster(path: PathLike) -> RasterImage:
    data, dtype = _read_container(path)
    if dtype != DTYPE_F32:
        raise MetadataError(f"{path}: raster payload must be f32")
    side = sidecar_path(path)
    if not side.exists():
        raise MetadataError(f"missing sidecar {side}")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise MetadataError(f"{side}: invalid JSON ({exc})") from None
    for key in ("bands", "gsd_m", "units_state"):
        if key not in meta:
            raise MetadataError(f"{side}: missing field {key!r}")
    bands = tuple(BandSpec.from_dict(d) for d in meta["bands"])
    acq = meta.get("acquisition")
    return RasterImage(
        data=data.astype(np.float32),
        bands=bands,
        gsd_m=float(meta["gsd_m"]),
        units_state=meta["units_state"],
        acquisition=datetime.fromisoformat(acq) if acq else None,
    )


def write_mask(mask: MaskImage, path: PathLike) -> None:
    h, w = mask.data.shape
    with open(path, "wb") as fh:
        fh.write(_pack_header(h, w, 1, DTYPE_U8))
        fh.write(np.ascontiguousarray(mask.data, dtype=np.uint8).tobytes())


def read_mask(path: PathLike) -> MaskImage:
    data, dtype = _read_container(path)
    if dtype != DTYPE_U8 or data.shape[0] != 1:
        raise MetadataError(f"{path}: mask must be a single u8 band")
    if data.size and data.max() > 1:
        raise MaskValueError(f"{path}: mask payload contains values other than 0/1")
    return MaskImage(data[0].copy())


def write_preview(mask: MaskImage, path: PathLike) -> None:
    """Write the mask as 0/255 grayscale in the raster container (no sidecar)."""
    h, w = mask.data.shape
    with open(path, "wb") as fh:
        fh.write(_pack_header(h, w, 1, DTYPE_U8))
        fh.write((mask.data.astype(np.uint8) * 255).tobytes())


# -- checkpoints -------------------------------------------------------------

_CK_HEADER = struct.Struct("<4sHI")


def save_checkpoint(named_tensors, path: PathLike) -> None:
    """Write named float32 tensors.

    ``named_tensors`` is a mapping or an iterable of ``(name, array)`` pairs;
    names must be unique.
    """
    items = list(named_tensors.items()) if isinstance(named_tensors, Mapping) else list(named_tensors)
    seen = set()
    for name, _ in items:
        if name in seen:
            raise ConfigError(f"duplicate checkpoint entry {name!r}")
        seen.add(name)
    parts = [_CK_HEADER.pack(CHECKPOINT_MAGIC, FORMAT_VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        if arr.ndim > 255:
            raise ConfigError(f"{name}: rank too large")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: PathLike) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such checkpoint: {path}")
    buf = path.read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedError(f"{path}: truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    magic, version, count = _CK_HEADER.unpack(take(_CK_HEADER.size))
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: bad checkpoint magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        if name in out:
            raise MetadataError(f"{path}: duplicate entry {name!r}")
        out[name] = arr
    if pos != len(buf):
        raise LengthMismatchError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
