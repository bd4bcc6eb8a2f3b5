"""Radiometric normalization and resampling to a common ground sample distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError
from .raster_io import MaskImage, RasterImage


@dataclass(frozen=True)
class PreprocessConfig:
    target_gsd_m: float = 10.0
    thermal_clip_lo_k: float = 250.0
    thermal_clip_hi_k: float = 500.0
    reflective_clip: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not self.thermal_clip_lo_k < self.thermal_clip_hi_k:
            raise ConfigError("thermal_clip_lo_k must be < thermal_clip_hi_k")
        if not self.target_gsd_m > 0:
            raise ConfigError("target_gsd_m must be > 0")
        lo, hi = self.reflective_clip
        if not lo < hi:
            raise ConfigError("reflective_clip must be an increasing pair")


def _check_finite(arr):
    if not np.isfinite(arr).all():
        raise NonFiniteError("input contains NaN or Inf")


def reflectance_normalize(radiance, irradiance, clip=(0.0, 1.0)):
    """Approximate TOA reflectance: ``clamp(L / E, 0, 1)``. No solar zenith term."""
    if not irradiance > 0:
        raise ConfigError(f"solar irradiance must be > 0, got {irradiance}")
    radiance = np.asarray(radiance, dtype=np.float64)
    _check_finite(radiance)
    return np.clip(radiance / irradiance, clip[0], clip[1]).astype(np.float32)


def brightness_temperature_normalize(temperature_k, cfg: PreprocessConfig = PreprocessConfig()):
    """Clip brightness temperature to ``[lo, hi]`` kelvin and map linearly onto [0, 1]."""
    t = np.asarray(temperature_k, dtype=np.float64)
    _check_finite(t)
    lo, hi = cfg.thermal_clip_lo_k, cfg.thermal_clip_hi_k
    return ((np.clip(t, lo, hi) - lo) / (hi - lo)).astype(np.float32)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resampled_shape(height, width, gsd_m, target_gsd_m):
    scale = gsd_m / target_gsd_m
    out = (_round_half_up(height * scale), _round_half_up(width * scale))
    if out[0] < 1 or out[1] < 1:
        raise ConfigError(f"resampling {height}x{width} to {target_gsd_m} m gives an empty image")
    return out


def _linear_taps(n_in, n_out):
    # pixel-centre alignment, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def _nearest_taps(n_in, n_out):
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.intp)
    return np.clip(idx, 0, n_in - 1)


def bilinear_resize(planes: np.ndarray, out_hw) -> np.ndarray:
    """Bilinear resize of ``(..., H, W)`` planes to ``out_hw``."""
    planes = np.asarray(planes, dtype=np.float64)
    h, w = planes.shape[-2:]
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return planes.copy()
    r0, r1, fr = _linear_taps(h, oh)
    c0, c1, fc = _linear_taps(w, ow)
    rows = planes[..., r0, :] * (1 - fr)[:, None] + planes[..., r1, :] * fr[:, None]
    return rows[..., c0] * (1 - fc) + rows[..., c1] * fc


def nearest_resize(planes: np.ndarray, out_hw) -> np.ndarray:
    h, w = planes.shape[-2:]
    rows = _nearest_taps(h, out_hw[0])
    cols = _nearest_taps(w, out_hw[1])
    return planes[..., rows, :][..., cols]


def resample_to_gsd(image: RasterImage, cfg: PreprocessConfig = PreprocessConfig()) -> RasterImage:
    out_hw = resampled_shape(image.height, image.width, image.gsd_m, cfg.target_gsd_m)
    data = bilinear_resize(image.data, out_hw).astype(np.float32)
    if image.units_state == "normalized":
        # float32 rounding of a convex combination can leave [0, 1] by an ulp
        np.clip(data, 0.0, 1.0, out=data)
    return image.with_data(data, gsd_m=cfg.target_gsd_m)


def resample_mask(mask: MaskImage, gsd_m: float, cfg: PreprocessConfig = PreprocessConfig()) -> MaskImage:
    out_hw = resampled_shape(mask.height, mask.width, gsd_m, cfg.target_gsd_m)
    return MaskImage(nearest_resize(mask.data, out_hw))


def preprocess_image(image: RasterImage, cfg: PreprocessConfig = PreprocessConfig()) -> RasterImage:
    """Normalize every band to [0, 1] and resample to ``cfg.target_gsd_m``.

    Reflective bands are divided by their band-averaged solar irradiance;
    thermal bands are expected in kelvin (converted onboard the sensor).
    """
    if image.units_state == "normalized":
        raise ConfigError("image is already normalized")
    has_thermal = any(b.kind == "thermal" for b in image.bands)
    if image.units_state == "raw_radiance" and has_thermal:
        raise ConfigError("thermal band must already be brightness temperature (kelvin)")
    out = np.empty_like(image.data)
    for pos, band in enumerate(image.bands):
        if band.kind == "thermal":
            out[pos] = brightness_temperature_normalize(image.data[pos], cfg)
        else:
            out[pos] = reflectance_normalize(image.data[pos], band.solar_irradiance, cfg.reflective_clip)
    normalized = image.with_data(out, units_state="normalized")
    return resample_to_gsd(normalized, cfg)
