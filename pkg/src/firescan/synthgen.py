"""Deterministic synthetic 12-band scenes with elliptical fires.

Fire raises bands 9-12 only (band 12 at >= 400 K before normalization). The
visual bands 1-8 are a blend of terrain and a smoke layer; with
``smoke_opacity=1`` they are pure smoke drawn independently of the fires, so
they carry no fire signal at all.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .preprocess import PreprocessConfig, brightness_temperature_normalize
from .raster_io import AMS_BANDS, MaskImage, RasterImage

FIRE_BANDS = (9, 10, 11, 12)
VISUAL_BANDS = tuple(range(1, 9))

# background and fire reflectance ranges for bands 9-11
_BACKGROUND = {9: (0.15, 0.35), 10: (0.08, 0.25), 11: (0.02, 0.12)}
_FIRE = {9: (0.55, 0.9), 10: (0.7, 1.0), 11: (0.75, 1.0)}
BACKGROUND_TEMP_K = (285.0, 320.0)
# fixed band-10 cut that separates fire from background by construction
BAND10_THRESHOLD = 0.45


@dataclass(frozen=True)
class SceneSpec:
    height: int = 512
    width: int = 512
    n_fires: int = 4
    fire_radius_px: tuple = (4, 14)
    # if set, fires are added until this fraction of pixels burns (n_fires ignored)
    fire_fraction: Optional[float] = None
    fire_temp_k: tuple = (400.0, 700.0)
    smoke_opacity: float = 1.0
    gsd_m: float = 10.0
    texture_sigma: float = 6.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError("scene dims must be positive")
        if self.n_fires < 0:
            raise ConfigError("n_fires must be >= 0")
        lo, hi = self.fire_radius_px
        if not 0 < lo <= hi:
            raise ConfigError("fire_radius_px must be 0 < lo <= hi")
        if 2 * hi + 1 > min(self.height, self.width):
            raise ConfigError("fire larger than image")
        if self.fire_fraction is not None and not 0 <= self.fire_fraction < 1:
            raise ConfigError("fire_fraction must be in [0, 1)")
        if self.fire_temp_k[0] < 400.0:
            raise ConfigError("fire temperature must be >= 400 K")
        if not 0 <= self.smoke_opacity <= 1:
            raise ConfigError("smoke_opacity must be in [0, 1]")


def _texture(rng, shape, sigma):
    field_ = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    field_ -= field_.min()
    peak = field_.max()
    return field_ / peak if peak > 0 else field_


def _ellipse(rng, spec, shape):
    h, w = shape
    lo, hi = spec.fire_radius_px
    a = rng.uniform(lo, hi)
    b = rng.uniform(lo, hi)
    theta = rng.uniform(0, np.pi)
    cy = rng.uniform(hi, h - hi - 1)
    cx = rng.uniform(hi, w - hi - 1)
    r0, r1 = int(max(0, np.floor(cy - hi))), int(min(h, np.ceil(cy + hi) + 1))
    c0, c1 = int(max(0, np.floor(cx - hi))), int(min(w, np.ceil(cx + hi) + 1))
    yy, xx = np.mgrid[r0:r1, c0:c1]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return (r0, r1, c0, c1), inside


def fire_mask(spec: SceneSpec, rng) -> np.ndarray:
    shape = (spec.height, spec.width)
    mask = np.zeros(shape, dtype=bool)
    if spec.fire_fraction is None:
        for _ in range(spec.n_fires):
            (r0, r1, c0, c1), inside = _ellipse(rng, spec, shape)
            mask[r0:r1, c0:c1] |= inside
        return mask
    target = spec.fire_fraction * mask.size
    while mask.sum() < target:
        (r0, r1, c0, c1), inside = _ellipse(rng, spec, shape)
        mask[r0:r1, c0:c1] |= inside
    return mask


def generate_scene(spec: SceneSpec = SceneSpec(), seed: int = 0, source_id: Optional[str] = None):
    """Return ``(RasterImage, MaskImage)``; the raster is already normalized."""
    rng = np.random.default_rng(seed)
    shape = (spec.height, spec.width)
    mask = fire_mask(spec, rng)

    terrain = _texture(rng, shape, spec.texture_sigma)
    smoke = _texture(rng, shape, spec.texture_sigma * 2)
    heat_noise = _texture(rng, shape, spec.texture_sigma)
    fire_noise = rng.uniform(0.0, 1.0, size=shape)

    data = np.empty((12,) + shape, dtype=np.float32)
    alpha = spec.smoke_opacity
    for band in VISUAL_BANDS:
        surface = 0.05 + 0.35 * terrain * (0.7 + 0.05 * band)
        haze = 0.45 + 0.35 * smoke
        data[band - 1] = (1 - alpha) * surface + alpha * haze
    for band, (lo, hi) in _BACKGROUND.items():
        flo, fhi = _FIRE[band]
        background = lo + (hi - lo) * heat_noise
        hot = flo + (fhi - flo) * fire_noise
        data[band - 1] = np.where(mask, hot, background)
    t_lo, t_hi = spec.fire_temp_k
    temp = np.where(
        mask,
        t_lo + (t_hi - t_lo) * fire_noise,
        BACKGROUND_TEMP_K[0] + (BACKGROUND_TEMP_K[1] - BACKGROUND_TEMP_K[0]) * heat_noise,
    )
    data[11] = brightness_temperature_normalize(temp, PreprocessConfig())
    np.clip(data, 0.0, 1.0, out=data)

    image = RasterImage(data, AMS_BANDS, gsd_m=spec.gsd_m, units_state="normalized")
    return image, MaskImage(mask.astype(np.uint8))


def generate_patch_set(n: int, size: int = 64, positive_fraction: float = 0.5, seed: int = 0,
                       smoke_opacity: float = 1.0, fire_radius_px=(3, 8)):
    """``n`` independent single-patch scenes; exactly ``round(n * positive_fraction)`` carry fire.

    Positive patches are regenerated until they clear the patch labelling
    threshold, so labels are exact by construction.
    """
    from .dataset import DatasetSplit, grid_patches

    rng = np.random.default_rng(seed)
    n_pos = int(round(n * positive_fraction))
    flags = np.array([True] * n_pos + [False] * (n - n_pos))
    rng.shuffle(flags)
    pairs = []
    for k, positive in enumerate(flags):
        sub = int(rng.integers(0, 2**31 - 1))
        while True:
            spec = SceneSpec(size, size, n_fires=int(rng.integers(1, 4)) if positive else 0,
                             fire_radius_px=fire_radius_px, smoke_opacity=smoke_opacity)
            image, mask = generate_scene(spec, sub, source_id=f"synth-{seed}-{k}")
            (pair,) = grid_patches(image, mask, size=size, source_id=f"synth-{seed}-{k}")
            if pair[0].positive == bool(positive):
                break
            sub += 1
        pairs.append(pair)
    return DatasetSplit(pairs, "train", seed)
