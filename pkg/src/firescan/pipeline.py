"""Two-tier inference (classifier gate, then segmenter) and real-time feed simulation."""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import raster_io
from .dataset import PATCH_SIZE, Patch
from .errors import ConfigError, ShapeError
from .metrics import EvalReport, confusion
from .models import Network, load_network
from .raster_io import MaskImage, RasterImage


@dataclass
class TwoTierConfig:
    classifier_checkpoint: Optional[str] = None
    segmenter_checkpoint: Optional[str] = None
    threshold: float = 0.5
    # 1-based bands present in incoming patches; None means 1..C
    channels: Optional[tuple] = None


@dataclass
class TierDecision:
    probability: float
    gated: bool
    segmented: bool
    classify_ms: float
    segment_ms: float


class TwoTierModel:
    """Runs the segmenter only when the classifier probability exceeds ``threshold``."""

    def __init__(self, classifier: Network, segmenter: Network, threshold: float = 0.5):
        if classifier.kind != "classifier" or segmenter.kind != "segmenter":
            raise ConfigError("TwoTierModel needs a classifier and a segmenter")
        self.classifier = classifier
        self.segmenter = segmenter
        self.threshold = threshold
        self.segmenter_calls = 0
        self.classifier_calls = 0

    @classmethod
    def from_config(cls, cfg: TwoTierConfig) -> "TwoTierModel":
        if not cfg.classifier_checkpoint or not cfg.segmenter_checkpoint:
            raise ConfigError("two-tier config needs both checkpoints")
        model = cls(load_network(cfg.classifier_checkpoint), load_network(cfg.segmenter_checkpoint),
                    cfg.threshold)
        if cfg.channels is not None:
            for net in (model.classifier, model.segmenter):
                missing = set(net.channels) - set(cfg.channels)
                if missing:
                    raise ConfigError(f"{net.kind} needs bands {sorted(missing)} not in the feed")
        return model

    @staticmethod
    def _select(net, data, channels):
        if tuple(channels) == tuple(net.channels):
            return data
        try:
            pos = [list(channels).index(c) for c in net.channels]
        except ValueError:
            raise ShapeError(f"{net.kind} needs bands {net.channels}, patch has {tuple(channels)}") from None
        return data[pos]

    def infer(self, patch, channels=None, segment_all: bool = False):
        """Return ``(mask (H, W) uint8, TierDecision)`` for one patch.

        ``patch`` is a Patch or a ``(C, H, W)`` array holding ``channels``.
        ``segment_all`` skips the gate (always-segment baseline).
        """
        if isinstance(patch, Patch):
            data, channels = patch.data, patch.channels
        else:
            data = np.asarray(patch, dtype=np.float32)
            if data.ndim != 3:
                raise ShapeError(f"patch must be (C, H, W), got {data.shape}")
            channels = tuple(range(1, data.shape[0] + 1)) if channels is None else tuple(channels)
        if len(channels) != data.shape[0]:
            raise ShapeError(f"{data.shape[0]} planes but {len(channels)} channel labels")
        h, w = data.shape[1:]
        prob, classify_ms = 1.0, 0.0
        if not segment_all:
            x = self._select(self.classifier, data, channels)[None]
            t0 = time.perf_counter()
            prob = float(self.classifier.forward(x)[0])
            classify_ms = (time.perf_counter() - t0) * 1000.0
            self.classifier_calls += 1
        gated = segment_all or prob > self.threshold
        segment_ms = 0.0
        if gated:
            x = self._select(self.segmenter, data, channels)[None]
            t0 = time.perf_counter()
            seg = self.segmenter.forward(x)[0, 0]
            segment_ms = (time.perf_counter() - t0) * 1000.0
            self.segmenter_calls += 1
            mask = (seg > self.threshold).astype(np.uint8)
        else:
            mask = np.zeros((h, w), dtype=np.uint8)
        return mask, TierDecision(prob, gated, gated, classify_ms, segment_ms)


def two_tier_infer(patch, model: TwoTierModel, channels=None):
    return model.infer(patch, channels)


# -- grid and stitching ------------------------------------------------------

def grid_positions(height, width, size=PATCH_SIZE):
    """Row-major (row, col) tile indices: left-to-right, top-to-bottom."""
    return [(r, c) for r in range(height // size) for c in range(width // size)]


def stitch(masks, positions, full_dims, size=PATCH_SIZE) -> MaskImage:
    """Place tile masks at their grid positions; borders outside the grid stay zero."""
    h, w = full_dims
    expected = set(grid_positions(h, w, size))
    positions = [tuple(p) for p in positions]
    if len(set(positions)) != len(positions):
        raise ConfigError("duplicate tile position")
    unknown = set(positions) - expected
    if unknown:
        raise ConfigError(f"tile position(s) outside the grid: {sorted(unknown)}")
    missing = expected - set(positions)
    if missing:
        raise ConfigError(f"missing tile(s): {sorted(missing)}")
    out = np.zeros((h, w), dtype=np.uint8)
    for m, (r, c) in zip(masks, positions):
        m = np.asarray(m)
        if m.shape != (size, size):
            raise ShapeError(f"tile mask shape {m.shape} != ({size}, {size})")
        out[r * size:(r + 1) * size, c * size:(c + 1) * size] = m
    return MaskImage(out)


def _tile(image: RasterImage, r, c, size):
    return image.data[:, r * size:(r + 1) * size, c * size:(c + 1) * size]


def infer_offline(image: RasterImage, model: TwoTierModel, size=PATCH_SIZE) -> MaskImage:
    """Whole-image inference without feed timing; same per-tile computation as the stream."""
    positions = grid_positions(image.height, image.width, size)
    channels = tuple(image.band_indices)
    masks = [model.infer(_tile(image, r, c, size), channels)[0] for r, c in positions]
    return stitch(masks, positions, (image.height, image.width), size)


# -- feed simulation ---------------------------------------------------------

@dataclass
class FeedEvent:
    patch: np.ndarray
    row: int
    col: int
    arrival_s: float


@dataclass
class StitchReport:
    mask: MaskImage
    decisions: list
    rate: float
    queue_depth: int
    max_queue_depth: int
    overflow: bool
    max_lag_s: float
    mean_lag_s: float
    mean_patch_ms: float
    wall_s: float
    evaluation: Optional[EvalReport] = None

    @property
    def realtime_ok(self) -> bool:
        return not self.overflow

    def summary(self) -> dict:
        d = {
            "rate": self.rate,
            "queue_depth": self.queue_depth,
            "max_queue_depth": self.max_queue_depth,
            "overflow": self.overflow,
            "realtime_ok": self.realtime_ok,
            "max_lag_s": self.max_lag_s,
            "mean_lag_s": self.mean_lag_s,
            "mean_patch_ms": self.mean_patch_ms,
            "wall_s": self.wall_s,
            "patches": len(self.decisions),
            "segmenter_calls": sum(d["segmented"] for d in self.decisions),
            "height": self.mask.height,
            "width": self.mask.width,
        }
        if self.evaluation is not None:
            d["evaluation"] = self.evaluation.to_dict()
        return d

    def to_dict(self) -> dict:
        return {"summary": self.summary(), "decisions": self.decisions}


def _decision_row(ev, decision, start, done):
    return {
        "row": ev.row,
        "col": ev.col,
        "arrival_s": ev.arrival_s,
        "start_s": start,
        "done_s": done,
        "lag_s": done - ev.arrival_s,
        **asdict(decision),
    }


def simulate_feed(image: RasterImage, model: TwoTierModel, rate: float, mask: Optional[MaskImage] = None,
                  queue_depth: int = 4, size: int = PATCH_SIZE, threaded: bool = True) -> StitchReport:
    """Feed grid tiles row-major at ``rate`` patches/s through a bounded FIFO.

    Threaded mode runs a real producer and consumer; the producer flags an
    overflow if the queue is full when a tile arrives. The single-threaded
    mode runs tiles back to back and replays the same bounded-queue schedule
    on a virtual clock built from the measured inference times.
    """
    if not rate > 0:
        raise ConfigError("feed rate must be > 0")
    if queue_depth < 1:
        raise ConfigError("queue depth must be >= 1")
    if size < 1:
        raise ConfigError("patch size must be >= 1")
    if image.units_state != "normalized":
        raise ConfigError("feed image must be normalized")
    positions = grid_positions(image.height, image.width, size)
    channels = tuple(image.band_indices)
    period = 1.0 / rate
    results = {}
    t_start = time.perf_counter()

    if threaded:
        q = queue.Queue(maxsize=queue_depth)
        state = {"overflow": False, "max_depth": 0}

        def producer():
            t0 = time.perf_counter()
            for k, (r, c) in enumerate(positions):
                due = t0 + k * period
                delay = due - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                ev = FeedEvent(_tile(image, r, c, size), r, c, time.perf_counter() - t_start)
                try:
                    q.put_nowait(ev)
                except queue.Full:
                    state["overflow"] = True
                    q.put(ev)
                state["max_depth"] = max(state["max_depth"], q.qsize())
            q.put(None)

        worker = threading.Thread(target=producer, name="firescan-feed", daemon=True)
        worker.start()
        while True:
            ev = q.get()
            if ev is None:
                break
            start = time.perf_counter() - t_start
            tile_mask, decision = model.infer(ev.patch, channels)
            done = time.perf_counter() - t_start
            results[(ev.row, ev.col)] = (tile_mask, _decision_row(ev, decision, start, done))
        worker.join()
        overflow, max_depth = state["overflow"], state["max_depth"]
    else:
        overflow, max_depth = False, 0
        starts = []
        prev_done = 0.0
        for k, (r, c) in enumerate(positions):
            arrival = k * period
            waiting = sum(1 for s in starts if s > arrival)
            if waiting >= queue_depth:
                overflow = True
            max_depth = max(max_depth, min(waiting + 1, queue_depth))
            ev = FeedEvent(_tile(image, r, c, size), r, c, arrival)
            t0 = time.perf_counter()
            tile_mask, decision = model.infer(ev.patch, channels)
            duration = time.perf_counter() - t0
            start = max(arrival, prev_done)
            prev_done = start + duration
            starts.append(start)
            results[(r, c)] = (tile_mask, _decision_row(ev, decision, start, prev_done))

    wall = time.perf_counter() - t_start
    ordered = [results[p] for p in positions]
    stitched = stitch([m for m, _ in ordered], positions, (image.height, image.width), size)
    decisions = [d for _, d in ordered]
    lags = [d["lag_s"] for d in decisions] or [0.0]
    per_patch = [(d["classify_ms"] + d["segment_ms"]) for d in decisions] or [0.0]
    evaluation = None
    if mask is not None:
        if (mask.height, mask.width) != (image.height, image.width):
            raise ShapeError("truth mask does not match image")
        evaluation = EvalReport.from_counts(confusion(stitched.data, mask.data), name="two-tier",
                                            mean_inference_ms=float(np.mean(per_patch)),
                                            patches_evaluated=len(positions))
    return StitchReport(
        mask=stitched,
        decisions=decisions,
        rate=rate,
        queue_depth=queue_depth,
        max_queue_depth=max_depth,
        overflow=overflow,
        max_lag_s=float(max(lags)),
        mean_lag_s=float(np.mean(lags)),
        mean_patch_ms=float(np.mean(per_patch)),
        wall_s=wall,
        evaluation=evaluation,
    )


def write_stitch_report(report: StitchReport, out_dir, preview: bool = True) -> dict:
    """Write ``stitch_report.json``, ``stitched_mask.msrf`` and optionally a 0/255 preview."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out_dir / "stitch_report.json",
        "mask": out_dir / "stitched_mask.msrf",
    }
    paths["report"].write_text(json.dumps(report.to_dict(), indent=2))
    raster_io.write_mask(report.mask, paths["mask"])
    if preview:
        paths["preview"] = out_dir / "stitched_preview.msrf"
        raster_io.write_preview(report.mask, paths["preview"])
    return paths
