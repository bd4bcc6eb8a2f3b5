"""Patch classifier and encoder-decoder segmenter: assembly, training, evaluation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import raster_io
from .dataset import DatasetSplit, oversample_positives, select_channels
from .errors import ConfigError, DataError, ShapeError
from .metrics import ConfusionCounts, EvalReport, confusion, macro_metrics, metrics_from_counts, timing_stats
from .nn import functional as F
from .nn.layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2,
    Dense,
    GlobalMaxPool,
    MaxPool2,
    ReLU,
    Sequential,
)
from .nn.optim import AdamState, adam_step

log = logging.getLogger(__name__)

KINDS = ("classifier", "segmenter")
DEFAULT_WIDTHS = {"classifier": (16, 32, 64), "segmenter": (64, 128)}
DEFAULT_DECODER_WIDTHS = (64, 64)


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    in_channels: int = 12
    widths: Optional[tuple] = None
    kernel: int = 3
    decoder_widths: tuple = DEFAULT_DECODER_WIDTHS
    # 1-based band indices the network consumes, in order
    channels: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown network kind {self.kind!r}")
        if self.widths is None:
            object.__setattr__(self, "widths", DEFAULT_WIDTHS[self.kind])
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "decoder_widths", tuple(int(w) for w in self.decoder_widths))
        if self.channels is None:
            object.__setattr__(self, "channels", tuple(range(1, self.in_channels + 1)))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if len(self.channels) != self.in_channels:
            raise ConfigError(f"{len(self.channels)} channels listed for in_channels={self.in_channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("kernel size must be odd and positive")
        if any(w < 1 for w in self.widths + self.decoder_widths):
            raise ConfigError("layer widths must be positive")
        if self.kind == "classifier" and len(self.widths) != 3:
            raise ConfigError("classifier has exactly 3 encoder stages")
        if self.kind == "segmenter" and (len(self.widths) != 2 or len(self.decoder_widths) != 2):
            raise ConfigError("segmenter has exactly 2 encoder and 2 decoder stages")

    @classmethod
    def for_channels(cls, kind, channels, **kw):
        channels = tuple(channels)
        return cls(kind, in_channels=len(channels), channels=channels, **kw)


def expected_param_count(spec: NetworkSpec) -> int:
    """Closed-form parameter count (excluding batch-norm running buffers)."""
    k2 = spec.kernel * spec.kernel
    if spec.kind == "classifier":
        total, c = 0, spec.in_channels
        for w in spec.widths:
            total += c * w * k2 + w + 2 * w
            c = w
        return total + c + 1
    c = spec.in_channels
    e1, e2 = spec.widths
    d1, d2 = spec.decoder_widths
    total = c * e1 * k2 + e1 + 2 * e1
    total += e1 * e2 * k2 + e2 + 2 * e2
    total += e2 * d1 * 4 + d1
    total += (d1 + e2) * d2 * 4 + d2
    total += (d2 + e1) + 1
    return total


class Network:
    """Shared plumbing: named parameters, buffers, checkpoint state."""

    spec: NetworkSpec
    downsample = 1

    def named_params(self):
        raise NotImplementedError

    def named_buffers(self):
        raise NotImplementedError

    @property
    def kind(self):
        return self.spec.kind

    @property
    def channels(self):
        return self.spec.channels

    def params(self) -> dict:
        return dict(self.named_params())

    def param_count(self) -> int:
        return sum(t.values.size for _, t in self.named_params())

    def zero_grad(self):
        for _, t in self.named_params():
            t.grad = None

    def layers(self):
        raise NotImplementedError

    def astype(self, dtype):
        """Cast parameters and buffers in place (float64 is used by gradient checks)."""
        for layer in self.layers():
            for t in layer.params.values():
                t.values = t.values.astype(dtype)
            for k in layer.buffers:
                layer.buffers[k] = layer.buffers[k].astype(dtype)
        return self

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"{self.kind} expects (N, {self.spec.in_channels}, H, W) input, got {x.shape}"
            )
        h, w = x.shape[2:]
        if h % self.downsample or w % self.downsample:
            raise ShapeError(f"{self.kind} needs H and W divisible by {self.downsample}, got {h}x{w}")

    def forward(self, x, train=False):
        return F.sigmoid(self.forward_logits(x, train))

    __call__ = forward

    def state_dict(self) -> dict:
        spec = self.spec
        state = {
            "meta.kind": np.array([KINDS.index(spec.kind)], dtype=np.float32),
            "meta.in_channels": np.array([spec.in_channels], dtype=np.float32),
            "meta.widths": np.array(spec.widths, dtype=np.float32),
            "meta.kernel": np.array([spec.kernel], dtype=np.float32),
            "meta.decoder_widths": np.array(spec.decoder_widths, dtype=np.float32),
            "meta.channels": np.array(spec.channels, dtype=np.float32),
        }
        for name, t in self.named_params():
            state[name] = t.values.copy()
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state(self, state: dict) -> None:
        for name, t in self.named_params():
            if name not in state:
                raise DataError(f"checkpoint is missing parameter {name!r}")
            if state[name].shape != t.values.shape:
                raise DataError(f"{name}: checkpoint shape {state[name].shape} != {t.values.shape}")
            t.values[...] = state[name]
        for name, b in self.named_buffers():
            if name not in state:
                raise DataError(f"checkpoint is missing buffer {name!r}")
            b[...] = state[name]


class Classifier(Network):
    """Three conv->ReLU->BN->maxpool stages, global max pool, dense(1), sigmoid."""

    downsample = 8

    def __init__(self, spec: NetworkSpec = None, seed: int = 0, zero_head: bool = False):
        spec = spec or NetworkSpec("classifier")
        if spec.kind != "classifier":
            raise ConfigError("Classifier needs a classifier spec")
        self.spec = spec
        rng = np.random.default_rng(seed)
        layers, c = [], spec.in_channels
        for w in spec.widths:
            layers += [Conv2d(c, w, spec.kernel, rng=rng), ReLU(), BatchNorm2d(w), MaxPool2()]
            c = w
        self.encoder = Sequential(*layers)
        self.pool = GlobalMaxPool()
        self.head = Dense(c, 1, rng=rng)
        if zero_head:
            self.head.params["weight"].values[...] = 0.0

    def named_params(self):
        yield from self.encoder.named_params("encoder.")
        for name, t in self.head.params.items():
            yield f"head.{name}", t

    def named_buffers(self):
        yield from self.encoder.named_buffers("encoder.")

    def layers(self):
        return self.encoder.layers + [self.head]

    def forward_logits(self, x, train=False):
        self._check_input(x)
        feats = self.pool.forward(self.encoder.forward(x, train), train)
        return self.head.forward(feats, train)[:, 0]

    def backward_logits(self, dlogits):
        d = self.head.backward(dlogits[:, None])
        self.encoder.backward(self.pool.backward(d))


class Segmenter(Network):
    """Two-stage encoder, two transposed-conv decoder stages with concatenated skips.

    encoder:  e1 = BN(ReLU(conv(x)))            H      widths[0]
              e2 = BN(ReLU(conv(pool(e1))))     H/2    widths[1]
              z  = pool(e2)                     H/4    bottleneck
    decoder:  d1 = ReLU(tconv(z))               H/2    decoder_widths[0]
              d2 = ReLU(tconv([d1, e2]))        H      decoder_widths[1]
              logits = conv1x1([d2, e1])        H      1
    """

    downsample = 4

    def __init__(self, spec: NetworkSpec = None, seed: int = 0):
        spec = spec or NetworkSpec("segmenter")
        if spec.kind != "segmenter":
            raise ConfigError("Segmenter needs a segmenter spec")
        self.spec = spec
        rng = np.random.default_rng(seed)
        c = spec.in_channels
        e1, e2 = spec.widths
        d1, d2 = spec.decoder_widths
        self.enc1 = Sequential(Conv2d(c, e1, spec.kernel, rng=rng), ReLU(), BatchNorm2d(e1))
        self.pool1 = MaxPool2()
        self.enc2 = Sequential(Conv2d(e1, e2, spec.kernel, rng=rng), ReLU(), BatchNorm2d(e2))
        self.pool2 = MaxPool2()
        self.dec1 = Sequential(ConvTranspose2(e2, d1, rng=rng), ReLU())
        self.dec2 = Sequential(ConvTranspose2(d1 + e2, d2, rng=rng), ReLU())
        self.head = Conv2d(d2 + e1, 1, kernel=1, pad=0, rng=rng)
        # test hook: zero the skip inputs to the decoder
        self.disable_skips = False

    def _blocks(self):
        return (("enc1", self.enc1), ("enc2", self.enc2), ("dec1", self.dec1), ("dec2", self.dec2))

    def named_params(self):
        for prefix, block in self._blocks():
            yield from block.named_params(prefix + ".")
        for name, t in self.head.params.items():
            yield f"head.{name}", t

    def named_buffers(self):
        for prefix, block in self._blocks():
            yield from block.named_buffers(prefix + ".")

    def layers(self):
        return [l for _, block in self._blocks() for l in block.layers] + [self.head]

    def encode(self, x, train=False):
        self._check_input(x)
        e1 = self.enc1.forward(x, train)
        e2 = self.enc2.forward(self.pool1.forward(e1), train)
        return e1, e2, self.pool2.forward(e2)

    def forward_logits(self, x, train=False):
        e1, e2, z = self.encode(x, train)
        if self.disable_skips:
            e1, e2 = np.zeros_like(e1), np.zeros_like(e2)
        d1 = self.dec1.forward(z, train)
        cat1, self._split1 = F.concat_channels_forward(d1, e2)
        d2 = self.dec2.forward(cat1, train)
        cat2, self._split2 = F.concat_channels_forward(d2, e1)
        return self.head.forward(cat2, train)

    def backward_logits(self, dlogits):
        dcat2 = self.head.backward(dlogits)
        dd2, de1 = F.concat_channels_backward(dcat2, self._split2)
        dcat1 = self.dec2.backward(dd2)
        dd1, de2 = F.concat_channels_backward(dcat1, self._split1)
        dz = self.dec1.backward(dd1)
        if self.disable_skips:
            de1, de2 = np.zeros_like(de1), np.zeros_like(de2)
        de2 = de2 + self.pool2.backward(dz)
        de1 = de1 + self.pool1.backward(self.enc2.backward(de2))
        self.enc1.backward(de1)


def build_classifier(spec: NetworkSpec = None, seed: int = 0, zero_head: bool = False) -> Classifier:
    return Classifier(spec, seed=seed, zero_head=zero_head)


def build_segmenter(spec: NetworkSpec = None, seed: int = 0) -> Segmenter:
    return Segmenter(spec, seed=seed)


def build_network(spec: NetworkSpec, seed: int = 0) -> Network:
    return Classifier(spec, seed) if spec.kind == "classifier" else Segmenter(spec, seed)


def spec_from_state(state: dict) -> NetworkSpec:
    try:
        kind = KINDS[int(state["meta.kind"][0])]
        return NetworkSpec(
            kind=kind,
            in_channels=int(state["meta.in_channels"][0]),
            widths=tuple(int(v) for v in state["meta.widths"]),
            kernel=int(state["meta.kernel"][0]),
            decoder_widths=tuple(int(v) for v in state["meta.decoder_widths"]),
            channels=tuple(int(v) for v in state["meta.channels"]),
        )
    except (KeyError, IndexError) as exc:
        raise DataError(f"checkpoint lacks network metadata ({exc})") from None


def save_network(net: Network, path) -> None:
    raster_io.save_checkpoint(net.state_dict(), path)


def load_network(path) -> Network:
    state = raster_io.load_checkpoint(path)
    net = build_network(spec_from_state(state))
    net.load_state(state)
    return net


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 7.5e-4
    epochs: int = 500
    batch_size: int = 16
    positive_weight: float = 1.0
    seed: int = 0
    channels: Optional[tuple] = None
    oversample: bool = True
    # fraction of training flights (source ids) held out for checkpoint selection
    val_fraction: float = 0.1
    patience: Optional[int] = None
    threshold: float = 0.5
    lr_schedule: Optional[Callable[[int], float]] = None
    # called with each epoch's curve row; returning True ends training
    stop_when: Optional[Callable[[dict], bool]] = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.positive_weight > 0:
            raise ConfigError("positive_weight must be > 0")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")

    @classmethod
    def for_classifier(cls, **kw):
        kw.setdefault("lr", 7.5e-4)
        kw.setdefault("positive_weight", 1.0)
        return cls(**kw)

    @classmethod
    def for_segmenter(cls, **kw):
        kw.setdefault("lr", 3e-4)
        kw.setdefault("positive_weight", 50.0)
        kw.setdefault("oversample", False)
        return cls(**kw)


@dataclass
class TrainResult:
    network: Network
    curves: list
    best_epoch: int
    best_score: Optional[float] = None
    checkpoint: dict = field(default_factory=dict)


def _align_channels(net: Network, split: DatasetSplit) -> DatasetSplit:
    if not split.patches:
        return split
    have = split.patches[0][0].channels
    if tuple(have) == tuple(net.channels):
        return split
    return select_channels(split, net.channels)


def holdout_sources(split: DatasetSplit, fraction: float, seed: int):
    """Hold out ``ceil(fraction * n_sources)`` whole flights for validation."""
    sources = split.source_ids()
    if fraction <= 0 or len(sources) < 2:
        return split, None
    n_val = min(len(sources) - 1, max(1, math.ceil(fraction * len(sources))))
    rng = np.random.default_rng(seed)
    val_ids = [sources[i] for i in sorted(rng.choice(len(sources), size=n_val, replace=False))]
    train_ids = [s for s in sources if s not in val_ids]
    val = split.subset_by_source(val_ids)
    return split.subset_by_source(train_ids), replace(val, split="val")


def _targets(net, split):
    if net.kind == "classifier":
        return split.labels().astype(np.float32)
    return split.masks()[:, None].astype(np.float32)


def _score(net, report: EvalReport):
    value = report.accuracy if net.kind == "classifier" else report.iou
    return -1.0 if value is None else value


def train(net: Network, split: DatasetSplit, cfg: TrainConfig,
          val_split: Optional[DatasetSplit] = None) -> TrainResult:
    """Fit ``net`` in place.

    Classifier: positives are oversampled to balance the classes. Segmenter:
    only positive patches are used. When a validation split is available (given
    or held out by flight), the parameters of the best validation epoch are
    restored at the end.
    """
    if not len(split):
        raise DataError("training split is empty")
    split = _align_channels(net, split)
    if val_split is None:
        split, val_split = holdout_sources(split, cfg.val_fraction, cfg.seed)
    elif len(val_split):
        val_split = _align_channels(net, val_split)
    if net.kind == "segmenter":
        split = split.positives()
        if not len(split):
            raise DataError("segmenter training needs positive patches")
    elif cfg.oversample:
        split = oversample_positives(split, cfg.seed)

    x_all = split.images()
    y_all = _targets(net, split)
    n = len(x_all)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr, schedule=cfg.lr_schedule)
    named = dict(net.named_params())
    values = {k: t.values for k, t in named.items()}

    curves = []
    best_score, best_epoch, best_state = None, cfg.epochs, None
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        counts = ConfusionCounts()
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            probs = net.forward(xb, train=True)
            loss, _ = F.weighted_bce_forward(probs, yb, cfg.positive_weight)
            loss_sum += loss * len(idx)
            net.backward_logits(F.weighted_bce_logits_backward(probs, yb, cfg.positive_weight))
            adam_step(values, {k: t.grad for k, t in named.items()}, state)
            counts = counts + confusion(probs > cfg.threshold, yb > 0.5)
        m = metrics_from_counts(counts)
        row = {"epoch": epoch, "loss": loss_sum / n, "acc": m["accuracy"],
               "iou": m["iou"] if net.kind == "segmenter" else None}
        if val_split is not None and len(val_split):
            report = evaluate(net, val_split, cfg.threshold, timed=False)
            score = _score(net, report)
            row["val_score"] = score
            if best_score is None or score > best_score:
                best_score, best_epoch, best_state = score, epoch, net.state_dict()
                since_best = 0
            else:
                since_best += 1
        curves.append(row)
        log.debug("epoch %d loss %.5f acc %s", epoch, row["loss"], row["acc"])
        if cfg.patience is not None and since_best > cfg.patience:
            break
        if cfg.stop_when is not None and cfg.stop_when(row):
            break
    if best_state is not None:
        net.load_state(best_state)
    else:
        best_epoch = len(curves)
    return TrainResult(net, curves, best_epoch, best_score, net.state_dict())


def write_curves_csv(curves, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "acc", "iou"])
        for row in curves:
            w.writerow([row["epoch"], row["loss"],
                        "" if row["acc"] is None else row["acc"],
                        "" if row.get("iou") is None else row["iou"]])


# -- evaluation --------------------------------------------------------------

def predict(net: Network, x, batch_size: int = 16):
    """Inference-mode probabilities for an ``(N, C, H, W)`` array."""
    outs = [net.forward(x[i:i + batch_size], train=False) for i in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0,), dtype=np.float32)


def evaluate(net: Network, split: DatasetSplit, threshold: float = 0.5, average: str = "micro",
             timed: bool = True, name: str = "") -> EvalReport:
    """Score ``net`` on ``split`` in inference mode.

    Classifier metrics are per patch; segmenter metrics are per pixel.
    A prediction is positive when its probability is strictly above ``threshold``.
    When ``timed`` each patch runs alone so the mean per-patch latency is recorded.
    """
    if not len(split):
        raise DataError("evaluation split is empty")
    if average not in ("micro", "macro"):
        raise ConfigError("average must be 'micro' or 'macro'")
    split = _align_channels(net, split)
    x = split.images()
    truth = _targets(net, split) > 0.5
    durations = []
    if timed:
        probs = []
        for i in range(len(x)):
            t0 = time.perf_counter()
            probs.append(net.forward(x[i:i + 1], train=False))
            durations.append(time.perf_counter() - t0)
        probs = np.concatenate(probs)
    else:
        probs = predict(net, x)
    pred = probs > threshold
    counts = confusion(pred, truth)
    if average == "macro" and net.kind == "segmenter":
        metrics = macro_metrics([confusion(p, t) for p, t in zip(pred, truth)])
    else:
        metrics = metrics_from_counts(counts)
    mean_ms = timing_stats(durations).mean_ms if durations else None
    return EvalReport(**metrics, mean_inference_ms=mean_ms, patches_evaluated=len(x),
                      counts=counts, name=name or net.kind)
