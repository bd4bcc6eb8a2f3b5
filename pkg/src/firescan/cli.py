"""``firescan`` command line: prepare, train, eval, baseline, simulate, ablate, bench.

Every command reads an optional JSON config (``--config``); flags given on the
command line win over config values. Failures exit with 2 (config), 3 (data)
or 4 (anything else).
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .errors import ConfigError, DataError, FirescanError

log = logging.getLogger("firescan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

# -- run configuration -------------------------------------------------------

_SECTION_KEYS = {
    "preprocess": {"target_gsd_m", "thermal_clip_lo_k", "thermal_clip_hi_k", "reflective_clip"},
    "dataset": {"patch_size", "random_per_image", "positive_threshold"},
    "synthetic": {"train_scenes", "test_scenes", "height", "width", "fire_fraction", "n_fires",
                  "fire_radius_px", "smoke_opacity"},
    "two_tier": {"classifier_checkpoint", "segmenter_checkpoint", "threshold", "channels"},
    "ablation": {"subsets", "seeds", "kinds"},
    "simulate": {"image", "mask", "queue_depth", "threaded", "patch_size"},
    "bench": {"n_patches", "warmup", "size"},
}
_TRAIN_KEYS = {"lr", "epochs", "batch_size", "positive_weight", "oversample", "val_fraction",
               "patience"}
_PATH_KEYS = {("manifest",), ("data",), ("two_tier", "classifier_checkpoint"),
              ("two_tier", "segmenter_checkpoint"), ("simulate", "image"), ("simulate", "mask")}


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "firescan-out"
    channels: Optional[str] = None
    threshold: float = 0.5
    rate: float = 1.0
    manifest: Optional[str] = None
    data: Optional[str] = None
    preprocess: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)
    synthetic: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    two_tier: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)


def _check_keys(where, got, allowed):
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def parse_config(doc: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a config document; relative paths resolve against ``base_dir``."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    _check_keys("config", doc, top)
    for section, keys in _SECTION_KEYS.items():
        value = doc.get(section, {})
        if not isinstance(value, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        _check_keys(section, value, keys)
    train = doc.get("train", {})
    if not isinstance(train, dict):
        raise ConfigError("config section 'train' must be an object")
    _check_keys("train", train, {"classifier", "segmenter"})
    for kind, sub in train.items():
        if not isinstance(sub, dict):
            raise ConfigError(f"train.{kind} must be an object")
        _check_keys(f"train.{kind}", sub, _TRAIN_KEYS)
    doc = json.loads(json.dumps(doc))
    if base_dir is not None:
        for keypath in _PATH_KEYS:
            holder = doc
            for k in keypath[:-1]:
                holder = holder.get(k, {})
            value = holder.get(keypath[-1])
            if isinstance(value, str) and not Path(value).is_absolute():
                holder[keypath[-1]] = str(base_dir / value)
        if isinstance(doc.get("out"), str) and not Path(doc["out"]).is_absolute():
            doc["out"] = str(base_dir / doc["out"])
    return RunConfig(**doc)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent)


def _require_path(value, what):
    if not value:
        raise ConfigError(f"{what} is required")
    if not Path(value).exists():
        raise DataError(f"{what} not found: {value}")
    return Path(value)


# -- helpers -----------------------------------------------------------------

@contextlib.contextmanager
def thread_limit():
    """Cap BLAS/OpenMP pools at ``FIRESCAN_THREADS`` when it is set."""
    raw = os.environ.get("FIRESCAN_THREADS")
    if not raw:
        yield
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FIRESCAN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"FIRESCAN_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


class Output:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *lines):
        if not self.quiet:
            for line in lines:
                print(line)


def _pick(flag, section, key, default):
    """Flag value if given (0 included), else the config value, else ``default``."""
    return flag if flag is not None else section.get(key, default)


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def _report_line(r):
    ms = "" if r.mean_inference_ms is None else f"  {r.mean_inference_ms:.2f} ms/patch"
    return (f"{r.name:<16} acc {_fmt(r.accuracy)}  prec {_fmt(r.precision)}  "
            f"rec {_fmt(r.recall)}  iou {_fmt(r.iou)}{ms}")


def _channels(cfg: RunConfig):
    from .dataset import parse_channels

    return tuple(parse_channels(cfg.channels)) if cfg.channels else None


def _load_splits(cfg: RunConfig):
    from .dataset import read_patch_dataset

    data = cfg.data or str(Path(cfg.out) / "dataset")
    _require_path(data, "patch dataset")
    return read_patch_dataset(data)


def _train_config(cfg: RunConfig, kind, args=None):
    from .models import TrainConfig

    kw = dict(cfg.train.get(kind, {}))
    if args is not None:
        for name in ("epochs", "lr", "batch_size"):
            value = getattr(args, name, None)
            if value is not None:
                kw[name] = value
    kw["seed"] = cfg.seed
    kw["threshold"] = cfg.threshold
    factory = TrainConfig.for_classifier if kind == "classifier" else TrainConfig.for_segmenter
    return factory(**kw)


def _checkpoint(cfg: RunConfig, kind, override=None):
    path = override or cfg.two_tier.get(f"{kind}_checkpoint") or str(Path(cfg.out) / f"{kind}.fsck")
    return _require_path(path, f"{kind} checkpoint")


def _mapping(text):
    from .rules import BandMapping

    if not text:
        return None
    out = BandMapping()
    for part in text.split(","):
        try:
            rule_band, image_band = part.split(":")
            out[int(rule_band)] = int(image_band)
        except ValueError:
            raise ConfigError(f"bad band mapping entry {part!r} (want RULE:IMAGE)") from None
    return out


# -- commands ----------------------------------------------------------------

def cmd_prepare(cfg: RunConfig, args, say) -> int:
    from .dataset import (DatasetSplit, grid_patches, read_manifest, sample_random_patches,
                          summarize_splits, write_patch_dataset)
    from .preprocess import PreprocessConfig, preprocess_image, resample_mask
    from .raster_io import read_mask, read_raster
    from .synthgen import SceneSpec, generate_scene

    pre = PreprocessConfig(**{k: tuple(v) if k == "reflective_clip" else v
                              for k, v in cfg.preprocess.items()})
    size = int(_pick(args.patch_size, cfg.dataset, "patch_size", 256))
    threshold = cfg.dataset.get("positive_threshold", 0.005)
    n_random = int(cfg.dataset.get("random_per_image", 0))
    pairs = {"train": [], "test": []}

    def add(image, mask, split, source_id, k):
        pairs[split].extend(grid_patches(image, mask, size, source_id, threshold))
        if split == "train" and n_random:
            pairs[split].extend(sample_random_patches(image, mask, n_random, cfg.seed + k, size,
                                                      source_id, threshold))

    if args.synthetic:
        syn = cfg.synthetic
        spec_kw = {k: syn[k] for k in ("height", "width", "fire_fraction", "n_fires", "smoke_opacity")
                   if k in syn}
        if "fire_radius_px" in syn:
            spec_kw["fire_radius_px"] = tuple(syn["fire_radius_px"])
        spec_kw.setdefault("fire_fraction", 0.02)
        spec = SceneSpec(**spec_kw)
        n_train = int(syn.get("train_scenes", 4))
        n_test = int(syn.get("test_scenes", 1))
        for k in range(n_train + n_test):
            split = "train" if k < n_train else "test"
            image, mask = generate_scene(spec, seed=cfg.seed * 1000 + k)
            add(image, mask, split, f"synthetic-{k:03d}", k)
    else:
        manifest = _require_path(cfg.manifest, "manifest")
        entries = read_manifest(manifest)
        if not entries:
            raise DataError(f"manifest is empty: {manifest}")
        for k, entry in enumerate(entries):
            image = read_raster(entry.raster)
            mask = read_mask(entry.mask)
            if image.units_state != "normalized":
                mask = resample_mask(mask, image.gsd_m, pre)
                image = preprocess_image(image, pre)
            add(image, mask, entry.split, entry.raster.stem, k)

    splits = {name: DatasetSplit(p, name, cfg.seed) for name, p in pairs.items() if p}
    if not splits:
        raise DataError("no patches: every image is smaller than the patch size")
    out = Path(cfg.out) / "dataset"
    write_patch_dataset(splits, out)
    summary = summarize_splits(splits)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    say(f"wrote {summary['all']['patches']} patches to {out}")
    for name, s in summary.items():
        frac = "n/a" if s["positive_fraction"] is None else f"{100 * s['positive_fraction']:.1f}%"
        say(f"  {name:<5} {s['patches']:>5} patches, {s['positive']:>4} positive ({frac})")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args, say) -> int:
    from .models import NetworkSpec, build_network, save_network, train, write_curves_csv

    splits = _load_splits(cfg)
    if "train" not in splits:
        raise DataError("patch dataset has no train split")
    channels = _channels(cfg) or splits["train"].patches[0][0].channels
    kinds = ("classifier", "segmenter") if args.kind == "both" else (args.kind,)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        tc = _train_config(cfg, kind, args)
        net = build_network(NetworkSpec.for_channels(kind, channels), seed=cfg.seed)
        result = train(net, splits["train"], tc)
        save_network(result.network, out / f"{kind}.fsck")
        write_curves_csv(result.curves, out / f"{kind}_curves.csv")
        last = result.curves[-1]
        say(f"{kind}: {len(result.curves)} epochs, final loss {last['loss']:.5f}, "
            f"best epoch {result.best_epoch} -> {out / f'{kind}.fsck'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args, say) -> int:
    from .metrics import write_reports_csv, write_reports_json
    from .models import evaluate, load_network

    kinds = ("classifier", "segmenter") if args.kind == "both" else (args.kind,)
    override = {"classifier": args.classifier, "segmenter": args.segmenter}
    nets = {k: load_network(_checkpoint(cfg, k, override[k])) for k in kinds}
    splits = _load_splits(cfg)
    if args.split not in splits:
        raise DataError(f"patch dataset has no {args.split!r} split")
    reports = [evaluate(net, splits[args.split], cfg.threshold, average=args.average, name=kind)
               for kind, net in nets.items()]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv(reports, out / "eval.csv")
    write_reports_json(reports, out / "eval.json")
    say(*[_report_line(r) for r in reports])
    return EXIT_OK


def cmd_baseline(cfg: RunConfig, args, say) -> int:
    from .experiments import run_baseline_comparison, write_report_table
    from .models import load_network
    from .rules import SCHROEDER_RULE_TEXT

    splits = _load_splits(cfg)
    if args.split not in splits:
        raise DataError(f"patch dataset has no {args.split!r} split")
    clf = seg = None
    if not args.rule_only:
        clf = load_network(_checkpoint(cfg, "classifier", args.classifier))
        seg = load_network(_checkpoint(cfg, "segmenter", args.segmenter))
    rows = run_baseline_comparison(splits[args.split], clf, seg, args.rule or SCHROEDER_RULE_TEXT,
                                   _mapping(args.mapping), cfg.threshold)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_table(rows, out / "baseline.csv")
    write_report_table(rows, out / "baseline.json")
    say(*[_report_line(r) for r in rows])
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args, say) -> int:
    from .models import load_network
    from .pipeline import TwoTierModel, simulate_feed, write_stitch_report
    from .preprocess import PreprocessConfig, preprocess_image, resample_mask
    from .raster_io import read_mask, read_raster
    from .synthgen import SceneSpec, generate_scene

    sim = cfg.simulate
    mask = None
    if args.synthetic:
        image, mask = generate_scene(SceneSpec(fire_fraction=0.02), seed=cfg.seed)
    else:
        image = read_raster(_require_path(args.image or sim.get("image"), "simulation image"))
        mask_path = args.mask or sim.get("mask")
        if mask_path:
            mask = read_mask(_require_path(mask_path, "simulation mask"))
        if image.units_state != "normalized":
            pre = PreprocessConfig()
            if mask is not None:
                mask = resample_mask(mask, image.gsd_m, pre)
            image = preprocess_image(image, pre)
    model = TwoTierModel(load_network(_checkpoint(cfg, "classifier", args.classifier)),
                         load_network(_checkpoint(cfg, "segmenter", args.segmenter)),
                         cfg.two_tier.get("threshold", cfg.threshold))
    threaded = sim.get("threaded", True) and not args.single_threaded
    report = simulate_feed(image, model, cfg.rate, mask,
                           queue_depth=int(_pick(args.queue_depth, sim, "queue_depth", 4)),
                           size=int(sim.get("patch_size", 256)), threaded=threaded)
    paths = write_stitch_report(report, cfg.out)
    s = report.summary()
    say(f"{s['patches']} patches at {cfg.rate:g}/s, segmenter ran on {s['segmenter_calls']}",
        f"max lag {s['max_lag_s'] * 1000:.1f} ms, mean {s['mean_patch_ms']:.2f} ms/patch, "
        f"real-time contract {'held' if s['realtime_ok'] else 'VIOLATED'}",
        f"report: {paths['report']}")
    if report.evaluation is not None:
        say(_report_line(report.evaluation))
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args, say) -> int:
    from .experiments import AblationPlan, DEFAULT_SUBSETS, write_ablation_csv, write_ablation_json

    splits = _load_splits(cfg)
    for name in ("train", "test"):
        if name not in splits:
            raise DataError(f"patch dataset has no {name!r} split")
    ab = cfg.ablation
    if args.subsets:
        subsets = [s.strip() for s in args.subsets.split(";") if s.strip()]
    else:
        subsets = list(ab.get("subsets", DEFAULT_SUBSETS))
    n_seeds = args.seeds if args.seeds is not None else None
    seeds = tuple(range(cfg.seed, cfg.seed + n_seeds)) if n_seeds else tuple(ab.get("seeds", (0, 1, 2)))
    kinds = tuple(args.kinds.split(",")) if args.kinds else tuple(ab.get("kinds", ("classifier",)))
    tc = _train_config(cfg, "classifier", args)
    plan = AblationPlan(subsets, tc, seeds, kinds)
    from .experiments import run_ablation

    rows = []
    for kind in kinds:
        kind_plan = dataclasses.replace(plan, kinds=(kind,), train_config=_train_config(cfg, kind, args))
        rows += run_ablation(kind_plan, splits["train"], splits["test"])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        write_ablation_csv(rows, out / f"ablation_{kind}.csv", kind)
    write_ablation_json(rows, out / "ablation.json")
    for r in rows:
        say(f"{r.kind:<10} {r.channels:<10} acc {_fmt(r.accuracy)}  prec {_fmt(r.precision)}  "
            f"rec {_fmt(r.recall)}  iou {_fmt(r.iou)}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args, say) -> int:
    from .experiments import benchmark_inference, timing_table
    from .models import NetworkSpec, build_network, load_network

    channels = _channels(cfg) or tuple(range(1, 13))
    nets = {}
    for kind, override in (("classifier", args.classifier), ("segmenter", args.segmenter)):
        path = override or cfg.two_tier.get(f"{kind}_checkpoint")
        if path:
            nets[kind] = load_network(_require_path(path, f"{kind} checkpoint"))
        else:
            nets[kind] = build_network(NetworkSpec.for_channels(kind, channels), seed=cfg.seed)
    b = cfg.bench
    stats = benchmark_inference(nets, n_patches=int(_pick(args.n_patches, b, "n_patches", 20)),
                                warmup=int(_pick(args.warmup, b, "warmup", 2)),
                                size=int(b.get("size", 256)), seed=cfg.seed)
    rows = timing_table(stats)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(rows, indent=2))
    for r in rows:
        say(f"{r['stage']:<11} mean {r['mean_ms']:.2f} ms  p50 {r['p50_ms']:.2f}  "
            f"p95 {r['p95_ms']:.2f}  {r['fps']:.1f} fps")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "simulate": cmd_simulate,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
}


# -- argument parsing --------------------------------------------------------

def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", help="JSON run configuration")
    g.add_argument("--seed", type=int, metavar="N", help="random seed (default 0)")
    g.add_argument("--out", metavar="DIR", help="output directory (default firescan-out)")
    g.add_argument("--channels", metavar="LIST", help='band subset, e.g. "10,9,2" or "1-12"')
    g.add_argument("--threshold", type=float, metavar="F", help="decision threshold (default 0.5)")
    g.add_argument("--rate", type=float, metavar="F", help="feed rate in patches/s (default 1)")
    g.add_argument("--quiet", action="store_true", help="no summary on standard output")
    return p


def _train_flags(p):
    p.add_argument("--epochs", type=int, metavar="N", help="training epochs")
    p.add_argument("--lr", type=float, metavar="F", help="Adam learning rate")
    p.add_argument("--batch-size", type=int, metavar="N", help="minibatch size")


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(
        prog="firescan",
        description="Wildfire localization in multi-spectral aerial imagery.",
        epilog="Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime error. "
               "FIRESCAN_THREADS caps BLAS worker threads.",
    )
    parser.add_argument("--version", action="version", version=f"firescan {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("prepare", parents=[common], help="cut patch datasets from a manifest",
                       description="Preprocess manifest images and write grid patches.")
    p.add_argument("--manifest", metavar="PATH", help="dataset manifest (JSON)")
    p.add_argument("--synthetic", action="store_true", help="generate synthetic scenes instead")
    p.add_argument("--patch-size", type=int, metavar="N", help="patch size in pixels (default 256)")

    p = sub.add_parser("train", parents=[common], help="train the classifier and/or segmenter",
                       description="Train networks on a prepared patch dataset.")
    p.add_argument("--data", metavar="DIR", help="patch dataset (default OUT/dataset)")
    p.add_argument("--kind", choices=("classifier", "segmenter", "both"), default="both",
                   help="which network to train (default both)")
    _train_flags(p)

    p = sub.add_parser("eval", parents=[common], help="score checkpoints on a split",
                       description="Evaluate checkpoints and write eval.csv / eval.json.")
    p.add_argument("--data", metavar="DIR", help="patch dataset (default OUT/dataset)")
    p.add_argument("--kind", choices=("classifier", "segmenter", "both"), default="both",
                   help="which network to evaluate (default both)")
    p.add_argument("--classifier", metavar="PATH", help="classifier checkpoint")
    p.add_argument("--segmenter", metavar="PATH", help="segmenter checkpoint")
    p.add_argument("--split", default="test", help="split name (default test)")
    p.add_argument("--average", choices=("micro", "macro"), default="micro",
                   help="metric aggregation (default micro)")

    p = sub.add_parser("baseline", parents=[common], help="compare the color rule with the networks",
                       description="Score the color rule, classifier, segmenter and two-tier model.")
    p.add_argument("--data", metavar="DIR", help="patch dataset (default OUT/dataset)")
    p.add_argument("--classifier", metavar="PATH", help="classifier checkpoint")
    p.add_argument("--segmenter", metavar="PATH", help="segmenter checkpoint")
    p.add_argument("--split", default="test", help="split name (default test)")
    p.add_argument("--rule", metavar="TEXT", help="rule expression (default Schroeder)")
    p.add_argument("--mapping", metavar="MAP", help='rule->image bands, e.g. "1:2,5:7,6:9,7:10"')
    p.add_argument("--rule-only", action="store_true", help="skip the networks")

    p = sub.add_parser("simulate", parents=[common], help="stream an image through the two-tier model",
                       description="Feed grid patches at a fixed rate and stitch the masks.")
    p.add_argument("--image", metavar="PATH", help="raster to stream")
    p.add_argument("--mask", metavar="PATH", help="optional truth mask")
    p.add_argument("--synthetic", action="store_true", help="stream a generated scene")
    p.add_argument("--classifier", metavar="PATH", help="classifier checkpoint")
    p.add_argument("--segmenter", metavar="PATH", help="segmenter checkpoint")
    p.add_argument("--queue-depth", type=int, metavar="N", help="feed queue bound (default 4)")
    p.add_argument("--single-threaded", action="store_true", help="no producer thread")

    p = sub.add_parser("ablate", parents=[common], help="train per channel subset and tabulate",
                       description="Spectral ablation over channel subsets.")
    p.add_argument("--data", metavar="DIR", help="patch dataset (default OUT/dataset)")
    p.add_argument("--subsets", metavar="LIST", help='";"-separated subsets, e.g. "5,3,2;1-12"')
    p.add_argument("--seeds", type=int, metavar="N", help="number of training seeds")
    p.add_argument("--kinds", metavar="LIST", help='"classifier", "segmenter" or both, comma-separated')
    _train_flags(p)

    p = sub.add_parser("bench", parents=[common], help="time per-patch inference",
                       description="Benchmark classifier and segmenter inference.")
    p.add_argument("--classifier", metavar="PATH", help="classifier checkpoint (default fresh)")
    p.add_argument("--segmenter", metavar="PATH", help="segmenter checkpoint (default fresh)")
    p.add_argument("--n-patches", type=int, metavar="N", help="timed patches (default 20)")
    p.add_argument("--warmup", type=int, metavar="N", help="untimed warmup passes (default 2)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for name in ("seed", "out", "channels", "threshold", "rate"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "manifest", None):
        cfg.manifest = args.manifest
    if getattr(args, "data", None):
        cfg.data = args.data
    if not 0 <= cfg.threshold <= 1:
        raise ConfigError("threshold must be in [0, 1]")
    if not cfg.rate > 0:
        raise ConfigError("rate must be > 0")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    say = Output(args.quiet)
    logging.basicConfig(level=logging.WARNING, format="firescan: %(message)s")
    try:
        cfg = resolve_config(args)
        with thread_limit():
            return COMMANDS[args.command](cfg, args, say)
    except ConfigError as exc:
        print(f"firescan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"firescan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FirescanError, Exception) as exc:  # noqa: BLE001 - every failure maps to an exit code
        print(f"firescan: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
