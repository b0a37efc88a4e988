"""Command-line entry point: ``hmtnet <subcommand> ...``.

Subcommands: prepare, synth, train, eval, infer, bench, ablate.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .camera import Intrinsics
from .config import load_config, parse_overrides, write_config
from .errors import HMTNetError
from .evaluation import bench_inference, evaluate
from .network import build, load_network
from .preprocessing import DepthFrame, compute_com, crop_normalize, denormalize_prediction
from .tensor import no_grad
from .training import run_ablation, train

log = logging.getLogger("hmtnet")


def _subset(desc, start: int, count: int | None):
    stop = len(desc) if count is None else min(len(desc), start + count)
    if start == 0 and stop == len(desc):
        return desc
    return desc.subset(range(start, stop))


def cmd_prepare(args) -> int:
    if args.format == "msra":
        desc = data_io.import_msra(args.root, limit=args.limit)
    elif args.format == "icvl":
        desc = data_io.import_icvl(args.labels, args.root, limit=args.limit)
    else:
        desc = data_io.import_nyu(args.labels, args.root, limit=args.limit)
    desc = _subset(desc, args.start, args.count)
    path = data_io.write_dataset(desc, args.out)
    print(f"wrote {len(desc)} frames to {path}")
    return 0


def cmd_synth(args) -> int:
    spec = data_io.SyntheticSpec(seed=args.seed, topology=args.topology,
                                 blob_radius=args.blob_radius)
    desc = data_io.generate_synthetic(spec, args.n)
    path = data_io.write_dataset(desc, args.out)
    print(f"wrote {len(desc)} synthetic frames to {path}")
    return 0


def _configs(args):
    return load_config(args.config, parse_overrides(args.set))


def cmd_train(args) -> int:
    net_cfg, train_cfg = _configs(args)
    dataset = _subset(data_io.read_dataset(args.data), args.start, args.count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.cfg", net_cfg, train_cfg)
    net = build(net_cfg, np.random.default_rng(train_cfg.seed), np.dtype(train_cfg.dtype))
    result = train(net, dataset, train_cfg, out)
    print(f"trained {train_cfg.epochs} epochs in {result.seconds:.1f}s; checkpoint {result.checkpoint}")
    return 0


def _write_report(report, out: Path, prefix: str = "") -> None:
    out.mkdir(parents=True, exist_ok=True)
    report.write_success_csv(out / f"{prefix}success.csv")
    report.write_per_joint_csv(out / f"{prefix}success_per_joint.csv")
    summary = {
        "frames": report.frame_count,
        "mean_error_mm": report.mean_error_mm,
        "per_joint_error_mm": report.per_joint_error_mm.tolist(),
    }
    (out / f"{prefix}report.json").write_text(json.dumps(summary, indent=1) + "\n")


def cmd_eval(args) -> int:
    net, _ = load_network(args.checkpoint)
    dataset = _subset(data_io.read_dataset(args.data), args.start, args.count)
    report = evaluate(net, dataset)
    _write_report(report, Path(args.out))
    print(f"{report.frame_count} frames: mean error {report.mean_error_mm:.3f} mm")
    return 0


def _read_frame(path: Path, encoding: str) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".bin":
        return data_io.read_msra_bin(path)
    if suffix == ".png":
        return data_io.read_png_depth(path, encoding)
    return data_io.read_depth_file(path)


def cmd_infer(args) -> int:
    net, _ = load_network(args.checkpoint)
    if args.intrinsics:
        k = Intrinsics(*args.intrinsics)
    else:
        k = data_io.DEFAULT_INTRINSICS[net.config.dataset]
    frame = DepthFrame(_read_frame(Path(args.frame), args.png_encoding), k)
    crop = compute_com(frame)
    patch = crop_normalize(frame, crop, net.config.input_size)
    with no_grad():
        out = net.forward(patch.values[None, None].astype(net.dtype)).joints.data[0]
    for x, y, z in denormalize_prediction(out, crop, net.topology.J):
        print(f"{x:.3f} {y:.3f} {z:.3f}")
    return 0


def cmd_bench(args) -> int:
    if args.checkpoint:
        net, _ = load_network(args.checkpoint)
    else:
        net_cfg, train_cfg = _configs(args)
        net = build(net_cfg, np.random.default_rng(train_cfg.seed))
    report = bench_inference(net, args.frames, args.batch_size)
    print(report.summary())
    return 0


def cmd_ablate(args) -> int:
    net_cfg, train_cfg = _configs(args)
    train_set = data_io.read_dataset(args.data)
    if args.test_data:
        test_set = data_io.read_dataset(args.test_data)
    else:
        n_test = max(1, int(round(len(train_set) * args.test_fraction)))
        test_set = train_set.subset(range(len(train_set) - n_test, len(train_set)))
        train_set = train_set.subset(range(len(train_set) - n_test))
    out = Path(args.out)
    results = run_ablation(train_set, test_set, net_cfg, train_cfg, out)
    rows = []
    for name, r in results.items():
        _write_report(r["report"], out / name.replace("+", "_"), "test_")
        rows.append(f"{name:16s} {r['report'].mean_error_mm:10.3f} mm")
    print("\n".join(rows))
    return 0


def _add_common_config(p) -> None:
    p.add_argument("--config", help="config file ([network] and [train] sections)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")


def _add_range(p) -> None:
    p.add_argument("--start", type=int, default=0, help="first sample index to use")
    p.add_argument("--count", type=int, default=None, help="number of samples to use")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmtnet", description="depth-image hand pose estimation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="convert a public dataset layout to the canonical format")
    p.add_argument("format", choices=("icvl", "nyu", "msra"))
    p.add_argument("--root", required=True, help="image root (ICVL/NYU) or dataset root (MSRA)")
    p.add_argument("--labels", help="label listing (ICVL/NYU)")
    p.add_argument("--limit", type=int, default=None, help="stop after this many frames")
    p.add_argument("--out", required=True)
    _add_range(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topology", default="msra", choices=("icvl", "nyu", "msra"))
    p.add_argument("--blob-radius", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a network")
    _add_common_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_range(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_range(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict joints (world mm) for one depth frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frame", required=True, help=".depth, .bin (MSRA) or .png file")
    p.add_argument("--intrinsics", type=float, nargs=4, metavar=("FX", "FY", "CX", "CY"))
    p.add_argument("--png-encoding", default="gray16", choices=("gray16", "nyu_rgb"))
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="inference throughput report")
    _add_common_config(p)
    p.add_argument("--checkpoint")
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train and test the four concat x hmt variants")
    _add_common_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data")
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HMTNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
