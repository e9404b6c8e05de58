"""Command-line interface.

Subcommands: synth (generate a dataset), spobe (enrich scribbles), train,
eval (metrics CSV), gradcheck (gradient suite), scan-bench (dense vs sparse
traversal throughput). Exit codes: 0 success, 1 validation error, 2 runtime
failure. The environment variables SPARSEMAMBA_SEED and SPARSEMAMBA_THREADS
override the config seed and the BLAS thread count.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time


def _apply_thread_env():
    threads = os.environ.get("SPARSEMAMBA_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sparsemamba",
        description="Scribble-supervised segmentation toolkit: boundary propagation, "
                    "sparse selective-scan network, collaborative training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=80)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--classes", type=int, default=2)

    p = sub.add_parser("spobe", help="estimate boundaries and enrich scribbles")
    p.add_argument("--image", required=True)
    p.add_argument("--scribbles", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--edge-method", choices=("canny", "sobel"), default="canny")
    p.add_argument("--schedule", default="3,5,7,9,11", help="comma separated odd kernel sizes")
    p.add_argument("--threshold", type=int, default=0,
                   help="counting-map threshold (0 = schedule-derived default)")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--low", type=float, default=0.1)
    p.add_argument("--high", type=float, default=0.2)
    p.add_argument("--sobel-threshold", type=float, default=0.5)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry")
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("eval", help="score a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--spacing", type=float, default=1.0, help="mm per pixel")

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--skip-network", action="store_true",
                   help="skip the slow full-network check")

    p = sub.add_parser("scan-bench", help="dense vs sparse scan coverage and throughput")
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--skip-step", type=int, default=2)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", default="", help="optional CSV path (default: stdout)")
    return parser


def cmd_synth(args):
    from .data import save_dataset, synth_dataset
    dataset = synth_dataset(args.seed, args.cases, args.size, args.classes)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} cases to {args.out}")
    return 0


def cmd_spobe(args):
    import warnings

    from .data import (load_image, load_labelmap, save_boundary_overlay,
                       save_class_masks, save_labelmap)
    from .spobe import enrich_scribbles, spobe

    try:
        image = load_image(args.image)
        scribbles = load_labelmap(args.scribbles, args.classes)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if image.shape != scribbles.shape:
        raise ConfigError(f"image {args.image} {image.shape} and scribbles "
                          f"{args.scribbles} {scribbles.shape} differ in size")
    schedule = tuple(int(k) for k in args.schedule.split(","))
    thresholds = {c: args.threshold for c in range(args.classes)} if args.threshold else None
    edge_params = ({"sigma": args.sigma, "low": args.low, "high": args.high}
                   if args.edge_method == "canny" else {"threshold": args.sobel_threshold})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        boundaries = spobe(image, scribbles, edge_method=args.edge_method,
                           schedule=schedule, thresholds=thresholds, edge_params=edge_params)
    for warning in caught:
        print(f"warning: {warning.message}", file=sys.stderr)
    if not boundaries.edge_map.any():
        print("warning: edge map is empty; enriched scribbles equal the input",
              file=sys.stderr)
    enriched = enrich_scribbles(scribbles, boundaries)
    os.makedirs(args.out_dir, exist_ok=True)
    save_labelmap(enriched, os.path.join(args.out_dir, "enriched_scribbles.png"))
    save_boundary_overlay(image, boundaries, os.path.join(args.out_dir, "overlay.png"),
                          scribbles=scribbles)
    save_class_masks(boundaries, args.out_dir)
    added = int((enriched.labels != scribbles.labels).sum())
    print(f"enriched scribbles with {added} boundary pixels -> {args.out_dir}")
    return 0


def cmd_train(args):
    from .config import ExperimentConfig
    from .trainer import train

    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    env_seed = os.environ.get("SPARSEMAMBA_SEED")
    if env_seed is not None:
        overrides["seed"] = env_seed
    try:
        config = ExperimentConfig.from_file(args.config, overrides)
        config.validate()
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    result = train(config, quiet=not args.verbose)
    print(f"final val dice {result.final_val_dice:.4f}; "
          f"checkpoint {result.checkpoint_path}")
    return 0


def cmd_eval(args):
    from .data import load_dataset
    from .losses import evaluate_case
    from .spobe import LabelMap
    from .trainer import rebuild_net_from_checkpoint

    try:
        net, net_config = rebuild_net_from_checkpoint(args.checkpoint)
        dataset = load_dataset(args.dataset, resize=net_config.input_size[0])
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    classes = list(range(1, dataset.num_classes))
    rows = []
    for case in dataset:
        pred = LabelMap(net.predict_labels(case.image.astype("float32")), dataset.num_classes)
        for entry in evaluate_case(pred, case.ground_truth, classes, spacing=args.spacing):
            rows.append([case.case_id, entry["class"], f"{entry['dice']:.6f}",
                         f"{entry['hd95_mm']:.6f}", "degenerate" if entry["degenerate"] else ""])
    dices = [float(r[2]) for r in rows]
    hds = [float(r[3]) for r in rows]
    tmp = f"{args.out}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "class", "dice", "hd95_mm", "flags"])
        writer.writerows(rows)
        writer.writerow(["mean", "all",
                         f"{sum(dices) / len(dices):.6f}" if dices else "",
                         f"{sum(hds) / len(hds):.6f}" if hds else "", ""])
    os.replace(tmp, args.out)
    print(f"wrote {len(rows)} rows + mean to {args.out}")
    return 0


def cmd_gradcheck(args):
    from .checks import run_gradient_suite
    results = run_gradient_suite(full=not args.skip_network)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_err {r.error:.3e}  (tol {r.threshold:.0e})  {status}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 0 if failed == 0 else 2


def cmd_scan_bench(args):
    import numpy as np

    from .scans import gather_seq, scatter_seq, sparse_orders, ss2d_orders
    from .tensor import Tensor, no_grad

    h, w, c = args.height, args.width, args.channels
    features = Tensor(np.random.default_rng(0).uniform(-1, 1, (c, h, w)).astype("float32"))
    rows = []
    for kind in ("dense", "sparse"):
        orders = ss2d_orders(h, w) if kind == "dense" else sparse_orders(h, w, args.skip_step)
        total = sum(len(o) for o in orders)
        start = time.perf_counter()
        with no_grad():
            for _ in range(args.repeats):
                for order in orders:
                    seq = gather_seq(features, order)
                    scatter_seq(seq, order, h, w)
        elapsed = time.perf_counter() - start
        throughput = args.repeats * total * c / elapsed
        rows.append([kind, h, w, total, f"{throughput:.0f}"])
    lines = [["kind", "height", "width", "total_indices", "elements_per_sec"]] + rows
    if args.out:
        tmp = f"{args.out}.tmp"
        with open(tmp, "w", newline="") as fh:
            csv.writer(fh).writerows(lines)
        os.replace(tmp, args.out)
        print(f"wrote {args.out}")
    else:
        for line in lines:
            print(",".join(str(v) for v in line))
    return 0


class ConfigError(Exception):
    """Invalid user input (bad flags, malformed files, failed validation)."""


def main(argv=None):
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "spobe": cmd_spobe,
        "train": cmd_train,
        "eval": cmd_eval,
        "gradcheck": cmd_gradcheck,
        "scan-bench": cmd_scan_bench,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
