"""Command-line entry point: ``msvol {volume,disparity,train-toy,eval}``."""
import argparse
import csv
import logging
import math
import os
import sys

import numpy as np

from . import _backend
from .confidence import SigmaConfig
from .imagio import DisparityMap, FormatError, load_gray, read_disparity, read_mask, write_disparity
from .matchers import MatcherConfig
from .metrics import bad_x, random_dot_pair, write_csv_rows
from .regress import EvaluationError, LossWeights, combined_cost, soft_argmin, wta
from .toynet import ToyNetConfig, evaluate_loss, init_params, save_checkpoint, train_step
from .volume import build_matching_volume, write_msv

log = logging.getLogger("msvol")


class UsageError(Exception):
    """Bad arguments or missing inputs (exit status 2)."""


def _require(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{what} file not found: {path}")
    return path


def _sigma(args):
    return SigmaConfig(args.sigma_ncc, args.sigma_zsad, args.sigma_census, args.sigma_sobel)


def _load_pair(args):
    left = load_gray(_require(args.left, "left"))
    right = load_gray(_require(args.right, "right"))
    if left.data.shape != right.data.shape:
        raise ValueError(f"left {left.data.shape} and right {right.data.shape} differ in size")
    return left, right


def _thresholds(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}")
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError("thresholds must be positive")
    return vals


def upsample_disparity(dmap, shape):
    """Nearest-neighbour x2 upsampling with disparities doubled; edge-padded to ``shape``."""
    disp = np.repeat(np.repeat(dmap.disp * 2.0, 2, axis=0), 2, axis=1)
    valid = np.repeat(np.repeat(dmap.valid, 2, axis=0), 2, axis=1)
    H, W = shape
    pad = ((0, H - disp.shape[0]), (0, W - disp.shape[1]))
    return DisparityMap(np.pad(disp, pad, mode="edge"), np.pad(valid, pad, mode="edge"))


def _eval_rows(pred, gt, thresholds, noc, dataset, pair_id):
    rows = [(dataset, pair_id, bad_x(pred, gt, x)) for x in thresholds]
    if noc is not None:
        rows += [(dataset, pair_id, bad_x(pred, gt, x, noc)) for x in thresholds]
    return rows


def cmd_volume(args):
    left, right = _load_pair(args)
    vol = build_matching_volume(left, right, args.dmax, MatcherConfig(), _sigma(args),
                                half_res=args.half_res)
    out = args.out or "volume.msv"
    write_msv(vol, out)
    D, H, W, F = vol.data.shape
    print(f"dims {D}x{H}x{W}x{F}")
    for name in vol.feature_names:
        if name in vol.stats:
            lo, hi = vol.stats[name]
            print(f"{name} raw_min={lo:.6g} raw_max={hi:.6g}")
    print(f"feature_time_ms {1000 * vol.stats['feature_seconds']:.1f}")
    print(f"wrote {out}")
    return 0


def cmd_disparity(args):
    left, right = _load_pair(args)
    vol = build_matching_volume(left, right, args.dmax, MatcherConfig(), _sigma(args),
                                half_res=args.half_res)
    cost = combined_cost(vol)
    if args.method == "wta":
        pred = wta(cost)
    else:
        log.info("soft-argmin sharpness %g", args.sharpness)
        pred = soft_argmin(cost, args.sharpness)
    if args.half_res:
        pred = upsample_disparity(pred, left.data.shape)
    out = args.out or "disparity.pfm"
    write_disparity(pred, out)
    print(f"wrote {out}")
    if args.gt:
        gt = read_disparity(_require(args.gt, "gt"))
        noc = read_mask(_require(args.noc_mask, "noc-mask")) if args.noc_mask else None
        log.info("pixels invalid in the prediction are excluded from evaluation")
        rows = _eval_rows(pred, gt, args.thresholds, noc, args.dataset, args.pair_id)
        write_csv_rows(rows, sys.stdout)
    return 0


def cmd_train_toy(args):
    if args.synthetic:
        left, right, gt = random_dot_pair(64, 64, 8, seed=args.seed)
        d_max = 8
    else:
        left, right = _load_pair(args)
        gt = read_disparity(_require(args.gt, "gt"))
        d_max = args.dmax
    vol = build_matching_volume(left, right, d_max, MatcherConfig(), _sigma(args),
                                half_res=args.half_res)
    if args.half_res:
        h, w = vol.height, vol.width
        gt = DisparityMap(gt.disp[: 2 * h : 2, : 2 * w : 2] / 2.0, gt.valid[: 2 * h : 2, : 2 * w : 2])
    cfg = ToyNetConfig(base_channels=args.base_channels, levels=args.levels, variant=args.variant)
    net = init_params(cfg, args.seed)
    out = args.out or "toynet.msnp"
    curve = args.loss_csv or os.path.splitext(out)[0] + "_loss.csv"
    with open(curve, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for step in range(args.steps):
            try:
                with np.errstate(all="ignore"):
                    loss = train_step(net, cfg, vol, gt, args.lr, LossWeights())
            except EvaluationError:
                if step == 0:
                    raise
                # overflowed costs leave no finite prediction to score
                loss = math.nan
            finite = all(np.isfinite(v).all() for v in net.params.values())
            if not (math.isfinite(loss) and finite):
                print(f"error: training diverged at step {step} (loss={loss}, lr={args.lr}); "
                      "try a smaller --lr", file=sys.stderr)
                return 3
            w.writerow([step, repr(loss)])
        final = evaluate_loss(net, cfg, vol, gt)
        w.writerow([args.steps, repr(final)])
    save_checkpoint(net, out)
    print(f"final_loss {final:.6f}")
    print(f"wrote {out} {curve}")
    return 0


def cmd_eval(args):
    pred = read_disparity(_require(args.pred, "pred"))
    gt = read_disparity(_require(args.gt, "gt"))
    if pred.disp.shape != gt.disp.shape:
        raise ValueError(f"prediction {pred.disp.shape} and gt {gt.disp.shape} differ in size")
    noc = read_mask(_require(args.noc_mask, "noc-mask")) if args.noc_mask else None
    rows = _eval_rows(pred, gt, args.thresholds, noc, args.dataset, args.pair_id)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv_rows(rows, fh)
    else:
        write_csv_rows(rows, sys.stdout)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="msvol", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, half_res_default):
        sp.add_argument("--left", help="left image (PNG, grayscale or RGB)")
        sp.add_argument("--right", help="right image")
        sp.add_argument("--dmax", type=int, default=192, help="disparity levels at full resolution")
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--half-res", dest="half_res", action="store_true",
                       help="pool images 2x2 and use ceil(dmax/2) levels")
        g.add_argument("--full-res", dest="half_res", action="store_false")
        sp.set_defaults(half_res=half_res_default)
        d = SigmaConfig()
        sp.add_argument("--sigma-ncc", type=float, default=d.sigma_ncc)
        sp.add_argument("--sigma-zsad", type=float, default=d.sigma_zsad)
        sp.add_argument("--sigma-census", type=float, default=d.sigma_census)
        sp.add_argument("--sigma-sobel", type=float, default=d.sigma_sobel)
        sp.add_argument("--threads", type=int, help="numba worker threads")
        sp.add_argument("--out", help="output path")

    def evalopts(sp):
        sp.add_argument("--gt", help="ground truth disparity (.pfm or KITTI .png)")
        sp.add_argument("--noc-mask", help="non-occluded mask PNG, nonzero = evaluate")
        sp.add_argument("--thresholds", type=_thresholds, default=[3.0],
                        help="comma separated bad-x thresholds, e.g. 1,2,3")
        sp.add_argument("--dataset", default="-")
        sp.add_argument("--pair-id", default="-")

    sp = sub.add_parser("volume", help="build and write an MSV1 matching volume")
    common(sp, True)
    sp.set_defaults(func=cmd_volume)

    sp = sub.add_parser("disparity", help="classical pipeline: mean cost -> WTA / soft-argmin")
    common(sp, True)
    evalopts(sp)
    sp.add_argument("--method", choices=("wta", "softargmin"), default="wta")
    sp.add_argument("--sharpness", type=float, default=20.0, help="soft-argmin temperature")
    sp.set_defaults(func=cmd_disparity)

    sp = sub.add_parser("train-toy", help="train the toy regulariser, write MSNP checkpoint")
    common(sp, False)
    sp.add_argument("--gt", help="ground truth disparity for --left/--right")
    sp.add_argument("--synthetic", action="store_true", help="train on a 64x64 random-dot pair, D=8")
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--lr", type=float, default=0.25)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--variant", choices=("gc", "psm"), default="psm",
                    help="gc: one hourglass; psm: three stacked, weighted loss")
    sp.add_argument("--base-channels", type=int, default=4)
    sp.add_argument("--levels", type=int, default=2)
    sp.add_argument("--loss-csv", help="write step,loss rows here")
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("eval", help="bad-x / avg error rows as CSV")
    sp.add_argument("--pred", help="predicted disparity (.pfm or KITTI .png)")
    evalopts(sp)
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "dmax", 1) < 1:
        print("error: --dmax must be >= 1", file=sys.stderr)
        return 2
    try:
        _backend.set_threads(getattr(args, "threads", None))
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, EvaluationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
