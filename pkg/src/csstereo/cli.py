"""Command-line entry point: infer, train, eval, costvol, synth, gradcheck, bench.

All file outputs are written to a temp file in the destination directory and
renamed on success, so failures never leave partial artifacts. Exit codes:
0 success, 1 runtime failure (message on stderr), 2 usage errors.
"""

import argparse
import os
import sys
import time

from . import autodiff as ad
from . import metrics as me
from . import network as nw
from . import synth
from . import training as tr
from .costvolume import build_volumes, write_fvol
from .pnm import colorize_disparity, decode_ppm, encode_disp16, encode_ppm
from .preprocess import downsample2x, rgb_to_yuv

OP_TOLERANCE = 1e-2
IDENTITY_TOLERANCE = 1e-6


def _write_atomic(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _read_image(path: str):
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def _cmd_infer(args) -> int:
    left = _read_image(args.left)
    right = _read_image(args.right)
    w = nw.load_weights(args.weights)
    d = nw.predict_disparity(left, right, w, mode=args.mode, threads=args.threads)
    _write_atomic(args.out, encode_disp16(d))
    if args.vis:
        _write_atomic(args.vis, encode_ppm(colorize_disparity(d, max_disp=float(w.config.max_disp * 2))))
    return 0


def _cmd_train(args) -> int:
    with open(args.config) as f:
        text = f.read()
    tcfg = tr.parse_train_config(text)
    data = tr.DiskDataset(args.data)
    ckpt = args.out_weights + ".ckpt"
    if args.resume:
        if not os.path.exists(ckpt):
            raise FileNotFoundError(f"--resume given but no checkpoint at {ckpt}")
        w = nw.load_weights(ckpt)
        rows = tr.train_loop(data, tcfg, w, checkpoint_path=ckpt, resume=True)
        log_file = args.out_weights + ".loss.csv"
        if os.path.exists(log_file):  # keep rows from before the interruption
            first = rows[0][0] if rows else tcfg.total_iters
            old = [
                (int(a), float(b), float(c))
                for a, b, c in (ln.split(",") for ln in open(log_file).read().splitlines()[1:])
                if int(a) < first
            ]
            rows = old + rows
    else:
        w = nw.build_model(tr.parse_model_config(text), seed=tcfg.seed)
        tr.fit_cost_stats(data, w, tcfg.stats_samples, tcfg.threads)
        rows = tr.train_loop(data, tcfg, w, checkpoint_path=ckpt)
    nw.save_weights(w, args.out_weights)
    tr.write_loss_log(rows, args.out_weights + ".loss.csv")
    print(f"trained {len(rows)} iterations, final loss {rows[-1][1]:.6f}" if rows else "nothing to train")
    return 0


def _cmd_eval(args) -> int:
    report = me.eval_report(args.pred_dir, args.gt_dir, args.noc_dir, args.obj_dir)
    _write_atomic(args.csv, report.csv("all").encode())
    base, ext = os.path.splitext(args.csv)
    for variant in ("noc", "fg", "bg"):
        if variant in report.variants:
            _write_atomic(f"{base}.{variant}{ext}", report.csv(variant).encode())
    for variant, rows in report.variants.items():
        agg = rows[-1]
        print(
            f"{variant}: avg_err {agg.avg_err:.4f} px, >3px {agg.outliers[1]:.3f}%, "
            f"d1 {agg.d1:.3f}%, {agg.valid_px} px"
        )
    return 0


def _cmd_costvol(args) -> int:
    left = _read_image(args.left)
    right = _read_image(args.right)
    if (left.height, left.width) != (right.height, right.width):
        raise ValueError("left/right dimensions differ")
    costs = ("census",) if args.census_only else ("census", "u", "v")
    ly = downsample2x(rgb_to_yuv(left))
    ry = downsample2x(rgb_to_yuv(right))
    vols = build_volumes(ly, ry, args.max_disp, costs, args.threads)
    _write_atomic(args.out, write_fvol(vols))
    return 0


def _cmd_synth(args) -> int:
    try:
        w, h = (int(v) for v in args.dims.lower().split("x"))
    except ValueError:
        raise ValueError(f"--dims must look like 96x96, got {args.dims!r}") from None
    synth.generate_dataset(args.count, w, h, seed=args.seed, out_dir=args.out)
    print(f"wrote {args.count} samples under {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    failed = False
    for seed in range(args.seed, args.seed + args.seeds):
        errs = ad.op_gradcheck(seed)
        for name, err in sorted(errs.items()):
            tol = IDENTITY_TOLERANCE if name == "identity" else OP_TOLERANCE
            ok = err <= tol
            failed |= not ok
            print(f"seed {seed}  {name:22s} {err:.3e}  {'ok' if ok else 'FAIL'}")
        net_err = nw.network_gradcheck(seed)
        ok = net_err <= OP_TOLERANCE
        failed |= not ok
        print(f"seed {seed}  {'full_network':22s} {net_err:.3e}  {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def _time_stage(fn, reps: int) -> tuple[float, float]:
    fn()  # warmup
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), sum(times) / len(times)


def _cmd_bench(args) -> int:
    left = _read_image(args.left)
    right = _read_image(args.right)
    w = nw.build_model(nw.ModelConfig(), seed=0)
    cfg = w.config
    reps = args.reps

    ly = ry = None

    def stage_costvol(threads=None):
        nonlocal ly, ry
        ly = downsample2x(rgb_to_yuv(left))
        ry = downsample2x(rgb_to_yuv(right))
        return build_volumes(ly, ry, cfg.max_disp, cfg.costs, threads or args.threads)

    vols = stage_costvol()
    from .costvolume import normalize_volume
    nvols = [normalize_volume(v, w.get_stats(c)) for v, c in zip(vols, cfg.costs)]
    a0 = ad.Tensor(nw.cost_input(nvols)[None])
    img = ad.Tensor(nw.image_feature(ly.planes)[None])
    sig = nw.signature_forward(a0, w, training=False)

    def stage_signature():
        return nw.signature_forward(a0, w, training=False)

    def stage_spatial():
        s_p, rec = nw.pad_to_multiple(sig, cfg.pad_multiple)
        i_p, _ = nw.pad_to_multiple(img, cfg.pad_multiple)
        return nw.spatial_forward(s_p, i_p, w, training=False, crop_to=rec)

    half = stage_spatial().data[0, 0]

    def stage_upsample():
        return nw.upsample_disparity(half, "test")[: left.height, : left.width]

    print(f"pair {left.width}x{left.height}, D={cfg.max_disp}, threads={args.threads}, reps={reps}")
    total_min = 0.0
    for name, fn in (
        ("cost_volumes", stage_costvol),
        ("signature", stage_signature),
        ("spatial_net", stage_spatial),
        ("upsampling", stage_upsample),
    ):
        tmin, tmean = _time_stage(fn, reps)
        total_min += tmin
        print(f"{name:14s} min {tmin * 1000:8.1f} ms   mean {tmean * 1000:8.1f} ms")
    print(f"{'pipeline(min)':14s} {total_min * 1000:12.1f} ms")

    t1, _ = _time_stage(lambda: stage_costvol(threads=1), reps)
    t4, _ = _time_stage(lambda: stage_costvol(threads=4), reps)
    print(f"cost-volume speedup 1 -> 4 threads: {t1 / t4:.2f}x  ({t1*1000:.1f} -> {t4*1000:.1f} ms)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csstereo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("infer", help="run the pipeline on one pair, write PGM16 disparity")
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--vis", help="also write a colormapped PPM here")
    sp.add_argument("--mode", choices=("train", "test"), default="test")
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=_cmd_infer)

    sp = sub.add_parser("train", help="train from a key=value config file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out-weights", required=True)
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=_cmd_train)

    sp = sub.add_parser("eval", help="KITTI-style metrics over prediction/gt directories")
    sp.add_argument("--pred-dir", required=True)
    sp.add_argument("--gt-dir", required=True)
    sp.add_argument("--noc-dir")
    sp.add_argument("--obj-dir")
    sp.add_argument("--csv", required=True)
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("costvol", help="dump raw cost volumes as FVOL")
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--census-only", action="store_true")
    sp.add_argument("--max-disp", type=int, default=128)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=_cmd_costvol)

    sp = sub.add_parser("synth", help="generate a synthetic stereo dataset")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--dims", default="96x96")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("gradcheck", help="finite-difference check of ops and network")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--seeds", type=int, default=5, help="number of seeds to run")
    sp.set_defaults(func=_cmd_gradcheck)

    sp = sub.add_parser("bench", help="per-stage wall times on one pair")
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--reps", type=int, default=10)
    sp.set_defaults(func=_cmd_bench)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except Exception as e:  # runtime failures -> exit 1 with a message
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
