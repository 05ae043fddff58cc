"""Command-line surface: mask/phantom generation, acquisition simulation,
training, reconstruction, evaluation, gradient verification, image export.

Exit codes: 0 success, 2 usage or contract violations (bad flags, malformed
files, unsatisfiable parameters), 1 runtime failures (diverged training,
unexpected errors). The COVEGAN_THREADS environment variable caps BLAS
parallelism and must be applied before numpy loads, hence the lazy imports.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("COVEGAN_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvmri",
                                     description="complex-valued CS-MRI toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="generate a k-space sampling mask")
    p.add_argument("--pattern", required=True, choices=["gauss1d", "radial", "spiral"])
    p.add_argument("--ratio", required=True, type=float)
    p.add_argument("--size", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("phantom", help="generate synthetic complex phantoms")
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--size", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="undersample phantoms and zero-fill")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the reconstruction model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="run the generator on a zero-filled input")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="metrics for reconstructions against ground truth")
    p.add_argument("--rec", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--skip-generator", action="store_true",
                   help="layer and loss checks only")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export-image", help="export a tensor channel as binary PGM")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--channel", required=True, choices=["mag", "phase", "re", "im"])
    p.add_argument("--out", required=True)
    return parser


def _list_cvt(dirname):
    if not os.path.isdir(dirname):
        raise FileNotFoundError(f"not a directory: {dirname}")
    names = sorted(n for n in os.listdir(dirname) if n.endswith(".cvt"))
    if not names:
        raise FileNotFoundError(f"no .cvt files in {dirname}")
    return [os.path.join(dirname, n) for n in names]


def cmd_mask(args):
    from . import mri, tensor
    mask = mri.make_mask(args.pattern, args.ratio, args.size, args.seed)
    tensor.save_cvt(args.out, mask.grid)
    print(f"wrote {args.out}: pattern={mask.pattern} requested={mask.ratio:g} "
          f"achieved={mask.achieved_ratio:.6f}")
    return 0


def cmd_phantom(args):
    from . import mri, tensor
    os.makedirs(args.out, exist_ok=True)
    phantoms = mri.make_phantoms(args.count, args.size, args.seed)
    with open(os.path.join(args.out, "manifest.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file", "seed", "noise_pct"])
        for i, p in enumerate(phantoms):
            name = f"phantom_{i:03d}.cvt"
            tensor.save_cvt(os.path.join(args.out, name), p.image)
            writer.writerow([name, args.seed, 0])
    print(f"wrote {len(phantoms)} phantoms to {args.out}")
    return 0


def cmd_simulate(args):
    from . import mri, tensor
    grid = tensor.load_cvt(args.mask)
    files = _list_cvt(args.indir)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "manifest.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file", "seed", "noise_pct"])
        for i, path in enumerate(files):
            x = tensor.load_cvt(path)
            sample_seed = args.seed + i
            y = mri.acquire(x, grid, args.noise, seed=sample_seed)
            back = mri.zfr(y, grid)
            stem = os.path.splitext(os.path.basename(path))[0]
            tensor.save_cvt(os.path.join(args.out, f"{stem}_y.cvt"), y)
            tensor.save_cvt(os.path.join(args.out, f"{stem}_zfr.cvt"), back)
            writer.writerow([f"{stem}_y.cvt", sample_seed, args.noise])
    print(f"simulated {len(files)} acquisitions into {args.out}")
    return 0


def cmd_train(args):
    from . import tensor, training
    cfg = training.load_config(args.config)
    files = [p for p in _list_cvt(args.data) if "manifest" not in p]
    phantoms = [tensor.load_cvt(p) for p in files]
    result = training.train(cfg, phantoms, out_dir=args.out)
    last = result.log_rows[-1]
    print(f"trained {result.steps} generator steps; final total loss "
          f"{last['total']:.6g}; checkpoint {result.checkpoint_path}")
    return 0


def cmd_reconstruct(args):
    from . import tensor, training
    x_u = tensor.load_cvt(args.infile)
    out = training.reconstruct(args.ckpt, x_u)
    tensor.save_cvt(args.out, out)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args):
    from . import losses, tensor
    rec_files = _list_cvt(args.rec)
    gt_files = _list_cvt(args.gt)
    if len(rec_files) != len(gt_files):
        from .errors import ContractError
        raise ContractError(f"eval: {len(rec_files)} reconstructions vs "
                            f"{len(gt_files)} ground-truth files")
    rows = []
    for rec_path, gt_path in zip(rec_files, gt_files):
        rec = tensor.load_cvt(rec_path)
        gt = tensor.load_cvt(gt_path)
        metrics = losses.evaluate_pair(rec, gt)
        rows.append((os.path.basename(rec_path), metrics))
    with open(args.report, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["file", "psnr_db", "mssim", "phase_rmse"])
        for name, m in rows:
            writer.writerow([name, _fmt(m["psnr_db"]), _fmt(m["mssim"]),
                             _fmt(m["phase_rmse"])])
        finite = [m["psnr_db"] for _, m in rows if math.isfinite(m["psnr_db"])]
        mean_psnr = sum(finite) / len(finite) if finite else math.inf
        writer.writerow(["mean", _fmt(mean_psnr),
                         _fmt(sum(m["mssim"] for _, m in rows) / len(rows)),
                         _fmt(sum(m["phase_rmse"] for _, m in rows) / len(rows))])
    print(f"wrote {args.report} ({len(rows)} pairs)")
    return 0


def _fmt(value):
    return "inf" if math.isinf(value) else f"{value:.6g}"


def cmd_gradcheck(args):
    from . import verification
    results = verification.run_all(include_generator=not args.skip_generator,
                                   seed=args.seed)
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        failed += not r.ok
        print(f"{status}  {r.name:20s} max_rel_err={r.error:.3e} tol={r.tolerance:g}")
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 1 if failed else 0


def cmd_export_image(args):
    import numpy as np

    from . import tensor
    from .errors import ContractError
    arr = tensor.load_cvt(args.infile)
    if arr.ndim != 2:
        raise ContractError(f"export-image needs a 2-D tensor, got shape {arr.shape}")
    if args.channel == "mag":
        v = np.abs(arr)
        peak = v.max()
        scaled = v / peak * 255.0 if peak > 0 else np.zeros_like(v)
    elif args.channel == "phase":
        ph = np.angle(arr)
        ph = np.where(ph == -np.pi, np.pi, ph)
        scaled = (ph + np.pi) / (2 * np.pi) * 255.0
    else:
        v = arr.real if args.channel == "re" else (
            arr.imag if np.iscomplexobj(arr) else np.zeros_like(arr))
        m = np.abs(v).max()
        scaled = (v / m) * 127.5 + 127.5 if m > 0 else np.zeros_like(v)
    data = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(args.out, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())
    print(f"wrote {args.out} ({w}x{h})")
    return 0


COMMANDS = {
    "mask": cmd_mask,
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "export-image": cmd_export_image,
}


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    from .errors import CvmriError, TrainingDivergedError
    try:
        return COMMANDS[args.command](args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CvmriError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
