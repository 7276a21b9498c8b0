"""Command-line interface.

Subcommands: train, down, up, bam, metrics, stats, check.
Exit codes: 0 success, 1 usage error, 2 data/processing error.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
import tempfile

import numpy as np

from . import bam as bam_mod
from . import codec, coupling, synth, training, wavelet
from .errors import CodecError, ShapeError, TrainingError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="invrescale", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="optimize a flow on a directory of PPM images")
    p.add_argument("--data", required=True, help="directory of .ppm training images")
    p.add_argument("--config", help="flat key=value config file (all keys optional)")
    p.add_argument("--out", help="checkpoint path to write")
    p.add_argument("--log", help="CSV loss log path")

    p = sub.add_parser("down", help="downscale: write LR image + boundary sidecars")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True, help="HR input (P6 .ppm)")
    p.add_argument("--out", required=True, help="LR output (P6 .ppm)")
    p.add_argument("--sidecar", required=True, help="boundary sidecar output")
    p.add_argument("--exact", help="also dump full-precision (Y, B, Z) for lossless up")

    p = sub.add_parser("up", help="upscale an LR image + sidecars back to HR")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="inp", required=True, help="LR input (P6 .ppm)")
    p.add_argument("--sidecar", required=True)
    p.add_argument("--seed", type=int, default=0, help="latent sampling seed")
    p.add_argument("--out", required=True, help="HR output (P6 .ppm)")
    p.add_argument("--exact", help="use a full-precision dump from `down --exact` instead")

    p = sub.add_parser("bam", help="run the boundary-mask pipeline on an image")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--T", type=float, default=50.0, help="sparsify threshold (luma units)")
    p.add_argument("--bits", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--norm", default="l2", choices=("l1", "l2"))
    p.add_argument("--sigma", type=float, default=1.4, help="Gaussian blur std")
    p.add_argument("--out", required=True, help="mask output (P5 .pgm)")

    p = sub.add_parser("metrics", help="print PSNR-Y / SSIM-Y of two images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("stats", help="high-frequency residual statistics of an image")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--model", help="take the scale factor from this checkpoint")
    p.add_argument("--levels", type=int, default=1, help="wavelet levels when no model given")
    p.add_argument("--hist", help="write the 64-bin histogram as CSV")

    sub.add_parser("check", help="run the built-in invariant suite")
    return parser


def _cmd_train(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.data, "*.ppm")))
    if not paths:
        print(f"no .ppm images in {args.data}", file=sys.stderr)
        return 2
    images = [codec.read_image(p) for p in paths]
    cfg = training.load_config(args.config) if args.config else training.TrainConfig()
    result = training.train_loop(images, cfg, csv_path=args.log)
    if args.out:
        codec.save_model(result.model, args.out)
    last = result.reports[-1]
    print(f"trained {cfg.total_steps} steps, final total loss {last.total:.6f}")
    return 0


def _cmd_down(args) -> int:
    model = codec.load_model(args.model)
    x = codec.read_image(args.inp)
    y, bs, zs = coupling.flow_forward(x, model)
    codec.write_image(args.out, np.clip(y.data, 0.0, 1.0))

    encoded = []
    for b in bs:
        levels = codec.quantize_unit(b.data, model.bam.bits)
        bmap = bam_mod.BoundaryMap(levels=levels, sparse=np.zeros_like(b.data), config=model.bam)
        encoded.append(codec.encode_sidecar(bmap, mode="rle"))
    codec.write_sidecars(encoded, args.sidecar)

    if args.exact:
        arrays = {"y": y.data}
        for i, b in enumerate(bs):
            arrays[f"b{i}"] = b.data
        for i, z in enumerate(zs):
            arrays[f"z{i}"] = z.data
        np.savez(args.exact, **arrays)
    return 0


def _cmd_up(args) -> int:
    model = codec.load_model(args.model)
    if args.exact:
        dump = np.load(args.exact)
        y = dump["y"]
        bs = [dump[f"b{i}"] for i in range(model.levels)]
        zs = [dump[f"z{i}"] for i in range(model.levels)]
    else:
        y = codec.read_image(args.inp)
        records = codec.read_sidecars(args.sidecar)
        if len(records) != model.levels:
            print(f"sidecar has {len(records)} levels, model expects {model.levels}", file=sys.stderr)
            return 2
        bs = [bam_mod.levels_to_unit(rec.levels, rec.bits) for rec in records]
        h = y.shape[1] * model.scale
        w = y.shape[2] * model.scale
        rng = np.random.default_rng(args.seed)
        zs = coupling.sample_latents(model, h, w, rng)
    x = coupling.flow_inverse(y, bs, zs, model)
    codec.write_image(args.out, np.clip(x.data, 0.0, 1.0))
    return 0


def _cmd_bam(args) -> int:
    img = codec.read_image(args.inp) * 255.0
    cfg = bam_mod.BamConfig(sigma=args.sigma, threshold=args.T, bits=args.bits, norm=args.norm)
    bmap = bam_mod.bam_generate(img, cfg)
    codec.write_image(args.out, bam_mod.levels_to_unit(bmap.levels, cfg.bits))
    return 0


def _cmd_metrics(args) -> int:
    ref = codec.read_image(args.ref)
    test = codec.read_image(args.test)
    p = codec.psnr_y(ref, test)
    s = codec.ssim_y(ref, test)
    print(f"PSNR: {p:.2f} SSIM: {s:.4f}")
    return 0


def _cmd_stats(args) -> int:
    img = codec.read_image(args.inp)
    if args.model:
        model = codec.load_model(args.model)
    else:
        model = coupling.FlowModel.create(args.levels, zero=True)
    stats = codec.residual_stats(img, model)
    print(f"mean: {stats.mean:.6g}")
    print(f"variance: {stats.variance:.6g}")
    if args.hist:
        with open(args.hist, "w", encoding="utf-8") as fh:
            fh.write("bin_lo,bin_hi,count\n")
            for lo, hi, n in zip(stats.bin_edges[:-1], stats.bin_edges[1:], stats.hist):
                fh.write(f"{lo:.6g},{hi:.6g},{n}\n")
    return 0


def _cmd_check(_args) -> int:
    failures = 0

    def report(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        failures += 0 if ok else 1

    rng = np.random.default_rng(7)

    # Haar analysis/synthesis round trip and energy conservation.
    worst_rt, worst_en = 0.0, 0.0
    for _ in range(50):
        x = rng.standard_normal((3, 16, 16))
        pair = wavelet.haar_forward(x)
        worst_rt = max(worst_rt, float(np.abs(wavelet.haar_inverse(pair) - x).max()))
        energy = np.sum(pair.low**2) + np.sum(pair.high**2)
        worst_en = max(worst_en, abs(energy - np.sum(x**2)) / np.sum(x**2))
    report("haar round trip < 1e-12", worst_rt < 1e-12)
    report("haar energy conservation < 1e-12", worst_en < 1e-12)

    # Flow bijectivity at one and two levels.
    worst = 0.0
    for levels in (1, 2):
        for trial in range(5):
            model = coupling.FlowModel.create(levels, seed=100 * levels + trial)
            x = rng.uniform(0.0, 1.0, size=(3, 16, 16))
            y, bs, zs = coupling.flow_forward(x, model)
            back = coupling.flow_inverse(y, bs, zs, model)
            worst = max(worst, float(np.abs(back.data - x).max()))
    report("flow round trip < 1e-9", worst < 1e-9)

    # Volume preservation of additive blocks; translation case of general ones.
    worst = 0.0
    for trial in range(3):
        block = coupling.InvBlockParams.create(1, np.random.default_rng(trial), mode="additive")
        det = coupling.numerical_jacobian_det(block, rng.standard_normal((1, 2, 2)),
                                              rng.standard_normal((3, 2, 2)))
        worst = max(worst, abs(det - 1.0))
    zero_block = coupling.InvBlockParams.create(1, np.random.default_rng(0), zero=True)
    det = coupling.numerical_jacobian_det(zero_block, rng.standard_normal((1, 2, 2)),
                                          rng.standard_normal((3, 2, 2)))
    worst = max(worst, abs(det - 1.0))
    report("unit jacobian determinant within 1e-6", worst < 1e-6)

    from . import autodiff as ad

    vals = ad.pos_scale(ad.Tensor(rng.uniform(-50, 50, size=1000))).data
    report("pos_scale range [0.1, 10]", bool(np.all(vals >= 0.1) and np.all(vals <= 10.0)))

    # Lossless sidecar round trips at every depth and both encodings.
    ok = True
    for bits in (1, 2, 3):
        levels = rng.integers(0, 1 << bits, size=(1, 24, 24))
        bmap = bam_mod.BoundaryMap(levels=levels, sparse=levels.astype(float),
                                   config=bam_mod.BamConfig(bits=bits))
        for mode in ("raw", "rle"):
            rec, _ = codec.decode_sidecar(codec.encode_sidecar(bmap, mode))
            ok = ok and np.array_equal(rec.levels, levels)
    report("sidecar encode/decode lossless", ok)

    # Netpbm write/read round trip.
    img = rng.integers(0, 256, size=(3, 9, 7)) / 255.0
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "t.ppm")
        codec.write_image(path, img)
        back = codec.read_image(path)
    report("netpbm round trip exact", bool(np.array_equal(back, img)))

    # Lossless information accounting across emitted branches.
    ok = True
    for levels in (1, 2, 3):
        model = coupling.FlowModel.create(levels, zero=True)
        h = w = 8 * model.scale
        x = rng.standard_normal((3, h, w))
        y, bs, zs = coupling.flow_forward(x, model)
        total = y.data.size + sum(b.data.size for b in bs) + sum(z.data.size for z in zs)
        ok = ok and total == x.size
    report("channel/pixel accounting lossless", ok)

    a = synth.synthetic_image(1, 32)
    b = synth.synthetic_image(2, 32)
    ok = (
        codec.psnr_y(a, a) == codec.PSNR_CAP_DB
        and abs(codec.psnr_y(a, b) - codec.psnr_y(b, a)) < 1e-12
        and abs(codec.ssim_y(a, b) - codec.ssim_y(b, a)) < 1e-12
        and codec.ssim_y(a, a) > 0.9999
    )
    report("metric caps and symmetry", ok)

    return 0 if failures == 0 else 2


_COMMANDS = {
    "train": _cmd_train,
    "down": _cmd_down,
    "up": _cmd_up,
    "bam": _cmd_bam,
    "metrics": _cmd_metrics,
    "stats": _cmd_stats,
    "check": _cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (CodecError, ShapeError, TrainingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
