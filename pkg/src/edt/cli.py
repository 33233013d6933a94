"""Command-line front end.

The numeric stack is imported lazily inside each handler so that --threads
can pin the BLAS/OpenMP pool sizes before numpy first loads; --threads 1 is
the setting under which the bit-exactness contracts (resume, fixed-seed
sampling) are guaranteed.
"""

import argparse
import json
import os
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _pin_threads(argv):
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is not None:
        for var in THREAD_VARS:
            os.environ[var] = threads


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads (1 = bit-exact mode)")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="edt",
        description="Efficient diffusion transformer: train, sample, analyze.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the synthetic dataset")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr-start", type=float, default=None)
    p.add_argument("--lr-end", type=float, default=None)
    p.add_argument("--ckpt-every", type=int, default=None)
    p.add_argument("--model-config", default=None, help="model config JSON path")
    p.add_argument("--resume", default=None, help="checkpoint stem to continue from")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)

    p = sub.add_parser("sample", help="generate samples from a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint stem (no extension)")
    p.add_argument("--labels", default=None, help="comma-separated class labels")
    p.add_argument("--class", dest="class_id", type=int, default=None)
    p.add_argument("--count", type=int, default=8, help="samples when using --class")
    p.add_argument("--steps", type=int, default=50, help="DDIM step count")
    p.add_argument("--omega", type=float, default=1.0, help="guidance weight (>= 1)")
    p.add_argument("--amm", choices=("on", "off"), default="off")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--images", action="store_true", help="also dump PGM planes")
    _add_common(p)

    p = sub.add_parser("eval", help="MMD between two sample sets")
    p.add_argument("--generated", required=True, help="generated samples .npy")
    p.add_argument("--generated-labels", required=True)
    p.add_argument("--reference", required=True, help="reference samples .npy")
    p.add_argument("--reference-labels", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--out", default=None, help="write the JSON report here")
    _add_common(p)

    p = sub.add_parser("flops", help="analytical cost report")
    p.add_argument("--config", default=None, help="model config JSON (default: EDT-nano)")
    p.add_argument("--oracle", action="store_true",
                   help="also run one instrumented forward pass and compare")
    p.add_argument("--format", choices=("table", "csv"), default="table")
    _add_common(p)

    p = sub.add_parser("amm", help="attention modulation matrix tools")
    amm_sub = p.add_subparsers(dest="amm_command", required=True)
    pe = amm_sub.add_parser("export", help="write a matrix as CSV + JSON sidecar")
    pe.add_argument("--grid", type=int, required=True, help="grid side N")
    pe.add_argument("--scale", type=float, default=0.5)
    pe.add_argument("--radius", type=float, default=None)
    pe.add_argument("--out", required=True, help="CSV output path")
    _add_common(pe)

    p = sub.add_parser("dataset", help="synthetic dataset tools")
    ds_sub = p.add_subparsers(dest="dataset_command", required=True)
    pg = ds_sub.add_parser("gen", help="materialize a slice of the stream")
    pg.add_argument("--count", type=int, required=True)
    pg.add_argument("--classes", type=int, default=8)
    pg.add_argument("--channels", type=int, default=4)
    pg.add_argument("--height", type=int, default=16)
    pg.add_argument("--width", type=int, default=16)
    pg.add_argument("--start", type=int, default=0, help="first stream index")
    pg.add_argument("--out", required=True, help="output prefix (writes <out>_data.npy ...)")
    _add_common(pg)

    return parser


def _cmd_train(args):
    from .harness.training import RunConfig, train

    if args.config is not None:
        run = RunConfig.load(args.config)
    else:
        if args.out is None:
            raise SystemExit("train: need --out when no --config is given")
        run = RunConfig(out_dir=args.out)
    from dataclasses import replace

    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.lr_start is not None:
        overrides["lr_start"] = args.lr_start
    if args.lr_end is not None:
        overrides["lr_end"] = args.lr_end
    if args.ckpt_every is not None:
        overrides["checkpoint_every"] = args.ckpt_every
    if args.model_config is not None:
        overrides["model_config"] = args.model_config
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        run = replace(run, **overrides)

    progress = None
    if not args.quiet:
        def progress(step, lf, lm):
            if step % 100 == 0:
                print(f"step {step}: loss_full={lf:.4f} loss_masked={lm:.4f}")

    result = train(run, resume=args.resume, progress=progress)
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"loss log: {result.log_path}")
    return 0


def _cmd_sample(args):
    import numpy as np

    from .harness.sampling import sample_from_checkpoint

    if (args.labels is None) == (args.class_id is None):
        raise SystemExit("sample: give exactly one of --labels or --class")
    if args.labels is not None:
        labels = [int(v) for v in args.labels.split(",") if v.strip() != ""]
    else:
        labels = [args.class_id] * args.count
    _, _, paths = sample_from_checkpoint(
        args.ckpt,
        np.asarray(labels),
        steps=args.steps,
        omega=args.omega,
        seed=args.seed if args.seed is not None else 0,
        amm=args.amm,
        out_dir=args.out,
        write_images=args.images,
    )
    print(f"wrote {paths['samples']} and {paths['labels']}")
    if "images" in paths:
        print(f"wrote {len(paths['images'])} PGM planes")
    return 0


def _cmd_eval(args):
    import numpy as np

    from .harness.evaluation import evaluate

    report = evaluate(
        np.load(args.generated),
        np.load(args.generated_labels),
        np.load(args.reference),
        np.load(args.reference_labels),
        class_count=args.classes,
        bandwidth=args.bandwidth,
    )
    payload = report.to_dict()
    print(f"mmd: {report.mmd:.6g} (bandwidth {report.bandwidth:.6g})")
    print(f"class assignment: {report.assigned_correct}/{report.class_count}")
    if args.out is not None:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        print(f"report: {args.out}")
    return 0


def _flops_rows(report):
    rows = []
    for s in report.stages:
        rho = bound = ""
        if s.drop is not None:
            rho = f"{float(s.drop.value):.4f}"
            note = "" if s.drop.bound_applicable else " (j<1, informational)"
            bound = f"{float(s.drop.bound):.4f}{note}"
        rows.append((s.name, s.tokens, s.dim, s.blocks, s.flops, s.params, rho, bound))
    for m in report.modules:
        rows.append((m.name, "", "", "", m.flops, m.params, "", ""))
    rows.append(("total", "", "", "", report.total_flops, report.total_params, "", ""))
    return rows


def _cmd_flops(args):
    from .architecture import ModelConfig, edt_nano_config
    from .flops import model_flops, oracle_flops

    config = edt_nano_config() if args.config is None else ModelConfig.load(args.config)
    report = model_flops(config)
    header = ("module", "tokens", "dim", "blocks", "flops", "params", "drop", "bound")
    rows = _flops_rows(report)
    if args.format == "csv":
        print(",".join(header))
        for row in rows:
            print(",".join(str(v) for v in row))
    else:
        widths = [max(len(str(r[i])) for r in (header, *rows)) for i in range(len(header))]
        for row in (header, *rows):
            print("  ".join(str(v).rjust(w) for v, w in zip(row, widths)))
    if args.oracle:
        got = oracle_flops(config)
        print(f"oracle forward MACs: {got}")
        print(f"analytic == oracle: {got == report.total_flops}")
    return 0


def _cmd_amm_export(args):
    from .amm import AmmParams, GridGeometry, build_amm, export_amm

    params = AmmParams(scale=args.scale, radius=args.radius)
    matrix = build_amm(GridGeometry(args.grid), params)
    export_amm(matrix, args.out)
    print(f"wrote {args.out} and {args.out}.json")
    return 0


def _cmd_dataset_gen(args):
    import numpy as np

    from .harness.dataset import DatasetSpec, generate_dataset

    spec = DatasetSpec(
        class_count=args.classes,
        channels=args.channels,
        height=args.height,
        width=args.width,
        seed=args.seed if args.seed is not None else 0,
    )
    ds = generate_dataset(spec)
    xs, ys = ds.batch(args.start, args.count)
    out = args.out
    np.save(out + "_data.npy", xs)
    np.save(out + "_labels.npy", ys)
    with open(out + "_spec.json", "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")
    print(f"wrote {out}_data.npy {out}_labels.npy {out}_spec.json")
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads(argv)
    args = _build_parser().parse_args(argv)
    from .errors import EdtError

    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "flops":
            return _cmd_flops(args)
        if args.command == "amm":
            return _cmd_amm_export(args)
        if args.command == "dataset":
            return _cmd_dataset_gen(args)
        raise SystemExit(f"unknown command {args.command!r}")
    except (EdtError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
