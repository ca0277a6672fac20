"""Command-line interface.

Subcommands: analyze | synth | train | eval | compare | gradcheck.
Exit codes: 0 success, 1 data/configuration error, 2 usage error.
Diagnostics go to stderr; results go to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .checks import run_standard_checks
from .data import load_dataset, load_manifest, synth_generate
from .errors import CtsError, UsageError
from .metrics import EvalReport, compare_reports
from .model import SegModel, count_params, derive_dims
from .runconfig import RunConfig, parse_run_config, render_run_config
from .train import evaluate_checkpoint, records_to_csv, train

_CONFIG_FLAGS = {
    "seed": "--seed",
    "epochs": "--epochs",
    "batch": "--batch",
    "lr": "--lr",
    "levels": "--levels",
    "blocks": "--blocks",
    "base_channels": "--base-channels",
    "downsample": "--downsample",
    "classes": "--classes",
    "input_size": "--input-size",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="key = value config file")
    for field, flag in _CONFIG_FLAGS.items():
        kind = float if field == "lr" else int
        p.add_argument(flag, dest=field, type=kind, default=None)
    p.add_argument("--no-skip", dest="use_skip", action="store_const", const=False, default=None,
                   help="disable the encoder-decoder skip connections")
    p.add_argument("--no-dsl", dest="use_dsl", action="store_const", const=False, default=None,
                   help="disable the channel-reducing linears in the skips")
    p.add_argument("--mask-empty", dest="mask_empty", action="store_const", const=True, default=None,
                   help="exclude empty ground-truth classes from the Dice average and evaluation")
    p.add_argument("--parallel", dest="parallel", action="store_const", const=True, default=None,
                   help="allow multithreaded kernels (forfeits run-to-run determinism)")


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in list(_CONFIG_FLAGS) + ["use_skip", "use_dsl", "mask_empty", "parallel", "data", "out"]}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "data" in overrides:
        overrides["data"] = str(overrides["data"])
    if "out" in overrides:
        overrides["out"] = str(overrides["out"])
    if args.config is not None:
        return parse_run_config(args.config, overrides)
    base = RunConfig()
    for k, v in overrides.items():
        setattr(base, k, v)
    return base


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cts", description="hybrid CNN/Transformer segmentation toolkit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("analyze", help="print the dimension table and parameter counts")
    _add_config_flags(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--tensor-images", action="store_true",
                   help="write images as raw CTS-T1 tensors instead of PNGs")

    p = sub.add_parser("train", help="train on a manifest dataset")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("run"))

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes the report CSV")
    p.add_argument("ckpt", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--mask-empty", dest="mask_empty", action="store_true")
    p.add_argument("--parallel", action="store_true")

    p = sub.add_parser("compare", help="WSRT p-values between two report CSVs")
    p.add_argument("report_a", type=Path)
    p.add_argument("report_b", type=Path)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference checks of all ops and blocks")
    p.add_argument("--json", action="store_true")

    return parser


def _cmd_analyze(args) -> int:
    cfg = _run_config(args)
    mc = cfg.model_config()
    dims = derive_dims(mc)
    counts = count_params(mc)
    if args.json:
        payload = {
            "config": json.loads(json.dumps(vars(cfg))),
            "tokens": dims.tokens,
            "levels": [
                {
                    "level": i,
                    "spatial": list(dims.spatial[i]),
                    "enc_channels": dims.enc_channels[i],
                    "dsl_channels": dims.dsl_channels[i],
                    "patch_side": dims.patch_side[i],
                    "token_dim": dims.token_dim[i],
                    "heads": dims.heads[i],
                }
                for i in range(mc.levels + 1)
            ],
            "params": dict(counts.rows),
            "param_groups": counts.group_totals(),
            "total_params": counts.total,
        }
        print(json.dumps(payload, indent=2))
        return 0
    print(f"input {mc.width}x{mc.height}x{mc.in_channels}  classes={mc.classes}  tokens P_l={dims.tokens}")
    print("level  spatial        enc_ch  dsl_ch  patch  tokens  token_dim  heads")
    for i in range(mc.levels + 1):
        w_i, h_i = dims.spatial[i]
        dsl = dims.dsl_channels[i] if dims.dsl_channels[i] is not None else "-"
        print(
            f"{i:<6} {w_i}x{h_i:<10} {dims.enc_channels[i]:<7} {dsl:<7} "
            f"{dims.patch_side[i]:<6} {dims.tokens:<7} {dims.token_dim[i]:<10} {dims.heads[i]}"
        )
    print()
    for name, count in counts.rows:
        print(f"{name:<28} {count:>12,}")
    print(f"{'total':<28} {counts.total:>12,}  ({counts.total / 1e6:.2f}M)")
    return 0


def _cmd_synth(args) -> int:
    manifest = synth_generate(args.out, args.count, args.size, args.classes, args.seed,
                              tensor_images=args.tensor_images)
    counts = {s: len(manifest.ids(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(manifest.entries)} samples to {manifest.root} "
          f"(train={counts['train']} val={counts['val']} test={counts['test']})")
    return 0


def _cmd_train(args) -> int:
    cfg = _run_config(args)
    manifest = load_manifest(Path(cfg.data))
    cfg.in_channels = manifest.channels
    if args.classes is None:
        cfg.classes = manifest.classes
    elif cfg.classes < manifest.classes:
        raise UsageError(f"--classes {cfg.classes} below the manifest's {manifest.classes}")
    train_samples = load_dataset(manifest, "train")
    val_samples = load_dataset(manifest, "val")
    model = SegModel(cfg.model_config(), seed=cfg.seed)
    out_dir = Path(cfg.out or "run")
    records, best = train(
        model,
        train_samples,
        val_samples,
        cfg.loss_config(),
        epochs=cfg.epochs,
        batch_size=cfg.batch,
        lr=cfg.lr,
        seed=cfg.seed,
        out_dir=out_dir,
        parallel=cfg.parallel,
        log=lambda msg: print(msg, file=sys.stderr),
    )
    records_to_csv(records, out_dir / "train_log.csv")
    (out_dir / "run_config.txt").write_text(render_run_config(cfg))
    best_val = min(r.val_loss for r in records)
    print(f"best checkpoint: {best}")
    print(f"best val_loss: {best_val!r}")
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.data)
    samples = load_dataset(manifest, args.split)
    model, meta = load_checkpoint(args.ckpt)
    loss_cfg = RunConfig(mask_empty=args.mask_empty, alpha=model.config.alpha, beta=model.config.beta).loss_config()
    report, loss = evaluate_checkpoint(
        args.ckpt, samples, loss_cfg, batch_size=args.batch, parallel=args.parallel
    )
    print(f"split={args.split} n={len(samples)} loss={loss!r} epoch={meta.epoch}", file=sys.stderr)
    if args.out is not None:
        report.to_csv(args.out)
        dm, ds = report.dc_stats()
        am, asd = report.assd_stats()
        print(f"wrote {args.out}  dc={dm:.4f}+/-{ds:.4f}  assd={am:.4f}+/-{asd:.4f}")
    else:
        import io as _io

        buf = _io.StringIO()
        report.to_csv(buf)
        sys.stdout.write(buf.getvalue())
    return 0


def _cmd_compare(args) -> int:
    a = EvalReport.from_csv(args.report_a)
    b = EvalReport.from_csv(args.report_b)
    table = compare_reports(a, b)
    if args.json:
        print(json.dumps(table, indent=2))
        return 0
    for label, stats in table.items():
        parts = [f"class={label}", f"n={int(stats['n'])}", f"p_dc={stats['p_dc']!r}"]
        if "p_assd" in stats:
            parts.append(f"p_assd={stats['p_assd']!r}")
        print("  ".join(parts))
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_standard_checks()
    if args.json:
        print(json.dumps({
            name: {"passed": rep.passed, "max_rel_err": rep.max_rel_err} for name, rep in results
        }, indent=2))
    else:
        for name, rep in results:
            status = "PASS" if rep.passed else "FAIL"
            print(f"{status} {name}: max_rel_err={rep.max_rel_err:.3e} (tol {rep.tolerance:g})")
    return 0 if all(rep.passed for _, rep in results) else 1


_COMMANDS = {
    "analyze": _cmd_analyze,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "gradcheck": _cmd_gradcheck,
}


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CtsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
