"""Command-line entry point.

Subcommands: train, eval, gradcheck, export-matrices, bench-shuffle.
Report paths write delimited CSV plus matplotlib figures into --out.
Exit codes: 0 success, 1 failed verification, 2 invalid config/checkpoint,
3 unreadable or malformed data.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from .autograd import Tensor
from .config import build_model_from_config, load_config, train_config_from
from .data import ArrayDataset, data_root, default_spec, load_dataset
from .errors import ConfigurationError, FormatError, InputError, UsageError
from .models import (DynamicShuffle, ManualShuffle, load_checkpoint, read_manifest,
                     save_checkpoint)
from .permutation import (PermutationMatrix, apply_shift, save_matrix_csv,
                          save_matrix_pgm)
from .training import METRIC_FIELDS, evaluate, run_training


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["trainer.seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        out["trainer.epochs"] = args.epochs
    if getattr(args, "lam", None) is not None:
        out["trainer.lambda"] = args.lam
    if getattr(args, "lr", None) is not None:
        out["trainer.lr0"] = args.lr
    if getattr(args, "data_root", None):
        out["data.root"] = args.data_root
    if getattr(args, "no_binarize", False):
        out["model.binarize"] = False
    if getattr(args, "no_orth_reg", False):
        out["trainer.no_orth_reg"] = True
    if getattr(args, "no_dynamic_input", False):
        out["model.mode"] = "static"
    if getattr(args, "full_channel", False):
        out["model.full_channel"] = True
    if getattr(args, "sharing", False):
        out["model.full_channel"] = False
    return out


def _load_data(cfg, split: str, augment: bool, seed: int, limit: int):
    root = data_root(cfg["data.root"] or None)
    spec = default_spec(cfg["data.format"], root, split, augment)
    images, labels = load_dataset(spec)
    return ArrayDataset(images, labels, spec, seed=seed,
                        limit=limit if limit > 0 else None)


def _append_metrics(path: str, row: dict):
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        if fresh:
            writer.writeheader()
        writer.writerow({k: row[k] for k in METRIC_FIELDS})


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config, _overrides(args))
        tc = train_config_from(cfg)
        rng = np.random.default_rng(tc.seed)
        model = build_model_from_config(cfg, rng)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        train = _load_data(cfg, "train", cfg["data.augment"], tc.seed,
                           cfg["data.limit_train"])
        test = _load_data(cfg, "test", False, tc.seed, cfg["data.limit_test"])
    except (FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3

    os.makedirs(args.out, exist_ok=True)
    # the snapshot alone must reproduce the run, so resolve env-provided paths
    cfg.values["data.root"] = data_root(cfg["data.root"] or None)
    with open(os.path.join(args.out, "resolved_config.txt"), "w") as fh:
        fh.write(cfg.snapshot())
    metrics_path = os.path.join(args.out, "metrics.csv")
    if os.path.exists(metrics_path):
        os.remove(metrics_path)
    best = {"top1": -1.0}
    meta = {"arch": cfg["model.arch"], "mode": cfg["model.mode"],
            "classes": cfg["model.classes"]}

    def on_epoch(row):
        _append_metrics(metrics_path, row)
        print(f"epoch {row['epoch']:3d}  lr {row['lr']:.4f}  "
              f"ce {row['train_ce']:.4f}  reg {row['train_reg']:.4f}  "
              f"train {100 * row['train_acc']:.2f}%  "
              f"test {100 * row['test_acc_top1']:.2f}%", flush=True)
        if row["test_acc_top1"] > best["top1"]:
            best["top1"] = row["test_acc_top1"]
            save_checkpoint(os.path.join(args.out, "best.ckpt"), model, meta)

    run_training(model,
                 lambda epoch: train.batches(tc.batch_size, epoch, True),
                 lambda: test.batches(tc.batch_size, 0, False),
                 tc, steps_per_epoch=train.steps(tc.batch_size), on_epoch=on_epoch)
    save_checkpoint(os.path.join(args.out, "final.ckpt"), model, meta)
    from .figures import render_convergence
    render_convergence(metrics_path, os.path.join(args.out, "convergence.png"),
                       title=f"{cfg['model.arch']} {cfg['model.mode']}")
    return 0


def cmd_eval(args) -> int:
    try:
        cfg = load_config(args.config, _overrides(args))
        meta = read_manifest(args.checkpoint)
        if meta and meta.get("arch") and meta["arch"] != cfg["model.arch"]:
            raise ConfigurationError(
                f"checkpoint arch {meta['arch']!r} != config {cfg['model.arch']!r}")
        model = build_model_from_config(cfg, np.random.default_rng(0))
        load_checkpoint(args.checkpoint, model)
    except (ConfigurationError, FormatError, OSError) as exc:
        print(f"checkpoint/config error: {exc}", file=sys.stderr)
        return 2
    try:
        test = _load_data(cfg, "test", False, cfg["trainer.seed"],
                          cfg["data.limit_test"])
    except (FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    res = evaluate(model, test.batches(cfg["trainer.batch_size"], 0, False),
                   binarize_override=True if args.force_binarize else None)
    print(f"top1 {100 * res['top1']:.2f}%  top5 {100 * res['top5']:.2f}%  "
          f"ce {res['ce']:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "eval.csv")
        fresh = not os.path.exists(path)
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh)
            if fresh:
                w.writerow(["checkpoint", "top1", "top5", "ce"])
            w.writerow([args.checkpoint, res["top1"], res["top5"], res["ce"]])
    return 0


def cmd_gradcheck(args) -> int:
    from .verification import run_gradcheck

    rows, ok = run_gradcheck(args.seed if args.seed is not None else 0,
                             corrupt=args.corrupt)
    for r in rows:
        status = "pass" if r["pass"] else "FAIL"
        print(f"{r['op']:24s} max_rel_err {r['max_rel_err']:.3e} "
              f"(threshold {r['threshold']:g})  {status}")
    if not ok:
        failing = [r["op"] for r in rows if not r["pass"]]
        print(f"gradcheck FAILED: {', '.join(failing)}", file=sys.stderr)
        return 1
    print("gradcheck passed")
    return 0


def cmd_export_matrices(args) -> int:
    try:
        cfg = load_config(args.config, _overrides(args))
        model = build_model_from_config(cfg, np.random.default_rng(0))
        if args.checkpoint:
            load_checkpoint(args.checkpoint, model)
    except (ConfigurationError, FormatError, OSError) as exc:
        print(f"checkpoint/config error: {exc}", file=sys.stderr)
        return 2
    k = args.samples
    if args.sample_source == "random":
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        hw = 28 if cfg["data.format"] == "mnist" else 32
        c_in = cfg["model.in_channels"]
        images = Tensor(rng.normal(0, 1, (k, c_in, hw, hw)).astype(np.float32))
    else:
        try:
            data = _load_data(cfg, "test", False, 0, k)
        except (FormatError, OSError) as exc:
            print(f"data error: {exc}", file=sys.stderr)
            return 3
        images, _ = next(data.batches(k, 0, False))
    os.makedirs(args.out, exist_ok=True)

    shuffles = []
    for mod in model.modules():
        if isinstance(mod, DynamicShuffle):
            mod.capture = True
            shuffles.append(mod)
    model.forward(images, training=False)

    exported = []
    layer_idx = 0
    for mod in model.modules():
        if isinstance(mod, ManualShuffle):
            name = f"layer{layer_idx:02d}_manual"
            dense = mod.perm.dense()
            save_matrix_csv(os.path.join(args.out, name + ".csv"), dense)
            save_matrix_pgm(os.path.join(args.out, name + ".pgm"), dense)
            exported.append((name, dense))
            layer_idx += 1
        elif isinstance(mod, DynamicShuffle):
            out = mod.last_output
            for s in range(min(k, out.composed.shape[0])):
                name = f"layer{layer_idx:02d}_sample{s}"
                mat = out.composed[s]
                save_matrix_csv(os.path.join(args.out, name + ".csv"), mat)
                save_matrix_pgm(os.path.join(args.out, name + ".pgm"), mat)
                exported.append((name, mat))
            layer_idx += 1
    # the fixed reordering all groups share, for comparison
    for mod in model.modules():
        if isinstance(mod, DynamicShuffle):
            s_dense = mod.manual_s.dense()
            save_matrix_csv(os.path.join(args.out, "manual_s.csv"), s_dense)
            save_matrix_pgm(os.path.join(args.out, "manual_s.pgm"), s_dense)
            exported.append(("manual_s", s_dense))
            break
    from .figures import render_matrix_grid
    render_matrix_grid(exported, os.path.join(args.out, "matrices.png"))
    print(f"exported {len(exported)} matrices to {args.out}")
    return 0


_BENCH_SHAPES = [  # (label, channels, spatial) of the full-scale shuffle layers
    ("v1g3_stage2", 60, 32), ("v1g3_stage3", 120, 16), ("v1g3_stage4", 240, 8),
    ("v1g8_stage2", 96, 32), ("v1g8_stage3", 192, 16), ("v1g8_stage4", 384, 8),
    ("v2_stage2", 58, 32), ("v2_stage3", 116, 16), ("v2_stage4", 232, 8),
]


def cmd_bench_shuffle(args) -> int:
    reps = max(1, args.reps)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    writer = csv.writer(sys.stdout)
    writer.writerow(["shape", "channels", "spatial", "matmul_ms", "shift_ms",
                     "speedup"])
    rows = []
    for label, c, hw in _BENCH_SHAPES:
        perm = PermutationMatrix(rng.permutation(c))
        feats = rng.normal(0, 1, (args.batch, c, hw, hw)).astype(np.float32)
        dense = perm.dense()
        flat = feats.reshape(args.batch, c, hw * hw)
        ref = np.matmul(dense, flat).reshape(feats.shape)
        shifted = apply_shift(perm, feats)
        if not np.array_equal(ref, shifted):
            print(f"equivalence failure on {label}", file=sys.stderr)
            return 1
        t_mm, t_sh = [], []
        for _ in range(reps):
            t0 = time.perf_counter()
            np.matmul(dense, flat)
            t_mm.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            apply_shift(perm, feats)
            t_sh.append(time.perf_counter() - t0)
        mm = float(np.median(t_mm)) * 1e3
        sh = float(np.median(t_sh)) * 1e3
        writer.writerow([label, c, hw, f"{mm:.4f}", f"{sh:.4f}",
                         f"{mm / sh if sh > 0 else float('inf'):.2f}"])
        rows.append((label, mm, sh))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench_shuffle.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["shape", "matmul_ms", "shift_ms"])
            for label, mm, sh in rows:
                w.writerow([label, f"{mm:.4f}", f"{sh:.4f}"])
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynshuffle",
                                description="dynamic channel shuffle workbench")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", default=None, help="flat key=value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--lambda", dest="lam", type=float, default=None)
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--epochs", type=int, default=None)
        if data:
            sp.add_argument("--data-root", default=None,
                            help="dataset root (or env DYNSHUFFLE_DATA)")
        sp.add_argument("--no-binarize", action="store_true")
        sp.add_argument("--no-orth-reg", action="store_true")
        sp.add_argument("--no-dynamic-input", action="store_true")
        sp.add_argument("--full-channel", action="store_true")
        sp.add_argument("--sharing", action="store_true")

    sp = sub.add_parser("train", help="train a model and write metrics/checkpoints")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--force-binarize", action="store_true",
                    help="binarize at test time even for no-binarize models")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference verification")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--corrupt", action="store_true",
                    help="include the deliberately broken fixture (negative control)")
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("export-matrices", help="dump composed shuffle matrices")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples", type=int, default=4)
    sp.add_argument("--sample-source", default="random",
                    help="'random' or a dataset split to draw probe inputs from")
    sp.set_defaults(fn=cmd_export_matrices)

    sp = sub.add_parser("bench-shuffle", help="time matmul vs memory-shift shuffles")
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_bench_shuffle)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, InputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
