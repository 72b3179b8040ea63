"""Command-line driver.  Tables go to stdout as TSV, diagnostics to stderr."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import experiments as ex
from .config import RunConfig, load_run_config
from .gradcheck import CASE_NAMES, gradient_suite
from .models import param_count
from .storage import (
    ContainerError, load_dataset, read_checkpoint, read_container, save_checkpoint, save_dataset,
    write_container,
)
from .synthdata import SceneError
from .trainer import TrainingDiverged, evaluate, predict, train


class CLIError(Exception):
    pass


def _tsv(rows, out=None) -> None:
    out = out or sys.stdout
    for row in rows:
        out.write("\t".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, tuple):
        return "x".join(str(x) for x in v)
    return str(v)


def _resolution(text: str) -> tuple:
    parts = text.lower().split("x")
    try:
        vals = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}; use N or XxYxZ") from None
    if len(vals) == 1:
        vals = vals * 3
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}; use N or XxYxZ")
    return vals


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
        cfg.data.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
    cfg.validate()
    return cfg


def _dataset(args, cfg: RunConfig):
    if getattr(args, "data", None):
        return load_dataset(args.data)
    return cfg.data.build()


# ------------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    if args.n is not None:
        cfg.data = dataclasses.replace(cfg.data, n=args.n)
    if args.resolution is not None:
        cfg.data = dataclasses.replace(cfg.data, resolution=args.resolution)
    ds = cfg.data.build()
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.train)} train + {len(ds.val)} val samples at "
          f"{'x'.join(map(str, ds.resolution))} to {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    ds = _dataset(args, cfg)
    cfg.model.check_resolution(ds.resolution)
    dtype = np.float32 if args.float32 else np.float64
    if args.log:
        with open(args.log, "w", encoding="utf-8") as log:
            ckpt, _ = train(cfg.model, cfg.train, ds, log_stream=log, dtype=dtype)
    else:
        ckpt, _ = train(cfg.model, cfg.train, ds, log_stream=sys.stdout, dtype=dtype)
    save_checkpoint(ckpt, None, args.out)
    print(f"saved checkpoint to {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    model = read_checkpoint(args.checkpoint).to_model()
    cfg = _run_config(args)
    ds = _dataset(args, cfg)
    resolutions = args.resolution or [ds.resolution]
    print("resolution\tmean_dice\t" + "\t".join(f"dice_label{l + 1}" for l in range(model.config.num_labels)))
    for r in resolutions:
        res = evaluate(model, ds, r, split=args.split)
        _tsv([(res.resolution, res.mean) + tuple(float(v) for v in res.per_label)])
    return 0


def cmd_infer(args) -> int:
    model = read_checkpoint(args.checkpoint).to_model()
    _, tensors = read_container(args.input)
    if "image" not in tensors:
        raise CLIError(f"{args.input} has no tensor named 'image'")
    scores = predict(model, tensors["image"])
    write_container(args.out, {"kind": "prediction", "threshold": args.threshold},
                    {"scores": scores, "mask": (scores > args.threshold).astype(np.float64)})
    print(f"wrote scores {scores.shape} to {args.out}", file=sys.stderr)
    return 0


def cmd_param_count(args) -> int:
    cfg = load_run_config(args.config)
    print(param_count(cfg.model))
    return 0


def cmd_spectral_demo(args) -> int:
    if args.input:
        _, tensors = read_container(args.input)
        if "image" not in tensors:
            raise CLIError(f"{args.input} has no tensor named 'image'")
        volume = tensors["image"][args.channel]
    else:
        volume = ex.demo_volume(args.seed, args.resolution, args.channel)
    fractions = args.mode_fraction or list(ex.DEFAULT_FRACTIONS)
    print("mode_fraction\tk_max\tmse")
    _tsv(ex.spectral_demo(volume, fractions))
    return 0


def _sweep_table(rows, resolutions) -> None:
    print("setting\tn_params\t" + "\t".join(f"dice@{r}" for r in resolutions) + "\tseconds")
    for row in rows:
        _tsv([(row.label, row.n_params) + tuple(row.dice[r] for r in resolutions) + (row.seconds,)])


def _save_rows(rows, out_dir: Optional[str]) -> None:
    if not out_dir:
        return
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    with open(Path(out_dir) / "results.jsonl", "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps({"setting": row.label, "config": row.config.to_dict(),
                                "n_params": row.n_params,
                                "dice": {str(k): v for k, v in row.dice.items()},
                                "per_label": {str(k): list(map(float, v)) for k, v in row.per_label.items()},
                                "seconds": row.seconds}) + "\n")


def cmd_sweep_nxs(args) -> int:
    cfg = _run_config(args)
    ds = _dataset(args, cfg)
    budget = args.budget or cfg.model.n_xs * cfg.model.n_blocks
    res = list(cfg.train.eval_resolutions)
    rows = ex.sweep_nxs(args.values, budget, cfg.model, cfg.train, ds, res)
    _sweep_table(rows, res)
    _save_rows(rows, args.out_dir)
    return 0


def cmd_sweep_kmax(args) -> int:
    cfg = _run_config(args)
    ds = _dataset(args, cfg)
    values = [v if v == "all" else int(v) for v in args.values]
    res = list(cfg.train.eval_resolutions)
    rows = ex.sweep_kmax(values, cfg.model, cfg.train, ds, res)
    _sweep_table(rows, res)
    _save_rows(rows, args.out_dir)
    return 0


def cmd_gradcheck(args) -> int:
    results = gradient_suite(args.seed, args.configs, only=args.only)
    worst: dict = {}
    for r in results:
        name = r.name.split("#")[0]
        worst[name] = max(worst.get(name, 0.0), r.rel_error)
    print("case\tmax_rel_error\tstatus")
    for name, err in worst.items():
        _tsv([(name, err, "ok" if err < args.tol else "FAIL")])
    return 0 if all(e < args.tol for e in worst.values()) else 1


def cmd_bench(args) -> int:
    cfg = load_run_config(args.config)
    print("op\tsize\tseconds")
    _tsv(ex.bench(args.sizes, args.channels, args.repeats, cfg.model, args.seed))
    return 0


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hnoseg", description="Spectral neural operators for 3D segmentation.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, config=True, seed=True):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(fn=fn)
        if config:
            sp.add_argument("--config", help="run configuration JSON")
        if seed:
            sp.add_argument("--seed", type=int, help="overrides the configured seeds")
        return sp

    sp = add("gen-data", cmd_gen_data, "rasterize a synthetic dataset to a directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int)
    sp.add_argument("--resolution", type=_resolution)

    sp = add("train", cmd_train, "train a model and save a checkpoint")
    sp.add_argument("--data", help="dataset directory (default: generate from config)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="write JSON-lines log here instead of stdout")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--float32", action="store_true")

    sp = add("eval", cmd_eval, "Dice of a checkpoint at one or more resolutions")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data")
    sp.add_argument("--resolution", type=_resolution, action="append")
    sp.add_argument("--split", choices=["train", "val"], default="val")

    sp = add("infer", cmd_infer, "segment one volume stored in a tensor container", seed=False, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="container holding an 'image' tensor [C,X,Y,Z]")
    sp.add_argument("--out", required=True)
    sp.add_argument("--threshold", type=float, default=0.5)

    add("param-count", cmd_param_count, "closed-form parameter count of the model config", seed=False)

    sp = add("spectral-demo", cmd_spectral_demo, "reconstruction MSE versus retained mode fraction",
             config=False)
    sp.set_defaults(seed=0)
    sp.add_argument("--mode-fraction", type=float, action="append")
    sp.add_argument("--resolution", type=_resolution, default=(64, 64, 64))
    sp.add_argument("--channel", type=int, default=0)
    sp.add_argument("--input", help="container with an 'image' tensor instead of a synthetic scene")

    for name, fn, help_text in (("sweep-nxs", cmd_sweep_nxs, "train hnoseg-xs across n_xs at a fixed budget"),
                                ("sweep-kmax", cmd_sweep_kmax, "train the configured model across k_max")):
        sp = add(name, fn, help_text)
        sp.add_argument("--data")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--out-dir")
        if name == "sweep-nxs":
            sp.add_argument("--values", type=int, nargs="+", required=True)
            sp.add_argument("--budget", type=int)
        else:
            sp.add_argument("--values", nargs="+", required=True, help="ints or 'all'")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of every primitive and block",
             config=False)
    sp.set_defaults(seed=0)
    sp.add_argument("--configs", type=int, default=20)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.add_argument("--only", nargs="+", choices=CASE_NAMES)

    sp = add("bench", cmd_bench, "timing table for transforms and forward passes")
    sp.set_defaults(seed=0)
    sp.add_argument("--sizes", type=int, nargs="+", default=[32, 64])
    sp.add_argument("--channels", type=int, default=16)
    sp.add_argument("--repeats", type=int, default=3)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None and args.command in ("gradcheck", "bench", "spectral-demo"):
        args.seed = 0
    try:
        return args.fn(args)
    except (CLIError, ValueError, KeyError, TypeError, OSError, ContainerError, SceneError,
            TrainingDiverged) as exc:
        print(f"hnoseg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
