"""Command-line interface.

Subcommands: ``synth`` (generate a synthetic corpus), ``train`` (fit a
model and write a checkpoint), ``detect`` (score images and write
heatmaps), ``eval`` (produce an evaluation report), ``inspect`` (print a
checkpoint header).  Exit codes: 0 success, 1 usage error, 2 runtime
error.

All randomness is controlled by ``--seed``.  Any flag may also be set in
a ``--config`` file of ``key = value`` lines (command-line flags win).
The effective configuration is echoed into every output JSON, with paths
kept exactly as typed, so runs invoked with relative paths from matching
working directories reproduce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError, inspect_checkpoint, load_checkpoint, save_checkpoint
from .data import DataError, load_dataset, load_image
from .evaluation import UndefinedAucError, evaluate
from .heatmap import write_heatmap
from .metrics import LossWeights
from .model import ArchConfig, build_model
from .refinement import DEFAULT_MAX_ITERS, detect
from .synthetic import DEFECTS, TEXTURES, SynthSpec, generate_synthetic
from .training import TrainConfig, TrainingError, compute_thresholds, train

__all__ = ["main"]

RUNTIME_ERRORS = (
    DataError,
    CheckpointError,
    TrainingError,
    UndefinedAucError,
    ValueError,
    KeyError,
    OSError,
)

# store_true flags; in a config file they take true/false values.
BOOL_FLAGS = {"masked-only", "fixed-range", "quiet", "verify"}
TRUTHY = {"1", "true", "yes", "on"}
FALSY = {"0", "false", "no", "off"}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this tool's contract is exit 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _size_range(text: str) -> tuple[int, int]:
    values = _int_list(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return values[0], values[1]


def _config_tokens(path: str) -> list[str]:
    """Translate a key = value config file into argv tokens."""
    cfg_path = Path(path)
    if not cfg_path.is_file():
        raise SystemExit(_usage_error(f"config file not found: {path}"))
    tokens: list[str] = []
    for lineno, raw in enumerate(cfg_path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(_usage_error(f"{path}:{lineno}: expected 'key = value', got {raw!r}"))
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-").lstrip("-")
        if key == "config":
            raise SystemExit(_usage_error(f"{path}:{lineno}: a config file cannot set --config"))
        if key in BOOL_FLAGS:
            if value.lower() in TRUTHY:
                tokens.append(f"--{key}")
            elif value.lower() not in FALSY:
                raise SystemExit(
                    _usage_error(f"{path}:{lineno}: boolean flag {key} wants true/false, got {value!r}")
                )
        else:
            tokens.extend([f"--{key}", value])
    return tokens


def _usage_error(message: str) -> int:
    print(f"maskrestore: error: {message}", file=sys.stderr)
    return 1


def _apply_config(argv: list[str]) -> list[str]:
    """Splice config-file tokens in after the subcommand (flags override)."""
    if not argv or argv[0].startswith("-"):
        return argv
    rest = list(argv[1:])
    config_path = None
    for i, token in enumerate(rest):
        if token == "--config":
            if i + 1 >= len(rest):
                raise SystemExit(_usage_error("--config needs a file argument"))
            config_path = rest[i + 1]
            rest = rest[:i] + rest[i + 2 :]
            break
        if token.startswith("--config="):
            config_path = token.split("=", 1)[1]
            rest = rest[:i] + rest[i + 1 :]
            break
    if config_path is None:
        return argv
    return [argv[0], *_config_tokens(config_path), *rest]


def _config_echo(args: argparse.Namespace) -> dict:
    skip = {"func", "command"}
    echo = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        echo[key] = list(value) if isinstance(value, tuple) else value
    return echo


def _set_jobs(jobs: int | None) -> None:
    if jobs is not None:
        if jobs < 1:
            raise ValueError(f"--jobs must be >= 1, got {jobs}")
        torch.set_num_threads(jobs)


def _dump_json(payload: dict, path: str | Path | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        texture=args.texture,
        resolution=args.resolution,
        defects=tuple(args.defects.split(",")),
        defect_size=args.defect_size,
        n_train=args.n_train,
        n_validation=args.n_val,
        n_test=args.n_test,
        seed=args.seed,
    )
    summary = generate_synthetic(spec, args.out)
    summary["config"] = _config_echo(args)
    _dump_json(summary, None)
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    _set_jobs(args.jobs)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr0=args.lr,
        lr_halving_period=args.lr_halving_period,
        weight_decay=args.weight_decay,
        weights=LossWeights(args.lambda1, args.lambda2, args.lambda3, args.lambda4),
        scales=args.scales,
        p_mask=args.p_mask,
        seed=args.seed,
    )
    dataset = load_dataset(args.data, args.resolution)
    model = build_model(ArchConfig(resolution=args.resolution), seed=args.seed)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = args.log if args.log else f"{args.out}.log.jsonl"
    meta = {"command": "train", "config": _config_echo(args)}
    validation = dataset.stack("validation")

    def save_periodic(epoch: int, net) -> None:
        if args.checkpoint_every <= 0 or (epoch + 1) % args.checkpoint_every:
            return
        if epoch + 1 >= args.epochs:
            return
        thr = compute_thresholds(net, validation, cfg.scales, cfg.batch_size)
        partial = out.with_name(f"{out.stem}_epoch{epoch + 1:03d}{out.suffix}")
        save_checkpoint(partial, net, cfg.scales, thr, {**meta, "epoch": epoch + 1})
        print(f"wrote {partial}", file=sys.stderr)

    thresholds, log = train(
        model,
        dataset.stack("train"),
        cfg,
        validation=validation,
        log_path=log_path,
        log_header=meta,
        on_epoch_end=save_periodic,
    )
    save_checkpoint(out, model, cfg.scales, thresholds, meta)
    print(f"wrote {out}")
    print(f"final loss: {log[-1]['total']:.6f}")
    for k in cfg.scales:
        print(f"threshold k={k}: {thresholds[k]:.6g}")
    return 0


def _detect_one(model, info, image_path: Path, out_dir: Path, args, echo: dict) -> dict:
    image = load_image(image_path, model.arch.resolution)
    result = detect(
        model,
        info["thresholds"],
        image,
        info["scales"],
        max_iters=args.max_iters,
        masked_only_score=args.masked_only,
    )
    stem = image_path.stem
    files = write_heatmap(
        result.score_map, out_dir / f"{stem}_score.png", normalize=not args.fixed_range
    )
    payload = {
        "id": image_path.name,
        "score": result.score,
        "scales": {
            str(s.scale): {
                "score": s.score,
                "iterations": s.iterations,
                "converged": s.converged,
            }
            for s in result.states
        },
        "heatmap": files["grayscale"].name,
        "config": echo,
    }
    _dump_json(payload, out_dir / f"{stem}_detect.json")
    return payload


def _cmd_detect(args: argparse.Namespace) -> int:
    _set_jobs(args.jobs)
    model, info = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.image:
        paths = [Path(args.image)]
    else:
        root = Path(args.data_dir)
        if not root.is_dir():
            raise DataError(f"not a directory: {root}")
        paths = sorted(p for p in root.iterdir() if p.suffix.lower() == ".png")
        if not paths:
            raise DataError(f"no .png images in {root}")
    echo = _config_echo(args)
    for path in paths:
        payload = _detect_one(model, info, path, out_dir, args, echo)
        print(f"{path}\t{payload['score']:.6f}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    _set_jobs(args.jobs)
    model, info = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, model.arch.resolution)
    report = evaluate(
        model,
        info["thresholds"],
        dataset,
        info["scales"],
        max_iters=args.max_iters,
        masked_only_score=args.masked_only,
        progress=not args.quiet,
        heatmap_dir=args.heatmap_dir,
    )
    report["config"] = _config_echo(args)
    _dump_json(report, args.out)
    if args.out:
        print(f"wrote {args.out}")
        overall = report["overall"]
        image_auc = overall.get("image_auc")
        print(f"image AUC: {image_auc if image_auc is None else format(image_auc, '.4f')}")
        if "pixel_auc" in overall:
            pixel = overall["pixel_auc"]
            print(f"pixel AUC: {pixel if pixel is None else format(pixel, '.4f')}")
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    info = inspect_checkpoint(args.checkpoint, verify_blob=args.verify)
    _dump_json(info, None)
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="maskrestore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key = value file; flags given here override it")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    add_common(p)
    p.add_argument("--out", required=True, help="corpus root directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--texture", choices=TEXTURES, default="stripes")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-val", type=int, default=20)
    p.add_argument("--n-test", type=int, default=60)
    p.add_argument("--defects", default=",".join(DEFECTS), help="comma-separated defect types")
    p.add_argument("--defect-size", type=_size_range, default=(12, 22), help="pixel range 'lo,hi'")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    add_common(p)
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-halving-period", type=int, default=50)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--scales", type=_int_list, default=(4, 8, 16))
    p.add_argument("--p-mask", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--lambda1", type=float, default=1.0, help="MSE loss weight")
    p.add_argument("--lambda2", type=float, default=1.0, help="GMS loss weight")
    p.add_argument("--lambda3", type=float, default=1.0, help="SSIM loss weight")
    p.add_argument("--lambda4", type=float, default=1.0, help="mask loss weight")
    p.add_argument("--jobs", type=int, default=None, help="CPU threads for tensor ops")
    p.add_argument("--log", default=None, help="JSONL training log (default: <out>.log.jsonl)")
    p.add_argument("--checkpoint-every", type=int, default=0, help="also save every N epochs")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", help="score one image or a directory")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--image", help="single input image")
    source.add_argument("--data-dir", help="directory of .png images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    p.add_argument("--masked-only", action="store_true", help="score only hidden pixels")
    p.add_argument("--jobs", type=int, default=None, help="CPU threads for tensor ops")
    p.add_argument(
        "--fixed-range",
        action="store_true",
        help="heatmaps use the fixed score range instead of per-image min-max",
    )
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled test split")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    p.add_argument("--masked-only", action="store_true")
    p.add_argument("--jobs", type=int, default=None, help="CPU threads for tensor ops")
    p.add_argument("--heatmap-dir", default=None, help="also write per-image score heatmaps here")
    p.add_argument("--quiet", action="store_true", help="suppress stderr progress")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="print a checkpoint header")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--verify", action="store_true", help="also check the weight blob hash")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = _build_parser().parse_args(_apply_config(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        message = exc.args[0] if exc.args else exc
        print(f"maskrestore: error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
