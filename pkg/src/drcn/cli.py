"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 domain-invalid
result (e.g. a dilation pattern failing the HDC check), 3 I/O error.
Every subcommand accepts ``--json`` to print a machine-readable document
on standard output instead of text.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from . import checkpoint as ckpt
from .data import NoiseSpec, add_gaussian_noise, load_corpus, make_synthetic_corpus, read_image, write_corpus, write_image
from .errors import CheckpointError, ConfigError, DrcnError, ImageFormatError
from .hdc import hdc_validate, receptive_field
from .metrics import psnr
from .model import ModelConfig, build_model, count_params, denoise
from .trainer import TrainConfig, evaluate, image_noise, train

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _layer_list(text):
    layers = []
    for item in text.split(","):
        try:
            k, r = item.split(":")
            layers.append((int(k), int(r)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected kernel:dilation pairs, got {item!r}")
    return layers


def _emit(args, payload, text):
    if args.json:
        print(json.dumps(payload, sort_keys=True, allow_nan=True))
    else:
        print(text)


def _json_float(x):
    return None if x is None or math.isinf(x) else x


def _load_model(path):
    model, _, info = ckpt.load_checkpoint(path)
    return model.eval(), info


def cmd_validate_hdc(args):
    report = hdc_validate(args.rates, args.kernel)
    verdict = "VALID" if report.valid else "INVALID"
    label = "M2" if len(report.gaps) >= 2 else "M1"
    text = (f"M = {list(report.gaps)} {verdict} "
            f"({label} = {report.checked_gap} {'<=' if report.valid else '>'} K = {args.kernel})")
    _emit(args, {"rates": args.rates, "kernel": args.kernel, "gaps": list(report.gaps),
                 "valid": report.valid, "failing_index": report.failing_index}, text)
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_rf(args):
    rf = receptive_field(args.layers)
    _emit(args, {"layers": args.layers, "receptive_field": rf}, str(rf))
    return EXIT_OK


def cmd_info(args):
    if args.model:
        model, info = _load_model(args.model)
        meta = {"epoch": info.epoch, "seed": info.seed}
    else:
        cfg = {"gray": ModelConfig.gray(), "color": ModelConfig.color(),
               "reduced": ModelConfig.reduced(), "miniature": ModelConfig.miniature()}[args.preset]
        model, meta = build_model(cfg, 0), {}
    pc = count_params(model)
    payload = {
        "config": model.config.to_dict(),
        "depth": model.config.depth,
        "params": {"total": pc.total, "conv_weights": pc.conv_weights, "conv_biases": pc.conv_biases,
                   "batchnorm": pc.batchnorm, "prelu": pc.prelu, "breakdown": pc.breakdown},
        "receptive_field": model.receptive_field(),
        **meta,
    }
    width = max(len(n) for n in pc.breakdown)
    lines = [f"config: {model.config.canonical_json()}", f"depth: {model.config.depth}",
             f"receptive field: {model.receptive_field()}", "parameters:"]
    lines += [f"  {name:<{width}}  {n:>8}" for name, n in pc.breakdown.items()]
    lines.append(f"  {'total':<{width}}  {pc.total:>8}  (conv weights {pc.conv_weights})")
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_denoise(args):
    model, _ = _load_model(args.model)
    image = read_image(args.inp)
    if image.shape[0] != model.config.input_channels:
        raise ConfigError(f"image has {image.shape[0]} channels, model expects {model.config.input_channels}")
    payload = {"input": args.inp, "output": args.out}
    if args.sigma is not None:
        clean = image
        noisy = add_gaussian_noise(clean, image_noise(args.sigma, args.seed, 0))
        restored = denoise(model, noisy[None])[0]
        payload.update(sigma=args.sigma, seed=args.seed,
                       noisy_psnr=_json_float(psnr(noisy, clean).psnr_db),
                       psnr=_json_float(psnr(restored, clean).psnr_db))
        text = (f"noisy PSNR {psnr(noisy, clean).psnr_db:.4f} dB -> "
                f"denoised PSNR {psnr(restored, clean).psnr_db:.4f} dB")
    else:
        restored = denoise(model, image[None])[0]
        text = f"wrote {args.out}"
    write_image(restored, args.out)
    _emit(args, payload, text)
    return EXIT_OK


def cmd_eval(args):
    model, _ = _load_model(args.model)
    images = load_corpus(args.dir)
    if not images:
        raise ConfigError(f"no PGM/PPM images found in {args.dir}")
    result = evaluate(model, images, NoiseSpec(args.sigma, args.seed))
    payload = {"sigma": args.sigma, "seed": args.seed, **result.to_dict()}
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    _emit(args, payload, result.table())
    return EXIT_OK


def cmd_train(args):
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
    overrides = {"epochs": args.epochs, "seed": args.seed, "sigma": args.sigma,
                 "corpus_dir": args.corpus, "out_dir": args.out, "batch_size": args.batch_size}
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig.from_dict(data)
    if not cfg.out_dir:
        raise ConfigError("training needs an output directory (--out or out_dir in the config)")
    if not args.json:
        print("effective config: " + json.dumps(cfg.to_dict(), sort_keys=True), flush=True)
    result = train(cfg, resume=args.resume,
                   on_epoch=None if args.json else (lambda rec: print(rec.line(), flush=True)))
    payload = {"checkpoint": result.checkpoint_path, "epochs": len(result.log), "steps": result.steps,
               "final_loss": result.log[-1].loss if result.log else None,
               "val_psnr": result.log[-1].val_psnr if result.log else None}
    _emit(args, payload, f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def cmd_make_corpus(args):
    images = make_synthetic_corpus(args.count, args.size, args.channels, args.seed)
    paths = write_corpus(images, args.dir)
    _emit(args, {"paths": paths}, "\n".join(paths))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="drcn", description="Multiscale dilated residual denoiser")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.set_defaults(func=func)
        return sp

    sp = add("train", cmd_train, "train a denoiser")
    sp.add_argument("--config", help="JSON run config")
    sp.add_argument("--out", help="output directory for checkpoints and logs")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--corpus", help="directory of PGM/PPM training images")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--batch-size", type=int)

    sp = add("denoise", cmd_denoise, "denoise one image")
    sp.add_argument("--model", required=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sigma", type=float, help="treat input as clean and add this much noise first")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("eval", cmd_eval, "PSNR over a directory of clean images")
    sp.add_argument("--model", required=True)
    sp.add_argument("--dir", required=True)
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0, help="image i gets noise seed seed+i")
    sp.add_argument("--report", help="also write the JSON report here")

    sp = add("validate-hdc", cmd_validate_hdc, "check a dilation pattern")
    sp.add_argument("--rates", type=_int_list, required=True)
    sp.add_argument("--kernel", type=int, default=3)

    sp = add("rf", cmd_rf, "receptive field of a kernel:dilation stack")
    sp.add_argument("--layers", type=_layer_list, required=True)

    sp = add("info", cmd_info, "describe a checkpoint or preset")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--preset", choices=["gray", "color", "reduced", "miniature"])

    sp = add("make-corpus", cmd_make_corpus, "write the synthetic test corpus")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--count", type=int, default=12)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--channels", type=int, choices=[1, 3], default=1)
    sp.add_argument("--seed", type=int, default=0)
    return p


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code or 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CheckpointError, ImageFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DrcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
