"""Command-line interface.

Exit codes: 0 success, 2 usage/configuration error, 3 verification
failure, 4 I/O error, 5 aborted (diverged) run. Failures print one
machine-readable line `error code=<n> kind=<kind> msg=<...>` to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import dgbench, styletransfer, verify
from .errors import (AbortedRunError, ConfigError, DomainError, FreqnormError,
                     ShapeError, UnknownModuleError, VerificationError)
from .kvfile import read_kv
from .models import Model, ModelSpec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VERIFY = 3
EXIT_IO = 4
EXIT_ABORTED = 5


def _parse_sizes(text: str) -> list[tuple[int, int]]:
    sizes = []
    for part in text.split(","):
        part = part.strip().lower()
        if "x" not in part:
            raise ConfigError(f"size {part!r} must look like HxW, e.g. 8x8")
        h, w = part.split("x", 1)
        sizes.append((int(h), int(w)))
    return sizes


def _parse_momentum(text: str) -> float | None:
    if text == "cumulative":
        return None
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise ConfigError(f"--momentum-stats must be in (0, 1] or 'cumulative', got {text}")
    return value


def cmd_verify(args) -> int:
    sizes = _parse_sizes(args.sizes) if args.sizes else None
    results = verify.run_derivation_suite(trials=args.trials, seed=args.seed,
                                          sizes=sizes)
    for r in results:
        print(r.line())
    if any(not r.passed for r in results):
        raise VerificationError("derivation suite failed")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results, elapsed = verify.run_selftest(seed=args.seed)
    for r in results:
        print(r.line())
    print(f"selftest: {sum(r.passed for r in results)}/{len(results)} checks "
          f"passed in {elapsed:.1f}s")
    if any(not r.passed for r in results):
        raise VerificationError("selftest failed")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.config:
        config = dgbench.config_from_kv(read_kv(args.config))
    else:
        config = dgbench.GeneratorConfig(seed=args.seed)
    dataset = dgbench.generate(config)
    dgbench.save_dataset(dataset, args.out)
    total = sum(d.images.shape[0] for d in dataset.domains)
    print(f"wrote {len(dataset.domains)} domains, {total} images to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = dgbench.load_dataset(args.data)
    protocol = dgbench.Protocol(
        held_out=args.holdout,
        seeds=(args.seed,),
        epochs=args.epochs,
        iterations=args.iters,
        learning_rate=args.lr,
        batch_size=args.batch,
    )
    spec = ModelSpec(variant=args.variant, classes=dataset.config.classes,
                     input_shape=(3, dataset.config.image_size, dataset.config.image_size),
                     stats_momentum=_parse_momentum(args.momentum_stats))
    model, metrics, best_epoch, best_val = dgbench.train_model(
        dataset, spec, protocol, args.seed)
    held = dataset.domain(args.holdout)
    test_acc = dgbench.accuracy(model, held.images.data, held.labels)
    run = dgbench.RunResult(
        run_id=f"{args.variant}-{args.holdout}-s{args.seed}", variant=args.variant,
        held_out=args.holdout, seed=args.seed, epochs=metrics,
        best_epoch=best_epoch, val_acc=best_val, test_acc=test_acc,
        lambdas=dgbench.report_lambdas(model),
    )
    meta = {"data": os.path.abspath(args.data), "holdout": args.holdout,
            "seed": str(args.seed)}
    model.save(args.out, meta=meta)
    dgbench.write_results_csv(os.path.join(args.out, "metrics.csv"),
                              [dgbench.ResultRecord([run])])
    dgbench.write_lambda_csv(os.path.join(args.out, "lambdas.csv"), run.lambdas)
    print(f"run={run.run_id} best_epoch={best_epoch} val_acc={best_val:.4f} "
          f"test_acc={test_acc:.4f}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _load_checkpoint(path: str) -> tuple[Model, dict[str, str]]:
    if not os.path.isdir(path):
        raise FileNotFoundError(f"checkpoint directory {path} does not exist")
    return Model.load(path)


def cmd_eval(args) -> int:
    model, _ = _load_checkpoint(args.checkpoint)
    dataset = dgbench.load_dataset(args.data)
    held = dataset.domain(args.holdout)
    acc = dgbench.accuracy(model, held.images.data, held.labels)
    line = f"{args.holdout},{dgbench._fmt(acc)}"
    print(f"holdout,test_acc\n{line}")
    if args.out:
        dgbench._write_lines(args.out, ["holdout,test_acc", line])
    return EXIT_OK


def cmd_lambdas(args) -> int:
    model, _ = _load_checkpoint(args.checkpoint)
    rows = dgbench.report_lambdas(model)
    print(dgbench.LAMBDA_HEADER)
    for module, position, lam_norm, lam_org in rows:
        print(f"{module},{position},{dgbench._fmt(lam_norm)},{dgbench._fmt(lam_org)}")
    if args.out:
        dgbench.write_lambda_csv(args.out, rows)
    return EXIT_OK


def cmd_ablate_lambda(args) -> int:
    model, meta = _load_checkpoint(args.checkpoint)
    data_path = args.data or meta.get("data")
    holdout = args.holdout or meta.get("holdout")
    if not data_path or not holdout:
        raise ConfigError("checkpoint has no recorded dataset; pass --data and --holdout")
    dataset = dgbench.load_dataset(data_path)
    held = dataset.domain(holdout)
    record = dgbench.fixed_lambda_ablation(model, args.module, args.value,
                                           held.images.data, held.labels)
    print("module,position,lambda_org,frozen,test_acc")
    print(f"{record['module']},{record['position']},{dgbench._fmt(record['lambda_org'])},"
          f"{record['frozen']},{dgbench._fmt(record['test_acc'])}")
    return EXIT_OK


def cmd_style_transfer(args) -> int:
    content = styletransfer.load_image(args.content)
    style = styletransfer.load_image(args.style)
    if args.mode == "swap":
        result = styletransfer.amplitude_swap(content, style)
    elif args.mode == "mix":
        result = styletransfer.amplitude_mix(content, style, args.ratio)
    else:
        result = styletransfer.low_freq_swap(content, style, args.band)
    styletransfer.save_image(args.out, result.image)
    print(f"wrote {args.out} (clipped_fraction={result.clipped_fraction:.6f})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqnorm",
        description="Frequency-domain feature normalization toolkit: "
                    "derivation checks, spectral style transfer, and a synthetic "
                    "domain-generalization benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the derivation checks")
    p.add_argument("--sizes", default="", help="comma-separated HxW grid sizes (default: random 3..16)")
    p.add_argument("--trials", type=int, default=120, help="number of random grids")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("selftest", help="run transform, gradient, and endpoint suites")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(fn=cmd_selftest)

    p = sub.add_parser("gen-data", help="generate a synthetic domain dataset")
    p.add_argument("--config", default="", help="key=value generator config file")
    p.add_argument("--seed", type=int, default=0, help="seed when no config is given")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one model on a leave-one-domain-out split")
    p.add_argument("--variant", choices=["baseline", "dac_p", "dac_sc"], required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--holdout", required=True, help="held-out domain name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4, help="base learning rate")
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--iters", type=int, default=40, help="iterations per epoch")
    p.add_argument("--batch", type=int, default=32, help="mini-batch size")
    p.add_argument("--momentum-stats", default="0.1",
                   help="running-stats momentum, or 'cumulative'")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a held-out domain")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--holdout", required=True)
    p.add_argument("--out", default="", help="optional CSV output path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("lambdas", help="report adjust pairs of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="", help="optional CSV output path")
    p.set_defaults(fn=cmd_lambdas)

    p = sub.add_parser("ablate-lambda", help="freeze one scnorm pair and re-evaluate")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--module", required=True, help="module id, e.g. scnorm3")
    p.add_argument("--value", type=float, required=True, help="frozen lambda_org")
    p.add_argument("--data", default="", help="dataset dir (default: recorded in checkpoint)")
    p.add_argument("--holdout", default="", help="held-out domain (default: recorded)")
    p.set_defaults(fn=cmd_ablate_lambda)

    p = sub.add_parser("style-transfer", help="spectral style transfer between two images")
    p.add_argument("--mode", choices=["swap", "mix", "lowfreq"], required=True)
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--ratio", type=float, default=0.5, help="mix ratio (mode=mix)")
    p.add_argument("--band", type=float, default=0.25, help="band fraction (mode=lowfreq)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_style_transfer)

    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(f"error code={code} kind={kind} msg={message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except VerificationError as exc:
        return _fail(EXIT_VERIFY, "verification", str(exc))
    except AbortedRunError as exc:
        return _fail(EXIT_ABORTED, "aborted-run", f"{exc} {exc.diagnostics}")
    except (FileNotFoundError, IsADirectoryError, PermissionError, IOError, OSError) as exc:
        return _fail(EXIT_IO, "io", str(exc))
    except (ConfigError, DomainError, ShapeError, UnknownModuleError, ValueError) as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except FreqnormError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))


if __name__ == "__main__":
    sys.exit(main())
