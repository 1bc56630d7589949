"""Command-line surface.

Subcommands: train, eval, ablate, sweep, grad-check, count-params.
Exit code 0 on success; on failure, one line ``error:<category>: <detail>``
on stderr and a nonzero exit, so callers can parse outcomes mechanically.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .errors import ConfigError, TowertuneError
from .model import clip_b16_config
from .train import (SWEEP_AXES, RunConfig, audit_params, build_pipeline,
                    evaluate, gradient_check, reference_config, run_ablation,
                    run_sweep, train_run)


def _load_run_config(path) -> RunConfig:
    if path is None:
        return reference_config()
    return RunConfig.load(path)


def _cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    summary = train_run(cfg, args.out, quiet=args.quiet)
    print(json.dumps(summary["final"]))
    return 0


def _cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    config_path = args.config or ckpt_path.parent / "config.json"
    if not Path(config_path).exists():
        raise ConfigError(
            f"no config found at {config_path}; pass --config explicitly")
    cfg = RunConfig.load(config_path)
    pipe = build_pipeline(cfg)
    ckpt.load_into(pipe.model.store, ckpt_path)
    report, rankings = evaluate(pipe.model, pipe.dataset, pipe.tokenizer,
                                split=args.split, direction=args.direction)
    out_dir = Path(args.out) if args.out else ckpt_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    from .retrieval import dump_top_k
    dump_top_k(rankings, out_dir / f"topk-{args.split}.jsonl")
    print(json.dumps(report.as_dict()))
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_run_config(args.config)
    rows = run_ablation(cfg, out_dir=args.out, quiet=args.quiet)
    print(json.dumps(rows))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_run_config(args.config)
    values = [int(v) for v in args.values.split(",") if v != ""]
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = run_sweep(cfg, args.axis, values, out_dir=args.out,
                     quiet=args.quiet)
    print(json.dumps(rows))
    return 0


def _cmd_grad_check(args) -> int:
    cfg = _load_run_config(args.config)
    result = gradient_check(cfg, n_coords=args.trials * 30,
                            tolerance=args.tolerance)
    print(f"checked {result['n_checked']} coordinates, "
          f"max relative error {result['max_rel_err']:.3e} "
          f"(tolerance {result['tolerance']:.1e})")
    for name, idx, exact, numeric, rel in result["failures"][:20]:
        print(f"  FAIL {name}[{idx}]: analytic {exact:.6e} "
              f"numeric {numeric:.6e} rel {rel:.3e}")
    if result["frozen_with_grad"]:
        print(f"  FAIL frozen tensors received gradients: "
              f"{result['frozen_with_grad']}")
    print("PASS" if result["passed"] else "FAIL")
    return 0 if result["passed"] else 3


def _cmd_count_params(args) -> int:
    if args.config:
        cfg = RunConfig.load(args.config).model
    elif args.full_scale:
        cfg = clip_b16_config()
    else:
        cfg = reference_config().model
    audit = audit_params(cfg)
    print(json.dumps(audit, indent=2))
    return 0 if audit["match"] else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="towertune",
        description="Parameter-efficient dual-encoder retrieval at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=False):
        p.add_argument("--config", help="JSON run config (default: built-in "
                                        "desk reference)")
        p.add_argument("--quiet", action="store_true")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train and checkpoint a model")
    add_common(p, needs_out=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--direction", default="t2i", choices=("t2i", "i2t"))
    p.add_argument("--config", help="config JSON (default: config.json next "
                                    "to the checkpoint)")
    p.add_argument("--out", help="directory for the top-k dump")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run the five-variant ablation table")
    add_common(p, needs_out=True)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("sweep", help="sweep prompt length or depth")
    add_common(p, needs_out=True)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="comma-separated integers, e.g. 1,2,4,8")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("grad-check",
                       help="finite-difference audit of analytic gradients")
    p.add_argument("--config")
    p.add_argument("--trials", type=int, default=20,
                   help="coordinates per trainable tensor group (x30 total)")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=_cmd_grad_check)

    p = sub.add_parser("count-params", help="parameter partition audit")
    p.add_argument("--config")
    p.add_argument("--full-scale", action="store_true",
                   help="audit the B/16-shaped configuration")
    p.set_defaults(fn=_cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TowertuneError as e:
        print(f"error:{e.category}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error:io-error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
