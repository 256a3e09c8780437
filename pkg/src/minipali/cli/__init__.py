"""Command-line entry point.

Exit codes: 0 ok, 1 other error, 2 missing or unreadable artifact,
3 invalid config, 4 numeric failure. Failures print one line to stderr:
``error: <category>: <detail>``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..model import CheckpointError
from ..numerics import NonFiniteError
from .commands import COMMANDS, MissingArtifact, absolutize
from .config import ConfigError, dump_effective, load_config_file, validate

EXIT_OK, EXIT_ERROR, EXIT_MISSING, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run config")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--steps-divisor", type=int, default=1, help="divide every step count by this")
    common.add_argument("--resolution", type=int, help="phase-2 resolution (pretrain) or inference resolution")
    common.add_argument("--beam", type=int, default=1, help="beam size; 1 means greedy")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("--threads", type=int, help="BLAS threads; 1 gives bit-reproducible runs")

    parser = argparse.ArgumentParser(prog="minipali", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build-corpus", parents=[common], help="generate, filter and dedup a synthetic corpus")
    p = sub.add_parser("pretrain", parents=[common], help="two-phase pre-training")
    p.add_argument("--corpus", help="corpus directory (default: config corpus.path)")
    p = sub.add_parser("finetune", parents=[common], help="fine-tune a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus")
    p = sub.add_parser("soup", parents=[common], help="average checkpoints")
    p.add_argument("--checkpoints", nargs="+", required=True)
    for name, helptext in (("generate", "decode text for one image"), ("classify", "zero-shot classify one image")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", required=True)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--image", help="PNG/JPEG path")
        src.add_argument("--scene-seed", type=int, help="render a generated scene instead")
        if name == "generate":
            p.add_argument("--prompt", help="default: plain English captioning prompt")
        else:
            p.add_argument("--classes", help="comma-separated class names (default: the 8-class toy set)")
    p = sub.add_parser("make-eval", parents=[common], help="write a generated eval set")
    p.add_argument("--task", choices=("vqa", "caption", "classify"))
    p.add_argument("--n", type=int, default=32)
    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on eval sets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", nargs="+", help="eval set JSONL files (default: config eval section)")
    return parser


def _fail(code: int, category: str, detail: str) -> int:
    print(f"error: {category}: {' '.join(str(detail).split())}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        base = None
        data = {}
        if args.config:
            cfg_path = Path(args.config)
            if not cfg_path.exists():
                raise MissingArtifact(cfg_path, "config file")
            data = load_config_file(cfg_path)
            base = cfg_path.parent
        if args.seed is not None:
            if data is None:
                data = {}
            if isinstance(data, dict):
                data = {**data, "seed": args.seed}
        if args.steps_divisor < 1:
            raise ConfigError("--steps-divisor", "must be >= 1")
        if args.beam < 1:
            raise ConfigError("--beam", "must be >= 1")
        cfg = absolutize(validate(data, base), base)
        out = Path(args.out or cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "effective_config.json").write_text(dump_effective(cfg), encoding="utf-8")
        threads = args.threads if args.threads is not None else cfg["threads"]
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                msg = COMMANDS[args.command](args, cfg, out)
        else:
            msg = COMMANDS[args.command](args, cfg, out)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "invalid_config", e)
    except MissingArtifact as e:
        return _fail(EXIT_MISSING, "missing_artifact", e)
    except CheckpointError as e:
        return _fail(EXIT_MISSING, "unreadable_artifact", e)
    except NonFiniteError as e:
        return _fail(EXIT_NUMERIC, "numeric_failure", e)
    except (OSError, ValueError, KeyError) as e:
        return _fail(EXIT_ERROR, type(e).__name__, e)
    print(msg)
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


__all__ = ["main", "run", "build_parser", "EXIT_OK", "EXIT_ERROR", "EXIT_MISSING", "EXIT_CONFIG", "EXIT_NUMERIC"]
