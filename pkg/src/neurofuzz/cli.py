"""``neurofuzz`` command line: one subcommand per pipeline stage plus ``run-all``.

Failures exit non-zero with a one-line JSON object on stderr::

    {"error": "ConfigError", "message": "depth 0 outside [1, 8]"}
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import experiment as ex
from . import layout
from .errors import ConfigError, NeurofuzzError

EXIT_CONFIG = 2
EXIT_FAILURE = 1


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON (default: bundled desk config)")
    common.add_argument("--out", help="artifact root (overrides the config's 'out')")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for training and targets")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="neurofuzz", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-corpus", parents=[common], help="generate the tag corpus and splits")
    sub.add_parser("train", parents=[common], help="train every (cell, depth, split, restart) run")
    sub.add_parser("sample", parents=[common], help="sample tags from every checkpoint")
    sub.add_parser("mutate", parents=[common], help="build mutation baseline case sets")
    sub.add_parser("make-cases", parents=[common], help="pack dataset and model tags into cases")
    rt = sub.add_parser("run-target", parents=[common], help="collect drcov logs for case sets")
    rt.add_argument("--target", choices=ex.TARGET_KINDS)
    rt.add_argument("--cmd", help="external command template with a {case} placeholder")
    rt.add_argument("--cases", help="a case-set directory, or a directory of case sets")
    rt.add_argument("--timeout", type=float)
    an = sub.add_parser("analyze", parents=[common], help="write the report CSVs")
    an.add_argument("--module-filter", help="only count blocks of modules whose path contains this")
    sub.add_parser("run-all", parents=[common], help="every stage in order")
    ic = sub.add_parser("init-config", help="write the bundled desk config to a file")
    ic.add_argument("path")
    return p


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out is not None:
        cfg = cfg.replace(out=args.out)
    if getattr(args, "target", None) or getattr(args, "cmd", None) or getattr(args, "timeout", None):
        t = cfg.target
        cfg = cfg.replace(target=dataclasses.replace(
            t, kind=args.target or t.kind, cmd=args.cmd or t.cmd,
            timeout=args.timeout if args.timeout is not None else t.timeout))
    return cfg


def _set_dirs(cases: str) -> List[Path]:
    d = Path(cases)
    if (d / "manifest.json").is_file():
        return [d]
    found = [m.parent for m in sorted(d.glob("*/manifest.json"))]
    if not found:
        raise ConfigError(f"no case sets under {d}")
    return found


def _error(exc: BaseException) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("missing", "offset"):
        if getattr(exc, attr, None) is not None:
            doc[attr] = getattr(exc, attr)
    return doc


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "init-config":
            text = ex.resources.files("neurofuzz").joinpath("data/desk_config.json").read_text("utf-8")
            Path(args.path).write_text(text, encoding="utf-8")
            return 0
        cfg = _config(args)
        root = Path(cfg.out)
        jobs = max(1, args.jobs)
        if args.command == "run-all":
            results = ex.run_pipeline(cfg, root, ex.STAGES, jobs)
        elif args.command == "run-target" and args.cases:
            root.mkdir(parents=True, exist_ok=True)
            results = ex.stage_run_target(cfg, root, jobs, _set_dirs(args.cases))
            ex.update_manifest(root, cfg, results)
        elif args.command == "analyze" and args.module_filter is not None:
            from .analysis import aggregate
            aggregate(root, module_filter=args.module_filter)
            results = []
        else:
            results = ex.run_pipeline(cfg, root, [args.command], jobs)
        built = sum(not r.skipped for r in results)
        print(json.dumps({"command": args.command, "out": str(root), "stages": len(results),
                          "built": built, "skipped": len(results) - built}))
        return 0
    except ConfigError as exc:
        print(json.dumps(_error(exc)), file=sys.stderr)
        return EXIT_CONFIG
    except (NeurofuzzError, OSError, ValueError) as exc:
        print(json.dumps(_error(exc)), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
