"""Command-line entry point.

    coursexai pipeline --preset demo --out runs/demo --seed 7
    coursexai extract --config run.json

Exit codes: 0 success, 2 missing input, 3 validation failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import CourseXaiError, MissingInputError, ValidationError
from .pipeline import STAGE_FUNCS, STAGES, Run, load_config, run_pipeline

log = logging.getLogger("coursexai")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coursexai", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--preset", help="course or course-pair preset (overrides config courses)")
    common.add_argument("--workers", type=int, help="worker processes for the explain stage")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "pipeline"):
        sub.add_parser(name, parents=[common], help=f"run the {name} stage" if name != "pipeline" else "run all stages")
    return parser


def _read_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    if not path.exists():
        raise MissingInputError(f"missing input: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON config ({exc.msg})") from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = load_config(_read_config(args.config), out=args.out, seed=args.seed, preset=args.preset,
                             workers=args.workers)
        if args.command == "pipeline":
            run_pipeline(config)
        else:
            STAGE_FUNCS[args.command](Run(config))
    except CourseXaiError as exc:
        print(f"coursexai {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
