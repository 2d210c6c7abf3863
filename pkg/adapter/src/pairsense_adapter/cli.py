"""Command line entry: run one extraction job file.

Exit codes: 0 ok, 2 usage, 3 bad data or missing toolkit.
"""

from __future__ import annotations

import argparse
import sys

from .errors import AdapterError
from .extract import extract
from .jobs import ExtractionJob


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairsense-extract",
                                description="Extract per-utterance features into the canonical JSON-lines format")
    p.add_argument("--job", required=True, help="extraction job JSON file")
    p.add_argument("--out", help="override the job's output path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExtractionJob.from_file(args.job)
        if args.out:
            job = ExtractionJob(**{**job.__dict__, "out": args.out})
        out = extract(job)
    except AdapterError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
