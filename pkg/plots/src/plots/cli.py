"""``plots --spec figure.json``: render one figure spec to its PNG."""
from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from . import FigureError, load_spec, render


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A002 - argparse API
        raise FigureError(message)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _Parser(prog="plots", description="render trajectory CSVs to a PNG figure")
    parser.add_argument("--spec", type=str, required=True, help="path to a figure spec JSON")
    try:
        args = parser.parse_args(argv)
        output = render(load_spec(args.spec))
    except (FigureError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
