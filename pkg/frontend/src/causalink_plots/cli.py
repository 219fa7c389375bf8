"""Command line: render <kind> <input.csv> <output.(png|svg)>."""

import argparse
import sys

from .render import render_bias_surface, render_sim_summary
from .schemas import SchemaError

_KINDS = {
    "bias_surface": render_bias_surface,
    "sim_summary": render_sim_summary,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="render",
        description="Render a causalink CSV output into a figure.")
    parser.add_argument("kind", choices=sorted(_KINDS))
    parser.add_argument("input", help="input CSV file")
    parser.add_argument("output", help="output image (.png or .svg)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not args.output.endswith((".png", ".svg")):
        print(f"error: unsupported output format for {args.output!r} "
              "(use .png or .svg)", file=sys.stderr)
        return 2
    try:
        _KINDS[args.kind](args.input, args.output)
    except (SchemaError, OSError) as exc:
        # validation happens before any drawing, so no partial image is left
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
