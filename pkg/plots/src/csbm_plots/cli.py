"""`csbmlab-plots render --kind <k> --in <csv> --out <img>`

Exit codes: 0 success, 2 unknown kind or missing columns, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, MissingColumns, UnknownKind, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csbmlab-plots",
                                     description="Figures from csbmlab CSV outputs")
    subs = parser.add_subparsers(dest="command", required=True)
    ren = subs.add_parser("render", help="render one figure")
    ren.add_argument("--kind", required=True, help=f"one of {', '.join(KINDS)}")
    ren.add_argument("--in", dest="in_csv", required=True, help="input CSV path")
    ren.add_argument("--out", dest="out_img", required=True, help="output image (.png or .svg)")
    ren.add_argument("--logx", action="store_true", help="logarithmic x axis")
    ren.add_argument("--title", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(kind=args.kind, in_csv=args.in_csv, out_img=args.out_img,
                      logx=args.logx, title=args.title)
    try:
        result = render(spec)
    except (UnknownKind, MissingColumns) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    notes = " ".join(f"{k}={v:.6g}" for k, v in sorted(result.annotations.items()))
    print(f"wrote {result.out_path} ({result.n_rows} rows){' ' + notes if notes else ''}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
