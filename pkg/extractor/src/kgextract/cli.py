"""CLI: kgextract extract --modality {visual,textual} --vocab ... --assets ... --out ..."""
from __future__ import annotations

import argparse
import logging
import sys

from .assets import read_manifest
from .encoders import BACKENDS
from .extract import extract_textual, extract_visual


def cmd_extract(args) -> int:
    assets = read_manifest(args.assets)
    extract = extract_visual if args.modality == "visual" else extract_textual
    report = extract(
        assets, args.vocab, args.out, backend=args.backend, batch_size=args.batch_size
    )
    print(
        f"{report.modality}: {report.present}/{report.rows} entities covered, dim {report.dim}",
        file=sys.stderr,
    )
    for name in report.unresolved:
        print(f"unresolved manifest entity: {name}", file=sys.stderr)
    for path in report.failed_images:
        print(f"unreadable image treated as missing: {path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgextract",
        description="Produce binary entity feature files from images and descriptions",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="encode one modality into a feature file")
    p.add_argument("--modality", choices=("visual", "textual"), required=True)
    p.add_argument("--vocab", required=True, help="entity vocabulary dump (id<TAB>name)")
    p.add_argument("--assets", required=True,
                   help="TSV manifest: entity<TAB>images(;-separated)<TAB>description")
    p.add_argument("--out", required=True, help="output .feat path")
    p.add_argument("--backend", choices=BACKENDS, default="hf",
                   help="hf = published pretrained encoders, tiny = offline deterministic")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_extract)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
