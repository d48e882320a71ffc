"""Echo oracle: reads an image batch, writes uniform probability rows.

Usage: python -m uqlib.oracle.echo --classes K [--save-input PATH] INPUT OUTPUT
"""

import argparse
import sys

import numpy as np

from uqlib.core.tensorfile import read_tensor, write_tensor


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Uniform-probability echo oracle")
    parser.add_argument("--classes", type=int, required=True, help="Number of classes K")
    parser.add_argument("--save-input", help="Also copy the received tensor here")
    parser.add_argument("--fail", action="store_true", help="Exit with code 3 (for tests)")
    parser.add_argument("input")
    parser.add_argument("output")
    return parser


def main(argv=None) -> int:
    args = create_parser().parse_args(argv)
    if args.fail:
        print("echo oracle asked to fail", file=sys.stderr)
        return 3
    batch = read_tensor(args.input)
    if args.save_input:
        write_tensor(args.save_input, batch)
    rows = np.full((batch.shape[0], args.classes), 1.0 / args.classes)
    write_tensor(args.output, rows)
    print(f"echo: {batch.shape[0]} images -> K={args.classes}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
