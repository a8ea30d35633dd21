import argparse
import logging
import sys

from .export import export


def main(argv=None):
    p = argparse.ArgumentParser(
        prog="adanas-teacher-export",
        description="Write per-layer mean-pooled hidden states of a pretrained classifier as an adanas teacher file.",
    )
    p.add_argument("--model", required=True, help="model directory or hub identifier")
    p.add_argument("--data", required=True, help="dataset TSV")
    p.add_argument("--out", required=True, help="teacher file to write")
    p.add_argument("--max-len", type=int, default=128, help="token limit; longer inputs are truncated (default 128)")
    p.add_argument("--batch-size", type=int, default=32, help="inference batch size (default 32)")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        m = export(args.model, args.data, args.out, args.max_len, args.batch_size)
    except Exception as e:  # noqa: BLE001
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {m.example_count} records, J={m.J} H={m.H}, checksum {m.checksum}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
