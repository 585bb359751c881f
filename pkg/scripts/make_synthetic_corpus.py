"""Write a seeded synthetic multi-system corpus as JSONL (references included).

    python3 scripts/make_synthetic_corpus.py out.jsonl --seed 0 --utts 200
"""

import argparse

from mpager.corpus import save_jsonl
from mpager.synthetic import CONFUSION, UNIFORM, multi_stream_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("output")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--utts", type=int, default=200)
    ap.add_argument("--length", type=int, default=40)
    ap.add_argument("--rates", type=float, nargs="+", default=[0.1, 0.1, 0.1])
    ap.add_argument("--noise", choices=(CONFUSION, UNIFORM), default=CONFUSION)
    args = ap.parse_args()
    save_jsonl(multi_stream_corpus(args.utts, args.length, tuple(args.rates), args.seed, args.noise), args.output)


if __name__ == "__main__":
    main()
