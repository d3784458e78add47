"""Regenerate the bundled 81-genotype toy benchmark (about 11 min on one core)."""
import argparse
import sys
import time

from zcpt.bench import (TOY_DATA, TOY_SPACE, TOY_TRAIN, generate_mini_benchmark,
                        save_benchmark, resolve_jobs)
from zcpt.proxies import PROXIES
from zcpt.spaces import space_from_name


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="src/zcpt/assets/toy_bench.jsonl")
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args()
    t0 = time.time()

    def progress(done, total):
        print(f"\r{done}/{total} genotypes, {time.time() - t0:.0f}s", end="", file=sys.stderr)

    bench, failures = generate_mini_benchmark(space_from_name(TOY_SPACE), TOY_DATA, TOY_TRAIN,
                                              PROXIES, resolve_jobs(args.jobs), progress=progress)
    print(file=sys.stderr)
    if failures:
        sys.exit(f"failed genotypes: {failures}")
    save_benchmark(bench, args.out)
    print(f"wrote {len(bench)} rows to {args.out}")


if __name__ == "__main__":
    main()
