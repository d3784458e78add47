"""Run Zero-Cost-PT on the toy space for several seeds and look up the winners."""
import argparse
import time

from zcpt.bench import TOY_DATA, TOY_SPACE, TOY_TRAIN, load_toy_benchmark
from zcpt.data import synth_dataset
from zcpt.search import ORDERS, SearchConfig, zero_cost_pt
from zcpt.spaces import space_from_name, supernet


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--proxy", default="nwot")
    ap.add_argument("--order", default="random", choices=ORDERS)
    ap.add_argument("-N", type=int, default=10)
    ap.add_argument("-V", type=int, default=100)
    args = ap.parse_args()
    bench = load_toy_benchmark()
    data = synth_dataset(TOY_DATA)
    a0 = supernet(space_from_name(TOY_SPACE))
    print(f"seed,genotype,mean_acc,rank (of {len(bench)})")
    for seed in range(args.seeds):
        t0 = time.time()
        cfg = SearchConfig(N=args.N, V=args.V, order=args.order, proxy=args.proxy, seed=seed,
                           width=TOY_TRAIN.width)
        g, _ = zero_cost_pt(a0, cfg, data)
        q = bench.query(g)
        print(f"{seed},{g},{q.mean_acc:.4f},{q.rank}  # {time.time() - t0:.0f}s", flush=True)


if __name__ == "__main__":
    main()
