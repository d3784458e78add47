"""Count skip connections picked by disc-zc and zc-pt on a deep chain.

Each init seed discretizes the whole chain greedily under both policies; the
raw-score policy tends to keep more skips as depth grows.
"""
import argparse

import numpy as np

from zcpt.data import SynthDatasetCfg, synth_dataset
from zcpt.scoring import Evaluator, skip_bias
from zcpt.spaces import chain_space, supernet


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--depths", default="1,4,8")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--proxy", default="nwot")
    ap.add_argument("--width", type=int, default=16)
    args = ap.parse_args()
    ev = Evaluator(args.proxy, synth_dataset(SynthDatasetCfg()), 32, args.width)
    print("depth,disc-zc,zc-pt")
    for depth in map(int, args.depths.split(",")):
        res = skip_bias(supernet(chain_space(depth)), ev, range(args.seeds))
        print(f"{depth},{np.mean(res['disc-zc']):.2f},{np.mean(res['zc-pt']):.2f}", flush=True)


if __name__ == "__main__":
    main()
