"""Edge-averaged Spearman correlations on the bundled NB201 raw-score table."""
import argparse

from zcpt.scoring import fixture_report, load_fixture


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reference", default="best-acc")
    args = ap.parse_args()
    fix = load_fixture()
    methods = [m for m in fix if m != args.reference]
    rep = fixture_report(fix, methods, args.reference)
    for m in sorted(methods, key=lambda m: -rep.edge_mean(m, args.reference)):
        print(f"{m:>10s}  {rep.edge_mean(m, args.reference):+.4f}")


if __name__ == "__main__":
    main()
