"""Command-line entry point: ``zcpt {score,search,benchgen,analyze,report}``.

The resolved configuration of every run goes to stderr as one JSON line;
results go to stdout (or ``--out``). Exit codes: 0 ok, 1 runtime failure
(degenerate score, aborted search), 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields, replace

import numpy as np

from .bench import (TOY_DATA, TOY_TRAIN, TrainCfg, generate_mini_benchmark, load_benchmark,
                    resolve_jobs, save_benchmark)
from .data import SynthDatasetCfg, synth_dataset
from .proxies import NEEDS_DATA, PROXIES, compute_proxy_batched
from .scoring import (CorrelationReport, Evaluator, POLICIES, fixture_report, greedy_discretize,
                      initial_analysis, policy_row_fn, progressive_analysis)
from .search import ORDERS, SearchConfig, zero_cost_pt
from .spaces import encode_genotype, instantiate, parse_genotype, space_from_name, supernet

DATA_FLAGS = {"image_size": int, "noise_level": float, "num_classes": int,
              "samples_per_class": int, "data_seed": int}


class UsageError(ValueError):
    pass


def _csv_list(text, cast=str):
    return [cast(x) for x in text.split(",") if x.strip()]


def _add_data_flags(p):
    g = p.add_argument_group("synthetic data")
    g.add_argument("--data-config", help="JSON file of dataset fields, or 'toy' for the "
                                         "bundled benchmark's data (also sets --width 8)")
    for name, typ in DATA_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), type=typ)


def _data_cfg(args) -> SynthDatasetCfg:
    cfg = SynthDatasetCfg()
    if args.data_config == "toy":
        cfg = TOY_DATA
    elif args.data_config:
        with open(args.data_config) as f:
            raw = json.load(f)
        known = {f.name for f in fields(SynthDatasetCfg)}
        bad = set(raw) - known
        if bad:
            raise UsageError(f"unknown dataset fields {sorted(bad)}")
        cfg = SynthDatasetCfg(**raw)
    over = {("seed" if k == "data_seed" else k): getattr(args, k) for k in DATA_FLAGS
            if getattr(args, k) is not None}
    return replace(cfg, **over)


def _width(args):
    if args.width is not None:
        return args.width
    return TOY_TRAIN.width if getattr(args, "data_config", None) == "toy" else 16


def _print_config(cmd, **cfg):
    print(json.dumps({"command": cmd, **cfg}, sort_keys=True, default=str), file=sys.stderr)


def _write(text, out):
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def cmd_score(args):
    space = space_from_name(args.space)
    if (args.genotype is None) == (not args.supernet):
        raise UsageError("give exactly one of --genotype or --supernet")
    a = supernet(space) if args.supernet else parse_genotype(space, args.genotype)
    dcfg = _data_cfg(args)
    width = _width(args)
    _print_config("score", space=args.space, genotype=args.genotype, supernet=args.supernet,
                  proxy=args.proxy, seed=args.seed, batch_size=args.batch_size, width=width,
                  init_seed=args.init_seed, data=asdict(dcfg))
    data = synth_dataset(dcfg)
    net = instantiate(a, width, args.cells, args.init_seed, data.input_shape, data.num_classes)
    score = compute_proxy_batched([net], args.proxy, args.seed,
                                  data if args.proxy in NEEDS_DATA else None, args.batch_size)[0]
    print(json.dumps(score.to_dict()))
    return 1 if score.degenerate else 0


def cmd_search(args):
    space = space_from_name(args.space)
    dcfg = _data_cfg(args)
    cfg = SearchConfig(args.N, args.V, args.order, args.proxy, args.seed, args.batch_size,
                       _width(args), args.cells, args.init_seed)
    jobs = resolve_jobs(args.jobs)
    _print_config("search", space=args.space, search=cfg.to_dict(), data=asdict(dcfg), jobs=jobs)
    data = synth_dataset(dcfg)
    winner, trace = zero_cost_pt(supernet(space), cfg, data, jobs)
    trace.config = {"space": args.space, "data": asdict(dcfg), **trace.config}
    if args.out:
        _write(trace.to_json(), args.out)
    print(winner)
    return 0


def cmd_benchgen(args):
    space = space_from_name(args.space)
    dcfg = _data_cfg(args)
    tcfg = TrainCfg(args.epochs, args.lr, args.batch_size, tuple(_csv_list(args.train_seeds, int)),
                    _width(args))
    proxies = _csv_list(args.proxies) if args.proxies else []
    for p in proxies:
        if p not in PROXIES:
            raise UsageError(f"unknown proxy {p!r}")
    jobs = resolve_jobs(args.jobs)
    _print_config("benchgen", space=args.space, data=asdict(dcfg), train=asdict(tcfg),
                  proxies=proxies, jobs=jobs, limit=args.limit)
    genos = None
    if args.limit is not None:
        from itertools import islice
        from .spaces import enumerate_space
        genos = list(islice(enumerate_space(space), args.limit))
    bench, failures = generate_mini_benchmark(space, dcfg, tcfg, proxies, jobs, genos)
    for g, err in failures.items():
        print(f"failed: {g}: {err}", file=sys.stderr)
    save_benchmark(bench, args.out)
    print(f"wrote {len(bench)} rows to {args.out}")
    return 0


def _analysis_job(job):
    kind, kwargs = job
    return (initial_analysis if kind == "initial" else progressive_analysis)(**kwargs)


def cmd_analyze(args):
    if args.fixture:
        _print_config("analyze", fixture=True, reference=args.reference)
        rep = fixture_report(reference=args.reference)
        _write(rep.to_csv(), args.out)
        return 0
    if not args.bench:
        raise UsageError("give --bench (or --fixture)")
    space = space_from_name(args.space)
    bench = load_benchmark(args.bench, space)
    seeds = _csv_list(args.seeds, int)
    dcfg = _data_cfg(args)
    jobs = resolve_jobs(args.jobs)
    policies = _csv_list(args.policies)
    for p in policies + [args.reference]:
        if p not in POLICIES:
            raise UsageError(f"unknown policy {p!r}; choose from {POLICIES}")
    _print_config("analyze", bench=args.bench, space=args.space, mode=args.mode,
                  policies=policies, reference=args.reference, trajectory=args.trajectory,
                  proxy=args.proxy, seeds=seeds, batch_size=args.batch_size, width=_width(args),
                  data=asdict(dcfg), jobs=jobs)
    ev = Evaluator(args.proxy, synth_dataset(dcfg), args.batch_size, _width(args), args.cells)
    a0 = supernet(space)
    if args.mode == "initial":
        pairs = [(p, args.reference) for p in policies]
        jobs_list = [("initial", dict(a0=a0, policies=policies, seeds=[s], bench=bench, ev=ev,
                                      pairs=pairs)) for s in seeds]
    else:
        jobs_list = [("progressive", dict(a0=a0, policy=p, seeds=[s], bench=bench, ev=ev,
                                          trajectory=args.trajectory, reference=args.reference))
                     for p in policies for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_analysis_job, jobs_list))
    else:
        parts = [_analysis_job(j) for j in jobs_list]
    rep = CorrelationReport([r for part in parts for r in part.records])
    _write(rep.to_csv(), args.out)
    return 0


def cmd_report(args):
    space = space_from_name(args.space)
    bench = load_benchmark(args.bench, space)
    seeds = _csv_list(args.seeds, int)
    dcfg = _data_cfg(args)
    greedy = _csv_list(args.greedy) if args.greedy else []
    _print_config("report", bench=args.bench, space=args.space, greedy=greedy, traces=args.trace,
                  seeds=seeds, proxy=args.proxy, width=_width(args), data=asdict(dcfg))
    methods: dict[str, list[str]] = {}
    if greedy:
        ev = Evaluator(args.proxy, synth_dataset(dcfg), args.batch_size, _width(args), args.cells)
        for pol in greedy:
            if pol not in POLICIES:
                raise UsageError(f"unknown policy {pol!r}")
            for s in seeds:
                fn = policy_row_fn(pol, replace(ev, init_seed=s), bench)
                a, _ = greedy_discretize(supernet(space), fn, s)
                methods.setdefault(pol, []).append(encode_genotype(a))
    for item in args.trace or []:
        name, sep, paths = item.partition("=")
        if not sep:
            raise UsageError(f"--trace wants NAME=PATH[,PATH...], got {item!r}")
        for path in _csv_list(paths):
            with open(path) as f:
                methods.setdefault(name, []).append(json.load(f)["winner"])
    lines = ["method,avg_error,rank"]
    for name, genos in methods.items():
        q = [bench.query(g) for g in genos]
        err = [100.0 * (1.0 - np.mean([r.test_acc for r in bench.rows[g].results])) for g in genos]
        lines.append(f"{name},{np.mean(err):.4f},{np.mean([x.rank for x in q]):.2f}")
    all_err = [100.0 * (1.0 - np.mean([r.test_acc for r in row.results]))
               for row in bench.rows.values()]
    all_rank = [bench.query(g).rank for g in bench.rows]
    lines.append(f"random (expected),{np.mean(all_err):.4f},{np.mean(all_rank):.2f}")
    _write("\n".join(lines) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zcpt", description="Zero-cost perturbation-based NAS")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--space", default="nb201", help="nb201, darts<n>, chain<L>[k<K>]")
        p.add_argument("--proxy", default="nwot", choices=PROXIES)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--width", type=int, default=None, help="base channels (default 16)")
        p.add_argument("--cells", type=int, default=1, help="cells per stage")
        if seed:
            p.add_argument("--seed", type=int, required=True)
        _add_data_flags(p)

    p = sub.add_parser("score", help="score one genotype or the supernet")
    common(p)
    p.add_argument("--genotype")
    p.add_argument("--supernet", action="store_true")
    p.add_argument("--init-seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("search", help="run Zero-Cost-PT")
    common(p)
    p.add_argument("--order", default="random", choices=ORDERS)
    p.add_argument("-N", type=int, default=10, help="proposal iterations")
    p.add_argument("-V", type=int, default=100, help="validation minibatches")
    p.add_argument("--init-seed", type=int, default=None, help="default: --seed")
    p.add_argument("--out", help="trace JSON path")
    p.add_argument("--jobs", type=int, default=None, help="workers (default $ZCPT_JOBS or 1)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("benchgen", help="train every genotype into a JSONL benchmark")
    p.add_argument("--space", default="chain4k3")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=TOY_TRAIN.epochs)
    p.add_argument("--lr", type=float, default=TOY_TRAIN.lr)
    p.add_argument("--batch-size", type=int, default=TOY_TRAIN.batch_size)
    p.add_argument("--train-seeds", default="0,1,2")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--proxies", default="nwot", help="comma list of proxies to store")
    p.add_argument("--limit", type=int, default=None, help="only the first N genotypes")
    p.add_argument("--jobs", type=int, default=None)
    _add_data_flags(p)
    p.set_defaults(func=cmd_benchgen)

    p = sub.add_parser("analyze", help="initial/progressive operation-score correlations (CSV)")
    common(p, seed=False)
    p.add_argument("--bench")
    p.add_argument("--fixture", action="store_true",
                   help="correlate the bundled NB201 raw-score table instead")
    p.add_argument("--mode", choices=("initial", "progressive"), default="initial")
    p.add_argument("--policies", default="zc-pt,disc-zc,avg-acc,best-zc")
    p.add_argument("--reference", default="best-acc")
    p.add_argument("--trajectory", default="best-acc", help="policy name or 'self'")
    p.add_argument("--seeds", default="0,1,2,3")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_analyze, space="chain4k3")

    p = sub.add_parser("report", help="per-method error/rank table (CSV)")
    common(p, seed=False)
    p.add_argument("--bench", required=True)
    p.add_argument("--greedy", help="comma list of policies to run greedily per seed")
    p.add_argument("--trace", action="append", help="NAME=trace.json[,trace2.json]")
    p.add_argument("--seeds", default="0,1,2,3")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report, space="chain4k3")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
