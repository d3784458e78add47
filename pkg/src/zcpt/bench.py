"""Tabular benchmarks: JSONL I/O, queries and the mini-benchmark generator.

One JSON object per line::

    {"genotype": "...", "results": [{"seed": 0, "val_acc": 0.9, "test_acc": 0.88}],
     "params": 1234, "flops": null, "proxy": {"nwot": 12.3}}

``params``, ``flops`` and ``proxy`` are optional.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np

from .data import SynthDatasetCfg, synth_dataset
from .spaces import (Space, enumerate_space, parse_genotype, instantiate, count_params,
                     SpaceError)
from .train import sgd_train, accuracy


class BenchmarkError(ValueError):
    pass


@dataclass(frozen=True)
class SeedResult:
    seed: int
    val_acc: float
    test_acc: float


@dataclass(frozen=True)
class BenchRow:
    genotype: str
    results: tuple[SeedResult, ...]
    params: float | None = None
    flops: float | None = None
    proxy: dict = field(default_factory=dict)

    @property
    def mean_acc(self) -> float:
        return float(np.mean([r.val_acc for r in self.results]))

    def to_json(self) -> str:
        d = {"genotype": self.genotype, "results": [asdict(r) for r in self.results]}
        if self.params is not None:
            d["params"] = self.params
        if self.flops is not None:
            d["flops"] = self.flops
        if self.proxy:
            d["proxy"] = dict(self.proxy)
        return json.dumps(d)


@dataclass(frozen=True)
class QueryResult:
    genotype: str
    mean_acc: float
    accs: dict
    rank: int


class TabularBenchmark:
    """Genotype -> per-seed accuracies (plus optional params/flops/proxies)."""

    def __init__(self, rows: Iterable[BenchRow]):
        self.rows: dict[str, BenchRow] = {}
        for r in rows:
            _check_row(r)
            if r.genotype in self.rows:
                raise BenchmarkError(f"duplicate genotype {r.genotype}")
            self.rows[r.genotype] = r
        self._means = None
        self._tables = {}

    def __len__(self):
        return len(self.rows)

    def __contains__(self, g):
        return g in self.rows

    def __eq__(self, other):
        return isinstance(other, TabularBenchmark) and self.rows == other.rows

    def mean_acc(self, genotype: str) -> float:
        return self._row(genotype).mean_acc

    def _row(self, genotype):
        try:
            return self.rows[genotype]
        except KeyError:
            raise BenchmarkError(f"genotype not in benchmark: {genotype}") from None

    def _sorted_means(self):
        if self._means is None:
            self._means = np.sort([r.mean_acc for r in self.rows.values()])[::-1]
        return self._means

    def query(self, genotype: str) -> QueryResult:
        """Mean accuracy, per-seed accuracies and rank (1 = best; ties share
        the better rank)."""
        row = self._row(genotype)
        m = row.mean_acc
        rank = 1 + int(np.sum(self._sorted_means() > m))
        return QueryResult(genotype, m, {r.seed: r.val_acc for r in row.results}, rank)

    def best(self) -> str:
        return max(self.rows, key=lambda g: self.rows[g].mean_acc)

    def check_complete(self, space: Space):
        want = set(enumerate_space(space))
        have = set(self.rows)
        missing, extra = want - have, have - want
        if missing or extra:
            raise BenchmarkError(f"benchmark does not match space {space.name}: "
                                 f"{len(missing)} missing, {len(extra)} foreign genotypes")

    def table(self, space: Space, proxy: str | None = None):
        """(op index matrix [G, E], per-genotype value vector) for oracle queries.

        The value is the mean validation accuracy, or the stored ``proxy``
        score when one is named.
        """
        key = (space, proxy)
        if key not in self._tables:
            index = {o: i for i, o in enumerate(space.ops)}
            genos = list(self.rows)
            mat = np.empty((len(genos), space.num_edges), dtype=np.int64)
            for i, g in enumerate(genos):
                a = parse_genotype(space, g)
                if a.pruned:
                    raise BenchmarkError("oracle tables need spaces without topology choice")
                mat[i] = [index[a.active[e][0]] for e in range(space.num_edges)]
            if proxy is None:
                vals = np.array([self.rows[g].mean_acc for g in genos])
            else:
                try:
                    vals = np.array([self.rows[g].proxy[proxy] for g in genos], dtype=float)
                except KeyError:
                    raise BenchmarkError(f"benchmark has no stored {proxy!r} scores") from None
            self._tables[key] = (mat, vals)
        return self._tables[key]


def _check_row(r: BenchRow):
    if not r.results:
        raise BenchmarkError(f"{r.genotype}: no seed results")
    seeds = [s.seed for s in r.results]
    if len(set(seeds)) != len(seeds):
        raise BenchmarkError(f"{r.genotype}: duplicate seed")
    for s in r.results:
        for v in (s.val_acc, s.test_acc):
            if not (0.0 <= v <= 1.0):
                raise BenchmarkError(f"{r.genotype}: accuracy {v} outside [0, 1]")


def _row_from_dict(d) -> BenchRow:
    if not isinstance(d, dict) or "genotype" not in d or "results" not in d:
        raise ValueError("row needs 'genotype' and 'results'")
    results = tuple(SeedResult(int(x["seed"]), float(x["val_acc"]), float(x["test_acc"]))
                    for x in d["results"])
    return BenchRow(str(d["genotype"]), results, d.get("params"), d.get("flops"),
                    dict(d.get("proxy") or {}))


def load_benchmark(path, space: Space | None = None) -> TabularBenchmark:
    """Read a JSONL benchmark; with ``space`` also enforce completeness."""
    rows, seen = [], {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = _row_from_dict(json.loads(line))
                _check_row(row)
            except (ValueError, KeyError, TypeError) as e:
                raise BenchmarkError(f"{path}:{lineno}: {e}") from None
            if row.genotype in seen:
                raise BenchmarkError(f"{path}:{lineno}: duplicate genotype "
                                     f"(first on line {seen[row.genotype]})")
            if space is not None:
                try:
                    parse_genotype(space, row.genotype)
                except SpaceError as e:
                    raise BenchmarkError(f"{path}:{lineno}: {e}") from None
            seen[row.genotype] = lineno
            rows.append(row)
    bench = TabularBenchmark(rows)
    if space is not None:
        bench.check_complete(space)
    return bench


def save_benchmark(bench: TabularBenchmark, path):
    with open(path, "w") as f:
        for row in bench.rows.values():
            f.write(row.to_json() + "\n")


# ---------------------------------------------------------------------------
# mini-benchmark generation


@dataclass(frozen=True)
class TrainCfg:
    epochs: int = 20
    lr: float = 0.05
    batch_size: int = 64
    seeds: tuple[int, ...] = (0, 1, 2)
    width: int = 8


def _score_genotype(args):
    space, genotype, data_cfg, train_cfg, proxies = args
    from .proxies import compute_proxy_batched  # avoid import cycle at module load
    data = synth_dataset(data_cfg)
    a = parse_genotype(space, genotype)
    results, params = [], None
    for seed in train_cfg.seeds:
        net = instantiate(a, train_cfg.width, init_seed=seed, input_shape=data.input_shape,
                          num_classes=data.num_classes)
        params = count_params(net)
        _, val = sgd_train(net.graph, data, train_cfg.epochs, train_cfg.lr, seed,
                           batch_size=train_cfg.batch_size)
        test = accuracy(net.graph, data.x_test, data.y_test)
        results.append(SeedResult(seed, val, test))
    proxy = {}
    for p in proxies:
        net = instantiate(a, train_cfg.width, init_seed=0, input_shape=data.input_shape,
                          num_classes=data.num_classes)
        proxy[p] = compute_proxy_batched([net], p, 0, data)[0].value
    return BenchRow(genotype, tuple(results), float(params), None, proxy)


def generate_mini_benchmark(space: Space, data_cfg: SynthDatasetCfg = SynthDatasetCfg(),
                            train_cfg: TrainCfg = TrainCfg(), proxies: Sequence[str] = ("nwot",),
                            jobs: int = 1, genotypes: Sequence[str] | None = None,
                            progress=None):
    """Train every genotype of ``space`` (or the listed subset) for each seed.

    Returns ``(benchmark, failures)``; a genotype whose training raises is
    reported in ``failures`` instead of aborting the run. Rows follow
    enumeration order whatever ``jobs`` is.
    """
    genos = list(genotypes) if genotypes is not None else list(enumerate_space(space))
    tasks = [(space, g, data_cfg, train_cfg, tuple(proxies)) for g in genos]
    rows, failures = [], {}

    def collect(g, fut_or_fn):
        try:
            rows.append(fut_or_fn())
        except Exception as e:  # recorded, not fatal
            failures[g] = f"{type(e).__name__}: {e}"
        if progress:
            progress(len(rows) + len(failures), len(genos))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(_score_genotype, t) for t in tasks]
            for g, fut in zip(genos, futs):
                collect(g, fut.result)
    else:
        for g, t in zip(genos, tasks):
            collect(g, lambda t=t: _score_genotype(t))
    return TabularBenchmark(rows), failures


def resolve_jobs(jobs: int | None) -> int:
    """Explicit value, else $ZCPT_JOBS, else 1."""
    if jobs is None:
        jobs = int(os.environ.get("ZCPT_JOBS", "1") or 1)
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    return jobs


# the bundled toy benchmark: chain of 4 layers over {skip, conv_1x1, conv_3x3}
TOY_SPACE = "chain4k3"
TOY_DATA = SynthDatasetCfg(image_size=8, noise_level=4.0)
TOY_TRAIN = TrainCfg()
TOY_BENCH_FILE = "toy_bench.jsonl"


def load_toy_benchmark() -> TabularBenchmark:
    from importlib import resources
    from .spaces import space_from_name
    path = resources.files("zcpt.assets").joinpath(TOY_BENCH_FILE)
    with resources.as_file(path) as p:
        return load_benchmark(p, space_from_name(TOY_SPACE))
