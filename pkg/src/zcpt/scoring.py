"""Operation scoring policies, Spearman statistics and correlation analyses.

A policy scores every active op of one mixed edge and returns a
:class:`ScoreRow`. Zero-cost policies (``zc-pt``, ``disc-zc``) evaluate
perturbed or discretized supernets with a proxy; oracle policies
(``best-acc``, ``avg-acc``, ``best-zc``) aggregate a tabular benchmark over
all genotypes still reachable from the state.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .bench import TabularBenchmark, BenchmarkError
from .data import Dataset
from .proxies import NEEDS_DATA, PROXIES, ProxyError, compute_proxy_batched
from .rng import hash64
from .spaces import ArchState, SpaceError, instantiate, SKIP_OPS

HIGHER, LOWER = "higher", "lower"
ZC_POLICIES = ("zc-pt", "disc-zc")
ORACLE_POLICIES = ("best-acc", "avg-acc", "best-zc")
POLICIES = ZC_POLICIES + ORACLE_POLICIES


class ScoringError(ValueError):
    pass


class DegenerateBatchError(RuntimeError):
    """Every retry of a minibatch still produced a degenerate proxy score."""


@dataclass(frozen=True)
class ScoreRow:
    """Scores of the active ops on one edge; ``ops`` keep declared order."""

    edge: int
    ops: tuple[str, ...]
    values: tuple[float, ...]
    direction: str = HIGHER
    policy: str = ""
    t: int = 0

    def __post_init__(self):
        if len(self.ops) != len(self.values):
            raise ScoringError("ops and values differ in length")
        if self.direction not in (HIGHER, LOWER):
            raise ScoringError(f"bad direction {self.direction!r}")

    def best_index(self) -> int:
        """argmax (or argmin); the first op in declared order wins ties."""
        v = np.asarray(self.values)
        return int(np.argmax(v) if self.direction == HIGHER else np.argmin(v))

    def best(self) -> str:
        return self.ops[self.best_index()]

    def best_value(self) -> float:
        return self.values[self.best_index()]

    def higher_better(self) -> tuple[float, ...]:
        """Values oriented so that larger is better (lower-better rows negated)."""
        if self.direction == HIGHER:
            return self.values
        return tuple(-v for v in self.values)

    def as_dict(self):
        return dict(zip(self.ops, self.values))


@dataclass(frozen=True)
class ScoreTable:
    rows: dict
    policy: str
    t: int

    def row(self, e: int) -> ScoreRow:
        return self.rows[e]


# ---------------------------------------------------------------------------
# zero-cost evaluation


@dataclass
class Evaluator:
    """Scores batches of architecture states with one proxy.

    Every call instantiates the states on a shared init seed and scores them
    on one shared minibatch. A degenerate score triggers up to
    ``max_retries`` fresh minibatches for the whole group. ``masked`` keeps
    removed candidates as inert branches (see :func:`instantiate`), which is
    how supernet variants are materialized during scoring.
    """

    proxy: str = "nwot"
    data: Dataset | None = None
    batch_size: int = 32
    width: int = 16
    cells_per_stage: int = 1
    init_seed: int = 0
    input_shape: tuple = (3, 16, 16)
    num_classes: int = 4
    max_retries: int = 3
    evaluations: int = 0
    retries: int = 0

    def __post_init__(self):
        if self.proxy not in PROXIES:
            raise ProxyError(f"unknown proxy {self.proxy!r}; choose from {PROXIES}")
        if self.data is not None:
            self.input_shape = tuple(self.data.input_shape)
            self.num_classes = self.data.num_classes
        elif self.proxy in NEEDS_DATA:
            raise ProxyError(f"{self.proxy} needs a data source")

    def net(self, a: ArchState, masked: bool = True):
        return instantiate(a, self.width, self.cells_per_stage, self.init_seed,
                           self.input_shape, self.num_classes, masked=masked)

    def score(self, states: Sequence[ArchState], seed: int, masked: bool = True) -> list[float]:
        nets = [self.net(a, masked) for a in states]
        self.evaluations += len(states)
        batch_seed = seed
        for attempt in range(self.max_retries + 1):
            scores = compute_proxy_batched(nets, self.proxy, batch_seed, self.data,
                                           self.batch_size)
            if not any(s.degenerate for s in scores):
                return [s.value for s in scores]
            self.retries += 1
            batch_seed = hash64(seed, "retry", attempt + 1)
        raise DegenerateBatchError(
            f"{self.proxy} stayed degenerate after {self.max_retries} retries (seed {seed})")


def _check_row_pre(a: ArchState, e: int):
    if not 0 <= e < a.space.num_edges:
        raise ScoringError(f"edge {e} out of range")
    if not a.is_mixed(e):
        raise ScoringError(f"edge {e} is already discretized")


def zc_pt_scores(ev: Evaluator, a: ArchState, e: int, seed: int) -> ScoreRow:
    """S(A - (e, o)) for each active o; lower is better (argmin selects)."""
    _check_row_pre(a, e)
    ops = a.active[e]
    if len(ops) < 2:
        raise ScoringError(f"edge {e} has a single active op; nothing to perturb")
    vals = ev.score([a.perturb(e, o) for o in ops], seed)
    return ScoreRow(e, ops, tuple(vals), LOWER, "zc-pt", a.t)


def disc_zc_scores(ev: Evaluator, a: ArchState, e: int, seed: int) -> ScoreRow:
    """S(A + (e, o)) for each active o; higher is better."""
    _check_row_pre(a, e)
    ops = a.active[e]
    vals = ev.score([a.discretize(e, o) for o in ops], seed)
    return ScoreRow(e, ops, tuple(vals), HIGHER, "disc-zc", a.t)


def oracle_scores(bench: TabularBenchmark, a: ArchState, e: int, mode: str,
                  proxy: str | None = None) -> ScoreRow:
    """Aggregate the benchmark over genotypes consistent with A + (e, o).

    ``best-acc``: max of mean-seed accuracy; ``avg-acc``: mean of it;
    ``best-zc``: max of the stored ``proxy`` score.
    """
    _check_row_pre(a, e)
    if mode not in ORACLE_POLICIES:
        raise ScoringError(f"unknown oracle mode {mode!r}")
    if mode == "best-zc" and proxy is None:
        raise ScoringError("best-zc needs a proxy name")
    sp = a.space
    mat, vals = bench.table(sp, proxy if mode == "best-zc" else None)
    index = {o: i for i, o in enumerate(sp.ops)}
    mask = np.ones(len(vals), dtype=bool)
    for k in range(sp.num_edges):
        if k != e:
            mask &= np.isin(mat[:, k], [index[o] for o in a.active[k]])
    out = []
    for o in a.active[e]:
        m = mask & (mat[:, e] == index[o])
        if not m.any():
            raise BenchmarkError(f"no benchmark rows match edge {e} = {o} in this state")
        out.append(float(np.mean(vals[m]) if mode == "avg-acc" else np.max(vals[m])))
    return ScoreRow(e, a.active[e], tuple(out), HIGHER, mode, a.t)


RowFn = Callable[[ArchState, int, int], ScoreRow]


def policy_row_fn(policy: str, ev: Evaluator | None = None,
                  bench: TabularBenchmark | None = None) -> RowFn:
    """``row(state, edge, seed)`` for a policy name."""
    if policy in ZC_POLICIES:
        if ev is None:
            raise ScoringError(f"{policy} needs an evaluator")
        f = zc_pt_scores if policy == "zc-pt" else disc_zc_scores
        return lambda a, e, seed: f(ev, a, e, seed)
    if policy in ORACLE_POLICIES:
        if bench is None:
            raise ScoringError(f"{policy} needs a benchmark")
        proxy = ev.proxy if ev is not None else "nwot"
        return lambda a, e, seed: oracle_scores(bench, a, e, policy, proxy)
    raise ScoringError(f"unknown policy {policy!r}; choose from {POLICIES}")


# ---------------------------------------------------------------------------
# statistics


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman's rho with average ranks for ties."""
    x, y = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ScoringError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ScoringError("need at least two paired values")
    rx, ry = rankdata(x), rankdata(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denom = np.sqrt(np.sum(rx ** 2) * np.sum(ry ** 2))
    if denom == 0:
        raise ScoringError("zero rank variance; correlation undefined")
    return float(np.clip(np.sum(rx * ry) / denom, -1.0, 1.0))


def row_spearman(a: ScoreRow, b: ScoreRow) -> float:
    """Correlate two rows of the same edge after orienting both higher-better."""
    if a.ops != b.ops:
        raise ScoringError(f"rows cover different ops: {a.ops} vs {b.ops}")
    return spearman(a.higher_better(), b.higher_better())


@dataclass(frozen=True)
class CorrRecord:
    method_a: str
    method_b: str
    iteration: int
    edge: int
    rho: float  # nan when undefined (ties everywhere)
    seed: int


@dataclass
class CorrelationReport:
    records: list = field(default_factory=list)

    CSV_COLUMNS = ("method_a", "method_b", "iteration", "edge", "rho", "seed")

    def add(self, rec: CorrRecord):
        self.records.append(rec)

    def select(self, method_a=None, method_b=None, iteration=None, seed=None):
        return [r for r in self.records
                if (method_a is None or r.method_a == method_a)
                and (method_b is None or r.method_b == method_b)
                and (iteration is None or r.iteration == iteration)
                and (seed is None or r.seed == seed)]

    def edge_mean(self, method_a, method_b, iteration=0, seed=None) -> float:
        """Average rho over edges with a defined value (then over seeds)."""
        recs = self.select(method_a, method_b, iteration)
        seeds = sorted({r.seed for r in recs}) if seed is None else [seed]
        per_seed = []
        for s in seeds:
            vals = [r.rho for r in recs if r.seed == s and not np.isnan(r.rho)]
            if vals:
                per_seed.append(float(np.mean(vals)))
        if not per_seed:
            return float("nan")
        return float(np.mean(per_seed))

    def pairs(self):
        return list(dict.fromkeys((r.method_a, r.method_b) for r in self.records))

    def iterations(self):
        return sorted({r.iteration for r in self.records})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.records:
            w.writerow([r.method_a, r.method_b, r.iteration, r.edge, repr(float(r.rho)), r.seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CorrelationReport":
        rep = cls()
        for d in csv.DictReader(io.StringIO(text)):
            rep.add(CorrRecord(d["method_a"], d["method_b"], int(d["iteration"]),
                               int(d["edge"]), float(d["rho"]), int(d["seed"])))
        return rep


def _rho_or_nan(a: ScoreRow, b: ScoreRow) -> float:
    try:
        return row_spearman(a, b)
    except ScoringError:
        return float("nan")


def _row_seed(seed, t, e):
    return hash64(seed, "row", t, e)


def initial_analysis(a0: ArchState, policies: Sequence[str], seeds: Sequence[int] = (0, 1, 2, 3),
                     bench: TabularBenchmark | None = None, ev: Evaluator | None = None,
                     pairs: Sequence[tuple[str, str]] | None = None) -> CorrelationReport:
    """Score every edge of ``a0`` under each policy and correlate per edge.

    ``pairs`` defaults to every policy against ``best-acc``. The evaluator's
    init seed is replaced by each analysis seed in turn.
    """
    pairs = list(pairs) if pairs is not None else [(p, "best-acc") for p in policies]
    needed = list(dict.fromkeys([p for pair in pairs for p in pair]))
    rep = CorrelationReport()
    for s in seeds:
        sev = replace(ev, init_seed=s) if ev is not None else None
        fns = {p: policy_row_fn(p, sev, bench) for p in needed}
        for e in a0.mixed_edges():
            rows = {p: fns[p](a0, e, _row_seed(s, a0.t, e)) for p in needed}
            for pa, pb in pairs:
                rep.add(CorrRecord(pa, pb, 0, e, _rho_or_nan(rows[pa], rows[pb]), s))
    return rep


def progressive_analysis(a0: ArchState, policy: str, seeds: Sequence[int] = (0, 1, 2, 3),
                         bench: TabularBenchmark | None = None, ev: Evaluator | None = None,
                         trajectory: str = "best-acc", reference: str = "best-acc"
                         ) -> CorrelationReport:
    """At iteration i correlate ``policy`` with ``reference`` on every mixed
    edge, then discretize edge i with the ``trajectory`` policy's choice
    (``"self"`` follows the policy under test)."""
    traj = policy if trajectory == "self" else trajectory
    rep = CorrelationReport()
    for s in seeds:
        sev = replace(ev, init_seed=s) if ev is not None else None
        fns = {p: policy_row_fn(p, sev, bench) for p in dict.fromkeys([policy, reference, traj])}
        a = a0
        for i in range(a0.space.num_edges):
            if not a.is_mixed(i):
                continue
            rows = {}
            for e in a.mixed_edges():
                if len(a.active[e]) < 2:
                    continue
                rows[e] = {p: fns[p](a, e, _row_seed(s, a.t, e)) for p in fns}
                rep.add(CorrRecord(policy, reference, i, e,
                                   _rho_or_nan(rows[e][policy], rows[e][reference]), s))
            choice = rows[i][traj].best() if i in rows else a.active[i][0]
            a = a.discretize(i, choice)
    return rep


# ---------------------------------------------------------------------------
# bundled raw-score fixture


FIXTURE_FILE = "nb201_raw_op_scores.csv"
# directions of the fixture rows as published: every row is already oriented
# higher-is-better (perturbation-based rows carry a negated sign)
FIXTURE_POLICIES = ("best-acc", "avg-acc", "disc-acc", "darts-pt", "disc-zc", "zc-pt",
                    "darts", "tenas")


def load_fixture(text: str | None = None) -> dict:
    """policy -> {edge: ScoreRow} from the bundled NB201 raw-score table."""
    if text is None:
        text = resources.files("zcpt.assets").joinpath(FIXTURE_FILE).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    ops = tuple(header[2:])
    out: dict = {}
    for rec in reader:
        if not rec:
            continue
        pol, e = rec[0], int(rec[1])
        out.setdefault(pol, {})[e] = ScoreRow(e, ops, tuple(float(v) for v in rec[2:]),
                                              HIGHER, pol, 0)
    return out


def fixture_report(fixture: dict | None = None, methods: Iterable[str] | None = None,
                   reference: str = "best-acc") -> CorrelationReport:
    """Per-edge rho of each fixture row against ``reference`` (iteration 0)."""
    fixture = fixture if fixture is not None else load_fixture()
    methods = list(methods) if methods is not None else [p for p in fixture if p != reference]
    rep = CorrelationReport()
    for m in methods:
        for e in sorted(fixture[m]):
            rep.add(CorrRecord(m, reference, 0, e,
                               _rho_or_nan(fixture[m][e], fixture[reference][e]), 0))
    return rep


# ---------------------------------------------------------------------------
# toy-chain skip bias


def greedy_discretize(a0: ArchState, row_fn: RowFn, seed: int,
                      order: Sequence[int] | None = None) -> tuple[ArchState, list[ScoreRow]]:
    """Discretize edges in ``order`` (default index order) with each row's
    best op."""
    a, rows = a0, []
    for e in (order if order is not None else range(a0.space.num_edges)):
        row = row_fn(a, e, _row_seed(seed, a.t, e))
        rows.append(row)
        a = a.discretize(e, row.best())
    return a, rows


def skip_count(a: ArchState) -> int:
    return sum(1 for e in range(a.space.num_edges) if a.op(e) in SKIP_OPS)


def skip_bias(a0: ArchState, ev: Evaluator, seeds: Sequence[int]) -> dict:
    """Skip connections chosen by disc-zc and zc-pt when each discretizes
    the whole chain greedily, per init seed."""
    out = {"disc-zc": [], "zc-pt": [], "genotypes": []}
    for s in seeds:
        sev = replace(ev, init_seed=s)
        pair = []
        for pol in ("disc-zc", "zc-pt"):
            a, _ = greedy_discretize(a0, policy_row_fn(pol, sev), s)
            out[pol].append(skip_count(a))
            pair.append(a)
        out["genotypes"].append(tuple(pair))
    return out
