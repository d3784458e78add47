"""Zero-Cost-PT: perturbation-driven proposals followed by proxy validation."""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from typing import Sequence

import numpy as np

from .bench import resolve_jobs
from .data import Dataset
from .rng import hash64, make_rng
from .scoring import (Evaluator, RowFn, ScoreRow, DegenerateBatchError, zc_pt_scores,
                      HIGHER)
from .spaces import ArchState, encode_genotype, parse_genotype, topology_prune

ORDERS = ("fixed", "random", "global-op-iter", "global-op-once",
          "global-edge-iter", "global-edge-once")


class SearchError(RuntimeError):
    pass


def perturbation_count(strategy: str, num_ops: int, num_edges: int) -> int:
    """Proxy evaluations per proposal iteration for an edge order."""
    if num_ops < 1 or num_edges < 1:
        raise ValueError("num_ops and num_edges must be >= 1")
    if strategy in ("fixed", "random"):
        return num_ops * num_edges
    if strategy in ("global-op-iter", "global-edge-iter"):
        return num_ops * num_edges * (num_edges + 1) // 2
    if strategy in ("global-op-once", "global-edge-once"):
        return 2 * num_ops * num_edges - num_ops
    raise ValueError(f"unknown edge order {strategy!r}; choose from {ORDERS}")


@dataclass(frozen=True)
class SearchConfig:
    N: int = 10
    V: int = 100
    order: str = "random"
    proxy: str = "nwot"
    seed: int = 0
    batch_size: int = 32
    width: int = 16
    cells_per_stage: int = 1
    init_seed: int | None = None  # None: use ``seed`` (one init for the whole search)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.V < 0:
            raise ValueError("V must be >= 0")
        if self.order not in ORDERS:
            raise ValueError(f"unknown edge order {self.order!r}; choose from {ORDERS}")
        if self.batch_size < 1 or self.width < 1 or self.cells_per_stage < 1:
            raise ValueError("batch_size, width and cells_per_stage must be positive")

    @property
    def resolved_init_seed(self) -> int:
        return self.seed if self.init_seed is None else self.init_seed

    def to_dict(self):
        return asdict(self)


def _edge_key(row: ScoreRow, strategy: str) -> float:
    """Smaller key = more important edge."""
    v = np.asarray(row.values)
    s = 1.0 if row.direction != HIGHER else -1.0  # map to lower-better
    if strategy.startswith("global-op"):
        return float(np.min(s * v))
    return float(np.mean(s * v))


class EdgeOrder:
    """Chooses the next edge to discretize.

    ``next`` returns the edge together with its score row whenever that row
    was already computed on the current state, so the caller can reuse it.
    """

    def __init__(self, strategy: str, a0: ArchState, seed: int):
        if strategy not in ORDERS:
            raise ValueError(f"unknown edge order {strategy!r}; choose from {ORDERS}")
        self.strategy, self.seed = strategy, seed
        self.evaluations = 0
        self._plan: list[int] | None = None
        if strategy == "random":
            self._plan = [int(e) for e in make_rng(seed, "edge-order").permutation(
                a0.space.num_edges)]

    def _sweep(self, a: ArchState, row_fn: RowFn) -> dict:
        rows = {}
        for e in a.mixed_edges():
            rows[e] = row_fn(a, e, hash64(self.seed, "row", a.t, e))
            self.evaluations += len(rows[e].ops)
        return rows

    def next(self, a: ArchState, row_fn: RowFn) -> tuple[int, ScoreRow | None]:
        mixed = a.mixed_edges()
        if not mixed:
            raise SearchError("no mixed edges left")
        st = self.strategy
        if st == "fixed":
            return mixed[0], None
        if st.endswith("-iter"):
            rows = self._sweep(a, row_fn)
            e = min(mixed, key=lambda k: (_edge_key(rows[k], st), k))
            return e, rows[e]
        if self._plan is None:  # *-once: one sweep fixes the whole order
            rows = self._sweep(a, row_fn)
            self._plan = sorted(mixed, key=lambda k: (_edge_key(rows[k], st), k))
            e = next(k for k in self._plan if a.is_mixed(k))
            return e, rows[e]
        return next(k for k in self._plan if a.is_mixed(k)), None


@dataclass
class Proposal:
    iteration: int
    seed: int
    steps: list = field(default_factory=list)
    genotype: str | None = None
    evaluations: int = 0  # perturbation scores only
    prune_evaluations: int = 0
    aborted: str | None = None

    def to_dict(self):
        d = {"iteration": self.iteration, "seed": self.seed, "steps": self.steps,
             "genotype": self.genotype, "evaluations": self.evaluations,
             "prune_evaluations": self.prune_evaluations}
        if self.aborted:
            d["aborted"] = self.aborted
        return d


def run_order(a0: ArchState, strategy: str, row_fn: RowFn, seed: int):
    """Greedily discretize every edge; returns (state, steps, evaluations).

    ``row_fn(state, edge, seed)`` scores the active ops of an edge; the best
    op of the row is fixed at each step.
    """
    a, steps, evals = a0, [], 0
    for e in a0.mixed_edges():  # single-candidate edges are forced, nothing to score
        if len(a.active[e]) == 1:
            steps.append({"edge": e, "scores": {}, "chosen": a.active[e][0]})
            a = a.discretize(e, a.active[e][0])
    order = EdgeOrder(strategy, a, seed)
    while a.mixed_edges():
        e, row = order.next(a, row_fn)
        if row is None:
            row = row_fn(a, e, hash64(seed, "row", a.t, e))
            evals += len(row.ops)
        o = row.best()
        steps.append({"edge": e, "scores": dict(zip(row.ops, row.values)), "chosen": o})
        a = a.discretize(e, o)
    return a, steps, evals + order.evaluations


def propose(a0: ArchState, cfg: SearchConfig, ev: Evaluator, iteration: int) -> Proposal:
    """One proposal: discretize all edges with zc-pt, then (DARTS-like
    spaces) prune each node to two inputs."""
    seed = hash64(cfg.seed, iteration)
    p = Proposal(iteration, seed)
    start = ev.evaluations
    try:
        a, p.steps, _ = run_order(a0, cfg.order, lambda s, e, k: zc_pt_scores(ev, s, e, k), seed)
        p.evaluations = ev.evaluations - start
        if a.space.topology:
            calls = iter(range(1 << 30))
            a, p.prune_evaluations = topology_prune(
                a, lambda states: ev.score(states, hash64(seed, "prune", next(calls))), seed)
        p.genotype = encode_genotype(a)
    except DegenerateBatchError as err:
        p.aborted = str(err)
        p.evaluations = ev.evaluations - start
    return p


def validate(candidates: Sequence[str], cfg: SearchConfig, ev: Evaluator, space):
    """argmax over candidates of the proxy summed over V shared minibatches.

    Returns ``(winner_index, sums)``; ties go to the earliest candidate. A
    score that stays degenerate after retries counts as -inf.
    """
    if not candidates:
        raise SearchError("no candidates to validate")
    if cfg.V == 0:
        if len(candidates) != 1:
            raise SearchError("V = 0 needs exactly one candidate")
        return 0, [0.0]
    uniq = list(dict.fromkeys(candidates))  # identical genotypes score identically
    states = [parse_genotype(space, g) for g in uniq]
    sums = np.zeros(len(uniq))
    for j in range(cfg.V):
        seed = hash64(cfg.seed, "validate", j)
        try:
            vals = ev.score(states, seed, masked=False)
        except DegenerateBatchError:
            vals = []
            for st in states:
                try:
                    vals.extend(ev.score([st], seed, masked=False))
                except DegenerateBatchError:
                    vals.append(-np.inf)
        sums += vals
    by_geno = dict(zip(uniq, sums.tolist()))
    full = [by_geno[g] for g in candidates]
    return int(np.argmax(full)), full


@dataclass
class SearchTrace:
    config: dict
    proposals: list
    validation: list
    winner: str | None
    evaluations: int

    def to_dict(self):
        return {"config": self.config,
                "proposals": [p.to_dict() for p in self.proposals],
                "validation": self.validation,
                "winner": self.winner,
                "evaluations": self.evaluations}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n"


def _propose_job(args):
    a0, cfg, ev, i = args
    return propose(a0, cfg, ev, i)


def zero_cost_pt(a0: ArchState, cfg: SearchConfig, data: Dataset | None = None,
                 jobs: int | None = 1, input_shape=(3, 16, 16), num_classes: int = 4):
    """N proposals then validation; returns (winner genotype, trace)."""
    ev = Evaluator(cfg.proxy, data, cfg.batch_size, cfg.width, cfg.cells_per_stage,
                   cfg.resolved_init_seed, tuple(input_shape), num_classes)
    jobs = resolve_jobs(jobs)
    tasks = [(a0, cfg, ev, i) for i in range(cfg.N)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            proposals = list(ex.map(_propose_job, tasks))
    else:
        proposals = [_propose_job(t) for t in tasks]
    evaluations = sum(p.evaluations for p in proposals)
    cands = [p.genotype for p in proposals if p.genotype is not None]
    if not cands:
        raise SearchError("every proposal iteration aborted")
    if cfg.V == 0 and len(cands) > 1:
        raise SearchError("V = 0 is only valid with a single proposal")
    win, sums = validate(cands, cfg, ev, a0.space)
    validation = [{"genotype": g, "score_sum": s} for g, s in zip(cands, sums)] if cfg.V else []
    trace = SearchTrace(cfg.to_dict(), proposals, validation, cands[win], evaluations)
    return cands[win], trace
