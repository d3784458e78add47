"""Cell-based search spaces, supernet states and their materialization.

Three spaces are provided:

* ``nb201_space()`` -- 4-node cell, 6 edges, ops {none, skip_connect,
  nor_conv_1x1, nor_conv_3x3, avg_pool_3x3}, NB201-like macro skeleton.
* ``darts_space()`` -- two input nodes, ``n`` intermediate nodes fed by every
  earlier node; after all edges are discretized each intermediate node keeps
  two input edges (topology selection).
* ``chain_space()`` -- a chain of mixed layers between a stem and a linear
  head.

Genotypes use one grammar for all spaces: intermediate nodes in order,
separated by ``+``, each listing ``|op~source|`` for its (kept) input edges,
e.g. ``|nor_conv_3x3~0|+|skip_connect~0|nor_conv_1x1~1|+|...|``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from .autodiff import Graph

NB201_OPS = ("none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3")
TOY_OPS = ("skip", "conv_1x1", "conv_3x3", "avg_pooling")
DARTS_OPS = ("skip_connect", "conv_1x1", "conv_3x3", "avg_pool_3x3")

_CONV = {"nor_conv_1x1": 1, "nor_conv_3x3": 3, "conv_1x1": 1, "conv_3x3": 3}
_POOL = {"avg_pool_3x3", "avg_pooling"}
_SKIP = {"skip_connect", "skip"}
KNOWN_OPS = set(_CONV) | _POOL | _SKIP | {"none"}
SKIP_OPS = frozenset(_SKIP)


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Space:
    name: str
    ops: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    num_inputs: int = 1
    topology: bool = False
    conv_style: str = "relu_conv_bn"  # or "conv_bn_relu"

    def __post_init__(self):
        unknown = set(self.ops) - KNOWN_OPS
        if unknown or not self.ops:
            raise SpaceError(f"unknown or empty op set: {sorted(unknown)}")
        if len(set(self.ops)) != len(self.ops):
            raise SpaceError("duplicate ops")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def nodes(self) -> tuple[int, ...]:
        """Intermediate (non-input) nodes in order."""
        return tuple(sorted({d for _, d in self.edges}))

    def in_edges(self, node: int) -> list[int]:
        return [i for i, (_, d) in enumerate(self.edges) if d == node]

    def edge_index(self, src: int, dst: int) -> int:
        try:
            return self.edges.index((src, dst))
        except ValueError:
            raise SpaceError(f"no edge {src}->{dst} in {self.name}") from None


def nb201_space(ops: Sequence[str] = NB201_OPS) -> Space:
    edges = tuple((i, j) for j in range(1, 4) for i in range(j))
    return Space("nb201", tuple(ops), edges)


def darts_space(num_nodes: int = 4, ops: Sequence[str] = DARTS_OPS) -> Space:
    edges = tuple((i, j) for j in range(2, 2 + num_nodes) for i in range(j))
    return Space(f"darts{num_nodes}", tuple(ops), edges, num_inputs=2, topology=True)


def chain_space(layers: int = 8, ops: Sequence[str] = TOY_OPS,
                conv_style: str = "conv_bn_relu") -> Space:
    if layers < 1:
        raise SpaceError("chain needs at least one layer")
    edges = tuple((i, i + 1) for i in range(layers))
    return Space(f"chain{layers}", tuple(ops), edges, conv_style=conv_style)


def space_from_name(name: str, ops: Sequence[str] | None = None) -> Space:
    """``nb201``, ``darts<n>`` or ``chain<L>`` (optionally ``chain<L>k<K>``
    for the first K toy ops)."""
    if name == "nb201":
        return nb201_space(ops or NB201_OPS)
    if name.startswith("darts"):
        return darts_space(int(name[5:] or 4), ops or DARTS_OPS)
    if name.startswith("chain"):
        body = name[5:]
        if "k" in body:
            layers, k = body.split("k")
            return chain_space(int(layers), ops or TOY_OPS[: int(k)])
        return chain_space(int(body or 8), ops or TOY_OPS)
    raise SpaceError(f"unknown space {name!r}")


# ---------------------------------------------------------------------------
# architecture states


@dataclass(frozen=True)
class ArchState:
    """Immutable (partially) discretized supernet.

    ``active[e]`` lists the candidate ops still on edge ``e`` (in the space's
    declared order); ``fixed[e]`` marks discretized edges; ``pruned`` holds
    edges removed by topology selection.
    """

    space: Space
    active: tuple[tuple[str, ...], ...]
    fixed: tuple[bool, ...]
    pruned: frozenset[int] = field(default_factory=frozenset)

    @property
    def t(self) -> int:
        return sum(self.fixed)

    def is_mixed(self, e: int) -> bool:
        return not self.fixed[e]

    def mixed_edges(self) -> list[int]:
        return [e for e in range(len(self.fixed)) if not self.fixed[e]]

    @property
    def fully_discretized(self) -> bool:
        return all(self.fixed)

    def op(self, e: int) -> str:
        if not self.fixed[e]:
            raise SpaceError(f"edge {e} is not discretized")
        return self.active[e][0]

    def _check_edge(self, e):
        if not 0 <= e < len(self.fixed):
            raise SpaceError(f"edge {e} out of range")
        if self.fixed[e]:
            raise SpaceError(f"edge {e} is already fixed to {self.active[e][0]}")

    def discretize(self, e: int, o: str) -> "ArchState":
        self._check_edge(e)
        if o not in self.active[e]:
            raise SpaceError(f"op {o!r} not active on edge {e}")
        active = self.active[:e] + ((o,),) + self.active[e + 1:]
        fixed = self.fixed[:e] + (True,) + self.fixed[e + 1:]
        return replace(self, active=active, fixed=fixed)

    def perturb(self, e: int, o: str) -> "ArchState":
        self._check_edge(e)
        if o not in self.active[e]:
            raise SpaceError(f"op {o!r} not active on edge {e}")
        if len(self.active[e]) < 2:
            raise SpaceError(f"cannot remove the last op of edge {e}")
        ops = tuple(x for x in self.active[e] if x != o)
        return replace(self, active=self.active[:e] + (ops,) + self.active[e + 1:])

    def prune(self, e: int) -> "ArchState":
        if not self.space.topology:
            raise SpaceError(f"{self.space.name} has no topology choice")
        # pruned edges carry a canonical placeholder so equal topologies compare equal
        active = self.active[:e] + ((self.space.ops[0],),) + self.active[e + 1:]
        fixed = self.fixed[:e] + (True,) + self.fixed[e + 1:]
        return replace(self, active=active, fixed=fixed, pruned=self.pruned | {e})


def supernet(space: Space) -> ArchState:
    n = space.num_edges
    return ArchState(space, (space.ops,) * n, (False,) * n)


# ---------------------------------------------------------------------------
# genotypes


def encode_genotype(a: ArchState) -> str:
    if not a.fully_discretized:
        raise SpaceError("only fully discretized states have a genotype")
    groups = []
    for node in a.space.nodes:
        toks = [f"{a.active[e][0]}~{a.space.edges[e][0]}"
                for e in a.space.in_edges(node) if e not in a.pruned]
        groups.append("|" + "|".join(toks) + "|")
    return "+".join(groups)


def parse_genotype(space: Space, s: str) -> ArchState:
    groups = s.strip().split("+")
    nodes = space.nodes
    if len(groups) != len(nodes):
        raise SpaceError(f"expected {len(nodes)} node groups, got {len(groups)}: {s!r}")
    ops: dict[int, str] = {}
    for node, grp in zip(nodes, groups):
        if len(grp) < 2 or grp[0] != "|" or grp[-1] != "|":
            raise SpaceError(f"malformed node group {grp!r}")
        for tok in grp[1:-1].split("|"):
            op, sep, src = tok.partition("~")
            if not sep or not src.isdigit():
                raise SpaceError(f"malformed token {tok!r}")
            if op not in space.ops:
                raise SpaceError(f"unknown op {op!r} for space {space.name}")
            e = space.edge_index(int(src), node)
            if e in ops:
                raise SpaceError(f"edge {src}->{node} listed twice")
            ops[e] = op
    missing = [e for e in range(space.num_edges) if e not in ops]
    if missing and not space.topology:
        raise SpaceError(f"genotype misses edges {missing}")
    active = tuple((ops.get(e, space.ops[0]),) for e in range(space.num_edges))
    a = ArchState(space, active, (True,) * space.num_edges, frozenset(missing))
    if encode_genotype(a) != s.strip():
        raise SpaceError(f"non-canonical genotype {s!r}")
    return a


def enumerate_space(space: Space) -> Iterator[str]:
    """All fully discretized genotypes, last edge varying fastest."""
    for combo in itertools.product(space.ops, repeat=space.num_edges):
        a = ArchState(space, tuple((o,) for o in combo), (True,) * space.num_edges)
        yield encode_genotype(a)


def space_size(space: Space) -> int:
    return len(space.ops) ** space.num_edges


# ---------------------------------------------------------------------------
# materialization


@dataclass
class ExecutableNet:
    graph: Graph
    arch: ArchState
    features: int  # pre-pooling feature map node (zen_score's f)
    stem: int
    init_seed: int

    def forward(self, x, labels=None, mode="init-stats", bypass_bn=False):
        return self.graph.forward(x, labels, mode, bypass_bn)

    def clone(self) -> "ExecutableNet":
        return replace(self, graph=self.graph.clone())


class _Builder:
    def __init__(self, g: Graph, style: str):
        self.g, self.style = g, style

    def conv_block(self, x, c_out, k, stride, name):
        g = self.g
        if self.style == "conv_bn_relu":
            h = g.conv2d(x, c_out, k, stride, name=f"{name}.conv")
            h = g.batchnorm(h, name=f"{name}.bn", tap=f"{name}.bn")
            return g.relu(h, name=f"{name}.relu", tap=f"{name}.relu")
        h = g.relu(x, name=f"{name}.relu", tap=f"{name}.relu")
        h = g.conv2d(h, c_out, k, stride, name=f"{name}.conv")
        return g.batchnorm(h, name=f"{name}.bn", tap=f"{name}.bn")

    def op(self, x, op, c, name):
        if op == "none":
            return self.g.scale(x, 0.0, name=f"{name}.zero")
        if op in _SKIP:
            return x
        if op in _POOL:
            return self.g.avgpool3x3(x, name=f"{name}.pool")
        return self.conv_block(x, c, _CONV[op], 1, name)

    def edge(self, x, ops, c, name, dead=()):
        for o in dead:  # evaluated and tapped, but not wired to the output
            self.op(x, o, c, f"{name}.{o}")
        outs = [self.op(x, o, c, f"{name}.{o}") for o in ops]
        if len(outs) == 1:
            return outs[0]
        return self.g.scale(self.g.add(outs, name=f"{name}.sum"), 1.0 / len(outs), name=f"{name}.mean")

    def node_sum(self, xs, name):
        return xs[0] if len(xs) == 1 else self.g.add(xs, name=name)


def instantiate(a: ArchState, width: int = 16, cells_per_stage: int = 1, init_seed: int = 0,
                input_shape=(3, 16, 16), num_classes: int = 4, masked: bool = False) -> ExecutableNet:
    """Build the graph for ``a``: mixed edges average their active candidates,
    fixed edges apply their single op, ``none`` contributes zeros.

    Parameters are drawn per name from ``init_seed``; since names depend only
    on position and op, every state derived from the same supernet shares
    weights for the ops they have in common.
    """
    if width < 1 or cells_per_stage < 1:
        raise SpaceError("width and cells_per_stage must be positive")
    sp = a.space
    c_in, h, w = input_shape
    if sp.name == "nb201" and (h % 4 or w % 4):
        raise SpaceError("nb201 skeleton needs spatial size divisible by 4")
    g = Graph(input_shape)
    b = _Builder(g, sp.conv_style)

    def cell(x, c, name):
        nodes = {0: x} if sp.num_inputs == 1 else x
        for node in sp.nodes:
            ins = [b.edge(nodes[sp.edges[e][0]], a.active[e], c, f"{name}.e{e}",
                          [o for o in sp.ops if o not in a.active[e]] if masked else ())
                   for e in sp.in_edges(node) if e not in a.pruned]
            if not ins:
                raise SpaceError(f"node {node} has no input edges")
            nodes[node] = b.node_sum(ins, f"{name}.n{node}")
        return nodes

    if sp.name.startswith("chain"):
        stem = b.conv_block(0, width, 3, 1, "stem") if sp.conv_style == "conv_bn_relu" else \
            g.batchnorm(g.conv2d(0, width, 3, name="stem.conv"), name="stem.bn")
        x = stem
        for layer in range(cells_per_stage):
            x = cell(x, width, f"cell{layer}")[sp.nodes[-1]]
        features = x
    elif sp.name == "nb201":
        stem = g.batchnorm(g.conv2d(0, width, 3, name="stem.conv"), name="stem.bn")
        x, c = stem, width
        for stage in range(3):
            if stage:
                name = f"reduce{stage}"
                r = b.conv_block(x, 2 * c, 3, 2, f"{name}.a")
                r = b.conv_block(r, 2 * c, 3, 1, f"{name}.b")
                sc = g.conv2d(x, 2 * c, 1, stride=2, name=f"{name}.shortcut")
                x, c = g.add([r, sc], name=f"{name}.add"), 2 * c
            for k in range(cells_per_stage):
                x = cell(x, c, f"s{stage}c{k}")[3]
        x = g.batchnorm(x, name="lastact.bn")
        features = g.relu(x, name="lastact.relu", tap="lastact.relu")
    elif sp.topology:
        stem = g.batchnorm(g.conv2d(0, width, 3, name="stem.conv"), name="stem.bn")
        prev2 = prev = stem
        for k in range(cells_per_stage):
            s0 = b.conv_block(prev2, width, 1, 1, f"cell{k}.pre0")
            s1 = b.conv_block(prev, width, 1, 1, f"cell{k}.pre1")
            nodes = cell({0: s0, 1: s1}, width, f"cell{k}")
            out = g.concat([nodes[n] for n in sp.nodes], name=f"cell{k}.concat")
            prev2, prev = prev, out
        features = prev
    else:
        raise SpaceError(f"no skeleton for space {sp.name}")
    logits = g.linear(g.global_avg_pool(features, name="gap"), num_classes, name="head")
    g.set_output(logits)
    g.softmax_cross_entropy(logits)
    g.init_params(init_seed)
    return ExecutableNet(g, a, features, stem, init_seed)


# ---------------------------------------------------------------------------
# topology selection


def topology_prune(a: ArchState, score_fn: Callable[[list[ArchState]], Sequence[float]],
                   seed: int) -> tuple[ArchState, int]:
    """Keep two input edges per intermediate node.

    Nodes are visited in a seeded random order. For each node with more than
    two inputs, every input edge is removed in turn and the resulting
    architectures are scored together by ``score_fn`` (lower = the removed
    edge mattered more); the two lowest-scoring removals mark the edges kept.
    Returns the pruned state and the number of architectures scored.
    """
    if not a.space.topology:
        raise SpaceError(f"{a.space.name} has no node topology choice")
    if not a.fully_discretized:
        raise SpaceError("topology selection needs a fully discretized state")
    from .rng import make_rng
    order = make_rng(seed, "prune-order").permutation(len(a.space.nodes))
    evals = 0
    for idx in order:
        node = a.space.nodes[idx]
        ins = [e for e in a.space.in_edges(node) if e not in a.pruned]
        if len(ins) <= 2:
            continue
        scores = list(score_fn([a.prune(e) for e in ins]))
        evals += len(ins)
        keep = sorted(range(len(ins)), key=lambda i: (scores[i], i))[:2]
        for i, e in enumerate(ins):
            if i not in keep:
                a = a.prune(e)
    return a, evals


def count_params(net: ExecutableNet) -> int:
    return int(sum(np.size(p.value) for p in net.graph.params.values()))
