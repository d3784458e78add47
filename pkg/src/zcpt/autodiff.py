"""Minimal static-graph tensor engine with reverse-mode gradients.

Everything is float64 numpy. A :class:`Graph` is built once with the helper
methods (``conv2d``, ``relu``, ...), then evaluated with :meth:`Graph.forward`
and differentiated with :meth:`Graph.backward`. Node order is insertion order,
which is always a valid topological order because a node can only reference
nodes created before it.

The operator set is closed: conv2d, linear, relu, batchnorm, avgpool3x3,
global-avg-pool, add, scalar-scale, concat, softmax-cross-entropy.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

MODES = ("init-stats", "train-stats")


class GraphError(ValueError):
    pass


@dataclass
class Param:
    value: np.ndarray
    init: str  # "uniform" | "ones" | "zeros"
    fan_in: int = 1
    kind: str = "weight"  # weight | bias | bn
    owner: int = -1
    grad: np.ndarray | None = None


@dataclass
class TapSet:
    """Captured activations (and gradients after backward) by tap name."""

    kinds: dict[str, str] = field(default_factory=dict)
    values: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def of_kind(self, kind: str) -> list[str]:
        return [n for n, k in self.kinds.items() if k == kind]


@dataclass
class ForwardResult:
    output: np.ndarray
    loss: float | None
    taps: TapSet


# ---------------------------------------------------------------------------
# operators


class Op:
    params: tuple[str, ...] = ()

    def forward(self, xs, graph, ctx):
        raise NotImplementedError

    def backward(self, g, cache, graph):
        """Return (input grads, {param name: grad})."""
        raise NotImplementedError


class Input(Op):
    def forward(self, xs, graph, ctx):
        return ctx["x"], None


def _pad(x, p):
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x


class Conv2d(Op):
    """Zero-padded convolution via an explicit (N*Ho*Wo, k*k*C) column matrix."""

    def __init__(self, weight, bias, stride, pad):
        self.weight, self.bias = weight, bias
        self.stride, self.pad = stride, pad
        self.params = (weight,) + ((bias,) if bias else ())

    def forward(self, xs, graph, ctx):
        x, = xs
        w = graph.params[self.weight].value
        o, c, k, _ = w.shape
        s = self.stride
        n, _, h, wd = x.shape
        ho, wo = (h + 2 * self.pad - k) // s + 1, (wd + 2 * self.pad - k) // s + 1
        xp = _pad(x, self.pad)
        cols = np.empty((n, ho, wo, k, k, c))
        for i in range(k):
            for j in range(k):
                cols[:, :, :, i, j, :] = \
                    xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s].transpose(0, 2, 3, 1)
        cols = cols.reshape(n * ho * wo, k * k * c)
        out = cols @ w.transpose(0, 2, 3, 1).reshape(o, -1).T
        if self.bias:
            out += graph.params[self.bias].value
        out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))
        return out, (x.shape, cols)

    def backward(self, g, cache, graph):
        (n, c, h, wd), cols = cache
        w = graph.params[self.weight].value
        o, _, k, _ = w.shape
        s, p = self.stride, self.pad
        ho, wo = g.shape[2:]
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        grads = {self.weight: (gm.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)}
        if self.bias:
            grads[self.bias] = gm.sum(axis=0)
        dcols = (gm @ w.transpose(0, 2, 3, 1).reshape(o, -1)).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros((n, h + 2 * p, wd + 2 * p, c))
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j, :]
        if p:
            dxp = dxp[:, p:-p, p:-p, :]
        return [np.ascontiguousarray(dxp.transpose(0, 3, 1, 2))], grads


class Linear(Op):
    def __init__(self, weight, bias):
        self.weight, self.bias = weight, bias
        self.params = (weight,) + ((bias,) if bias else ())

    def forward(self, xs, graph, ctx):
        x, = xs
        out = x @ graph.params[self.weight].value.T
        if self.bias:
            out = out + graph.params[self.bias].value
        return out, x

    def backward(self, g, x, graph):
        w = graph.params[self.weight].value
        grads = {self.weight: g.T @ x}
        if self.bias:
            grads[self.bias] = g.sum(axis=0)
        return [g @ w], grads


class ReLU(Op):
    def forward(self, xs, graph, ctx):
        x, = xs
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, g, mask, graph):
        return [np.where(mask, g, 0.0)], {}


class BatchNorm(Op):
    eps = 1e-5

    def __init__(self, gamma, beta):
        self.gamma, self.beta = gamma, beta
        self.params = (gamma, beta)

    def _axes(self, x):
        return (0, 2, 3) if x.ndim == 4 else (0,)

    def _bcast(self, v, x):
        return v[None, :, None, None] if x.ndim == 4 else v[None, :]

    def forward(self, xs, graph, ctx):
        x, = xs
        if ctx["bypass_bn"]:
            return x, None
        ax = self._axes(x)
        mu = x.mean(axis=ax, keepdims=True)
        var = x.var(axis=ax, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        if ctx["mode"] == "init-stats":
            gamma = np.ones_like(graph.params[self.gamma].value)
            beta = np.zeros_like(gamma)
        else:
            gamma = graph.params[self.gamma].value
            beta = graph.params[self.beta].value
        ctx["bn_var"].append(var.ravel())
        return self._bcast(gamma, x) * xhat + self._bcast(beta, x), (xhat, inv, gamma)

    def backward(self, g, cache, graph):
        if cache is None:
            return [g], {}
        xhat, inv, gamma = cache
        ax = self._axes(g)
        m = g.size // g.shape[1]
        grads = {self.gamma: (g * xhat).sum(axis=ax), self.beta: g.sum(axis=ax)}
        gx = g * self._bcast(gamma, g)
        dx = inv / m * (m * gx - gx.sum(axis=ax, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=ax, keepdims=True))
        return [dx], grads


class AvgPool3x3(Op):
    """3x3 average pool, stride 1, zero padding 1, padded cells not counted."""

    @staticmethod
    def _box(x):
        h, w = x.shape[2:]
        xp = _pad(x, 1)
        out = np.zeros_like(x)
        for i in range(3):
            for j in range(3):
                out += xp[:, :, i:i + h, j:j + w]
        return out

    def forward(self, xs, graph, ctx):
        x, = xs
        cnt = self._box(np.ones((1, 1) + x.shape[2:]))
        return self._box(x) / cnt, cnt

    def backward(self, g, cnt, graph):
        return [self._box(g / cnt)], {}


class GlobalAvgPool(Op):
    def forward(self, xs, graph, ctx):
        x, = xs
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, g, shape, graph):
        return [np.broadcast_to(g[:, :, None, None] / (shape[2] * shape[3]), shape).copy()], {}


class Add(Op):
    def forward(self, xs, graph, ctx):
        out = xs[0].copy()
        for x in xs[1:]:
            out += x
        return out, len(xs)

    def backward(self, g, n, graph):
        return [g] * n, {}


class Scale(Op):
    def __init__(self, c):
        self.c = float(c)

    def forward(self, xs, graph, ctx):
        return xs[0] * self.c, None

    def backward(self, g, cache, graph):
        return [g * self.c], {}


class Concat(Op):
    def forward(self, xs, graph, ctx):
        return np.concatenate(xs, axis=1), [x.shape[1] for x in xs]

    def backward(self, g, sizes, graph):
        return np.split(g, np.cumsum(sizes)[:-1], axis=1), {}


class SoftmaxCrossEntropy(Op):
    """Mean cross-entropy of logits against integer labels from the forward call."""

    def forward(self, xs, graph, ctx):
        z, = xs
        y = ctx["labels"]
        if y is None:
            raise GraphError("softmax-cross-entropy needs labels")
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        n = z.shape[0]
        loss = -logp[np.arange(n), y].mean()
        return np.asarray(loss), (np.exp(logp), y)

    def backward(self, g, cache, graph):
        p, y = cache
        d = p.copy()
        d[np.arange(len(y)), y] -= 1.0
        return [d * (float(g) / len(y))], {}


# ---------------------------------------------------------------------------
# graph


@dataclass
class Node:
    op: Op
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    name: str
    tap: str | None = None


class Graph:
    """Static dataflow graph with named parameters and activation taps."""

    def __init__(self, input_shape):
        self.input_shape = tuple(input_shape)
        self.nodes: list[Node] = [Node(Input(), (), self.input_shape, "input")]
        self.params: dict[str, Param] = {}
        self.tap_kinds: dict[str, str] = {}
        self.output: int | None = None
        self.loss: int | None = None
        self._values: list | None = None
        self._caches: list | None = None
        self._ran_loss = False

    input = 0

    # -- building ---------------------------------------------------------
    def _add(self, op, inputs, shape, name=None, tap=None, tap_kind=None):
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise GraphError(f"unknown input node {i}")
        idx = len(self.nodes)
        if tap is not None:
            if tap in self.tap_kinds:
                raise GraphError(f"duplicate tap {tap!r}")
            self.tap_kinds[tap] = tap_kind or "block"
        self.nodes.append(Node(op, tuple(inputs), tuple(shape), name or type(op).__name__, tap))
        for p in op.params:
            if self.params[p].owner != -1:
                raise GraphError(f"parameter {p!r} already owned")
            self.params[p].owner = idx
        return idx

    def _new_param(self, name, shape, init, fan_in=1, kind="weight"):
        if name in self.params:
            raise GraphError(f"duplicate parameter {name!r}")
        self.params[name] = Param(np.zeros(shape), init, fan_in, kind)
        return name

    def shape_of(self, i):
        return self.nodes[i].shape

    def conv2d(self, x, out_ch, k, stride=1, name="conv", bias=False, tap=None):
        s = self.shape_of(x)
        if len(s) != 3:
            raise GraphError(f"conv2d needs a (C,H,W) input, got {s}")
        c, h, w = s
        pad = k // 2
        ho, wo = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1
        if ho < 1 or wo < 1:
            raise GraphError("conv2d output would be empty")
        fan = c * k * k
        wn = self._new_param(f"{name}.weight", (out_ch, c, k, k), "uniform", fan)
        bn = self._new_param(f"{name}.bias", (out_ch,), "uniform", fan, "bias") if bias else None
        return self._add(Conv2d(wn, bn, stride, pad), [x], (out_ch, ho, wo), name, tap)

    def linear(self, x, out_f, name="linear", bias=True, tap=None):
        s = self.shape_of(x)
        if len(s) != 1:
            raise GraphError(f"linear needs a flat input, got {s}")
        wn = self._new_param(f"{name}.weight", (out_f, s[0]), "uniform", s[0])
        bn = self._new_param(f"{name}.bias", (out_f,), "uniform", s[0], "bias") if bias else None
        return self._add(Linear(wn, bn), [x], (out_f,), name, tap)

    def relu(self, x, name="relu", tap=None):
        return self._add(ReLU(), [x], self.shape_of(x), name, tap, "relu")

    def batchnorm(self, x, name="bn", tap=None):
        c = self.shape_of(x)[0]
        g = self._new_param(f"{name}.gamma", (c,), "ones", kind="bn")
        b = self._new_param(f"{name}.beta", (c,), "zeros", kind="bn")
        return self._add(BatchNorm(g, b), [x], self.shape_of(x), name, tap)

    def avgpool3x3(self, x, name="avgpool", tap=None):
        if len(self.shape_of(x)) != 3:
            raise GraphError("avgpool3x3 needs a (C,H,W) input")
        return self._add(AvgPool3x3(), [x], self.shape_of(x), name, tap)

    def global_avg_pool(self, x, name="gap", tap=None):
        if len(self.shape_of(x)) != 3:
            raise GraphError("global_avg_pool needs a (C,H,W) input")
        return self._add(GlobalAvgPool(), [x], self.shape_of(x)[:1], name, tap)

    def add(self, xs, name="add", tap=None):
        xs = list(xs)
        shapes = {self.shape_of(i) for i in xs}
        if not xs or len(shapes) != 1:
            raise GraphError(f"add needs >=1 inputs of equal shape, got {shapes}")
        return self._add(Add(), xs, self.shape_of(xs[0]), name, tap)

    def scale(self, x, c, name="scale", tap=None):
        return self._add(Scale(c), [x], self.shape_of(x), name, tap)

    def concat(self, xs, name="concat", tap=None):
        shapes = [self.shape_of(i) for i in xs]
        if not shapes or len({s[1:] for s in shapes}) != 1:
            raise GraphError(f"concat needs matching trailing dims, got {shapes}")
        c = sum(s[0] for s in shapes)
        return self._add(Concat(), list(xs), (c,) + shapes[0][1:], name, tap)

    def softmax_cross_entropy(self, logits, name="loss"):
        if len(self.shape_of(logits)) != 1:
            raise GraphError("loss needs (N,K) logits")
        self.loss = self._add(SoftmaxCrossEntropy(), [logits], (), name)
        return self.loss

    def set_output(self, i):
        self.output = i

    # -- parameters -------------------------------------------------------
    def init_params(self, seed: int):
        """Fan-in-scaled uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
        conv/linear weights and biases; batchnorm gamma=1, beta=0. Each
        parameter draws from its own stream keyed by (seed, name)."""
        for name, p in self.params.items():
            if p.init == "uniform":
                bound = 1.0 / np.sqrt(p.fan_in)
                p.value = make_rng(seed, "param", name).uniform(-bound, bound, p.value.shape)
            elif p.init == "ones":
                p.value = np.ones(p.value.shape)
            else:
                p.value = np.zeros(p.value.shape)
            p.grad = None
        return self

    @property
    def param_names(self) -> list[str]:
        return list(self.params)

    def param_vector(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.params.values()])

    def set_param_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        off = 0
        for p in self.params.values():
            n = p.value.size
            p.value = vec[off:off + n].reshape(p.value.shape).copy()
            off += n
        if off != vec.size:
            raise GraphError("parameter vector has wrong length")

    def grad_vector(self) -> np.ndarray:
        return np.concatenate([
            (p.grad if p.grad is not None else np.zeros_like(p.value)).ravel()
            for p in self.params.values()])

    def weight_names(self) -> list[str]:
        """Conv/linear weight tensors (the "layers" that saliency proxies sum over)."""
        return [n for n, p in self.params.items() if p.kind == "weight"]

    def clone(self) -> "Graph":
        return copy.deepcopy(self)

    # -- evaluation -------------------------------------------------------
    def forward(self, x, labels=None, mode="init-stats", bypass_bn=False) -> ForwardResult:
        if mode not in MODES:
            raise GraphError(f"unknown mode {mode!r}")
        if self.output is None:
            raise GraphError("graph has no output")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise GraphError(f"input shape {x.shape[1:]} != declared {self.input_shape}")
        if not np.all(np.isfinite(x)):
            raise GraphError("non-finite input")
        last = self.loss if (labels is not None and self.loss is not None) else self.output
        ctx = {"x": x, "labels": None if labels is None else np.asarray(labels),
               "mode": mode, "bypass_bn": bypass_bn, "bn_var": []}
        values: list = [None] * len(self.nodes)
        caches: list = [None] * len(self.nodes)
        for i, node in enumerate(self.nodes[: last + 1]):
            if i == self.loss and i != last:
                continue
            values[i], caches[i] = node.op.forward([values[j] for j in node.inputs], self, ctx)
        self._values, self._caches = values, caches
        self._ran_loss = last == self.loss and labels is not None
        self.bn_vars = ctx["bn_var"]
        taps = TapSet(kinds=dict(self.tap_kinds))
        for i, node in enumerate(self.nodes):
            if node.tap is not None and values[i] is not None:
                taps.values[node.tap] = values[i]
        self.taps = taps
        loss = float(values[self.loss]) if self._ran_loss else None
        return ForwardResult(values[self.output], loss, taps)

    def backward(self, seed_grad=None, input_grad=False):
        """Reverse pass from the loss (seed 1) or from the output (given seed).

        Fills ``Param.grad`` and the tap gradients of the last TapSet; returns
        ``{param: grad}`` plus the input gradient when ``input_grad`` is set.
        """
        if self._values is None:
            raise GraphError("backward called before forward")
        if seed_grad is None:
            if not self._ran_loss:
                raise GraphError("no loss computed; pass seed_grad for the output")
            target, seed = self.loss, np.asarray(1.0)
        else:
            target = self.output
            seed = np.asarray(seed_grad, dtype=np.float64)
            if seed.shape != np.shape(self._values[target]):
                raise GraphError("seed_grad shape does not match output")
        grads: list = [None] * len(self.nodes)
        grads[target] = seed
        for p in self.params.values():
            p.grad = np.zeros_like(p.value)
        for i in range(target, 0, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            in_grads, pgrads = node.op.backward(g, self._caches[i], self)
            for name, pg in pgrads.items():
                self.params[name].grad += pg
            for j, gj in zip(node.inputs, in_grads):
                grads[j] = gj if grads[j] is None else grads[j] + gj
        for i, node in enumerate(self.nodes):
            if node.tap is not None and grads[i] is not None:
                self.taps.grads[node.tap] = grads[i]
        out = {n: p.grad for n, p in self.params.items()}
        if input_grad:
            gi = grads[0] if grads[0] is not None else np.zeros_like(self._values[0])
            return out, gi
        return out


def forward(graph: Graph, inputs, labels=None, mode="init-stats", bypass_bn=False):
    return graph.forward(inputs, labels, mode, bypass_bn)


def backward(graph: Graph, seed_grad=None, input_grad=False):
    return graph.backward(seed_grad, input_grad)


def loss_and_grad(graph: Graph, x, labels, mode="init-stats"):
    res = graph.forward(x, labels, mode)
    graph.backward()
    return res.loss, graph.grad_vector()


def fd_hvp(grad_fn, theta, direction, eps=None):
    """(grad(theta + eps*v_hat) - grad(theta)) / eps * |v| for any gradient oracle."""
    v = np.asarray(direction, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if v.shape != theta.shape:
        raise GraphError("direction layout does not match parameters")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise GraphError("zero-norm direction")
    if eps is None:
        eps = 1e-4 * (1.0 + float(np.max(np.abs(theta), initial=0.0)))
    g0 = grad_fn(theta)
    g1 = grad_fn(theta + eps * (v / norm))
    return (g1 - g0) / eps * norm


def hvp(graph: Graph, x, labels, direction, eps=None, mode="init-stats"):
    """Hessian-vector product of the graph loss at the current parameters.

    ``direction`` is a flat vector in ``graph.param_vector()`` layout.
    Parameters are restored bit-exactly afterwards.
    """
    saved = {n: p.value for n, p in graph.params.items()}

    def grad_fn(theta):
        graph.set_param_vector(theta)
        return loss_and_grad(graph, x, labels, mode)[1]
    try:
        return fd_hvp(grad_fn, graph.param_vector(), direction, eps)
    finally:
        for n, p in graph.params.items():
            p.value = saved[n]
