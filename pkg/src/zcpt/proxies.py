"""Training-free architecture scores computed on untrained networks.

All stored scores are "higher is better". Saliency-style proxies (grad_norm,
snip, grasp, synflow) sum over conv/linear weight tensors only.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .autodiff import hvp
from .rng import make_rng
from .spaces import ExecutableNet

PROXIES = ("nwot", "synflow", "snip", "grasp", "grad_norm", "fisher", "zen_score")
NEEDS_DATA = {"nwot", "snip", "grasp", "grad_norm", "fisher"}
NEEDS_LABELS = {"snip", "grasp", "grad_norm", "fisher"}

ZEN_REPEATS = 8
ZEN_ALPHA = 0.01
NWOT_MIN_DET = 1e-12


class ProxyError(ValueError):
    pass


@dataclass(frozen=True)
class ProxyScore:
    value: float
    proxy: str
    batch_seed: int | None  # None for synflow, which uses no data
    degenerate: bool = False

    def to_dict(self):
        return asdict(self)


def hamming_kernel(codes: np.ndarray) -> np.ndarray:
    """K[i, j] = N_A - d_H(c_i, c_j) for binary codes of shape (B, N_A)."""
    c = np.asarray(codes, dtype=np.float64)
    return c @ c.T + (1.0 - c) @ (1.0 - c).T


def nwot_from_kernel(k: np.ndarray) -> tuple[float, bool]:
    sign, logdet = np.linalg.slogdet(k)
    degenerate = bool(sign <= 0 or logdet <= np.log(NWOT_MIN_DET))
    return float(logdet), degenerate


def nwot_from_codes(codes) -> tuple[float, bool]:
    return nwot_from_kernel(hamming_kernel(codes))


def _weights(net):
    g = net.graph
    return [(n, g.params[n]) for n in g.weight_names()]


def _nwot(net, x):
    net.forward(x)
    taps = net.graph.taps
    k = np.zeros((len(x), len(x)))
    for name in taps.of_kind("relu"):
        c = (taps.values[name] > 0).reshape(len(x), -1).astype(np.float64)
        k += c @ c.T + (1.0 - c) @ (1.0 - c).T
    return nwot_from_kernel(k)


def _grad_norm(net, x, y):
    net.forward(x, y)
    net.graph.backward()
    return sum(float(np.linalg.norm(p.grad)) for _, p in _weights(net))


def _snip(net, x, y):
    net.forward(x, y)
    net.graph.backward()
    return sum(float(np.abs(p.grad * p.value).sum()) for _, p in _weights(net))


def _grasp(net, x, y):
    g = net.graph
    net.forward(x, y)
    g.backward()
    weights = set(g.weight_names())
    direction = np.concatenate([
        (p.grad if n in weights else np.zeros_like(p.value)).ravel() for n, p in g.params.items()])
    if not np.any(direction):
        return 0.0
    hg = hvp(g, x, y, direction)
    theta = g.param_vector()
    mask = np.concatenate([np.full(p.value.size, n in weights) for n, p in g.params.items()])
    return float(-(hg * theta)[mask].sum())


def _synflow(net, input_shape):
    g = net.graph.clone()
    for p in g.params.values():
        p.value = np.abs(p.value)
    out = g.forward(np.ones((1,) + tuple(input_shape)), bypass_bn=True).output
    g.backward(np.ones_like(out))
    return sum(float((p.grad * p.value).sum()) for n, p in g.params.items()
               if p.kind == "weight")


def _fisher(net, x, y):
    net.forward(x, y)
    net.graph.backward()
    taps = net.graph.taps
    total = 0.0
    for name in taps.of_kind("block"):
        a, ga = taps.values[name], taps.grads.get(name)
        if ga is None:
            continue
        axes = (0, 2, 3) if a.ndim == 4 else (0,)
        total += float(np.sum(np.mean(a * ga, axis=axes) ** 2))
    return total


def _zen(net, input_shape, batch_size, seed):
    rng = make_rng(seed, "zen")
    g = net.graph
    shape = (batch_size,) + tuple(input_shape)
    diffs, bn_terms = [], []
    for _ in range(ZEN_REPEATS):
        x = rng.normal(size=shape)
        eps = rng.normal(size=shape)
        g.forward(x + ZEN_ALPHA * eps)
        f1 = g._values[net.features].copy()
        g.forward(x)
        f0 = g._values[net.features]
        diffs.append(np.linalg.norm(f1 - f0) / ZEN_ALPHA)
        bn_terms.append(sum(np.log(np.sqrt(np.mean(v))) for v in g.bn_vars if np.mean(v) > 0))
    return float(np.log(np.mean(diffs)) + np.mean(bn_terms))


def compute_proxy(net: ExecutableNet, proxy: str, batch=None, seed: int = 0,
                  batch_size: int = 32) -> ProxyScore:
    """Score ``net`` with ``proxy``.

    ``batch`` is ``(inputs, labels)``; synflow ignores it (all-ones input) and
    zen_score draws Gaussian inputs from ``seed``. A singular nwot kernel is
    reported through ``degenerate`` rather than raised.
    """
    if proxy not in PROXIES:
        raise ProxyError(f"unknown proxy {proxy!r}; choose from {PROXIES}")
    x = y = None
    if proxy in NEEDS_DATA:
        if batch is None:
            raise ProxyError(f"{proxy} needs a minibatch")
        x, y = batch
        if proxy in NEEDS_LABELS and y is None:
            raise ProxyError(f"{proxy} needs labels")
    input_shape = net.graph.input_shape
    degenerate = False
    if proxy == "nwot":
        value, degenerate = _nwot(net, x)
    elif proxy == "synflow":
        value = _synflow(net, input_shape)
    elif proxy == "snip":
        value = _snip(net, x, y)
    elif proxy == "grasp":
        value = _grasp(net, x, y)
    elif proxy == "grad_norm":
        value = _grad_norm(net, x, y)
    elif proxy == "fisher":
        value = _fisher(net, x, y)
    else:
        value = _zen(net, input_shape, batch_size, seed)
    if not degenerate and not np.isfinite(value):
        degenerate = True
    return ProxyScore(float(value), proxy, None if proxy == "synflow" else int(seed), degenerate)


def compute_proxy_batched(nets: Sequence[ExecutableNet], proxy: str, seed: int, data=None,
                          batch_size: int = 32) -> list[ProxyScore]:
    """Score every net on the one minibatch derived from ``seed``."""
    if not nets:
        return []
    shapes = {n.graph.input_shape for n in nets}
    if len(shapes) != 1:
        raise ProxyError("nets do not share an input shape")
    batch = None
    if proxy in NEEDS_DATA:
        if data is None:
            raise ProxyError(f"{proxy} needs a data source")
        batch = data.minibatch(seed, batch_size)
    return [compute_proxy(n, proxy, batch, seed, batch_size) for n in nets]
