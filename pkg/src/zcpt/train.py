"""Plain SGD training, only used to label the mini tabular benchmark."""
from __future__ import annotations

import numpy as np

from .autodiff import Graph
from .data import Dataset
from .rng import make_rng


def accuracy(graph: Graph, x, y, batch_size: int = 256) -> float:
    """Top-1 accuracy; batchnorm uses the statistics of each evaluation chunk."""
    correct = 0
    for i in range(0, len(y), batch_size):
        logits = graph.forward(x[i:i + batch_size], mode="train-stats").output
        correct += int(np.sum(np.argmax(logits, axis=1) == y[i:i + batch_size]))
    return correct / len(y)


def sgd_train(graph: Graph, data: Dataset, epochs: int, lr: float, seed: int,
              batch_size: int = 64, momentum: float = 0.9, reinit: bool = True):
    """Train in place with momentum SGD; returns (graph, validation accuracy).

    With ``reinit`` the parameters are first re-drawn from ``seed``; epoch
    shuffles come from (seed, epoch), so the result is a pure function of the
    arguments.
    """
    if len(data.y_train) == 0 or len(data.y_val) == 0:
        raise ValueError("empty dataset split")
    if graph.loss is None:
        raise ValueError("graph has no loss node")
    if reinit:
        graph.init_params(seed)
    vel = {n: np.zeros_like(p.value) for n, p in graph.params.items()}
    n = len(data.y_train)
    for epoch in range(epochs):
        order = make_rng(seed, "epoch", epoch).permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            idx = order[i:i + batch_size]
            graph.forward(data.x_train[idx], data.y_train[idx], mode="train-stats")
            graph.backward()
            for name, p in graph.params.items():
                vel[name] = momentum * vel[name] + p.grad
                p.value = p.value - lr * vel[name]
    return graph, accuracy(graph, data.x_val, data.y_val)
