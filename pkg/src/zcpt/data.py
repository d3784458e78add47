"""Synthetic image classification data: class-conditional Gaussian blobs."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .rng import make_rng


@dataclass(frozen=True)
class SynthDatasetCfg:
    num_classes: int = 4
    samples_per_class: int = 256
    image_size: int = 16
    channels: int = 3
    noise_level: float = 1.0
    seed: int = 0
    val_fraction: float = 0.25

    def to_dict(self):
        return asdict(self)


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    num_classes: int
    x_test: np.ndarray | None = None
    y_test: np.ndarray | None = None

    @property
    def input_shape(self):
        return self.x_train.shape[1:]

    def minibatch(self, seed: int, batch_size: int):
        """Training-stream minibatch drawn without replacement from ``seed``."""
        n = len(self.y_train)
        if n == 0:
            raise ValueError("empty training split")
        idx = make_rng(seed, "minibatch").choice(n, size=min(batch_size, n), replace=False)
        return self.x_train[idx], self.y_train[idx]


def _smooth(field, passes=2):
    for _ in range(passes):
        p = np.pad(field, ((0, 0), (1, 1), (1, 1)), mode="wrap")
        field = sum(p[:, i:i + field.shape[1], j:j + field.shape[2]]
                    for i in range(3) for j in range(3)) / 9.0
    return field


def synth_dataset(cfg: SynthDatasetCfg = SynthDatasetCfg()) -> Dataset:
    """Each class has a smooth random mean pattern (unit RMS); samples add
    iid Gaussian pixel noise of std ``noise_level``. Split is per class, the
    first ``val_fraction`` of every class going to validation. A test split of
    the same size as validation is drawn from fresh noise."""
    if cfg.num_classes < 1 or cfg.samples_per_class < 1 or cfg.image_size < 1 or cfg.channels < 1:
        raise ValueError(f"degenerate dataset config: {cfg}")
    n_val = int(round(cfg.samples_per_class * cfg.val_fraction))
    if not 0 < n_val < cfg.samples_per_class:
        raise ValueError("val_fraction leaves an empty split")
    shape = (cfg.channels, cfg.image_size, cfg.image_size)
    xs, ys, xt = [], [], []
    for k in range(cfg.num_classes):
        mean = _smooth(make_rng(cfg.seed, "class-mean", k).normal(size=shape))
        mean /= np.sqrt(np.mean(mean ** 2))
        noise = make_rng(cfg.seed, "noise", k).normal(size=(cfg.samples_per_class,) + shape)
        xs.append(mean[None] + cfg.noise_level * noise)
        xt.append(mean[None] + cfg.noise_level * make_rng(cfg.seed, "test-noise", k).normal(
            size=(n_val,) + shape))
        ys.append(np.full(cfg.samples_per_class, k))
    x_val = np.concatenate([x[:n_val] for x in xs])
    y_val = np.concatenate([y[:n_val] for y in ys])
    x_tr = np.concatenate([x[n_val:] for x in xs])
    y_tr = np.concatenate([y[n_val:] for y in ys])
    perm = make_rng(cfg.seed, "order").permutation(len(y_tr))
    y_test = np.repeat(np.arange(cfg.num_classes), n_val)
    return Dataset(x_tr[perm], y_tr[perm], x_val, y_val, cfg.num_classes,
                   np.concatenate(xt), y_test)
