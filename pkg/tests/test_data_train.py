import numpy as np
import pytest

from zcpt.autodiff import Graph
from zcpt.data import Dataset, SynthDatasetCfg, synth_dataset
from zcpt.spaces import chain_space, instantiate, parse_genotype
from zcpt.train import sgd_train


def tiny_conv(input_shape, classes, seed=0):
    a = parse_genotype(chain_space(1), "|conv_3x3~0|")
    return instantiate(a, 4, init_seed=seed, input_shape=input_shape, num_classes=classes).graph


def test_zero_noise_classes_identical():
    d = synth_dataset(SynthDatasetCfg(noise_level=0.0, samples_per_class=8, image_size=4))
    for k in range(d.num_classes):
        xs = d.x_train[d.y_train == k]
        assert np.all(xs == xs[0])


def test_dataset_deterministic_and_disjoint():
    cfg = SynthDatasetCfg(samples_per_class=16, image_size=4)
    a, b = synth_dataset(cfg), synth_dataset(cfg)
    for f in ("x_train", "y_train", "x_val", "y_val", "x_test", "y_test"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert len(a.y_train) == 48 and len(a.y_val) == 16
    train_rows = {r.tobytes() for r in a.x_train}
    assert not any(r.tobytes() in train_rows for r in a.x_val)


@pytest.mark.parametrize("bad", [dict(num_classes=0), dict(samples_per_class=0),
                                 dict(val_fraction=0.0)])
def test_degenerate_config(bad):
    with pytest.raises(ValueError):
        synth_dataset(SynthDatasetCfg(**bad))


def test_minibatch_is_seeded():
    d = synth_dataset(SynthDatasetCfg(samples_per_class=16, image_size=4))
    x1, y1 = d.minibatch(3, 8)
    x2, y2 = d.minibatch(3, 8)
    x3, _ = d.minibatch(4, 8)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    assert not np.array_equal(x1, x3)


def _blobs(n=64, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(scale=0.3, size=(n, 1, 4, 4)) + np.where(y == 1, 2.0, -2.0)[:, None, None, None]
    return x, y


def test_separable_blobs_train_to_high_accuracy():
    x, y = _blobs(128)
    xv, yv = _blobs(64, seed=1)
    data = Dataset(x, y, xv, yv, 2)
    _, acc = sgd_train(tiny_conv((1, 4, 4), 2), data, epochs=20, lr=0.05, seed=0, batch_size=16)
    assert acc >= 0.95


def test_default_synthetic_data_is_learnable():
    data = synth_dataset(SynthDatasetCfg())
    _, acc = sgd_train(tiny_conv(data.input_shape, 4), data, epochs=10, lr=0.05, seed=0,
                       batch_size=32)
    assert acc >= 0.95


def test_zero_epochs_is_chance_level():
    data = synth_dataset(SynthDatasetCfg(samples_per_class=128, image_size=8, noise_level=4.0))
    accs = [sgd_train(tiny_conv(data.input_shape, 4, s), data, 0, 0.05, s)[1] for s in range(8)]
    assert abs(np.mean(accs) - 0.25) < 0.1


def test_training_is_deterministic():
    data = synth_dataset(SynthDatasetCfg(samples_per_class=32, image_size=4))
    a = sgd_train(tiny_conv(data.input_shape, 4), data, 2, 0.05, 7, batch_size=16)[1]
    b = sgd_train(tiny_conv(data.input_shape, 4), data, 2, 0.05, 7, batch_size=16)[1]
    assert a == b


def test_empty_dataset_rejected():
    g = Graph((1, 2, 2))
    empty = Dataset(np.zeros((0, 1, 2, 2)), np.zeros(0, int), np.zeros((0, 1, 2, 2)),
                    np.zeros(0, int), 2)
    with pytest.raises(ValueError):
        sgd_train(g, empty, 1, 0.1, 0)
