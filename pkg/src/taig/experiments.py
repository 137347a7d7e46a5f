"""The standard desk-scale setup shared by the demos and the acceptance suite."""

from __future__ import annotations

from taig import data, models

DESK_BLOBS = dict(n_classes=4, input_shape=(1, 8, 8), separation=0.15, sigma=0.1)
TRAIN_PER_CLASS = 150
TEST_PER_CLASS = 200
DESK_TRAIN = dict(lr=0.02, epochs=20, batch_size=32, weight_decay=0.0, momentum=0.9)
SURROGATE = "mlp-64-32"


def desk_data(seed: int = 0) -> tuple[data.Dataset, data.Dataset]:
    train = data.gen_blobs(data.BlobConfig(samples_per_class=TRAIN_PER_CLASS, seed=seed, **DESK_BLOBS), "train")
    test = data.gen_blobs(data.BlobConfig(samples_per_class=TEST_PER_CLASS, seed=seed, **DESK_BLOBS), "test")
    return train, test


def train_zoo(train: data.Dataset, test: data.Dataset, seed: int = 0, archs=models.ZOO) -> tuple[dict, dict]:
    """Train every architecture in ``archs``; returns ``(nets, held-out accuracies)``."""
    nets, accs = {}, {}
    for i, arch in enumerate(archs):
        s = 1000 * seed + i
        net = models.init(arch, train.input_shape, train.n_classes, s)
        nets[arch], accs[arch] = models.train(net, train, models.TrainConfig(seed=s, **DESK_TRAIN), heldout=test)
    return nets, accs


def desk_setup(seed: int = 0, n_eval: int = 200):
    """Data, trained zoo, and ``n_eval`` test items every zoo member classifies correctly."""
    train, test = desk_data(seed)
    nets, _ = train_zoo(train, test, seed)
    inputs = data.subsample_correct(test, list(nets.values()), n_eval, seed)
    return nets, train, test, inputs
