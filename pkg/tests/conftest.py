import numpy as np
import pytest

import specklelab as sl
from specklelab.backend import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger kernel JIT compilation once so timed tests measure compute."""
    k = kernels()
    x = np.ones((1, 1, 4, 4))
    w = np.ones((1, 1, 3, 3))
    k.conv2d_fwd(x, w, 1)
    k.conv2d_grad_kernel(x, x, 3, 1)
    k.gamma_field(1, 8, 1.0)
    k.gamma_field(1, 8, 4.0)


@pytest.fixture(scope="session")
def corpus():
    """Synthetic piecewise scenes standing in for a grayscale corpus."""
    rng = sl.Rng(11)
    return [sl.synthetic_clean_image(128, 128, rng) for _ in range(12)]


@pytest.fixture(scope="session")
def toy_datasets(corpus):
    """The scaled-down training setup: 2000 train / 500 val patches of 33x33, L=1."""
    train_ds = sl.build_patch_dataset(corpus, 2000, 33, 1.0, sl.Rng(100))
    val_ds = sl.build_patch_dataset(corpus, 500, 33, 1.0, sl.Rng(200))
    return train_ds, val_ds


@pytest.fixture(scope="session")
def toy_run(toy_datasets):
    """One full toy training run (6 layers, lambda=1, eta=1e-4, 5 epochs).

    Session-scoped: the trained filter is reused by every acceptance check
    that needs it.
    """
    import time

    train_ds, val_ds = toy_datasets
    arch = sl.make_architecture(6, 32)
    params = sl.build_network(arch, sl.Rng(5))
    cfg = sl.TrainConfig(
        epochs=5, lam=1.0, eta=1e-4, momentum=0.9, batch_size=8,
        seed=9, val_every=250,
    )
    t0 = time.time()
    trained, history = sl.train(params, train_ds, val_ds, cfg)
    elapsed = time.time() - t0
    return {
        "params": trained,
        "history": history,
        "train": train_ds,
        "val": val_ds,
        "config": cfg,
        "elapsed": elapsed,
    }
