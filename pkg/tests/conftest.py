import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from synth import write_mnist_idx  # noqa: E402


@pytest.fixture(scope="session")
def mnist_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("mnist_synth")
    return str(write_mnist_idx(str(root), n_train=2048, n_test=512, seed=11))


@pytest.fixture(scope="session")
def real_cifar_root():
    """Real CIFAR-10 binaries, when the environment provides them."""
    root = os.environ.get("DYNSHUFFLE_DATA", "")
    candidates = [root, os.path.join(root, "cifar-10-batches-bin")] if root else []
    for cand in candidates:
        if cand and os.path.exists(os.path.join(cand, "data_batch_1.bin")):
            return cand
    pytest.skip("real CIFAR-10 not available in this environment "
                "(set DYNSHUFFLE_DATA to the binary batch directory)")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
