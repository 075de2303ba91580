import numpy as np
import pytest

from caldnr.config import TrainConfig
from caldnr.model import ModelConfig, init_params
from caldnr.objective import Batch


def random_batch(seed, B=4, C=3, L=5, D=6, queue=3, mode="attention"):
    """Small random problem with nontrivial pseudo labels, weights and queues."""
    rng = np.random.default_rng(seed)
    params = init_params(ModelConfig(C, D, embed_dim=4, hidden_dim=5, mode=mode), seed)
    params.values["cls_bias"][:] = rng.normal(size=C)
    x = rng.normal(size=(B, L, D))
    y = (rng.random((B, C)) < 0.4).astype(np.int8)
    yt = np.maximum(y, rng.random((B, C)) < 0.3).astype(np.int8)
    lam = np.where(y == 1, 1.0, (rng.random((B, C)) < 0.6).astype(float))
    q = [rng.normal(size=(queue, D)) for _ in range(C)] if queue else None
    return params, Batch(x, y, yt, lam, q)


@pytest.fixture
def small_config():
    return TrainConfig(epochs=3, batch_size=8, warmup_epochs=1, queue_capacity=8, queue_min_size=2, hidden_dim=8, embed_dim=4)
