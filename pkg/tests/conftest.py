"""Shared fixtures and oracle helpers."""
from __future__ import annotations

import numpy as np
import pytest

from kgdistill.kg import Dataset, Triple, Vocab, add_reverse


def finite_difference_grads(loss_fn, params: dict[str, np.ndarray], step: float = 1e-4) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar loss w.r.t. every parameter entry."""
    out = {}
    for name, arr in params.items():
        grad = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        out[name] = grad
    return out


def assert_grads_close(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray], rel_tol: float = 1e-4):
    """Per-entry relative error check with an absolute floor for near-zero entries."""
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        rel = np.abs(a - n) / denom
        assert rel.max() < rel_tol, f"{name}: max rel err {rel.max():.3e}"


def make_dataset(train, valid=(), test=(), num_entities=None, num_relations=None) -> Dataset:
    """Build a Dataset directly from id triples (bypasses file parsing)."""
    train = [Triple(*t) for t in train]
    valid = [Triple(*t) for t in valid]
    test = [Triple(*t) for t in test]
    everything = train + valid + test
    n_ent = num_entities or (max(max(t.head, t.tail) for t in everything) + 1)
    n_rel = num_relations or (max(t.rel for t in everything) + 1)
    entities = Vocab()
    relations = Vocab()
    for i in range(n_ent):
        entities.add(f"e{i}")
    for i in range(n_rel):
        relations.add(f"r{i}")
    return Dataset(
        entities=entities,
        relations=relations,
        train=train,
        valid=valid,
        test=test,
        train_aug=add_reverse(train, n_rel),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
