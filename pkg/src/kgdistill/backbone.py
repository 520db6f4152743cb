"""Complex-valued embedding tables, bilinear scoring, cross-entropy with
analytic gradients, and Adam.

A triple (h, r, t) is scored as the real part of <h, r, conj(t)>; scoring a
query against every entity is a single matrix product against the entity
table.  All gradients here are hand-derived and exact; the test suite checks
every path against central finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kg import Triple


class NumericalError(ArithmeticError):
    """A loss evaluated to a non-finite value; carries the offending triple."""

    def __init__(self, message: str, triple: Triple | None = None):
        self.triple = triple
        super().__init__(message if triple is None else f"{message} (triple {tuple(triple)})")


@dataclass
class ComplexEmbeddingTable:
    """count x dim complex vectors stored as separate real/imaginary matrices."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self) -> None:
        if self.re.shape != self.im.shape or self.re.ndim != 2:
            raise ValueError(f"inconsistent table shapes {self.re.shape} vs {self.im.shape}")

    @property
    def count(self) -> int:
        return int(self.re.shape[0])

    @property
    def dim(self) -> int:
        return int(self.re.shape[1])

    @classmethod
    def init_normal(cls, count: int, dim: int, rng: np.random.Generator) -> "ComplexEmbeddingTable":
        std = 1.0 / np.sqrt(dim)
        return cls(
            re=rng.normal(0.0, std, size=(count, dim)),
            im=rng.normal(0.0, std, size=(count, dim)),
        )

    def row(self, idx: int) -> np.ndarray:
        return self.re[idx] + 1j * self.im[idx]

    def copy(self) -> "ComplexEmbeddingTable":
        return ComplexEmbeddingTable(self.re.copy(), self.im.copy())


@dataclass
class Projection:
    """Linear map from a fixed feature vector to the 2*dim reals of an embedding.

    The first half of the output is the real part, the second half the
    imaginary part.  Features stay fixed; only the weights train.
    """

    weights: np.ndarray  # (2*dim, in_dim)

    @property
    def in_dim(self) -> int:
        return int(self.weights.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weights.shape[0])

    @classmethod
    def init_xavier(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "Projection":
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(weights=rng.uniform(-limit, limit, size=(out_dim, in_dim)))

    def apply(self, features: np.ndarray) -> ComplexEmbeddingTable:
        full = features @ self.weights.T
        d = self.out_dim // 2
        return ComplexEmbeddingTable(re=full[:, :d].copy(), im=full[:, d:].copy())

    def copy(self) -> "Projection":
        return Projection(self.weights.copy())


@dataclass
class KgeModel:
    """Entity + relation tables for one scoring model.

    The entity side is either a free table or a projection of fixed features
    (``projection``/``features`` set, ``entities`` rebuilt by ``materialize``).
    """

    entities: ComplexEmbeddingTable
    relations: ComplexEmbeddingTable
    projection: Projection | None = None
    features: np.ndarray | None = None  # (n, in_dim) float64, fixed

    def materialize(self) -> None:
        if self.projection is not None:
            self.entities = self.projection.apply(self.features)

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.projection is not None:
            out["projection.weights"] = self.projection.weights
        else:
            out["entities.re"] = self.entities.re
            out["entities.im"] = self.entities.im
        out["relations.re"] = self.relations.re
        out["relations.im"] = self.relations.im
        return out

    def copy(self) -> "KgeModel":
        return KgeModel(
            entities=self.entities.copy(),
            relations=self.relations.copy(),
            projection=self.projection.copy() if self.projection is not None else None,
            features=self.features,
        )


def init_free_model(num_entities: int, num_rels_aug: int, dim: int, rng: np.random.Generator) -> KgeModel:
    return KgeModel(
        entities=ComplexEmbeddingTable.init_normal(num_entities, dim, rng),
        relations=ComplexEmbeddingTable.init_normal(num_rels_aug, dim, rng),
    )


def init_projected_model(
    features: np.ndarray, num_rels_aug: int, dim: int, rng: np.random.Generator
) -> KgeModel:
    projection = Projection.init_xavier(features.shape[1], 2 * dim, rng)
    feats = np.asarray(features, dtype=np.float64)
    model = KgeModel(
        entities=projection.apply(feats),
        relations=ComplexEmbeddingTable.init_normal(num_rels_aug, dim, rng),
        projection=projection,
        features=feats,
    )
    return model


def complex_score(h: np.ndarray, r: np.ndarray, t: np.ndarray) -> float:
    """Real part of <h, r, conj(t)> for three equal-length complex vectors."""
    h, r, t = (np.asarray(v, dtype=np.complex128) for v in (h, r, t))
    if not h.shape == r.shape == t.shape:
        raise ValueError("h, r, t must have equal dims")
    return float(
        np.sum(
            h.real * r.real * t.real
            + h.imag * r.real * t.imag
            + h.real * r.imag * t.imag
            - h.imag * r.imag * t.real
        )
    )


def score_all(
    head_id: int, rel_id: int, entities: ComplexEmbeddingTable, relations: ComplexEmbeddingTable
) -> np.ndarray:
    """Scores of (head, rel, e) for every entity e, as one matrix-vector product."""
    a = entities.re[head_id] * relations.re[rel_id] - entities.im[head_id] * relations.im[rel_id]
    b = entities.re[head_id] * relations.im[rel_id] + entities.im[head_id] * relations.re[rel_id]
    return entities.re @ a + entities.im @ b


@dataclass
class ScoreCache:
    """Forward-pass intermediates needed to backprop a batch of score rows."""

    heads: np.ndarray
    rels: np.ndarray
    a: np.ndarray  # (B, d) real part of h*r
    b: np.ndarray  # (B, d) imaginary part of h*r
    h_re: np.ndarray
    h_im: np.ndarray
    r_re: np.ndarray
    r_im: np.ndarray


def model_scores(model: KgeModel, heads: Sequence[int], rels: Sequence[int]) -> tuple[np.ndarray, ScoreCache]:
    """Score every entity for each (head, rel) query. Returns (B, n) scores."""
    heads = np.asarray(heads, dtype=np.intp)
    rels = np.asarray(rels, dtype=np.intp)
    ent, rel = model.entities, model.relations
    h_re, h_im = ent.re[heads], ent.im[heads]
    r_re, r_im = rel.re[rels], rel.im[rels]
    a = h_re * r_re - h_im * r_im
    b = h_re * r_im + h_im * r_re
    scores = a @ ent.re.T + b @ ent.im.T
    return scores, ScoreCache(heads, rels, a, b, h_re, h_im, r_re, r_im)


def model_backward(model: KgeModel, cache: ScoreCache, d_scores: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of any scalar loss with given d(loss)/d(scores)."""
    ent, rel = model.entities, model.relations
    dA = d_scores @ ent.re
    dB = d_scores @ ent.im
    # tail-side gradient is dense over the entity table
    de_re = d_scores.T @ cache.a
    de_im = d_scores.T @ cache.b
    # head-side gradient scatters onto the batch heads
    dh_re = dA * cache.r_re + dB * cache.r_im
    dh_im = -dA * cache.r_im + dB * cache.r_re
    np.add.at(de_re, cache.heads, dh_re)
    np.add.at(de_im, cache.heads, dh_im)

    dr_re = np.zeros_like(rel.re)
    dr_im = np.zeros_like(rel.im)
    np.add.at(dr_re, cache.rels, dA * cache.h_re + dB * cache.h_im)
    np.add.at(dr_im, cache.rels, -dA * cache.h_im + dB * cache.h_re)

    grads = {"relations.re": dr_re, "relations.im": dr_im}
    if model.projection is not None:
        de_full = np.concatenate([de_re, de_im], axis=1)  # (n, 2d)
        grads["projection.weights"] = de_full.T @ model.features
    else:
        grads["entities.re"] = de_re
        grads["entities.im"] = de_im
    return grads


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def ce_loss_and_grads(batch: Sequence[Triple], model: KgeModel) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy of the targets under full-entity softmax, with gradients."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    heads = np.fromiter((t.head for t in batch), dtype=np.intp, count=len(batch))
    rels = np.fromiter((t.rel for t in batch), dtype=np.intp, count=len(batch))
    tails = np.fromiter((t.tail for t in batch), dtype=np.intp, count=len(batch))

    scores, cache = model_scores(model, heads, rels)
    logp = log_softmax(scores, axis=1)
    nll = -logp[np.arange(len(batch)), tails]
    if not np.all(np.isfinite(nll)):
        bad = int(np.flatnonzero(~np.isfinite(nll))[0])
        raise NumericalError("non-finite cross-entropy", Triple(*batch[bad]))
    loss = float(nll.mean())

    d_scores = np.exp(logp)
    d_scores[np.arange(len(batch)), tails] -= 1.0
    d_scores /= len(batch)
    return loss, model_backward(model, cache, d_scores)


@dataclass
class OptimizerState:
    """Adam accumulators keyed like the parameter dict."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState
) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
