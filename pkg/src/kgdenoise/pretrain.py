"""Rotation-based embedding pretraining over a knowledge graph.

Entities live in complex space, stored as interleaved (real, imag) column
pairs. Each relation is a vector of phase angles; applying a relation
rotates every complex coordinate of the head, and a triple's score is the
L2 distance between the rotated head and the tail (lower is better).
Relation vectors have unit modulus by construction since they are built
from cos/sin of the stored phases.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .kgstore import KnowledgeGraph, SamplingError, Triple


@dataclass
class EmbeddingTable:
    """entities: (n, 2*dim) interleaved re/im; phases: (n_rel, dim) in (-pi, pi]."""

    entities: np.ndarray
    phases: np.ndarray

    @property
    def n_entities(self) -> int:
        return self.entities.shape[0]

    @property
    def n_relations(self) -> int:
        return self.phases.shape[0]

    @property
    def dim(self) -> int:
        return self.phases.shape[1]

    def relation_vectors(self) -> np.ndarray:
        """(n_rel, 2*dim) unit-modulus rotation vectors, interleaved re/im."""
        out = np.empty((self.phases.shape[0], 2 * self.phases.shape[1]),
                       dtype=self.entities.dtype)
        out[:, 0::2] = np.cos(self.phases)
        out[:, 1::2] = np.sin(self.phases)
        return out

    def save(self, path) -> None:
        dc.save_checkpoint(path, {
            "embed.entities": self.entities,
            "embed.phases": self.phases,
        })

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        arrays = dc.load_checkpoint(path)
        try:
            return cls(arrays["embed.entities"], arrays["embed.phases"])
        except KeyError as exc:
            raise ValueError(f"not an embedding checkpoint: missing {exc}") from exc


@dataclass
class PretrainConfig:
    dim: int = 32
    epochs: int = 150
    lr: float = 0.05
    margin: float = 2.0
    negatives: int = 4
    batch_size: int = 256
    seed: int = 0
    precision: str = "f32"              # f32 | f64
    optimizer: str = "adam"             # adam | sgd
    self_adversarial: bool = False
    self_adv_alpha: float = 1.0
    fixed_negatives: bool = False       # draw negatives once and reuse every epoch


def _dtype(precision: str):
    if precision == "f32":
        return np.float32
    if precision == "f64":
        return np.float64
    raise ValueError(f"unknown precision {precision!r}")


def init_table(kg: KnowledgeGraph, dim: int, seed: int, precision: str = "f32") -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    dt = _dtype(precision)
    entities = rng.normal(scale=0.5, size=(kg.n_entities, 2 * dim)).astype(dt)
    phases = rng.uniform(-np.pi, np.pi, size=(kg.n_relations, dim)).astype(dt)
    return EmbeddingTable(entities, _wrap_phases(phases))


def _wrap_phases(phases: np.ndarray) -> np.ndarray:
    wrapped = np.remainder(phases + np.pi, 2.0 * np.pi) - np.pi
    wrapped[wrapped <= -np.pi] += 2.0 * np.pi  # land in (-pi, pi]
    return wrapped


def rotate_scores(table: EmbeddingTable, heads, relations, tails) -> np.ndarray:
    """Batch score: || rotate(head, relation) - tail ||_2 over 2*dim reals."""
    h = table.entities[np.asarray(heads, dtype=np.intp)]
    t = table.entities[np.asarray(tails, dtype=np.intp)]
    th = table.phases[np.asarray(relations, dtype=np.intp)]
    h_re, h_im = h[:, 0::2], h[:, 1::2]
    c, s = np.cos(th), np.sin(th)
    d_re = h_re * c - h_im * s - t[:, 0::2]
    d_im = h_re * s + h_im * c - t[:, 1::2]
    return np.sqrt(np.square(d_re).sum(axis=1) + np.square(d_im).sum(axis=1))


def rotate_score(table: EmbeddingTable, head: int, relation: int, tail: int) -> float:
    if not (0 <= head < table.n_entities and 0 <= tail < table.n_entities):
        raise KeyError(f"entity id out of range: {head if head >= table.n_entities else tail}")
    if not (0 <= relation < table.n_relations):
        raise KeyError(f"relation id out of range: {relation}")
    return float(rotate_scores(table, [head], [relation], [tail])[0])


def _taped_scores(tape, ent_leaf, phase_leaf, heads, rels, tails):
    h = dc.take_rows(ent_leaf, heads)
    t = dc.take_rows(ent_leaf, tails)
    th = dc.take_rows(phase_leaf, rels)
    c, s = dc.cos(th), dc.sin(th)
    h_re, h_im = dc.even_cols(h), dc.odd_cols(h)
    rot_re = dc.sub(dc.mul(h_re, c), dc.mul(h_im, s))
    rot_im = dc.add(dc.mul(h_re, s), dc.mul(h_im, c))
    resid = dc.interleave_cols(dc.sub(rot_re, dc.even_cols(t)),
                               dc.sub(rot_im, dc.odd_cols(t)))
    return dc.l2norm_axis(resid, axis=1)


def _draw_negatives(rng, kg: KnowledgeGraph, triple: Triple, n: int) -> list:
    """Corrupt head or tail (uniform coin per draw); results absent from kg."""
    out = []
    attempts = 0
    limit = 200 * n + 1000
    n_ent = kg.n_entities
    while len(out) < n and attempts < limit:
        attempts += 1
        e = int(rng.integers(n_ent))
        if rng.random() < 0.5:
            cand = (e, triple.relation, triple.tail)
        else:
            cand = (triple.head, triple.relation, e)
        if cand[0] == cand[1 + 1]:
            continue
        if cand in kg.triple_set:
            continue
        out.append(Triple(*cand))
    if len(out) < n:
        pool = []
        for e in range(n_ent):
            if e != triple.tail and (e, triple.relation, triple.tail) not in kg.triple_set:
                pool.append(Triple(e, triple.relation, triple.tail))
            if e != triple.head and (triple.head, triple.relation, e) not in kg.triple_set:
                pool.append(Triple(triple.head, triple.relation, e))
        if not pool:
            raise SamplingError(
                f"negative_sample: no corruption of ({triple.head},{triple.relation},"
                f"{triple.tail}) leaves the known triple set"
            )
        while len(out) < n:
            out.append(pool[int(rng.integers(len(pool)))])
    return out


def negative_sample(triple: Triple, kg: KnowledgeGraph, n: int, seed: int) -> list:
    return _draw_negatives(np.random.default_rng(seed), kg, triple, n)


def pretrain(kg: KnowledgeGraph, config: PretrainConfig):
    """Margin ranking training; returns (EmbeddingTable, per-epoch loss history).

    Phases are re-wrapped into (-pi, pi] after every optimizer step. With
    epochs=0 the seeded initial table is returned untouched.
    """
    if kg.n_entities == 0 or len(kg.triples) == 0:
        raise ValueError("pretrain: graph has no triples")
    dt = _dtype(config.precision)
    table = init_table(kg, config.dim, config.seed, config.precision)
    history: list = []
    if config.epochs == 0:
        return table, history

    ent = dc.Parameter("embed.entities", table.entities)
    phase = dc.Parameter("embed.phases", table.phases)
    if config.optimizer == "adam":
        opt = dc.Adam([ent, phase], lr=config.lr)
    elif config.optimizer == "sgd":
        opt = dc.SGD([ent, phase], lr=config.lr)
    else:
        raise ValueError(f"unknown optimizer {config.optimizer!r}")

    rng = np.random.default_rng(config.seed + 1)
    heads = np.array([t.head for t in kg.triples], dtype=np.intp)
    rels = np.array([t.relation for t in kg.triples], dtype=np.intp)
    tails = np.array([t.tail for t in kg.triples], dtype=np.intp)
    n_triples = len(kg.triples)
    n_neg = config.negatives

    frozen = None
    if config.fixed_negatives:
        frozen = np.empty((n_triples, n_neg, 3), dtype=np.intp)
        for ti in range(n_triples):
            for col, neg in enumerate(_draw_negatives(rng, kg, kg.triples[ti], n_neg)):
                frozen[ti, col] = (neg.head, neg.relation, neg.tail)

    for epoch in range(config.epochs):
        perm = rng.permutation(n_triples)
        total = 0.0
        for start in range(0, n_triples, config.batch_size):
            idx = perm[start:start + config.batch_size]
            b = idx.size
            if frozen is not None:
                neg_h = frozen[idx, :, 0]
                neg_r = frozen[idx, :, 1]
                neg_t = frozen[idx, :, 2]
            else:
                neg_h = np.empty((b, n_neg), dtype=np.intp)
                neg_r = np.empty((b, n_neg), dtype=np.intp)
                neg_t = np.empty((b, n_neg), dtype=np.intp)
                for row, ti in enumerate(idx):
                    for col, neg in enumerate(_draw_negatives(rng, kg, kg.triples[ti], n_neg)):
                        neg_h[row, col] = neg.head
                        neg_r[row, col] = neg.relation
                        neg_t[row, col] = neg.tail

            tape = dc.Tape(dtype=dt)
            e_leaf, p_leaf = tape.leaf(ent), tape.leaf(phase)
            s_pos = _taped_scores(tape, e_leaf, p_leaf, heads[idx], rels[idx], tails[idx])
            s_neg = _taped_scores(tape, e_leaf, p_leaf,
                                  neg_h.reshape(-1), neg_r.reshape(-1), neg_t.reshape(-1))
            s_neg = dc.reshape(s_neg, (b, n_neg))
            hinge = dc.relu(dc.add(dc.sub(dc.reshape(s_pos, (b, 1)), s_neg),
                                   float(config.margin)))
            if config.self_adversarial:
                # harder negatives (lower score) get larger, detached weights
                logits = -config.self_adv_alpha * s_neg.data
                shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
                w = shifted / shifted.sum(axis=1, keepdims=True)
                per_pos = dc.sum_axis(dc.mul(hinge, w.astype(dt)), axis=1)
            else:
                per_pos = dc.mean_axis(hinge, axis=1)
            loss = dc.mean_axis(per_pos)
            dc.backward(tape, loss)
            opt.step()
            opt.zero_grad()
            phase.value[...] = _wrap_phases(phase.value)
            total += float(loss.data) * b
        history.append(total / n_triples)
    return EmbeddingTable(ent.value, phase.value), history
