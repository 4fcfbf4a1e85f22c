"""Planted community benchmark.

The generator builds a typed drug/gene/disease graph whose entities are
split round-robin into communities. Edges of every relation are dense
inside a community and sparse across communities, so the ground truth
for a (drug, gene) pair is its community agreement: same community means
interacting, different community means non-interacting. The task links
themselves stay out of the triple set, which keeps the benchmark honest
for enclosing-subgraph methods. Real datasets flow through the same TSV
interfaces; this module only fills the desk-scale gap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import os

import numpy as np

from . import kgstore as ks
from . import subgraph as sg

RELATION_CLASSES = {
    "drug_gene_bind": "interaction",
    "gene_gene_up": "positive",
    "gene_gene_down": "negative",
    "drug_disease_treat": "positive",
    "gene_disease_link": "interaction",
}

# The benchmark's key metapaths over smoothed relations: one binding hop,
# then one regulation hop that stays inside a gene community. These carry
# the planted community signal. Longer chains are omitted on purpose: each
# extra hop fans out across the gene pool, so random scheme-conformant junk
# completes them far more often than it completes a single concentrated hop.
KEY_METAPATH_LINES = (
    "drug\tinteraction;positive\tgene",
    "drug\tinteraction;negative\tgene",
)


@dataclass
class SyntheticConfig:
    n_drugs: int = 36
    n_genes: int = 72
    n_diseases: int = 24
    n_communities: int = 6
    gene_gene_intra: float = 0.6
    gene_gene_inter: float = 0.004
    drug_gene_intra: float = 0.65
    drug_gene_inter: float = 0.005
    gene_disease_intra: float = 0.25
    gene_disease_inter: float = 0.003
    drug_disease_intra: float = 0.15
    drug_disease_inter: float = 0.002
    n_links: int = 160
    seed: int = 0

    def __post_init__(self):
        if min(self.n_drugs, self.n_genes, self.n_diseases) < self.n_communities:
            raise ValueError("every type needs at least one entity per community")
        if self.n_communities < 2:
            raise ValueError("need at least two communities")
        if self.n_links < 2 or self.n_links % 2:
            raise ValueError("n_links must be an even count >= 2")
        for name in ("gene_gene", "drug_gene", "gene_disease", "drug_disease"):
            intra = getattr(self, name + "_intra")
            inter = getattr(self, name + "_inter")
            if not (0 <= inter <= intra <= 1):
                raise ValueError(f"{name}: need 0 <= inter <= intra <= 1")


@dataclass
class Benchmark:
    kg: ks.KnowledgeGraph
    links: ks.LinkDataset
    smoothing: ks.SmoothingMap
    head_type: str
    tail_type: str
    communities: dict = field(repr=False, default_factory=dict)
    metapaths: tuple = ()


def _names(cfg):
    drugs = [f"D{i}" for i in range(cfg.n_drugs)]
    genes = [f"G{i}" for i in range(cfg.n_genes)]
    diseases = [f"S{i}" for i in range(cfg.n_diseases)]
    return drugs, genes, diseases


def generate(cfg: SyntheticConfig) -> Benchmark:
    rng = np.random.default_rng(cfg.seed)
    drugs, genes, diseases = _names(cfg)
    names = drugs + genes + diseases
    types = (["drug"] * cfg.n_drugs + ["gene"] * cfg.n_genes
             + ["disease"] * cfg.n_diseases)
    ids = {n: i for i, n in enumerate(names)}
    com = {ids[n]: i % cfg.n_communities
           for group in (drugs, genes, diseases)
           for i, n in enumerate(group)}
    relations = list(RELATION_CLASSES)
    rel_id = {r: i for i, r in enumerate(relations)}

    triples = []

    def wire(heads, tails, relation, p_intra, p_inter, skip_same=False):
        for h in heads:
            hi = ids[h]
            for t in tails:
                ti = ids[t]
                if hi == ti or (skip_same and h >= t):
                    continue
                p = p_intra if com[hi] == com[ti] else p_inter
                if rng.random() < p:
                    triples.append(ks.Triple(hi, rel_id[relation], ti))

    # gene regulation: one directed edge per unordered pair, sign by coin
    for a in range(cfg.n_genes):
        for b in range(a + 1, cfg.n_genes):
            ga, gb = ids[genes[a]], ids[genes[b]]
            p = cfg.gene_gene_intra if com[ga] == com[gb] else cfg.gene_gene_inter
            if rng.random() < p:
                rel = "gene_gene_up" if rng.random() < 0.5 else "gene_gene_down"
                if rng.random() < 0.5:
                    ga, gb = gb, ga
                triples.append(ks.Triple(ga, rel_id[rel], gb))
    wire(drugs, genes, "drug_gene_bind", cfg.drug_gene_intra, cfg.drug_gene_inter)
    wire(genes, diseases, "gene_disease_link", cfg.gene_disease_intra,
         cfg.gene_disease_inter)
    wire(drugs, diseases, "drug_disease_treat", cfg.drug_disease_intra,
         cfg.drug_disease_inter)

    kg = ks.KnowledgeGraph(names, types, relations, triples)

    same, cross = [], []
    for d in drugs:
        for g in genes:
            pair = (ids[d], ids[g])
            (same if com[pair[0]] == com[pair[1]] else cross).append(pair)
    half = cfg.n_links // 2
    if half > len(same) or half > len(cross):
        raise ValueError("n_links exceeds the available pair population")
    pos_pick = rng.choice(len(same), size=half, replace=False)
    neg_pick = rng.choice(len(cross), size=half, replace=False)
    examples = []
    for idx in sorted(pos_pick):
        examples.append(ks.LinkExample(same[idx][0], same[idx][1], 1))
    for idx in sorted(neg_pick):
        examples.append(ks.LinkExample(cross[idx][0], cross[idx][1], 0))
    links = ks.LinkDataset("binary", ("0", "1"), tuple(examples))

    smoothing = ks.SmoothingMap(dict(RELATION_CLASSES), "strict")
    metapaths = tuple(sg.parse_metapaths(KEY_METAPATH_LINES,
                                         ks.smooth_relations(kg, smoothing)))
    return Benchmark(kg, links, smoothing, "drug", "gene", com, metapaths)


def smoothing_tsv(smoothing: ks.SmoothingMap) -> str:
    lines = [f"{rel}\t{cls}" for rel, cls in sorted(smoothing.mapping.items())]
    return "\n".join(lines) + "\n"


def metapaths_tsv() -> str:
    return "\n".join(KEY_METAPATH_LINES) + "\n"


def write_benchmark(out_dir: str, cfg: SyntheticConfig) -> dict:
    """Materialize the benchmark as the TSV files the CLI consumes."""
    bench = generate(cfg)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "triples": os.path.join(out_dir, "triples.tsv"),
        "types": os.path.join(out_dir, "types.tsv"),
        "links": os.path.join(out_dir, "links.tsv"),
        "smoothing": os.path.join(out_dir, "smoothing.tsv"),
        "metapaths": os.path.join(out_dir, "metapaths.tsv"),
    }
    with open(paths["triples"], "w") as fh:
        fh.write(bench.kg.to_triples_tsv())
    with open(paths["types"], "w") as fh:
        fh.write(bench.kg.to_types_tsv())
    with open(paths["links"], "w") as fh:
        fh.write(ks.links_to_tsv(bench.links, bench.kg))
    with open(paths["smoothing"], "w") as fh:
        fh.write(smoothing_tsv(bench.smoothing))
    with open(paths["metapaths"], "w") as fh:
        fh.write(metapaths_tsv())
    return paths
