import numpy as np
import pytest

from kgdenoise import kgstore as ks


def random_kg(rng, n_entities=30, n_relations=4, n_triples=80, n_types=3):
    names = [f"e{i}" for i in range(n_entities)]
    types = [f"t{rng.integers(n_types)}" for _ in range(n_entities)]
    rels = [f"r{i}" for i in range(n_relations)]
    triples = []
    seen = set()
    while len(triples) < n_triples:
        h = int(rng.integers(n_entities))
        t = int(rng.integers(n_entities))
        if h == t:
            continue
        r = int(rng.integers(n_relations))
        if (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        triples.append(ks.Triple(h, r, t))
    return ks.KnowledgeGraph(names, types, rels, triples)


class TestParse:
    def test_duplicates_collapse(self):
        text = ["a\tr\tb", "b\tr\tc", "a\tr\tb"]
        kg = ks.parse_triples(text)
        assert len(kg.triples) == 2
        assert kg.entity_names == ("a", "b", "c")

    def test_empty_input(self):
        kg = ks.parse_triples([])
        assert kg.n_entities == 0
        assert len(kg.triples) == 0

    def test_malformed_line_reports_number(self):
        with pytest.raises(ks.ParseError, match="line 2"):
            ks.parse_triples(["a\tr\tb", "broken line"])

    def test_comments_and_inline_types(self):
        text = [
            "# plain comment",
            "#type\ta\tdrug",
            "# type\tb\tgene",
            "a\tr\tb",
        ]
        kg = ks.parse_triples(text)
        assert kg.entity_type(kg.entity_ids["a"]) == "drug"
        assert kg.entity_type(kg.entity_ids["b"]) == "gene"

    def test_separate_types_stream_pins_order(self):
        kg = ks.parse_triples(["b\tr\ta"], types_lines=["a\tdrug", "b\tgene", "c\tgene"])
        assert kg.entity_names == ("a", "b", "c")  # isolated c survives
        assert kg.entity_types == ("drug", "gene", "gene")

    def test_conflicting_types_raise(self):
        with pytest.raises(ks.ConflictError):
            ks.parse_triples(["#type\ta\tdrug", "#type\ta\tgene", "a\tr\tb"])

    def test_self_loop_rejected_unless_reflexive(self):
        with pytest.raises(ks.ParseError):
            ks.parse_triples(["a\tr\ta"])
        kg = ks.parse_triples(["a\tr\ta"], reflexive_relations=("r",))
        assert len(kg.triples) == 1

    def test_round_trip_1000_lines(self):
        rng = np.random.default_rng(17)
        kg = random_kg(rng, n_entities=120, n_relations=7, n_triples=1000)
        back = ks.parse_triples(
            kg.to_triples_tsv().splitlines(), types_lines=kg.to_types_tsv().splitlines()
        )
        assert back == kg
        back.validate()

    def test_index_rescan_on_random_graphs(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            random_kg(rng).validate()


class TestSmoothing:
    def test_direct_rewrite(self):
        kg = ks.parse_triples(["a\tbind\tb", "b\tup\tc"])
        sm = ks.SmoothingMap({"bind": "interaction", "up": "positive"})
        out = ks.smooth_relations(kg, sm)
        assert out.relation_names[:3] == ("positive", "interaction", "negative")
        got = {
            (out.entity_names[t.head], out.relation_names[t.relation], out.entity_names[t.tail])
            for t in out.triples
        }
        assert got == {("a", "interaction", "b"), ("b", "positive", "c")}

    def test_merge_collapses_duplicates(self):
        kg = ks.parse_triples(["a\tr1\tb", "a\tr2\tb"])
        out = ks.smooth_relations(kg, ks.SmoothingMap({"r1": "positive", "r2": "positive"}))
        assert len(out.triples) == 1

    def test_injective_map_preserves_count(self):
        rng = np.random.default_rng(11)
        kg = random_kg(rng, n_relations=3)
        sm = ks.SmoothingMap({"r0": "positive", "r1": "interaction", "r2": "negative"})
        out = ks.smooth_relations(kg, sm)
        assert len(out.triples) == len(kg.triples)

    def test_policies(self):
        kg = ks.parse_triples(["a\tmapped\tb", "b\tother\tc"])
        sm_keep = ks.SmoothingMap({"mapped": "positive"}, policy="keep")
        out = ks.smooth_relations(kg, sm_keep)
        assert "other" in out.relation_names and len(out.triples) == 2
        sm_drop = ks.SmoothingMap({"mapped": "positive"}, policy="drop")
        out = ks.smooth_relations(kg, sm_drop)
        assert len(out.triples) == 1
        assert out.entity_names == kg.entity_names  # entities stay, even isolated
        with pytest.raises(ks.ConflictError, match="other"):
            ks.smooth_relations(kg, ks.SmoothingMap({"mapped": "positive"}, policy="strict"))

    def test_never_grows_and_entities_fixed(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            kg = random_kg(rng, n_relations=5)
            mapping = {
                f"r{i}": ("positive", "interaction", "negative")[i % 3] for i in range(3)
            }
            out = ks.smooth_relations(kg, ks.SmoothingMap(mapping, policy="keep"))
            assert len(out.triples) <= len(kg.triples)
            assert out.entity_names == kg.entity_names

    def test_parse_smoothing(self):
        sm = ks.parse_smoothing(["# comment", "bind\tinteraction", "up\tpositive"])
        assert sm.mapping == {"bind": "interaction", "up": "positive"}
        with pytest.raises(ks.ParseError):
            ks.parse_smoothing(["bind\tweird_class"])


class TestKFold:
    def _examples(self, n, n_classes=2):
        return [ks.LinkExample(i, i + 1000, i % n_classes) for i in range(n)]

    def test_partition_sizes(self):
        exs = self._examples(100)
        splits = ks.kfold_split(exs, k=10, seed=0)
        assert len(splits) == 10
        for s in splits:
            assert len(s.test) == 10
            keys = lambda part: {(e.head, e.tail, repr(e.label)) for e in part}
            assert not (keys(s.train) & keys(s.test))
            assert not (keys(s.train) & keys(s.valid))
            assert not (keys(s.valid) & keys(s.test))
            assert keys(s.train) | keys(s.valid) | keys(s.test) == keys(exs)

    def test_many_class_stratification(self):
        # 86 classes x 900 examples each: every train fold must contain all classes
        exs = self._examples(86 * 900, n_classes=86)
        splits = ks.kfold_split(exs, k=10, seed=3)
        for s in splits:
            assert len({e.label for e in s.train}) == 86

    def test_deterministic(self):
        exs = self._examples(60)
        a = ks.kfold_split(exs, k=5, seed=9)
        b = ks.kfold_split(exs, k=5, seed=9)
        assert a == b

    def test_small_class_errors(self):
        exs = self._examples(20) + [ks.LinkExample(999, 1, 7)]
        with pytest.raises(ValueError, match="7"):
            ks.kfold_split(exs, k=5, seed=0)


class TestNegativeSampling:
    def _kg(self, n=60):
        rng = np.random.default_rng(1)
        return random_kg(rng, n_entities=n)

    def test_balanced_counts_and_absence(self):
        kg = self._kg()
        rng = np.random.default_rng(2)
        tails = list(range(10, 60))
        positives = [ks.LinkExample(h, tails[int(rng.integers(50))], 1) for h in range(5) for _ in range(2)]
        positives = list({(p.head, p.tail): p for p in positives}.values())
        negs = ks.sample_negatives(positives, kg, "balanced_per_head", seed=4)
        assert len(negs) == len(positives)
        known = {(p.head, p.tail) for p in positives}
        pool = {p.tail for p in positives}
        per_head_pos = {}
        per_head_neg = {}
        for p in positives:
            per_head_pos[p.head] = per_head_pos.get(p.head, 0) + 1
        for n in negs:
            assert (n.head, n.tail) not in known
            assert n.tail in pool
            assert n.label == 0
            per_head_neg[n.head] = per_head_neg.get(n.head, 0) + 1
        assert per_head_neg == per_head_pos

    def test_forced_single_candidate(self):
        kg = self._kg(10)
        # head 0 covers tails 1..4 except 3 -> only candidate is 3
        positives = [ks.LinkExample(0, t, 1) for t in (1, 2, 4)] + [
            ks.LinkExample(1, 3, 1),
            ks.LinkExample(1, 1, 1),
            ks.LinkExample(1, 2, 1),
        ]
        negs = ks.sample_negatives([positives[0]] + positives[1:3] + [positives[3]], kg,
                                   "counterpart_per_positive", seed=0)
        head0 = [n for n in negs if n.head == 0]
        assert all(n.tail == 3 for n in head0)

    def test_deterministic(self):
        kg = self._kg()
        positives = [ks.LinkExample(h, 20 + (h * 3) % 30, 1) for h in range(8)]
        a = ks.sample_negatives(positives, kg, "counterpart_per_positive", seed=11)
        b = ks.sample_negatives(positives, kg, "counterpart_per_positive", seed=11)
        assert a == b

    def test_empty_pool_names_head(self):
        kg = self._kg(10)
        positives = [ks.LinkExample(0, 1, 1)]  # pool is {1}, all known for head 0
        with pytest.raises(ks.SamplingError, match="e0"):
            ks.sample_negatives(positives, kg, "balanced_per_head", seed=0)


class TestStructuralNoise:
    def test_ratio_zero_identity(self):
        kg = random_kg(np.random.default_rng(0))
        out = ks.inject_structural_noise(kg, 0.0, seed=1)
        assert out == kg

    def test_count_and_novelty(self):
        kg = random_kg(np.random.default_rng(1), n_triples=100)
        out = ks.inject_structural_noise(kg, 0.25, seed=2)
        assert len(out.triples) == 125
        added = set(out.triple_set) - set(kg.triple_set)
        assert len(added) == 25
        for h, r, t in added:
            assert h != t

    def test_membership_oracle_over_seeds(self):
        kg = random_kg(np.random.default_rng(3), n_entities=20, n_triples=50)
        existing = set(kg.triple_set)
        for seed in range(20):
            out = ks.inject_structural_noise(kg, 0.5, seed=seed)
            added = [
                (t.head, t.relation, t.tail)
                for t in out.triples
                if (t.head, t.relation, t.tail) not in existing
            ]
            assert len(added) == 25
            assert len(set(added)) == 25
            out.validate()

    def test_exhaustion_errors(self):
        kg = ks.parse_triples(["a\tr\tb", "b\tr\ta"])
        # space is 2 ordered pairs x 1 relation = 2, all taken
        with pytest.raises(ks.SamplingError):
            ks.inject_structural_noise(kg, 3.0, seed=0)

    def test_dense_fallback_exact(self):
        kg = ks.parse_triples(["a\tr\tb", "b\tr\tc", "c\tr\ta"])
        # 6 ordered pairs - 3 existing = 3 available; ask for all of them
        out = ks.inject_structural_noise(kg, 1.0, seed=5)
        assert len(out.triples) == 6


class TestSemanticNoise:
    def _typed_kg(self):
        lines = [
            "#type\td1\tdrug", "#type\td2\tdrug", "#type\td3\tdrug",
            "#type\tz1\tdisease", "#type\tz2\tdisease", "#type\tz3\tdisease",
            "#type\tg1\tgene", "#type\tg2\tgene",
            "d1\ttreats\tz1", "d2\ttreats\tz2",
            "g1\tlinks\tz1", "g2\tlinks\tz3",
        ]
        return ks.parse_triples(lines)

    def test_scheme_conformance(self):
        kg = self._typed_kg()
        schemes = {
            (kg.entity_types[t.head], t.relation, kg.entity_types[t.tail])
            for t in kg.triples
        }
        for seed in range(20):
            out = ks.inject_semantic_noise(kg, 1.0, seed=seed)
            added = [t for t in out.triples if (t.head, t.relation, t.tail) not in kg.triple_set]
            assert len(added) == 4
            for t in added:
                scheme = (out.entity_types[t.head], t.relation, out.entity_types[t.tail])
                assert scheme in schemes
            out.validate()

    def test_ratio_zero_identity(self):
        kg = self._typed_kg()
        assert ks.inject_semantic_noise(kg, 0.0, seed=9) == kg

    def test_treat_edges_only_drug_to_disease(self):
        kg = self._typed_kg()
        out = ks.inject_semantic_noise(kg, 2.0, seed=1)
        treats = kg.relation_ids["treats"]
        for t in out.triples:
            if t.relation == treats:
                assert out.entity_types[t.head] == "drug"
                assert out.entity_types[t.tail] == "disease"
