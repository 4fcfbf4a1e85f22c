import numpy as np
import pytest

from kgdenoise import kgstore as ks
from kgdenoise import pretrain as pt


def cycle_kg(n=4):
    lines = [f"e{i}\tnext\te{(i + 1) % n}" for i in range(n)]
    return ks.parse_triples(lines)


def make_table(rng, n_ent, n_rel, dim, dtype=np.float64):
    ent = rng.normal(size=(n_ent, 2 * dim)).astype(dtype)
    ph = rng.uniform(-np.pi, np.pi, size=(n_rel, dim)).astype(dtype)
    return pt.EmbeddingTable(ent, ph)


class TestRotateScore:
    def test_identity_rotation_of_self(self):
        # zero phases rotate nothing: score(h, r, h) = 0
        ent = np.array([[1.0, 2.0, -0.5, 0.25]])
        table = pt.EmbeddingTable(ent, np.zeros((1, 2)))
        assert pt.rotate_score(table, 0, 0, 0) == 0.0

    def test_quarter_turn(self):
        # head = 1+0i, phase pi/2 -> i; distance to tail 1+0i is sqrt(2)
        ent = np.array([[1.0, 0.0], [1.0, 0.0]])
        table = pt.EmbeddingTable(ent, np.array([[np.pi / 2]]))
        got = pt.rotate_score(table, 0, 0, 1)
        np.testing.assert_allclose(got, np.sqrt(2.0), atol=1e-12)

    def test_quarter_turn_to_i_is_zero(self):
        ent = np.array([[1.0, 0.0], [0.0, 1.0]])
        table = pt.EmbeddingTable(ent, np.array([[np.pi / 2]]))
        np.testing.assert_allclose(pt.rotate_score(table, 0, 0, 1), 0.0, atol=1e-12)

    def test_unknown_ids_raise(self):
        table = make_table(np.random.default_rng(0), 3, 2, 4)
        with pytest.raises(KeyError):
            pt.rotate_score(table, 5, 0, 1)
        with pytest.raises(KeyError):
            pt.rotate_score(table, 0, 9, 1)

    def test_global_rotation_invariance(self):
        rng = np.random.default_rng(42)
        table = make_table(rng, 8, 3, 6)
        psi = rng.uniform(-np.pi, np.pi)
        re, im = table.entities[:, 0::2], table.entities[:, 1::2]
        rot = np.empty_like(table.entities)
        rot[:, 0::2] = re * np.cos(psi) - im * np.sin(psi)
        rot[:, 1::2] = re * np.sin(psi) + im * np.cos(psi)
        rotated = pt.EmbeddingTable(rot, table.phases)
        heads = rng.integers(0, 8, size=30)
        tails = rng.integers(0, 8, size=30)
        rels = rng.integers(0, 3, size=30)
        a = pt.rotate_scores(table, heads, rels, tails)
        b = pt.rotate_scores(rotated, heads, rels, tails)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_relation_vectors_unit_modulus(self):
        table = make_table(np.random.default_rng(1), 4, 5, 7)
        vec = table.relation_vectors()
        mod = np.sqrt(vec[:, 0::2] ** 2 + vec[:, 1::2] ** 2)
        np.testing.assert_allclose(mod, 1.0, atol=1e-12)


class TestNegativeSample:
    def test_membership_and_count(self):
        kg = cycle_kg(6)
        triple = kg.triples[0]
        negs = pt.negative_sample(triple, kg, 10, seed=3)
        assert len(negs) == 10
        for n in negs:
            assert (n.head, n.relation, n.tail) not in kg.triple_set
            assert n.head != n.tail
            # exactly one endpoint replaced
            assert (n.head == triple.head) or (n.tail == triple.tail)

    def test_deterministic(self):
        kg = cycle_kg(6)
        a = pt.negative_sample(kg.triples[1], kg, 5, seed=9)
        b = pt.negative_sample(kg.triples[1], kg, 5, seed=9)
        assert a == b

    def test_exhausted_pool_errors(self):
        # two entities, relation fully saturated in both directions
        kg = ks.parse_triples(["a\tr\tb", "b\tr\ta"])
        with pytest.raises(ks.SamplingError):
            pt.negative_sample(kg.triples[0], kg, 1, seed=0)


class TestPretrain:
    def test_zero_epochs_returns_seeded_init(self):
        kg = cycle_kg(5)
        cfg = pt.PretrainConfig(dim=4, epochs=0, seed=12)
        table, history = pt.pretrain(kg, cfg)
        init = pt.init_table(kg, 4, 12, "f32")
        assert history == []
        np.testing.assert_array_equal(table.entities, init.entities)
        np.testing.assert_array_equal(table.phases, init.phases)

    def test_deterministic_same_seed(self):
        kg = cycle_kg(6)
        cfg = pt.PretrainConfig(dim=4, epochs=8, seed=5)
        t1, h1 = pt.pretrain(kg, cfg)
        t2, h2 = pt.pretrain(kg, cfg)
        assert h1 == h2
        assert t1.entities.tobytes() == t2.entities.tobytes()
        assert t1.phases.tobytes() == t2.phases.tobytes()

    def test_phases_stay_wrapped_and_unit_modulus(self):
        kg = cycle_kg(6)
        cfg = pt.PretrainConfig(dim=4, epochs=12, lr=0.2, seed=2)
        table, _ = pt.pretrain(kg, cfg)
        assert (table.phases > -np.pi).all() and (table.phases <= np.pi).all()
        vec = table.relation_vectors()
        mod = np.sqrt(vec[:, 0::2] ** 2 + vec[:, 1::2] ** 2)
        np.testing.assert_allclose(mod, 1.0, atol=1e-6)

    def test_positive_scores_beat_random_negatives(self):
        kg = cycle_kg(4)
        cfg = pt.PretrainConfig(dim=8, epochs=200, lr=0.1, seed=7, precision="f64")
        table, history = pt.pretrain(kg, cfg)
        heads = [t.head for t in kg.triples]
        rels = [t.relation for t in kg.triples]
        tails = [t.tail for t in kg.triples]
        pos_mean = pt.rotate_scores(table, heads, rels, tails).mean()
        rng = np.random.default_rng(0)
        neg = []
        while len(neg) < 100:
            h, t = int(rng.integers(4)), int(rng.integers(4))
            if h == t or (h, 0, t) in kg.triple_set:
                continue
            neg.append((h, 0, t))
        neg = np.array(neg)
        neg_mean = pt.rotate_scores(table, neg[:, 0], neg[:, 1], neg[:, 2]).mean()
        assert pos_mean < neg_mean

    def test_full_batch_loss_monotone_with_small_lr(self):
        kg = cycle_kg(5)
        cfg = pt.PretrainConfig(dim=4, epochs=30, lr=1e-3, seed=4, precision="f64",
                                optimizer="sgd", batch_size=64, fixed_negatives=True)
        _, history = pt.pretrain(kg, cfg)
        diffs = np.diff(np.asarray(history))
        assert (diffs <= 1e-6).all(), f"loss increased: {history}"

    def test_taped_loss_matches_direct_scores(self):
        kg = cycle_kg(6)
        cfg = pt.PretrainConfig(dim=4, epochs=1, seed=8, precision="f64")
        table, history = pt.pretrain(kg, cfg)
        assert len(history) == 1 and np.isfinite(history[0])

    def test_save_load_round_trip(self, tmp_path):
        table = make_table(np.random.default_rng(3), 5, 2, 4)
        path = tmp_path / "table.ckpt"
        table.save(path)
        back = pt.EmbeddingTable.load(path)
        np.testing.assert_array_equal(back.entities, table.entities)
        np.testing.assert_array_equal(back.phases, table.phases)
