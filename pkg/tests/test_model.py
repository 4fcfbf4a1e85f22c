import numpy as np
import pytest

from kgdenoise import diffcore as dc
from kgdenoise import model as md
from kgdenoise.subgraph import LocalSubgraph, SemanticSubgraph


def all_pairs(n):
    return tuple((i, j) for i in range(n) for j in range(i + 1, n))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


class TestProjection:
    def test_zero_weights_broadcast_bias(self):
        tape = dc.Tape()
        x = tape.constant(np.random.default_rng(0).normal(size=(4, 3)))
        z = md.project_nodes(x, tape.constant(np.zeros((3, 2))),
                             tape.constant(np.array([1.0, -2.0])),
                             tape.constant(np.zeros((2, 2))),
                             tape.constant(np.array([0.5, 0.25])))
        assert np.allclose(z.data, [0.5, 0.25])

    def test_identity_configuration_reproduces_input(self):
        tape = dc.Tape()
        x_val = np.random.default_rng(1).normal(size=(5, 3))
        x = tape.constant(x_val)
        eye = tape.constant(np.eye(3))
        zero = tape.constant(np.zeros(3))
        z = md.project_nodes(x, eye, zero, eye, zero, activation="identity")
        assert np.allclose(z.data, x_val)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        x_val = rng.normal(size=(3, 4))
        params = [
            dc.Parameter("w1", rng.normal(size=(4, 3))),
            dc.Parameter("b1", rng.normal(size=3)),
            dc.Parameter("w2", rng.normal(size=(3, 3))),
            dc.Parameter("b2", rng.normal(size=3)),
        ]

        def loss():
            tape = dc.Tape()
            z = md.project_nodes(tape.constant(x_val), *[tape.leaf(p) for p in params])
            return dc.sum_axis(dc.mul(z, z))

        report = dc.grad_check(loss, params)
        assert report.max_rel_error < 1e-4


class TestReliability:
    def test_mlp_zero_dot_gives_half(self):
        tape = dc.Tape()
        z = tape.constant(np.array([[1.0, 0.0], [0.0, 1.0]]))
        pi = md.reliability(z, [(0, 1)], "mlp")
        assert abs(pi.data[0] - 0.5) < 1e-15

    def test_mlp_log3_dot_gives_three_quarters(self):
        tape = dc.Tape()
        z = tape.constant(np.array([[np.log(3.0), 0.0], [1.0, 5.0]]))
        pi = md.reliability(z, [(0, 1)], "mlp")
        assert abs(pi.data[0] - 0.75) < 1e-12

    def test_cosine_identical_rows_give_one(self):
        tape = dc.Tape()
        x = tape.constant(np.array([[0.3, -0.4], [0.3, -0.4]]))
        pi = md.reliability(x, [(0, 1)], "cosine")
        assert abs(pi.data[0] - 1.0) < 1e-12

    def test_attention_matches_manual_score(self):
        rng = np.random.default_rng(7)
        z_val = rng.normal(size=(4, 3))
        a_val = rng.normal(size=(6, 1))
        tape = dc.Tape()
        pi = md.reliability(tape.constant(z_val), all_pairs(4), "attention",
                            attention_vector=tape.constant(a_val))
        for idx, (i, j) in enumerate(all_pairs(4)):
            want = sigmoid(np.concatenate([z_val[i], z_val[j]]) @ a_val[:, 0])
            assert abs(pi.data[idx] - want) < 1e-12

    def test_all_kinds_stay_in_unit_interval(self):
        rng = np.random.default_rng(8)
        z_val = rng.normal(size=(6, 4)) * 5
        pairs = all_pairs(6)
        for kind in md.ESTIMATOR_KINDS:
            tape = dc.Tape()
            kw = {}
            if kind == "attention":
                kw["attention_vector"] = tape.constant(rng.normal(size=(8, 1)))
            if kind == "weighted_cosine":
                kw["cosine_weights"] = tape.constant(rng.normal(size=4))
            pi = md.reliability(tape.constant(z_val), pairs, kind, **kw)
            assert (pi.data >= 0).all() and (pi.data <= 1).all()

    def test_cosine_kinds_symmetric_exactly(self):
        rng = np.random.default_rng(9)
        z_val = rng.normal(size=(5, 3))
        w_val = rng.normal(size=3)
        fwd = [(1, 3)]
        rev = [(3, 1)]
        for kind, kw in (("cosine", {}), ("weighted_cosine", {"w": w_val})):
            tape = dc.Tape()
            extra = {"cosine_weights": tape.constant(w_val)} if kw else {}
            a = md.reliability(tape.constant(z_val), fwd, kind, **extra)
            b = md.reliability(tape.constant(z_val), rev, kind, **extra)
            assert a.data[0] == b.data[0]

    def test_zero_row_into_cosine_raises(self):
        tape = dc.Tape()
        x = tape.constant(np.array([[0.0, 0.0], [1.0, 2.0]]))
        with pytest.raises(dc.DomainError):
            md.reliability(x, [(0, 1)], "cosine")


class TestConcreteRelax:
    def test_neutral_noise_unit_temperature_is_identity(self):
        tape = dc.Tape()
        grid = np.arange(1, 10) / 10.0
        pi = tape.constant(grid)
        out = md.concrete_relax(pi, np.full(9, 0.5), 1.0)
        assert np.max(np.abs(out.data - grid)) < 1e-12

    def test_half_is_fixed_point_for_any_temperature(self):
        for t in (0.1, 1.0, 7.0):
            tape = dc.Tape()
            out = md.concrete_relax(tape.constant(np.array([0.5])), [0.5], t)
            assert abs(out.data[0] - 0.5) < 1e-12

    def test_documented_example_point(self):
        # pi=0.8, eps=0.25, t=0.5 -> sigmoid(2 ln(4/3))
        tape = dc.Tape()
        out = md.concrete_relax(tape.constant(np.array([0.8])), [0.25], 0.5)
        want = sigmoid(2.0 * np.log(4.0 / 3.0))
        assert abs(out.data[0] - want) < 1e-12

    def test_strictly_monotone_in_pi(self):
        grid = np.linspace(0.01, 0.99, 99)
        for eps, t in ((0.3, 0.7), (0.5, 1.0), (0.9, 2.0)):
            tape = dc.Tape()
            out = md.concrete_relax(tape.constant(grid), np.full(99, eps), t)
            assert (np.diff(out.data) > 0).all()

    def test_extreme_pi_clamped_not_infinite(self):
        tape = dc.Tape()
        out = md.concrete_relax(tape.constant(np.array([0.0, 1.0])), [0.5, 0.5], 1.0)
        assert np.isfinite(out.data).all()

    def test_bad_eps_rejected(self):
        tape = dc.Tape()
        with pytest.raises(dc.DomainError):
            md.concrete_relax(tape.constant(np.array([0.5])), [0.0], 1.0)

    def test_gradient_matches_finite_differences(self):
        p = dc.Parameter("pi", np.array([0.2, 0.6, 0.9]))
        eps = np.array([0.3, 0.7, 0.5])

        def loss():
            tape = dc.Tape()
            return dc.sum_axis(md.concrete_relax(tape.leaf(p), eps, 0.8))

        assert dc.grad_check(loss, [p]).max_rel_error < 1e-6


class TestRefineAndAdjacency:
    def test_boundary_keeps_at_half(self):
        tape = dc.Tape()
        w = tape.constant(np.array([0.49, 0.5, 0.51]))
        kept, pairs = md.refine(w, [(0, 1), (0, 2), (1, 2)])
        assert kept.data.tolist() == [0.5, 0.51]
        assert pairs.tolist() == [[0, 2], [1, 2]]

    def test_all_below_threshold_leaves_self_loops_only(self):
        tape = dc.Tape()
        w = tape.constant(np.array([0.2, 0.3]))
        kept, pairs = md.refine(w, [(0, 1), (1, 2)])
        adj = md.weighted_adjacency(kept, pairs, 3)
        assert np.array_equal(adj.data, np.eye(3))

    def test_adjacency_symmetric_with_unit_diagonal(self):
        tape = dc.Tape()
        w = tape.constant(np.array([0.9, 0.6]))
        adj = md.weighted_adjacency(w, [(0, 1), (1, 2)], 3)
        assert np.allclose(adj.data, adj.data.T)
        assert np.allclose(np.diag(adj.data), 1.0)
        assert adj.data[0, 1] == pytest.approx(0.9)


def gcn_oracle(x, adj, weights):
    deg = adj.sum(axis=1)
    dinv = deg ** -0.5
    ahat = dinv[:, None] * adj * dinv[None, :]
    h = x
    for w in weights:
        h = np.maximum(ahat @ h @ w, 0.0)
    return h


class TestGcn:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(11)
        x_val = rng.normal(size=(5, 3))
        w_vals = [rng.normal(size=(3, 4)), rng.normal(size=(4, 4))]
        pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]
        wts = rng.random(5) * 0.5 + 0.5
        adj_val = np.eye(5)
        for (i, j), w in zip(pairs, wts):
            adj_val[i, j] += w
            adj_val[j, i] += w
        tape = dc.Tape()
        adj = md.weighted_adjacency(tape.constant(wts), pairs, 5)
        assert np.allclose(adj.data, adj_val)
        h = md.gcn_encode(tape.constant(x_val), adj,
                          [tape.constant(w) for w in w_vals])
        assert np.max(np.abs(h.data - gcn_oracle(x_val, adj_val, w_vals))) < 1e-9

    def test_zero_layers_passes_features_through(self):
        tape = dc.Tape()
        x_val = np.random.default_rng(1).normal(size=(4, 3))
        adj = md.weighted_adjacency(tape.constant(np.zeros(0)), np.zeros((0, 2)), 4)
        h = md.gcn_encode(tape.constant(x_val), adj, [])
        assert np.array_equal(h.data, x_val)

    def test_readout_is_permutation_invariant(self):
        rng = np.random.default_rng(13)
        x_val = rng.normal(size=(6, 3))
        w_val = rng.normal(size=(3, 4))
        b_val = rng.normal(size=4)
        perm = rng.permutation(6)
        tape = dc.Tape()
        a = md.mean_readout(tape.constant(x_val), tape.constant(w_val),
                            tape.constant(b_val))
        b = md.mean_readout(tape.constant(x_val[perm]), tape.constant(w_val),
                            tape.constant(b_val))
        assert np.max(np.abs(a.data - b.data)) < 1e-9

    def test_zero_layer_readout_closed_form(self):
        rng = np.random.default_rng(14)
        x_val = rng.normal(size=(3, 2))
        w_val = rng.normal(size=(2, 5))
        b_val = rng.normal(size=5)
        tape = dc.Tape()
        out = md.mean_readout(tape.constant(x_val), tape.constant(w_val),
                              tape.constant(b_val))
        want = np.maximum(x_val @ w_val + b_val, 0.0).mean(axis=0)
        assert np.allclose(out.data[0], want)


def rgnn_oracle(x, e, edges, rel_ws, gate_w, self_w):
    n = x.shape[0]
    d_out = rel_ws[0].shape[1]
    out = np.zeros((n, d_out))
    for s, r, t in edges:
        gate_in = np.concatenate([x[t], x[s], e[r]])
        alpha = sigmoid(gate_in @ gate_w[:, 0])
        out[t] += alpha * ((x[s] - e[r]) @ rel_ws[r])
    if self_w is not None:
        out += x @ self_w
    return out


class TestRgnn:
    def test_isolated_node_without_self_term_is_zero(self):
        tape = dc.Tape()
        x = tape.constant(np.random.default_rng(0).normal(size=(3, 2)))
        e = tape.constant(np.random.default_rng(1).normal(size=(1, 2)))
        out = md.rgnn_layer(x, e, [(0, 0, 1)], [tape.constant(np.eye(2))],
                            tape.constant(np.zeros((6, 1))))
        assert np.array_equal(out.data[2], np.zeros(2))

    def test_single_edge_neutral_gate_halves_message(self):
        x_val = np.array([[2.0, 0.0], [0.0, 3.0]])
        e_val = np.array([[1.0, 1.0]])
        tape = dc.Tape()
        out = md.rgnn_layer(tape.constant(x_val), tape.constant(e_val),
                            [(0, 0, 1)], [tape.constant(np.eye(2))],
                            tape.constant(np.zeros((6, 1))))
        assert np.allclose(out.data[1], 0.5 * (x_val[0] - e_val[0]))

    def test_matches_double_sum_oracle(self):
        rng = np.random.default_rng(21)
        x_val = rng.normal(size=(4, 3))
        e_val = rng.normal(size=(2, 3))
        edges = [(0, 0, 1), (2, 0, 1), (1, 1, 3), (3, 1, 0), (0, 1, 1)]
        rel_vals = [rng.normal(size=(3, 5)) for _ in range(2)]
        gate_val = rng.normal(size=(9, 1))
        self_val = rng.normal(size=(3, 5))
        tape = dc.Tape()
        out = md.rgnn_layer(tape.constant(x_val), tape.constant(e_val), edges,
                            [tape.constant(w) for w in rel_vals],
                            tape.constant(gate_val), tape.constant(self_val))
        want = rgnn_oracle(x_val, e_val, edges, rel_vals, gate_val, self_val)
        assert np.max(np.abs(out.data - want)) < 1e-9

    def test_unknown_relation_rejected(self):
        tape = dc.Tape()
        x = tape.constant(np.zeros((2, 2)))
        e = tape.constant(np.zeros((1, 2)))
        with pytest.raises(KeyError):
            md.rgnn_layer(x, e, [(0, 5, 1)], [tape.constant(np.eye(2))],
                          tape.constant(np.zeros((6, 1))))

    def test_edge_free_graph_reduces_to_self_chain(self):
        rng = np.random.default_rng(22)
        x_val = rng.normal(size=(3, 4))
        selfs = [rng.normal(size=(4, 4)), rng.normal(size=(4, 4))]
        tape = dc.Tape()
        x = tape.constant(x_val)
        e = tape.constant(rng.normal(size=(2, 4)))
        relmap = [tape.constant(rng.normal(size=(4, 4))) for _ in range(2)]
        rel_ws = [tape.constant(rng.normal(size=(4, 4))) for _ in range(2)]
        for l in range(2):
            x = md.rgnn_layer(x, e, np.zeros((0, 3)), rel_ws,
                              tape.constant(np.zeros((12, 1))),
                              tape.constant(selfs[l]))
            e = dc.matmul(e, relmap[l])
        assert np.max(np.abs(x.data - x_val @ selfs[0] @ selfs[1])) < 1e-9


class TestInfoNCE:
    def test_single_pair_is_exactly_zero(self):
        tape = dc.Tape()
        a = tape.constant(np.array([[1.0, 2.0]]))
        b = tape.constant(np.array([[0.5, -1.0]]))
        assert abs(float(md.infonce(a, b, 0.5).data)) < 1e-12

    def test_orthogonal_two_pair_closed_form(self):
        tape = dc.Tape()
        a = tape.constant(np.array([[1.0, 0.0], [0.0, 1.0]]))
        b = tape.constant(np.array([[1.0, 0.0], [0.0, 1.0]]))
        loss = float(md.infonce(a, b, 1.0).data)
        assert abs(loss - 0.31326) < 1e-5

    def test_common_permutation_invariance(self):
        rng = np.random.default_rng(31)
        a_val = rng.normal(size=(6, 4))
        b_val = rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        t1, t2 = dc.Tape(), dc.Tape()
        l1 = float(md.infonce(t1.constant(a_val), t1.constant(b_val), 0.5).data)
        l2 = float(md.infonce(t2.constant(a_val[perm]), t2.constant(b_val[perm]), 0.5).data)
        assert abs(l1 - l2) < 1e-9

    def test_never_negative(self):
        rng = np.random.default_rng(32)
        for _ in range(20):
            tape = dc.Tape()
            a = tape.constant(rng.normal(size=(5, 3)))
            b = tape.constant(rng.normal(size=(5, 3)))
            assert float(md.infonce(a, b, 0.7).data) >= 0.0

    def test_zero_norm_row_raises(self):
        tape = dc.Tape()
        a = tape.constant(np.array([[0.0, 0.0], [1.0, 0.0]]))
        b = tape.constant(np.ones((2, 2)))
        with pytest.raises(dc.DomainError):
            md.infonce(a, b, 0.5)


class TestHeadAndLosses:
    def test_zero_head_binary_is_half(self):
        tape = dc.Tape()
        h = tape.constant(np.random.default_rng(0).normal(size=(3, 4)))
        p = md.predict(h, tape.constant(np.zeros((4, 1))),
                       tape.constant(np.zeros(1)), "binary")
        assert np.allclose(p.data, 0.5)

    def test_zero_head_multiclass_is_uniform(self):
        tape = dc.Tape()
        h = tape.constant(np.random.default_rng(1).normal(size=(2, 4)))
        p = md.predict(h, tape.constant(np.zeros((4, 86))),
                       tape.constant(np.zeros(86)), "multi_class")
        assert np.allclose(p.data, 1.0 / 86.0)

    def test_multilabel_entries_inside_unit_interval(self):
        tape = dc.Tape()
        rng = np.random.default_rng(2)
        h = tape.constant(rng.normal(size=(4, 3)))
        p = md.predict(h, tape.constant(rng.normal(size=(3, 5))),
                       tape.constant(rng.normal(size=5)), "multi_label")
        assert ((p.data > 0) & (p.data < 1)).all()

    def test_uniform_multiclass_loss_is_log_class_count(self):
        tape = dc.Tape()
        p = tape.constant(np.full((3, 86), 1.0 / 86.0))
        loss = md.task_loss(p, [0, 40, 85], "multi_class")
        assert abs(float(loss.data) - np.log(86.0)) < 1e-12

    def test_perfect_prediction_zero_loss(self):
        tape = dc.Tape()
        p = tape.constant(np.array([[1.0], [0.0]]))
        loss = md.task_loss(p, [1, 0], "binary")
        assert abs(float(loss.data)) < 1e-9

    def test_coin_flip_binary_is_log_two(self):
        tape = dc.Tape()
        p = tape.constant(np.array([[0.5]]))
        loss = md.task_loss(p, [1], "binary")
        assert abs(float(loss.data) - np.log(2.0)) < 1e-12

    def test_confident_wrong_prediction_stays_finite(self):
        tape = dc.Tape()
        p = tape.constant(np.array([[1.0]]))
        loss = md.task_loss(p, [0], "binary")
        assert np.isfinite(float(loss.data))

    def test_multilabel_sums_class_terms(self):
        tape = dc.Tape()
        p_val = np.array([[0.9, 0.2, 0.5]])
        y = np.array([[1, 0, 1]])
        loss = md.task_loss(tape.constant(p_val), y, "multi_label")
        want = -(np.log(0.9) + np.log(0.8) + np.log(0.5))
        assert abs(float(loss.data) - want) < 1e-12

    def test_total_loss_arithmetic(self):
        tape = dc.Tape()
        t = tape.constant(np.array(1.0))
        m = tape.constant(np.array(2.0))
        assert float(md.total_loss(t, m, 0.1).data) == pytest.approx(1.2)
        assert md.total_loss(t, None, 0.1) is t

    def test_total_gradient_is_sum_of_part_gradients(self):
        rng = np.random.default_rng(41)
        p = dc.Parameter("w", rng.normal(size=(3, 2)))

        def parts(tape):
            w = tape.leaf(p)
            a = dc.sum_axis(dc.mul(w, w))
            b = dc.sum_axis(dc.sin(w))
            return a, b

        lam = 0.1
        tape = dc.Tape()
        a, b = parts(tape)
        dc.backward(tape, md.total_loss(a, b, lam))
        g_total = p.grad.copy()
        p.zero_grad()
        tape = dc.Tape()
        a, _ = parts(tape)
        dc.backward(tape, a)
        g_a = p.grad.copy()
        p.zero_grad()
        tape = dc.Tape()
        _, b = parts(tape)
        dc.backward(tape, b)
        g_b = p.grad.copy()
        assert np.max(np.abs(g_total - (g_a + lam * g_b))) < 1e-9


def tiny_instances(rng, n_entities=9, n_rel=2):
    feats = rng.normal(size=(n_entities, 4))
    rel_feats = rng.normal(size=(n_rel, 4))
    locs, sems = [], []
    for u, v in ((0, 1), (2, 3)):
        rest = [n for n in range(n_entities) if n not in (u, v)][:3]
        nodes = (u, v) + tuple(rest)
        obs = ((0, 2), (1, 3), (2, 4))
        loc = LocalSubgraph(nodes, obs, all_pairs(len(nodes)))
        sem_nodes = (u, v, rest[0])
        sem_edges = ((0, 0, 2), (2, 1, 1))
        sems.append(SemanticSubgraph(sem_nodes, ("a",) * 3, sem_edges))
        locs.append(loc)
    return feats, rel_feats, locs, sems


def tiny_model(rng, task_mode="binary", n_classes=1, **overrides):
    feats, rel_feats, locs, sems = tiny_instances(rng)
    kw = dict(in_dim=4, n_relations=2, hidden_dim=5, gcn_layers=2,
              rgnn_layers=2, task_mode=task_mode, n_classes=n_classes)
    kw.update(overrides)
    cfg = md.ModelConfig(**kw)
    return md.Model(cfg, feats, rel_feats, seed=3), locs, sems


class TestModelAssembly:
    def test_full_forward_produces_finite_losses(self):
        rng = np.random.default_rng(51)
        model, locs, sems = tiny_model(rng)
        tape = dc.Tape()
        out = model.batch_forward(tape, locs, sems, [1, 0], "train",
                                  rng=np.random.default_rng(0))
        assert np.isfinite(float(out["total"].data))
        assert out["probs"].shape == (2, 1)
        dc.backward(tape, out["total"])

    def test_eval_mode_is_bitwise_deterministic(self):
        rng = np.random.default_rng(52)
        model, locs, sems = tiny_model(rng)
        outs = []
        for _ in range(2):
            tape = dc.Tape()
            outs.append(model.batch_forward(tape, locs, sems, [1, 0], "eval"))
        assert outs[0]["probs"].tobytes() == outs[1]["probs"].tobytes()
        assert float(outs[0]["total"].data) == float(outs[1]["total"].data)

    def test_eval_keeps_exactly_pi_above_half(self):
        rng = np.random.default_rng(53)
        model, locs, sems = tiny_model(rng)
        tape = dc.Tape()
        _, _, aux = model.encode(tape, locs[0], sems[0], "eval")
        pairs = np.asarray(locs[0].candidate_pairs)
        want = {tuple(map(int, q)) for q, keep in zip(pairs, aux["pi"] >= 0.5) if keep}
        assert set(aux["kept_pairs"]) == want

    def test_srl_ablation_uses_observed_edges_verbatim(self):
        rng = np.random.default_rng(54)
        model, locs, sems = tiny_model(rng, ablate_srl=True)
        assert not any(k.startswith(("proj.", "est.")) for k in model.params)
        tape = dc.Tape()
        _, _, aux = model.encode(tape, locs[0], sems[0], "train",
                                 rng=np.random.default_rng(0))
        assert aux["kept_pairs"] == [tuple(q) for q in locs[0].observed_edges]

    def test_ssp_ablation_drops_semantic_branch(self):
        rng = np.random.default_rng(55)
        model, locs, sems = tiny_model(rng, ablate_ssp=True)
        assert not any(k.startswith(("rgnn.", "readout_sem.")) for k in model.params)
        assert model.params["head.weight"].value.shape[0] == 5
        tape = dc.Tape()
        out = model.batch_forward(tape, locs, None, [1, 0], "train",
                                  rng=np.random.default_rng(0))
        assert out["mi"] is None

    def test_mi_ablation_skips_contrastive_term(self):
        rng = np.random.default_rng(56)
        model, locs, sems = tiny_model(rng, ablate_mi=True)
        tape = dc.Tape()
        out = model.batch_forward(tape, locs, sems, [1, 0], "train",
                                  rng=np.random.default_rng(0))
        assert out["mi"] is None
        assert out["total"] is out["task"]

    def test_multiclass_probabilities_sum_to_one(self):
        rng = np.random.default_rng(57)
        model, locs, sems = tiny_model(rng, task_mode="multi_class", n_classes=4)
        tape = dc.Tape()
        out = model.batch_forward(tape, locs, sems, [2, 0], "eval")
        assert np.allclose(out["probs"].sum(axis=1), 1.0)

    def test_gradcheck_end_to_end(self):
        rng = np.random.default_rng(58)
        model, locs, sems = tiny_model(rng, hidden_dim=3, gcn_layers=1,
                                       rgnn_layers=1)
        labels = [1, 0]
        eps_rng = np.random.default_rng(0)
        eps_list = None
        for attempt in range(60):
            trial = [eps_rng.random(len(l.candidate_pairs)) for l in locs]
            tape = dc.Tape()
            out = model.batch_forward(tape, locs, sems, labels, "train",
                                      eps_list=trial)
            margins = [np.min(np.abs(a["relaxed"] - 0.5)) for a in out["aux"]]
            if min(margins) > 0.02:
                eps_list = trial
                break
        assert eps_list is not None, "no safe noise draw found"

        def loss():
            tape = dc.Tape()
            return model.batch_forward(tape, locs, sems, labels, "train",
                                       eps_list=eps_list)["total"]

        report = dc.grad_check(loss, model.param_list())
        assert report.max_rel_error < 1e-4, report.worst_param

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(59)
        model, locs, sems = tiny_model(rng)
        path = tmp_path / "model.ckpt"
        model.save_params(path)
        other, _, _ = tiny_model(np.random.default_rng(60))
        for p in other.params.values():
            p.value = p.value + 1.0
        other.load_params(path)
        for name, p in model.params.items():
            assert np.array_equal(other.params[name].value, p.value)

    def test_load_rejects_mismatched_names(self, tmp_path):
        rng = np.random.default_rng(61)
        model, _, _ = tiny_model(rng)
        path = tmp_path / "model.ckpt"
        model.save_params(path)
        other, _, _ = tiny_model(np.random.default_rng(62), ablate_ssp=True)
        with pytest.raises(ValueError):
            other.load_params(path)
