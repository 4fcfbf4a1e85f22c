"""Link-denoising network over paired subgraph views.

A candidate link is scored from two coordinated encodings:

* structural view: the enclosing local subgraph is re-weighted by a
  learned per-pair reliability estimate, discretized through a concrete
  (Gumbel-sigmoid) relaxation, then pooled by a weighted graph
  convolution stack with symmetric degree normalization;
* semantic view: metapath-matched relational paths are encoded by a
  relation-aware message passer with per-edge gates, whose relation
  embeddings advance through a learned map at every layer.

A contrastive agreement loss ties the two views together; a linear head
on their concatenation produces the link probability. All math runs on
the reverse-mode tape from diffcore, so analytic gradients are available
for every parameter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import DomainError, Parameter, ShapeError, Tape

ESTIMATOR_KINDS = ("attention", "mlp", "weighted_cosine", "cosine")
TASK_MODES = ("binary", "multi_class", "multi_label")

PROB_FLOOR = 1e-12      # probability clamp applied before any log
PI_CLAMP = 1e-6         # reliability clamp applied before the logit


@dataclass
class ModelConfig:
    in_dim: int
    n_relations: int
    hidden_dim: int = 64
    gcn_layers: int = 2
    rgnn_layers: int = 2
    estimator: str = "attention"
    srl_temperature: float = 1.0
    tau: float = 0.5
    mi_weight: float = 0.1
    rgnn_self_term: bool = True
    task_mode: str = "binary"
    n_classes: int = 1
    ablate_srl: bool = False
    ablate_ssp: bool = False
    ablate_mi: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.estimator!r}")
        if self.task_mode not in TASK_MODES:
            raise ValueError(f"unknown task mode {self.task_mode!r}")
        if self.in_dim < 1 or self.hidden_dim < 1:
            raise ValueError("feature widths must be positive")
        if self.gcn_layers < 0 or self.rgnn_layers < 0:
            raise ValueError("layer counts must be non-negative")
        if self.n_relations < 1:
            raise ValueError("need at least one relation")
        if self.tau <= 0 or self.srl_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if self.mi_weight < 0:
            raise ValueError("contrastive weight must be non-negative")
        if self.task_mode != "binary" and self.n_classes < 2:
            raise ValueError("multi-class tasks need n_classes >= 2")

    @property
    def head_out(self) -> int:
        return 1 if self.task_mode == "binary" else self.n_classes


# ---------------------------------------------------------------------------
# functional pieces (pure tensor in / tensor out)


def project_nodes(x, w1, b1, w2, b2, activation: str = "relu"):
    """Two-layer perceptron mapping node features to the estimator space."""
    h = dc.add(dc.matmul(x, w1), b1)
    if activation == "relu":
        h = dc.relu(h)
    elif activation != "identity":
        raise ValueError(f"unknown activation {activation!r}")
    return dc.add(dc.matmul(h, w2), b2)


def reliability(features, pairs, kind: str, attention_vector=None,
                cosine_weights=None):
    """Per-pair keep probabilities pi in [0, 1] over the given index pairs.

    features holds one row per node: the projected rows for the learned
    kinds, the raw pretrained rows for the parameter-free cosine kind.
    """
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    i, j = pairs[:, 0], pairs[:, 1]
    fi = dc.take_rows(features, i)
    fj = dc.take_rows(features, j)
    if kind == "mlp":
        return dc.sigmoid(dc.sum_axis(dc.mul(fi, fj), axis=1))
    if kind == "attention":
        if attention_vector is None:
            raise ValueError("attention kind needs its score vector")
        score = dc.matmul(dc.concat([fi, fj], axis=1), attention_vector)
        return dc.sigmoid(dc.reshape(score, (pairs.shape[0],)))
    if kind == "weighted_cosine":
        if cosine_weights is None:
            raise ValueError("weighted_cosine kind needs per-dimension weights")
        fi = dc.mul(fi, cosine_weights)
        fj = dc.mul(fj, cosine_weights)
        return dc.mul(dc.add(dc.cosine_similarity(fi, fj), 1.0), 0.5)
    if kind == "cosine":
        return dc.mul(dc.add(dc.cosine_similarity(fi, fj), 1.0), 0.5)
    raise ValueError(f"unknown estimator kind {kind!r}")


def concrete_relax(pi, eps, temperature: float):
    """Differentiable Bernoulli surrogate sigmoid((logit pi + logit eps)/t).

    pi is clamped away from {0,1} before the logit so the map stays
    finite. At eps=0.5, t=1 the output reproduces pi.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    eps = np.asarray(eps, dtype=float)
    if ((eps <= 0) | (eps >= 1)).any():
        raise DomainError("concrete_relax: eps must lie strictly inside (0,1)")
    p = dc.clip(pi, PI_CLAMP, 1.0 - PI_CLAMP)
    logit_p = dc.log(dc.div(p, dc.sub(1.0, p)))
    logit_e = np.log(eps / (1.0 - eps))
    return dc.sigmoid(dc.div(dc.add(logit_p, logit_e), temperature))


def refine(weights, pairs):
    """Threshold step: pairs with weight >= 0.5 survive, the rest drop.

    Returns (kept weight Tensor, kept pair array). Gradients flow through
    the surviving weights only; the selection itself is data.
    """
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    keep = np.nonzero(weights.data >= 0.5)[0]
    return dc.take_rows(weights, keep), pairs[keep]


def weighted_adjacency(weights, pairs, n_nodes: int):
    """Dense symmetric adjacency over unordered pairs, self-loops weight 1."""
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    adj = dc.symmetric_adjacency(weights, pairs[:, 0], pairs[:, 1], n_nodes)
    return dc.add(adj, weights.tape.constant(np.eye(n_nodes)))


def gcn_encode(x, adjacency, layer_weights):
    """Stack of weighted graph convolutions with symmetric normalization."""
    n = adjacency.data.shape[0]
    deg = dc.sum_axis(adjacency, axis=1)
    dinv = dc.powc(deg, -0.5)
    ahat = dc.mul(dc.mul(dc.reshape(dinv, (n, 1)), adjacency),
                  dc.reshape(dinv, (1, n)))
    h = x
    for w in layer_weights:
        h = dc.relu(dc.matmul(dc.matmul(ahat, h), w))
    return h


def mean_readout(h, weight, bias):
    """Subgraph embedding: mean over nodes of the rectified transform."""
    return dc.mean_axis(dc.relu(dc.add(dc.matmul(h, weight), bias)),
                        axis=0, keepdims=True)


def rgnn_layer(x, e, edges, rel_weights, gate_weight, self_weight=None):
    """One relation-aware message-passing step over directed typed edges.

    edges is an (m, 3) integer array with columns (src, relation, dst).
    Message along an edge: gate * W_rel (x_src - e_rel), gated by
    sigmoid(gate_weight @ [x_dst, x_src, e_rel]); messages sum into the
    destination. The optional self term adds self_weight applied to the
    node's own state. No activation is applied inside the layer.
    """
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 3)
    n = x.data.shape[0]
    n_rel = e.data.shape[0]
    if edges.shape[0] and edges[:, 1].max() >= n_rel:
        raise KeyError("rgnn_layer: edge uses a relation with no embedding")
    if len(rel_weights) < n_rel:
        raise ShapeError("rgnn_layer: need one weight per relation")
    if rel_weights:
        d_out = rel_weights[0].data.shape[1]
    elif self_weight is not None:
        d_out = self_weight.data.shape[1]
    else:
        raise ValueError("rgnn_layer: no weights supplied")
    out = None
    if edges.shape[0]:
        src, rel, dst = edges[:, 0], edges[:, 1], edges[:, 2]
        x_src = dc.take_rows(x, src)
        x_dst = dc.take_rows(x, dst)
        e_edge = dc.take_rows(e, rel)
        gate_in = dc.concat([x_dst, x_src, e_edge], axis=1)
        alpha = dc.sigmoid(dc.matmul(gate_in, gate_weight))
        phi = dc.sub(x_src, e_edge)
        for r in range(n_rel):
            idx = np.nonzero(rel == r)[0]
            if idx.size == 0:
                continue
            msg = dc.mul(dc.take_rows(alpha, idx),
                         dc.matmul(dc.take_rows(phi, idx), rel_weights[r]))
            agg = dc.segment_sum(msg, dst[idx], n)
            out = agg if out is None else dc.add(out, agg)
    if self_weight is not None:
        own = dc.matmul(x, self_weight)
        out = own if out is None else dc.add(out, own)
    if out is None:
        out = x.tape.constant(np.zeros((n, d_out)))
    return out


def infonce(h_a, h_b, tau: float):
    """Contrastive agreement over a batch: each row of h_a must pick its
    own row of h_b among all rows, under cosine similarity at temperature
    tau. Returns the batch-mean loss (non-negative, 0 for a single pair)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    b = h_a.data.shape[0]
    sims = dc.div(dc.cosine_matrix(h_a, h_b), tau)
    return dc.mean_axis(dc.softmax_cross_entropy(sims, np.arange(b)))


def predict(h, head_weight, head_bias, task_mode: str):
    """Probabilities from the concatenated view embedding."""
    logits = dc.add(dc.matmul(h, head_weight), head_bias)
    if task_mode == "multi_class":
        return dc.softmax(logits)
    if task_mode in ("binary", "multi_label"):
        return dc.sigmoid(logits)
    raise ValueError(f"unknown task mode {task_mode!r}")


def task_loss(probs, labels, task_mode: str):
    """Cross-entropy against probabilities, clamped at 1e-12 before log."""
    b, c = probs.data.shape
    if task_mode == "multi_class":
        y = np.asarray(labels, dtype=np.intp)
        if y.shape != (b,):
            raise ShapeError("task_loss: one class index per row required")
        if y.size and (y.min() < 0 or y.max() >= c):
            raise ValueError("task_loss: class index out of range")
        onehot = np.zeros((b, c))
        onehot[np.arange(b), y] = 1.0
        picked = dc.mul(dc.log(dc.clip(probs, PROB_FLOOR, 1.0)), probs.tape.constant(onehot))
        return dc.mean_axis(-dc.sum_axis(picked, axis=1))
    y = np.asarray(labels, dtype=float)
    if task_mode == "binary":
        y = y.reshape(-1, 1)
    if y.shape != (b, c):
        raise ShapeError("task_loss: label matrix must match probability shape")
    log_p = dc.log(dc.clip(probs, PROB_FLOOR, 1.0))
    log_not = dc.log(dc.clip(dc.sub(1.0, probs), PROB_FLOOR, 1.0))
    yt = probs.tape.constant(y)
    per = dc.add(dc.mul(yt, log_p), dc.mul(dc.sub(1.0, yt), log_not))
    return dc.mean_axis(-dc.sum_axis(per, axis=1))


def total_loss(task, contrastive, weight: float):
    if contrastive is None:
        return task
    return dc.add(task, dc.mul(contrastive, weight))


# ---------------------------------------------------------------------------
# the assembled model


def _dense(rng, rows: int, cols: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(max(rows, 1)), size=(rows, cols))


class Model:
    """Parameter container plus the full two-view forward pass.

    Entity and relation features come from pretraining and stay frozen;
    everything the constructor registers in self.params is trainable.
    """

    def __init__(self, cfg: ModelConfig, entity_features, relation_features,
                 seed: int = 0):
        self.cfg = cfg
        self.entity_features = np.asarray(entity_features, dtype=np.float64)
        if self.entity_features.ndim != 2 or self.entity_features.shape[1] != cfg.in_dim:
            raise ShapeError("entity feature width must equal cfg.in_dim")
        self.relation_features = np.asarray(relation_features, dtype=np.float64)
        if not cfg.ablate_ssp:
            if self.relation_features.shape != (cfg.n_relations, cfg.in_dim):
                raise ShapeError("relation features must be (n_relations, in_dim)")
        rng = np.random.default_rng(seed)
        d = cfg.hidden_dim
        p: dict = {}

        def par(name, value):
            p[name] = Parameter(name, value)

        if not cfg.ablate_srl and cfg.estimator != "cosine":
            par("proj.w1", _dense(rng, cfg.in_dim, d))
            par("proj.b1", np.zeros(d))
            par("proj.w2", _dense(rng, d, d))
            par("proj.b2", np.zeros(d))
            if cfg.estimator == "attention":
                par("est.attention", _dense(rng, 2 * d, 1))
            elif cfg.estimator == "weighted_cosine":
                par("est.cosine_weights", np.ones(d))
        width = cfg.in_dim
        for l in range(cfg.gcn_layers):
            par(f"gcn.{l}.weight", _dense(rng, width, d))
            width = d
        par("readout_sub.weight", _dense(rng, width, d))
        par("readout_sub.bias", np.full(d, 0.1))
        if not cfg.ablate_ssp:
            width = cfg.in_dim
            for l in range(cfg.rgnn_layers):
                for r in range(cfg.n_relations):
                    par(f"rgnn.{l}.rel.{r}.weight", _dense(rng, width, d))
                par(f"rgnn.{l}.gate.weight", _dense(rng, 3 * width, 1))
                if cfg.rgnn_self_term:
                    par(f"rgnn.{l}.self.weight", _dense(rng, width, d))
                par(f"rgnn.{l}.relmap.weight", _dense(rng, width, d))
                width = d
            par("readout_sem.weight", _dense(rng, width, d))
            par("readout_sem.bias", np.full(d, 0.1))
        head_in = d if cfg.ablate_ssp else 2 * d
        par("head.weight", _dense(rng, head_in, cfg.head_out))
        par("head.bias", np.zeros(cfg.head_out))
        self.params = p

    def param_list(self):
        return [self.params[k] for k in self.params]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def leaves(self, tape: Tape) -> dict:
        return {name: tape.leaf(p) for name, p in self.params.items()}

    # -- forward ----------------------------------------------------------

    def encode(self, tape: Tape, local, sem, mode: str, lv=None, eps=None,
               rng=None):
        """Encode one link: returns (h_sub, h_sem or None, aux).

        mode="train" draws (or accepts) per-pair noise for the relaxation;
        mode="eval" uses the reliability values directly, so the pass is
        deterministic. aux carries the reliability numbers and the kept
        pair list for inspection.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        cfg = self.cfg
        if lv is None:
            lv = self.leaves(tape)
        nodes = np.asarray(local.nodes, dtype=np.intp)
        x_loc = tape.constant(self.entity_features[nodes])
        n = nodes.shape[0]
        aux: dict = {}
        if cfg.ablate_srl:
            pairs = np.asarray(local.observed_edges, dtype=np.intp).reshape(-1, 2)
            w = tape.constant(np.ones(pairs.shape[0]))
            aux["pi"] = None
            aux["kept_pairs"] = [tuple(map(int, q)) for q in pairs]
        else:
            pairs = np.asarray(local.candidate_pairs, dtype=np.intp).reshape(-1, 2)
            if cfg.estimator == "cosine":
                pi = reliability(x_loc, pairs, "cosine")
            else:
                z = project_nodes(x_loc, lv["proj.w1"], lv["proj.b1"],
                                  lv["proj.w2"], lv["proj.b2"])
                pi = reliability(
                    z, pairs, cfg.estimator,
                    attention_vector=lv.get("est.attention"),
                    cosine_weights=lv.get("est.cosine_weights"),
                )
            if mode == "train":
                if eps is None:
                    if rng is None:
                        raise ValueError("train mode needs rng or explicit eps")
                    eps = rng.random(pairs.shape[0])
                eps = np.clip(np.asarray(eps, dtype=float), PI_CLAMP, 1.0 - PI_CLAMP)
                w = concrete_relax(pi, eps, cfg.srl_temperature)
            else:
                w = pi
            aux["pi"] = pi.data.copy()
            aux["relaxed"] = w.data.copy()
            w, pairs = refine(w, pairs)
            aux["kept_pairs"] = [tuple(map(int, q)) for q in pairs]
        adj = weighted_adjacency(w, pairs, n)
        h = gcn_encode(x_loc, adj,
                       [lv[f"gcn.{l}.weight"] for l in range(cfg.gcn_layers)])
        h_sub = mean_readout(h, lv["readout_sub.weight"], lv["readout_sub.bias"])
        if cfg.ablate_ssp:
            return h_sub, None, aux
        sem_nodes = np.asarray(sem.nodes, dtype=np.intp)
        x = tape.constant(self.entity_features[sem_nodes])
        e = tape.constant(self.relation_features)
        edges = np.asarray(sem.edges, dtype=np.intp).reshape(-1, 3)
        for l in range(cfg.rgnn_layers):
            rel_ws = [lv[f"rgnn.{l}.rel.{r}.weight"] for r in range(cfg.n_relations)]
            self_w = lv[f"rgnn.{l}.self.weight"] if cfg.rgnn_self_term else None
            x_new = rgnn_layer(x, e, edges, rel_ws, lv[f"rgnn.{l}.gate.weight"], self_w)
            e = dc.matmul(e, lv[f"rgnn.{l}.relmap.weight"])
            x = x_new
        h_sem = mean_readout(x, lv["readout_sem.weight"], lv["readout_sem.bias"])
        return h_sub, h_sem, aux

    def batch_forward(self, tape: Tape, local_subs, sem_subs, labels,
                      mode: str, rng=None, eps_list=None):
        """Full pass over a batch of links.

        Returns a dict with "probs" (ndarray), "aux" (per link), and when
        labels are given the loss tensors "total", "task", "mi".
        """
        cfg = self.cfg
        lv = self.leaves(tape)
        subs, sems = [], []
        auxes = []
        for idx in range(len(local_subs)):
            eps = None if eps_list is None else eps_list[idx]
            sem = None if sem_subs is None else sem_subs[idx]
            h_sub, h_sem, aux = self.encode(tape, local_subs[idx], sem, mode,
                                            lv=lv, eps=eps, rng=rng)
            subs.append(h_sub)
            auxes.append(aux)
            if h_sem is not None:
                sems.append(h_sem)
        h_sub_batch = subs[0] if len(subs) == 1 else dc.concat(subs, axis=0)
        if cfg.ablate_ssp:
            joint = h_sub_batch
            h_sem_batch = None
        else:
            h_sem_batch = sems[0] if len(sems) == 1 else dc.concat(sems, axis=0)
            joint = dc.concat([h_sub_batch, h_sem_batch], axis=1)
        probs = predict(joint, lv["head.weight"], lv["head.bias"], cfg.task_mode)
        out = {"probs": probs.data.copy(), "aux": auxes}
        if labels is not None:
            task = task_loss(probs, labels, cfg.task_mode)
            mi = None
            if not cfg.ablate_mi and h_sem_batch is not None:
                mi = infonce(h_sub_batch, h_sem_batch, cfg.tau)
            out["task"] = task
            out["mi"] = mi
            out["total"] = total_loss(task, mi, cfg.mi_weight)
        return out

    # -- persistence -------------------------------------------------------

    def save_params(self, path):
        dc.save_checkpoint(path, {name: p.value for name, p in self.params.items()})

    def load_params(self, path):
        stored = dc.load_checkpoint(path)
        if set(stored) != set(self.params):
            raise ValueError("checkpoint parameter names do not match this model")
        for name, p in self.params.items():
            if stored[name].shape != p.value.shape:
                raise ShapeError(f"checkpoint shape mismatch for {name}")
            p.value = stored[name].astype(np.float64)
