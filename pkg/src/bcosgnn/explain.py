"""Exact contribution maps, node scoring, and the Integrated Gradients baseline.

A B-cos GNN's logits equal an input-dependent linear map applied to the
flattened node features. The map is recovered here by pulling class
covectors back through the network with every cosine scaling frozen at its
forward value: each step is an explicit vector-matrix product against the
per-layer dynamic weights, so the result is the composed dynamic-weight
matrix evaluated row by row. An independent, much slower path
(``layer_dynamic_matrices``) materializes the full per-node matrices layer
by layer and exists to cross-check the fast path.

Edge features (additive mode) enter aggregation as constant offsets. Their
downstream contribution is tracked per source node and folded into that
node's feature columns (proportional to the squared feature entries), so
contribution-map rows still sum exactly to the logits and node scores
credit the endpoints of informative bonds. Anything that cannot be folded
(a zero-feature source node) is reported in ``unattributed``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bcos, model as model_mod
from .graph import AttributedGraph
from .linalg import ContractViolation
from .model import ForwardTrace, GnnModel, UnsupportedVariantError, gin_forward

# Dynamic-weight composition materializes (n * p_k) x (n * p0) blocks in the
# verification path; refuse graphs above this size by default.
DEFAULT_MAX_NODES = 200


@dataclass
class ContributionMap:
    m: np.ndarray  # (c, n * p0), rows sum to logits up to `unattributed`
    logits: np.ndarray  # (c,)
    class_row: int  # predicted class (argmax logit)
    n: int
    feature_dim: int
    graph_ref: object = None
    unattributed: np.ndarray | None = None  # (c,) edge share with no foldable node


@dataclass
class NodeScores:
    s: np.ndarray  # (n,) per-node summed contributions
    ranking: np.ndarray  # node indices sorted by score desc, ties by index asc


@dataclass
class Explanation:
    selected: set[int]
    mode: str  # top_k | mass_fraction
    k: int | None = None
    fraction: float | None = None


def _check_size(g: AttributedGraph, max_nodes: int) -> None:
    if g.n > max_nodes:
        raise ContractViolation(
            f"graph has {g.n} nodes, above the explanation guard of {max_nodes}; "
            "raise max_nodes explicitly to override"
        )


def _frozen_pullback(model: GnnModel, trace: ForwardTrace):
    """Per-node rows of the composed dynamic-weight matrix, all classes at once.

    Returns (blocks, edge_T) where blocks[(i, r)] is the coefficient row of
    node i's initial features in logit r (shape (n, c, p0)), and edge_T[r, j]
    is the logit-r share contributed by edge offsets whose message source is
    node j (zeros unless additive edge mode).
    """
    cfg = model.config
    pack = trace.pack
    n = pack.num_nodes
    c = cfg.num_classes
    V = np.broadcast_to(np.eye(c), (n, c, c)).copy()
    V = bcos.mlp_pullback_rows(model.readout, trace.readout_cache, V)
    edge_T = np.zeros((c, n))
    for k in range(cfg.num_layers - 1, -1, -1):
        V = bcos.mlp_pullback_rows(model.update_mlps[k], trace.mlp_caches[k], V)
        eps_k = model.layer_eps(k)
        if trace.edge_embedded[k] is not None and pack.src.size:
            contrib = np.einsum("mcp,mp->mc", V[pack.dst], trace.edge_embedded[k])
            acc = np.zeros((n, c))
            np.add.at(acc, pack.src, contrib)
            edge_T += acc.T
        flat = V.reshape(n, -1)
        V = ((1.0 + eps_k) * flat + pack.A.T @ flat).reshape(n, c, -1)
    return V, edge_T


def _fold_edge_share(W: np.ndarray, edge_T: np.ndarray, x: np.ndarray):
    """Fold per-source-node edge shares into that node's feature columns.

    Distribution within a node is proportional to the squared feature
    entries, so (folded W) @ vec(x) re-creates the share exactly. Nodes with
    zero features cannot absorb their share; it is returned as a residual.
    """
    c = W.shape[0]
    n, p0 = x.shape
    folded = W.copy()
    residual = np.zeros(c)
    sq = x * x
    norms = sq.sum(axis=1)
    for j in np.flatnonzero(np.abs(edge_T).max(axis=0) > 0.0):
        if norms[j] > 0.0:
            folded[:, j * p0 : (j + 1) * p0] += np.outer(edge_T[:, j], x[j] / norms[j])
        else:
            residual += edge_T[:, j]
    return folded, residual


def dynamic_weights_graph(
    model: GnnModel, g: AttributedGraph, max_nodes: int = DEFAULT_MAX_NODES
) -> np.ndarray:
    """Composed dynamic-weight matrix W (c x n*p0) with logits == W @ vec(x)."""
    if model.config.variant != "bcos":
        raise UnsupportedVariantError("dynamic weights require the bcos variant")
    _check_size(g, max_nodes)
    trace = gin_forward(model, g)
    blocks, edge_T = _frozen_pullback(model, trace)
    n, c = g.n, model.config.num_classes
    W = blocks.transpose(1, 0, 2).reshape(c, n * g.feature_dim)
    W, _ = _fold_edge_share(W, edge_T, g.x)
    return W


def contribution_map(
    model: GnnModel, g: AttributedGraph, max_nodes: int = DEFAULT_MAX_NODES, graph_ref=None
) -> ContributionMap:
    """Element-wise product of the composed dynamic weights with the input."""
    if model.config.variant != "bcos":
        raise UnsupportedVariantError("contribution maps require the bcos variant")
    _check_size(g, max_nodes)
    trace = gin_forward(model, g)
    blocks, edge_T = _frozen_pullback(model, trace)
    n, p0 = g.x.shape
    c = model.config.num_classes
    W = blocks.transpose(1, 0, 2).reshape(c, n * p0)
    W, residual = _fold_edge_share(W, edge_T, g.x)
    m = W * g.x.reshape(-1)[None, :]
    logits = trace.logits[0]
    return ContributionMap(
        m=m, logits=logits, class_row=int(np.argmax(logits)), n=n, feature_dim=p0,
        graph_ref=graph_ref, unattributed=residual,
    )


def _rank_desc(s: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(s.shape[0]), -s))


def node_scores(cm: ContributionMap, class_row: int | None = None) -> NodeScores:
    """Per-node sums of one contribution row; ranking breaks ties by index."""
    r = cm.class_row if class_row is None else class_row
    if not 0 <= r < cm.m.shape[0]:
        raise ContractViolation(f"class row {r} out of range [0, {cm.m.shape[0]})")
    s = cm.m[r].reshape(cm.n, cm.feature_dim).sum(axis=1)
    return NodeScores(s=s, ranking=_rank_desc(s))


def top_k(ns: NodeScores, k: int) -> Explanation:
    n = ns.s.shape[0]
    if not 1 <= k <= n:
        raise ContractViolation(f"k={k} out of range [1, {n}]")
    return Explanation(selected=set(int(i) for i in ns.ranking[:k]), mode="top_k", k=k)


def mass_fraction(ns: NodeScores, fraction: float) -> Explanation:
    """Smallest prefix of the ranking whose positive mass reaches the target.

    Only positive contributions count toward the mass, and the fraction is
    measured against the total positive mass.
    """
    if not 0.0 < fraction <= 1.0:
        raise ContractViolation(f"fraction must be in (0, 1], got {fraction}")
    pos_total = float(np.clip(ns.s, 0.0, None).sum())
    selected: set[int] = set()
    acc = 0.0
    for i in ns.ranking:
        selected.add(int(i))
        acc += max(float(ns.s[i]), 0.0)
        if pos_total == 0.0 or acc >= fraction * pos_total - 1e-12:
            break
    return Explanation(selected=selected, mode="mass_fraction", fraction=fraction)


def ig_attribution(
    model: GnnModel, g: AttributedGraph, steps: int, class_row: int
) -> np.ndarray:
    """Midpoint-rule Integrated Gradients from a zero-feature baseline, (n, p0)."""
    if steps < 1:
        raise ContractViolation(f"steps must be >= 1, got {steps}")
    if not 0 <= class_row < model.config.num_classes:
        raise ContractViolation(f"class row {class_row} out of range")
    need_gather = model.config.variant == "relu" and model.config.edge_mode == "additive"
    pack = model_mod.pack_graphs([g], need_src_gather=need_gather)
    grad_sel = np.zeros((1, model.config.num_classes))
    grad_sel[0, class_row] = 1.0
    acc = np.zeros_like(g.x)
    base_X = pack.X.copy()
    for t in range(1, steps + 1):
        alpha = (t - 0.5) / steps
        pack.X = alpha * base_X
        trace = model_mod.forward_packed(model, pack)
        acc += model_mod.gin_backward(model, trace, grad_sel).grad_X
    pack.X = base_X
    return g.x * acc / steps


def integrated_gradients(
    model: GnnModel, g: AttributedGraph, steps: int = 50, class_row: int | None = None
) -> NodeScores:
    if class_row is None:
        trace = gin_forward(model, g)
        class_row = int(np.argmax(trace.logits[0]))
    attr = ig_attribution(model, g, steps, class_row)
    s = attr.sum(axis=1)
    return NodeScores(s=s, ranking=_rank_desc(s))


def layer_dynamic_matrices(model: GnnModel, g: AttributedGraph, max_nodes: int = DEFAULT_MAX_NODES):
    """Slow forward composition of the per-node dynamic matrices, per layer.

    Returns (trace, per_layer) where per_layer[k] = (W_k, off_k) with
    W_k of shape (n, p_k, n*p0) and off_k of shape (n, p_k, n) recording
    edge-offset shares by source node. Node embeddings satisfy
    x_i^(k) = W_k[i] @ vec(x) + off_k[i].sum(axis=1). This path exists to
    cross-check the pullback composition and the forward pass.
    """
    if model.config.variant != "bcos":
        raise UnsupportedVariantError("dynamic matrices require the bcos variant")
    _check_size(g, max_nodes)
    cfg = model.config
    trace = gin_forward(model, g)
    pack = trace.pack
    n, p0 = g.x.shape
    W = np.zeros((n, p0, n * p0))
    for i in range(n):
        W[i, :, i * p0 : (i + 1) * p0] = np.eye(p0)
    off = np.zeros((n, p0, n))
    per_layer = []
    for k in range(cfg.num_layers):
        eps_k = model.layer_eps(k)
        p_in = W.shape[1]
        Wz = ((1.0 + eps_k) * W.reshape(n, -1) + pack.A @ W.reshape(n, -1)).reshape(n, p_in, -1)
        offz = ((1.0 + eps_k) * off.reshape(n, -1) + pack.A @ off.reshape(n, -1)).reshape(n, p_in, n)
        if trace.edge_embedded[k] is not None:
            e_emb = trace.edge_embedded[k]
            for e in range(pack.src.shape[0]):
                offz[pack.dst[e], :, pack.src[e]] += e_emb[e]
        M = None
        for cache in trace.mlp_caches[k]:
            frozen = cache["D"][:, :, None] * cache["What"][None, :, :]
            M = frozen if M is None else frozen @ M
        W = M @ Wz
        off = M @ offz
        per_layer.append((W, off))
    return trace, per_layer


def compose_full_dynamic_weights(model: GnnModel, g: AttributedGraph, max_nodes: int = DEFAULT_MAX_NODES):
    """(W, edge_T, logits) from the slow block composition, including readout."""
    trace, per_layer = layer_dynamic_matrices(model, g, max_nodes=max_nodes)
    W_L, off_L = per_layer[-1]
    n = g.n
    c = model.config.num_classes
    Theta = None
    for cache in trace.readout_cache:
        frozen = cache["D"][:, :, None] * cache["What"][None, :, :]
        Theta = frozen if Theta is None else frozen @ Theta
    W_star = np.einsum("ncp,npq->cq", Theta, W_L)
    edge_T = np.einsum("ncp,npj->cj", Theta, off_L)
    return W_star, edge_T, trace.logits[0]


def explanation_to_json(
    graph_id, ns: NodeScores, expl: Explanation, logits: np.ndarray,
    predicted_class: int, jaccard: float | None = None,
) -> dict:
    doc: dict = {
        "graph_id": graph_id,
        "predicted_class": int(predicted_class),
        "logits": [float(v) for v in logits],
        "node_scores": [float(v) for v in ns.s],
        "selected_nodes": sorted(int(i) for i in expl.selected),
    }
    if jaccard is not None:
        doc["jaccard"] = float(jaccard)
    doc["mode"] = expl.mode
    return doc


def explanation_to_dot(g: AttributedGraph, ns: NodeScores, expl: Explanation) -> str:
    """DOT rendering: fill intensity ~ max(s, 0)/max(s), ground truth outlined."""
    smax = float(np.max(ns.s)) if ns.s.size else 0.0
    lines = ["graph explanation {", "  node [style=filled, shape=circle];"]
    for i in range(g.n):
        intensity = max(float(ns.s[i]), 0.0) / smax if smax > 0.0 else 0.0
        shade = int(round(255 * (1.0 - 0.85 * intensity)))
        fill = f"#ff{shade:02x}{shade:02x}"
        attrs = [f'fillcolor="{fill}"', f'label="{i}"']
        if g.gt_mask is not None and g.gt_mask[i]:
            attrs.append("penwidth=3")
            attrs.append('color="blue"')
        if i in expl.selected:
            attrs.append('shape="doublecircle"')
        lines.append(f"  {i} [{', '.join(attrs)}];")
    seen = set()
    for i, j in g.edges:
        key = (min(int(i), int(j)), max(int(i), int(j)))
        if key not in seen:
            seen.add(key)
            lines.append(f"  {key[0]} -- {key[1]};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def permute_graph(g: AttributedGraph, perm: np.ndarray) -> AttributedGraph:
    """Relabel nodes so new index perm[i] hosts old node i (test helper)."""
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(g.n)
    return AttributedGraph(
        n=g.n,
        x=g.x[inv],
        edges=perm[g.edges] if g.edges.size else g.edges,
        label=g.label,
        edge_attr=g.edge_attr,
        gt_mask=g.gt_mask[inv] if g.gt_mask is not None else None,
    )
