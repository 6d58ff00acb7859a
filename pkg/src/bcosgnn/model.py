"""GIN / GINE models with sum aggregation and readout-then-aggregate.

Two variants share the aggregation skeleton

    z_i = (1 + eps) * x_i + sum_{j in N(i)} (x_j [+ e_ji])
    x_i' = Psi(z_i),            logits = sum_i Theta(x_i^(L)),

differing in what Psi / Theta are: stacks of alignment-scaled (B-cos)
transforms, or conventional affine+ReLU MLPs with biases. Edge features in
additive mode are mapped to the layer input width by a trainable constant
linear map per layer; the ReLU variant additionally applies ReLU(x_j + e_ji)
during message construction.

Graphs are processed as packed batches (disjoint unions) with sparse
aggregation operators, so a mini-batch and a single graph run through the
same code path. Forward passes record everything needed for the manual
backward pass and for composing dynamic weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import bcos
from .bcos import BcosMlp, init_mlp
from .graph import AttributedGraph
from .linalg import ContractViolation, Rng

CHECKPOINT_VERSION = "bcosgnn-ckpt-1"


class UnsupportedVariantError(ContractViolation):
    """Operation requires the B-cos variant but got something else."""


@dataclass
class GinConfig:
    num_layers: int
    hidden: int
    num_classes: int
    input_dim: int
    b: float = 2.0
    epsilon: float = 0.0
    variant: str = "bcos"  # bcos | relu
    edge_mode: str = "none"  # none | additive
    edge_input_dim: int | None = None
    update_depth: int = 2
    readout_depth: int = 3
    dropout: float = 0.0
    task: str = "graph"  # graph | node

    def __post_init__(self):
        if self.variant not in ("bcos", "relu"):
            raise ContractViolation(f"unknown variant {self.variant!r}")
        if self.edge_mode not in ("none", "additive"):
            raise ContractViolation(f"unknown edge_mode {self.edge_mode!r}")
        if self.edge_mode == "additive" and not self.edge_input_dim:
            raise ContractViolation("additive edge mode requires edge_input_dim")
        if self.task not in ("graph", "node"):
            raise ContractViolation(f"unknown task {self.task!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation("dropout must be in [0, 1)")

    def to_json(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden": self.hidden,
            "num_classes": self.num_classes,
            "input_dim": self.input_dim,
            "b": float(self.b),
            "epsilon": float(self.epsilon),
            "variant": self.variant,
            "edge_mode": self.edge_mode,
            "edge_input_dim": self.edge_input_dim,
            "update_depth": self.update_depth,
            "readout_depth": self.readout_depth,
            "dropout": float(self.dropout),
            "task": self.task,
        }

    @staticmethod
    def from_json(doc: dict) -> "GinConfig":
        return GinConfig(**doc)


@dataclass
class ReluMlp:
    """Affine + ReLU stack with biases; no activation after the last layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]


def init_relu_mlp(dims: list[int], rng: Rng) -> ReluMlp:
    weights, biases = [], []
    for i in range(len(dims) - 1):
        a = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
        weights.append(rng.generator.uniform(-a, a, size=(dims[i + 1], dims[i])))
        biases.append(np.zeros(dims[i + 1]))
    return ReluMlp(weights=weights, biases=biases)


def relu_mlp_forward(mlp: ReluMlp, X: np.ndarray):
    """Row-wise forward; caches layer inputs and pre-activations."""
    if X.shape[1] != mlp.in_dim:
        raise ContractViolation(f"input dim {X.shape[1]} != mlp in_dim {mlp.in_dim}")
    inputs, pres = [], []
    h = X
    last = len(mlp.weights) - 1
    for i, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(h)
        z = h @ W.T + b
        pres.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, {"inputs": inputs, "pres": pres}


def relu_mlp_backward(mlp: ReluMlp, cache: dict, G: np.ndarray):
    grad_W: list[np.ndarray] = [None] * len(mlp.weights)  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * len(mlp.weights)  # type: ignore[list-item]
    g = G
    last = len(mlp.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * (cache["pres"][i] > 0.0)
        grad_W[i] = g.T @ cache["inputs"][i]
        grad_b[i] = g.sum(axis=0)
        g = g @ mlp.weights[i]
    return g, grad_W, grad_b


@dataclass
class PackedGraphs:
    """Disjoint union of graphs with precomputed sparse operators."""

    X: np.ndarray  # (N, p0)
    src: np.ndarray  # (M,) edge sources, node indices offset per graph
    dst: np.ndarray  # (M,)
    edge_attr: np.ndarray | None  # (M, pe)
    A: sparse.csr_matrix  # (N, N), A[i, j] = multiplicity of edge (j, i)
    S_in: sparse.csr_matrix  # (N, M) incoming-edge incidence
    G_src: sparse.csr_matrix | None  # (M, N) source gather, built for relu+additive
    pool: sparse.csr_matrix  # (num_graphs, N) graph membership
    sizes: list[int]
    offsets: list[int]

    @property
    def num_nodes(self) -> int:
        return self.X.shape[0]

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)


def pack_graphs(graphs: list[AttributedGraph], need_src_gather: bool = False) -> PackedGraphs:
    sizes = [g.n for g in graphs]
    offsets = list(np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)) if graphs else [0]
    N = int(sum(sizes))
    X = np.concatenate([g.x for g in graphs], axis=0) if graphs else np.zeros((0, 0))
    src_parts, dst_parts, attr_parts = [], [], []
    for g, off in zip(graphs, offsets):
        if g.num_edges:
            src_parts.append(g.edges[:, 0] + off)
            dst_parts.append(g.edges[:, 1] + off)
            if g.edge_attr is not None:
                attr_parts.append(g.edge_attr)
    src = np.concatenate(src_parts) if src_parts else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.zeros(0, dtype=np.int64)
    edge_attr = np.concatenate(attr_parts, axis=0) if attr_parts else None
    M = src.shape[0]
    ones = np.ones(M)
    A = sparse.csr_matrix((ones, (dst, src)), shape=(N, N))
    S_in = sparse.csr_matrix((ones, (dst, np.arange(M))), shape=(N, M))
    G_src = None
    if need_src_gather:
        G_src = sparse.csr_matrix((ones, (np.arange(M), src)), shape=(M, N))
    node_graph = np.repeat(np.arange(len(graphs)), sizes)
    pool = sparse.csr_matrix((np.ones(N), (node_graph, np.arange(N))), shape=(len(graphs), N))
    return PackedGraphs(
        X=X, src=src, dst=dst, edge_attr=edge_attr, A=A, S_in=S_in, G_src=G_src,
        pool=pool, sizes=sizes, offsets=offsets,
    )


@dataclass
class GnnModel:
    config: GinConfig
    update_mlps: list  # BcosMlp or ReluMlp per layer
    readout: object  # BcosMlp or ReluMlp
    edge_embeds: list[np.ndarray] | None = None  # per layer (layer_in_dim, pe)
    eps: np.ndarray | None = None  # (L,) trainable, relu variant only
    version: int = 0

    def bump_version(self) -> None:
        self.version += 1

    def layer_eps(self, k: int) -> float:
        if self.eps is not None:
            return float(self.eps[k])
        return self.config.epsilon

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Flat (name, array) list; ordering is the training contract."""
        params: list[tuple[str, np.ndarray]] = []
        for k, mlp in enumerate(self.update_mlps):
            if isinstance(mlp, BcosMlp):
                for i, layer in enumerate(mlp.layers):
                    params.append((f"update{k}.layer{i}.W", layer.W))
            else:
                for i, (W, bvec) in enumerate(zip(mlp.weights, mlp.biases)):
                    params.append((f"update{k}.layer{i}.W", W))
                    params.append((f"update{k}.layer{i}.b", bvec))
        if isinstance(self.readout, BcosMlp):
            for i, layer in enumerate(self.readout.layers):
                params.append((f"readout.layer{i}.W", layer.W))
        else:
            for i, (W, bvec) in enumerate(zip(self.readout.weights, self.readout.biases)):
                params.append((f"readout.layer{i}.W", W))
                params.append((f"readout.layer{i}.b", bvec))
        if self.edge_embeds is not None:
            for k, W in enumerate(self.edge_embeds):
                params.append((f"edge_embed{k}.W", W))
        if self.eps is not None:
            params.append(("eps", self.eps))
        return params

    def check_weight_floor(self) -> None:
        """B-cos weight rows must stay above the norm floor after updates."""
        if self.config.variant != "bcos":
            return
        for k, mlp in enumerate(self.update_mlps):
            for i, layer in enumerate(mlp.layers):
                try:
                    bcos.check_row_norm_floor(layer.W)
                except ContractViolation as exc:
                    raise ContractViolation(f"update mlp {k}, sublayer {i}: {exc}") from exc
        for i, layer in enumerate(self.readout.layers):
            try:
                bcos.check_row_norm_floor(layer.W)
            except ContractViolation as exc:
                raise ContractViolation(f"readout sublayer {i}: {exc}") from exc


def _mlp_dims(in_dim: int, hidden: int, out_dim: int, depth: int) -> list[int]:
    return [in_dim] + [hidden] * (depth - 1) + [out_dim]


def init_model(config: GinConfig, rng: Rng) -> GnnModel:
    update_mlps = []
    layer_in = config.input_dim
    for k in range(config.num_layers):
        dims = _mlp_dims(layer_in, config.hidden, config.hidden, config.update_depth)
        if config.variant == "bcos":
            update_mlps.append(init_mlp(dims, config.b, rng.derive(1, k)))
        else:
            update_mlps.append(init_relu_mlp(dims, rng.derive(1, k)))
        layer_in = config.hidden
    ro_dims = _mlp_dims(config.hidden, config.hidden, config.num_classes, config.readout_depth)
    if config.variant == "bcos":
        readout = init_mlp(ro_dims, config.b, rng.derive(2))
    else:
        readout = init_relu_mlp(ro_dims, rng.derive(2))
    edge_embeds = None
    if config.edge_mode == "additive":
        edge_embeds = []
        layer_in = config.input_dim
        for k in range(config.num_layers):
            a = np.sqrt(6.0 / (config.edge_input_dim + layer_in))
            edge_embeds.append(
                rng.derive(3, k).generator.uniform(-a, a, size=(layer_in, config.edge_input_dim))
            )
            layer_in = config.hidden
    eps = None
    if config.variant == "relu":
        eps = np.full(config.num_layers, config.epsilon)
    return GnnModel(config=config, update_mlps=update_mlps, readout=readout,
                    edge_embeds=edge_embeds, eps=eps)


@dataclass
class ForwardTrace:
    pack: PackedGraphs
    layer_inputs: list[np.ndarray]  # X^(k-1) per layer
    aggregated: list[np.ndarray]  # z per layer (update-MLP inputs)
    mlp_caches: list  # per layer: bcos caches list / relu cache dict
    edge_embedded: list[np.ndarray | None]  # (M, layer_in) per layer
    edge_msg_pre: list[np.ndarray | None]  # relu+additive pre-ReLU messages
    node_embeddings: np.ndarray  # X^(L)
    dropout_mask: np.ndarray | None
    readout_cache: object
    node_outputs: np.ndarray  # (N, c)
    logits: np.ndarray  # (num_graphs, c) for graph task, (N, c) for node task
    model_version: int = 0


def _update_forward(mlp, X: np.ndarray):
    if isinstance(mlp, BcosMlp):
        return bcos.mlp_forward_rows(mlp, X)
    return relu_mlp_forward(mlp, X)


def forward_packed(
    model: GnnModel,
    pack: PackedGraphs,
    train: bool = False,
    dropout_rng: Rng | None = None,
) -> ForwardTrace:
    cfg = model.config
    if pack.X.shape[1] != cfg.input_dim:
        raise ContractViolation(f"feature dim {pack.X.shape[1]} != model input dim {cfg.input_dim}")
    if cfg.edge_mode == "additive":
        if pack.edge_attr is None and pack.src.size:
            raise ContractViolation("additive edge mode requires edge features")
    h = pack.X
    layer_inputs, aggregated, mlp_caches = [], [], []
    edge_embedded: list[np.ndarray | None] = []
    edge_msg_pre: list[np.ndarray | None] = []
    for k in range(cfg.num_layers):
        layer_inputs.append(h)
        eps_k = model.layer_eps(k)
        e_emb = None
        msg_pre = None
        if cfg.edge_mode == "additive" and pack.src.size:
            e_emb = pack.edge_attr @ model.edge_embeds[k].T
            if cfg.variant == "relu":
                msg_pre = h[pack.src] + e_emb
                z = (1.0 + eps_k) * h + pack.S_in @ np.maximum(msg_pre, 0.0)
            else:
                z = (1.0 + eps_k) * h + pack.A @ h + pack.S_in @ e_emb
        else:
            z = (1.0 + eps_k) * h + pack.A @ h
        edge_embedded.append(e_emb)
        edge_msg_pre.append(msg_pre)
        aggregated.append(z)
        h, cache = _update_forward(model.update_mlps[k], z)
        mlp_caches.append(cache)
    node_embeddings = h
    dropout_mask = None
    if train and cfg.dropout > 0.0:
        if dropout_rng is None:
            raise ContractViolation("training forward with dropout needs a dropout rng")
        keep = 1.0 - cfg.dropout
        dropout_mask = (dropout_rng.generator.random(h.shape) < keep) / keep
        h = h * dropout_mask
    node_outputs, readout_cache = _update_forward(model.readout, h)
    if cfg.task == "graph":
        logits = pack.pool @ node_outputs
    else:
        logits = node_outputs
    return ForwardTrace(
        pack=pack, layer_inputs=layer_inputs, aggregated=aggregated, mlp_caches=mlp_caches,
        edge_embedded=edge_embedded, edge_msg_pre=edge_msg_pre,
        node_embeddings=node_embeddings, dropout_mask=dropout_mask,
        readout_cache=readout_cache, node_outputs=node_outputs, logits=logits,
        model_version=model.version,
    )


def gin_forward(model: GnnModel, g: AttributedGraph) -> ForwardTrace:
    """Forward one graph; ``trace.logits[0]`` holds its logits."""
    need_gather = model.config.variant == "relu" and model.config.edge_mode == "additive"
    pack = pack_graphs([g], need_src_gather=need_gather)
    return forward_packed(model, pack)


@dataclass
class ParamGrads:
    grads: list[np.ndarray]  # aligned with model.parameters()
    grad_X: np.ndarray  # (N, p0) gradient w.r.t. packed node features


def _update_backward(mlp, cache, G):
    if isinstance(mlp, BcosMlp):
        g, grad_W = bcos.mlp_backward_rows(mlp, cache, G)
        return g, grad_W, None
    return relu_mlp_backward(mlp, cache, G)


def gin_backward(model: GnnModel, trace: ForwardTrace, grad_logits: np.ndarray) -> ParamGrads:
    """Exact gradients w.r.t. every parameter, reverse-traversing aggregation."""
    if trace.model_version != model.version:
        raise ContractViolation("stale trace: model parameters changed since forward")
    cfg = model.config
    pack = trace.pack
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if cfg.task == "graph":
        if grad_logits.ndim == 1:
            grad_logits = grad_logits[None, :]
        grad_node_out = pack.pool.T @ grad_logits
    else:
        grad_node_out = grad_logits
    g, ro_gw, ro_gb = _update_backward(model.readout, trace.readout_cache, grad_node_out)
    if trace.dropout_mask is not None:
        g = g * trace.dropout_mask
    update_gw: list = [None] * cfg.num_layers
    update_gb: list = [None] * cfg.num_layers
    edge_gw: list = [None] * cfg.num_layers
    eps_grad = np.zeros(cfg.num_layers) if model.eps is not None else None
    for k in range(cfg.num_layers - 1, -1, -1):
        grad_z, gw, gb = _update_backward(model.update_mlps[k], trace.mlp_caches[k], g)
        update_gw[k] = gw
        update_gb[k] = gb
        eps_k = model.layer_eps(k)
        h_prev = trace.layer_inputs[k]
        if eps_grad is not None:
            eps_grad[k] = float(np.einsum("ij,ij->", grad_z, h_prev))
        g = (1.0 + eps_k) * grad_z
        if cfg.edge_mode == "additive" and pack.src.size:
            if cfg.variant == "relu":
                grad_msg = pack.S_in.T @ grad_z
                grad_pre = grad_msg * (trace.edge_msg_pre[k] > 0.0)
                g = g + pack.G_src.T @ grad_pre
                edge_gw[k] = grad_pre.T @ pack.edge_attr
            else:
                g = g + pack.A.T @ grad_z
                grad_e = pack.S_in.T @ grad_z
                edge_gw[k] = grad_e.T @ pack.edge_attr
        else:
            g = g + pack.A.T @ grad_z
    grads: list[np.ndarray] = []
    for k in range(cfg.num_layers):
        if cfg.variant == "bcos":
            grads.extend(update_gw[k])
        else:
            for gw_i, gb_i in zip(update_gw[k], update_gb[k]):
                grads.append(gw_i)
                grads.append(gb_i)
    if cfg.variant == "bcos":
        grads.extend(ro_gw)
    else:
        for gw_i, gb_i in zip(ro_gw, ro_gb):
            grads.append(gw_i)
            grads.append(gb_i)
    if model.edge_embeds is not None:
        for k in range(cfg.num_layers):
            if edge_gw[k] is None:
                edge_gw[k] = np.zeros_like(model.edge_embeds[k])
            grads.append(edge_gw[k])
    if eps_grad is not None:
        grads.append(eps_grad)
    return ParamGrads(grads=grads, grad_X=g)


def predict_logits(model: GnnModel, graphs: list[AttributedGraph], batch_size: int = 256) -> np.ndarray:
    """Evaluation-mode logits for a list of graphs (dropout disabled)."""
    outs = []
    need_gather = model.config.variant == "relu" and model.config.edge_mode == "additive"
    for start in range(0, len(graphs), batch_size):
        pack = pack_graphs(graphs[start : start + batch_size], need_src_gather=need_gather)
        outs.append(forward_packed(model, pack).logits)
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, model.config.num_classes))


def _mlp_to_json(mlp) -> list[dict]:
    if isinstance(mlp, BcosMlp):
        return [{"w": [[float(v) for v in row] for row in layer.W]} for layer in mlp.layers]
    return [
        {"w": [[float(v) for v in row] for row in W], "bias": [float(v) for v in b]}
        for W, b in zip(mlp.weights, mlp.biases)
    ]


def _mlp_from_json(doc: list[dict], variant: str, b: float):
    if variant == "bcos":
        return BcosMlp(layers=[bcos.BcosLayer(W=np.array(d["w"]), b=b) for d in doc])
    return ReluMlp(
        weights=[np.array(d["w"], dtype=np.float64) for d in doc],
        biases=[np.array(d["bias"], dtype=np.float64) for d in doc],
    )


def model_to_json(model: GnnModel) -> dict:
    doc: dict = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_json(),
        "update_mlps": [_mlp_to_json(m) for m in model.update_mlps],
        "readout": _mlp_to_json(model.readout),
        "edge_embeds": (
            [[[float(v) for v in row] for row in W] for W in model.edge_embeds]
            if model.edge_embeds is not None
            else None
        ),
        "eps": [float(v) for v in model.eps] if model.eps is not None else None,
    }
    return doc


def model_from_json(doc: dict) -> GnnModel:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractViolation(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg = GinConfig.from_json(doc["config"])
    update_mlps = [_mlp_from_json(m, cfg.variant, cfg.b) for m in doc["update_mlps"]]
    readout = _mlp_from_json(doc["readout"], cfg.variant, cfg.b)
    edge_embeds = None
    if doc.get("edge_embeds") is not None:
        edge_embeds = [np.array(W, dtype=np.float64) for W in doc["edge_embeds"]]
    eps = np.array(doc["eps"], dtype=np.float64) if doc.get("eps") is not None else None
    return GnnModel(config=cfg, update_mlps=update_mlps, readout=readout,
                    edge_embeds=edge_embeds, eps=eps)


def save_model(model: GnnModel, path) -> None:
    from . import jsonio

    jsonio.dump_path(model_to_json(model), path)


def load_model(path) -> GnnModel:
    from . import jsonio

    return model_from_json(jsonio.load_path(path))
