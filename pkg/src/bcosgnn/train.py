"""Adam optimizer, plateau schedule, early stopping, and the seed loop."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import explain as explain_mod
from . import metrics as metrics_mod
from .graph import Dataset, stratified_split
from .linalg import ContractViolation, Rng
from .model import GinConfig, GnnModel, forward_packed, gin_backward, init_model, pack_graphs, predict_logits


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_decay: float = 0.5
    plateau_patience: int = 25
    min_lr: float = 1e-6
    stop_patience: int = 25
    max_epochs: int = 200
    batch_size: int = 64
    loss: str = "auto"  # auto | softmax_ce | bce

    def __post_init__(self):
        if not 0.0 < self.lr_decay < 1.0:
            raise ContractViolation("lr_decay must be in (0, 1)")
        if self.min_lr > self.lr:
            raise ContractViolation("min_lr must not exceed lr")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ContractViolation("batch_size must be >= 1 and max_epochs >= 0")
        if self.loss not in ("auto", "softmax_ce", "bce"):
            raise ContractViolation(f"unknown loss {self.loss!r}")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: list[np.ndarray]) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> list[np.ndarray]:
    """Bias-corrected Adam update applied in place; returns the parameters."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractViolation("params/grads/state lengths differ")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ContractViolation(f"grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """(mean loss, gradient w.r.t. logits) for integer class labels."""
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    probs = expz / expz.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.clip(picked, 1e-300, None)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def bce_with_logits(logits: np.ndarray, labels: np.ndarray):
    """One-vs-rest sigmoid cross-entropy; (mean-per-graph loss, logit grad).

    Unlike the softmax loss, which constrains only logit differences, this
    anchors each class logit individually, so the evidence for the predicted
    class must accumulate as positive contributions in that class's own row
    of the contribution map.
    """
    n, c = logits.shape
    y = np.zeros((n, c))
    y[np.arange(n), labels] = 1.0
    # stable log(1 + exp(-|z|)) formulation
    loss_terms = np.maximum(logits, 0.0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
    loss = float(loss_terms.sum(axis=1).mean())
    return loss, (expit(logits) - y) / n


def loss_fn_for(model: GnnModel, cfg: TrainConfig):
    """The configured loss; 'auto' pairs one-vs-rest BCE with the B-cos
    variant (per-row evidence anchoring) and softmax CE with the baseline."""
    name = cfg.loss
    if name == "auto":
        name = "bce" if model.config.variant == "bcos" else "softmax_ce"
    return bce_with_logits if name == "bce" else softmax_cross_entropy


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float
    lr: float
    val_loss: float = 0.0


@dataclass
class FitResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_val_f1: float = 0.0
    best_epoch: int = -1
    stopped_epoch: int = -1


def _val_metrics(model: GnnModel, val: Dataset, loss_fn) -> tuple[float, float]:
    logits = predict_logits(model, val.graphs)
    preds = logits.argmax(axis=1)
    _, f1 = metrics_mod.classification_metrics(preds, val.labels(), val.num_classes)
    loss, _ = loss_fn(logits, val.labels())
    return f1, loss


def _snapshot(model: GnnModel) -> list[np.ndarray]:
    return [p.copy() for _, p in model.parameters()]


def _restore(model: GnnModel, snap: list[np.ndarray]) -> None:
    for (_, p), saved in zip(model.parameters(), snap):
        p[...] = saved
    model.bump_version()


def fit(model: GnnModel, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig, rng: Rng) -> FitResult:
    """Mini-batch cross-entropy training with plateau decay and early stop.

    Validation macro-F1 drives the learning-rate schedule and the patience
    window; exact F1 ties are broken by validation loss, so training keeps
    strengthening weight-input alignment after the metric saturates instead
    of stopping on a barely-converged model. The best-validation weights are
    restored on exit.
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ContractViolation("fit needs non-empty train and validation sets")
    result = FitResult()
    if cfg.max_epochs == 0:
        return result
    params = [p for _, p in model.parameters()]
    adam = init_adam(params)
    loss_fn = loss_fn_for(model, cfg)
    lr = cfg.lr
    batch_rng = rng.derive(10)
    dropout_rng = rng.derive(11)
    need_gather = model.config.variant == "relu" and model.config.edge_mode == "additive"
    best_snap = _snapshot(model)
    best_val_loss = np.inf
    plateau = 0
    stall = 0
    for epoch in range(cfg.max_epochs):
        order = list(range(len(train_ds)))
        batch_rng.shuffle(order)
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            graphs = [train_ds.graphs[i] for i in idx]
            labels = np.array([g.label for g in graphs], dtype=np.int64)
            pack = pack_graphs(graphs, need_src_gather=need_gather)
            trace = forward_packed(model, pack, train=True, dropout_rng=dropout_rng)
            loss, grad_logits = loss_fn(trace.logits, labels)
            losses.append(loss)
            grads = gin_backward(model, trace, grad_logits).grads
            adam_step(adam, params, grads, lr)
            model.bump_version()
            model.check_weight_floor()
        val_f1, val_loss = _val_metrics(model, val_ds, loss_fn)
        result.history.append(EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)),
                                          val_f1=val_f1, lr=lr, val_loss=val_loss))
        improved = (
            result.best_epoch < 0
            or val_f1 > result.best_val_f1
            or (val_f1 == result.best_val_f1 and val_loss < best_val_loss)
        )
        if improved:
            result.best_val_f1 = val_f1
            result.best_epoch = epoch
            best_val_loss = val_loss
            best_snap = _snapshot(model)
            plateau = 0
            stall = 0
        else:
            plateau += 1
            stall += 1
        if stall >= cfg.stop_patience:
            break
        if plateau >= cfg.plateau_patience:
            lr = max(lr * cfg.lr_decay, cfg.min_lr)
            plateau = 0
    result.stopped_epoch = result.history[-1].epoch if result.history else -1
    _restore(model, best_snap)
    return result


def history_to_csv(history: list[EpochRecord]) -> str:
    lines = ["epoch,train_loss,val_f1,lr"]
    for rec in history:
        lines.append(f"{rec.epoch},{rec.train_loss:.17g},{rec.val_f1:.17g},{rec.lr:.17g}")
    return "\n".join(lines) + "\n"


@dataclass
class SeedOutcome:
    seed: int
    model: GnnModel
    fit_result: FitResult
    test_accuracy: float
    test_macro_f1: float
    jaccard: float | None
    auroc: float | None


def evaluate_split(model: GnnModel, test: Dataset, explain_k: int | None = None):
    """Predictive metrics plus, for explainable B-cos models, Jaccard/AUROC."""
    logits = predict_logits(model, test.graphs)
    preds = logits.argmax(axis=1)
    acc, f1 = metrics_mod.classification_metrics(preds, test.labels(), test.num_classes)
    jaccs, aucs = [], []
    if model.config.variant == "bcos":
        for g in test.graphs:
            if g.gt_mask is None:
                continue
            cm = explain_mod.contribution_map(model, g)
            ns = explain_mod.node_scores(cm)
            jaccs.append(metrics_mod.jaccard_at_k(ns, g.gt_mask, k=explain_k))
            aucs.append(metrics_mod.node_auroc(ns, g.gt_mask))
    jac = float(np.mean(jaccs)) if jaccs else None
    auc = float(np.mean(aucs)) if aucs else None
    return acc, f1, jac, auc


def run_single_seed(
    dataset: Dataset,
    config: GinConfig,
    train_cfg: TrainConfig,
    seed: int,
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1),
) -> SeedOutcome:
    rng = Rng(seed)
    train_ds, val_ds, test_ds = stratified_split(dataset, fractions, rng.derive(0))
    model = init_model(config, rng.derive(1))
    fit_result = fit(model, train_ds, val_ds, train_cfg, rng.derive(2))
    acc, f1, jac, auc = evaluate_split(model, test_ds)
    return SeedOutcome(
        seed=seed, model=model, fit_result=fit_result,
        test_accuracy=acc, test_macro_f1=f1, jaccard=jac, auroc=auc,
    )


def aggregate_outcomes(outcomes: list[SeedOutcome]) -> metrics_mod.EvalReport:
    per_seed = []
    for o in outcomes:
        entry = {
            "seed": o.seed,
            "accuracy": o.test_accuracy,
            "macro_f1": o.test_macro_f1,
            "best_val_f1": o.fit_result.best_val_f1,
            "epochs": len(o.fit_result.history),
        }
        if o.jaccard is not None:
            entry["jaccard_at_k"] = o.jaccard
        if o.auroc is not None:
            entry["node_auroc"] = o.auroc
        per_seed.append(entry)
    jaccs = [o.jaccard for o in outcomes if o.jaccard is not None]
    aucs = [o.auroc for o in outcomes if o.auroc is not None]
    return metrics_mod.EvalReport(
        accuracy=float(np.mean([o.test_accuracy for o in outcomes])),
        macro_f1=float(np.mean([o.test_macro_f1 for o in outcomes])),
        jaccard_at_k=float(np.mean(jaccs)) if jaccs else None,
        node_auroc=float(np.mean(aucs)) if aucs else None,
        per_seed=per_seed,
    )


def run_experiment(
    dataset: Dataset,
    config: GinConfig,
    train_cfg: TrainConfig,
    seeds: list[int],
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1),
    jobs: int = 1,
) -> tuple[metrics_mod.EvalReport, list[SeedOutcome]]:
    """Full protocol per seed: resplit, init, fit, evaluate; merged by index."""
    if not seeds:
        raise ContractViolation("need at least one seed")
    outcomes: list[SeedOutcome | None] = [None] * len(seeds)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(run_single_seed, dataset, copy.deepcopy(config), train_cfg, s, fractions): i
                for i, s in enumerate(seeds)
            }
            for fut, i in futures.items():
                outcomes[i] = fut.result()
    else:
        for i, s in enumerate(seeds):
            outcomes[i] = run_single_seed(dataset, config, train_cfg, s, fractions)
    done = [o for o in outcomes if o is not None]
    return aggregate_outcomes(done), done
