"""Acceptance suite: one test per release criterion, at its stated tolerance.

Heavy fixtures (trained models) are session-scoped and shared across the
quantitative criteria. Each test prints a `[criterion N] PASS` line once its
assertions held (visible with `pytest -s`; the per-test PASSED/FAILED line
carries the same information otherwise).
"""

import json
import time

import numpy as np
import pytest

from bcosgnn.cli import main as cli_main
from bcosgnn.data import Ba2MotifSpec, HaloBenzeneSpec, generate_ba2motif, generate_halobenzene
from bcosgnn.explain import (
    contribution_map,
    dynamic_weights_graph,
    integrated_gradients,
    layer_dynamic_matrices,
    node_scores,
)
from bcosgnn.graph import AttributedGraph, stratified_split
from bcosgnn.linalg import Rng
from bcosgnn.metrics import classification_metrics, jaccard_at_k, node_auroc, time_explainer
from bcosgnn.model import GinConfig, gin_backward, gin_forward, init_model
from bcosgnn.train import TrainConfig, run_experiment, run_single_seed

# Dataset/training knobs shared by the quantitative criteria. The background
# size is drawn from [15, 23] so degree statistics overlap between classes;
# with a fixed base size the task is solvable by feature counting alone,
# which neither matches the reference setting nor exercises the model.
BA_SPEC = Ba2MotifSpec(num_graphs=1000, base_nodes=19, base_jitter=4, attach_m=1, seed=7)
HALO_SPEC = HaloBenzeneSpec(num_graphs=1998, scaffold_min=8, scaffold_max=16, seed=11)
TRAIN_CFG = TrainConfig(max_epochs=300, batch_size=64)


def gin_config(b=2.0, variant="bcos"):
    return GinConfig(num_layers=3, hidden=64, num_classes=2, input_dim=11, b=b,
                     variant=variant, update_depth=2, readout_depth=3)


def gine_config():
    return GinConfig(num_layers=4, hidden=128, num_classes=9, input_dim=6, b=2.0,
                     variant="bcos", edge_mode="additive", edge_input_dim=4,
                     update_depth=2, readout_depth=2, dropout=0.5)


def report(criterion, text):
    print(f"\n[criterion {criterion}] PASS: {text}")


def undirected(pairs):
    out = []
    for i, j in pairs:
        out.append((i, j))
        out.append((j, i))
    return np.array(out, dtype=np.int64)


def random_graph(rng, n, p0, edge_dim=None):
    pairs = sorted({(i, int(rng.integers(0, i))) for i in range(1, n)})
    for _ in range(max(1, n // 3)):
        i, j = int(rng.integers(0, n)), int(rng.integers(0, n))
        if i != j and (max(i, j), min(i, j)) not in pairs:
            pairs.append((max(i, j), min(i, j)))
    edges = undirected(sorted(set(pairs)))
    edge_attr = None
    if edge_dim is not None:
        half = np.abs(rng.normal(size=(len(set(pairs)), edge_dim)))
        edge_attr = np.repeat(half, 2, axis=0)
    x = rng.normal(size=(n, p0))
    return AttributedGraph(n=n, x=x, edges=edges, label=0, edge_attr=edge_attr)


def random_bcos_model(rng, p0, edge_dim=None, max_hidden=8, classes=3):
    b = float(rng.choice([1.0, 1.5, 2.0, 2.5, 3.0]))
    layers = int(rng.integers(1, 4))
    hidden = int(rng.integers(3, max_hidden + 1))
    cfg = GinConfig(
        num_layers=layers, hidden=hidden, num_classes=classes, input_dim=p0, b=b,
        variant="bcos", edge_mode="none" if edge_dim is None else "additive",
        edge_input_dim=edge_dim, update_depth=int(rng.integers(1, 3)),
        readout_depth=int(rng.integers(1, 3)),
    )
    return init_model(cfg, Rng(int(rng.integers(0, 2**31))))


# ---------------------------------------------------------------------------
# shared expensive fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def ba_dataset():
    return generate_ba2motif(BA_SPEC)


@pytest.fixture(scope="session")
def halo_dataset():
    return generate_halobenzene(HALO_SPEC)


@pytest.fixture(scope="session")
def b2_outcomes(ba_dataset):
    _, outcomes = run_experiment(ba_dataset, gin_config(b=2.0), TRAIN_CFG, seeds=[0, 1, 2, 3, 4])
    return outcomes


@pytest.fixture(scope="session")
def b1_outcomes(ba_dataset):
    _, outcomes = run_experiment(ba_dataset, gin_config(b=1.0), TRAIN_CFG, seeds=[0, 1, 2])
    return outcomes


@pytest.fixture(scope="session")
def b3_outcomes(ba_dataset):
    _, outcomes = run_experiment(ba_dataset, gin_config(b=3.0), TRAIN_CFG, seeds=[0, 1, 2])
    return outcomes


@pytest.fixture(scope="session")
def relu_outcomes(ba_dataset):
    _, outcomes = run_experiment(ba_dataset, gin_config(variant="relu"), TRAIN_CFG, seeds=[0, 1, 2])
    return outcomes


@pytest.fixture(scope="session")
def halo_outcomes(halo_dataset):
    _, outcomes = run_experiment(
        halo_dataset, gine_config(), TRAIN_CFG, seeds=[0, 1, 2], fractions=(0.8, 0.1, 0.1)
    )
    return outcomes


# ---------------------------------------------------------------------------
# 1-4: structural properties
# ---------------------------------------------------------------------------


def test_criterion_01_dynamic_linearity():
    rng = np.random.default_rng(100)
    worst = 0.0
    for trial in range(1000):
        edge_dim = 3 if trial % 4 == 0 else None
        p0 = int(rng.integers(2, 7))
        model = random_bcos_model(rng, p0, edge_dim=edge_dim)
        g = random_graph(rng, int(rng.integers(2, 51)), p0, edge_dim=edge_dim)
        if edge_dim is not None:
            g = AttributedGraph(n=g.n, x=np.abs(g.x) + 0.05, edges=g.edges,
                                label=0, edge_attr=g.edge_attr)
        W = dynamic_weights_graph(model, g)
        logits = gin_forward(model, g).logits[0]
        err = float(np.linalg.norm(W @ g.x.reshape(-1) - logits))
        bound = 1e-8 * (1.0 + float(np.linalg.norm(logits)))
        assert err <= bound, (trial, err, bound)
        worst = max(worst, err / bound)
    report(1, f"1000 random instances, worst error at {worst:.2e} of tolerance")


def test_criterion_02_completeness():
    rng = np.random.default_rng(101)
    for trial in range(200):
        edge_dim = 4 if trial % 2 else None
        p0 = int(rng.integers(2, 7))
        model = random_bcos_model(rng, p0, edge_dim=edge_dim)
        g = random_graph(rng, int(rng.integers(2, 20)), p0, edge_dim=edge_dim)
        if edge_dim is not None:
            g = AttributedGraph(n=g.n, x=np.abs(g.x) + 0.05, edges=g.edges,
                                label=0, edge_attr=g.edge_attr)
        cm = contribution_map(model, g)
        sums = cm.m.sum(axis=1)
        assert np.allclose(sums, cm.logits, rtol=1e-6, atol=1e-9), trial
    report(2, "contribution rows sum to logits (1e-6 relative) on 200 instances")


def test_criterion_03_layerwise_dynamic_matrices():
    rng = np.random.default_rng(102)
    for trial in range(100):
        edge_dim = 3 if trial % 3 == 0 else None
        p0 = int(rng.integers(2, 6))
        model = random_bcos_model(rng, p0, edge_dim=edge_dim, max_hidden=6)
        g = random_graph(rng, int(rng.integers(2, 9)), p0, edge_dim=edge_dim)
        trace, per_layer = layer_dynamic_matrices(model, g)
        vecx = g.x.reshape(-1)
        for k, (W_k, off_k) in enumerate(per_layer):
            want = trace.layer_inputs[k + 1] if k + 1 < len(trace.layer_inputs) else trace.node_embeddings
            got = W_k @ vecx + off_k.sum(axis=2)
            assert np.allclose(got, want, atol=1e-8), (trial, k)
    report(3, "per-layer dynamic matrices rebuild cached embeddings (1e-8) on 100 instances")


def test_criterion_04_gradient_correctness():
    from tests_helpers_fd import model_grads_vs_fd  # local helper below

    worst = model_grads_vs_fd()
    assert worst < 1e-4
    report(4, f"analytic gradients within {worst:.2e} relative of central differences")


# ---------------------------------------------------------------------------
# 5-9: quantitative reproduction (desk scale)
# ---------------------------------------------------------------------------


def test_criterion_05_ba2motif_reproduction(b2_outcomes):
    f1 = float(np.mean([o.test_macro_f1 for o in b2_outcomes]))
    jac = float(np.mean([o.jaccard for o in b2_outcomes]))
    auc = float(np.mean([o.auroc for o in b2_outcomes]))
    assert f1 >= 0.99, f"mean test F1 {f1:.4f} < 0.99"
    assert jac >= 0.75, f"mean Jaccard@5 {jac:.4f} < 0.75"
    assert auc >= 0.90, f"mean node AUC {auc:.4f} < 0.90"
    report(5, f"5 seeds: F1={f1:.3f} Jaccard@5={jac:.3f} AUC={auc:.3f}")


def test_criterion_06_halobenzene_reproduction(halo_outcomes):
    f1 = float(np.mean([o.test_macro_f1 for o in halo_outcomes]))
    jac = float(np.mean([o.jaccard for o in halo_outcomes]))
    auc = float(np.mean([o.auroc for o in halo_outcomes]))
    assert f1 >= 0.95, f"mean test F1 {f1:.4f} < 0.95"
    assert jac >= 0.85, f"mean Jaccard@8 {jac:.4f} < 0.85"
    assert auc >= 0.95, f"mean node AUC {auc:.4f} < 0.95"
    report(6, f"3 seeds: F1={f1:.3f} Jaccard@8={jac:.3f} AUC={auc:.3f}")


def test_criterion_07_b_sensitivity(b1_outcomes, b2_outcomes, b3_outcomes):
    auc1 = float(np.mean([o.auroc for o in b1_outcomes]))
    auc3 = float(np.mean([o.auroc for o in b3_outcomes]))
    acc1 = float(np.mean([o.test_accuracy for o in b1_outcomes]))
    acc2 = float(np.mean([o.test_accuracy for o in b2_outcomes]))
    assert auc1 <= 0.65, f"explanation AUC at B=1 is {auc1:.3f} > 0.65"
    assert auc3 >= 0.90, f"explanation AUC at B=3 is {auc3:.3f} < 0.90"
    assert auc3 > auc1
    assert acc1 < acc2, f"accuracy did not rise with B: {acc1:.3f} vs {acc2:.3f}"
    report(7, f"AUC {auc1:.3f}@B=1 -> {auc3:.3f}@B=3; accuracy {acc1:.3f}@B=1 < {acc2:.3f}@B=2")


def _ig_jaccard(outcome, dataset, steps=50):
    rng = Rng(outcome.seed)
    _, _, test = stratified_split(dataset, (0.7, 0.2, 0.1), rng.derive(0))
    jaccs = []
    for g in test.graphs:
        logits = gin_forward(outcome.model, g).logits[0]
        ns = integrated_gradients(outcome.model, g, steps=steps, class_row=int(np.argmax(logits)))
        jaccs.append(jaccard_at_k(ns, g.gt_mask))
    return float(np.mean(jaccs))


def test_criterion_08_baseline_ordering(b2_outcomes, relu_outcomes, ba_dataset):
    bcos_jac = float(np.mean([o.jaccard for o in b2_outcomes]))
    ig_jac = float(np.mean([_ig_jaccard(o, ba_dataset) for o in relu_outcomes]))
    assert bcos_jac > ig_jac, f"bcos {bcos_jac:.3f} vs ig {ig_jac:.3f}"
    assert 0.3 <= ig_jac <= 0.75, f"IG Jaccard {ig_jac:.3f} outside [0.3, 0.75]"
    report(8, f"contribution maps {bcos_jac:.3f} > integrated gradients {ig_jac:.3f}")


def test_criterion_09_timing_ordering(b2_outcomes, relu_outcomes, ba_dataset):
    rng = Rng(0)
    _, _, test = stratified_split(ba_dataset, (0.7, 0.2, 0.1), rng.derive(0))
    graphs = test.graphs
    bcos_model = b2_outcomes[0].model
    relu_model = relu_outcomes[0].model
    bcos_timing = time_explainer(
        lambda g: node_scores(contribution_map(bcos_model, g)), graphs, repeats=3
    )
    ig_timing = time_explainer(
        lambda g: integrated_gradients(relu_model, g, steps=50), graphs, repeats=3
    )
    ratio = ig_timing.mean_ms / bcos_timing.mean_ms
    assert bcos_timing.mean_ms < ig_timing.mean_ms
    assert ratio >= 5.0, f"speedup only {ratio:.1f}x"
    report(9, f"{bcos_timing.mean_ms:.2f} ms/graph vs IG {ig_timing.mean_ms:.2f} ms/graph ({ratio:.0f}x)")


# ---------------------------------------------------------------------------
# 10-11: determinism and metric oracles
# ---------------------------------------------------------------------------


def test_criterion_10_pipeline_determinism(tmp_path):
    def run(tag):
        root = tmp_path / tag
        data_path = root / "data.json"
        assert cli_main([
            "generate", "ba2motif", "--num-graphs", "60", "--base-nodes", "12",
            "--seed", "5", "-o", str(data_path),
        ]) == 0
        assert cli_main([
            "train", "--dataset", str(data_path), "--seeds", "0,1", "--hidden", "8",
            "--layers", "2", "--readout-depth", "2", "--epochs", "10",
            "--batch-size", "16", "--split", "0.6,0.2,0.2", "-o", str(root / "run"),
        ]) == 0
        assert cli_main([
            "explain", "--checkpoint", str(root / "run" / "seed0" / "checkpoint.json"),
            "--dataset", str(data_path), "--split", "test",
            "--split-fractions", "0.6,0.2,0.2", "--seed", "0", "-o", str(root / "expl"),
        ]) == 0
        return (
            (data_path).read_bytes(),
            (root / "run" / "summary.json").read_bytes(),
            (root / "expl" / "metrics.json").read_bytes(),
        )

    first = run("a")
    second = run("b")
    assert first == second
    report(10, "dataset, training summary, and explanation metrics byte-identical across reruns")


def test_criterion_11_metric_unit_examples():
    from bcosgnn.explain import NodeScores, _rank_desc

    def scores_of(vals):
        s = np.asarray(vals, dtype=np.float64)
        return NodeScores(s=s, ranking=_rank_desc(s))

    def mask_of(n, idx):
        m = np.zeros(n, dtype=bool)
        m[list(idx)] = True
        return m

    # Jaccard: overlap 3 of 5 with k = |G*| = 5 -> 3/7
    ns = scores_of([9, 8, 7, 6, 5, 1, 1, 0.5, 0.5, 0])
    assert jaccard_at_k(ns, mask_of(10, [0, 1, 2, 7, 8])) == pytest.approx(3 / 7)
    # AUROC tie convention: identical scores -> exactly 0.5
    assert node_auroc(scores_of([1.0, 1.0, 1.0, 1.0]), mask_of(4, [0, 2])) == pytest.approx(0.5)
    # and the single-motif between case
    assert node_auroc(scores_of([2.0, 1.0, 3.0]), mask_of(3, [0])) == pytest.approx(0.5)
    # macro-F1: all-one-class predictor on balanced binary labels -> 1/3
    acc, f1 = classification_metrics([0, 0, 0, 0], [0, 0, 1, 1], 2)
    assert acc == pytest.approx(0.5)
    assert f1 == pytest.approx(1 / 3)
    report(11, "Jaccard 3/7, AUROC tie 0.5, macro-F1 1/3 all exact")
