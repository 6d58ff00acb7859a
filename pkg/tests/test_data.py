from itertools import permutations

import numpy as np
import pytest

from bcosgnn import jsonio
from bcosgnn.data import (
    ATOM_INDEX,
    BOND_INDEX,
    CYCLE_EDGES,
    HOUSE_EDGES,
    Ba2MotifSpec,
    HaloBenzeneSpec,
    _build_halobenzene_graph,
    dataset_stats,
    generate_ba2motif,
    generate_halobenzene,
)
from bcosgnn.graph import dataset_to_json, neighbors
from bcosgnn.linalg import ContractViolation, Rng


def undirected_set(g, nodes=None):
    out = set()
    for i, j in g.edges:
        i, j = int(i), int(j)
        if nodes is None or (i in nodes and j in nodes):
            out.add((min(i, j), max(i, j)))
    return out


def isomorphic_small(edges_a, nodes_a, ref_edges, size):
    """Brute-force isomorphism test for <= 5-node motifs."""
    nodes_a = sorted(nodes_a)
    ref = {(min(a, b), max(a, b)) for a, b in ref_edges}
    for perm in permutations(range(size)):
        mapping = {nodes_a[i]: perm[i] for i in range(size)}
        mapped = {(min(mapping[i], mapping[j]), max(mapping[i], mapping[j])) for i, j in edges_a}
        if mapped == ref:
            return True
    return False


@pytest.fixture(scope="module")
def ba_small():
    return generate_ba2motif(Ba2MotifSpec(num_graphs=60, base_nodes=20, attach_m=1, seed=7))


def test_ba2motif_counts_and_balance(ba_small):
    assert len(ba_small) == 60
    labels = ba_small.labels()
    assert (labels == 0).sum() == 30
    assert (labels == 1).sum() == 30
    for g in ba_small.graphs:
        assert g.gt_mask.sum() == 5
        assert g.n == 25


def test_ba2motif_masked_subgraph_is_the_motif(ba_small):
    for g in ba_small.graphs:
        motif_nodes = set(int(i) for i in np.flatnonzero(g.gt_mask))
        internal = undirected_set(g, motif_nodes)
        ref = HOUSE_EDGES if g.label == 0 else CYCLE_EDGES
        assert isomorphic_small(internal, motif_nodes, ref, 5), (g.label, internal)


def test_ba2motif_single_bridge(ba_small):
    for g in ba_small.graphs:
        motif_nodes = set(int(i) for i in np.flatnonzero(g.gt_mask))
        crossing = [
            (int(i), int(j)) for i, j in g.edges
            if (int(i) in motif_nodes) != (int(j) in motif_nodes)
        ]
        assert len(crossing) == 2  # one undirected bridge, both directions


def test_ba2motif_degree_onehot_features(ba_small):
    for g in ba_small.graphs[:10]:
        assert np.all(g.x.sum(axis=1) == 1.0)
        for i in range(g.n):
            deg = len(neighbors(g, i))
            assert g.x[i, min(deg, 10)] == 1.0


def test_ba2motif_connected_mask(ba_small):
    # motif plus its bridge keeps the rationale connected to the graph
    for g in ba_small.graphs[:10]:
        motif_nodes = sorted(int(i) for i in np.flatnonzero(g.gt_mask))
        internal = undirected_set(g, set(motif_nodes))
        seen = {motif_nodes[0]}
        frontier = [motif_nodes[0]]
        while frontier:
            cur = frontier.pop()
            for a, b in internal:
                nxt = b if a == cur else a if b == cur else None
                if nxt is not None and nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        assert seen == set(motif_nodes)


def test_ba2motif_deterministic_bytes():
    spec = Ba2MotifSpec(num_graphs=10, base_nodes=15, seed=3)
    a = jsonio.dumps(dataset_to_json(generate_ba2motif(spec)))
    b = jsonio.dumps(dataset_to_json(generate_ba2motif(spec)))
    assert a == b


def test_ba2motif_base_jitter_varies_sizes():
    d = generate_ba2motif(Ba2MotifSpec(num_graphs=40, base_nodes=19, base_jitter=4, seed=11))
    sizes = {g.n for g in d.graphs}
    assert len(sizes) > 1
    assert min(sizes) >= 20 and max(sizes) <= 28


def test_ba2motif_rejects_odd_count():
    with pytest.raises(ContractViolation):
        Ba2MotifSpec(num_graphs=11)


@pytest.fixture(scope="module")
def halo_small():
    return generate_halobenzene(HaloBenzeneSpec(num_graphs=45, seed=5))


def test_halobenzene_counts_and_balance(halo_small):
    assert len(halo_small) == 45
    hist = np.bincount(halo_small.labels(), minlength=9)
    assert np.all(hist == 5)
    for g in halo_small.graphs:
        assert g.gt_mask.sum() == 8


def test_halobenzene_ring_is_chordless_aromatic_sixcycle(halo_small):
    aromatic_col = BOND_INDEX["aromatic"]
    for g in halo_small.graphs:
        carbon_col = ATOM_INDEX["C"]
        ring = [
            int(i) for i in np.flatnonzero(g.gt_mask)
            if g.x[int(i), carbon_col] == 1.0
        ]
        assert len(ring) == 6
        internal = undirected_set(g, set(ring))
        assert len(internal) == 6  # chordless: exactly the cycle edges
        # every ring-internal edge is aromatic, and ring nodes have exactly two
        # aromatic neighbors
        for idx, (i, j) in enumerate(g.edges):
            i, j = int(i), int(j)
            if i in ring and j in ring:
                assert g.edge_attr[idx, aromatic_col] == 1.0
        for i in ring:
            deg_in_ring = sum(1 for a, b in internal if i in (a, b))
            assert deg_in_ring == 2


def test_halobenzene_halogen_placement_matches_label(halo_small):
    for g in halo_small.graphs:
        label = g.label
        halogen = ["Cl", "F", "Br"][label // 3]
        expected_dist = [1, 2, 3][label % 3]
        col = ATOM_INDEX[halogen]
        halo_nodes = [int(i) for i in np.flatnonzero(g.x[:, col] == 1.0)]
        assert len(halo_nodes) == 2
        assert all(g.gt_mask[h] for h in halo_nodes)
        # ring carbons bonded to each halogen
        carbons = []
        for h in halo_nodes:
            nbrs = neighbors(g, h)
            assert len(nbrs) == 1
            carbons.append(nbrs[0])
        ring = [
            int(i) for i in np.flatnonzero(g.gt_mask)
            if g.x[int(i), ATOM_INDEX["C"]] == 1.0
        ]
        internal = undirected_set(g, set(ring))
        # BFS distance inside the ring only
        dist = {carbons[0]: 0}
        frontier = [carbons[0]]
        while frontier:
            cur = frontier.pop(0)
            for a, b in internal:
                nxt = b if a == cur else a if b == cur else None
                if nxt is not None and nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    frontier.append(nxt)
        assert dist[carbons[1]] == expected_dist


def test_halobenzene_halogen_columns_only_on_halogens(halo_small):
    halogen_cols = [ATOM_INDEX[a] for a in ("F", "Cl", "Br")]
    for g in halo_small.graphs:
        outside = np.delete(np.arange(g.n), np.flatnonzero(g.gt_mask))
        assert np.all(g.x[np.ix_(outside, halogen_cols)] == 0.0)


def test_halobenzene_feature_topology_factorization():
    # same stream, different halogen -> identical topology, features differ
    # only on the two halogen rows
    a = _build_halobenzene_graph(Rng(40).derive(0), "Cl", "meta", 10)
    b = _build_halobenzene_graph(Rng(40).derive(0), "Br", "meta", 10)
    assert np.array_equal(a.edges, b.edges)
    assert np.array_equal(a.edge_attr, b.edge_attr)
    diff_rows = np.flatnonzero(np.any(a.x != b.x, axis=1))
    assert set(diff_rows) == {a.n - 2, a.n - 1}
    assert (3 * 0 + 1, 3 * 2 + 1) == (a.label, b.label)

    # same stream, different position -> same atom multiset, label moves in
    # the position component only
    c = _build_halobenzene_graph(Rng(40).derive(0), "Cl", "para", 10)
    assert np.array_equal(np.sort(a.x.argmax(axis=1)), np.sort(c.x.argmax(axis=1)))
    assert a.label % 3 == 1 and c.label % 3 == 2 and a.label // 3 == c.label // 3


def test_halobenzene_deterministic_bytes():
    spec = HaloBenzeneSpec(num_graphs=18, seed=2)
    a = jsonio.dumps(dataset_to_json(generate_halobenzene(spec)))
    b = jsonio.dumps(dataset_to_json(generate_halobenzene(spec)))
    assert a == b


def test_halobenzene_rejects_non_divisible():
    with pytest.raises(ContractViolation):
        HaloBenzeneSpec(num_graphs=2000)


def test_dataset_stats(ba_small):
    stats = dataset_stats(ba_small)
    assert stats["num_graphs"] == 60
    assert stats["class_histogram"] == [30, 30]
    assert stats["avg_nodes"] == 25.0
    assert stats["avg_edges"] > 0
