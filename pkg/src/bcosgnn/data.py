"""Deterministic generators for the two ground-truth explanation benchmarks.

Both generators derive one independent random stream per graph index from
the dataset seed, so regenerating with the same spec is byte-identical and
graphs can be produced in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import AttributedGraph, Dataset
from .linalg import ContractViolation, Rng

# House: 4-cycle body with an apex roofing the (0, 1) edge; floor edge (2, 3)
# closes the square. Undirected edge list over motif-local indices.
HOUSE_EDGES = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]
CYCLE_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]
MOTIF_SIZE = 5

ATOMS = ["C", "N", "O", "F", "Cl", "Br"]
ATOM_INDEX = {a: i for i, a in enumerate(ATOMS)}
BONDS = ["single", "double", "triple", "aromatic"]
BOND_INDEX = {b: i for i, b in enumerate(BONDS)}
HALOGENS = ["Cl", "F", "Br"]
POSITIONS = ["ortho", "meta", "para"]
# Ring slot of the second halogen relative to the first at slot 0.
POSITION_OFFSET = {"ortho": 1, "meta": 2, "para": 3}
RATIONALE_SIZE = 8  # six ring carbons plus two halogens


@dataclass
class Ba2MotifSpec:
    num_graphs: int
    base_nodes: int = 20
    base_jitter: int = 0  # base size drawn uniformly from [base-j, base+j]
    attach_m: int = 1
    degree_cap: int = 10  # one-hot buckets 0..cap, degrees >= cap share the last
    seed: int = 0

    def __post_init__(self):
        if self.num_graphs <= 0 or self.num_graphs % 2:
            raise ContractViolation("num_graphs must be positive and even")
        if self.base_nodes - self.base_jitter <= MOTIF_SIZE:
            raise ContractViolation("base_nodes minus jitter must exceed the motif size")
        if not 1 <= self.attach_m < self.base_nodes - self.base_jitter:
            raise ContractViolation("attach_m must satisfy 1 <= m < smallest base size")


@dataclass
class HaloBenzeneSpec:
    num_graphs: int
    scaffold_min: int = 8
    scaffold_max: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.num_graphs <= 0 or self.num_graphs % 9:
            raise ContractViolation("num_graphs must be positive and divisible by 9 classes")
        if self.scaffold_min < 4 or self.scaffold_max < self.scaffold_min:
            raise ContractViolation("scaffold size range invalid (need 4 <= min <= max)")


def _barabasi_albert_edges(n: int, m: int, rng: Rng) -> list[tuple[int, int]]:
    """Preferential attachment: each new node links to m distinct earlier nodes."""
    edges = [(0, i) for i in range(1, m + 1)]
    repeated = [0] * m + list(range(1, m + 1))
    for source in range(m + 1, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(repeated[rng.choice(len(repeated))])
        for t in sorted(targets):
            edges.append((source, t))
            repeated.append(t)
        repeated.extend([source] * m)
    return edges


def _to_directed(undirected: list[tuple[int, int]]) -> np.ndarray:
    out = []
    for i, j in undirected:
        out.append((i, j))
        out.append((j, i))
    return np.array(out, dtype=np.int64)


def _degree_onehot(n: int, edges: np.ndarray, cap: int) -> np.ndarray:
    deg = np.zeros(n, dtype=np.int64)
    for _, dst in edges:
        deg[dst] += 1
    x = np.zeros((n, cap + 1))
    x[np.arange(n), np.minimum(deg, cap)] = 1.0
    return x


def _build_ba2motif_graph(rng: Rng, label: int, spec: Ba2MotifSpec) -> AttributedGraph:
    base_n = spec.base_nodes
    if spec.base_jitter:
        base_n += rng.integers(-spec.base_jitter, spec.base_jitter + 1)
    undirected = _barabasi_albert_edges(base_n, spec.attach_m, rng)
    motif = HOUSE_EDGES if label == 0 else CYCLE_EDGES
    undirected += [(base_n + a, base_n + b) for a, b in motif]
    bridge_base = rng.choice(base_n)
    bridge_motif = base_n + rng.choice(MOTIF_SIZE)
    undirected.append((bridge_base, bridge_motif))
    n = base_n + MOTIF_SIZE
    edges = _to_directed(undirected)
    x = _degree_onehot(n, edges, spec.degree_cap)
    gt = np.zeros(n, dtype=bool)
    gt[base_n:] = True
    return AttributedGraph(n=n, x=x, edges=edges, label=label, gt_mask=gt)


def generate_ba2motif(spec: Ba2MotifSpec) -> Dataset:
    """Balanced house-vs-cycle motifs on preferential-attachment backgrounds."""
    root = Rng(spec.seed)
    graphs = []
    for i in range(spec.num_graphs):
        graphs.append(_build_ba2motif_graph(root.derive(i), label=i % 2, spec=spec))
    return Dataset(graphs=graphs, num_classes=2, feature_dim=spec.degree_cap + 1)


def _build_halobenzene_graph(
    rng: Rng, halogen: str, position: str, scaffold_size: int
) -> AttributedGraph:
    """One scaffold + di-halo ring graph.

    All random draws are independent of the halogen identity, and the
    position only decides which ring carbon hosts the second halogen, so
    regenerating with another class from the same stream varies exactly the
    intended label component.
    """
    atoms: list[int] = []
    bonds: list[tuple[int, int, str]] = []
    # Tree scaffold of heavy atoms; bond orders ignore valence on purpose,
    # the background only needs to be a structured confounder.
    for t in range(scaffold_size):
        r = rng.uniform(0.0, 1.0)
        atoms.append(ATOM_INDEX["C"] if r < 0.7 else ATOM_INDEX["N"] if r < 0.85 else ATOM_INDEX["O"])
        if t > 0:
            parent = rng.choice(t)
            kind = "double" if rng.uniform(0.0, 1.0) < 0.2 else "single"
            bonds.append((t, parent, kind))
    ring_start = scaffold_size
    for _ in range(6):
        atoms.append(ATOM_INDEX["C"])
    for r in range(6):
        bonds.append((ring_start + r, ring_start + (r + 1) % 6, "aromatic"))
    halo_a = ring_start + 6
    halo_b = ring_start + 7
    atoms.append(ATOM_INDEX[halogen])
    atoms.append(ATOM_INDEX[halogen])
    slot_b = POSITION_OFFSET[position]
    bonds.append((halo_a, ring_start, "single"))
    bonds.append((halo_b, ring_start + slot_b, "single"))
    free_slots = [s for s in range(6) if s not in (0, slot_b)]
    bridge_ring = ring_start + free_slots[rng.choice(len(free_slots))]
    bridge_scaffold = rng.choice(scaffold_size)
    bonds.append((bridge_scaffold, bridge_ring, "single"))
    n = scaffold_size + 8
    edges, attrs = [], []
    for i, j, kind in bonds:
        onehot = np.zeros(len(BONDS))
        onehot[BOND_INDEX[kind]] = 1.0
        edges.append((i, j))
        attrs.append(onehot)
        edges.append((j, i))
        attrs.append(onehot)
    x = np.zeros((n, len(ATOMS)))
    x[np.arange(n), atoms] = 1.0
    gt = np.zeros(n, dtype=bool)
    gt[ring_start : ring_start + 8] = True
    label = 3 * HALOGENS.index(halogen) + POSITIONS.index(position)
    return AttributedGraph(
        n=n, x=x, edges=np.array(edges, dtype=np.int64), label=label,
        edge_attr=np.array(attrs), gt_mask=gt,
    )


def generate_halobenzene(spec: HaloBenzeneSpec) -> Dataset:
    """Nine balanced classes: halogen identity (features) x ring position (topology)."""
    root = Rng(spec.seed)
    graphs = []
    for i in range(spec.num_graphs):
        label = i % 9
        rng = root.derive(i)
        size = rng.integers(spec.scaffold_min, spec.scaffold_max + 1)
        graphs.append(
            _build_halobenzene_graph(rng, HALOGENS[label // 3], POSITIONS[label % 3], size)
        )
    return Dataset(
        graphs=graphs, num_classes=9, feature_dim=len(ATOMS), edge_feature_dim=len(BONDS)
    )


def dataset_stats(d: Dataset) -> dict:
    hist = [0] * d.num_classes
    for g in d.graphs:
        hist[g.label] += 1
    return {
        "num_graphs": len(d),
        "avg_nodes": float(np.mean([g.n for g in d.graphs])),
        "avg_edges": float(np.mean([g.num_edges for g in d.graphs])),
        "class_histogram": hist,
    }
