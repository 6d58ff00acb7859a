"""Attributed graphs, datasets, and the stratified split.

Edges are stored as a directed list with enforced symmetric closure: every
(i, j) must appear together with (j, i), carrying identical edge features.
Message passing sums over incoming edges, so an undirected benchmark edge
contributes in both directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .linalg import ContractViolation, Rng


@dataclass
class AttributedGraph:
    n: int
    x: np.ndarray  # (n, p0) node features
    edges: np.ndarray  # (m, 2) int array of directed (src, dst) pairs
    label: int
    edge_attr: np.ndarray | None = None  # (m, pe), one row per directed edge
    gt_mask: np.ndarray | None = None  # (n,) bool ground-truth rationale

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.edges = np.ascontiguousarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.x.shape[0] != self.n:
            raise ContractViolation(f"feature matrix has {self.x.shape[0]} rows for n={self.n}")
        if not np.all(np.isfinite(self.x)):
            raise ContractViolation("node features contain non-finite entries")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise ContractViolation("edge endpoint out of range")
        if self.edge_attr is not None:
            self.edge_attr = np.ascontiguousarray(self.edge_attr, dtype=np.float64)
            if self.edge_attr.shape[0] != self.edges.shape[0]:
                raise ContractViolation("edge_attr row count differs from edge count")
        if self.gt_mask is not None:
            self.gt_mask = np.ascontiguousarray(self.gt_mask, dtype=bool)
            if self.gt_mask.shape[0] != self.n:
                raise ContractViolation("gt_mask length differs from node count")
            if not self.gt_mask.any():
                raise ContractViolation("gt_mask has no true entry")
        _check_symmetric_closure(self)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]


def _check_symmetric_closure(g: AttributedGraph) -> None:
    if g.edges.shape[0] == 0:
        return
    pairs = {}
    for idx, (i, j) in enumerate(g.edges):
        pairs[(int(i), int(j))] = idx
    for (i, j), idx in pairs.items():
        rev = pairs.get((j, i))
        if rev is None:
            raise ContractViolation(f"edge ({i},{j}) has no reverse ({j},{i})")
        if g.edge_attr is not None and not np.array_equal(g.edge_attr[idx], g.edge_attr[rev]):
            raise ContractViolation(f"edge ({i},{j}) features differ from reverse")


def neighbors(g: AttributedGraph, i: int) -> list[int]:
    """All j with a directed edge (j, i), in sorted order."""
    if not 0 <= i < g.n:
        raise ContractViolation(f"node index {i} out of range [0, {g.n})")
    if g.edges.shape[0] == 0:
        return []
    src = g.edges[g.edges[:, 1] == i, 0]
    return sorted(int(j) for j in src)


@dataclass
class Dataset:
    graphs: list[AttributedGraph]
    num_classes: int
    feature_dim: int
    edge_feature_dim: int | None = None

    def __post_init__(self):
        for g in self.graphs:
            if g.feature_dim != self.feature_dim:
                raise ContractViolation("inhomogeneous feature dimensions across graphs")
            if not 0 <= g.label < self.num_classes:
                raise ContractViolation(f"label {g.label} outside [0, {self.num_classes})")
            if self.edge_feature_dim is None:
                if g.edge_attr is not None:
                    raise ContractViolation("graph carries edge features but dataset declares none")
            else:
                if g.edge_attr is None or g.edge_attr.shape[1] != self.edge_feature_dim:
                    raise ContractViolation("edge feature dimension mismatch")

    def __len__(self) -> int:
        return len(self.graphs)

    def subset(self, indices) -> "Dataset":
        return Dataset(
            graphs=[self.graphs[i] for i in indices],
            num_classes=self.num_classes,
            feature_dim=self.feature_dim,
            edge_feature_dim=self.edge_feature_dim,
        )

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)


def _apportion(count: int, fractions: tuple[float, ...]) -> list[int]:
    """Largest-remainder apportionment of ``count`` items over fractions."""
    quotas = [count * f for f in fractions]
    base = [int(np.floor(q)) for q in quotas]
    leftover = count - sum(base)
    remainders = sorted(range(len(fractions)), key=lambda s: (-(quotas[s] - base[s]), s))
    for s in remainders[:leftover]:
        base[s] += 1
    return base


def stratified_split(
    d: Dataset, fractions: tuple[float, float, float], rng: Rng
) -> tuple[Dataset, Dataset, Dataset]:
    """Per-class largest-remainder split into (train, val, test)."""
    if any(f <= 0 for f in fractions):
        raise ContractViolation("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractViolation(f"split fractions must sum to 1, got {sum(fractions)}")
    labels = d.labels()
    split_indices: list[list[int]] = [[], [], []]
    for cls in sorted(set(int(c) for c in labels)):
        members = [i for i in range(len(d)) if labels[i] == cls]
        if len(members) < len(fractions):
            raise ContractViolation(f"class {cls} has {len(members)} graphs, fewer than splits")
        rng.shuffle(members)
        counts = _apportion(len(members), fractions)
        pos = 0
        for s, cnt in enumerate(counts):
            split_indices[s].extend(members[pos : pos + cnt])
            pos += cnt
    for s in range(3):
        split_indices[s].sort()
    return tuple(d.subset(idx) for idx in split_indices)  # type: ignore[return-value]


def dataset_to_json(d: Dataset) -> dict:
    graphs = []
    for g in d.graphs:
        entry: dict = {
            "n": g.n,
            "x": [[float(v) for v in row] for row in g.x],
            "edges": [[int(i), int(j)] for i, j in g.edges],
        }
        if g.edge_attr is not None:
            entry["edge_attr"] = [[float(v) for v in row] for row in g.edge_attr]
        entry["label"] = int(g.label)
        if g.gt_mask is not None:
            entry["gt_mask"] = [bool(v) for v in g.gt_mask]
        graphs.append(entry)
    doc: dict = {"num_classes": d.num_classes, "feature_dim": d.feature_dim}
    if d.edge_feature_dim is not None:
        doc["edge_feature_dim"] = d.edge_feature_dim
    doc["graphs"] = graphs
    return doc


def dataset_from_json(doc: dict) -> Dataset:
    graphs = []
    for entry in doc["graphs"]:
        graphs.append(
            AttributedGraph(
                n=int(entry["n"]),
                x=np.array(entry["x"], dtype=np.float64).reshape(int(entry["n"]), -1),
                edges=np.array(entry["edges"], dtype=np.int64).reshape(-1, 2),
                label=int(entry["label"]),
                edge_attr=(
                    np.array(entry["edge_attr"], dtype=np.float64)
                    if "edge_attr" in entry
                    else None
                ),
                gt_mask=(np.array(entry["gt_mask"], dtype=bool) if "gt_mask" in entry else None),
            )
        )
    return Dataset(
        graphs=graphs,
        num_classes=int(doc["num_classes"]),
        feature_dim=int(doc["feature_dim"]),
        edge_feature_dim=(int(doc["edge_feature_dim"]) if "edge_feature_dim" in doc else None),
    )


def save_dataset(d: Dataset, path) -> None:
    jsonio.dump_path(dataset_to_json(d), path)


def load_dataset(path) -> Dataset:
    return dataset_from_json(jsonio.load_path(path))
