"""Graph data model, TUDataset-format ingestion, and stratified splitting.

Graphs are simple and undirected: no self-loops, no duplicate edges, both
directions of every edge stored in a compressed sparse row (CSR) adjacency.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError

_SPLIT = re.compile(r"[,\s]+")


@dataclass
class Graph:
    """Immutable node/edge structure with node features and a class label.

    Attributes
    ----------
    num_nodes : int
        Number of nodes; node ids are 0..num_nodes-1.
    indptr, indices : np.ndarray
        CSR adjacency. ``indices[indptr[u]:indptr[u+1]]`` are the sorted
        neighbors of node ``u``; both directions of each edge are stored.
    features : np.ndarray
        Node-feature matrix of shape [num_nodes, D], float64.
    label : int
        Class index in [0, num_classes).
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    label: int

    def __post_init__(self):
        n = self.num_nodes
        if self.indptr.shape != (n + 1,):
            raise IntegrityError(f"indptr shape {self.indptr.shape} for {n} nodes")
        if self.features.shape[0] != n:
            raise IntegrityError(
                f"feature rows {self.features.shape[0]} != num_nodes {n}"
            )
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise IntegrityError("edge endpoint outside [0, num_nodes)")

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return self.indices.size // 2

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def edge_pairs(self) -> np.ndarray:
        """Undirected edges as an array of (u, v) with u < v, sorted."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        mask = src < self.indices
        pairs = np.stack([src[mask], self.indices[mask]], axis=1)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]

    @staticmethod
    def from_edges(num_nodes: int, edges, features: np.ndarray, label: int) -> "Graph":
        """Build a Graph from an iterable of (u, v) pairs.

        Self-loops are dropped; duplicates are removed; the adjacency is
        symmetrized so (u, v) implies (v, u).
        """
        pairs = set()
        for u, v in edges:
            if u == v:
                continue
            pairs.add((min(u, v), max(u, v)))
        if pairs:
            arr = np.array(sorted(pairs), dtype=np.int64)
            both = np.concatenate([arr, arr[:, ::-1]])
        else:
            both = np.zeros((0, 2), dtype=np.int64)
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        counts = np.bincount(both[:, 0], minlength=num_nodes)
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return Graph(
            num_nodes=num_nodes,
            indptr=indptr,
            indices=both[:, 1].copy(),
            features=np.asarray(features, dtype=np.float64),
            label=int(label),
        )


@dataclass
class Dataset:
    """Ordered collection of graphs with shared label and feature spaces."""

    graphs: list[Graph]
    num_classes: int
    feature_dim: int
    name: str

    def __post_init__(self):
        for i, g in enumerate(self.graphs):
            if not 0 <= g.label < self.num_classes:
                raise IntegrityError(f"graph {i}: label {g.label} out of range")
            if g.features.shape[1] != self.feature_dim:
                raise IntegrityError(
                    f"graph {i}: feature dim {g.features.shape[1]} != {self.feature_dim}"
                )

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)


@dataclass
class FoldSplit:
    """One fold of a stratified k-fold split over graph indices."""

    fold_index: int
    train_ids: np.ndarray
    test_ids: np.ndarray


def _read_int_lines(path: Path, what: str) -> list[list[int]]:
    if not path.is_file():
        raise FormatError(f"missing mandatory file for {what}: {path}")
    rows = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([int(tok) for tok in _SPLIT.split(line)])
            except ValueError as exc:
                raise FormatError(f"{path}: cannot parse line {line!r}") from exc
    return rows


def load_tudataset(directory, name: str) -> Dataset:
    """Load a dataset in TUDataset raw-file layout.

    Expects ``<name>_A.txt`` (edges, 1-indexed global node ids),
    ``<name>_graph_indicator.txt`` (graph id per node) and
    ``<name>_graph_labels.txt`` in ``directory``; ``<name>_node_labels.txt``
    is optional and, when present, is one-hot encoded into the feature
    matrix. Without node labels every node gets the constant feature [1].

    Node ids are remapped to 0-indexed per-graph ids, class labels to the
    contiguous range [0, K). Edges are deduplicated, symmetrized, and
    self-loops dropped.
    """
    directory = Path(directory)
    indicator = _read_int_lines(directory / f"{name}_graph_indicator.txt", "graph indicator")
    graph_of_node = np.array([row[0] for row in indicator], dtype=np.int64)
    num_nodes_total = graph_of_node.size
    if num_nodes_total == 0:
        raise FormatError(f"{name}_graph_indicator.txt is empty")

    num_graphs = int(graph_of_node.max())
    present = np.unique(graph_of_node)
    if graph_of_node.min() < 1 or present.size != num_graphs:
        raise FormatError(f"{name}_graph_indicator.txt: graph ids must cover 1..{num_graphs}")

    label_rows = _read_int_lines(directory / f"{name}_graph_labels.txt", "graph labels")
    raw_labels = np.array([row[0] for row in label_rows], dtype=np.int64)
    if raw_labels.size != num_graphs:
        raise FormatError(
            f"{name}_graph_labels.txt has {raw_labels.size} labels for {num_graphs} graphs"
        )
    classes = np.unique(raw_labels)
    label_map = {int(c): i for i, c in enumerate(classes)}
    labels = np.array([label_map[int(c)] for c in raw_labels], dtype=np.int64)

    # Per-graph local ids, in file order.
    local_id = np.zeros(num_nodes_total, dtype=np.int64)
    sizes = np.zeros(num_graphs, dtype=np.int64)
    for node, gid in enumerate(graph_of_node):
        local_id[node] = sizes[gid - 1]
        sizes[gid - 1] += 1

    node_label_path = directory / f"{name}_node_labels.txt"
    if node_label_path.is_file():
        nl_rows = _read_int_lines(node_label_path, "node labels")
        node_labels = np.array([row[0] for row in nl_rows], dtype=np.int64)
        if node_labels.size != num_nodes_total:
            raise FormatError(
                f"{name}_node_labels.txt has {node_labels.size} rows for {num_nodes_total} nodes"
            )
        nl_classes = np.unique(node_labels)
        nl_map = {int(c): i for i, c in enumerate(nl_classes)}
        feature_dim = nl_classes.size
        features = np.zeros((num_nodes_total, feature_dim))
        for node, c in enumerate(node_labels):
            features[node, nl_map[int(c)]] = 1.0
    else:
        feature_dim = 1
        features = np.ones((num_nodes_total, 1))

    edges_per_graph: list[list[tuple[int, int]]] = [[] for _ in range(num_graphs)]
    a_path = directory / f"{name}_A.txt"
    if not a_path.is_file():
        raise FormatError(f"missing mandatory file for edges: {a_path}")
    with a_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = _SPLIT.split(line)
            try:
                u, v = int(toks[0]), int(toks[1])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{a_path}:{lineno}: cannot parse edge {line!r}") from exc
            if not (1 <= u <= num_nodes_total) or not (1 <= v <= num_nodes_total):
                raise IntegrityError(
                    f"{a_path}:{lineno}: node {max(u, v)} not listed in graph indicator"
                )
            gu, gv = graph_of_node[u - 1], graph_of_node[v - 1]
            if gu != gv:
                raise IntegrityError(
                    f"{a_path}:{lineno}: edge ({u}, {v}) crosses graphs {gu} and {gv}"
                )
            edges_per_graph[gu - 1].append((int(local_id[u - 1]), int(local_id[v - 1])))

    graphs = []
    for g in range(num_graphs):
        # Rows in file order == local id order, even if graphs interleave.
        rows = np.flatnonzero(graph_of_node == g + 1)
        feat = features[rows].reshape(int(sizes[g]), feature_dim)
        graphs.append(Graph.from_edges(int(sizes[g]), edges_per_graph[g], feat, int(labels[g])))

    return Dataset(graphs=graphs, num_classes=classes.size, feature_dim=feature_dim, name=name)


def save_tudataset(directory, dataset: Dataset) -> None:
    """Write a dataset back out in TUDataset raw-file layout.

    Node features are written as ``_node_labels.txt`` only when every row is
    one-hot; otherwise features are omitted (the format has no general
    feature file in the subset we support).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = dataset.name
    offsets = np.cumsum([0] + [g.num_nodes for g in dataset.graphs])

    with (directory / f"{name}_graph_indicator.txt").open("w") as fh:
        for gid, g in enumerate(dataset.graphs, start=1):
            fh.write(f"{gid}\n" * g.num_nodes)
    with (directory / f"{name}_graph_labels.txt").open("w") as fh:
        for g in dataset.graphs:
            fh.write(f"{g.label}\n")
    with (directory / f"{name}_A.txt").open("w") as fh:
        for gid, g in enumerate(dataset.graphs):
            base = offsets[gid] + 1
            for u, v in g.edge_pairs():
                fh.write(f"{base + u}, {base + v}\n")
                fh.write(f"{base + v}, {base + u}\n")

    stacked = np.concatenate([g.features for g in dataset.graphs], axis=0)
    is_onehot = np.all(np.isin(stacked, (0.0, 1.0))) and np.all(stacked.sum(axis=1) == 1.0)
    if is_onehot:
        with (directory / f"{name}_node_labels.txt").open("w") as fh:
            for row in stacked:
                fh.write(f"{int(np.argmax(row))}\n")


def max_degree(dataset: Dataset) -> int:
    """Largest node degree observed anywhere in the dataset."""
    return max(int(g.degrees.max()) if g.num_nodes else 0 for g in dataset.graphs)


def degree_onehot_features(dataset: Dataset, max_deg: int | None = None) -> Dataset:
    """Replace node features with one-hot encoded degrees.

    A node of degree d gets a 1 at index min(d, max_deg); the feature
    dimension becomes max_deg + 1. When ``max_deg`` is None the dataset-wide
    maximum degree is used, which loses no information.
    """
    if max_deg is None:
        max_deg = max_degree(dataset)
    graphs = []
    for g in dataset.graphs:
        feat = np.zeros((g.num_nodes, max_deg + 1))
        idx = np.minimum(g.degrees, max_deg)
        feat[np.arange(g.num_nodes), idx] = 1.0
        graphs.append(
            Graph(
                num_nodes=g.num_nodes,
                indptr=g.indptr,
                indices=g.indices,
                features=feat,
                label=g.label,
            )
        )
    return Dataset(
        graphs=graphs,
        num_classes=dataset.num_classes,
        feature_dim=max_deg + 1,
        name=dataset.name,
    )


def stratified_kfold(dataset: Dataset, k: int, seed: int) -> list[FoldSplit]:
    """Deterministic stratified k-fold split over graph indices.

    Folds are disjoint and exhaustive; per-class test counts differ by at
    most 1 across folds. Raises ConfigError when any class has fewer than k
    samples.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    labels = dataset.labels
    rng = np.random.default_rng(seed)
    fold_members: list[list[int]] = [[] for _ in range(k)]
    for ci, c in enumerate(np.unique(labels)):
        members = np.flatnonzero(labels == c)
        if members.size < k:
            raise ConfigError(f"class {int(c)} has {members.size} samples, fewer than k={k}")
        members = members[rng.permutation(members.size)]
        # Start dealing at a class-dependent fold so remainders spread out.
        for j, idx in enumerate(members):
            fold_members[(ci + j) % k].append(int(idx))

    all_ids = np.arange(len(dataset.graphs))
    splits = []
    for f in range(k):
        test = np.array(sorted(fold_members[f]), dtype=np.int64)
        train = np.setdiff1d(all_ids, test)
        splits.append(FoldSplit(fold_index=f, train_ids=train, test_ids=test))
    return splits
