"""Process-level graph G0, its clique expansion to rate level, and the edge prior."""

import itertools
from dataclasses import dataclass
from typing import FrozenSet, Iterator, List, Sequence, Tuple

import numpy as np

from ..exceptions import GraphStructureError, ValidationError
from .model import StudyDesign

Edge = Tuple[int, int]


def _normalise_edge(h: int, k: int, p: int) -> Edge:
    if h == k:
        raise ValidationError(f"self-loop on process {h + 1}")
    if not (0 <= h < p and 0 <= k < p):
        raise ValidationError(f"edge ({h + 1},{k + 1}) outside 1..{p}")
    return (h, k) if h < k else (k, h)


@dataclass(frozen=True)
class ProcessGraph:
    """Undirected simple graph over the p processes (zero-based node ids)."""
    p: int
    edges: FrozenSet[Edge] = frozenset()

    def __post_init__(self) -> None:
        normalised = frozenset(_normalise_edge(h, k, self.p) for h, k in self.edges)
        object.__setattr__(self, "edges", normalised)

    @classmethod
    def empty(cls, p: int) -> "ProcessGraph":
        return cls(p)

    @classmethod
    def full(cls, p: int) -> "ProcessGraph":
        return cls(p, frozenset(itertools.combinations(range(p), 2)))

    @classmethod
    def from_edge_list(cls, p: int, edges: Sequence[Sequence[int]]) -> "ProcessGraph":
        """Build from one-based process pairs, as written to output files."""
        return cls(p, frozenset((int(a) - 1, int(b) - 1) for a, b in edges))

    def to_edge_list(self) -> List[List[int]]:
        """Sorted one-based edge list."""
        return [[h + 1, k + 1] for h, k in sorted(self.edges)]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_possible(self) -> int:
        return self.p * (self.p - 1) // 2

    def has_edge(self, h: int, k: int) -> bool:
        return _normalise_edge(h, k, self.p) in self.edges

    def toggle(self, h: int, k: int) -> "ProcessGraph":
        edge = _normalise_edge(h, k, self.p)
        return ProcessGraph(self.p, self.edges ^ {edge})

    def candidate_edges(self) -> List[Edge]:
        return list(itertools.combinations(range(self.p), 2))


class RateGraph:
    """Graph over the D_p rate indices stored as adjacency bitsets."""

    def __init__(self, n_nodes: int, rows: Sequence[int]):
        if len(rows) != n_nodes:
            raise ValidationError("one adjacency bitset per node is required")
        self.n_nodes = n_nodes
        self._rows: Tuple[int, ...] = tuple(int(row) for row in rows)
        for i, row in enumerate(self._rows):
            if row >> i & 1:
                raise ValidationError(f"self-loop on rate node {i + 1}")

    @classmethod
    def from_adjacency(cls, adjacency: np.ndarray) -> "RateGraph":
        adjacency = np.asarray(adjacency, dtype=bool)
        square = adjacency.shape[0] == adjacency.shape[1]
        if not square or not np.array_equal(adjacency, adjacency.T):
            raise ValidationError("adjacency must be a symmetric square matrix")
        rows = [sum(1 << int(j) for j in np.flatnonzero(row)) for row in adjacency]
        return cls(adjacency.shape[0], rows)

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self._rows[i] >> j & 1)

    def neighbours(self, i: int) -> List[int]:
        row = self._rows[i]
        return [j for j in range(self.n_nodes) if row >> j & 1]

    @property
    def n_edges(self) -> int:
        return sum(bin(row).count("1") for row in self._rows) // 2

    def adjacency(self) -> np.ndarray:
        out = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for i in range(self.n_nodes):
            out[i, self.neighbours(i)] = True
        return out

    def is_complete(self) -> bool:
        return self.n_edges == self.n_nodes * (self.n_nodes - 1) // 2

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RateGraph) and self._rows == other._rows

    def __hash__(self) -> int:
        return hash(self._rows)

    def __repr__(self) -> str:
        return f"RateGraph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


def expand(g0: ProcessGraph, design: StudyDesign) -> RateGraph:
    """Rate-level graph: a clique per process plus complete blocks for G0 edges."""
    if g0.p != design.p:
        raise ValidationError(
            f"graph has {g0.p} nodes, design has {design.p} processes"
        )
    masks = []
    for h in range(design.p):
        block = design.block(h)
        masks.append(sum(1 << i for i in range(block.start, block.stop)))
    rows = []
    for i, h in enumerate(design.process_of_rate()):
        row = masks[h]
        for k in range(design.p):
            if k != h and g0.has_edge(int(h), k):
                row |= masks[k]
        rows.append(row & ~(1 << i))
    return RateGraph(design.dim, rows)


def contract(g: RateGraph, design: StudyDesign) -> ProcessGraph:
    """Inverse of :func:`expand`.

    Raises:
        GraphStructureError: ``g`` is not the expansion of any process graph
    """
    if g.n_nodes != design.dim:
        raise GraphStructureError(f"graph has {g.n_nodes} nodes, expected {design.dim}")
    adjacency = g.adjacency()
    edges = []
    for h in range(design.p):
        inner = adjacency[design.block(h), design.block(h)]
        if not np.all(inner | np.eye(inner.shape[0], dtype=bool)):
            raise GraphStructureError(f"rates of process {h + 1} do not form a clique")
    for h, k in itertools.combinations(range(design.p), 2):
        cross = adjacency[design.block(h), design.block(k)]
        if cross.all():
            edges.append((h, k))
        elif cross.any():
            raise GraphStructureError(
                f"partial block between processes {h + 1} and {k + 1}"
            )
    return ProcessGraph(design.p, frozenset(edges))


def _check_eta(eta: float) -> None:
    if not 0 < eta < 1:
        raise ValidationError(f"edge probability eta must lie in (0, 1), got {eta}")


def log_prior(g0: ProcessGraph, eta: float) -> float:
    """log of eta^|E0| (1 - eta)^(C(p,2) - |E0|)."""
    _check_eta(eta)
    return g0.n_edges * np.log(eta) + (g0.n_possible - g0.n_edges) * np.log1p(-eta)


def log_prior_ratio(g0: ProcessGraph, edge: Edge, eta: float) -> float:
    """Prior log-ratio of toggling ``edge`` in ``g0``."""
    _check_eta(eta)
    odds = float(np.log(eta) - np.log1p(-eta))
    return -odds if g0.has_edge(*edge) else odds


def all_process_graphs(p: int) -> Iterator[ProcessGraph]:
    """Every graph over p processes, in bitmask order."""
    candidates = list(itertools.combinations(range(p), 2))
    for mask in range(1 << len(candidates)):
        edges = frozenset(e for bit, e in enumerate(candidates) if mask >> bit & 1)
        yield ProcessGraph(p, edges)
