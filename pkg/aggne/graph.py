"""Communication topologies and doubly-stochastic mixing matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import networkx as nx
import numpy as np
from scipy.linalg import svdvals

from aggne.utils import logger
from aggne.utils.errors import (
    DimensionMismatch,
    DisconnectedGraph,
    NotStochastic,
    ValidationError,
)

STOCHASTIC_TOL = 1e-9


@dataclass(frozen=True)
class Topology:
    """Undirected communication graph on nodes ``0 .. n-1``.

    Parameters
    ----------
    n : int
        Number of nodes.
    edges : frozenset of tuple
        Unordered node pairs. Pairs are normalised to ``(min, max)`` so that
        ``(i, j)`` and ``(j, i)`` denote the same edge. Self-edges are rejected.
    """

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise DimensionMismatch(f"A topology needs at least one node, got n={self.n}.")
        normalised = set()
        for edge in self.edges:
            i, j = (int(node) for node in edge)
            if i == j:
                raise ValidationError(f"Self-edge ({i}, {j}) is not allowed.")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise DimensionMismatch(
                    f"Edge ({i}, {j}) refers to a node outside 0..{self.n - 1}."
                )
            normalised.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(normalised))

    @classmethod
    def from_edge_list(cls, n: int, edges) -> Topology:
        return cls(n=n, edges=frozenset(tuple(edge) for edge in edges))

    @classmethod
    def complete(cls, n: int) -> Topology:
        return cls(n=n, edges=frozenset(combinations(range(n), 2)))

    @classmethod
    def path(cls, n: int) -> Topology:
        return cls(n=n, edges=frozenset((i, i + 1) for i in range(n - 1)))

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(sorted(self.edges))
        return graph

    @property
    def is_connected(self) -> bool:
        return nx.is_connected(self.to_networkx())

    @property
    def degrees(self) -> np.ndarray:
        graph = self.to_networkx()
        return np.array([graph.degree[node] for node in range(self.n)], dtype=int)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Doubly-stochastic, symmetric consensus weights with their spectral gap.

    Parameters
    ----------
    w : np.ndarray
        Dense ``n x n`` weight matrix.
    rho : float
        Spectral radius of ``w - ones / n``.
    topology : Topology, optional
        Graph the weights were built on. When given, the sparsity pattern of
        ``w`` is checked against it.
    """

    w: np.ndarray
    rho: float
    topology: Topology | None = None

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionMismatch(f"Mixing matrix must be square, got shape {w.shape}.")
        if np.any(w < 0):
            raise NotStochastic("Mixing matrix has negative entries.")
        _check_stochastic(w, tol=1e-12)
        if not np.allclose(w, w.T, rtol=0, atol=1e-12):
            raise NotStochastic("Mixing matrix is not symmetric.")
        if self.topology is not None:
            allowed = np.eye(w.shape[0], dtype=bool)
            for i, j in self.topology.edges:
                allowed[i, j] = allowed[j, i] = True
            if np.any(w[~allowed] > 0):
                raise NotStochastic("Mixing matrix has weight on a pair that is not an edge.")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def norm_w_minus_i(self) -> float:
        """Spectral norm of ``W - I``."""
        return float(svdvals(self.w - np.eye(self.n))[0])

    def mix(self, values: np.ndarray) -> np.ndarray:
        """Neighbour average ``(W kron I_m) v`` for an ``n x m`` block of local values."""
        return self.w @ values

    @classmethod
    def from_weights(cls, w) -> MixingMatrix:
        w = np.asarray(w, dtype=float)
        return cls(w=w, rho=spectral_gap(w))


def _check_stochastic(w: np.ndarray, tol: float):
    row_dev = np.max(np.abs(w.sum(axis=1) - 1.0))
    col_dev = np.max(np.abs(w.sum(axis=0) - 1.0))
    if row_dev > tol or col_dev > tol:
        raise NotStochastic(
            f"Matrix is not doubly stochastic (row deviation {row_dev:.3e}, "
            f"column deviation {col_dev:.3e})."
        )


def spectral_gap(w) -> float:
    """Spectral radius of ``W - ones / n``.

    Computed as the largest singular value, which equals the spectral radius for
    the symmetric matrices produced by :func:`build_metropolis`.

    Parameters
    ----------
    w : array_like
        Doubly-stochastic ``n x n`` matrix.

    Returns
    -------
    float
        Value in ``[0, 1]``; below 1 exactly when the underlying graph is connected.

    Raises
    ------
    NotStochastic
        If a row or column sum deviates from one by more than 1e-9.
    """
    w = np.asarray(w, dtype=float)
    _check_stochastic(w, tol=STOCHASTIC_TOL)
    n = w.shape[0]
    return float(svdvals(w - np.full((n, n), 1.0 / n))[0])


def build_metropolis(topology: Topology) -> MixingMatrix:
    """Metropolis-Hastings weights on an undirected connected graph.

    ``w_ij = 1 / (1 + max(deg_i, deg_j))`` on edges, the diagonal takes the
    remaining mass of each row.

    Parameters
    ----------
    topology : Topology
        Connected communication graph.

    Returns
    -------
    MixingMatrix
        Symmetric doubly-stochastic weights with cached spectral gap.

    Raises
    ------
    DisconnectedGraph
        If the topology is not connected.
    """
    if not topology.is_connected:
        raise DisconnectedGraph(f"Topology with {topology.n} nodes is not connected.")
    degrees = topology.degrees
    w = np.zeros((topology.n, topology.n))
    for i, j in topology.sorted_edges():
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(degrees[i], degrees[j]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    rho = spectral_gap(w)
    logger.debug(
        "Metropolis weights on %i nodes, %i edges: rho=%.6f", topology.n, len(topology.edges), rho
    )
    return MixingMatrix(w=w, rho=rho, topology=topology)


def random_connected_topology(n: int, edge_prob: float, seed: int) -> Topology:
    """Seeded Erdos-Renyi graph, made connected by linking its components if needed.

    The draw is `networkx.gnp_random_graph`. If it is disconnected, the
    components are ordered by their smallest node and each one is joined to the
    union of the previous ones by a single edge between randomly chosen nodes.

    Parameters
    ----------
    n : int
        Number of nodes, at least 2.
    edge_prob : float
        Edge probability in ``(0, 1]``.
    seed : int
        Seed of the graph draw and of the linking edges.

    Returns
    -------
    Topology
        Connected topology, deterministic per ``(n, edge_prob, seed)``.
    """
    if n < 2:
        raise DimensionMismatch(f"A random topology needs n >= 2, got {n}.")
    if not 0 < edge_prob <= 1:
        raise ValidationError(f"edge_prob must lie in (0, 1], got {edge_prob}.")
    graph = nx.gnp_random_graph(n, edge_prob, seed=seed)
    components = sorted((sorted(nodes) for nodes in nx.connected_components(graph)), key=min)
    if len(components) > 1:
        logger.debug(
            "Erdos-Renyi draw (n=%i, p=%.3f, seed=%i) has %i components, linking them",
            n,
            edge_prob,
            seed,
            len(components),
        )
        rng = np.random.default_rng(seed)
        linked = list(components[0])
        for nodes in components[1:]:
            graph.add_edge(int(rng.choice(linked)), int(rng.choice(nodes)))
            linked.extend(nodes)
    return Topology.from_edge_list(n, graph.edges)
