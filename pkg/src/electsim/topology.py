"""Graph families, port numberings and random-walk quantities.

Topologies are stored in CSR form so that a complete graph on a few thousand
nodes stays cheap.  Ports are 1-based: port ``p`` of node ``u`` leads to
``port_map[offsets[u] + p - 1]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import (
    ConvergenceFailureError,
    GenerationFailureError,
    InvalidSizeError,
    NoConvergenceError,
    PreconditionError,
)

__all__ = [
    "Topology",
    "WalkProfile",
    "from_edges",
    "make_complete",
    "make_hypercube",
    "make_cycle",
    "make_random_regular",
    "make_family",
    "assign_random_ports",
    "transition_matrix",
    "stationary_distribution",
    "mixing_time",
    "verify_mixing",
    "dumps_topology",
    "loads_topology",
]

# Node indices are stored as int32.
MAX_NODES = 2**31 - 1
MAX_PAIRING_ATTEMPTS = 100
MIXING_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected simple graph with a per-node port numbering."""

    n: int
    offsets: np.ndarray
    neighbors: np.ndarray
    port_map: np.ndarray
    lazy: bool = False
    family: str = "custom"

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def num_edges(self) -> int:
        return int(self.offsets[-1]) // 2

    def degree(self, u: int) -> int:
        return int(self.offsets[u + 1] - self.offsets[u])

    def adjacency(self, u: int) -> tuple[int, ...]:
        """Neighbors of ``u`` in ascending order."""
        return tuple(self.neighbors[self.offsets[u]:self.offsets[u + 1]].tolist())

    def ports(self, u: int) -> tuple[int, ...]:
        """Neighbor reached through each port of ``u`` (index 0 is port 1)."""
        return tuple(self.port_map[self.offsets[u]:self.offsets[u + 1]].tolist())

    def neighbor_at(self, u: int, port: int) -> int:
        return int(self.port_map[self.offsets[u] + port - 1])

    def edges(self) -> np.ndarray:
        """Edge list as an ``(|E|, 2)`` array with ``u < v``, lexicographically sorted."""
        src = np.repeat(np.arange(self.n), self.degrees)
        mask = src < self.neighbors
        return np.stack([src[mask], self.neighbors[mask]], axis=1)

    @cached_property
    def sparse(self) -> csr_matrix:
        data = np.ones(len(self.neighbors), dtype=np.int8)
        return csr_matrix((data, self.neighbors, self.offsets), shape=(self.n, self.n))

    @cached_property
    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        ncomp, _ = connected_components(self.sparse, directed=False)
        return ncomp == 1

    @cached_property
    def is_bipartite(self) -> bool:
        if self.n == 1 or not self.is_connected:
            return False
        dist = shortest_path(self.sparse, unweighted=True, directed=False, indices=0)
        level = dist.astype(np.int64)
        src = np.repeat(np.arange(self.n), self.degrees)
        return bool(np.all(level[src] != level[self.neighbors]))

    @property
    def is_complete(self) -> bool:
        return bool(np.all(self.degrees == self.n - 1))

    @cached_property
    def arc_table(self) -> tuple[np.ndarray, np.ndarray]:
        """For every arc index ``a = offsets[u] + p - 1``: (destination, in-port at destination)."""
        n = self.n
        src = np.repeat(np.arange(n, dtype=np.int64), self.degrees)
        # port position -> sorted position, and sorted arc -> sorted reverse arc
        by_port = np.argsort(src * n + self.port_map)
        sorted_of = np.empty_like(by_port)
        sorted_of[by_port] = np.arange(len(by_port))
        transpose = np.argsort(self.neighbors.astype(np.int64) * n + src)
        reverse = np.empty_like(transpose)
        reverse[transpose] = np.arange(len(transpose))
        back = by_port[reverse[sorted_of]]
        dst = self.port_map.astype(np.int64)
        in_port = back - self.offsets[dst] + 1
        return self.port_map.astype(np.int32), in_port.astype(np.int32)

    def validate(self) -> None:
        """Check symmetry, port bijectivity and connectivity; raise on failure."""
        n = self.n
        if len(self.offsets) != n + 1 or self.offsets[0] != 0:
            raise PreconditionError("malformed offsets")
        src = np.repeat(np.arange(n, dtype=np.int64), self.degrees)
        fwd = src * n + self.neighbors
        back = self.neighbors.astype(np.int64) * n + src
        if not np.array_equal(np.sort(fwd), np.sort(back)):
            raise PreconditionError("adjacency is not symmetric")
        if np.any(src == self.neighbors):
            raise PreconditionError("self-loop")
        for u in range(n):
            lo, hi = self.offsets[u], self.offsets[u + 1]
            row = self.neighbors[lo:hi]
            if np.any(np.diff(row) <= 0):
                raise PreconditionError(f"node {u}: adjacency not strictly sorted")
            if not np.array_equal(np.sort(self.port_map[lo:hi]), row):
                raise PreconditionError(f"node {u}: port map is not a bijection")
        if not self.is_connected:
            raise PreconditionError("topology is disconnected")


@dataclass(frozen=True)
class WalkProfile:
    stationary: np.ndarray = field(repr=False)
    mixing_time: int
    lazy_applied: bool


def _from_csr(n, offsets, neighbors, *, lazy=False, family="custom") -> Topology:
    neighbors = np.ascontiguousarray(neighbors, dtype=np.int32)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    topo = Topology(n, offsets, neighbors, neighbors.copy(), lazy, family)
    topo.validate()
    return topo


def from_edges(n: int, edges, *, lazy: bool = False, family: str = "custom") -> Topology:
    """Build a topology from an undirected edge list; ports start as identity."""
    if n < 1 or n > MAX_NODES:
        raise InvalidSizeError(f"node count {n} out of range")
    e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise PreconditionError("edge endpoint out of range")
    if np.any(e[:, 0] == e[:, 1]):
        raise PreconditionError("self-loop in edge list")
    both = np.concatenate([e, e[:, ::-1]])
    key = np.unique(both[:, 0] * n + both[:, 1])
    if len(key) != len(both):
        raise PreconditionError("duplicate edge in edge list")
    src, dst = key // n, key % n
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
    return _from_csr(n, offsets, dst, lazy=lazy, family=family)


def make_complete(n: int) -> Topology:
    if n < 2:
        raise InvalidSizeError(f"complete graph needs n >= 2, got {n}")
    if n > MAX_NODES:
        raise InvalidSizeError(f"node count {n} overflows the node index type")
    grid = np.broadcast_to(np.arange(n, dtype=np.int32), (n, n))
    neighbors = grid[~np.eye(n, dtype=bool)]
    offsets = np.arange(n + 1, dtype=np.int64) * (n - 1)
    return _from_csr(n, offsets, neighbors, family="complete")


def make_hypercube(dim: int) -> Topology:
    """Hypercube on ``2**dim`` nodes; walks are always lazy since it is bipartite."""
    if dim < 1:
        raise InvalidSizeError(f"hypercube needs dim >= 1, got {dim}")
    if 2**dim > MAX_NODES:
        raise InvalidSizeError(f"2**{dim} overflows the node index type")
    n = 2**dim
    nodes = np.arange(n, dtype=np.int64)[:, None]
    neighbors = np.sort(nodes ^ (1 << np.arange(dim, dtype=np.int64)), axis=1)
    offsets = np.arange(n + 1, dtype=np.int64) * dim
    return _from_csr(n, offsets, neighbors.ravel(), lazy=True, family="hypercube")


def make_cycle(n: int) -> Topology:
    if n < 3:
        raise InvalidSizeError(f"cycle needs n >= 3, got {n}")
    if n > MAX_NODES:
        raise InvalidSizeError(f"node count {n} overflows the node index type")
    u = np.arange(n)
    edges = np.stack([u, (u + 1) % n], axis=1)
    return from_edges(n, edges, lazy=(n % 2 == 0), family="cycle")


def _pair_stubs(n: int, d: int, rng: np.random.Generator) -> set[tuple[int, int]] | None:
    # One pairing-model attempt. Stubs that would form a loop or multi-edge are
    # re-paired among themselves until none remain or no legal pair is left.
    edges: set[tuple[int, int]] = set()
    stubs = np.repeat(np.arange(n), d)
    while len(stubs):
        rng.shuffle(stubs)
        leftover = []
        for a, b in stubs.reshape(-1, 2).tolist():
            if a > b:
                a, b = b, a
            if a != b and (a, b) not in edges:
                edges.add((a, b))
            else:
                leftover += (a, b)
        if leftover:
            left = sorted(set(leftover))
            if not any(
                (left[i], left[j]) not in edges
                for i in range(len(left))
                for j in range(i + 1, len(left))
            ):
                return None
        stubs = np.array(leftover, dtype=np.int64)
    return edges


def make_random_regular(n: int, d: int, seed: int) -> Topology:
    """Simple connected ``d``-regular graph from the pairing model."""
    if d < 3 or d >= n:
        raise InvalidSizeError(f"need 3 <= d < n, got n={n}, d={d}")
    if (n * d) % 2:
        raise InvalidSizeError(f"n*d must be even, got n={n}, d={d}")
    if n > MAX_NODES:
        raise InvalidSizeError(f"node count {n} overflows the node index type")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_PAIRING_ATTEMPTS):
        edges = _pair_stubs(n, d, rng)
        if edges is None:
            continue
        e = np.array(sorted(edges), dtype=np.int64)
        both = np.concatenate([e, e[:, ::-1]])
        adj = csr_matrix((np.ones(len(both)), (both[:, 0], both[:, 1])), shape=(n, n))
        if connected_components(adj, directed=False)[0] != 1:
            continue
        topo = from_edges(n, e, family="random-regular")
        if topo.is_bipartite:
            topo = replace(topo, lazy=True)
        return topo
    raise GenerationFailureError(
        f"no simple connected {d}-regular graph on {n} nodes after "
        f"{MAX_PAIRING_ATTEMPTS} pairing attempts"
    )


def make_family(family: str, *, n: int | None = None, dim: int | None = None,
                d: int | None = None, seed: int = 0) -> Topology:
    """Dispatch on a family name as used by the CLI."""
    if family == "complete":
        return make_complete(n)
    if family == "hypercube":
        return make_hypercube(dim)
    if family == "cycle":
        return make_cycle(n)
    if family == "random-regular":
        return make_random_regular(n, d, seed)
    raise InvalidSizeError(f"unknown family {family!r}")


def assign_random_ports(topology: Topology, seed: int) -> Topology:
    """Replace every node's port map by an independent uniform permutation."""
    rng = np.random.default_rng(seed)
    port_map = np.empty_like(topology.neighbors)
    offs = topology.offsets
    for u in range(topology.n):
        lo, hi = offs[u], offs[u + 1]
        port_map[lo:hi] = rng.permutation(topology.neighbors[lo:hi])
    return replace(topology, port_map=port_map)


def transition_matrix(topology: Topology, lazy: bool | None = None) -> np.ndarray:
    """Dense row-stochastic matrix; row ``i`` is the step distribution from node ``i``."""
    lazy = topology.lazy if lazy is None else lazy
    n = topology.n
    P = np.zeros((n, n))
    src = np.repeat(np.arange(n), topology.degrees)
    P[src, topology.neighbors] = 1.0 / topology.degrees[src]
    if lazy:
        P *= 0.5
        P[np.diag_indices(n)] += 0.5
    return P


def stationary_distribution(topology: Topology) -> np.ndarray:
    if not topology.is_connected:
        raise PreconditionError("stationary distribution needs a connected topology")
    deg = topology.degrees.astype(float)
    return deg / (2.0 * topology.num_edges)


def _deviation(dists: np.ndarray, pi: np.ndarray) -> float:
    # dists holds one distribution per column
    return float(np.max(np.abs(dists - pi[:, None])))


def _mixed(deviation: float, n: int) -> bool:
    return deviation <= 1.0 / (2 * n) + MIXING_SLACK


def mixing_time(topology: Topology, max_iter: int | None = None) -> WalkProfile:
    """Smallest ``k`` with ``max |A pi_k - pi*| <= 1/(2n)`` over all point starts.

    All ``n`` basis starts are advanced together: column ``i`` of the working
    matrix is the walk distribution after ``k`` steps from node ``i``.
    """
    n = topology.n
    pi = stationary_distribution(topology)
    if topology.is_bipartite and not topology.lazy:
        raise NoConvergenceError(
            f"{topology.family} topology is bipartite; a plain walk never mixes (use lazy walks)"
        )
    cap = 64 * n if max_iter is None else max_iter
    step = transition_matrix(topology).T
    dists = np.eye(n)
    for k in range(cap + 1):
        dists = step @ dists
        if _mixed(_deviation(dists, pi), n):
            return WalkProfile(pi, k, topology.lazy)
    raise ConvergenceFailureError(f"mixing predicate not met within {cap} iterations")


def verify_mixing(topology: Topology, k: int) -> bool:
    """Re-check the mixing predicate at ``k`` with a repeated-squaring matrix power."""
    if k < 0:
        return False
    n = topology.n
    pi = stationary_distribution(topology)
    power = np.linalg.matrix_power(transition_matrix(topology).T, k + 1)
    return _mixed(_deviation(power, pi), n)


def dumps_topology(topology: Topology) -> str:
    """Canonical text form: one JSON object with sorted keys."""
    doc = {
        "family": topology.family,
        "n": topology.n,
        "lazy": bool(topology.lazy),
        "edges": topology.edges().tolist(),
        "ports": [topology.ports(u) for u in range(topology.n)],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads_topology(text: str) -> Topology:
    doc = json.loads(text)
    base = from_edges(doc["n"], doc["edges"], lazy=doc["lazy"], family=doc["family"])
    port_map = np.array([p for row in doc["ports"] for p in row], dtype=np.int32)
    topo = replace(base, port_map=port_map)
    topo.validate()
    return topo
