"""Mobility networks: synthetic random graphs, edge-list loading, rate assignment.

``A[i, j]`` is the fraction of subpopulation ``j`` travelling to ``i`` per
day, so column sums are the fraction of ``j`` that leaves each day.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import networkx as nx
import numpy as np

from .errors import (DisconnectedAfterRetries, InvalidSpec, ParseError,
                     RateTooLarge, SelfLoopError)

log = logging.getLogger(__name__)

MODELS = ("ER", "BA", "WS", "RGG", "FILE")
DEFAULT_POPULATION = 1e6
DEFAULT_MOBILITY_RATE = 0.01
MAX_RETRIES = 100

BUNDLED_GRAPHS = {
    "contiguous_usa": "contiguous_usa.csv",
}


@dataclass(frozen=True)
class GraphSpec:
    model: str = "RGG"
    n: int = 100
    avg_degree: float = 4.0
    rewire_prob: float = 0.1
    rng_seed: int = 0
    file_path: str | None = None
    weighted: bool = False

    def validate(self):
        if self.model not in MODELS:
            raise InvalidSpec(f"unknown graph model {self.model!r}")
        if self.model == "FILE":
            if not self.file_path:
                raise InvalidSpec("model FILE requires file_path")
            return
        if self.file_path:
            raise InvalidSpec("file_path is only valid with model FILE")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidSpec("n must be an integer >= 2", n=self.n)
        if not 0 < self.avg_degree < self.n:
            raise InvalidSpec("avg_degree must lie in (0, n)", avg_degree=self.avg_degree)
        if not 0.0 <= self.rewire_prob <= 1.0:
            raise InvalidSpec("rewire_prob must lie in [0, 1]", rewire_prob=self.rewire_prob)


@dataclass
class MobilityNetwork:
    A: np.ndarray
    P: np.ndarray
    labels: list = field(default_factory=list)
    directed: bool = False
    weighted: bool = False

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        n = self.A.shape[0]
        if self.P is None:
            self.P = np.full(n, DEFAULT_POPULATION)
        self.P = np.asarray(self.P, dtype=np.float64)
        if not self.labels:
            self.labels = [str(i) for i in range(n)]

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def num_links(self):
        support = self.A > 0
        if self.directed:
            return int(support.sum())
        return int(np.triu(support | support.T, 1).sum())

    def degree(self):
        """Number of neighbours of each node (in or out)."""
        support = (self.A > 0) | (self.A.T > 0)
        return support.sum(axis=0)

    def binary(self):
        return (self.A > 0).astype(np.float64)

    def check(self):
        """Raise ``InvalidSpec`` if any structural invariant is broken."""
        A, P = self.A, self.P
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidSpec("A must be square", shape=A.shape)
        if P.shape != (A.shape[0],):
            raise InvalidSpec("P must have one entry per node", shape=P.shape)
        if np.any(A < 0) or np.any(np.diag(A) != 0):
            raise InvalidSpec("A must be nonnegative with zero diagonal")
        if np.any(P <= 0):
            raise InvalidSpec("populations must be positive")
        if not self.directed and np.max(np.abs(A - A.T), initial=0.0) > 1e-12:
            raise InvalidSpec("undirected network has an asymmetric A")
        if np.any(A.sum(axis=0) >= 1):
            raise InvalidSpec("a column of A sums to 1 or more")
        return self

    def to_networkx(self):
        G = nx.DiGraph() if self.directed else nx.Graph()
        G.add_nodes_from(range(self.n))
        rows, cols = np.nonzero(self.A)
        for i, j in zip(rows, cols):
            G.add_edge(int(j), int(i), weight=float(self.A[i, j]))
        return G


def _random_graph(spec, seed):
    n = int(spec.n)
    if spec.model == "ER":
        return nx.gnp_random_graph(n, spec.avg_degree / (n - 1), seed=seed)
    if spec.model == "BA":
        m0 = max(1, int(round(spec.avg_degree / 2)))
        if m0 >= n:
            raise InvalidSpec("BA attachment count must be below n", m0=m0, n=n)
        return nx.barabasi_albert_graph(n, m0, seed=seed)
    if spec.model == "WS":
        k = 2 * max(1, int(round(spec.avg_degree / 2)))
        if k >= n:
            raise InvalidSpec("WS lattice degree must be below n", k=k, n=n)
        return nx.watts_strogatz_graph(n, k, spec.rewire_prob, seed=seed)
    if spec.model == "RGG":
        radius = math.sqrt(spec.avg_degree / (math.pi * n))
        return _join_components(nx.random_geometric_graph(n, radius, seed=seed))
    raise InvalidSpec(f"cannot generate model {spec.model!r}")


def _join_components(G):
    """Link stray components of a geometric graph to the main one by nearest pairs.

    At the sparse densities used here a unit-square geometric graph is
    almost never connected, so reseeding alone cannot produce one.
    """
    pos = np.array([G.nodes[i]["pos"] for i in range(G.number_of_nodes())])
    comps = sorted((sorted(c) for c in nx.connected_components(G)), key=lambda c: (-len(c), c[0]))
    main, rest = list(comps[0]), comps[1:]
    while rest:
        best = None
        for ci, comp in enumerate(rest):
            d = np.linalg.norm(pos[comp][:, None, :] - pos[main][None, :, :], axis=2)
            a, b = np.unravel_index(np.argmin(d), d.shape)
            if best is None or d[a, b] < best[0]:
                best = (d[a, b], ci, comp[a], main[b])
        _, ci, u, v = best
        G.add_edge(u, v)
        main.extend(rest.pop(ci))
    return G


def generate(spec: GraphSpec) -> MobilityNetwork:
    """Connected undirected graph with binary ``A``; reseeds on disconnection."""
    spec.validate()
    if spec.model == "FILE":
        return load_edge_list(spec.file_path, spec.weighted)
    for attempt in range(MAX_RETRIES):
        G = _random_graph(spec, spec.rng_seed + attempt)
        if nx.is_connected(G):
            break
    else:
        raise DisconnectedAfterRetries(f"{spec.model} graph stayed disconnected",
                                       n=spec.n, attempts=MAX_RETRIES)
    A = nx.to_numpy_array(G, nodelist=range(int(spec.n)), weight=None)
    np.fill_diagonal(A, 0.0)
    return MobilityNetwork(A=A, P=None, directed=False, weighted=False)


def bundled_graph_path(name: str) -> Path:
    try:
        fname = BUNDLED_GRAPHS[name]
    except KeyError:
        raise InvalidSpec(f"no bundled graph named {name!r}",
                          available=",".join(sorted(BUNDLED_GRAPHS))) from None
    return Path(str(resources.files("epitopo") / "data" / fname))


def load_edge_list(path, weighted: bool = False, directed: bool = False) -> MobilityNetwork:
    """Read ``src,dst[,weight]`` lines; node ids are remapped in first-appearance order.

    Unweighted files yield a binary adjacency awaiting ``assign_mobility``.
    With ``weighted`` the third column is the fraction of ``src`` travelling to
    ``dst`` and is stored as ``A[dst, src]`` (mirrored unless ``directed``).
    """
    path = Path(path)
    if not path.exists() and str(path) in BUNDLED_GRAPHS:
        path = bundled_graph_path(str(path))
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read edge list: {exc}", path=str(path)) from None

    index, edges = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
            raise ParseError("expected 'src,dst' or 'src,dst,weight'", path=str(path), line=lineno)
        src, dst = parts[0], parts[1]
        if src == dst:
            raise SelfLoopError(f"self loop on node {src!r}", path=str(path), line=lineno)
        w = 1.0
        if len(parts) == 3:
            try:
                w = float(parts[2])
            except ValueError:
                raise ParseError(f"bad weight {parts[2]!r}", path=str(path), line=lineno) from None
            if not math.isfinite(w) or w < 0:
                raise ParseError(f"weight must be a nonnegative number, got {parts[2]!r}",
                                 path=str(path), line=lineno)
        elif weighted:
            raise ParseError("weighted load needs a weight column", path=str(path), line=lineno)
        for node in (src, dst):
            index.setdefault(node, len(index))
        key = (src, dst) if directed else tuple(sorted((src, dst), key=index.get))
        if key in edges:
            warnings.warn(f"{path}:{lineno}: duplicate edge {src},{dst} merged", stacklevel=2)
            edges[key] += w
        else:
            edges[key] = w

    if not index:
        raise ParseError("edge list contains no edges", path=str(path))

    n = len(index)
    A = np.zeros((n, n))
    for (src, dst), w in edges.items():
        value = w if weighted else 1.0
        A[index[dst], index[src]] = value
        if not directed:
            A[index[src], index[dst]] = value
    labels = sorted(index, key=index.get)
    return MobilityNetwork(A=A, P=None, labels=labels, directed=directed, weighted=weighted)


def assign_mobility(net: MobilityNetwork, rate: float = DEFAULT_MOBILITY_RATE) -> MobilityNetwork:
    """Replace every unit entry of a binary ``A`` with ``rate``."""
    if net.weighted:
        warnings.warn("weighted network: mobility rates left unchanged", stacklevel=2)
        return net
    if not rate > 0:
        raise InvalidSpec("mobility rate must be positive", rate=rate)
    col = net.binary().sum(axis=0)
    if col.size and rate * col.max() >= 1:
        raise RateTooLarge("a column of A would reach 1",
                           rate=rate, max_in_degree=int(col.max()))
    return replace(net, A=net.binary() * rate)


def with_populations(net: MobilityNetwork, P) -> MobilityNetwork:
    P = np.broadcast_to(np.asarray(P, dtype=np.float64), (net.n,)).copy()
    return replace(net, P=P)
