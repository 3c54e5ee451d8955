import logging
from dataclasses import dataclass
from itertools import chain
from typing import Dict

import networkx as nx
import numpy as np

from app.services.network import ContactNetwork

logger = logging.getLogger(__name__)


@dataclass
class UserBase:
    nodes: np.ndarray  # sorted person ids
    topology: str
    k_ext: np.ndarray  # per user
    index_map: np.ndarray  # person id -> user index, -1 outside

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    @property
    def interior_count(self) -> int:
        return int(np.count_nonzero(self.k_ext == 0))

    @property
    def exterior_connectivity(self) -> float:
        return float(self.k_ext.mean()) if self.size else 0.0

    def summary(self) -> Dict:
        return {
            "topology": self.topology,
            "population": self.size,
            "interior": self.interior_count,
            "exterior_connectivity": round(self.exterior_connectivity, 4),
        }


def _neighbor_closure(graph: nx.Graph, target: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy growth from random seeds in BFS order, stopping at exactly target nodes"""
    chosen = np.zeros(graph.number_of_nodes(), dtype=bool)
    count = 0
    while count < target:
        seed = int(rng.choice(np.flatnonzero(~chosen)))
        reached = chain([seed], (node for _, children in nx.bfs_successors(graph, seed) for node in sorted(children)))
        for node in reached:
            if not chosen[node]:
                chosen[node] = True
                count += 1
                if count == target:
                    break
    return np.flatnonzero(chosen)


def exterior_degrees(network: ContactNetwork, members: np.ndarray) -> np.ndarray:
    """Static person neighbors outside the member set"""
    adj = network.adjacency()[: network.n_persons, : network.n_persons]
    inside = np.zeros(network.n_persons, dtype=bool)
    inside[members] = True
    rows = adj[members]
    total = np.asarray(rows.sum(axis=1)).ravel()
    within = np.asarray(rows @ inside.astype(np.int64)).ravel()
    return (total - within).astype(np.int64)


def select_user_base(network: ContactNetwork, fraction: float, topology: str, rng: np.random.Generator) -> UserBase:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("user base fraction must lie in (0, 1]")
    n = network.n_persons
    target = max(1, int(round(fraction * n)))
    if target >= n:
        members = np.arange(n)
    elif topology == "random":
        members = np.sort(rng.choice(n, size=target, replace=False))
    elif topology == "neighbor":
        members = _neighbor_closure(network.person_graph(), target, rng)
    else:
        raise ValueError(f"Unknown user base topology {topology}")

    k_ext = exterior_degrees(network, members)
    index_map = np.full(n, -1, dtype=np.int64)
    index_map[members] = np.arange(members.size)
    network.k_ext[:] = 0
    network.k_ext[members] = k_ext
    base = UserBase(nodes=members, topology=topology, k_ext=k_ext, index_map=index_map)
    logger.info(f"Selected {topology} user base: {base.summary()}")
    return base
