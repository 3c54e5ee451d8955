"""Static three-group contact network, daily edge schedules and hospital transfers.

Node ids: healthcare workers occupy [0, n_hcw), community members
[n_hcw, n_persons) and hospital beds [n_persons, n_nodes). The bed pool
grows on demand, so bed ids are appended and person ids never move.
"""
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from networkx.algorithms import bipartite
from scipy import integrate, optimize, sparse

from app import config
from app.models.scenario_config import NetworkConfig
from app.utils.exceptions import (
    FormatVersionError,
    HospitalTransferError,
    NetworkGenerationError,
    UnknownNodeError,
)
from app.utils.rng import child_seed, make_rng

logger = logging.getLogger(__name__)

GROUP_HOSPITAL, GROUP_HCW, GROUP_COMMUNITY = 0, 1, 2
GROUP_TAGS = ("a", "b", "c")

BLOCK_AA, BLOCK_AB, BLOCK_BB, BLOCK_BC, BLOCK_CC = range(5)
BLOCK_TAGS = ("aa", "ab", "bb", "bc", "cc")
HOSPITAL_BLOCKS = (BLOCK_AA, BLOCK_AB)


@dataclass(frozen=True)
class NodeMeta:
    id: int
    group: str
    age_band: Optional[int]
    lambda_min: float
    lambda_max: float
    k_ext: int = 0


@dataclass
class HospitalStay:
    node: int
    bed: int
    start: float
    end: float = np.inf


@dataclass
class ContactNetwork:
    params: NetworkConfig
    n_persons: int
    n_hcw: int
    group: np.ndarray
    age_band: np.ndarray
    lambda_min: np.ndarray
    lambda_max: np.ndarray
    base_lambda_min: np.ndarray
    base_lambda_max: np.ndarray
    edges: np.ndarray  # (E, 2), u < v
    edge_block: np.ndarray
    mean_degree_community: float
    k_ext: np.ndarray
    bed_occupant: np.ndarray
    bed_of: np.ndarray
    stay_log: List[HospitalStay] = field(default_factory=list)
    rng: Optional[np.random.Generator] = None
    _adjacency: Optional[sparse.csr_matrix] = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return int(self.group.size)

    @property
    def n_beds(self) -> int:
        return self.n_nodes - self.n_persons

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def k_hat(self) -> float:
        return self.mean_degree_community

    @property
    def bed_ids(self) -> np.ndarray:
        return np.arange(self.n_persons, self.n_nodes)

    @property
    def person_ids(self) -> np.ndarray:
        return np.arange(self.n_persons)

    @property
    def community_ids(self) -> np.ndarray:
        return np.arange(self.n_hcw, self.n_persons)

    @property
    def nodes(self) -> List[NodeMeta]:
        return [self.node(i) for i in range(self.n_nodes)]

    def check_node(self, node_id: int):
        if not 0 <= int(node_id) < self.n_nodes:
            raise UnknownNodeError(f"Node {node_id} not found", details={"node": int(node_id)})

    def node(self, node_id: int) -> NodeMeta:
        self.check_node(node_id)
        band = int(self.age_band[node_id])
        return NodeMeta(
            id=int(node_id),
            group=GROUP_TAGS[self.group[node_id]],
            age_band=band if band >= 0 else None,
            lambda_min=float(self.lambda_min[node_id]),
            lambda_max=float(self.lambda_max[node_id]),
            k_ext=int(self.k_ext[node_id]),
        )

    def adjacency(self) -> sparse.csr_matrix:
        if self._adjacency is None or self._adjacency.shape[0] != self.n_nodes:
            u, v = self.edges[:, 0], self.edges[:, 1]
            data = np.ones(2 * u.size, dtype=np.int8)
            self._adjacency = sparse.csr_matrix(
                (data, (np.r_[u, v], np.r_[v, u])), shape=(self.n_nodes, self.n_nodes)
            )
        return self._adjacency

    def neighbors(self, node_id: int) -> np.ndarray:
        self.check_node(node_id)
        adj = self.adjacency()
        return adj.indices[adj.indptr[node_id]:adj.indptr[node_id + 1]]

    def degrees(self, block: Optional[int] = None) -> np.ndarray:
        edges = self.edges if block is None else self.edges[self.edge_block == block]
        return np.bincount(edges.ravel(), minlength=self.n_nodes)

    def person_graph(self) -> nx.Graph:
        """Static person-to-person graph (bed nodes excluded)"""
        mask = (self.edges[:, 0] < self.n_persons) & (self.edges[:, 1] < self.n_persons)
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_persons))
        graph.add_edges_from(self.edges[mask].tolist())
        return graph

    def summary(self) -> Dict:
        blocks = np.bincount(self.edge_block, minlength=len(BLOCK_TAGS))
        sizes = np.bincount(self.group, minlength=3)
        return {
            "n_persons": self.n_persons,
            "n_beds": self.n_beds,
            "group_sizes": {GROUP_TAGS[g]: int(sizes[g]) for g in range(3)},
            "n_edges": self.n_edges,
            "edges_per_block": {BLOCK_TAGS[b]: int(blocks[b]) for b in range(len(BLOCK_TAGS))},
            "mean_degree_community": float(self.degrees(BLOCK_CC)[self.community_ids].mean())
            if self.community_ids.size else 0.0,
            "mean_degree_hcw": float(self.degrees(BLOCK_BB)[: self.n_hcw].mean()) if self.n_hcw else 0.0,
            "k_hat": self.k_hat,
        }


# --- generation -------------------------------------------------------------

def _truncated_power_law_mean(lower: float, upper: float, exponent: float) -> float:
    a1, a2 = 1.0 - exponent, 2.0 - exponent
    return (a1 / a2) * (upper ** a2 - lower ** a2) / (upper ** a1 - lower ** a1)


def _power_law_degrees(n: int, exponent: float, mean: float, k_max: int, rng: np.random.Generator) -> np.ndarray:
    """Degree sequence from a continuous truncated power law with the given mean"""
    if exponent <= 2:
        raise NetworkGenerationError(f"community_exponent must exceed 2, got {exponent}")
    if not 0 < mean < k_max:
        raise NetworkGenerationError(
            f"community_mean_degree must lie in (0, community_max_degree={k_max}), got {mean}"
        )
    lower = optimize.brentq(
        lambda a: _truncated_power_law_mean(a, k_max, exponent) - mean, 1e-9, k_max * (1 - 1e-9)
    )
    e1 = 1.0 - exponent
    x = (lower ** e1 + rng.random(n) * (k_max ** e1 - lower ** e1)) ** (1.0 / e1)
    base = np.floor(x)
    k = (base + (rng.random(n) < x - base)).astype(np.int64)
    k = np.clip(k, 0, k_max)
    if k.sum() % 2:
        room = np.flatnonzero(k < k_max)
        k[rng.choice(room)] += 1
    return k


def _stub_matching(nodes: np.ndarray, degrees: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Configuration model; self-loops and multi-edges are rejected"""
    stubs = np.repeat(nodes, degrees)
    rng.shuffle(stubs)
    pairs = stubs[: stubs.size - stubs.size % 2].reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return np.unique(pairs, axis=0) if pairs.size else pairs.reshape(0, 2)


def _er_edges(nodes: np.ndarray, mean_degree: float, rng: np.random.Generator) -> np.ndarray:
    n = nodes.size
    if n < 2 or mean_degree <= 0:
        return np.empty((0, 2), dtype=np.int64)
    p = min(1.0, mean_degree / (n - 1))
    graph = nx.fast_gnp_random_graph(n, p, seed=child_seed(rng))
    local = np.array(list(graph.edges()), dtype=np.int64).reshape(-1, 2)
    return np.sort(nodes[local], axis=1)


def _bipartite_edges(left: np.ndarray, right: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    if left.size == 0 or right.size == 0 or p <= 0:
        return np.empty((0, 2), dtype=np.int64)
    graph = bipartite.random_graph(left.size, right.size, min(p, 1.0 - 1e-12), seed=child_seed(rng))
    local = np.array(list(graph.edges()), dtype=np.int64).reshape(-1, 2)
    first = np.minimum(local[:, 0], local[:, 1])
    second = np.maximum(local[:, 0], local[:, 1]) - left.size
    return np.sort(np.column_stack([left[first], right[second]]), axis=1)


def generate_static_network(params: NetworkConfig, rng: Optional[np.random.Generator] = None) -> ContactNetwork:
    """Degree-corrected block model over beds (a), healthcare workers (b) and community (c)"""
    if params.n_total < 100:
        raise NetworkGenerationError(f"n_total must be at least 100, got {params.n_total}")
    if not 0 < params.hcw_fraction < 1:
        raise NetworkGenerationError(f"hcw_fraction must lie in (0, 1), got {params.hcw_fraction}")
    if params.lambda_min < 0 or params.lambda_min > params.lambda_max:
        raise NetworkGenerationError("lambda bounds must satisfy 0 <= lambda_min <= lambda_max")
    rng = rng if rng is not None else make_rng(params.seed, "network")

    n_persons = params.n_total
    n_hcw = int(round(params.hcw_fraction * n_persons))
    n_beds = params.initial_beds()
    if n_hcw < 2:
        raise NetworkGenerationError(f"hcw group too small ({n_hcw} nodes)")
    hcw = np.arange(n_hcw)
    community = np.arange(n_hcw, n_persons)
    beds = np.arange(n_persons, n_persons + n_beds)

    degrees = _power_law_degrees(
        community.size, params.community_exponent, params.community_mean_degree, params.community_max_degree, rng
    )
    blocks = [
        (BLOCK_CC, _stub_matching(community, degrees, rng)),
        (BLOCK_BB, _er_edges(hcw, params.hcw_mean_degree, rng)),
        (BLOCK_BC, _bipartite_edges(community, hcw, params.hcw_community_mean_degree / n_hcw, rng)),
        (BLOCK_AA, _er_edges(beds, params.hospital_mean_degree, rng)),
        (BLOCK_AB, _bipartite_edges(beds, hcw, params.hospital_hcw_mean_degree / n_hcw, rng)),
    ]
    edges = np.concatenate([e for _, e in blocks]).astype(np.int64)
    edge_block = np.concatenate([np.full(len(e), b, dtype=np.int8) for b, e in blocks])

    n_nodes = n_persons + n_beds
    group = np.full(n_nodes, GROUP_HOSPITAL, dtype=np.int8)
    group[hcw] = GROUP_HCW
    group[community] = GROUP_COMMUNITY

    age_band = np.full(n_nodes, -1, dtype=np.int8)
    age_band[community] = rng.choice(len(config.AGE_BANDS), size=community.size, p=config.AGE_DISTRIBUTION)
    working = np.array(config.WORKING_AGE_BANDS)
    weights = np.array(config.AGE_DISTRIBUTION)[working]
    age_band[hcw] = rng.choice(working, size=n_hcw, p=weights / weights.sum())

    lmin = np.full(n_nodes, params.lambda_min)
    lmax = np.full(n_nodes, params.lambda_max)
    network = ContactNetwork(
        params=params,
        n_persons=n_persons,
        n_hcw=n_hcw,
        group=group,
        age_band=age_band,
        lambda_min=lmin,
        lambda_max=lmax,
        base_lambda_min=lmin.copy(),
        base_lambda_max=lmax.copy(),
        edges=edges,
        edge_block=edge_block,
        mean_degree_community=params.community_mean_degree,
        k_ext=np.zeros(n_nodes, dtype=np.int64),
        bed_occupant=np.full(n_beds, -1, dtype=np.int64),
        bed_of=np.full(n_persons, -1, dtype=np.int64),
        rng=make_rng(params.seed, "beds"),
    )
    logger.info(
        f"Generated network: {n_persons} persons ({n_hcw} hcw), {n_beds} beds, {network.n_edges} edges"
    )
    return network


def network_from_edges(
    n_persons: int,
    edges: Sequence[Tuple[int, int]],
    n_hcw: int = 0,
    ages: Optional[Sequence[int]] = None,
    params: Optional[NetworkConfig] = None,
    seed: int = 0,
) -> ContactNetwork:
    """Small hand-built person network without beds, used for oracles and replays"""
    params = params or NetworkConfig(n_total=max(n_persons, 100), seed=seed, n_beds=0)
    group = np.full(n_persons, GROUP_COMMUNITY, dtype=np.int8)
    group[:n_hcw] = GROUP_HCW
    age_band = np.asarray(ages if ages is not None else np.full(n_persons, 1), dtype=np.int8)
    pairs = np.sort(np.asarray(edges, dtype=np.int64).reshape(-1, 2), axis=1)
    block = np.where(
        (pairs[:, 0] < n_hcw) & (pairs[:, 1] < n_hcw),
        BLOCK_BB,
        np.where((pairs[:, 0] < n_hcw) | (pairs[:, 1] < n_hcw), BLOCK_BC, BLOCK_CC),
    ).astype(np.int8)
    lmin = np.full(n_persons, params.lambda_min)
    lmax = np.full(n_persons, params.lambda_max)
    return ContactNetwork(
        params=params,
        n_persons=n_persons,
        n_hcw=n_hcw,
        group=group,
        age_band=age_band,
        lambda_min=lmin,
        lambda_max=lmax,
        base_lambda_min=lmin.copy(),
        base_lambda_max=lmax.copy(),
        edges=pairs,
        edge_block=block,
        mean_degree_community=params.community_mean_degree,
        k_ext=np.zeros(n_persons, dtype=np.int64),
        bed_occupant=np.empty(0, dtype=np.int64),
        bed_of=np.full(n_persons, -1, dtype=np.int64),
        rng=make_rng(seed, "beds"),
    )


# --- contact rates ----------------------------------------------------------

def diurnal_factor(t):
    """[1 - cos^4(pi t)]^4 for time of day t in days"""
    return (1.0 - np.cos(np.pi * np.asarray(t)) ** 4) ** 4


def activation_rate(lambda_min, lambda_max, t, k_hat: float):
    return np.maximum(lambda_min, lambda_max * diurnal_factor(t)) / k_hat


def edge_activation_rate(edge: Tuple[NodeMeta, NodeMeta], t: float, k_hat: float) -> float:
    if not 0.0 <= t < 1.0:
        raise ValueError(f"time of day must lie in [0, 1), got {t}")
    node_i, node_j = edge
    return float(
        activation_rate(
            min(node_i.lambda_min, node_j.lambda_min), min(node_i.lambda_max, node_j.lambda_max), t, k_hat
        )
    )


@lru_cache(maxsize=256)
def day_average_rate(lambda_min: float, lambda_max: float, k_hat: float) -> float:
    """Day average of the activation rate, by quadrature"""
    if lambda_max <= lambda_min:
        return lambda_min / k_hat
    value, _ = integrate.quad(
        lambda t: float(activation_rate(lambda_min, lambda_max, t, k_hat)), 0.0, 1.0, limit=200, points=[0.5]
    )
    return value


def mean_contact_rate(lambda_min: float, lambda_max: float) -> float:
    """Mean number of contacts per node per day, k_hat times the day-average rate"""
    return day_average_rate(float(lambda_min), float(lambda_max), 1.0)


def mean_edge_activity(node: NodeMeta, k_hat: float, mu: float = config.EDGE_DEACTIVATION_RATE) -> float:
    rate = day_average_rate(float(node.lambda_min), float(node.lambda_max), float(k_hat))
    return rate / (mu + rate)


def mean_edge_activity_array(network: ContactNetwork, nodes: np.ndarray) -> np.ndarray:
    """Vectorized stationary edge activity for a node set"""
    nodes = np.asarray(nodes, dtype=np.int64)
    mu = network.params.deactivation_rate
    pairs = np.column_stack([network.lambda_min[nodes], network.lambda_max[nodes]])
    unique, inverse = np.unique(pairs, axis=0, return_inverse=True)
    rates = np.array([day_average_rate(float(a), float(b), float(network.k_hat)) for a, b in unique])
    activity = rates / (mu + rates)
    return activity[np.asarray(inverse).ravel()]


def apply_contact_bounds(network: ContactNetwork, node_set: Iterable[int], lambda_min_new: float, lambda_max_new: float):
    if lambda_min_new > lambda_max_new:
        raise ValueError("lambda_min_new must not exceed lambda_max_new")
    nodes = np.fromiter(node_set, dtype=np.int64)
    if nodes.size == 0:
        return network
    bad = nodes[(nodes < 0) | (nodes >= network.n_nodes)]
    if bad.size:
        raise UnknownNodeError(f"Node {int(bad[0])} not found", details={"nodes": bad[:10].tolist()})
    network.lambda_min[nodes] = lambda_min_new
    network.lambda_max[nodes] = lambda_max_new
    return network


def restore_contact_bounds(network: ContactNetwork, node_set: Iterable[int]):
    nodes = np.fromiter(node_set, dtype=np.int64)
    if nodes.size == 0:
        return network
    if nodes.min() < 0 or nodes.max() >= network.n_nodes:
        raise UnknownNodeError("Node set contains unknown ids")
    network.lambda_min[nodes] = network.base_lambda_min[nodes]
    network.lambda_max[nodes] = network.base_lambda_max[nodes]
    return network


# --- hospital transfers -----------------------------------------------------

def _grow_beds(network: ContactNetwork, count: int):
    rng = network.rng if network.rng is not None else make_rng(network.params.seed, "beds")
    network.rng = rng
    p = network.params
    old = network.n_beds
    new_ids = np.arange(network.n_nodes, network.n_nodes + count)
    hcw = np.arange(network.n_hcw)
    # the new beds form their own ward so every bed keeps the block degree law
    bed_edges = _er_edges(new_ids, p.hospital_mean_degree, rng)
    hcw_edges = _bipartite_edges(new_ids, hcw, p.hospital_hcw_mean_degree / max(hcw.size, 1), rng)
    new_edges = [(bed_edges, BLOCK_AA), (hcw_edges, BLOCK_AB)]

    def extend(arr, value):
        return np.concatenate([arr, np.full(count, value, dtype=arr.dtype)])

    network.group = extend(network.group, GROUP_HOSPITAL)
    network.age_band = extend(network.age_band, -1)
    network.lambda_min = extend(network.lambda_min, p.lambda_min)
    network.lambda_max = extend(network.lambda_max, p.lambda_max)
    network.base_lambda_min = extend(network.base_lambda_min, p.lambda_min)
    network.base_lambda_max = extend(network.base_lambda_max, p.lambda_max)
    network.k_ext = extend(network.k_ext, 0)
    network.bed_occupant = extend(network.bed_occupant, -1)
    network.edges = np.concatenate([network.edges] + [e.astype(np.int64) for e, _ in new_edges])
    network.edge_block = np.concatenate(
        [network.edge_block] + [np.full(len(e), block, dtype=np.int8) for e, block in new_edges]
    )
    network._adjacency = None
    logger.debug(f"Bed pool grown from {old} to {network.n_beds}")


def transfer_to_hospital(network: ContactNetwork, node_id: int, t: float = 0.0) -> int:
    """Admit a person to a free bed and return the bed node id"""
    network.check_node(node_id)
    if node_id >= network.n_persons:
        raise HospitalTransferError(f"Node {node_id} is a hospital bed, not a person")
    if network.bed_of[node_id] >= 0:
        raise HospitalTransferError(f"Node {node_id} is already admitted", details={"node": int(node_id)})
    free = np.flatnonzero(network.bed_occupant < 0)
    if free.size == 0:
        _grow_beds(network, max(1, network.n_beds))
        free = np.flatnonzero(network.bed_occupant < 0)
    slot = int(network.rng.choice(free)) if network.rng is not None else int(free[0])
    bed = network.n_persons + slot
    network.bed_occupant[slot] = node_id
    network.bed_of[node_id] = bed
    network.stay_log.append(HospitalStay(node=int(node_id), bed=bed, start=float(t)))
    return bed


def discharge(network: ContactNetwork, node_id: int, t: float = 0.0) -> int:
    network.check_node(node_id)
    if node_id >= network.n_persons or network.bed_of[node_id] < 0:
        raise HospitalTransferError(f"Node {node_id} does not occupy a bed", details={"node": int(node_id)})
    bed = int(network.bed_of[node_id])
    network.bed_occupant[bed - network.n_persons] = -1
    network.bed_of[node_id] = -1
    for stay in reversed(network.stay_log):
        if stay.node == node_id and np.isinf(stay.end):
            stay.end = float(t)
            break
    return bed


def occupant_of(network: ContactNetwork, node_id: int) -> int:
    """Person currently reachable through a static node, or -1"""
    if node_id >= network.n_persons:
        return int(network.bed_occupant[node_id - network.n_persons])
    return -1 if network.bed_of[node_id] >= 0 else int(node_id)


# --- daily schedules --------------------------------------------------------

@dataclass(frozen=True)
class EdgeSchedule:
    """Contact intervals of one simulated day, sorted by (edge, start)"""

    day: int
    edge: np.ndarray
    start: np.ndarray
    end: np.ndarray
    n_edges: int
    deactivation_rate: float

    @property
    def n_contacts(self) -> int:
        return int(self.edge.size)

    def covers(self, t0: float, t1: float) -> bool:
        return self.day <= t0 and t1 <= self.day + 1

    def intervals_for_edge(self, edge_id: int) -> List[Tuple[float, float]]:
        lo, hi = np.searchsorted(self.edge, [edge_id, edge_id + 1])
        return list(zip(self.start[lo:hi].tolist(), self.end[lo:hi].tolist()))

    def active_time(self) -> np.ndarray:
        """Total active time per edge over the day"""
        return np.bincount(self.edge, weights=self.end - self.start, minlength=self.n_edges)

    def to_frame(self, network: Optional[ContactNetwork] = None) -> pd.DataFrame:
        frame = pd.DataFrame({"edge": self.edge, "start": self.start, "end": self.end})
        if network is not None:
            frame.insert(1, "u", network.edges[self.edge, 0])
            frame.insert(2, "v", network.edges[self.edge, 1])
            frame.insert(3, "block", [BLOCK_TAGS[b] for b in network.edge_block[self.edge]])
        return frame

    def to_csv(self, path, network: Optional[ContactNetwork] = None):
        self.to_frame(network).to_csv(path, index=False)


def _drop_overlaps(edge: np.ndarray, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """Drop arrivals that fall inside an earlier interval of the same edge"""
    keep = np.ones(edge.size, dtype=bool)
    if edge.size < 2:
        return keep
    same = np.r_[False, edge[1:] == edge[:-1]]
    clash = same & (start < np.r_[-np.inf, end[:-1]])
    for e in np.unique(edge[clash]):
        lo, hi = np.searchsorted(edge, [e, e + 1])
        last = -np.inf
        for k in range(lo, hi):
            if start[k] < last:
                keep[k] = False
            else:
                last = end[k]
    return keep


def sample_day_schedule(network: ContactNetwork, day_index: int, rng: np.random.Generator) -> EdgeSchedule:
    """Birth-death contact process per static edge, sampled by thinning"""
    u, v = network.edges[:, 0], network.edges[:, 1]
    lmin = np.minimum(network.lambda_min[u], network.lambda_min[v])
    lmax = np.minimum(network.lambda_max[u], network.lambda_max[v])
    k_hat = network.k_hat
    mu = network.params.deactivation_rate

    bound = np.maximum(lmin, lmax) / k_hat
    counts = rng.poisson(bound)
    edge = np.repeat(np.arange(network.n_edges), counts)
    t = rng.random(edge.size)
    accept = rng.random(edge.size) * bound[edge] < activation_rate(lmin[edge], lmax[edge], t, k_hat)
    edge, t = edge[accept], t[accept]
    order = np.lexsort((t, edge))
    edge, t = edge[order], t[order]
    end = t + rng.exponential(1.0 / mu, size=t.size)

    keep = _drop_overlaps(edge, t, end)
    edge, t, end = edge[keep], t[keep], np.minimum(end[keep], 1.0)
    if edge.size == 0 and network.n_edges:
        logger.warning(f"Day {day_index}: schedule has no contacts")
    return EdgeSchedule(
        day=int(day_index),
        edge=edge,
        start=t + day_index,
        end=end + day_index,
        n_edges=network.n_edges,
        deactivation_rate=mu,
    )


def always_active_schedule(network: ContactNetwork, day_index: int) -> EdgeSchedule:
    """Every edge active for the whole day"""
    edge = np.arange(network.n_edges)
    return EdgeSchedule(
        day=int(day_index),
        edge=edge,
        start=np.full(edge.size, float(day_index)),
        end=np.full(edge.size, float(day_index + 1)),
        n_edges=network.n_edges,
        deactivation_rate=network.params.deactivation_rate,
    )


# --- person-level contacts --------------------------------------------------

@dataclass
class ContactSet:
    """Person-to-person contact intervals after resolving beds to occupants"""

    i: np.ndarray
    j: np.ndarray
    start: np.ndarray
    end: np.ndarray
    hospital: np.ndarray

    @classmethod
    def empty(cls) -> "ContactSet":
        z = np.empty(0)
        return cls(z.astype(np.int64), z.astype(np.int64), z, z, z.astype(bool))

    @classmethod
    def concat(cls, parts: Sequence["ContactSet"]) -> "ContactSet":
        parts = [p for p in parts if p.size]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("i", "j", "start", "end", "hospital")))

    @property
    def size(self) -> int:
        return int(self.i.size)

    def restrict(self, index_map: np.ndarray) -> "ContactSet":
        """Keep contacts between mapped nodes, relabelled through index_map (-1 drops)"""
        if self.size == 0:
            return ContactSet.empty()
        a, b = index_map[self.i], index_map[self.j]
        keep = (a >= 0) & (b >= 0)
        return ContactSet(a[keep], b[keep], self.start[keep], self.end[keep], self.hospital[keep])

    def window(self, t0: float, t1: float) -> "ContactSet":
        keep = (self.end > t0) & (self.start < t1)
        return ContactSet(self.i[keep], self.j[keep], self.start[keep], self.end[keep], self.hospital[keep])

    def average_weights(self, t0: float, t1: float):
        """Per-contact average of w(t) over [t0, t1]; zero-weight contacts dropped"""
        overlap = np.minimum(self.end, t1) - np.maximum(self.start, t0)
        keep = overlap > 0
        w = overlap[keep] / (t1 - t0)
        return self.i[keep], self.j[keep], w, self.hospital[keep]

    def weights_at(self, t: float):
        keep = (self.start <= t) & (t < self.end)
        return self.i[keep], self.j[keep], np.ones(int(keep.sum())), self.hospital[keep]

    def long_contacts(self, min_duration: float):
        keep = (self.end - self.start) > min_duration
        return self.i[keep], self.j[keep]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"i": self.i, "j": self.j, "start": self.start, "end": self.end, "hospital": self.hospital}
        )


def _subtract(segments: List[Tuple[float, float]], holes: List[Tuple[float, float]]):
    for h0, h1 in holes:
        out = []
        for s, e in segments:
            if h1 <= s or h0 >= e:
                out.append((s, e))
                continue
            if s < h0:
                out.append((s, h0))
            if h1 < e:
                out.append((h1, e))
        segments = out
    return segments


def _through_bed(segments, occupancy):
    """Split segments by bed occupancy into (start, end, occupant) pieces"""
    pieces = []
    for s, e in segments:
        for o0, o1, node in occupancy:
            a, b = max(s, o0), min(e, o1)
            if a < b:
                pieces.append((a, b, node))
    return pieces


def resolve_contacts(schedule: EdgeSchedule, network: ContactNetwork) -> ContactSet:
    t0, t1 = schedule.day, schedule.day + 1
    stays = [s for s in network.stay_log if s.start < t1 and s.end > t0]
    away: Dict[int, List[Tuple[float, float]]] = defaultdict(list)
    occupancy: Dict[int, List[Tuple[float, float, int]]] = defaultdict(list)
    for stay in stays:
        away[stay.node].append((stay.start, stay.end))
        occupancy[stay.bed].append((stay.start, stay.end, stay.node))

    u = network.edges[schedule.edge, 0]
    v = network.edges[schedule.edge, 1]
    hospital = np.isin(network.edge_block[schedule.edge], HOSPITAL_BLOCKS)
    n = network.n_persons
    touched = (u >= n) | (v >= n)
    if away:
        absent = np.fromiter(away.keys(), dtype=np.int64)
        touched |= np.isin(u, absent) | np.isin(v, absent)

    plain = ContactSet(
        u[~touched], v[~touched], schedule.start[~touched], schedule.end[~touched], hospital[~touched]
    )
    rows = []
    for k in np.flatnonzero(touched):
        pieces = [(schedule.start[k], schedule.end[k])]
        for x in (int(u[k]), int(v[k])):
            if x >= n:
                continue
            pieces = _subtract(pieces, away.get(x, []))
        ends = [
            _through_bed(pieces, occupancy.get(x, [])) if x >= n else [(s, e, x) for s, e in pieces]
            for x in (int(u[k]), int(v[k]))
        ]
        for s0, e0, a in ends[0]:
            for s1, e1, b in ends[1]:
                s, e = max(s0, s1), min(e0, e1)
                if s < e and a != b:
                    rows.append((a, b, s, e, bool(hospital[k])))

    if rows:
        arr = np.array(rows, dtype=object)
        extra = ContactSet(
            arr[:, 0].astype(np.int64),
            arr[:, 1].astype(np.int64),
            arr[:, 2].astype(float),
            arr[:, 3].astype(float),
            arr[:, 4].astype(bool),
        )
        return ContactSet.concat([plain, extra])
    return plain


# --- serialization ----------------------------------------------------------

_TEXT_MAGIC = "# risknet contact network"


def save_network_text(network: ContactNetwork, path):
    """Line-oriented format: header, one node per line, one edge per line"""
    path = Path(path)
    sizes = np.bincount(network.group, minlength=3)
    with path.open("w") as fh:
        fh.write(f"{_TEXT_MAGIC}\n")
        fh.write(f"version {config.NETWORK_FORMAT_VERSION}\n")
        fh.write(
            f"header N {network.n_persons} beds {int(sizes[GROUP_HOSPITAL])} hcw {int(sizes[GROUP_HCW])} "
            f"community {int(sizes[GROUP_COMMUNITY])} k_hat {float(network.k_hat)!r}\n"
        )
        fh.write(f"params {network.params.model_dump_json()}\n")
        for i in range(network.n_nodes):
            fh.write(
                f"node {i} {GROUP_TAGS[network.group[i]]} {int(network.age_band[i])} "
                f"{float(network.base_lambda_min[i])!r} {float(network.base_lambda_max[i])!r}\n"
            )
        for (a, b), blk in zip(network.edges.tolist(), network.edge_block.tolist()):
            fh.write(f"edge {a} {b} {BLOCK_TAGS[blk]}\n")


def load_network_text(path) -> ContactNetwork:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != _TEXT_MAGIC:
        raise FormatVersionError(f"{path} is not a contact network file")
    version = int(lines[1].split()[1])
    if version != config.NETWORK_FORMAT_VERSION:
        raise FormatVersionError(f"Unsupported network format version {version}")
    header = lines[2].split()
    fields = dict(zip(header[1::2], header[2::2]))
    params = NetworkConfig.model_validate(json.loads(lines[3].split(" ", 1)[1]))
    n_persons = int(fields["N"])
    groups, ages, lmin, lmax, edges, blocks = [], [], [], [], [], []
    for line in lines[4:]:
        parts = line.split()
        if parts[0] == "node":
            groups.append(GROUP_TAGS.index(parts[2]))
            ages.append(int(parts[3]))
            lmin.append(float(parts[4]))
            lmax.append(float(parts[5]))
        elif parts[0] == "edge":
            edges.append((int(parts[1]), int(parts[2])))
            blocks.append(BLOCK_TAGS.index(parts[3]))
    return _assemble(params, n_persons, int(fields["hcw"]), float(fields["k_hat"]), groups, ages, lmin, lmax, edges, blocks)


def _assemble(params, n_persons, n_hcw, k_hat, groups, ages, lmin, lmax, edges, blocks) -> ContactNetwork:
    lmin = np.asarray(lmin, dtype=float)
    lmax = np.asarray(lmax, dtype=float)
    n_nodes = lmin.size
    return ContactNetwork(
        params=params,
        n_persons=n_persons,
        n_hcw=n_hcw,
        group=np.asarray(groups, dtype=np.int8),
        age_band=np.asarray(ages, dtype=np.int8),
        lambda_min=lmin.copy(),
        lambda_max=lmax.copy(),
        base_lambda_min=lmin,
        base_lambda_max=lmax,
        edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        edge_block=np.asarray(blocks, dtype=np.int8),
        mean_degree_community=k_hat,
        k_ext=np.zeros(n_nodes, dtype=np.int64),
        bed_occupant=np.full(n_nodes - n_persons, -1, dtype=np.int64),
        bed_of=np.full(n_persons, -1, dtype=np.int64),
        rng=make_rng(params.seed, "beds"),
    )


def save_network_npz(network: ContactNetwork, path):
    np.savez_compressed(
        path,
        format_version=config.NETWORK_FORMAT_VERSION,
        params=network.params.model_dump_json(),
        n_persons=network.n_persons,
        n_hcw=network.n_hcw,
        k_hat=network.k_hat,
        group=network.group,
        age_band=network.age_band,
        lambda_min=network.base_lambda_min,
        lambda_max=network.base_lambda_max,
        edges=network.edges,
        edge_block=network.edge_block,
    )


def load_network_npz(path) -> ContactNetwork:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != config.NETWORK_FORMAT_VERSION:
            raise FormatVersionError(f"Unsupported network cache version {version}")
        params = NetworkConfig.model_validate_json(str(data["params"]))
        return _assemble(
            params,
            int(data["n_persons"]),
            int(data["n_hcw"]),
            float(data["k_hat"]),
            data["group"],
            data["age_band"],
            data["lambda_min"],
            data["lambda_max"],
            data["edges"],
            data["edge_block"],
        )


def load_network(path) -> ContactNetwork:
    path = Path(path)
    if path.suffix == ".npz":
        return load_network_npz(path)
    return load_network_text(path)
