"""Exact SEIHRD Markov chain on tiny networks with always-active edges.

The 6^N joint states are enumerated and marginals are propagated with
the sparse matrix exponential. Used as an oracle for both the KMC and the
reduced master equations.
"""
import itertools
from typing import Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from app import config

MAX_NODES = 4
S, E, I, H, R, D = range(6)


def _encode(states: np.ndarray) -> int:
    return int(np.dot(states, 6 ** np.arange(states.size)))


def generator_matrix(
    n: int,
    edges: Sequence[Tuple[int, int]],
    h: np.ndarray,
    d: np.ndarray,
    d_prime: np.ndarray,
    beta: float = config.TRANSMISSION_RATE,
    sigma: float = 1.0 / config.LATENT_PERIOD,
    gamma: float = 1.0 / config.INFECTIOUS_PERIOD,
    gamma_prime: float = 1.0 / config.HOSPITAL_STAY,
    hospital_source_factor: float = 1.0,
) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """Transition-rate matrix Q (row = from) and the enumerated state table"""
    if n > MAX_NODES:
        raise ValueError(f"exact chain supports at most {MAX_NODES} nodes")
    table = np.array(list(itertools.product(range(6), repeat=n)), dtype=np.int64)[:, ::-1]
    neighbors = [[] for _ in range(n)]
    for a, b in edges:
        neighbors[a].append(b)
        neighbors[b].append(a)

    rows, cols, rates = [], [], []

    def add(src: int, target: np.ndarray, rate: float):
        if rate > 0:
            rows.append(src)
            cols.append(_encode(target))
            rates.append(rate)

    for idx, x in enumerate(table):
        for k in range(n):
            y = x.copy()
            if x[k] == S:
                force = sum(
                    beta * (1.0 if x[j] == I else hospital_source_factor if x[j] == H else 0.0)
                    for j in neighbors[k]
                )
                y[k] = E
                add(idx, y, force)
            elif x[k] == E:
                y[k] = I
                add(idx, y, sigma)
            elif x[k] == I:
                for target, frac in ((H, h[k]), (R, 1.0 - h[k] - d[k]), (D, d[k])):
                    z = x.copy()
                    z[k] = target
                    add(idx, z, gamma * frac)
            elif x[k] == H:
                for target, frac in ((R, 1.0 - d_prime[k]), (D, d_prime[k])):
                    z = x.copy()
                    z[k] = target
                    add(idx, z, gamma_prime * frac)

    size = table.shape[0]
    q = sparse.csr_matrix((rates, (rows, cols)), shape=(size, size))
    q = q - sparse.diags(np.asarray(q.sum(axis=1)).ravel())
    return q.tocsr(), table


def exact_marginals(
    initial_states: Sequence[int],
    edges: Sequence[Tuple[int, int]],
    times: Sequence[float],
    h: Sequence[float],
    d: Sequence[float],
    d_prime: Sequence[float],
    **rates,
) -> np.ndarray:
    """Marginal probabilities (T, 6, n) at the requested times"""
    x0 = np.asarray(initial_states, dtype=np.int64)
    n = x0.size
    q, table = generator_matrix(n, edges, np.asarray(h), np.asarray(d), np.asarray(d_prime), **rates)
    p0 = np.zeros(table.shape[0])
    p0[_encode(x0)] = 1.0
    out = np.zeros((len(times), 6, n))
    qt = q.T.tocsr()
    for k, t in enumerate(times):
        p = expm_multiply(qt * float(t), p0) if t > 0 else p0
        for node in range(n):
            out[k, :, node] = np.bincount(table[:, node], weights=p, minlength=6)
    return out
