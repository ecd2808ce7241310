"""Disjoint partition of the bath into strongly coupled clusters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import HBAR, MU0_OVER_4PI, khz
from .hamiltonian import dipolar_pair_term
from .lattice import SpinBath

DEFAULT_THRESHOLD = khz(0.1)


@dataclass(frozen=True)
class Partition:
    clusters: tuple[tuple[int, ...], ...]
    max_size: int
    coupling_threshold: float

    def sizes(self) -> list[int]:
        return [len(c) for c in self.clusters]

    def as_lists(self) -> list[list[int]]:
        return [list(c) for c in self.clusters]


def coupling_strength(bath: SpinBath, j: int, k: int) -> float:
    """Largest-magnitude entry of the pair's dipolar tensor, rad/us."""
    if j == k:
        raise ValueError("coupling_strength needs two distinct sites")
    D = dipolar_pair_term(bath.positions[j], bath.positions[k], bath.gamma_n)
    return float(np.max(np.abs(D)))


def coupling_matrix(bath: SpinBath) -> np.ndarray:
    """All pairwise ``coupling_strength`` values at once (zero diagonal)."""
    n = len(bath)
    if n < 2:
        return np.zeros((n, n))
    d = bath.positions[None, :, :] - bath.positions[:, None, :]
    r = np.linalg.norm(d, axis=-1)
    np.fill_diagonal(r, 1.0)
    u = d / r[..., None]
    b = MU0_OVER_4PI * bath.gamma_n**2 * HBAR / (r * 1e-10) ** 3 * 1e-6
    # |b (delta_ab - 3 n_a n_b)| maximised over a, b
    diag = np.abs(1.0 - 3.0 * u**2).max(axis=-1)
    off = 3.0 * np.stack(
        [np.abs(u[..., 0] * u[..., 1]), np.abs(u[..., 0] * u[..., 2]), np.abs(u[..., 1] * u[..., 2])],
        axis=-1,
    ).max(axis=-1)
    c = b * np.maximum(diag, off)
    np.fill_diagonal(c, 0.0)
    return c


def _components(nodes, adj) -> list[list[int]]:
    seen = set()
    out = []
    for s in sorted(nodes):
        if s in seen:
            continue
        comp = []
        stack = [s]
        seen.add(s)
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        out.append(sorted(comp))
    return out


def _split(comp, edges, max_size) -> list[list[int]]:
    """Remove the weakest edge of an oversized component until all pieces fit.

    Edges are ``(strength, i, j)`` with i < j, so sorting gives the weakest first
    and ties (equal to 12 significant digits) go to the lowest site indices.
    """
    members = set(comp)
    local = sorted(e for e in edges if e[1] in members and e[2] in members)
    adj = {v: set() for v in comp}
    for _, i, j in local:
        adj[i].add(j)
        adj[j].add(i)
    done = []
    pending = [comp]
    while pending:
        piece = pending.pop()
        if len(piece) <= max_size:
            done.append(piece)
            continue
        pset = set(piece)
        for e in local:
            _, i, j = e
            if i in pset and j in adj[i]:
                adj[i].discard(j)
                adj[j].discard(i)
                break
        pending.extend(_components(piece, adj))
    return done


def partition_bath(
    bath: SpinBath,
    max_size: int = 6,
    threshold: float = DEFAULT_THRESHOLD,
    couplings: np.ndarray | None = None,
) -> Partition:
    """Connected components of the ``coupling >= threshold`` graph, split to fit ``max_size``.

    Clusters come back sorted by their smallest index, each cluster sorted.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    n = len(bath)
    c = coupling_matrix(bath) if couplings is None else couplings
    iu, ju = np.nonzero(np.triu(c >= threshold, k=1))
    # strengths rounded to 12 digits so lattice-symmetric pairs tie exactly
    edges = [(float(f"{c[i, j]:.12g}"), int(i), int(j)) for i, j in zip(iu, ju)]
    adj = {v: set() for v in range(n)}
    for _, i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    clusters = []
    for comp in _components(range(n), adj):
        if len(comp) <= max_size:
            clusters.append(comp)
        else:
            clusters.extend(_split(comp, edges, max_size))
    clusters = sorted((tuple(sorted(cl)) for cl in clusters), key=lambda cl: cl[0])
    return Partition(tuple(clusters), max_size, float(threshold))


def single_cluster(bath: SpinBath) -> Partition:
    """Everything in one cluster; used for small exact runs."""
    n = len(bath)
    return Partition((tuple(range(n)),) if n else (), max(n, 1), float("inf"))
