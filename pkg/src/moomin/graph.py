"""Bipartite drug-protein interaction graph and uniform walks on it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import BipartitenessError, LookupFailure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransitionRow:
    source: str
    scale: int
    entries: dict[str, float]

    def total(self) -> float:
        return float(sum(self.entries.values()))

    def is_empty(self) -> bool:
        return not self.entries


@dataclass
class BipartiteGraph:
    """Undirected drug-protein graph.

    Vertices are indexed drugs first, then proteins, both in first-appearance
    order. Neighbour lists keep the order in which the partner vertex was first
    seen, which fixes the meaning of an integer neighbour draw under a seed.
    """

    drugs: list[str]
    proteins: list[str]
    neighbors: dict[str, list[str]]
    _index: dict[str, int] = field(default_factory=dict, repr=False)
    _csr: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)
    _row_cache: dict[tuple[str, int], TransitionRow] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {v: i for i, v in enumerate(self.drugs + self.proteins)}

    @property
    def num_vertices(self) -> int:
        return len(self.drugs) + len(self.proteins)

    @property
    def num_edges(self) -> int:
        return sum(len(self.neighbors[d]) for d in self.drugs)

    @property
    def vertices(self) -> list[str]:
        return self.drugs + self.proteins

    def __contains__(self, v: str) -> bool:
        return v in self._index

    def index(self, v: str) -> int:
        try:
            return self._index[v]
        except KeyError:
            raise LookupFailure(f"unknown vertex {v!r}") from None

    def is_drug(self, v: str) -> bool:
        return self.index(v) < len(self.drugs)

    def degree(self, v: str) -> int:
        self.index(v)
        return len(self.neighbors[v])

    def edges(self) -> list[tuple[str, str]]:
        return [(d, p) for d in self.drugs for p in self.neighbors[d]]

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """``(indptr, indices)`` over global vertex indices."""
        if self._csr is None:
            indptr = [0]
            indices: list[int] = []
            for v in self.vertices:
                indices.extend(self._index[w] for w in self.neighbors[v])
                indptr.append(len(indices))
            self._csr = (np.asarray(indptr, dtype=np.intp), np.asarray(indices, dtype=np.intp))
        return self._csr

    def normalized_adjacency(self) -> sp.csr_matrix:
        """Row-normalized adjacency; rows of isolated vertices are all zero."""
        indptr, indices = self.csr()
        deg = np.diff(indptr)
        weights = np.repeat(np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0), deg)
        n = self.num_vertices
        return sp.csr_matrix((weights, indices, indptr), shape=(n, n))


def build(
    edges: Iterable[tuple[str, str]],
    drugs: Iterable[str] = (),
    proteins: Iterable[str] = (),
) -> BipartiteGraph:
    """Build a graph from ``(drug, protein)`` pairs.

    ``drugs`` and ``proteins`` register extra, possibly isolated vertices; they
    are appended after the vertices seen in ``edges``.
    """
    drug_order: dict[str, None] = {}
    protein_order: dict[str, None] = {}
    nbrs: dict[str, dict[str, None]] = {}

    def _register(v: str, role: dict, other: dict, kind: str):
        if not isinstance(v, str) or not v:
            raise ValueError(f"vertex IDs must be non-empty strings, got {v!r}")
        if v in other:
            other_kind = "protein" if kind == "drug" else "drug"
            raise BipartitenessError(
                f"{v!r} used as a {kind} but already registered as a {other_kind}"
            )
        if v not in role:
            role[v] = None
            nbrs[v] = {}

    for d, p in edges:
        _register(d, drug_order, protein_order, "drug")
        _register(p, protein_order, drug_order, "protein")
        nbrs[d].setdefault(p, None)
        nbrs[p].setdefault(d, None)
    for d in drugs:
        _register(d, drug_order, protein_order, "drug")
    for p in proteins:
        _register(p, protein_order, drug_order, "protein")

    return BipartiteGraph(
        drugs=list(drug_order),
        proteins=list(protein_order),
        neighbors={v: list(n) for v, n in nbrs.items()},
    )


def transition_row(g: BipartiteGraph, source: str, scale: int) -> TransitionRow:
    """Distribution of a uniform walk from ``source`` after ``scale`` steps.

    The row is propagated one sparse step at a time; walkers sitting on an
    isolated vertex have nowhere to go, so their mass leaves the row. That only
    happens when the source itself is isolated, which yields an empty row.
    """
    if scale < 0:
        raise ValueError(f"scale must be non-negative, got {scale}")
    g.index(source)
    key = (source, scale)
    cached = g._row_cache.get(key)
    if cached is not None:
        return cached
    if scale == 0:
        row = TransitionRow(source, 0, {source: 1.0})
    else:
        prev = transition_row(g, source, scale - 1)
        nxt: dict[str, float] = {}
        for v, mass in prev.entries.items():
            out = g.neighbors[v]
            if not out:
                continue
            share = mass / len(out)
            for w in out:
                nxt[w] = nxt.get(w, 0.0) + share
        if not nxt and scale == 1:
            logger.warning("drug %r is isolated; its context blocks will be zero", source)
        row = TransitionRow(source, scale, dict(sorted(nxt.items(), key=lambda kv: g._index[kv[0]])))
    g._row_cache[key] = row
    return row


def walk_step(g: BipartiteGraph, at: str, rng: np.random.Generator) -> Optional[str]:
    """One uniform step from ``at``; ``None`` when ``at`` has no neighbours."""
    g.index(at)
    out = g.neighbors[at]
    if not out:
        return None
    return out[int(rng.integers(len(out)))]


def sample_walks(
    g: BipartiteGraph, source: str, length: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Run ``count`` truncated walks of ``length`` steps from ``source`` in lockstep.

    Returns a ``(count, length + 1)`` array of global vertex indices, with -1
    after a walk has truncated. Step ``l`` uses one vectorised draw of
    ``count`` uniform integers, one per walker still alive.
    """
    indptr, indices = g.csr()
    out = np.full((count, length + 1), -1, dtype=np.intp)
    pos = np.full(count, g.index(source), dtype=np.intp)
    out[:, 0] = pos
    alive = np.ones(count, dtype=bool)
    for step in range(1, length + 1):
        deg = indptr[pos + 1] - indptr[pos]
        alive &= deg > 0
        if not alive.any():
            break
        pick = rng.integers(0, np.maximum(deg, 1))
        nxt = indices[np.where(alive, indptr[pos] + pick, 0)]
        pos = np.where(alive, nxt, pos)
        out[:, step] = np.where(alive, pos, -1)
    return out
