"""Multi-scale drug representations over the interaction graph.

Block ``l`` of a drug's representation is the expected encoding of the vertex
a uniform walk reaches after ``l`` steps: drugs at even scales, proteins at
odd scales. The exact form weights encodings by transition probabilities;
the sampled form replaces them with visit frequencies of ``s`` truncated
walks. Either way a block is ``W_l @ H`` for a fixed weight matrix ``W_l`` and
the stacked encodings ``H`` of the vertices with non-zero weight, so each
vertex is encoded at most once per forward pass and only visited vertices
receive gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .encoders import DENSE_LIMIT, DrugEncoderParams, ProteinEncoderParams, encode_drugs, encode_proteins
from .errors import DataError, DimensionError
from .graph import BipartiteGraph, sample_walks, transition_row
from .molgraph import MolecularGraph
from .tensor import Tensor

EXACT = "exact"
SAMPLED = "sampled"


class FeatureStore(Protocol):
    molecules: Mapping[str, MolecularGraph]
    protein_features: Mapping[str, np.ndarray]


class Encoders(Protocol):
    drug: DrugEncoderParams
    protein: ProteinEncoderParams


def block_widths(drug_dim: int, protein_dim: int, r: int) -> list[int]:
    return [drug_dim if l % 2 == 0 else protein_dim for l in range(r + 1)]


@dataclass
class MultiScaleRep:
    """Per-scale blocks for one or more source drugs (one row per drug)."""

    blocks: list[Tensor]

    @property
    def r(self) -> int:
        return len(self.blocks) - 1

    @property
    def widths(self) -> list[int]:
        return [b.shape[1] for b in self.blocks]

    @property
    def rows(self) -> int:
        return self.blocks[0].shape[0]

    def take(self, index: Sequence[int]) -> "MultiScaleRep":
        return MultiScaleRep([T.take_rows(b, index) for b in self.blocks])


def flatten(rep: MultiScaleRep) -> Tensor:
    return T.concat_cols(rep.blocks)


def unflatten(x: Tensor, widths: Sequence[int]) -> MultiScaleRep:
    if sum(widths) != x.shape[1]:
        raise DimensionError(f"widths {list(widths)} do not add up to {x.shape[1]}")
    bounds = np.cumsum([0, *widths])
    return MultiScaleRep([T.slice_cols(x, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])])


def _exact_weights(g: BipartiteGraph, sources: Sequence[str], r: int) -> list[list[dict[str, float]]]:
    return [[transition_row(g, d, l).entries for d in sources] for l in range(r + 1)]


def _sampled_weights(g: BipartiteGraph, sources: Sequence[str], r: int, samples: int,
                     rng: np.random.Generator) -> list[list[dict[str, float]]]:
    if samples < 1:
        raise ValueError(f"sample count must be >= 1, got {samples}")
    names = g.vertices
    out: list[list[dict[str, float]]] = [[] for _ in range(r + 1)]
    for d in sources:
        walks = sample_walks(g, d, r, samples, rng)
        for l in range(r + 1):
            col = walks[:, l]
            col = col[col >= 0]
            idx, counts = np.unique(col, return_counts=True)
            out[l].append({names[i]: c / samples for i, c in zip(idx, counts)})
    return out


def _encode_support(
    encs: Encoders, feats: FeatureStore, drug_ids: list[str], protein_ids: list[str]
) -> tuple[Optional[Tensor], Optional[Tensor]]:
    missing = [d for d in drug_ids if d not in feats.molecules]
    missing += [p for p in protein_ids if p not in feats.protein_features]
    if missing:
        raise DataError(f"no molecule or protein features for vertices: {', '.join(missing)}")
    h_drug = encode_drugs(encs.drug, [feats.molecules[d] for d in drug_ids]) if drug_ids else None
    h_prot = None
    if protein_ids:
        x = np.vstack([np.asarray(feats.protein_features[p], dtype=np.float64) for p in protein_ids])
        h_prot = encode_proteins(encs.protein, T.constant(x))
    return h_drug, h_prot


def contextualize(
    g: BipartiteGraph,
    encs: Encoders,
    feats: FeatureStore,
    sources: Sequence[str],
    r: int,
    mode: str = EXACT,
    samples: int = 128,
    rng: Optional[np.random.Generator] = None,
) -> MultiScaleRep:
    """Representations for every drug in ``sources`` (row ``i`` for ``sources[i]``).

    In sampled mode the walks for each source are drawn from ``rng`` in the
    order the sources are given.
    """
    if r < 0:
        raise ValueError(f"max scale must be >= 0, got {r}")
    for d in sources:
        if not g.is_drug(d):
            raise DataError(f"{d!r} is a protein, not a drug")
    if mode == EXACT:
        weights = _exact_weights(g, sources, r)
    elif mode == SAMPLED:
        if rng is None:
            raise ValueError("sampled mode needs a random generator")
        weights = _sampled_weights(g, sources, r, samples, rng)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    support: list[dict[str, None]] = [{}, {}]  # even scales: drugs, odd: proteins
    for l, rows in enumerate(weights):
        for row in rows:
            for v, w in row.items():
                if w > 0.0:
                    support[l % 2].setdefault(v, None)
    drug_ids, protein_ids = list(support[0]), list(support[1])
    h_drug, h_prot = _encode_support(encs, feats, drug_ids, protein_ids)
    col = [{v: i for i, v in enumerate(drug_ids)}, {v: i for i, v in enumerate(protein_ids)}]
    widths = block_widths(encs.drug.out_dim, encs.protein.out_dim, r)

    blocks = []
    for l, rows in enumerate(weights):
        parity = l % 2
        h = h_drug if parity == 0 else h_prot
        if h is None:
            blocks.append(T.constant(np.zeros((len(sources), widths[l]))))
            continue
        lookup = col[parity]
        ri, ci, vals = [], [], []
        for i, row in enumerate(rows):
            for v, w in row.items():
                if w > 0.0:
                    ri.append(i)
                    ci.append(lookup[v])
                    vals.append(w)
        shape = (len(sources), h.shape[0])
        if shape[0] * shape[1] <= DENSE_LIMIT:
            wmat = np.zeros(shape)
            np.add.at(wmat, (ri, ci), vals)
        else:
            wmat = sp.csr_matrix((vals, (ri, ci)), shape=shape)
        blocks.append(T.const_matmul(wmat, h))
    return MultiScaleRep(blocks)


def exact_rep(g: BipartiteGraph, encs: Encoders, feats: FeatureStore, d: str, r: int) -> MultiScaleRep:
    return contextualize(g, encs, feats, [d], r, EXACT)


def sample_rep(g: BipartiteGraph, encs: Encoders, feats: FeatureStore, d: str, r: int,
               s: int, rng: np.random.Generator) -> MultiScaleRep:
    return contextualize(g, encs, feats, [d], r, SAMPLED, samples=s, rng=rng)


def relative_block_errors(approx: MultiScaleRep, exact: MultiScaleRep) -> list[float]:
    """``max|approx - exact| / (max|exact| + 1e-9)`` per block."""
    out = []
    for a, e in zip(approx.blocks, exact.blocks):
        out.append(float(np.abs(a.data - e.data).max() / (np.abs(e.data).max() + 1e-9)))
    return out
