"""Trainable drug, protein and cell-line encoders.

The drug encoder runs a two-layer MLP on every atom, smooths the atom
representations with personalized-PageRank propagation over the molecule
(predict, then propagate) and pools mean, max and min over atoms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import DimensionError, LookupFailure
from .molgraph import ATOM_FEATURES, MolecularGraph, featurize
from .tensor import Tensor

POOLS = ("mean", "max", "min")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class DrugEncoderParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    iterations: int = 10
    teleport: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.teleport <= 1.0:
            raise ValueError(f"teleport probability must lie in (0, 1], got {self.teleport}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 32, iterations: int = 10,
             teleport: float = 0.2, in_dim: int = ATOM_FEATURES) -> "DrugEncoderParams":
        return cls(
            w1=T.parameter(glorot(rng, in_dim, hidden)),
            b1=T.parameter(np.zeros((1, hidden))),
            w2=T.parameter(glorot(rng, hidden, hidden)),
            b2=T.parameter(np.zeros((1, hidden))),
            iterations=iterations,
            teleport=teleport,
        )

    @property
    def out_dim(self) -> int:
        return len(POOLS) * self.w2.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class ProteinEncoderParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, hidden: int = 32,
             out_dim: int = 32) -> "ProteinEncoderParams":
        return cls(
            w1=T.parameter(glorot(rng, in_dim, hidden)),
            b1=T.parameter(np.zeros((1, hidden))),
            w2=T.parameter(glorot(rng, hidden, out_dim)),
            b2=T.parameter(np.zeros((1, out_dim))),
        )

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class CellEmbedding:
    """One trainable row per registered cell line. Unseen cells cannot be
    encoded: there is no feature-based fallback."""

    cells: list[str]
    table: Tensor

    def __post_init__(self):
        if len(set(self.cells)) != len(self.cells):
            raise ValueError("duplicate cell IDs")
        if self.table.shape[0] != len(self.cells):
            raise DimensionError(
                f"embedding table has {self.table.shape[0]} rows for {len(self.cells)} cells"
            )
        self._row = {c: i for i, c in enumerate(self.cells)}

    @classmethod
    def init(cls, rng: np.random.Generator, cells: Sequence[str], dim: int = 16) -> "CellEmbedding":
        return cls(list(cells), T.parameter(glorot(rng, len(cells), dim)))

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def row(self, c: str) -> int:
        try:
            return self._row[c]
        except KeyError:
            raise LookupFailure(f"unknown cell line {c!r} (cell embeddings are not inductive)") from None

    def parameters(self) -> dict[str, Tensor]:
        return {"table": self.table}


def propagation_matrix(m: MolecularGraph, iterations: int, teleport: float) -> np.ndarray:
    """Matrix ``P`` with ``Z_K = P @ Z_0`` for ``K`` personalized-PageRank steps
    ``Z_{k+1} = (1 - teleport) * A @ Z_k + teleport * Z_0``."""
    cache = m._propagation
    key = (iterations, teleport)
    if key not in cache:
        _, adj = featurize(m)
        eye = np.eye(m.num_atoms)
        p = eye
        for _ in range(iterations):
            p = (1.0 - teleport) * (adj @ p) + teleport * eye
        cache[key] = p
    return cache[key]


def appnp_iterates(z0: np.ndarray, m: MolecularGraph, iterations: int, teleport: float) -> list[np.ndarray]:
    """Every iterate ``Z_0 .. Z_K`` of the propagation loop, run literally."""
    _, adj = featurize(m)
    out = [z0]
    z = z0
    for _ in range(iterations):
        z = (1.0 - teleport) * (adj @ z) + teleport * z0
        out.append(z)
    return out


def atom_mlp(params: DrugEncoderParams, x: Tensor) -> Tensor:
    if x.shape[1] != params.w1.shape[0]:
        raise DimensionError(
            f"atom features have width {x.shape[1]}, drug MLP expects {params.w1.shape[0]}"
        )
    h = T.relu(T.add(T.matmul(x, params.w1), params.b1))
    return T.add(T.matmul(h, params.w2), params.b2)


DENSE_LIMIT = 400_000


def block_diag(blocks: Sequence) -> "np.ndarray | sp.csr_matrix":
    """Block-diagonal stack of square matrices; dense when small, CSR otherwise."""
    sizes = [b.shape[0] for b in blocks]
    n = sum(sizes)
    if n * n <= DENSE_LIMIT:
        out = np.zeros((n, n))
        o = 0
        for b, k in zip(blocks, sizes):
            out[o:o + k, o:o + k] = b.toarray() if sp.issparse(b) else b
            o += k
        return out
    dense = [b.toarray() if sp.issparse(b) else np.asarray(b) for b in blocks]
    offsets = np.cumsum([0] + sizes)
    indptr = np.concatenate([[0], np.cumsum(np.repeat(sizes, sizes))])
    indices = np.concatenate([np.tile(np.arange(k) + o, k) for k, o in zip(sizes, offsets[:-1])])
    data = np.concatenate([b.ravel() for b in dense])
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def encode_drugs(params: DrugEncoderParams, molecules: Sequence[MolecularGraph]) -> Tensor:
    """Encode several molecules in one pass; row ``i`` encodes ``molecules[i]``.

    Atoms of all molecules are stacked, the propagation runs through one
    block-diagonal matrix and pooling is done per molecule segment.
    """
    if not molecules:
        raise ValueError("encode_drugs needs at least one molecule")
    feats = [featurize(m)[0] for m in molecules]
    x = T.constant(np.vstack(feats))
    z0 = atom_mlp(params, x)
    blocks = [propagation_matrix(m, params.iterations, params.teleport) for m in molecules]
    prop = blocks[0] if len(blocks) == 1 else block_diag(blocks)
    z = T.const_matmul(prop, z0)
    offsets = np.cumsum([0] + [m.num_atoms for m in molecules])
    return T.concat_cols([T.segment_pool(z, offsets, kind) for kind in POOLS])


def encode_drug(params: DrugEncoderParams, m: MolecularGraph) -> Tensor:
    """Single-molecule encoding, ``1 x 3*hidden`` (mean ++ max ++ min)."""
    z0 = atom_mlp(params, T.constant(featurize(m)[0]))
    z = T.const_matmul(propagation_matrix(m, params.iterations, params.teleport), z0)
    return T.concat_cols([T.pool(z, kind) for kind in POOLS])


def encode_proteins(params: ProteinEncoderParams, x: Tensor) -> Tensor:
    if x.shape[1] != params.in_dim:
        raise DimensionError(
            f"protein features have width {x.shape[1]}, encoder expects {params.in_dim}"
        )
    h = T.relu(T.add(T.matmul(x, params.w1), params.b1))
    return T.relu(T.add(T.matmul(h, params.w2), params.b2))


def encode_protein(params: ProteinEncoderParams, x: Tensor) -> Tensor:
    return encode_proteins(params, x)


def encode_cell(emb: CellEmbedding, c: str) -> Tensor:
    return T.take_rows(emb.table, [emb.row(c)])


def encode_cells(emb: CellEmbedding, cells: Sequence[str]) -> Tensor:
    return T.take_rows(emb.table, [emb.row(c) for c in cells])
