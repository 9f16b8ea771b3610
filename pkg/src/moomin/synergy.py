"""Drug pair + cell line scoring head, losses and the mini-batch forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .contextualizer import (
    EXACT,
    FeatureStore,
    MultiScaleRep,
    block_widths,
    contextualize,
    flatten,
)
from .encoders import CellEmbedding, DrugEncoderParams, ProteinEncoderParams, encode_cells, glorot
from .errors import DataError, DimensionError
from .graph import BipartiteGraph
from .tensor import Tensor

BCE_EPS = 1e-12


@dataclass(frozen=True)
class SynergyRecord:
    drug_a: str
    drug_b: str
    cell: str
    label: int

    def __post_init__(self):
        if self.drug_a == self.drug_b:
            raise ValueError(f"a synergy record needs two different drugs, got {self.drug_a!r} twice")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class ModelConfig:
    r: int = 1
    protein_dim: int = 16
    atom_dim: int = 16
    hidden: int = 32
    protein_out: int = 32
    cell_dim: int = 16
    head_hidden: int = 16
    iterations: int = 10
    teleport: float = 0.2
    dropout: float = 0.5

    @property
    def rep_dim(self) -> int:
        return sum(block_widths(3 * self.hidden, self.protein_out, self.r))

    @property
    def head_in(self) -> int:
        return 2 * self.rep_dim + self.cell_dim


@dataclass
class HeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, hidden: int = 16) -> "HeadParams":
        return cls(
            w1=T.parameter(glorot(rng, in_dim, hidden)),
            b1=T.parameter(np.zeros((1, hidden))),
            w2=T.parameter(glorot(rng, hidden, 1)),
            b2=T.parameter(np.zeros((1, 1))),
        )

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class MoominModel:
    config: ModelConfig
    drug: DrugEncoderParams
    protein: ProteinEncoderParams
    cell: CellEmbedding
    head: HeadParams

    @classmethod
    def init(cls, config: ModelConfig, cells: Sequence[str], rng: np.random.Generator) -> "MoominModel":
        return cls(
            config=config,
            drug=DrugEncoderParams.init(rng, config.hidden, config.iterations, config.teleport,
                                        in_dim=config.atom_dim),
            protein=ProteinEncoderParams.init(rng, config.protein_dim, config.hidden, config.protein_out),
            cell=CellEmbedding.init(rng, cells, config.cell_dim),
            head=HeadParams.init(rng, config.head_in, config.head_hidden),
        )

    @property
    def cells(self) -> list[str]:
        return self.cell.cells

    def parameters(self) -> dict[str, Tensor]:
        """Every trainable tensor under a stable dotted name."""
        out: dict[str, Tensor] = {}
        for prefix, part in (("drug", self.drug), ("protein", self.protein),
                             ("cell", self.cell), ("head", self.head)):
            for name, p in part.parameters().items():
                out[f"{prefix}.{name}"] = p
        return out

    def zero_grad(self) -> None:
        T.zero_grads(self.parameters().values())


def pair_cell_rep(m_a: MultiScaleRep, m_b: MultiScaleRep, h_c: Tensor) -> Tensor:
    if m_a.widths != m_b.widths:
        raise DimensionError(f"representation blocks differ: {m_a.widths} vs {m_b.widths}")
    return T.concat_cols([flatten(m_a), flatten(m_b), h_c])


def score(head: HeadParams, h: Tensor, training: bool = False,
          rng: Optional[np.random.Generator] = None, dropout: float = 0.5) -> Tensor:
    """Synergy probabilities, one row per pair-cell representation row."""
    if h.shape[1] != head.in_dim:
        raise DimensionError(f"pair-cell width {h.shape[1]} but head expects {head.in_dim}")
    hidden = T.relu(T.add(T.matmul(h, head.w1), head.b1))
    hidden = T.dropout(hidden, dropout, training, rng)
    return T.sigmoid(T.add(T.matmul(hidden, head.w2), head.b2))


def bce(y, p) -> Tensor:
    """Binary cross-entropy per entry; ``p`` may be a Tensor or plain numbers."""
    if not isinstance(p, Tensor):
        p = T.constant(p)
    return T.binary_cross_entropy(p, y, BCE_EPS)


@dataclass
class BatchResult:
    loss: Tensor
    scores: np.ndarray
    losses: np.ndarray = field(repr=False)


def check_resolvable(records: Sequence[SynergyRecord], g: BipartiteGraph, model: MoominModel) -> None:
    bad_drugs = sorted({d for rec in records for d in (rec.drug_a, rec.drug_b) if d not in g})
    known = set(model.cells)
    bad_cells = sorted({rec.cell for rec in records if rec.cell not in known})
    if bad_drugs or bad_cells:
        parts = []
        if bad_drugs:
            parts.append(f"unknown drugs: {', '.join(bad_drugs)}")
        if bad_cells:
            parts.append(f"unknown cells: {', '.join(bad_cells)}")
        raise DataError("; ".join(parts))


def forward_scores(
    records: Sequence[SynergyRecord],
    model: MoominModel,
    g: BipartiteGraph,
    feats: FeatureStore,
    mode: str = EXACT,
    samples: int = 128,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout_rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Probabilities for ``records`` as a ``len(records) x 1`` tensor.

    Each distinct drug is contextualized once per call; in sampled mode that
    means a drug appearing in several records shares one draw of walks.
    """
    h = head_inputs(records, model, g, feats, mode, samples, rng)
    return score(model.head, h, training, dropout_rng, model.config.dropout)


def head_inputs(
    records: Sequence[SynergyRecord],
    model: MoominModel,
    g: BipartiteGraph,
    feats: FeatureStore,
    mode: str = EXACT,
    samples: int = 128,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Pair-cell representations ``[M_a ++ M_b ++ h_c]``, one row per record."""
    if not records:
        raise ValueError("empty batch")
    check_resolvable(records, g, model)
    drugs: dict[str, int] = {}
    for rec in records:
        for d in (rec.drug_a, rec.drug_b):
            drugs.setdefault(d, len(drugs))
    reps = contextualize(g, model, feats, list(drugs), model.config.r, mode, samples, rng)
    flat = flatten(reps)
    a = T.take_rows(flat, [drugs[rec.drug_a] for rec in records])
    b = T.take_rows(flat, [drugs[rec.drug_b] for rec in records])
    c = encode_cells(model.cell, [rec.cell for rec in records])
    return T.concat_cols([a, b, c])


def batch_forward(
    batch: Sequence[SynergyRecord],
    model: MoominModel,
    g: BipartiteGraph,
    feats: FeatureStore,
    mode: str = EXACT,
    samples: int = 128,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout_rng: Optional[np.random.Generator] = None,
) -> BatchResult:
    """Mean binary cross-entropy over ``batch`` plus the per-record scores."""
    probs = forward_scores(batch, model, g, feats, mode, samples, training, rng, dropout_rng)
    labels = np.array([[rec.label] for rec in batch], dtype=np.float64)
    losses = bce(labels, probs)
    return BatchResult(loss=T.mean(losses), scores=probs.data[:, 0].copy(), losses=losses.data[:, 0].copy())


def predict(
    records: Sequence[SynergyRecord],
    model: MoominModel,
    g: BipartiteGraph,
    feats: FeatureStore,
    mode: str = EXACT,
    samples: int = 128,
    rng: Optional[np.random.Generator] = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Inference-mode scores (dropout off), chunked to bound memory."""
    out = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        out.append(forward_scores(chunk, model, g, feats, mode, samples, False, rng).data[:, 0])
    return np.concatenate(out) if out else np.zeros(0)


__all__ = [
    "SynergyRecord",
    "ModelConfig",
    "HeadParams",
    "MoominModel",
    "pair_cell_rep",
    "score",
    "head_inputs",
    "bce",
    "BatchResult",
    "batch_forward",
    "forward_scores",
    "predict",
]
