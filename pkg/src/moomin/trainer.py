"""Adam training loop, seeded splitting and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import tensor as T
from .contextualizer import EXACT, SAMPLED
from .dataio import DatasetBundle
from .errors import DegenerateDataError, DimensionError
from .metrics import MetricsReport, grouped_reports, report
from .synergy import ModelConfig, MoominModel, SynergyRecord, batch_forward, predict
from .tensor import Tensor

logger = logging.getLogger(__name__)

# Named random sub-streams; each stage draws from its own generator so that,
# e.g., changing the sample count does not perturb the split or the init.
STREAMS = {"split": 1, "init": 2, "shuffle": 3, "dropout": 4, "walks": 5, "eval": 6, "cv": 7}

LARGE_MOLECULE_ATOMS = 50


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name]])


@dataclass(frozen=True)
class TrainConfig:
    r: int = 1
    mode: str = EXACT
    samples: int = 128
    batch_size: int = 32
    lr: float = 5e-3
    weight_decay: float = 5e-5
    epochs: int = 50
    train_ratio: float = 0.8
    seed: int = 0
    cv_folds: int = 0
    dropout: float = 0.5
    eval_every: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError("train_ratio must lie in (0, 1)")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.r < 0:
            raise ValueError("r must be >= 0")
        if self.mode not in (EXACT, SAMPLED):
            raise ValueError(f"mode must be {EXACT!r} or {SAMPLED!r}")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def decays(name: str) -> bool:
    """Weight decay applies to weight matrices only, not biases or the cell table."""
    leaf = name.rsplit(".", 1)[-1]
    return not leaf.startswith("b") and not name.startswith("cell.")


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float, weight_decay: float = 0.0,
              grads: Optional[dict[str, np.ndarray]] = None) -> None:
    """One bias-corrected Adam update, in place.

    Weight decay is decoupled: ``p <- p - lr * weight_decay * p`` happens
    before the Adam delta and never touches the moment estimates.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad if grads is None else grads[name]
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        data = p.data
        if weight_decay and decays(name):
            data = data - lr * weight_decay * data
        p.data = data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_roc_auc: float = math.nan
    val_pr_auc: float = math.nan
    val_f1: float = math.nan


HISTORY_HEADER = ("epoch", "train_loss", "val_roc_auc", "val_pr_auc", "val_f1")


@dataclass
class TrainResult:
    model: MoominModel
    history: list[EpochStats]
    train_records: list[SynergyRecord]
    test_records: list[SynergyRecord]
    epochs: int = 0


def split_records(records: Sequence[SynergyRecord], train_ratio: float,
                  seed: int) -> tuple[list[SynergyRecord], list[SynergyRecord]]:
    """Seeded shuffle, then the first ``train_ratio`` share becomes the training set."""
    order = stream(seed, "split").permutation(len(records))
    cut = int(round(train_ratio * len(records)))
    cut = min(max(cut, 1), len(records))
    return [records[i] for i in order[:cut]], [records[i] for i in order[cut:]]


def model_config(cfg: TrainConfig, bundle: DatasetBundle) -> ModelConfig:
    return ModelConfig(r=cfg.r, protein_dim=bundle.protein_dim, dropout=cfg.dropout)


def _check_finite(model: MoominModel) -> None:
    for name, p in model.parameters().items():
        if not np.isfinite(p.data).all():
            raise FloatingPointError(f"parameter {name} became non-finite")


def _fit(model: MoominModel, cfg: TrainConfig, bundle: DatasetBundle, train: list[SynergyRecord],
         val: list[SynergyRecord], epochs: int, seed: int) -> list[EpochStats]:
    shuffle = stream(seed, "shuffle")
    drop = stream(seed, "dropout")
    walks = stream(seed, "walks")
    eval_walks = stream(seed, "eval")
    state = AdamState()
    params = model.parameters()
    history = []
    g = bundle.graph
    val_ok = len({rec.label for rec in val}) == 2
    for epoch in range(1, epochs + 1):
        order = shuffle.permutation(len(train))
        total = 0.0
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            model.zero_grad()
            res = batch_forward(batch, model, g, bundle, cfg.mode, cfg.samples, True, walks, drop)
            T.backward(res.loss)
            adam_step(params, state, cfg.lr, cfg.weight_decay)
            _check_finite(model)
            total += res.loss.item() * len(batch)
        stats = EpochStats(epoch, total / len(train))
        if val and val_ok and (epoch % cfg.eval_every == 0 or epoch == epochs):
            scores = predict(val, model, g, bundle, cfg.mode, cfg.samples, eval_walks)
            rep = report([rec.label for rec in val], scores)
            stats.val_roc_auc, stats.val_pr_auc, stats.val_f1 = rep.roc_auc, rep.pr_auc, rep.f1
        history.append(stats)
        logger.debug("epoch %d loss %.4f val_auc %.4f", epoch, stats.train_loss, stats.val_roc_auc)
    return history


def _select_epochs(cfg: TrainConfig, bundle: DatasetBundle, train: list[SynergyRecord]) -> int:
    """Pick the epoch count with the best mean validation ROC AUC over ``cv_folds`` folds."""
    folds = np.array_split(stream(cfg.seed, "cv").permutation(len(train)), cfg.cv_folds)
    curves = []
    for k, held in enumerate(folds):
        held_set = set(held.tolist())
        fit = [train[i] for i in range(len(train)) if i not in held_set]
        val = [train[i] for i in held]
        if len({rec.label for rec in fit}) < 2 or len({rec.label for rec in val}) < 2:
            continue
        model = MoominModel.init(model_config(cfg, bundle), bundle.cells, stream(cfg.seed + k + 1, "init"))
        hist = _fit(model, cfg, bundle, fit, val, cfg.epochs, cfg.seed + k + 1)
        curves.append([h.val_roc_auc for h in hist])
    if not curves:
        return cfg.epochs
    mean_curve = np.nanmean(np.array(curves), axis=0)
    return int(np.nanargmax(mean_curve)) + 1


def train(cfg: TrainConfig, bundle: DatasetBundle, records: Optional[Sequence[SynergyRecord]] = None,
          test: Optional[Sequence[SynergyRecord]] = None) -> TrainResult:
    """Split, initialise and fit.

    ``records`` defaults to the bundle's synergy set. Passing ``test`` skips
    the split and trains on all of ``records``.
    """
    data = list(bundle.synergy if records is None else records)
    if not data:
        raise DegenerateDataError("no synergy records to train on")
    if test is None:
        train_set, test_set = split_records(data, cfg.train_ratio, cfg.seed)
    else:
        train_set, test_set = data, list(test)
    if len({rec.label for rec in train_set}) < 2:
        raise DegenerateDataError("training split contains a single class")
    epochs = cfg.epochs
    if cfg.cv_folds > 1 and epochs > 0:
        epochs = _select_epochs(cfg, bundle, train_set)
        logger.info("cross-validation selected %d epochs", epochs)
    model = MoominModel.init(model_config(cfg, bundle), bundle.cells, stream(cfg.seed, "init"))
    history = _fit(model, cfg, bundle, train_set, test_set, epochs, cfg.seed)
    return TrainResult(model, history, train_set, test_set, epochs)


def molecule_size_class(n_atoms: int) -> str:
    return "Large" if n_atoms >= LARGE_MOLECULE_ATOMS else "Small"


def pair_size_class(n_a: int, n_b: int) -> str:
    classes = sorted((molecule_size_class(n_a), molecule_size_class(n_b)))
    return {
        ("Large", "Large"): "Large-Large",
        ("Large", "Small"): "Large-Small",
        ("Small", "Small"): "Small-Small",
    }[tuple(classes)]


def group_keys(records: Iterable[SynergyRecord], bundle: DatasetBundle, group_by: str) -> list[str]:
    if group_by == "tissue":
        return [bundle.tissues.get(rec.cell) or "unknown" for rec in records]
    if group_by == "molsize":
        return [pair_size_class(bundle.molecules[rec.drug_a].num_atoms,
                                bundle.molecules[rec.drug_b].num_atoms) for rec in records]
    raise ValueError(f"unknown group-by key {group_by!r} (tissue or molsize)")


def evaluate(
    model: MoominModel,
    records: Sequence[SynergyRecord],
    bundle: DatasetBundle,
    mode: str = EXACT,
    threshold: float = 0.5,
    group_by: Optional[str] = None,
    samples: int = 128,
    rng: Optional[np.random.Generator] = None,
    scores: Optional[np.ndarray] = None,
) -> dict[str, MetricsReport]:
    """Metrics on ``records``; key ``"all"`` without grouping, one key per group otherwise."""
    if scores is None:
        if mode == SAMPLED and rng is None:
            rng = np.random.default_rng(0)
        scores = predict(records, model, bundle.graph, bundle, mode, samples, rng)
    labels = [rec.label for rec in records]
    if group_by is None:
        return {"all": report(labels, scores, threshold)}
    return grouped_reports(labels, scores, group_keys(records, bundle, group_by), threshold)
