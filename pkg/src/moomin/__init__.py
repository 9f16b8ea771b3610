"""Multi-scale multimodal drug-pair synergy scoring on a bipartite drug-protein graph."""

from .contextualizer import MultiScaleRep, contextualize, exact_rep, flatten, sample_rep
from .dataio import DatasetBundle, load_bundle, load_checkpoint, save_checkpoint
from .graph import BipartiteGraph, TransitionRow, build, transition_row, walk_step
from .metrics import MetricsReport, f1, pr_auc, roc_auc
from .molgraph import MolecularGraph, featurize, parse_molfile, parse_smiles
from .synergy import ModelConfig, MoominModel, SynergyRecord, batch_forward, bce, pair_cell_rep, score
from .trainer import TrainConfig, adam_step, evaluate, train

__version__ = "0.1.0"
