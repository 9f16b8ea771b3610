"""Synthetic datasets with a planted labelling rule.

``shared-protein``: a pair is synergistic on cell ``c`` when the two drugs
share at least ``k`` targets inside the cell's active target set. Only the
graph context carries that signal. ``molecular``: synergistic when both
molecules are large (at least 50 heavy atoms), visible from the molecules
alone. ``mixed`` is the conjunction of the two.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .dataio import DatasetBundle, assemble_bundle
from .molgraph import ELEMENTS, MolecularGraph, parse_smiles, to_smiles
from .synergy import SynergyRecord
from .trainer import LARGE_MOLECULE_ATOMS

RULES = ("shared-protein", "molecular", "mixed")
TISSUES = ("Blood", "Breast", "Colon", "Lung", "Ovary", "Skin")
ELEMENT_WEIGHTS = np.array([0.01, 0.70, 0.10, 0.10, 0.01, 0.03, 0.02, 0.01, 0.01, 0.01])


@dataclass(frozen=True)
class SynthSpec:
    n_drugs: int = 40
    n_proteins: int = 24
    n_cells: int = 6
    edge_prob: float = 0.12
    n_records: int = 800
    planted_rule: str = "shared-protein"
    noise_rate: float = 0.0
    seed: int = 0
    k: int = 1
    protein_dim: int = 16
    active_prob: float = 0.5
    large_prob: float = 0.4
    min_atoms: int = 5
    max_atoms: int = 60
    positive_share: float = 0.5

    def __post_init__(self):
        for name in ("edge_prob", "noise_rate", "active_prob", "large_prob", "positive_share"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("n_drugs", "n_proteins", "n_cells", "n_records", "k", "protein_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_drugs < 2:
            raise ValueError("need at least two drugs to form pairs")
        if self.planted_rule not in RULES:
            raise ValueError(f"planted_rule must be one of {RULES}")
        if not 1 <= self.min_atoms <= LARGE_MOLECULE_ATOMS <= self.max_atoms:
            raise ValueError(f"atom range must straddle {LARGE_MOLECULE_ATOMS}")


def random_molecule(rng: np.random.Generator, n_atoms: int, max_valence: int = 4) -> MolecularGraph:
    """Random connected heavy-atom graph: a random tree plus a few ring bonds."""
    atoms = [ELEMENTS[i] for i in rng.choice(len(ELEMENTS), size=n_atoms, p=ELEMENT_WEIGHTS)]
    deg = [0] * n_atoms
    bonds: list[tuple[int, int, int]] = []
    pairs: set[tuple[int, int]] = set()
    for v in range(1, n_atoms):
        open_atoms = [u for u in range(v) if deg[u] < max_valence]
        u = open_atoms[int(rng.integers(len(open_atoms)))]
        order = 2 if rng.random() < 0.1 else 1
        bonds.append((u, v, order))
        pairs.add((u, v))
        deg[u] += 1
        deg[v] += 1
    for _ in range(n_atoms // 8):
        u, v = sorted(int(x) for x in rng.choice(n_atoms, size=2, replace=False))
        if (u, v) in pairs or deg[u] >= max_valence or deg[v] >= max_valence:
            continue
        bonds.append((u, v, 1))
        pairs.add((u, v))
        deg[u] += 1
        deg[v] += 1
    return MolecularGraph(atoms, bonds)


def _labels(spec: SynthSpec, nbrs: dict[str, set[str]], active: dict[str, set[str]],
            sizes: dict[str, int], a: str, b: str, c: str) -> int:
    shared = len(nbrs[a] & nbrs[b] & active[c]) >= spec.k
    large = sizes[a] >= LARGE_MOLECULE_ATOMS and sizes[b] >= LARGE_MOLECULE_ATOMS
    if spec.planted_rule == "shared-protein":
        return int(shared)
    if spec.planted_rule == "molecular":
        return int(large)
    return int(shared and large)


def generate(spec: SynthSpec) -> tuple[dict[str, str], DatasetBundle, dict]:
    """Draw a dataset; returns SMILES strings, the validated bundle and the rule description."""
    rng = np.random.default_rng(spec.seed)
    drugs = [f"D{i:03d}" for i in range(spec.n_drugs)]
    proteins = [f"P{i:03d}" for i in range(spec.n_proteins)]
    cells = [f"C{i:02d}" for i in range(spec.n_cells)]

    adj = rng.random((spec.n_drugs, spec.n_proteins)) < spec.edge_prob
    for i in range(spec.n_drugs):
        if not adj[i].any():
            adj[i, rng.integers(spec.n_proteins)] = True
    edges = [(drugs[i], proteins[j]) for i in range(spec.n_drugs) for j in range(spec.n_proteins) if adj[i, j]]
    nbrs = {d: {proteins[j] for j in np.flatnonzero(adj[i])} for i, d in enumerate(drugs)}

    smiles: dict[str, str] = {}
    molecules: dict[str, MolecularGraph] = {}
    for d in drugs:
        if rng.random() < spec.large_prob:
            n = int(rng.integers(LARGE_MOLECULE_ATOMS, spec.max_atoms + 1))
        else:
            n = int(rng.integers(spec.min_atoms, LARGE_MOLECULE_ATOMS))
        smiles[d] = to_smiles(random_molecule(rng, n))
        molecules[d] = parse_smiles(smiles[d])
    sizes = {d: m.num_atoms for d, m in molecules.items()}

    feats = {p: rng.normal(size=spec.protein_dim) for p in proteins}
    tissues = {c: TISSUES[i % len(TISSUES)] for i, c in enumerate(cells)}
    active = {}
    for c in cells:
        mask = rng.random(spec.n_proteins) < spec.active_prob
        if not mask.any():
            mask[rng.integers(spec.n_proteins)] = True
        active[c] = {proteins[j] for j in np.flatnonzero(mask)}

    candidates = [(drugs[i], drugs[j], c)
                  for i in range(spec.n_drugs) for j in range(i + 1, spec.n_drugs) for c in cells]
    labels = np.array([_labels(spec, nbrs, active, sizes, a, b, c) for a, b, c in candidates])
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_total = min(spec.n_records, len(candidates))
    n_pos = min(len(pos), int(round(spec.positive_share * n_total)))
    n_neg = min(len(neg), n_total - n_pos)
    n_pos = min(len(pos), n_total - n_neg)
    chosen = np.concatenate([rng.choice(pos, n_pos, replace=False), rng.choice(neg, n_neg, replace=False)])
    chosen = chosen[rng.permutation(len(chosen))]

    records = []
    for idx in chosen:
        a, b, c = candidates[idx]
        if rng.random() < 0.5:
            a, b = b, a
        y = int(labels[idx])
        if rng.random() < spec.noise_rate:
            y = 1 - y
        records.append(SynergyRecord(a, b, c, y))

    bundle = assemble_bundle(edges, molecules, feats, tissues, records)
    rule = {
        "rule": spec.planted_rule,
        "k": spec.k,
        "large_atoms": LARGE_MOLECULE_ATOMS,
        "noise_rate": spec.noise_rate,
        "active_targets": {c: sorted(active[c]) for c in cells},
        "spec": asdict(spec),
    }
    return smiles, bundle, rule


def write_bundle(out_dir: Union[str, Path], smiles: dict[str, str], bundle: DatasetBundle,
                 rule: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    (out / "graph.tsv").write_text("".join(f"{d}\t{p}\n" for d, p in g.edges()), encoding="utf-8")
    (out / "molecules.smi").write_text("".join(f"{d}\t{s}\n" for d, s in smiles.items()), encoding="utf-8")
    width = bundle.protein_dim
    rows = ["protein_id," + ",".join(f"f{i + 1}" for i in range(width))]
    rows += [p + "," + ",".join(f"{v:.17g}" for v in x) for p, x in bundle.protein_features.items()]
    (out / "proteins.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    (out / "cells.tsv").write_text(
        "".join(f"{c}\t{bundle.tissues.get(c) or ''}\n" for c in bundle.cells), encoding="utf-8")
    rows = ["drug_a,drug_b,cell,label"] + [f"{r.drug_a},{r.drug_b},{r.cell},{r.label}" for r in bundle.synergy]
    (out / "synergy.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    if rule is not None:
        (out / "rule.json").write_text(json.dumps(rule, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def synth(spec: SynthSpec, out_dir: Union[str, Path]) -> DatasetBundle:
    smiles, bundle, rule = generate(spec)
    write_bundle(out_dir, smiles, bundle, rule)
    return bundle
