"""Shared helpers: finite-difference oracle, random graphs and small bundles."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from moomin.dataio import assemble_bundle
from moomin.graph import BipartiteGraph, build
from moomin.molgraph import parse_smiles
from moomin.synergy import SynergyRecord
from moomin.synth import SynthSpec, generate, write_bundle


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place)."""
    out = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = f()
        x[idx] = orig - h
        down = f()
        x[idx] = orig
        out[idx] = (up - down) / (2 * h)
    return out


def max_rel_err(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> float:
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def random_bipartite(rng: np.random.Generator, n_drugs: int, n_proteins: int,
                     p: float) -> BipartiteGraph:
    drugs = [f"d{i}" for i in range(n_drugs)]
    proteins = [f"p{j}" for j in range(n_proteins)]
    mask = rng.random((n_drugs, n_proteins)) < p
    edges = [(drugs[i], proteins[j]) for i, j in zip(*np.nonzero(mask))]
    return build(edges, drugs=drugs, proteins=proteins)


def dense_transition(g: BipartiteGraph) -> np.ndarray:
    """Row-normalized adjacency built from the edge list alone."""
    n = g.num_vertices
    a = np.zeros((n, n))
    for d, p in g.edges():
        a[g.index(d), g.index(p)] = 1.0
        a[g.index(p), g.index(d)] = 1.0
    deg = a.sum(axis=1)
    return np.divide(a, deg[:, None], out=np.zeros_like(a), where=deg[:, None] > 0)


SMALL_SMILES = {"d1": "CCO", "d2": "C1CCN1", "d3": "CC(=O)OCl"}


def small_bundle(n_features: int = 4, seed: int = 0):
    rng = np.random.default_rng(seed)
    edges = [("d1", "p1"), ("d1", "p2"), ("d2", "p1"), ("d3", "p2")]
    molecules = {d: parse_smiles(s) for d, s in SMALL_SMILES.items()}
    feats = {p: rng.normal(size=n_features) for p in ("p1", "p2")}
    records = [SynergyRecord("d1", "d2", "c1", 1), SynergyRecord("d2", "d3", "c2", 0),
               SynergyRecord("d3", "d1", "c1", 0), SynergyRecord("d1", "d3", "c2", 1)]
    return assemble_bundle(edges, molecules, feats, {"c1": "Lung", "c2": None}, records)


@pytest.fixture
def bundle():
    return small_bundle()


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory) -> Path:
    spec = SynthSpec(n_drugs=16, n_proteins=10, n_cells=3, n_records=120, seed=3)
    smiles, b, rule = generate(spec)
    return write_bundle(tmp_path_factory.mktemp("synth"), smiles, b, rule)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
