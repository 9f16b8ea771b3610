"""Input file loading with up-front cross-reference validation, and text checkpoints."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import BipartitenessError, CheckpointError, DataError, ParseError
from .graph import BipartiteGraph, build
from .molgraph import MolecularGraph, parse_molfile, parse_molfile_sections, parse_smiles
from .synergy import ModelConfig, MoominModel, SynergyRecord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_HEADER = "MOOMIN-CKPT v1"
SYNERGY_HEADER = ["drug_a", "drug_b", "cell", "label"]
MOLFILE_SUFFIX = ".mol.txt"


@dataclass
class DatasetBundle:
    graph: BipartiteGraph
    molecules: dict[str, MolecularGraph]
    protein_features: dict[str, np.ndarray]
    cells: list[str]
    tissues: dict[str, Optional[str]]
    synergy: list[SynergyRecord]

    @property
    def protein_dim(self) -> int:
        for row in self.protein_features.values():
            return int(row.shape[0])
        return 1


def _read_text(path: PathLike) -> str:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror or exc}", source=str(path)) from None
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc.reason})", offset=exc.start, source=str(path)) from None


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, raw.rstrip("\r\n")


def _csv_rows(text: str, path: PathLike) -> list[tuple[int, list[str]]]:
    try:
        rows = list(csv.reader(io.StringIO(text)))
    except csv.Error as exc:
        raise ParseError(f"malformed CSV: {exc}", source=str(path)) from None
    return [(i + 1, r) for i, r in enumerate(rows) if r and not r[0].startswith("#")]


def read_graph(path: PathLike) -> list[tuple[str, str]]:
    edges = []
    for lineno, line in _lines(_read_text(path)):
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) != 2 or not all(parts):
            raise ParseError("expected '<drug_id>\\t<protein_id>'", line=lineno, source=str(path))
        edges.append((parts[0], parts[1]))
    return edges


def read_smiles_file(path: PathLike) -> dict[str, MolecularGraph]:
    out: dict[str, MolecularGraph] = {}
    for lineno, line in _lines(_read_text(path)):
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise ParseError("expected '<drug_id>\\t<smiles>'", line=lineno, source=str(path))
        drug, smiles = parts[0].strip(), parts[1].strip()
        if drug in out:
            raise ParseError(f"molecule {drug!r} listed twice", line=lineno, source=str(path))
        try:
            out[drug] = parse_smiles(smiles)
        except ParseError as exc:
            raise ParseError(f"{drug}: {exc.reason} at offset {exc.offset}", line=lineno,
                             source=str(path)) from None
    return out


def read_molecules(path: PathLike) -> dict[str, MolecularGraph]:
    """Molecules from a SMILES file, a ``mol``-sectioned fallback file, or a
    directory of ``<drug_id>.mol.txt`` files (optionally with a SMILES file too)."""
    path = Path(path)
    if path.is_dir():
        out: dict[str, MolecularGraph] = {}
        for f in sorted(path.iterdir()):
            if f.name.endswith(MOLFILE_SUFFIX):
                out[f.name[: -len(MOLFILE_SUFFIX)]] = parse_molfile(_read_text(f), source=str(f))
            elif f.suffix == ".smi":
                for k, v in read_smiles_file(f).items():
                    out.setdefault(k, v)
        return out
    if path.name.endswith(MOLFILE_SUFFIX):
        return {path.name[: -len(MOLFILE_SUFFIX)]: parse_molfile(_read_text(path), source=str(path))}
    text = _read_text(path)
    first = next((line.split() for _, line in _lines(text)), None)
    if first and first[0] == "mol":
        return parse_molfile_sections(text, source=str(path))
    return read_smiles_file(path)


def read_proteins(path: PathLike) -> dict[str, np.ndarray]:
    text = _read_text(path)
    rows = _csv_rows(text, path)
    if not rows:
        raise ParseError("missing header 'protein_id,f1,...,fk'", line=1, source=str(path))
    header_line, header = rows[0]
    if header[0].strip() != "protein_id" or len(header) < 2:
        raise ParseError("header must be 'protein_id,f1,...,fk'", line=header_line, source=str(path))
    width = len(header) - 1
    out: dict[str, np.ndarray] = {}
    for lineno, row in rows[1:]:
        pid = row[0].strip()
        if not pid:
            raise ParseError("empty protein ID", line=lineno, source=str(path))
        if len(row) - 1 != width:
            raise ParseError(f"row for {pid!r} has {len(row) - 1} features but the header declares {width}",
                             line=lineno, source=str(path))
        try:
            vals = np.array([float(v) for v in row[1:]], dtype=np.float64)
        except ValueError:
            raise ParseError(f"non-numeric feature for {pid!r}", line=lineno, source=str(path)) from None
        if not np.isfinite(vals).all():
            raise ParseError(f"non-finite feature for {pid!r}", line=lineno, source=str(path))
        if pid in out:
            raise ParseError(f"protein {pid!r} listed twice", line=lineno, source=str(path))
        out[pid] = vals
    return out


def read_cells(path: PathLike) -> dict[str, Optional[str]]:
    out: dict[str, Optional[str]] = {}
    for lineno, line in _lines(_read_text(path)):
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) > 2 or not parts[0]:
            raise ParseError("expected '<cell_id>[\\t<tissue_tag>]'", line=lineno, source=str(path))
        if parts[0] in out:
            raise ParseError(f"cell {parts[0]!r} listed twice", line=lineno, source=str(path))
        out[parts[0]] = parts[1] if len(parts) == 2 and parts[1] else None
    return out


def read_synergy(path: PathLike) -> list[SynergyRecord]:
    text = _read_text(path)
    rows = _csv_rows(text, path)
    if not rows or [c.strip() for c in rows[0][1]] != SYNERGY_HEADER:
        raise ParseError("header must be 'drug_a,drug_b,cell,label'", line=rows[0][0] if rows else 1,
                         source=str(path))
    out = []
    for lineno, row in rows[1:]:
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno, source=str(path))
        a, b, c, y = (v.strip() for v in row)
        if y not in ("0", "1"):
            raise ParseError(f"label must be 0 or 1, got {y!r}", line=lineno, source=str(path))
        if not a or not b or not c:
            raise ParseError("empty ID", line=lineno, source=str(path))
        try:
            out.append(SynergyRecord(a, b, c, int(y)))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, source=str(path)) from None
    return out


def read_triples(path: PathLike) -> list[tuple[str, str, str]]:
    """``drug_a,drug_b,cell`` rows to score; an extra label column is ignored."""
    text = _read_text(path)
    rows = _csv_rows(text, path)
    if not rows or [c.strip() for c in rows[0][1][:3]] != SYNERGY_HEADER[:3]:
        raise ParseError("header must start with 'drug_a,drug_b,cell'", line=rows[0][0] if rows else 1,
                         source=str(path))
    out = []
    for lineno, row in rows[1:]:
        if len(row) < 3:
            raise ParseError(f"expected at least 3 fields, got {len(row)}", line=lineno, source=str(path))
        out.append((row[0].strip(), row[1].strip(), row[2].strip()))
    return out


def assemble_bundle(
    edges: list[tuple[str, str]],
    molecules: dict[str, MolecularGraph],
    protein_features: dict[str, np.ndarray],
    tissues: dict[str, Optional[str]],
    synergy: list[SynergyRecord],
) -> DatasetBundle:
    """Build the graph and run every cross-reference check, reporting all failures together."""
    extra_drugs = list(molecules) + [d for rec in synergy for d in (rec.drug_a, rec.drug_b)]
    try:
        graph = build(edges, drugs=extra_drugs, proteins=list(protein_features))
    except BipartitenessError as exc:
        raise DataError(f"bipartiteness violated: {exc}") from None

    problems = []
    widths = {row.shape[0] for row in protein_features.values()}
    if len(widths) > 1:
        problems.append(f"protein feature widths differ: {sorted(widths)}")
    no_mol = sorted({d for rec in synergy for d in (rec.drug_a, rec.drug_b) if d not in molecules})
    if no_mol:
        problems.append(f"synergy drugs without a molecule: {', '.join(no_mol)}")
    no_feat = [p for p in graph.proteins if graph.degree(p) > 0 and p not in protein_features]
    if no_feat:
        problems.append(f"connected proteins without features: {', '.join(no_feat)}")
    no_cell = sorted({rec.cell for rec in synergy if rec.cell not in tissues})
    if no_cell:
        problems.append(f"synergy cells not registered: {', '.join(no_cell)}")
    if problems:
        raise DataError("; ".join(problems))

    unfeatured = [d for d in graph.drugs if d not in molecules]
    if unfeatured:
        logger.warning("%d graph drugs have no molecule; contexts reaching them will fail: %s",
                       len(unfeatured), ", ".join(unfeatured[:10]))
    return DatasetBundle(graph, molecules, protein_features, list(tissues), dict(tissues), synergy)


def load_bundle(graph: PathLike, molecules: PathLike, proteins: PathLike, cells: PathLike,
                synergy: PathLike) -> DatasetBundle:
    return assemble_bundle(
        read_graph(graph),
        read_molecules(molecules),
        read_proteins(proteins),
        read_cells(cells),
        read_synergy(synergy),
    )


def bundle_paths(directory: PathLike) -> dict[str, Path]:
    """Default file names inside a dataset directory, as written by ``synth``."""
    d = Path(directory)
    return {
        "graph": d / "graph.tsv",
        "molecules": d / "molecules.smi",
        "proteins": d / "proteins.csv",
        "cells": d / "cells.tsv",
        "synergy": d / "synergy.csv",
    }


# --- checkpoints -----------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def dump_checkpoint(model: MoominModel) -> str:
    cfg = model.config
    lines = [CHECKPOINT_HEADER]
    lines.append("config " + " ".join(f"{f.name}={getattr(cfg, f.name)!r}" for f in fields(cfg)))
    lines.append(f"cells {len(model.cells)}")
    lines.extend(model.cells)
    for name, p in model.parameters().items():
        rows, cols = p.shape
        lines.append(f"param {name} {rows} {cols}")
        lines.extend(" ".join(_fmt(v) for v in row) for row in p.data)
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_checkpoint(model: MoominModel, path: PathLike) -> None:
    Path(path).write_text(dump_checkpoint(model), encoding="utf-8")


def _parse_config(line: str) -> ModelConfig:
    kinds = {f.name: f.type for f in fields(ModelConfig)}
    values = {}
    for tok in line.split()[1:]:
        key, _, raw = tok.partition("=")
        if key not in kinds:
            raise CheckpointError(f"config: unknown key {key!r}")
        try:
            values[key] = float(raw) if kinds[key] in (float, "float") else int(raw)
        except ValueError:
            raise CheckpointError(f"config: bad value for {key}: {raw!r}") from None
    return ModelConfig(**values)


def parse_checkpoint(text: str, expected: Optional[ModelConfig] = None) -> MoominModel:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    pos = 0

    def take(section: str) -> str:
        nonlocal pos
        if pos >= len(lines):
            raise CheckpointError(f"truncated checkpoint in section {section!r}")
        pos += 1
        return lines[pos - 1]

    if take("header") != CHECKPOINT_HEADER:
        raise CheckpointError(f"unsupported checkpoint version; expected {CHECKPOINT_HEADER!r}")
    cfg_line = take("config")
    if not cfg_line.startswith("config"):
        raise CheckpointError("missing config section")
    cfg = _parse_config(cfg_line)
    if expected is not None:
        if (expected.rep_dim, expected.head_in) != (cfg.rep_dim, cfg.head_in) or expected.r != cfg.r:
            raise CheckpointError(
                f"shape mismatch: checkpoint head expects width {cfg.head_in} (r={cfg.r}), "
                f"config gives {expected.head_in} (r={expected.r})"
            )
        if expected.protein_dim != cfg.protein_dim:
            raise CheckpointError(
                f"shape mismatch: checkpoint protein width {cfg.protein_dim}, config {expected.protein_dim}"
            )
    head = take("cells").split()
    if len(head) != 2 or head[0] != "cells" or not head[1].isdigit():
        raise CheckpointError("malformed cells section")
    cells = [take("cells") for _ in range(int(head[1]))]

    template = MoominModel.init(cfg, cells, np.random.default_rng(0))
    params = template.parameters()
    loaded: dict[str, np.ndarray] = {}
    while True:
        line = take("end")
        if line == "end":
            break
        tok = line.split()
        if len(tok) != 4 or tok[0] != "param":
            raise CheckpointError(f"malformed section header {line[:40]!r}")
        name = tok[1]
        if name not in params:
            raise CheckpointError(f"unknown parameter {name!r}")
        shape = (int(tok[2]), int(tok[3]))
        if shape != params[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: file {shape}, config {params[name].shape}")
        rows = []
        for _ in range(shape[0]):
            vals = take(name).split()
            if len(vals) != shape[1]:
                raise CheckpointError(f"section {name!r}: expected {shape[1]} values, got {len(vals)}")
            try:
                rows.append([float(v) for v in vals])
            except ValueError:
                raise CheckpointError(f"section {name!r}: non-numeric value") from None
        loaded[name] = np.array(rows, dtype=np.float64).reshape(shape)
    missing = [n for n in params if n not in loaded]
    if missing:
        raise CheckpointError(f"missing parameters: {', '.join(missing)}")
    if pos != len(lines):
        raise CheckpointError("trailing data after 'end'")
    for name, p in params.items():
        p.data = loaded[name]
        p.zero_grad()
    return template


def load_checkpoint(path: PathLike, expected: Optional[ModelConfig] = None) -> MoominModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return parse_checkpoint(text, expected)


__all__ = [
    "DatasetBundle",
    "load_bundle",
    "assemble_bundle",
    "bundle_paths",
    "read_graph",
    "read_molecules",
    "read_proteins",
    "read_cells",
    "read_synergy",
    "read_triples",
    "save_checkpoint",
    "load_checkpoint",
    "dump_checkpoint",
    "parse_checkpoint",
]
