"""Molecule ingestion: a SMILES subset parser, a line-based fallback format,
and the atom feature map consumed by the drug encoder.

Only heavy atoms are modelled. The accepted SMILES subset is organic-subset
atoms written in upper case (``B C N O P S F Cl Br I``), explicit ``- = #``
bonds, branches and ring-closure digits (``1``-``9`` and ``%nn``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import ParseError

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
ELEMENT_SLOT = {e: i for i, e in enumerate(ELEMENTS)}
MAX_DEGREE = 6
ATOM_FEATURES = len(ELEMENTS) + MAX_DEGREE

BOND_SYMBOLS = {"-": 1, "=": 2, "#": 3}
_DIGITS = "0123456789"


@dataclass
class MolecularGraph:
    atoms: list[str]
    bonds: list[tuple[int, int, int]]
    _features: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False, compare=False)
    _propagation: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.atoms)
        seen = set()
        for i, j, order in self.bonds:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"bond ({i}, {j}) outside {n} atoms")
            if i == j:
                raise ValueError(f"self-bond on atom {i}")
            if order not in (1, 2, 3):
                raise ValueError(f"bond order must be 1, 2 or 3, got {order}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate bond between atoms {key}")
            seen.add(key)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(len(self.atoms), dtype=int)
        for i, j, _ in self.bonds:
            deg[i] += 1
            deg[j] += 1
        return deg

    @property
    def atom_features(self) -> np.ndarray:
        return featurize(self)[0]

    @property
    def norm_adjacency(self) -> np.ndarray:
        return featurize(self)[1]


def featurize(m: MolecularGraph) -> tuple[np.ndarray, np.ndarray]:
    """Atom features (element one-hot ++ clamped degree one-hot) and the
    self-looped, symmetrically normalized adjacency. Cached on the molecule."""
    if m._features is not None:
        return m._features
    n = m.num_atoms
    if n == 0:
        raise ValueError("cannot featurize a molecule without atoms")
    deg = m.degrees()
    feats = np.zeros((n, ATOM_FEATURES))
    feats[np.arange(n), [ELEMENT_SLOT[a] for a in m.atoms]] = 1.0
    feats[np.arange(n), len(ELEMENTS) + np.clip(deg, 1, MAX_DEGREE) - 1] = 1.0
    adj = np.eye(n)
    for i, j, _ in m.bonds:
        adj[i, j] = adj[j, i] = 1.0
    inv_sqrt = 1.0 / np.sqrt(deg + 1.0)
    norm = inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    m._features = (feats, norm)
    return m._features


def _smiles_error(reason: str, offset: int) -> ParseError:
    return ParseError(reason, offset=offset)


def parse_smiles(s: str) -> MolecularGraph:
    """Parse the supported SMILES subset into a heavy-atom graph."""
    if not s:
        raise _smiles_error("empty SMILES string", 0)
    atoms: list[str] = []
    bonds: list[tuple[int, int, int]] = []
    pairs: set[tuple[int, int]] = set()
    branch_stack: list[tuple[int, int]] = []  # (atom to resume from, offset of "(")
    rings: dict[int, tuple[int, Optional[int], int]] = {}  # digit -> (atom, order, offset)
    prev: Optional[int] = None
    pending: Optional[int] = None
    pending_at = 0
    i = 0
    n = len(s)

    def connect(a: int, b: int, order: int, at: int):
        key = (min(a, b), max(a, b))
        if a == b:
            raise _smiles_error("ring closure bonds an atom to itself", at)
        if key in pairs:
            raise _smiles_error(f"duplicate bond between atoms {a} and {b}", at)
        pairs.add(key)
        bonds.append((a, b, order))

    while i < n:
        ch = s[i]
        if ch == "C" and i + 1 < n and s[i + 1] == "l":
            symbol, width = "Cl", 2
        elif ch == "B" and i + 1 < n and s[i + 1] == "r":
            symbol, width = "Br", 2
        elif ch in ELEMENT_SLOT:
            symbol, width = ch, 1
        else:
            symbol, width = None, 0

        if symbol is not None:
            atoms.append(symbol)
            idx = len(atoms) - 1
            if prev is not None:
                connect(prev, idx, pending or 1, i)
            elif pending is not None:
                raise _smiles_error("bond symbol before the first atom", pending_at)
            prev, pending = idx, None
            i += width
            continue

        if ch in BOND_SYMBOLS:
            if pending is not None:
                raise _smiles_error("two consecutive bond symbols", i)
            if prev is None:
                raise _smiles_error("bond symbol before the first atom", i)
            pending, pending_at = BOND_SYMBOLS[ch], i
            i += 1
            continue

        if ch == "(":
            if prev is None:
                raise _smiles_error("branch opened before any atom", i)
            if pending is not None:
                raise _smiles_error("bond symbol must follow '(' not precede it", pending_at)
            if i + 1 < n and s[i + 1] == ")":
                raise _smiles_error("empty branch", i)
            branch_stack.append((prev, i))
            i += 1
            continue

        if ch == ")":
            if not branch_stack:
                raise _smiles_error("unmatched ')'", i)
            if pending is not None:
                raise _smiles_error("dangling bond at end of branch", pending_at)
            prev, _ = branch_stack.pop()
            i += 1
            continue

        if ch in _DIGITS or ch == "%":
            at = i
            if ch == "%":
                digits = s[i + 1:i + 3]
                if len(digits) != 2 or any(c not in _DIGITS for c in digits):
                    raise _smiles_error("'%' must be followed by two digits", i)
                label, i = int(digits), i + 3
            else:
                label, i = int(ch), i + 1
            if prev is None:
                raise _smiles_error("ring-closure digit before any atom", at)
            if label in rings:
                other, order, _ = rings.pop(label)
                if order is not None and pending is not None and order != pending:
                    raise _smiles_error(f"ring {label} closed with conflicting bond orders", at)
                connect(other, prev, pending or order or 1, at)
            else:
                rings[label] = (prev, pending, at)
            pending = None
            continue

        if ch.islower():
            raise _smiles_error(f"aromatic or unsupported lowercase atom {ch!r}", i)
        if ch == "[":
            raise _smiles_error("bracket atoms are not supported", i)
        if ch in "+":
            raise _smiles_error("charges are not supported", i)
        if ch in "/\\@":
            raise _smiles_error(f"stereo mark {ch!r} is not supported", i)
        raise _smiles_error(f"unexpected character {ch!r}", i)

    if pending is not None:
        raise _smiles_error("dangling bond at end of input", pending_at)
    if branch_stack:
        raise _smiles_error("unmatched '('", branch_stack[-1][1])
    if rings:
        label, (_, _, at) = min(rings.items(), key=lambda kv: kv[1][2])
        raise _smiles_error(f"ring {label} opened but never closed", at)
    return MolecularGraph(atoms, bonds)


def _molfile_records(text: str, source: Optional[str]) -> Iterator[tuple[int, list[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _build_molfile(records: list[tuple[int, list[str]]], source: Optional[str]) -> MolecularGraph:
    atoms: list[str] = []
    bond_lines: list[tuple[int, int, int, int]] = []
    for lineno, tok in records:
        kind = tok[0]
        if kind == "atom":
            if len(tok) != 3:
                raise ParseError("expected 'atom <index> <element>'", line=lineno, source=source)
            try:
                idx = int(tok[1])
            except ValueError:
                raise ParseError(f"bad atom index {tok[1]!r}", line=lineno, source=source) from None
            if idx != len(atoms):
                raise ParseError(f"atom index {idx} breaks the sequence (expected {len(atoms)})",
                                 line=lineno, source=source)
            if tok[2] not in ELEMENT_SLOT:
                raise ParseError(f"unknown element {tok[2]!r}", line=lineno, source=source)
            atoms.append(tok[2])
        elif kind == "bond":
            if len(tok) != 4:
                raise ParseError("expected 'bond <i> <j> <order>'", line=lineno, source=source)
            try:
                a, b, order = (int(t) for t in tok[1:])
            except ValueError:
                raise ParseError("bond fields must be integers", line=lineno, source=source) from None
            bond_lines.append((lineno, a, b, order))
        else:
            raise ParseError(f"unknown record {kind!r}", line=lineno, source=source)
    if not atoms:
        raise ParseError("no atoms", line=records[-1][0] if records else 1, source=source)
    bonds: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int]] = set()
    for lineno, a, b, order in bond_lines:
        for end in (a, b):
            if not 0 <= end < len(atoms):
                raise ParseError(f"bond references missing atom {end}", line=lineno, source=source)
        if a == b:
            raise ParseError(f"self-bond on atom {a}", line=lineno, source=source)
        if order not in (1, 2, 3):
            raise ParseError(f"bond order must be 1, 2 or 3, got {order}", line=lineno, source=source)
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ParseError(f"duplicate bond {key}", line=lineno, source=source)
        seen.add(key)
        bonds.append((a, b, order))
    return MolecularGraph(atoms, bonds)


def parse_molfile(text: str, source: Optional[str] = None) -> MolecularGraph:
    """Parse one molecule in the ``atom``/``bond`` line format."""
    records = list(_molfile_records(text, source))
    if records and records[0][1][0] == "mol":
        raise ParseError("section header in a single-molecule file; use parse_molfile_sections",
                         line=records[0][0], source=source)
    return _build_molfile(records, source)


def parse_molfile_sections(text: str, source: Optional[str] = None) -> dict[str, MolecularGraph]:
    """Parse a concatenated file where each molecule starts with ``mol <drug_id>``."""
    out: dict[str, MolecularGraph] = {}
    current: Optional[str] = None
    buf: list[tuple[int, list[str]]] = []
    header_line = 0

    def flush():
        if current is None:
            return
        if current in out:
            raise ParseError(f"molecule {current!r} defined twice", line=header_line, source=source)
        if not buf:
            raise ParseError(f"molecule {current!r}: no atoms", line=header_line, source=source)
        out[current] = _build_molfile(buf, source)

    for lineno, tok in _molfile_records(text, source):
        if tok[0] == "mol":
            if len(tok) != 2:
                raise ParseError("expected 'mol <drug_id>'", line=lineno, source=source)
            flush()
            current, buf, header_line = tok[1], [], lineno
        else:
            if current is None:
                raise ParseError("record before the first 'mol' header", line=lineno, source=source)
            buf.append((lineno, tok))
    flush()
    return out


def to_molfile(m: MolecularGraph) -> str:
    lines = [f"atom {i} {a}" for i, a in enumerate(m.atoms)]
    lines += [f"bond {i} {j} {o}" for i, j, o in m.bonds]
    return "\n".join(lines) + "\n"


def to_smiles(m: MolecularGraph) -> str:
    """Write a connected molecule back out in the supported subset.

    Depth-first over a spanning tree; remaining bonds become ring closures.
    """
    n = m.num_atoms
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for i, j, o in m.bonds:
        adj[i].append((j, o))
        adj[j].append((i, o))
    parent = [-1] * n
    order: list[int] = []
    visited = [False] * n
    tree_children: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    stack = [0]
    visited[0] = True
    while stack:
        v = stack.pop()
        order.append(v)
        for w, o in reversed(adj[v]):
            if not visited[w]:
                visited[w] = True
                parent[w] = v
                tree_children[v].insert(0, (w, o))
                stack.append(w)
    if not all(visited):
        raise ValueError("to_smiles needs a connected molecule")
    # Reorder children in DFS order so that ring openings precede closings.
    rank = {v: k for k, v in enumerate(_dfs_order(tree_children))}
    tree_pairs = {(min(v, parent[v]), max(v, parent[v])) for v in range(n) if parent[v] >= 0}
    ring_bonds = [(i, j, o) for i, j, o in m.bonds if (min(i, j), max(i, j)) not in tree_pairs]
    opens: dict[int, list[tuple[int, int]]] = {}
    closes: dict[int, list[tuple[int, int]]] = {}
    for k, (i, j, o) in enumerate(ring_bonds):
        first, second = (i, j) if rank[i] < rank[j] else (j, i)
        opens.setdefault(first, []).append((k, o))
        closes.setdefault(second, []).append((k, o))
    labels: dict[int, int] = {}
    free: list[int] = []
    next_label = 1
    symbol = {1: "", 2: "=", 3: "#"}

    def ring_token(label: int) -> str:
        return str(label) if label < 10 else f"%{label:02d}"

    out: list[str] = []

    def emit(v: int):
        nonlocal next_label
        out.append(m.atoms[v])
        for k, o in closes.get(v, []):
            label = labels.pop(k)
            out.append(symbol[o] + ring_token(label))
            free.append(label)
            free.sort()
        for k, o in opens.get(v, []):
            if free:
                label = free.pop(0)
            else:
                label, next_label = next_label, next_label + 1
            labels[k] = label
            out.append(symbol[o] + ring_token(label))
        kids = tree_children[v]
        for idx, (w, o) in enumerate(kids):
            last = idx == len(kids) - 1
            if not last:
                out.append("(")
            out.append(symbol[o])
            emit(w)
            if not last:
                out.append(")")

    emit(0)
    return "".join(out)


def _dfs_order(children: list[list[tuple[int, int]]]) -> list[int]:
    order: list[int] = []
    stack = [0]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(w for w, _ in reversed(children[v]))
    return order


def heavy_atom_count(m: MolecularGraph) -> int:
    return m.num_atoms
