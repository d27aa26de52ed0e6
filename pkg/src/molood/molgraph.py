"""Heavy-atom molecular graphs parsed from a SMILES subset.

Supported input: organic-subset atoms ``B C N O P S F Cl Br I``, aromatic
``b c n o p s``, bracket atoms with isotope (ignored), explicit H count and
formal charge, bond symbols ``- = # :``, branches and ring closures
(``1``-``9`` and ``%nn``). Stereo markers, multi-component input (``.``),
atom maps and any other element raise :class:`RejectedFeature`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

from .errors import RejectedFeature

ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC = {"b", "c", "n", "o", "p", "s"}
DEFAULT_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2,
                   "F": 1, "Cl": 1, "Br": 1, "I": 1}
ATOMIC_NUMBER = {"B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "P": 15, "S": 16,
                 "Cl": 17, "Br": 35, "I": 53}
HETERO_NOS = {"N", "O", "S"}

AROMATIC_ORDER = 1.5
ACYCLIC_KEY = "ACYCLIC"


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False
    # explicit H count from a bracket atom; None means "derive from valence"
    hcount: int | None = None


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[tuple[int, int, float], ...]
    source_text: str = ""

    def __post_init__(self):
        seen = set()
        n = len(self.atoms)
        for i, j, order in self.bonds:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"bond ({i}, {j}) out of range")
            if i == j:
                raise ValueError("self-loop bond")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate bond {key}")
            seen.add(key)
            if order == AROMATIC_ORDER and not (self.atoms[i].aromatic and self.atoms[j].aromatic):
                raise ValueError("aromatic bond between non-aromatic atoms")

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, float], ...], ...]:
        adj: list[list[tuple[int, float]]] = [[] for _ in self.atoms]
        for i, j, order in self.bonds:
            adj[i].append((j, order))
            adj[j].append((i, order))
        return tuple(tuple(sorted(a)) for a in adj)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def num_components(self) -> int:
        seen = [False] * self.num_atoms
        count = 0
        for start in range(self.num_atoms):
            if seen[start]:
                continue
            count += 1
            seen[start] = True
            stack = [start]
            while stack:
                u = stack.pop()
                for v, _ in self.adjacency[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
        return count

    @property
    def cyclomatic(self) -> int:
        if not self.atoms:
            return 0
        return self.num_bonds - self.num_atoms + self.num_components()

    @cached_property
    def ring_bond_mask(self) -> tuple[bool, ...]:
        """True for bonds that lie on at least one cycle (non-bridges)."""
        return tuple(self._shortest_cycle_through(b) > 0 for b in range(self.num_bonds))

    @cached_property
    def ring_atom_mask(self) -> tuple[bool, ...]:
        mask = [False] * self.num_atoms
        for (i, j, _), in_ring in zip(self.bonds, self.ring_bond_mask):
            if in_ring:
                mask[i] = mask[j] = True
        return tuple(mask)

    @cached_property
    def max_ring_size(self) -> int:
        """Largest over ring bonds of the smallest cycle through that bond."""
        sizes = [self._shortest_cycle_through(b) for b in range(self.num_bonds)]
        return max(sizes, default=0)

    def _shortest_cycle_through(self, b: int) -> int:
        i, j, _ = self.bonds[b]
        dist = {i: 0}
        queue = deque([i])
        while queue:
            u = queue.popleft()
            for v, _ in self.adjacency[u]:
                if (u == i and v == j) or (u == j and v == i) or v in dist:
                    continue
                dist[v] = dist[u] + 1
                if v == j:
                    return dist[v] + 1
                queue.append(v)
        return 0

    def bond_is_ring(self, i: int, j: int) -> bool:
        for b, (a, c, _) in enumerate(self.bonds):
            if (a, c) in ((i, j), (j, i)):
                return self.ring_bond_mask[b]
        raise KeyError((i, j))

    def subgraph(self, keep: Sequence[int]) -> "MolGraph":
        keep = sorted(set(keep))
        remap = {old: new for new, old in enumerate(keep)}
        atoms = tuple(self.atoms[k] for k in keep)
        bonds = tuple((remap[i], remap[j], o) for i, j, o in self.bonds
                      if i in remap and j in remap)
        # an aromatic ring cut open loses its aromatic bonds' ring status; keep orders as-is
        return MolGraph(atoms, bonds, self.source_text)

    def permute(self, perm: Sequence[int]) -> "MolGraph":
        """Relabel atom ``i`` as ``perm[i]``."""
        n = self.num_atoms
        if sorted(perm) != list(range(n)):
            raise ValueError("not a permutation")
        atoms = [None] * n
        for old, new in enumerate(perm):
            atoms[new] = self.atoms[old]
        bonds = tuple(sorted((min(perm[i], perm[j]), max(perm[i], perm[j]), o)
                             for i, j, o in self.bonds))
        return MolGraph(tuple(atoms), bonds, self.source_text)

    def __len__(self) -> int:
        return self.num_atoms


# --------------------------------------------------------------------------- parsing

def _read_bracket(text: str, start: int) -> tuple[Atom, int]:
    end = text.find("]", start)
    if end < 0:
        raise RejectedFeature("unterminated bracket atom", start)
    body = text[start + 1:end]
    pos = 0
    while pos < len(body) and body[pos].isdigit():
        pos += 1  # isotope, ignored
    if pos >= len(body):
        raise RejectedFeature("bracket atom without element", start)
    if body[pos].isupper():
        sym = body[pos]
        if pos + 1 < len(body) and body[pos + 1].islower() and body[pos:pos + 2] in ORGANIC:
            sym = body[pos:pos + 2]
        aromatic = False
    else:
        sym = body[pos]
        aromatic = True
    if aromatic:
        if sym not in AROMATIC:
            raise RejectedFeature(f"unknown aromatic element '{sym}'", start + 1 + pos)
        element = sym.upper()
    else:
        if sym not in ORGANIC:
            raise RejectedFeature(f"unknown element '{sym}'", start + 1 + pos)
        element = sym
    pos += len(sym)
    hcount = 0
    charge = 0
    while pos < len(body):
        ch = body[pos]
        if ch == "@":
            raise RejectedFeature("stereo marker '@'", start + 1 + pos)
        if ch == "H":
            pos += 1
            digits = ""
            while pos < len(body) and body[pos].isdigit():
                digits += body[pos]
                pos += 1
            hcount = int(digits) if digits else 1
        elif ch in "+-":
            sign = 1 if ch == "+" else -1
            pos += 1
            mag = 1
            digits = ""
            while pos < len(body) and body[pos].isdigit():
                digits += body[pos]
                pos += 1
            if digits:
                mag = int(digits)
            else:
                while pos < len(body) and body[pos] == ch:
                    mag += 1
                    pos += 1
            charge = sign * mag
        else:
            raise RejectedFeature(f"unsupported bracket content '{ch}'", start + 1 + pos)
    return Atom(element, charge, aromatic, hcount), end + 1


_BOND_SYMBOLS = {"-": 1.0, "=": 2.0, "#": 3.0, ":": AROMATIC_ORDER}


def parse_smiles(text: str) -> MolGraph:
    """Parse ``text`` into a :class:`MolGraph`; errors carry the byte offset."""
    if not text:
        raise RejectedFeature("empty SMILES", 0)
    try:
        text.encode("ascii")
    except UnicodeEncodeError:
        bad = next(i for i, ch in enumerate(text) if ord(ch) > 127)
        raise RejectedFeature("non-ASCII character", bad) from None

    atoms: list[Atom] = []
    bonds: dict[tuple[int, int], tuple[float | None, int]] = {}
    branch_stack: list[tuple[int, int]] = []
    open_rings: dict[int, tuple[int, float | None, int]] = {}
    prev: int | None = None
    pending_bond: tuple[float, int] | None = None

    def add_bond(a: int, b: int, order: float | None, offset: int):
        if a == b:
            raise RejectedFeature("ring closure onto the same atom", offset)
        key = (min(a, b), max(a, b))
        if key in bonds:
            raise RejectedFeature("duplicate bond", offset)
        bonds[key] = (order, offset)

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        atom: Atom | None = None
        start = i
        if ch == "[":
            atom, i = _read_bracket(text, i)
        elif ch in "BCNOPSFI":
            if ch == "C" and text[i + 1:i + 2] == "l":
                atom, i = Atom("Cl"), i + 2
            elif ch == "B" and text[i + 1:i + 2] == "r":
                atom, i = Atom("Br"), i + 2
            else:
                atom, i = Atom(ch), i + 1
        elif ch in AROMATIC:
            atom, i = Atom(ch.upper(), 0, True), i + 1
        elif ch in _BOND_SYMBOLS:
            if pending_bond is not None:
                raise RejectedFeature("consecutive bond symbols", i)
            pending_bond = (_BOND_SYMBOLS[ch], i)
            i += 1
            continue
        elif ch in "/\\":
            raise RejectedFeature(f"stereo bond marker '{ch}'", i)
        elif ch == "(":
            if prev is None:
                raise RejectedFeature("branch before any atom", i)
            branch_stack.append((prev, i))
            i += 1
            continue
        elif ch == ")":
            if not branch_stack:
                raise RejectedFeature("unmatched ')'", i)
            if pending_bond is not None:
                raise RejectedFeature("bond symbol before ')'", pending_bond[1])
            prev, _ = branch_stack.pop()
            i += 1
            continue
        elif ch.isdigit() or ch == "%":
            if prev is None:
                raise RejectedFeature("ring closure before any atom", i)
            if ch == "%":
                digits = text[i + 1:i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise RejectedFeature("malformed %nn ring closure", i)
                num = int(digits)
                i += 3
            else:
                num = int(ch)
                i += 1
            order = pending_bond[0] if pending_bond else None
            pending_bond = None
            if num in open_rings:
                other, other_order, _ = open_rings.pop(num)
                if order is not None and other_order is not None and order != other_order:
                    raise RejectedFeature("conflicting ring-closure bond orders", start)
                add_bond(other, prev, order if order is not None else other_order, start)
            else:
                open_rings[num] = (prev, order, start)
            continue
        elif ch == ".":
            raise RejectedFeature("disconnected components ('.') are not supported", i)
        else:
            raise RejectedFeature(f"unexpected character '{ch}'", i)

        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            order = pending_bond[0] if pending_bond else None
            add_bond(prev, idx, order, pending_bond[1] if pending_bond else start)
        elif pending_bond is not None:
            raise RejectedFeature("bond symbol before any atom", pending_bond[1])
        pending_bond = None
        prev = idx

    if pending_bond is not None:
        raise RejectedFeature("dangling bond symbol", pending_bond[1])
    if branch_stack:
        raise RejectedFeature("unmatched '('", branch_stack[-1][1])
    if open_rings:
        first = min(off for _, _, off in open_rings.values())
        raise RejectedFeature("unclosed ring closure", first)

    resolved = []
    for (a, b), (order, offset) in sorted(bonds.items()):
        both_aromatic = atoms[a].aromatic and atoms[b].aromatic
        if order is None:
            order = AROMATIC_ORDER if both_aromatic else 1.0
        elif order == AROMATIC_ORDER and not both_aromatic:
            raise RejectedFeature("aromatic bond between non-aromatic atoms", offset)
        resolved.append((a, b, order))
    g = MolGraph(tuple(atoms), tuple(resolved), text)
    # implicit aromatic bonds outside rings (e.g. unmarked biaryl links) are single
    if any(o == AROMATIC_ORDER and not r for (_, _, o), r in zip(g.bonds, g.ring_bond_mask)):
        fixed = tuple((a, b, 1.0 if (o == AROMATIC_ORDER and not r) else o)
                      for (a, b, o), r in zip(g.bonds, g.ring_bond_mask))
        g = MolGraph(g.atoms, fixed, text)
    return g


# --------------------------------------------------------------------------- valence

def _bond_order_sum(g: MolGraph, i: int) -> float:
    total = 0.0
    n_aromatic = 0
    for _, order in g.adjacency[i]:
        if order == AROMATIC_ORDER:
            n_aromatic += 1
        else:
            total += order
    if n_aromatic:
        # aromatic atoms: one bond per aromatic neighbour plus one shared pi bond
        total += n_aromatic + 1
    return total


def implicit_h_count(g: MolGraph, atom_index: int) -> int:
    atom = g.atoms[atom_index]
    if atom.hcount is not None:
        return atom.hcount
    valence = DEFAULT_VALENCE[atom.element]
    q = atom.charge
    if q > 0:
        valence += q if atom.element in {"N", "O", "P", "S"} else -q
    elif q < 0:
        valence += -q if atom.element == "B" else q
    h = valence - _bond_order_sum(g, atom_index)
    return max(0, int(round(h)))


# --------------------------------------------------------------------------- writing

def _atom_token(g: MolGraph, i: int) -> str:
    a = g.atoms[i]
    sym = a.element.lower() if a.aromatic else a.element
    if a.charge == 0 and a.hcount is None:
        return sym
    out = "[" + sym
    h = a.hcount if a.hcount is not None else implicit_h_count(g, i)
    if h:
        out += "H" if h == 1 else f"H{h}"
    if a.charge:
        sign = "+" if a.charge > 0 else "-"
        out += sign if abs(a.charge) == 1 else f"{sign}{abs(a.charge)}"
    return out + "]"


def _bond_token(g: MolGraph, i: int, j: int, order: float) -> str:
    if order == 2.0:
        return "="
    if order == 3.0:
        return "#"
    if order == 1.0 and g.atoms[i].aromatic and g.atoms[j].aromatic:
        return "-"
    return ""


def to_smiles(g: MolGraph, rank: Sequence[int] | None = None) -> str:
    """Write ``g`` as SMILES; traversal order follows ``rank`` (lowest first)."""
    n = g.num_atoms
    if n == 0:
        return ""
    if rank is None:
        rank = list(range(n))
    nbrs = [sorted(g.adjacency[u], key=lambda t: rank[t[0]]) for u in range(n)]

    visited = [False] * n
    children: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    ring_ends: list[list[tuple[int, float]]] = [[] for _ in range(n)]  # partner, order
    used: set[tuple[int, int]] = set()
    roots = []

    def dfs(u: int):
        visited[u] = True
        for v, order in nbrs[u]:
            key = (min(u, v), max(u, v))
            if key in used:
                continue
            used.add(key)
            if visited[v]:
                ring_ends[u].append((v, order))
                ring_ends[v].append((u, order))
            else:
                children[u].append((v, order))
                dfs(v)

    for start in sorted(range(n), key=lambda k: rank[k]):
        if not visited[start]:
            roots.append(start)
            dfs(start)

    emitted = [False] * n
    ring_digit: dict[tuple[int, int], int] = {}
    free: list[int] = []
    next_digit = [1]
    parts: list[str] = []

    def digit_str(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def emit(u: int):
        emitted[u] = True
        parts.append(_atom_token(g, u))
        ends = sorted(ring_ends[u], key=lambda t: rank[t[0]])
        for v, order in ends:
            key = (min(u, v), max(u, v))
            if key in ring_digit:
                d = ring_digit.pop(key)
                parts.append(digit_str(d))
                free.append(d)
                free.sort()
            else:
                if free:
                    d = free.pop(0)
                else:
                    d = next_digit[0]
                    next_digit[0] += 1
                ring_digit[key] = d
                parts.append(_bond_token(g, u, v, order) + digit_str(d))
        kids = children[u]
        for idx, (v, order) in enumerate(kids):
            last = idx == len(kids) - 1
            if not last:
                parts.append("(")
            parts.append(_bond_token(g, u, v, order))
            emit(v)
            if not last:
                parts.append(")")

    for r_i, root in enumerate(roots):
        if r_i:
            parts.append(".")
        emit(root)
    return "".join(parts)


# --------------------------------------------------------------------------- canonical key

def _refine(g: MolGraph, labels: list[int]) -> list[int]:
    n_classes = len(set(labels))
    while True:
        sigs = [(labels[i], tuple(sorted((o, labels[j]) for j, o in g.adjacency[i])))
                for i in range(g.num_atoms)]
        table = {s: k for k, s in enumerate(sorted(set(sigs)))}
        new = [table[s] for s in sigs]
        if len(table) == n_classes:
            return new
        labels, n_classes = new, len(table)


def _initial_labels(g: MolGraph) -> list[int]:
    raw = [(a.element, a.aromatic, a.charge, implicit_h_count(g, i))
           for i, a in enumerate(g.atoms)]
    table = {s: k for k, s in enumerate(sorted(set(raw)))}
    return [table[s] for s in raw]


def canonical_ranks(g: MolGraph) -> Iterator[list[int]]:
    """Yield every discrete labeling reachable by individualization-refinement."""
    def search(labels: list[int]):
        labels = _refine(g, labels)
        if len(set(labels)) == len(labels):
            yield labels
            return
        counts: dict[int, int] = {}
        for lab in labels:
            counts[lab] = counts.get(lab, 0) + 1
        cell = min(lab for lab, c in counts.items() if c > 1)
        for v in range(len(labels)):
            if labels[v] != cell:
                continue
            nxt = [2 * lab for lab in labels]
            nxt[v] = 2 * cell - 1
            yield from search(nxt)

    if g.num_atoms == 0:
        yield []
        return
    yield from search(_initial_labels(g))


def canonical_key(g: MolGraph) -> str:
    """Canonical SMILES: the minimal serialization over all canonical labelings."""
    if g.num_atoms == 0:
        return ""
    return min(to_smiles(g, ranks) for ranks in canonical_ranks(g))


# --------------------------------------------------------------------------- scaffolds

def murcko_scaffold(g: MolGraph) -> MolGraph:
    """Ring systems plus linkers; exocyclic double-bonded atoms on them survive."""
    if g.cyclomatic == 0:
        return MolGraph((), (), g.source_text)
    alive = [True] * g.num_atoms
    deg = [g.degree(i) for i in range(g.num_atoms)]
    queue = deque(i for i in range(g.num_atoms) if deg[i] <= 1)
    while queue:
        u = queue.popleft()
        if not alive[u] or deg[u] > 1:
            continue
        alive[u] = False
        for v, _ in g.adjacency[u]:
            if alive[v]:
                deg[v] -= 1
                if deg[v] <= 1:
                    queue.append(v)
    core = [i for i in range(g.num_atoms) if alive[i]]
    keep = set(core)
    for u in core:
        for v, order in g.adjacency[u]:
            if not alive[v] and order == 2.0 and g.degree(v) == 1:
                keep.add(v)
    return g.subgraph(sorted(keep))


# --------------------------------------------------------------------------- fragments

@dataclass(frozen=True)
class Fragment:
    atoms: tuple[int, ...]
    bonds: tuple[tuple[int, int], ...] = field(default=())
    attachment_points: int = 0


def cleavable_bonds(g: MolGraph) -> list[int]:
    ring = g.ring_atom_mask
    cuts = []
    for b, ((i, j, order), in_ring) in enumerate(zip(g.bonds, g.ring_bond_mask)):
        if in_ring or order != 1.0:
            continue
        if ring[i] != ring[j]:
            cuts.append(b)
            continue
        if ring[i] or ring[j]:
            continue
        ei, ej = g.atoms[i].element, g.atoms[j].element
        c_het = (ei == "C" and ej in HETERO_NOS) or (ej == "C" and ei in HETERO_NOS)
        if c_het and g.degree(i) > 1 and g.degree(j) > 1:
            cuts.append(b)
    return cuts


def fragment(g: MolGraph) -> list[Fragment]:
    """Connected components left after cutting ring-attachment and acyclic C-N/O/S bonds."""
    cuts = set(cleavable_bonds(g))
    adj: list[list[int]] = [[] for _ in g.atoms]
    attach = [0] * g.num_atoms
    for b, (i, j, _) in enumerate(g.bonds):
        if b in cuts:
            attach[i] += 1
            attach[j] += 1
        else:
            adj[i].append(j)
            adj[j].append(i)
    comp = [-1] * g.num_atoms
    frags = []
    for start in range(g.num_atoms):
        if comp[start] >= 0:
            continue
        members = []
        comp[start] = len(frags)
        stack = [start]
        while stack:
            u = stack.pop()
            members.append(u)
            for v in adj[u]:
                if comp[v] < 0:
                    comp[v] = len(frags)
                    stack.append(v)
        members.sort()
        mset = set(members)
        fbonds = tuple((i, j) for b, (i, j, _) in enumerate(g.bonds)
                       if b not in cuts and i in mset)
        frags.append(Fragment(tuple(members), fbonds, sum(attach[m] for m in members)))
    return frags


def fragment_assignment(g: MolGraph) -> list[int]:
    """Fragment index for each atom."""
    out = [0] * g.num_atoms
    for k, f in enumerate(fragment(g)):
        for a in f.atoms:
            out[a] = k
    return out
