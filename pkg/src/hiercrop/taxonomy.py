"""Hierarchical crop codes and data-driven label aggregation.

Codes have five two-digit levels ("33-01-01-05-01"); a node's parent is
obtained by zeroing its deepest nonzero level, the all-zero code is the root.
"""
from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field

N_LEVELS = 5
OTHERS = "others"
_TOKEN = re.compile(r"^\d{2}$")


@dataclass(frozen=True, order=True)
class CropCode:
    levels: tuple

    def __post_init__(self):
        if len(self.levels) != N_LEVELS:
            raise ValueError(f"crop code needs {N_LEVELS} levels, got {len(self.levels)}")
        seen_zero = False
        for v in self.levels:
            if not 0 <= v <= 99:
                raise ValueError(f"level value {v} out of range 0..99")
            if v == 0:
                seen_zero = True
            elif seen_zero:
                raise ValueError(f"nonzero level after a zero level in {self.levels}")

    def __str__(self):
        return "-".join(f"{v:02d}" for v in self.levels)

    @property
    def depth(self):
        return sum(1 for v in self.levels if v)

    @property
    def is_root(self):
        return self.depth == 0

    def parent(self):
        if self.is_root:
            raise ValueError("root has no parent")
        levels = list(self.levels)
        levels[self.depth - 1] = 0
        return CropCode(tuple(levels))

    def ancestors(self):
        """Parent, grandparent, ..., root."""
        node = self
        while not node.is_root:
            node = node.parent()
            yield node

    def is_descendant_of(self, other):
        return other in set(self.ancestors())


ROOT = CropCode((0,) * N_LEVELS)


def parse_code(text):
    text = str(text).strip()
    tokens = text.split("-")
    if len(tokens) != N_LEVELS:
        raise ValueError(f"malformed crop code {text!r}: expected {N_LEVELS} groups")
    for tok in tokens:
        if not _TOKEN.match(tok):
            raise ValueError(f"malformed crop code {text!r}: bad token {tok!r}")
    return CropCode(tuple(int(t) for t in tokens))


@dataclass
class Node:
    code: CropCode
    name: str = ""
    count: int = 0
    permanent: bool = False
    children: list = field(default_factory=list)


class TaxonomyTree:
    """Single-rooted crop-code tree with per-node FOI counts."""

    def __init__(self):
        self.nodes = {ROOT: Node(ROOT, "root")}

    def add(self, code, name="", permanent=False):
        code = parse_code(code) if isinstance(code, str) else code
        node = self.nodes.get(code)
        if node is None:
            parent = self.add(code.parent()) if not code.is_root else None
            node = Node(code, name or str(code), 0, permanent)
            self.nodes[code] = node
            if parent is not None:
                parent.children.append(code)
        else:
            if name:
                node.name = name
            node.permanent = node.permanent or permanent
        return node

    def __contains__(self, code):
        return code in self.nodes

    def __len__(self):
        return len(self.nodes)

    def node(self, code):
        return self.nodes[parse_code(code) if isinstance(code, str) else code]

    def set_counts(self, counts):
        """Replace node counts from a code -> count mapping (codes are added if new)."""
        for node in self.nodes.values():
            node.count = 0
        for code, n in counts.items():
            if n < 0:
                raise ValueError(f"negative count for {code}")
            self.add(code).count += int(n)

    def count_labels(self, labels):
        self.set_counts(Counter(labels))

    @property
    def total(self):
        return sum(n.count for n in self.nodes.values())

    def is_permanent(self, code):
        return any(self.nodes[c].permanent for c in (code, *code.ancestors()) if c in self.nodes)

    def propagate_permanent(self):
        """Flag every non-root node whose children are all permanent, bottom-up."""
        for code in sorted(self.nodes, key=lambda c: -c.depth):
            node = self.nodes[code]
            if not code.is_root and node.children and all(self.nodes[c].permanent for c in node.children):
                node.permanent = True

    def subtree(self, code):
        out, stack = [], [code]
        while stack:
            c = stack.pop()
            out.append(c)
            stack.extend(self.nodes[c].children)
        return out

    @classmethod
    def from_csv(cls, path):
        tree = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                tree.add(row["code"], row.get("name", ""), str(row.get("permanent_flag", "0")) in ("1", "true", "True"))
        tree.propagate_permanent()
        return tree

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["code", "name", "permanent_flag"])
            for code in sorted(self.nodes):
                if code.is_root:
                    continue
                node = self.nodes[code]
                writer.writerow([str(code), node.name, int(node.permanent)])


@dataclass
class AggregationMap:
    mapping: dict  # leaf code string -> group code string
    groups: dict  # group code string -> count
    names: dict  # group code string -> display name
    threshold: float = 0.0

    def group_of(self, code):
        return self.mapping.get(str(code), OTHERS)

    @property
    def n_groups(self):
        return len(self.groups)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["leaf_code", "group_code", "group_name"])
            for leaf in sorted(self.mapping):
                g = self.mapping[leaf]
                writer.writerow([leaf, g, self.names.get(g, g)])

    @classmethod
    def from_csv(cls, path):
        mapping, names = {}, {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                mapping[row["leaf_code"]] = row["group_code"]
                names[row["group_code"]] = row["group_name"]
        return cls(mapping, {g: 0 for g in names}, names)


def aggregate_labels(tree, threshold_fraction=0.003, total=None):
    """Merge under-represented classes toward their parents until they reach the threshold.

    Permanent-crop subtrees are first collapsed into their topmost node. Then
    nodes are visited deepest first: a node whose pending mass (own count plus
    merged-in children) reaches ``threshold_fraction * N`` is kept as a group,
    otherwise its mass moves to its parent. Retained children do not count
    toward the parent. Mass arriving at the root becomes ``others``.
    """
    if not 0 < threshold_fraction < 1:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    n_total = tree.total if total is None else total
    if len(tree.nodes) <= 1 and tree.nodes[ROOT].count == 0:
        raise ValueError("empty taxonomy tree")
    if n_total <= 0:
        raise ValueError("taxonomy tree holds no labels")
    th = threshold_fraction * n_total

    mapping, groups, names = {}, {}, {}
    done = set()
    perm_tops = [c for c, n in tree.nodes.items() if n.permanent and not c.is_root
                 and not any(tree.nodes[a].permanent for a in c.ancestors() if a in tree.nodes)]
    for top in sorted(perm_tops):
        members = tree.subtree(top)
        mass = sum(tree.nodes[c].count for c in members)
        for c in members:
            mapping[str(c)] = str(top)
            done.add(c)
        if mass > 0:
            groups[str(top)] = mass
            names[str(top)] = tree.nodes[top].name

    pending = {c: n.count for c, n in tree.nodes.items() if c not in done}
    members = {c: [c] for c in pending}
    for code in sorted(pending, key=lambda c: (-c.depth, c)):
        if code.is_root:
            continue
        if pending[code] >= th:
            groups[str(code)] = pending[code]
            names[str(code)] = tree.nodes[code].name
            for m in members[code]:
                mapping[str(m)] = str(code)
        else:
            parent = code.parent()
            pending[parent] += pending[code]
            members[parent].extend(members[code])
    for m in members[ROOT]:
        mapping[str(m)] = OTHERS
    if pending[ROOT] > 0:
        groups[OTHERS] = pending[ROOT]
        names[OTHERS] = OTHERS
    mapping.pop(str(ROOT), None)
    return AggregationMap(mapping, groups, names, th)


def project_labels(labels, agg):
    """Relabel codes to their aggregated group; unknown codes go to ``others``."""
    return [agg.group_of(c) for c in labels]
