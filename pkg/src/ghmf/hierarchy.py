"""Rooted label trees.

A hierarchy is a tree over segmentation labels in which every branch
region is the union of its children's regions. Labels are addressed by
name externally and by a dense integer id internally, so that per-label
fields can be stacked along a leading array axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

ROOT = "ROOT"


class HierarchyError(ValueError):
    """Base class for structural problems with a label tree."""

    def __init__(self, message: str, name: Optional[str] = None):
        super().__init__(message)
        self.name = name


class NoRoot(HierarchyError):
    pass


class MultipleRoots(HierarchyError):
    pass


class CycleDetected(HierarchyError):
    pass


class UnknownParent(HierarchyError):
    pass


class Disconnected(HierarchyError):
    pass


class InconsistentLinks(HierarchyError):
    pass


@dataclass(frozen=True)
class Node:
    name: str
    parent: Optional[int]
    children: tuple[int, ...] = ()


@dataclass(frozen=True)
class Hierarchy:
    nodes: tuple[Node, ...]
    root: int
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {n.name: i for i, n in enumerate(self.nodes)})

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def id(self, name: str) -> int:
        return self._index[name]

    def name(self, label: int) -> str:
        return self.nodes[label].name

    def parent(self, label: int) -> Optional[int]:
        return self.nodes[label].parent

    def children(self, label: int) -> tuple[int, ...]:
        return self.nodes[label].children

    def is_leaf(self, label: int) -> bool:
        return not self.nodes[label].children

    @property
    def leaves(self) -> list[int]:
        """Leaf ids in ascending order."""
        return [i for i, n in enumerate(self.nodes) if not n.children]

    @property
    def branches(self) -> list[int]:
        """Ids of non-root nodes that have children."""
        return [i for i, n in enumerate(self.nodes) if n.children and i != self.root]

    @property
    def non_root(self) -> list[int]:
        return [i for i in range(len(self.nodes)) if i != self.root]

    def depth(self) -> int:
        """Number of edges on the longest root-to-leaf path."""
        best = 0
        stack = [(self.root, 0)]
        while stack:
            label, d = stack.pop()
            best = max(best, d)
            stack.extend((c, d + 1) for c in self.nodes[label].children)
        return best

    def subtree_leaves(self, label: int) -> list[int]:
        return [x for x in preorder(self, label) if self.is_leaf(x)]

    def edges(self) -> list[tuple[str, Optional[str]]]:
        """(child, parent) name pairs in preorder; the root has parent None."""
        out = []
        for i in preorder(self):
            p = self.nodes[i].parent
            out.append((self.nodes[i].name, None if p is None else self.nodes[p].name))
        return out


def postorder(h: Hierarchy, start: Optional[int] = None) -> list[int]:
    """Children (in declared order) before their parent."""
    order: list[int] = []
    stack = [(h.root if start is None else start, False)]
    while stack:
        label, expanded = stack.pop()
        if expanded:
            order.append(label)
            continue
        stack.append((label, True))
        stack.extend((c, False) for c in reversed(h.nodes[label].children))
    return order


def preorder(h: Hierarchy, start: Optional[int] = None) -> list[int]:
    """Parent before its children, children in declared order."""
    order: list[int] = []
    stack = [h.root if start is None else start]
    while stack:
        label = stack.pop()
        order.append(label)
        stack.extend(reversed(h.nodes[label].children))
    return order


def validate(h: Hierarchy) -> list[HierarchyError]:
    """Return every structural violation found in ``h``; empty when valid."""
    problems: list[HierarchyError] = []
    n = len(h.nodes)
    names = [node.name for node in h.nodes]
    if len(set(names)) != n:
        dup = next(x for x in names if names.count(x) > 1)
        problems.append(HierarchyError(f"duplicate label name {dup!r}", dup))

    for i, node in enumerate(h.nodes):
        if node.parent is not None and not 0 <= node.parent < n:
            problems.append(UnknownParent(f"label {node.name!r} has unknown parent id {node.parent}", node.name))
        for c in node.children:
            if not 0 <= c < n or h.nodes[c].parent != i:
                problems.append(InconsistentLinks(f"label {node.name!r} lists child id {c} that does not point back", node.name))
        if node.parent is not None and 0 <= node.parent < n and i not in h.nodes[node.parent].children:
            problems.append(InconsistentLinks(f"label {node.name!r} is missing from its parent's children", node.name))

    roots = [i for i, node in enumerate(h.nodes) if node.parent is None]
    if not roots:
        problems.append(NoRoot("no parentless label"))
    elif len(roots) > 1:
        problems.append(MultipleRoots("several parentless labels: " + ", ".join(names[i] for i in roots), names[roots[1]]))
    elif roots[0] != h.root:
        problems.append(InconsistentLinks(f"declared root {h.root} is not the parentless label {roots[0]}"))

    # walk parent pointers to find cycles
    in_cycle: set[int] = set()
    for start in range(n):
        seen = []
        cur: Optional[int] = start
        while cur is not None and 0 <= cur < n and cur not in seen and cur not in in_cycle:
            seen.append(cur)
            cur = h.nodes[cur].parent
        if cur is not None and cur in seen:
            cyc = seen[seen.index(cur):]
            if not in_cycle.intersection(cyc):
                problems.append(CycleDetected("cycle through " + " -> ".join(names[i] for i in cyc), names[cyc[0]]))
            in_cycle.update(cyc)

    if roots and 0 <= h.root < n:
        reached: set[int] = set()
        stack = [h.root]
        while stack:
            x = stack.pop()
            if x in reached or not 0 <= x < n:
                continue
            reached.add(x)
            stack.extend(h.nodes[x].children)
        stray = [i for i in range(n) if i not in reached and i not in in_cycle and h.nodes[i].parent is not None]
        if stray:
            problems.append(Disconnected("labels not reachable from the root: " + ", ".join(names[i] for i in stray), names[stray[0]]))
    return problems


def build_hierarchy(edges: Iterable[tuple[str, Optional[str]]], root_name: str = ROOT) -> Hierarchy:
    """Build a validated tree from ``(child, parent)`` name pairs.

    A parent of ``None`` declares a parentless node. A parent equal to
    ``root_name`` that is never declared as a child refers to an implicit
    source node of that name. Ids follow first appearance, the parent of
    each pair being seen before its child.
    """
    edges = list(edges)
    declared: dict[str, Optional[str]] = {}
    for child, parent in edges:
        if child in declared:
            raise HierarchyError(f"label {child!r} declared twice", child)
        declared[child] = parent

    implicit_root = root_name not in declared and any(p == root_name for _, p in edges)
    order: list[str] = []
    seen: set[str] = set()

    def see(name: str) -> None:
        if name not in seen:
            seen.add(name)
            order.append(name)

    for child, parent in edges:
        if parent is not None:
            if parent not in declared and not (implicit_root and parent == root_name):
                raise UnknownParent(f"label {child!r} names undeclared parent {parent!r}", child)
            see(parent)
        see(child)

    index = {name: i for i, name in enumerate(order)}
    parents: list[Optional[int]] = [None] * len(order)
    children: list[list[int]] = [[] for _ in order]
    for child, parent in edges:
        if parent is not None:
            parents[index[child]] = index[parent]
            children[index[parent]].append(index[child])

    roots = [i for i, p in enumerate(parents) if p is None]
    nodes = tuple(Node(name, parents[i], tuple(children[i])) for i, name in enumerate(order))
    h = Hierarchy(nodes, roots[0] if roots else 0)
    problems = validate(h)
    if problems:
        # report cycles ahead of the root count they usually cause
        for kind in (CycleDetected, MultipleRoots, NoRoot, UnknownParent, Disconnected):
            for p in problems:
                if isinstance(p, kind):
                    raise p
        raise problems[0]
    return h


def single_node(name: str = ROOT) -> Hierarchy:
    return Hierarchy((Node(name, None, ()),), 0)


def flat(names: Sequence[str], root_name: str = ROOT) -> Hierarchy:
    """Root with one leaf per name (the Potts shape)."""
    return build_hierarchy([(n, root_name) for n in names], root_name)
