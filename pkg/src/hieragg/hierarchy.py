"""Product hierarchy, summation constraints and reconciliation by projection.

Node vectors are plain numpy arrays indexed by ``Hierarchy.nodes`` order.
Batches of vectors are arrays of shape ``(n_nodes, k)``.
"""

from __future__ import annotations

import csv
import re
import warnings
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from hieragg.errors import (
    CycleDetected,
    HierarchyError,
    InconsistentLevel,
    MultipleRoots,
    OrphanNode,
    ParseError,
    SingularNormalMatrix,
)

LEVEL_NAMES = ("root", "family", "subfamily", "subsubfamily")
NODE_ID_RE = re.compile(r"^[A-Za-z0-9_./-]+$")

L1_EPS = 1e-8
L1_MAX_ITERS = 500
L1_TOL = 1e-9


class MaxItersReached(UserWarning):
    """The L1 projection stopped before its objective settled."""


def default_level_name(depth):
    return LEVEL_NAMES[depth] if depth < len(LEVEL_NAMES) else f"level{depth}"


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """A rooted product tree with a fixed node ordering.

    Build instances with :func:`build_hierarchy`; the constructor does not
    validate its input.
    """

    nodes: tuple[str, ...]
    parent: dict[str, str]
    level: dict[str, str]
    depth: dict[str, int] = field(repr=False)

    @cached_property
    def index(self) -> dict[str, int]:
        return {node: i for i, node in enumerate(self.nodes)}

    @cached_property
    def root(self) -> str:
        return self.nodes[0]

    @cached_property
    def children(self) -> dict[str, tuple[str, ...]]:
        kids = defaultdict(list)
        for node in self.nodes[1:]:
            kids[self.parent[node]].append(node)
        return {node: tuple(kids.get(node, ())) for node in self.nodes}

    @cached_property
    def leaves(self) -> tuple[str, ...]:
        return tuple(node for node in self.nodes if not self.children[node])

    @cached_property
    def internal(self) -> tuple[str, ...]:
        return tuple(node for node in self.nodes if self.children[node])

    @cached_property
    def levels(self) -> tuple[str, ...]:
        """Level labels ordered from the root down."""
        seen = {}
        for node in self.nodes:
            seen.setdefault(self.depth[node], self.level[node])
        return tuple(seen[d] for d in sorted(seen))

    @cached_property
    def parent_index(self) -> np.ndarray:
        """Parent position of every node; -1 for the root."""
        idx = self.index
        return np.array([idx[self.parent[n]] if n in self.parent else -1 for n in self.nodes])

    def nodes_at(self, level: str) -> tuple[str, ...]:
        if level not in self.levels:
            raise KeyError(f"unknown level {level!r}")
        return tuple(n for n in self.nodes if self.level[n] == level)

    def level_indices(self, level: str) -> np.ndarray:
        return np.array([self.index[n] for n in self.nodes_at(level)], dtype=np.intp)

    def ancestors(self, node: str) -> list[str]:
        out = []
        while node in self.parent:
            node = self.parent[node]
            out.append(node)
        return out

    def __len__(self):
        return len(self.nodes)

    def vector(self, values: dict[str, float]) -> np.ndarray:
        """Dense node vector from a complete ``node -> value`` map."""
        missing = set(self.nodes) - set(values)
        if missing:
            raise KeyError(f"node vector incomplete, missing {sorted(missing)[:5]}")
        return np.array([float(values[n]) for n in self.nodes])

    def as_dict(self, v: np.ndarray) -> dict[str, float]:
        return {n: float(x) for n, x in zip(self.nodes, v)}


def build_hierarchy(edges, levels=None, nodes=None) -> Hierarchy:
    """Validate ``(child, parent)`` edges and return a :class:`Hierarchy`.

    ``nodes`` optionally lists every node, which allows a single-node tree
    and lets references to undeclared parents be reported as orphans.
    ``levels`` maps each node to a level label; when omitted, labels are
    taken from :data:`LEVEL_NAMES` by depth.
    """
    edges = [(str(c), str(p)) for c, p in edges]
    declared = None if nodes is None else [str(n) for n in nodes]
    parent: dict[str, str] = {}
    for child, par in edges:
        if child == par:
            raise CycleDetected(f"node {child!r} is its own parent")
        if child in parent and parent[child] != par:
            raise HierarchyError(f"node {child!r} has two parents: {parent[child]!r}, {par!r}")
        parent[child] = par

    if declared is not None:
        known = set(declared)
        if len(known) != len(declared):
            raise HierarchyError("duplicate node identifiers")
        for child, par in edges:
            if child not in known:
                raise OrphanNode(f"edge child {child!r} is not a declared node")
            if par not in known:
                raise OrphanNode(f"node {child!r} refers to unknown parent {par!r}")
        all_nodes = set(declared)
    else:
        all_nodes = set(parent) | set(parent.values())
    if not all_nodes:
        raise HierarchyError("empty hierarchy")

    roots = sorted(n for n in all_nodes if n not in parent)
    if not roots:
        raise CycleDetected("no root: every node has a parent")
    if len(roots) > 1:
        raise MultipleRoots(f"several roots: {roots[:5]}")
    root = roots[0]

    kids = defaultdict(list)
    for child, par in parent.items():
        kids[par].append(child)
    depth = {root: 0}
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for child in kids[node]:
            depth[child] = depth[node] + 1
            queue.append(child)
    unreachable = all_nodes - set(depth)
    if unreachable:
        raise CycleDetected(f"nodes not reachable from the root: {sorted(unreachable)[:5]}")

    ordered = tuple(sorted(all_nodes, key=lambda n: (depth[n], n)))

    if levels is None:
        level = {n: default_level_name(depth[n]) for n in ordered}
    else:
        level = {}
        by_depth: dict[int, str] = {}
        for n in ordered:
            if n not in levels:
                raise InconsistentLevel(f"no level given for node {n!r}")
            label = str(levels[n])
            if by_depth.setdefault(depth[n], label) != label:
                raise InconsistentLevel(
                    f"node {n!r} at depth {depth[n]} has level {label!r}, "
                    f"expected {by_depth[depth[n]]!r}"
                )
            level[n] = label
        if len(set(by_depth.values())) != len(by_depth):
            raise InconsistentLevel("the same level label is used at several depths")

    return Hierarchy(nodes=ordered, parent=dict(parent), level=level, depth=depth)


def read_hierarchy(path) -> Hierarchy:
    """Read a ``node_id,parent_id,level`` CSV (root has an empty parent)."""
    nodes, edges, levels = [], [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["node_id", "parent_id", "level"]:
            raise ParseError("expected header node_id,parent_id,level", row=1)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", row=row_no)
            node, par, lvl = (x.strip() for x in row)
            if not NODE_ID_RE.match(node):
                raise ParseError(f"invalid node id {node!r}", row=row_no)
            if par and not NODE_ID_RE.match(par):
                raise ParseError(f"invalid parent id {par!r}", row=row_no)
            nodes.append(node)
            levels[node] = lvl
            if par:
                edges.append((node, par))
    return build_hierarchy(edges, levels=levels, nodes=nodes)


def write_hierarchy(h: Hierarchy, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node_id", "parent_id", "level"])
        for n in h.nodes:
            writer.writerow([n, h.parent.get(n, ""), h.level[n]])


def child_sums(h: Hierarchy, v: np.ndarray) -> np.ndarray:
    """Sum of children values at every node (0 at leaves)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    pidx = h.parent_index
    np.add.at(out, pidx[1:], v[1:])
    return out


def check_summation(h: Hierarchy, v, tol=None) -> list[str]:
    """Internal nodes whose value differs from their children's sum by more than ``tol``.

    The default tolerance is ``1e-6 * (1 + max|v|)``. A batch ``(n_nodes, k)``
    is violated at a node if any column is.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[0] != len(h):
        raise ValueError(f"vector has {v.shape[0]} entries, hierarchy has {len(h)} nodes")
    if tol is None:
        tol = 1e-6 * (1.0 + (np.max(np.abs(v)) if v.size else 0.0))
    gap = np.abs(v - child_sums(h, v))
    if gap.ndim > 1:
        gap = gap.max(axis=tuple(range(1, gap.ndim)))
    internal = np.array([bool(h.children[n]) for n in h.nodes])
    bad = np.flatnonzero(internal & (gap > tol))
    return [h.nodes[i] for i in bad]


class SummationMatrix:
    """0/1 matrix mapping leaf values to all node values (rows follow
    ``hierarchy.nodes``, columns follow ``hierarchy.leaves``)."""

    def __init__(self, hierarchy: Hierarchy):
        self.hierarchy = hierarchy
        idx = hierarchy.index
        self.row_index = dict(idx)
        self.col_index = {leaf: j for j, leaf in enumerate(hierarchy.leaves)}
        mat = np.zeros((len(hierarchy), len(hierarchy.leaves)))
        for leaf, j in self.col_index.items():
            mat[idx[leaf], j] = 1.0
            for anc in hierarchy.ancestors(leaf):
                mat[idx[anc], j] = 1.0
        mat.setflags(write=False)
        self.entries = mat

    @property
    def shape(self):
        return self.entries.shape

    @cached_property
    def _gram_factor(self):
        gram = self.entries.T @ self.entries
        try:
            return linalg.cho_factor(gram, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:  # pragma: no cover - impossible for a tree
            raise SingularNormalMatrix(str(exc)) from exc

    def leaf_coefficients(self, v) -> np.ndarray:
        """Least-squares ``u`` minimising ``||S u - v||_2`` (normal equations)."""
        return linalg.cho_solve(self._gram_factor, self.entries.T @ v, check_finite=False)

    def __matmul__(self, u):
        return self.entries @ u


def summation_matrix(h: Hierarchy) -> SummationMatrix:
    return SummationMatrix(h)


def project_l2(S: SummationMatrix, v) -> np.ndarray:
    """Euclidean projection onto the summation-consistent subspace."""
    v = np.asarray(v, dtype=float)
    return S.entries @ S.leaf_coefficients(v)


def l1_objective(S: SummationMatrix, u, v) -> float:
    return float(np.abs(S.entries @ u - v).sum())


def project_l1(S: SummationMatrix, v, max_iters=L1_MAX_ITERS, tol=L1_TOL, eps=L1_EPS) -> np.ndarray:
    """Absolute-norm projection by iteratively reweighted least squares.

    Starts from the Euclidean projection and keeps the best iterate, so the
    result is never worse in L1 than :func:`project_l2`. The minimiser is in
    general not unique; this returns the IRLS limit. Iteration stops once the
    objective decreases by less than ``tol * max(1, objective)``; if that
    never happens a :class:`MaxItersReached` warning is emitted.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        return np.column_stack(
            [project_l1(S, v[:, k], max_iters=max_iters, tol=tol, eps=eps) for k in range(v.shape[1])]
        )
    A = S.entries
    u = S.leaf_coefficients(v)
    best_u, best_obj = u, l1_objective(S, u, v)
    prev = best_obj
    for _ in range(max_iters):
        w = 1.0 / np.maximum(np.abs(A @ u - v), eps)
        Aw = A.T * w
        try:
            u = linalg.solve(Aw @ A, Aw @ v, assume_a="pos", check_finite=False)
        except linalg.LinAlgError:
            u = np.linalg.lstsq(Aw @ A, Aw @ v, rcond=None)[0]
        obj = l1_objective(S, u, v)
        if obj < best_obj:
            best_u, best_obj = u, obj
        if prev - obj < tol * max(1.0, obj):
            break
        prev = obj
    else:
        warnings.warn(
            f"L1 projection did not settle in {max_iters} iterations (objective {best_obj:.6g})",
            MaxItersReached,
            stacklevel=2,
        )
    return A @ best_u
