"""Identification by message passing on a junction tree of the sigma graph.

When the graph on intervention indices is chordal (or has been filled in),
its maximal cliques form a junction tree. Provided training data covers,
for every clique, all level combinations over that clique with everything
else at baseline, an unseen regime's density follows by passing density
ratios from the leaves to the root. The whole derivation collapses to an
integer exponent vector over training regimes, which is what gets returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebraic import ROUTE_TREE, PrTransformation, verify_pr
from .errors import ConditionsNotMet, InvalidSpec, NotChordal
from .model import (
    IfmStructure,
    RegimeSet,
    RegimeVector,
    SigmaGraph,
    normalize_factors,
    restrict_regime,
    sigma_graph,
    sigma_zero_set,
)


def _mcs_order(g: SigmaGraph) -> list:
    """Maximum-cardinality search visit order; ties go to the lowest index."""
    adj = g.adjacency()
    weights = [0] * g.d
    visited = [False] * g.d
    order = []
    for _ in range(g.d):
        v = max(range(g.d), key=lambda u: (not visited[u], weights[u], -u))
        visited[v] = True
        order.append(v)
        for u in adj[v]:
            if not visited[u]:
                weights[u] += 1
    return order


def is_decomposable(g: SigmaGraph) -> bool:
    """True when the graph is chordal (every cycle >= 4 has a chord)."""
    adj = g.adjacency()
    order = _mcs_order(g)
    pos = {v: i for i, v in enumerate(order)}
    for v in order:
        earlier = {u for u in adj[v] if pos[u] < pos[v]}
        if not earlier:
            continue
        parent = max(earlier, key=lambda u: pos[u])
        if not (earlier - {parent}) <= adj[parent]:
            return False
    return True


def triangulate(g: SigmaGraph) -> SigmaGraph:
    """Chordal completion by minimum fill-in, lowest vertex index on ties.

    Chordal inputs come back unchanged: they always have a zero-fill vertex
    to eliminate, so the heuristic never adds an edge it does not need.
    """
    adj = g.adjacency()
    remaining = set(range(g.d))
    fill = set(g.edges)
    while remaining:
        best, best_cost = None, None
        for v in sorted(remaining):
            nbrs = [u for u in adj[v] if u in remaining]
            cost = sum(
                1
                for i, a in enumerate(nbrs)
                for b in nbrs[i + 1 :]
                if b not in adj[a]
            )
            if best_cost is None or cost < best_cost:
                best, best_cost = v, cost
        nbrs = [u for u in adj[best] if u in remaining]
        for i, a in enumerate(nbrs):
            for b in nbrs[i + 1 :]:
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
                    fill.add((min(a, b), max(a, b)))
        remaining.discard(best)
    return SigmaGraph(g.d, frozenset(fill))


def maximal_cliques(g: SigmaGraph) -> list:
    """Maximal cliques of a chordal graph as sorted tuples, sorted overall."""
    if not is_decomposable(g):
        raise NotChordal("clique extraction requires a chordal graph")
    adj = g.adjacency()
    order = _mcs_order(g)
    pos = {v: i for i, v in enumerate(order)}
    candidates = []
    for v in order:
        c = {v} | {u for u in adj[v] if pos[u] < pos[v]}
        candidates.append(frozenset(c))
    cliques = [
        c
        for c in set(candidates)
        if not any(c < other for other in candidates)
    ]
    return sorted(tuple(sorted(c)) for c in cliques)


@dataclass(frozen=True)
class JunctionTree:
    """Clique tree with running intersection, rooted for message passing.

    subtree_scope[k] is the union of clique members below (and including) k;
    branch_sep[k] is its overlap with the parent clique, empty at the root.
    """

    cliques: tuple
    edges: tuple
    root: int
    parent: tuple
    children: tuple
    subtree_scope: tuple
    branch_sep: tuple

    def separator(self, i: int, j: int) -> tuple:
        return tuple(sorted(set(self.cliques[i]) & set(self.cliques[j])))

    def leaves(self) -> list:
        return [k for k, ch in enumerate(self.children) if not ch]


def build_junction_tree(g: SigmaGraph, root=None) -> JunctionTree:
    """Build a rooted junction tree over the maximal cliques of a chordal graph.

    The tree is the maximum-weight spanning tree under separator size, with
    ties broken by lexicographically smallest clique pair; zero-weight links
    are allowed so disconnected graphs still produce one tree. The default
    root is the largest clique (lowest position on ties); pass `root` as a
    clique (tuple of vertices) to override.
    """
    cliques = maximal_cliques(g)
    n = len(cliques)
    members = [set(c) for c in cliques]

    candidates = sorted(
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
    )
    candidates.sort(key=lambda ij: (-len(members[ij[0]] & members[ij[1]]), cliques[ij[0]], cliques[ij[1]]))

    comp = list(range(n))

    def find(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    edges = []
    for i, j in candidates:
        ri, rj = find(i), find(j)
        if ri != rj:
            comp[ri] = rj
            edges.append((i, j))
        if len(edges) == n - 1:
            break

    if root is None:
        sizes = [len(c) for c in cliques]
        root_idx = max(range(n), key=lambda k: (sizes[k], -k))
    else:
        want = tuple(sorted(root))
        if want not in cliques:
            raise InvalidSpec(f"{want} is not a maximal clique of the graph")
        root_idx = cliques.index(want)

    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    for lst in adj:
        lst.sort(key=lambda k: cliques[k])

    parent = [None] * n
    order = []
    stack = [root_idx]
    seen = {root_idx}
    while stack:
        k = stack.pop()
        order.append(k)
        for nb in reversed(adj[k]):
            if nb not in seen:
                seen.add(nb)
                parent[nb] = k
                stack.append(nb)
    children = [tuple(k for k in adj[i] if parent[k] == i) for i in range(n)]

    subtree = [set(c) for c in members]
    for k in reversed(order):
        if parent[k] is not None:
            subtree[parent[k]].update(subtree[k])
    branch = [
        tuple(sorted(subtree[k] & members[parent[k]])) if parent[k] is not None else ()
        for k in range(n)
    ]

    return JunctionTree(
        cliques=tuple(cliques),
        edges=tuple(sorted(edges)),
        root=root_idx,
        parent=tuple(parent),
        children=tuple(children),
        subtree_scope=tuple(tuple(sorted(s)) for s in subtree),
        branch_sep=tuple(branch),
    )


@dataclass(frozen=True)
class CliqueCondition:
    """Coverage result for one clique: which required regimes are missing."""

    clique: tuple
    required: RegimeSet
    missing: tuple

    @property
    def passed(self) -> bool:
        return len(self.missing) == 0


@dataclass(frozen=True)
class ConditionReport:
    """Per-clique coverage of training regimes needed for message passing.

    Shared support across regimes is assumed, not tested; only regime
    coverage is decidable from the declared training set.
    """

    entries: tuple

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)


def check_conditions(ifm: IfmStructure, train: RegimeSet) -> ConditionReport:
    """Report, per clique of the (triangulated) sigma graph, whether training
    covers every level combination over the clique with baseline elsewhere."""
    norm = normalize_factors(ifm)
    tri = triangulate(sigma_graph(norm))
    entries = []
    for clique in maximal_cliques(tri):
        required = sigma_zero_set(norm.space, clique)
        missing = tuple(r for r in required if r not in train)
        entries.append(CliqueCondition(clique, required, missing))
    return ConditionReport(tuple(entries))


def message_passing_identify(
    ifm: IfmStructure,
    train: RegimeSet,
    target: RegimeVector,
    root=None,
) -> PrTransformation:
    """Derive the target's exponent certificate by leaf-to-root elimination.

    Each clique contributes the regime holding the target's levels on the
    clique (baseline elsewhere) with exponent +1, and each tree edge divides
    out the regime restricted to the child's branch separator. A target
    already in training short-circuits to the one-hot certificate.

    Args:
        ifm: factor structure; normalized internally.
        train: available training regimes.
        target: regime to identify.
        root: optional clique (vertex tuple) to root the tree at.

    Returns:
        Integer-exponent certificate over `train`, verified before return.

    Raises:
        ConditionsNotMet: training coverage fails for some clique; the
            report rides on the exception as `.report`.
    """
    ifm.space.check_regime(target)
    counts = np.zeros(len(train))

    if target in train:
        counts[train.index_of(target)] = 1.0
        return PrTransformation(target, train, tuple(counts), ROUTE_TREE)

    norm = normalize_factors(ifm)
    report = check_conditions(norm, train)
    if not report.passed:
        bad = [e.clique for e in report.entries if not e.passed]
        exc = ConditionsNotMet(f"training set misses combinations over cliques {bad}")
        exc.report = report
        raise exc

    tri = triangulate(sigma_graph(norm))
    jt = build_junction_tree(tri, root=root)

    def add(regime: RegimeVector, count: int):
        counts[train.index_of(regime)] += count

    stack = [jt.root]
    while stack:
        k = stack.pop()
        add(restrict_regime(target, jt.cliques[k]), +1)
        for child in jt.children[k]:
            add(restrict_regime(target, jt.branch_sep[child]), -1)
            stack.append(child)

    cert = PrTransformation(target, train, tuple(counts), ROUTE_TREE)
    if not verify_pr(norm, cert):
        raise AssertionError("message-passing certificate failed verification")
    return cert
