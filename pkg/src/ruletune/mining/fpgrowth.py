"""FP-Growth restricted to itemsets that contain a target item.

While recursing, a conditional pattern base keeps only the paths that can
still produce a target-containing itemset: either the new prefix already
holds a target item or the path does. A tree that collapses to a single
path is finished by enumerating item combinations directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Hashable, Iterable, Sequence


def _key(item):
    return getattr(item, "key", item)


class _Node:
    __slots__ = ("item", "count", "parent", "children")

    def __init__(self, item, count: int, parent: _Node | None):
        self.item = item
        self.count = count
        self.parent = parent
        self.children: dict = {}


class FPTree:
    """Prefix tree over weighted paths.

    The first tree fixes the item order (ascending support, ties by key).
    Conditional trees reuse that ``rank``, so a pruned conditional tree is
    always a sub-tree of the unpruned one.
    """

    def __init__(self, paths: Iterable[tuple[Sequence, int]], min_count: int, rank: dict | None = None):
        paths = list(paths)
        support: dict = {}
        for items, count in paths:
            for item in items:
                support[item] = support.get(item, 0) + count
        frequent = {i: c for i, c in support.items() if c >= min_count}
        if rank is None:
            # mining order: ascending support, ties by item key; insertion uses the reverse
            order = sorted(frequent, key=lambda i: (frequent[i], _key(i)))
            rank = {item: pos for pos, item in enumerate(order)}
        self.rank = rank
        self.order = sorted(frequent, key=rank.__getitem__)
        self.support = frequent
        self.total = sum(c for _, c in paths)
        self.root = _Node(None, 0, None)
        self.header: dict = {i: [] for i in self.order}
        for items, count in paths:
            kept = sorted((i for i in set(items) if i in frequent), key=lambda i: -rank[i])
            node = self.root
            for item in kept:
                child = node.children.get(item)
                if child is None:
                    child = _Node(item, 0, node)
                    node.children[item] = child
                    self.header[item].append(child)
                child.count += count
                node = child

    def single_path(self) -> list[_Node] | None:
        path = []
        node = self.root
        while node.children:
            if len(node.children) > 1:
                return None
            node = next(iter(node.children.values()))
            path.append(node)
        return path

    def conditional_base(self, item) -> list[tuple[tuple, int]]:
        base = []
        for node in self.header[item]:
            path = []
            up = node.parent
            while up is not None and up.parent is not None:
                path.append(up.item)
                up = up.parent
            base.append((tuple(reversed(path)), node.count))
        return base


@dataclass
class MiningStats:
    conditional_trees: int = 0
    pruned_paths: int = 0
    single_path_hits: int = 0


def _min_count(min_coverage: float, n: int) -> int:
    threshold = Fraction(min_coverage) * n
    c = threshold.numerator // threshold.denominator
    return c if c == threshold else c + 1


def _grow(
    tree: FPTree,
    prefix: frozenset,
    target: frozenset,
    min_count: int,
    prune: bool,
    out: dict,
    stats: MiningStats,
    max_len: int | None,
):
    room = len(tree.order) if max_len is None else max_len - len(prefix)
    path = tree.single_path()
    if path is not None:
        stats.single_path_hits += 1
        for r in range(min(len(path), room) + 1):
            for combo in combinations(path, r):
                candidate = prefix.union(n.item for n in combo)
                if candidate & target:
                    out[candidate] = min((n.count for n in combo), default=tree.total)
        return
    # the branch below never revisits the prefix itself, so emit it here
    if prefix & target:
        out[prefix] = tree.total
    if room <= 0:
        return
    for item in tree.order:
        nprefix = prefix | {item}
        base = tree.conditional_base(item)
        if prune and not (nprefix & target):
            kept = [(p, c) for p, c in base if target.intersection(p)]
            stats.pruned_paths += len(base) - len(kept)
            base = kept
        if base:
            stats.conditional_trees += 1
            _grow(FPTree(base, min_count, tree.rank), nprefix, target, min_count, prune, out, stats, max_len)


def fp_growth_targeted(
    transactions: Sequence[Iterable[Hashable]],
    target: Iterable[Hashable],
    min_coverage: float,
    *,
    prune: bool = True,
    stats: MiningStats | None = None,
    max_len: int | None = None,
) -> dict[frozenset, Fraction]:
    """Itemsets with support >= ``min_coverage`` that intersect ``target``.

    Support is the exact fraction of transactions containing the itemset.
    ``prune=False`` runs the same recursion without target pruning, for
    comparison. ``max_len`` caps itemset size (None: unbounded).
    """
    if not transactions:
        raise ValueError("fp_growth_targeted needs at least one transaction")
    if not 0 < min_coverage <= 1:
        raise ValueError("min_coverage must lie in (0, 1]")
    target = frozenset(target)
    if not target:
        raise ValueError("target item set must be non-empty")
    stats = stats if stats is not None else MiningStats()
    n = len(transactions)
    min_count = _min_count(min_coverage, n)
    tree = FPTree(((tuple(set(t)), 1) for t in transactions), min_count)
    counts: dict[frozenset, int] = {}
    _grow(tree, frozenset(), target, min_count, prune, counts, stats, max_len)
    return {itemset: Fraction(c, n) for itemset, c in counts.items()}
