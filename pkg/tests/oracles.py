"""Reference computations that share no code path with the package.

Distances come from breadth-first search over an explicitly expanded tree;
metrics come from Python sets of pixel coordinates, with exact fractions.
"""

from collections import deque
from fractions import Fraction

import numpy as np

from safeseg.hierarchy import LabelHierarchy, Node


def expanded_edges(h: LabelHierarchy):
    """Adjacency of the full tree: virtual root, declared nodes, padding chains."""
    adj = {"<root>": set()}

    def link(a, b):
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)

    has_child = {n.parent for n in h.nodes}
    for node in h.nodes:
        parent = "<root>" if node.parent is None else node.parent
        if node.name in has_child or h.leaf_depth != "pad" or node.level == h.n_levels:
            link(parent, node.name)
            continue
        # Shallow leaf under padding: private chain down to n_levels.
        prev = parent
        for lvl in range(node.level, h.n_levels):
            pad = f"<pad:{node.name}:{lvl}>"
            link(prev, pad)
            prev = pad
        link(prev, node.name)
    return adj


def bfs_distance_matrix(h: LabelHierarchy) -> np.ndarray:
    adj = expanded_edges(h)
    names = [leaf.name for leaf in sorted(h.nodes, key=lambda n: -1 if n.class_index is None else n.class_index)
             if leaf.class_index is not None]
    k = len(names)
    out = np.zeros((k, k), dtype=np.int64)
    for i, src in enumerate(names):
        dist = {src: 0}
        queue = deque([src])
        while queue:
            cur = queue.popleft()
            for nxt in adj[cur]:
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
        for j, dst in enumerate(names):
            length = dist[dst]
            assert length % 2 == 0, "odd path length between leaves"
            out[i, j] = length // 2
    return out


def pixel_sets(labels, ignore_mask):
    sets = {}
    for (r, c), v in np.ndenumerate(labels):
        if not ignore_mask[r, c]:
            sets.setdefault(int(v), set()).add((r, c))
    return sets


def brute_force(gt, pred, distances, n_levels, important, k, ignore=255, presence="exclude"):
    """Exact per-class IoU / safe IoU and their means straight from pixel sets.

    Returns a dict of Fractions: ``iou`` and ``safe`` map evaluated class ->
    value; ``miou`` and ``smiou`` are the means (None when nothing has
    ground truth).
    """
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    ign = gt == ignore
    gts = pixel_sets(gt, ign)
    preds = pixel_sets(pred, ign)
    empty = set()
    iou, safe = {}, {}
    for c in range(k):
        g = gts.get(c, empty)
        if not g:
            continue
        union = len(g | preds.get(c, empty))
        iou_c = Fraction(len(g & preds.get(c, empty)), union)
        others = range(k) if c in important else sorted(important)
        penalty = Fraction(0)
        for s in others:
            if s == c:
                continue
            penalty += Fraction(int(distances[c][s]), n_levels) * Fraction(len(g & preds.get(s, empty)), union)
        iou[c] = iou_c
        safe[c] = iou_c - penalty
    if not iou:
        return {"iou": iou, "safe": safe, "miou": None, "smiou": None}
    denom = len(iou) if presence == "exclude" else k
    return {
        "iou": iou,
        "safe": safe,
        "miou": sum(iou.values(), Fraction(0)) / denom,
        "smiou": sum(safe.values(), Fraction(0)) / denom,
    }


def random_hierarchy(rng, max_k=6, max_levels=4, mode="pad") -> LabelHierarchy:
    """Random tree with 1..max_k leaves at random levels up to n_levels."""
    while True:
        n = int(rng.integers(1, max_levels + 1))
        k = int(rng.integers(1, max_k + 1))
        paths = set()
        for _ in range(k):
            depth = int(rng.integers(1, n + 1)) if mode == "pad" else n
            paths.add(tuple(int(x) for x in rng.integers(0, 2, size=depth)))
        paths = sorted(paths)
        # No leaf may be a prefix (ancestor) of another leaf.
        if any(a != b and b[: len(a)] == a for a in paths for b in paths):
            continue
        nodes, seen = [], set()
        order = list(rng.permutation(len(paths)))
        for leaf_no, p in enumerate(paths):
            for lvl in range(1, len(p) + 1):
                prefix = p[:lvl]
                if prefix in seen:
                    continue
                seen.add(prefix)
                name = "n" + "".join(map(str, prefix))
                parent = None if lvl == 1 else "n" + "".join(map(str, prefix[:-1]))
                is_leaf = lvl == len(p)
                nodes.append(Node(name, lvl, parent, int(order[leaf_no]) if is_leaf else None))
        return LabelHierarchy(nodes, n_levels=n, leaf_depth=mode)


def random_pair(rng, k, max_side=8, ignore=255, p_ignore=0.1):
    h, w = (int(x) for x in rng.integers(1, max_side + 1, size=2))
    gt = rng.integers(0, k, size=(h, w)).astype(np.uint8)
    pred = rng.integers(0, k, size=(h, w)).astype(np.uint8)
    gt[rng.random((h, w)) < p_ignore] = ignore
    return gt, pred
