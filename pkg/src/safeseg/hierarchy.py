"""Label taxonomy, tree distances between evaluation classes, and config I/O.

A hierarchy is a rooted tree. The root is virtual and never named in the
config; level-1 nodes hang directly off it and a node at level ``L`` sits at
depth ``L``. Leaves are the evaluation classes and carry a contiguous
``class_index``.

The tree distance between two leaves is half the edge length of the path
joining them. How leaves shallower than ``n_levels`` are treated is set by
``leaf_depth``:

``pad``
    shallow leaves are extended with private unary chains down to
    ``n_levels`` (every leaf ends at the same depth).
``strict``
    every leaf must already sit at ``n_levels``.
``parity``
    leaves stay at their declared level, which must have the same parity as
    ``n_levels`` so every path length is even.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

LEAF_DEPTH_MODES = ("pad", "strict", "parity")

#: Name of the built-in empty important-class preset.
EMPTY_PRESET = "none"
#: Name of the preset built from the ``important_default`` node flags.
DEFAULT_PRESET = "default"


class HierarchyError(ValueError):
    """Raised for malformed or inconsistent hierarchy configs."""


@dataclass(frozen=True)
class Node:
    name: str
    level: int
    parent: str | None = None
    class_index: int | None = None
    important_default: bool = False


@dataclass(frozen=True)
class DistanceCheck:
    first: str
    second: str
    distance: int


class LabelHierarchy:
    """Immutable rooted label tree with indexed leaf classes.

    Args:
        nodes: Declared nodes in document order. ``parent=None`` means the
            virtual root.
        n_levels: Number of levels below the root.
        leaf_depth: One of ``pad``, ``strict``, ``parity``.
        name: Short identifier of the taxonomy.
        source: Free-text provenance note, kept verbatim.
        presets: Named important-class sets, each a list of node names whose
            leaves form the set.
        checks: Known distances verified at construction time.
    """

    def __init__(
        self,
        nodes: Sequence[Node],
        n_levels: int,
        leaf_depth: str = "pad",
        name: str = "",
        source: str = "",
        presets: Mapping[str, Sequence[str]] | None = None,
        checks: Sequence[DistanceCheck] = (),
    ):
        self.nodes = tuple(nodes)
        self.n_levels = n_levels
        self.leaf_depth = leaf_depth
        self.name = name
        self.source = source
        self.presets = {k: tuple(v) for k, v in (presets or {}).items()}
        self.checks = tuple(checks)
        self._validate()
        self._distances = self._tabulate()
        self._distances.flags.writeable = False
        self._run_checks()

    # -- construction -----------------------------------------------------

    def _validate(self) -> None:
        if not isinstance(self.n_levels, int) or self.n_levels < 1:
            raise HierarchyError(f"n_levels must be a positive integer, got {self.n_levels!r}")
        if self.leaf_depth not in LEAF_DEPTH_MODES:
            raise HierarchyError(f"leaf_depth must be one of {LEAF_DEPTH_MODES}, got {self.leaf_depth!r}")
        if not self.nodes:
            raise HierarchyError("hierarchy has no nodes")

        by_name: dict[str, Node] = {}
        for node in self.nodes:
            if node.name in by_name:
                raise HierarchyError(f"duplicate node name {node.name!r}")
            by_name[node.name] = node
        for node in self.nodes:
            if node.parent is not None and node.parent not in by_name:
                raise HierarchyError(f"node {node.name!r} has unknown parent {node.parent!r}")
        self._by_name = by_name

        # Cycle detection before the level rule so a cycle is reported as such.
        for node in self.nodes:
            seen = {node.name}
            cur = node
            while cur.parent is not None:
                if cur.parent in seen:
                    raise HierarchyError(f"cycle detected through node {cur.parent!r}")
                seen.add(cur.parent)
                cur = by_name[cur.parent]

        for node in self.nodes:
            parent_level = 0 if node.parent is None else by_name[node.parent].level
            if node.level != parent_level + 1:
                raise HierarchyError(
                    f"node {node.name!r} has level {node.level} but its parent "
                    f"{node.parent or '<root>'!r} is at level {parent_level}"
                )
            if node.level > self.n_levels:
                raise HierarchyError(f"node {node.name!r} is at level {node.level} > n_levels={self.n_levels}")

        children: dict[str | None, list[str]] = {None: []}
        for node in self.nodes:
            children.setdefault(node.parent, []).append(node.name)
        self._children = {k: tuple(v) for k, v in children.items()}

        leaves = [n for n in self.nodes if n.name not in self._children]
        for node in self.nodes:
            is_leaf = node.name not in self._children
            if is_leaf and node.class_index is None:
                raise HierarchyError(f"leaf {node.name!r} has no class_index")
            if not is_leaf and node.class_index is not None:
                raise HierarchyError(f"inner node {node.name!r} must not carry a class_index")

        indices = [n.class_index for n in leaves]
        if len(set(indices)) != len(indices):
            dup = sorted({i for i in indices if indices.count(i) > 1})
            raise HierarchyError(f"duplicate class_index {dup}")
        if sorted(indices) != list(range(len(leaves))):
            raise HierarchyError(f"class indices must cover 0..{len(leaves) - 1} exactly, got {sorted(indices)}")
        self.leaves = tuple(sorted(leaves, key=lambda n: n.class_index))
        self._leaf_index = {n.name: n.class_index for n in self.leaves}

        for leaf in self.leaves:
            if self.leaf_depth == "strict" and leaf.level != self.n_levels:
                raise HierarchyError(
                    f"leaf {leaf.name!r} sits at level {leaf.level}, expected {self.n_levels} (padding disabled)"
                )
            if self.leaf_depth == "parity" and (self.n_levels - leaf.level) % 2:
                raise HierarchyError(
                    f"leaf {leaf.name!r} at level {leaf.level} does not share the parity of n_levels={self.n_levels}"
                )

        for preset, members in self.presets.items():
            if preset in (EMPTY_PRESET, DEFAULT_PRESET):
                raise HierarchyError(f"preset name {preset!r} is reserved")
            for member in members:
                if member not in by_name:
                    raise HierarchyError(f"preset {preset!r} references unknown node {member!r}")

    def _ancestors(self, name: str) -> list[str]:
        """Declared ancestors of ``name`` from level 1 down to the node itself."""
        chain = []
        cur: str | None = name
        while cur is not None:
            chain.append(cur)
            cur = self._by_name[cur].parent
        return chain[::-1]

    def depth(self, leaf: str | int) -> int:
        """Depth of a leaf below the virtual root, padding included."""
        node = self.leaves[self.index(leaf)]
        return self.n_levels if self.leaf_depth == "pad" else node.level

    def _tabulate(self) -> np.ndarray:
        k = len(self.leaves)
        paths = [self._ancestors(leaf.name) for leaf in self.leaves]
        depths = [self.depth(i) for i in range(k)]
        out = np.zeros((k, k), dtype=np.int64)
        for i in range(k):
            for j in range(i + 1, k):
                common = 0
                for a, b in zip(paths[i], paths[j]):
                    if a != b:
                        break
                    common += 1
                length = depths[i] + depths[j] - 2 * common
                out[i, j] = out[j, i] = length // 2
        return out

    def _run_checks(self) -> None:
        for check in self.checks:
            got = self.tree_distance(check.first, check.second)
            if got != check.distance:
                raise HierarchyError(
                    f"self-check failed: td({check.first}, {check.second}) = {got}, expected {check.distance}"
                )

    # -- queries ----------------------------------------------------------

    @property
    def num_classes(self) -> int:
        return len(self.leaves)

    @property
    def class_names(self) -> list[str]:
        return [leaf.name for leaf in self.leaves]

    def level1_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.parent is None]

    def index(self, leaf: str | int) -> int:
        """Resolve a leaf name or class index to its class index."""
        if isinstance(leaf, (int, np.integer)) and not isinstance(leaf, bool):
            if not 0 <= leaf < len(self.leaves):
                raise KeyError(f"class index {leaf} out of range 0..{len(self.leaves) - 1}")
            return int(leaf)
        try:
            return self._leaf_index[leaf]
        except KeyError:
            raise KeyError(f"unknown leaf {leaf!r}") from None

    def leaves_under(self, name: str) -> list[int]:
        """Class indices of every leaf in the subtree rooted at ``name``."""
        if name not in self._by_name:
            raise KeyError(f"unknown node {name!r}")
        out = []
        stack = [name]
        while stack:
            cur = stack.pop()
            kids = self._children.get(cur)
            if kids is None:
                out.append(self._leaf_index[cur])
            else:
                stack.extend(kids)
        return sorted(out)

    def tree_distance(self, c: str | int, s: str | int) -> int:
        return int(self._distances[self.index(c), self.index(s)])

    def distance_matrix(self) -> np.ndarray:
        """Read-only K x K array of pairwise tree distances."""
        return self._distances

    def important_set(self, preset: str) -> frozenset[int]:
        """Resolve a preset name to a set of class indices.

        ``none`` is the empty set and ``default`` collects the leaves flagged
        ``important_default``; anything else must be declared in the config.
        """
        if preset == EMPTY_PRESET:
            return frozenset()
        if preset == DEFAULT_PRESET:
            return frozenset(n.class_index for n in self.leaves if n.important_default)
        if preset not in self.presets:
            raise KeyError(f"unknown preset {preset!r}; known: {self.preset_names()}")
        return frozenset(i for member in self.presets[preset] for i in self.leaves_under(member))

    def preset_names(self) -> list[str]:
        return [EMPTY_PRESET, DEFAULT_PRESET, *self.presets]

    def resolve_classes(self, names: Iterable[str | int]) -> frozenset[int]:
        """Class indices for a mix of leaf names, inner-node names and indices."""
        out: set[int] = set()
        for item in names:
            if isinstance(item, str) and item in self._children:
                out.update(self.leaves_under(item))
            else:
                out.add(self.index(item))
        return frozenset(out)


def tree_distance(h: LabelHierarchy, c: str | int, s: str | int) -> int:
    return h.tree_distance(c, s)


def distance_matrix(h: LabelHierarchy) -> np.ndarray:
    return h.distance_matrix()


# -- config documents -----------------------------------------------------

_TOP_KEYS = {"name", "source", "n_levels", "leaf_depth", "presets", "checks", "nodes"}
_NODE_KEYS = {"name", "level", "parent", "class_index", "important_default"}


def parse_hierarchy(document: str | Mapping) -> LabelHierarchy:
    """Build a validated hierarchy from YAML text or an already-loaded mapping."""
    if isinstance(document, str):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise HierarchyError(f"hierarchy config is not valid YAML: {exc}") from exc
    if not isinstance(document, Mapping):
        raise HierarchyError("hierarchy config must be a mapping")
    unknown = set(document) - _TOP_KEYS
    if unknown:
        raise HierarchyError(f"unknown top-level keys {sorted(unknown)}")
    if "n_levels" not in document or "nodes" not in document:
        raise HierarchyError("hierarchy config needs 'n_levels' and 'nodes'")

    nodes = []
    for raw in document["nodes"] or []:
        if not isinstance(raw, Mapping) or "name" not in raw or "level" not in raw:
            raise HierarchyError(f"bad node entry {raw!r}")
        extra = set(raw) - _NODE_KEYS
        if extra:
            raise HierarchyError(f"node {raw['name']!r} has unknown keys {sorted(extra)}")
        nodes.append(
            Node(
                name=str(raw["name"]),
                level=int(raw["level"]),
                parent=None if raw.get("parent") is None else str(raw["parent"]),
                class_index=None if raw.get("class_index") is None else int(raw["class_index"]),
                important_default=bool(raw.get("important_default", False)),
            )
        )
    checks = []
    for raw in document.get("checks") or []:
        try:
            first, second = raw["pair"]
            checks.append(DistanceCheck(str(first), str(second), int(raw["distance"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise HierarchyError(f"bad check entry {raw!r}") from exc
    return LabelHierarchy(
        nodes,
        n_levels=document["n_levels"],
        leaf_depth=document.get("leaf_depth", "pad"),
        name=str(document.get("name", "")),
        source=str(document.get("source", "")),
        presets=document.get("presets") or {},
        checks=checks,
    )


def _q(value: str) -> str:
    return json.dumps(value, ensure_ascii=False)


def serialize_hierarchy(h: LabelHierarchy) -> str:
    """Canonical YAML text; ``serialize(parse(text)) == text`` for canonical input."""
    lines = [
        f"name: {_q(h.name)}",
        f"source: {_q(h.source)}",
        f"n_levels: {h.n_levels}",
        f"leaf_depth: {h.leaf_depth}",
    ]
    if h.presets:
        lines.append("presets:")
        for key, members in h.presets.items():
            lines.append(f"  {_q(key)}: [{', '.join(_q(m) for m in members)}]")
    if h.checks:
        lines.append("checks:")
        for c in h.checks:
            lines.append(f"- {{pair: [{_q(c.first)}, {_q(c.second)}], distance: {c.distance}}}")
    lines.append("nodes:")
    for n in h.nodes:
        parts = [f"name: {_q(n.name)}", f"level: {n.level}", f"parent: {'null' if n.parent is None else _q(n.parent)}"]
        if n.class_index is not None:
            parts.append(f"class_index: {n.class_index}")
            parts.append(f"important_default: {'true' if n.important_default else 'false'}")
        lines.append("- {" + ", ".join(parts) + "}")
    return "\n".join(lines) + "\n"


def load_hierarchy(path: str | Path) -> LabelHierarchy:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise HierarchyError(f"cannot read hierarchy config {path}: {exc}") from exc
    return parse_hierarchy(text)


def default_config_text() -> str:
    return resources.files("safeseg.data").joinpath("idd.yaml").read_text(encoding="utf-8")


def default_hierarchy() -> LabelHierarchy:
    """The shipped 30-class, 4-level IDD taxonomy."""
    return parse_hierarchy(default_config_text())
