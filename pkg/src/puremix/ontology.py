"""Hierarchical label taxonomy with merge/aggregate/exclude refinement.

The taxonomy is a forest of labeled nodes loaded from a flat tab-separated
document.  A refinement plan is an ordered list of rules of three kinds:

* ``merge``     -- retire synonym leaves into a surviving label,
* ``aggregate`` -- fold fine-grained labels into one of their ancestors,
* ``exclude``   -- delete a subtree outright.

Retired ids stay resolvable through an alias map so that historical
annotations keep pointing at a live label.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class OntologyError(Exception):
    """Raised for malformed taxonomy documents or invalid refinement plans."""


@dataclass
class LabelNode:
    id: str
    name: str
    parent: str | None
    depth: int = 0

    def __repr__(self) -> str:  # compact, id-centric
        return f"LabelNode({self.id!r}, name={self.name!r}, parent={self.parent!r})"


@dataclass(frozen=True)
class RefinementRule:
    kind: str  # merge | aggregate | exclude
    sources: tuple[str, ...]
    target: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("merge", "aggregate", "exclude"):
            raise OntologyError(f"unknown refinement kind {self.kind!r}")
        if not self.sources:
            raise OntologyError(f"{self.kind} rule has no sources")
        if self.kind == "exclude":
            if self.target is not None:
                raise OntologyError("exclude rules take no target")
        else:
            if self.target is None:
                raise OntologyError(f"{self.kind} rule requires a target")
            if self.target in self.sources:
                raise OntologyError(f"rule target {self.target!r} appears in its own sources")


@dataclass
class Ontology:
    """An immutable-by-convention forest of labels plus an alias map."""

    nodes: dict[str, LabelNode]
    alias_map: dict[str, str] = field(default_factory=dict)
    _children: dict[str, list[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._children:
            self._children = {nid: [] for nid in self.nodes}
            for node in self.nodes.values():
                if node.parent is not None:
                    self._children[node.parent].append(node.id)

    def children(self, node_id: str) -> list[str]:
        return list(self._children.get(node_id, []))

    def is_leaf(self, node_id: str) -> bool:
        return not self._children.get(node_id)

    def resolve(self, label_id: str) -> str:
        """Follow alias chains until a live id is reached (idempotent)."""
        seen = set()
        current = label_id
        while current in self.alias_map:
            if current in seen:
                raise OntologyError(f"alias cycle at {label_id!r}")
            seen.add(current)
            current = self.alias_map[current]
        if current not in self.nodes:
            raise OntologyError(f"unknown label id {label_id!r}")
        return current

    def ancestors(self, node_id: str) -> list[str]:
        """Ancestor chain from parent up to the root, nearest first."""
        chain = []
        current = self.nodes[node_id].parent
        while current is not None:
            chain.append(current)
            current = self.nodes[current].parent
        return chain

    def name_of(self, label_id: str) -> str:
        return self.nodes[self.resolve(label_id)].name


def load_ontology(path: str) -> Ontology:
    """Parse a taxonomy document: one ``id<TAB>name<TAB>parent_or_dash`` per line."""
    nodes: dict[str, LabelNode] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise OntologyError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            node_id, name, parent = (p.strip() for p in parts)
            if not node_id:
                raise OntologyError(f"{path}:{lineno}: empty id")
            if node_id in nodes:
                raise OntologyError(f"{path}:{lineno}: duplicate id {node_id!r}")
            nodes[node_id] = LabelNode(node_id, name, None if parent == "-" else parent)
    _validate_forest(nodes)
    _recompute_depths(nodes)
    return Ontology(nodes)


def _validate_forest(nodes: dict[str, LabelNode]) -> None:
    for node in nodes.values():
        if node.parent is not None and node.parent not in nodes:
            raise OntologyError(f"node {node.id!r} has dangling parent {node.parent!r}")
    # Walk each parent chain; revisiting a node within one walk means a cycle.
    for node in nodes.values():
        seen = {node.id}
        current = node.parent
        while current is not None:
            if current in seen:
                raise OntologyError(f"cycle detected through node {current!r}")
            seen.add(current)
            current = nodes[current].parent


def parse_refinement_plan(path: str) -> list[RefinementRule]:
    """Parse a plan document: one ``kind<TAB>target_or_dash<TAB>src1,src2,...`` per line."""
    rules: list[RefinementRule] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise OntologyError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            kind, target, srcs = (p.strip() for p in parts)
            sources = tuple(s.strip() for s in srcs.split(",") if s.strip())
            try:
                rules.append(
                    RefinementRule(kind, sources, None if target == "-" else target)
                )
            except OntologyError as exc:
                raise OntologyError(f"{path}:{lineno}: {exc}") from exc
    return rules


def apply_refinements(ont: Ontology, plan: list[RefinementRule]) -> Ontology:
    """Apply refinement rules in listed order and return a new Ontology.

    Rules are checked against the evolving state: every referenced id must be
    live when its rule runs, so a rule naming a previously retired or excluded
    id is an error rather than a silent no-op.
    """
    nodes = {nid: LabelNode(n.id, n.name, n.parent, n.depth) for nid, n in ont.nodes.items()}
    aliases = dict(ont.alias_map)

    for index, rule in enumerate(plan):
        where = f"rule {index + 1} ({rule.kind})"
        for label_id in rule.sources + ((rule.target,) if rule.target else ()):
            if label_id not in nodes:
                raise OntologyError(f"{where}: unknown or retired id {label_id!r}")
        if rule.kind == "merge":
            _apply_merge(nodes, aliases, rule, where)
        elif rule.kind == "aggregate":
            _apply_aggregate(nodes, aliases, rule, where)
        else:
            _apply_exclude(nodes, aliases, rule, where)

    _recompute_depths(nodes)
    return Ontology(nodes, aliases)


def _children_index(nodes: dict[str, LabelNode]) -> dict[str, list[str]]:
    children: dict[str, list[str]] = {nid: [] for nid in nodes}
    for node in nodes.values():
        if node.parent is not None:
            children[node.parent].append(node.id)
    return children


def _apply_merge(
    nodes: dict[str, LabelNode], aliases: dict[str, str], rule: RefinementRule, where: str
) -> None:
    children = _children_index(nodes)
    for src in rule.sources:
        if children[src]:
            raise OntologyError(
                f"{where}: cannot merge internal node {src!r} (merge applies to leaves)"
            )
    for src in rule.sources:
        del nodes[src]
        aliases[src] = rule.target  # type: ignore[assignment]
    _check_alias_targets(nodes, aliases, where)


def _apply_aggregate(
    nodes: dict[str, LabelNode], aliases: dict[str, str], rule: RefinementRule, where: str
) -> None:
    target = rule.target
    assert target is not None
    ancestors_cache: dict[str, set[str]] = {}

    def ancestor_set(nid: str) -> set[str]:
        if nid not in ancestors_cache:
            chain = set()
            current = nodes[nid].parent
            while current is not None:
                chain.add(current)
                current = nodes[current].parent
            ancestors_cache[nid] = chain
        return ancestors_cache[nid]

    for src in rule.sources:
        if target not in ancestor_set(src):
            raise OntologyError(
                f"{where}: target {target!r} is not an ancestor of source {src!r}"
            )
    children = _children_index(nodes)
    for src in rule.sources:
        # Any children of an aggregated node reattach directly to the target
        # so the forest stays connected; their own ids survive.
        for child in children[src]:
            nodes[child].parent = target
        del nodes[src]
        aliases[src] = target
    _check_alias_targets(nodes, aliases, where)


def _apply_exclude(
    nodes: dict[str, LabelNode], aliases: dict[str, str], rule: RefinementRule, where: str
) -> None:
    children = _children_index(nodes)
    doomed: set[str] = set()
    stack = list(rule.sources)
    while stack:
        nid = stack.pop()
        doomed.add(nid)
        stack.extend(children[nid])
    for alias_src, alias_dst in aliases.items():
        if alias_dst in doomed:
            raise OntologyError(
                f"{where}: excluding {alias_dst!r} would orphan alias {alias_src!r}"
            )
    for nid in doomed:
        del nodes[nid]


def _check_alias_targets(
    nodes: dict[str, LabelNode], aliases: dict[str, str], where: str
) -> None:
    for src, dst in aliases.items():
        # Chains are fine (dst may itself be retired with its own alias);
        # a dangling end is not.
        seen = set()
        current = dst
        while current in aliases:
            if current in seen:
                raise OntologyError(f"{where}: alias cycle through {current!r}")
            seen.add(current)
            current = aliases[current]
        if current not in nodes:
            raise OntologyError(f"{where}: alias {src!r} points at removed id {current!r}")


def _recompute_depths(nodes: dict[str, LabelNode]) -> None:
    cache: dict[str, int] = {}
    for node in nodes.values():
        # Walk up to the nearest node with a known depth, then unwind.
        path = []
        current: str | None = node.id
        while current is not None and current not in cache:
            path.append(current)
            current = nodes[current].parent
        base = -1 if current is None else cache[current]
        for nid in reversed(path):
            base += 1
            cache[nid] = base
    for node in nodes.values():
        node.depth = cache[node.id]


def leaf_labels(ont: Ontology) -> list[str]:
    """All leaf ids in lexicographic order."""
    return sorted(nid for nid in ont.nodes if ont.is_leaf(nid))


def candidate_leaves(ont: Ontology, coarse_id: str) -> list[str]:
    """Leaf ids in the subtree rooted at ``coarse_id`` (itself, if a leaf)."""
    root = ont.resolve(coarse_id)
    leaves = []
    stack = [root]
    while stack:
        nid = stack.pop()
        kids = ont.children(nid)
        if not kids:
            leaves.append(nid)
        else:
            stack.extend(kids)
    return sorted(leaves)


def write_ontology(ont: Ontology, path: str) -> None:
    """Serialize back to the taxonomy document format, sorted by id."""
    with open(path, "w", encoding="utf-8") as fh:
        for nid in sorted(ont.nodes):
            node = ont.nodes[nid]
            fh.write(f"{node.id}\t{node.name}\t{node.parent if node.parent else '-'}\n")
