"""
Hierarchy Service for Rolechain
Maintains the account hierarchy forest, computes manager and law-enforcement
scopes, and renders the tree as Graphviz DOT
"""

import logging
from typing import Dict, Iterable, Mapping, Optional

import networkx as nx
from graphviz import Digraph

from errors import CycleCreated, MissingLRole, NoManagerAncestor, UnknownNode
from models import AccountKey, HierarchyTree, RoleIndexEntry, RoleSet, ScopeSet

logger = logging.getLogger(__name__)

RoleIndex = Mapping[AccountKey, RoleIndexEntry]


def genesis_tree(root: AccountKey) -> HierarchyTree:
    return HierarchyTree(parent={root: None}, root=root)


def as_graph(tree: HierarchyTree) -> nx.DiGraph:
    """Directed parent -> child graph over registered accounts"""
    graph = nx.DiGraph()
    graph.add_nodes_from(tree.parent)
    graph.add_edges_from((parent, child) for child, parent in tree.parent.items() if parent is not None)
    return graph


def is_ancestor_or_self(candidate: AccountKey, node: AccountKey, tree: HierarchyTree) -> bool:
    if candidate == node:
        return True
    if not (tree.is_registered(candidate) and tree.is_registered(node)):
        return False
    return candidate in nx.ancestors(as_graph(tree), node)


def depth(node: AccountKey, tree: HierarchyTree) -> int:
    """Distance from the root; the root is at depth 0"""
    if not tree.is_registered(node):
        raise UnknownNode(f"{node.label} is not in the hierarchy")
    return len(nx.ancestors(as_graph(tree), node))


def on_role_transition(
    issuer: AccountKey,
    target: AccountKey,
    old_roles: RoleSet,
    new_roles: RoleSet,
    tree: HierarchyTree,
) -> HierarchyTree:
    """
    Granting roles to a roleless account hangs it under the issuer, replacing
    any edge it kept from before. Removing roles leaves the edge in place.
    """
    if not (old_roles.is_empty and not new_roles.is_empty):
        return tree
    if tree.root is None:
        # genesis grant
        return genesis_tree(target)
    if is_ancestor_or_self(target, issuer, tree):
        raise CycleCreated(f"{target.label} is an ancestor of {issuer.label}")
    parent = dict(tree.parent)
    previous = parent.get(target)
    parent[target] = issuer
    if previous is not None and previous != issuer:
        logger.debug(f"Reparenting {target.label}: {previous.label} -> {issuer.label}")
    return HierarchyTree(parent=parent, root=tree.root)


def manager_scope(node: AccountKey, tree: HierarchyTree, role_index: Optional[RoleIndex] = None) -> ScopeSet:
    """Everything reachable from `node` by breadth-first search over child edges, `node` included"""
    if not tree.is_registered(node):
        raise UnknownNode(f"{node.label} is not in the hierarchy")
    return ScopeSet(frozenset(nx.bfs_tree(as_graph(tree), node).nodes))


def nearest_manager(node: AccountKey, tree: HierarchyTree, role_index: RoleIndex) -> AccountKey:
    current: Optional[AccountKey] = node
    while current is not None:
        entry = role_index.get(current)
        if entry is not None and entry.roles.has_m:
            return current
        current = tree.parent.get(current)
    raise NoManagerAncestor(f"no manager on the path from {node.label} to the root")


def law_scope(node: AccountKey, tree: HierarchyTree, role_index: RoleIndex) -> ScopeSet:
    """Manager scope of the first account holding M found walking up from `node`"""
    if not tree.is_registered(node):
        raise UnknownNode(f"{node.label} is not in the hierarchy")
    entry = role_index.get(node)
    if entry is None or not entry.roles.has_l:
        raise MissingLRole(f"{node.label} does not hold the L role")
    return manager_scope(nearest_manager(node, tree, role_index), tree, role_index)


def node_label(name: str, entry: Optional[RoleIndexEntry]) -> str:
    parts = list(entry.roles.letters()) if entry is not None else []
    if entry is not None and entry.locked:
        parts.append("D")
    return f"{name} ({', '.join(parts)})"


def export_dot(
    tree: HierarchyTree,
    role_index: RoleIndex,
    names: Optional[Mapping[AccountKey, str]] = None,
    extra_accounts: Iterable[AccountKey] = (),
) -> str:
    """
    Render the hierarchy as a DOT digraph.

    Args:
        tree: hierarchy to draw
        role_index: source of the role letters and the locked state (D)
        names: display names; accounts without one use their key label
        extra_accounts: active but never-registered accounts, drawn without edges

    Returns:
        DOT source, ordered by account key so identical states give identical text
    """
    names = names or {}
    accounts = sorted(set(tree.parent) | set(extra_accounts))
    display: Dict[AccountKey, str] = {key: names.get(key) or key.label for key in accounts}

    dot = Digraph(name="hierarchy")
    for key in accounts:
        dot.node(display[key], label=node_label(display[key], role_index.get(key)))
    for child in accounts:
        parent = tree.parent.get(child)
        if parent is not None:
            dot.edge(display[parent], display[child])
    return dot.source
