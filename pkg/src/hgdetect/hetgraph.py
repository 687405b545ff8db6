"""Heterogeneous graph data model: typed nodes/edges, meta-path adjacencies,
class-imbalance accounting, and stratified splits.

Node types: user / tweet / keyword.  Relations:
  R1 user-user (follow), R2 user-tweet (post), R3 user-tweet (engage),
  R4 user-keyword (profile), R5 tweet-keyword (include), R6 tweet-keyword (tag).
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

NODE_TYPES = ("user", "tweet", "keyword")
CLASSES = ("participant", "benign")

RELATION_SIGNATURES = {
    "R1": ("user", "user"),
    "R2": ("user", "tweet"),
    "R3": ("user", "tweet"),
    "R4": ("user", "keyword"),
    "R5": ("tweet", "keyword"),
    "R6": ("tweet", "keyword"),
}

# Meta-paths over users; each entry lists the typed hops as (relations, from, to).
# The user-tweet hop unions R2 and R3 (post or engage).
META_PATHS = {
    "UTU": (("user", "tweet"), ("tweet", "user")),
    "UTKTU": (("user", "tweet"), ("tweet", "keyword"), ("keyword", "tweet"), ("tweet", "user")),
    "UKU": (("user", "keyword"), ("keyword", "user")),
}

HOP_RELATIONS = {
    ("user", "tweet"): ("R2", "R3"),
    ("user", "keyword"): ("R4",),
    ("tweet", "keyword"): ("R5", "R6"),
}


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class HeteroGraph:
    """Validated, immutable heterogeneous graph.

    Per-type contiguous index maps are assigned by lexicographic node-id sort
    so layouts are identical across runs.
    """

    node_type: dict        # id -> type
    node_text: dict        # id -> text
    edges: tuple           # ((src, dst, rel), ...)
    labels: dict           # user id -> class
    ids_by_type: dict = field(default_factory=dict)    # type -> sorted id list
    index_of: dict = field(default_factory=dict)       # type -> {id: idx}

    def num(self, node_type: str) -> int:
        return len(self.ids_by_type.get(node_type, ()))

    def texts(self, node_type: str):
        return [self.node_text[i] for i in self.ids_by_type[node_type]]

    def user_labels_by_index(self):
        """(indices, classes) for labeled users, in user index order."""
        idx_map = self.index_of["user"]
        items = sorted((idx_map[i], c) for i, c in self.labels.items())
        return [i for i, _ in items], [c for _, c in items]


def build_graph(nodes, edges, labels=None) -> HeteroGraph:
    """Validate and freeze a heterogeneous graph.

    nodes: iterable of (id, type, text); edges: iterable of (src, dst, rel);
    labels: optional {user id -> class}.
    """
    node_type, node_text = {}, {}
    for nid, ntype, text in nodes:
        if nid in node_type:
            raise GraphError(f"duplicate node id {nid!r}")
        if ntype not in NODE_TYPES:
            raise GraphError(f"unknown node type {ntype!r} for node {nid!r}")
        node_type[nid] = ntype
        node_text[nid] = text

    checked = []
    for src, dst, rel in edges:
        sig = RELATION_SIGNATURES.get(rel)
        if sig is None:
            raise GraphError(f"unknown relation {rel!r} on edge ({src!r}, {dst!r})")
        for endpoint in (src, dst):
            if endpoint not in node_type:
                raise GraphError(f"edge ({src!r}, {dst!r}, {rel}) references unknown node {endpoint!r}")
        got = (node_type[src], node_type[dst])
        if got != sig:
            raise GraphError(
                f"relation {rel} requires {sig[0]}–{sig[1]}, "
                f"got {got[0]}–{got[1]} on edge ({src!r}, {dst!r})"
            )
        if src == dst:
            raise GraphError(f"self-loop on node {src!r} not allowed")
        checked.append((src, dst, rel))

    labels = dict(labels or {})
    for nid, cls in labels.items():
        if nid not in node_type:
            raise GraphError(f"label on unknown node {nid!r}")
        if node_type[nid] != "user":
            raise GraphError(f"label on non-user node {nid!r} ({node_type[nid]})")
        if cls not in CLASSES:
            raise GraphError(f"unknown class {cls!r} on node {nid!r}")

    ids_by_type = {t: sorted(i for i, tt in node_type.items() if tt == t) for t in NODE_TYPES}
    index_of = {t: {i: k for k, i in enumerate(ids)} for t, ids in ids_by_type.items()}
    return HeteroGraph(node_type, node_text, tuple(checked), labels, ids_by_type, index_of)


def bipartite_adjacency(g: HeteroGraph, src_type: str, dst_type: str, relations) -> sp.csr_matrix:
    """Boolean CSR over (src_type x dst_type) index spaces, union of relations."""
    rows, cols = [], []
    for src, dst, rel in g.edges:
        if rel in relations:
            rows.append(g.index_of[src_type][src])
            cols.append(g.index_of[dst_type][dst])
    shape = (g.num(src_type), g.num(dst_type))
    mat = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
    mat.data[:] = 1.0
    mat.sum_duplicates()
    mat.data[:] = 1.0
    return mat


def user_relation_adjacency(g: HeteroGraph) -> sp.csr_matrix:
    """Symmetric user-user R1 adjacency (follow in either direction)."""
    a = bipartite_adjacency(g, "user", "user", ("R1",))
    a = a + a.T
    a.data[:] = 1.0
    a.setdiag(0)
    a.eliminate_zeros()
    return sp.csr_matrix(a)


def metapath_adjacency(g: HeteroGraph, name: str) -> sp.csr_matrix:
    """Boolean user-user adjacency: (i, j) = 1 iff a path instance of the
    meta-path exists between distinct users i and j.  Symmetric, zero diagonal.
    """
    if name not in META_PATHS:
        raise GraphError(f"unknown meta-path {name!r}; expected one of {sorted(META_PATHS)}")
    hops = META_PATHS[name]
    half = hops[: len(hops) // 2]  # all three paths are palindromes
    walk = None
    for src_t, dst_t in half:
        step = bipartite_adjacency(g, src_t, dst_t, HOP_RELATIONS[(src_t, dst_t)])
        walk = step if walk is None else walk @ step
    adj = walk @ walk.T
    adj = sp.csr_matrix(adj)
    adj.setdiag(0)
    adj.eliminate_zeros()
    adj.data[:] = 1.0
    return adj


def typed_neighbors(g: HeteroGraph, node_id, neighbor_type: str):
    """Sorted, de-duplicated neighbors of the given type across all relations."""
    if node_id not in g.node_type:
        raise GraphError(f"unknown node {node_id!r}")
    if neighbor_type not in NODE_TYPES:
        raise GraphError(f"unknown node type {neighbor_type!r}")
    out = set()
    for src, dst, _rel in g.edges:
        if src == node_id and g.node_type[dst] == neighbor_type:
            out.add(dst)
        elif dst == node_id and g.node_type[src] == neighbor_type:
            out.add(src)
    return sorted(out)


def cir(g: HeteroGraph, class_i: str, class_j: str) -> float:
    """Class imbalance ratio |labeled class_i| / |labeled class_j|."""
    counts = {c: 0 for c in CLASSES}
    for cls in g.labels.values():
        counts[cls] += 1
    if counts.get(class_j, 0) == 0:
        raise GraphError(f"class {class_j!r} has no labeled nodes (ratio undefined)")
    if counts.get(class_i, 0) == 0:
        raise GraphError(f"class {class_i!r} has no labeled nodes")
    return counts[class_i] / counts[class_j]


@dataclass(frozen=True)
class SplitAssignment:
    train: frozenset
    val: frozenset
    test: frozenset
    train_frac: float
    val_frac: float
    seed: int


def stratified_split(g: HeteroGraph, train_frac: float, val_frac: float, seed: int) -> SplitAssignment:
    """Deterministic per-class stratified split of labeled users."""
    if train_frac <= 0 or val_frac <= 0:
        raise GraphError("split fractions must be positive")
    if train_frac + val_frac >= 1:
        raise GraphError(f"train_frac + val_frac = {train_frac + val_frac} must be < 1")
    by_class = {c: sorted(i for i, cc in g.labels.items() if cc == c) for c in CLASSES}
    rng = np.random.default_rng(seed)
    train, val, test = set(), set(), set()
    for cls in CLASSES:
        ids = by_class[cls]
        if not ids:
            continue
        n = len(ids)
        n_train = max(1, round(train_frac * n))
        n_val = max(1, round(val_frac * n))
        if n_train + n_val >= n:
            raise GraphError(
                f"class {cls!r} has {n} labeled nodes; too few for one node per partition"
            )
        order = rng.permutation(n)
        shuffled = [ids[k] for k in order]
        train.update(shuffled[:n_train])
        val.update(shuffled[n_train : n_train + n_val])
        test.update(shuffled[n_train + n_val :])
    return SplitAssignment(frozenset(train), frozenset(val), frozenset(test), train_frac, val_frac, seed)


# ---------------------------------------------------------------------------
# Line-delimited JSON graph format.

def save_graph(g: HeteroGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ntype in NODE_TYPES:
            for nid in g.ids_by_type[ntype]:
                rec = {"kind": "node", "id": nid, "type": ntype, "text": g.node_text[nid]}
                if nid in g.labels:
                    rec["label"] = g.labels[nid]
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        for src, dst, rel in g.edges:
            f.write(json.dumps({"kind": "edge", "src": src, "dst": dst, "rel": rel}, sort_keys=True) + "\n")


def load_graph(path) -> HeteroGraph:
    nodes, edges, labels = [], [], {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "node":
                nodes.append((rec["id"], rec["type"], rec.get("text", "")))
                if "label" in rec:
                    labels[rec["id"]] = rec["label"]
            elif kind == "edge":
                edges.append((rec["src"], rec["dst"], rec["rel"]))
            else:
                raise GraphError(f"{path}:{lineno}: unknown record kind {kind!r}")
    return build_graph(nodes, edges, labels)
