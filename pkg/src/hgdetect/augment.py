"""Minority-class graph augmentation: synthetic users generated through an
LLM client, edge selection among the origin's typed neighbors, and text
embedding of node attributes."""

import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import hetgraph
from .hetgraph import CLASSES, HeteroGraph, NODE_TYPES, SplitAssignment, build_graph, typed_neighbors
from .llmclient import (
    AugmentationError,
    EDGE_INSTRUCTION,
    NODE_INSTRUCTION,
    ResponseCache,
    UserText,
    cached_call,
    parse_selected_neighbors,
    render_edge_prompt,
    render_node_prompt,
)

log = logging.getLogger(__name__)

# relation used for a synthetic user's edge toward each neighbor type
SYNTH_RELATION = {"user": "R1", "tweet": "R2", "keyword": "R4"}
TEXT_DIM = 384


class HashingTextEmbedder:
    """Deterministic text embedder: seeded feature hashing of word n-grams
    into a fixed-length vector, L2-normalized.  Empty text maps to zeros.

    Drop-in stand-in for a sentence-encoder endpoint (same contract:
    string -> fixed-length vector; equal strings give equal vectors).
    """

    def __init__(self, dim: int = TEXT_DIM, seed: int = 0):
        self.dim = int(dim)
        self.seed = int(seed)

    def encode(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        tokens = re.findall(r"[\w#@]+", text.lower())
        grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        for gram in grams:
            h = hashlib.blake2b(f"{self.seed}:{gram}".encode(), digest_size=9).digest()
            idx = int.from_bytes(h[:8], "little") % self.dim
            sign = 1.0 if h[8] & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def encode_text(embedder, text: str) -> np.ndarray:
    return embedder.encode(text)


def embed_graph_features(g: HeteroGraph, embedder) -> dict:
    """Per-type raw feature matrices (type index order)."""
    return {t: np.stack([embedder.encode(g.node_text[i]) for i in g.ids_by_type[t]])
            if g.num(t) else np.zeros((0, getattr(embedder, "dim", TEXT_DIM)))
            for t in NODE_TYPES}


def minority_class(g: HeteroGraph) -> str:
    counts = {c: 0 for c in CLASSES}
    for cls in g.labels.values():
        counts[cls] += 1
    # ties go to 'participant', the operationally rare class
    return min(CLASSES, key=lambda c: (counts[c], c != "participant"))


@dataclass
class AugmentedGraph:
    base: HeteroGraph
    graph: HeteroGraph
    synthetic_ids: list
    origin_of: dict                      # synthetic id -> origin id
    provenance: dict = field(default_factory=dict)  # synthetic id -> record

    @property
    def synthetic_edges(self):
        base_edges = set(self.base.edges)
        return [e for e in self.graph.edges if e not in base_edges]


def generate_synthetic_user(client, cache: ResponseCache, t: UserText, retries: int = 3):
    """One LLM round-trip producing a synthetic UserText, with provenance."""
    context = render_node_prompt(t)
    return cached_call(client, cache, "node", NODE_INSTRUCTION, context,
                       UserText.parse, retries=retries)


def select_edges(client, cache: ResponseCache, original: UserText, synthetic: UserText,
                 neighbor_type: str, neighbor_texts, retries: int = 3):
    """Ask the LLM which of the candidate neighbors the synthetic user should
    connect to; returns (1-based indices, exchanges)."""
    if not neighbor_texts:
        raise ValueError("select_edges requires at least one candidate neighbor")
    context = render_edge_prompt(original, synthetic, neighbor_type, neighbor_texts)
    return cached_call(client, cache, "edge", EDGE_INSTRUCTION, context,
                       lambda text: parse_selected_neighbors(text, len(neighbor_texts)),
                       retries=retries)


def _augment_one(g: HeteroGraph, origin: str, client, cache, retries: int):
    original = UserText.parse(g.node_text[origin])
    synthetic, exchanges = generate_synthetic_user(client, cache, original, retries=retries)
    syn_id = f"{origin}#syn"
    edges = []
    for ntype in ("user", "tweet", "keyword"):
        candidates = typed_neighbors(g, origin, ntype)
        if ntype == "user":
            candidates = [c for c in candidates if c != origin]
        if not candidates:
            continue
        texts = [g.node_text[c] for c in candidates]
        picked, edge_exchanges = select_edges(client, cache, original, synthetic,
                                              ntype, texts, retries=retries)
        exchanges.extend(edge_exchanges)
        for idx in picked:
            edges.append((syn_id, candidates[idx - 1], SYNTH_RELATION[ntype]))
    record = {
        "origin": origin,
        "text": synthetic.render(),
        "edges": edges,
        "exchanges": exchanges,
    }
    return syn_id, record


def augment_graph(g: HeteroGraph, split: SplitAssignment, client, embedder,
                  cache: ResponseCache = None, retries: int = 3,
                  parallelism: int = 4) -> AugmentedGraph:
    """One synthetic user per training-split minority node; edges restricted
    to the origin's typed neighbors; the base graph is never modified."""
    cache = cache if cache is not None else ResponseCache(None)
    minority = minority_class(g)
    origins = sorted(v for v in split.train if g.labels.get(v) == minority)

    records = {}
    if origins:
        with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
            for syn_id, record in pool.map(
                    lambda o: _augment_one(g, o, client, cache, retries), origins):
                records[syn_id] = record

    nodes = [(nid, g.node_type[nid], g.node_text[nid]) for nid in g.node_type]
    edges = list(g.edges)
    labels = dict(g.labels)
    syn_ids = sorted(records)  # merge in ascending origin-node-id order
    origin_of = {}
    for syn_id in syn_ids:
        rec = records[syn_id]
        nodes.append((syn_id, "user", rec["text"]))
        edges.extend(rec["edges"])
        labels[syn_id] = minority
        origin_of[syn_id] = rec["origin"]
    merged = build_graph(nodes, edges, labels)
    return AugmentedGraph(base=g, graph=merged, synthetic_ids=syn_ids,
                          origin_of=origin_of, provenance=records)


def save_augmented(aug: AugmentedGraph, graph_path, provenance_path) -> None:
    import json

    hetgraph.save_graph(aug.graph, graph_path)
    with open(provenance_path, "w", encoding="utf-8") as f:
        json.dump({"origin_of": aug.origin_of, "records": aug.provenance},
                  f, sort_keys=True, indent=1)


def load_augmented(base: HeteroGraph, graph_path, provenance_path) -> AugmentedGraph:
    import json

    merged = hetgraph.load_graph(graph_path)
    with open(provenance_path, encoding="utf-8") as f:
        prov = json.load(f)
    syn_ids = sorted(prov["origin_of"])
    return AugmentedGraph(base=base, graph=merged, synthetic_ids=syn_ids,
                          origin_of=prov["origin_of"], provenance=prov["records"])
