"""Dual-view heterogeneous graph encoder.

Two complementary views of each user node: a meta-path view (per-path GCN
stacks fused by semantic attention) and a network-schema view (attention
aggregation over typed one-hop neighborhoods fused by type-level attention).
Everything is expressed through the numcore op set so gradients flow end to
end during contrastive pre-training.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import numcore as nc
from .hetgraph import (HeteroGraph, META_PATHS, NODE_TYPES, bipartite_adjacency,
                       metapath_adjacency, user_relation_adjacency)
from .utils import derive_seed

META_PATH_NAMES = tuple(sorted(META_PATHS))   # deterministic branch order

# typed one-hop neighborhoods of a user, grouped by neighbor type
SCHEMA_RELATIONS = {
    "user": ("R1",),
    "tweet": ("R2", "R3"),
    "keyword": ("R4",),
}


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 256
    layers: int = 3
    dropout: float = 0.3
    attn_dim: int = 64
    normalize: str = "layer"   # "layer" | "none"

    def __post_init__(self):
        if self.dim < 1 or self.layers < 1 or self.attn_dim < 1:
            raise ValueError("dim, layers and attn_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.normalize not in ("layer", "none"):
            raise ValueError(f"unknown normalize mode {self.normalize!r}")


def normalize_adjacency(adj: sp.spmatrix) -> sp.csr_matrix:
    """Symmetric GCN normalization with self-loops: D^{-1/2} (A+I) D^{-1/2}."""
    a = sp.csr_matrix(adj, dtype=np.float64)
    a = a + sp.eye(a.shape[0], format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return sp.csr_matrix(d @ a @ d)


@dataclass(frozen=True)
class EncoderInputs:
    """Graph-derived constants the encoder consumes (no gradients flow here)."""

    mp_adj: dict      # meta-path name -> normalized user-user CSR
    schema_masks: dict  # neighbor type -> (N_users, N_type) binary CSR


def build_encoder_inputs(g: HeteroGraph) -> EncoderInputs:
    if g.num("user") == 0:
        raise ValueError("graph has no user nodes to encode")
    mp_adj = {p: normalize_adjacency(metapath_adjacency(g, p)) for p in META_PATH_NAMES}
    masks = {
        "user": user_relation_adjacency(g),
        "tweet": bipartite_adjacency(g, "user", "tweet", SCHEMA_RELATIONS["tweet"]),
        "keyword": bipartite_adjacency(g, "user", "keyword", SCHEMA_RELATIONS["keyword"]),
    }
    return EncoderInputs(mp_adj=mp_adj, schema_masks=masks)


def init_encoder_params(feature_dims: dict, config: EncoderConfig, seed: int) -> dict:
    """Parameter dict (name -> Tensor). Feature dims map node type -> d_A."""
    missing = set(NODE_TYPES) - set(feature_dims)
    if missing:
        raise ValueError(f"missing feature dims for {sorted(missing)}")
    d, da = config.dim, config.attn_dim
    params = {}

    def mk(name, shape, scheme="xavier-uniform"):
        params[name] = nc.init_params(shape, scheme, derive_seed(seed, "enc", name))

    for t in NODE_TYPES:
        mk(f"proj/{t}/W", (feature_dims[t], d))
        mk(f"proj/{t}/b", (1, d), "zeros")
    for p in META_PATH_NAMES:
        for layer in range(config.layers):
            mk(f"mp/{p}/layer{layer}/W", (d, d))
    for prefix in ("mp/att", "sc/att"):
        mk(f"{prefix}/W", (d, da))
        mk(f"{prefix}/b", (1, da), "zeros")
        mk(f"{prefix}/q", (da, 1))
    for t in NODE_TYPES:
        mk(f"sc/{t}/a", (d, 1))
    return params


def project_features(features: dict, params: dict) -> dict:
    """Type-specific linear maps into the common hidden dimension."""
    out = {}
    for t in NODE_TYPES:
        x = features[t] if isinstance(features[t], nc.Tensor) else nc.Tensor(features[t])
        w = params[f"proj/{t}/W"]
        if x.shape[1] != w.shape[0]:
            raise ValueError(
                f"{t} features have dim {x.shape[1]}, projection expects {w.shape[0]}")
        out[t] = nc.add_bias(nc.matmul(x, w), params[f"proj/{t}/b"])
    return out


def semantic_attention(branches, params, prefix):
    """Fuse equally-shaped branch embeddings with learned global attention.

    Each branch gets one score: the mean over nodes of tanh(H W + b) q.
    Softmax over branches yields convex mixing weights.  Returns the fused
    matrix and the weights as a (1, P) tensor.
    """
    w, b, q = params[f"{prefix}/W"], params[f"{prefix}/b"], params[f"{prefix}/q"]
    scores = [nc.mean_all(nc.matmul(nc.tanh(nc.add_bias(nc.matmul(h, w), b)), q))
              for h in branches]
    alphas = nc.softmax_rows(nc.concat(scores, axis=1))
    fused = None
    for k, h in enumerate(branches):
        term = nc.scale_by(h, nc.slice_cols(alphas, k, k + 1))
        fused = term if fused is None else nc.add(fused, term)
    return fused, alphas


def encode_metapath_view(inputs: EncoderInputs, h_user, params, config,
                         training=False, drop_key=0):
    """Per-meta-path GCN stacks fused by semantic attention."""
    branches = []
    for p in META_PATH_NAMES:
        adj = inputs.mp_adj[p]
        z = h_user
        for layer in range(config.layers):
            z = nc.dropout(z, config.dropout, derive_seed(drop_key, "mp", p, layer), training)
            z = nc.spmm(adj, nc.matmul(z, params[f"mp/{p}/layer{layer}/W"]))
            if layer < config.layers - 1:
                z = nc.elu(z)
        branches.append(z)
    fused, alphas = semantic_attention(branches, params, "mp/att")
    if config.normalize == "layer":
        fused = nc.layer_norm(fused)
    return fused, alphas


def encode_schema_view(inputs: EncoderInputs, h_by_type, params, config,
                       training=False, drop_key=0):
    """Typed-neighborhood attention aggregation fused by type-level attention.

    Neighbor scores come from the neighbor embeddings alone, so the softmax
    over each user's typed neighborhood reduces to one sparse aggregation of
    exp-scores; users with no neighbors of a type contribute a zero vector.
    """
    aggregates = []
    for t in NODE_TYPES:
        h = nc.dropout(h_by_type[t], config.dropout,
                       derive_seed(drop_key, "sc", t), training)
        e = nc.exp(nc.matmul(nc.tanh(h), params[f"sc/{t}/a"]))
        mask = inputs.schema_masks[t]
        num = nc.spmm(mask, nc.mul_cols(h, e))
        den = nc.spmm(mask, e)
        aggregates.append(nc.div_safe_cols(num, den))
    fused, alphas = semantic_attention(aggregates, params, "sc/att")
    if config.normalize == "layer":
        fused = nc.layer_norm(fused)
    return fused, alphas


def encode(inputs: EncoderInputs, features: dict, params: dict, config: EncoderConfig,
           training=False, drop_key=0):
    """Run both views; returns (z_mp, z_sc) user embeddings."""
    h = project_features(features, params)
    z_mp, _ = encode_metapath_view(inputs, h["user"], params, config, training, drop_key)
    z_sc, _ = encode_schema_view(inputs, h, params, config, training, drop_key)
    return z_mp, z_sc
