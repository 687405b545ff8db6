"""Prompt mechanisms for adapting the frozen pre-trained encoder.

Three cooperating prompts: class-specific feature tokens added to raw node
features (node prompt), set-pooled meta-path neighborhoods added to node
embeddings (structure prompt), and trainable class-prototype tokens that turn
classification into prototype similarity (with an orthogonality constraint).

The set pooler is a single-seed set transformer: PMA(S) = LN(Q + MLP(Q)) with
Q = LN(psi + MH(psi, Y, Y)).  Because the query seed psi is shared across all
sets, each element's attention score is set-independent, so pooling many
neighborhoods at once reduces to one sparse masked softmax.
"""

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .encoder import semantic_attention
from .hetgraph import CLASSES, NODE_TYPES
from .utils import derive_seed

TARGET_TYPE = "user"


@dataclass(frozen=True)
class TuneConfig:
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-4
    temperature: float = 0.5
    delta: float = 5e-2        # structure-mix weight
    lam: float = 1e-3          # orthogonality trade-off
    tokens: int = 10           # K, tokens per bank
    heads: int = 4
    mix: str = "project-then-mix"   # or "mix-then-project"
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.delta < 0 or self.lam < 0:
            raise ValueError("delta and lam must be non-negative")
        if self.tokens < 1 or self.heads < 1:
            raise ValueError("tokens and heads must be positive")
        if self.mix not in ("project-then-mix", "mix-then-project"):
            raise ValueError(f"unknown mix mode {self.mix!r}")


# -- set pooling --------------------------------------------------------------

def init_pma_params(dim, heads, seed, prefix):
    if dim % heads:
        raise ValueError(f"dim {dim} not divisible by {heads} heads")
    dm = dim // heads
    p = {}

    def mk(name, shape, scheme="xavier-uniform"):
        p[f"{prefix}/{name}"] = nc.init_params(shape, scheme, derive_seed(seed, prefix, name))

    mk("psi", (1, dim))
    for j in range(heads):
        mk(f"Wk{j}", (dim, dm))
        mk(f"Wv{j}", (dim, dm))
    mk("mlp/W1", (dim, dim))
    mk("mlp/b1", (1, dim), "zeros")
    mk("mlp/W2", (dim, dim))
    mk("mlp/b2", (1, dim), "zeros")
    for ln in ("ln1", "ln2"):
        p[f"{prefix}/{ln}/g"] = nc.Tensor(np.ones((1, dim)), requires_grad=True)
        mk(f"{ln}/b", (1, dim), "zeros")
    return p


def _pma_mlp(q, params, prefix):
    h = nc.tanh(nc.add_bias(nc.matmul(q, params[f"{prefix}/mlp/W1"]),
                            params[f"{prefix}/mlp/b1"]))
    return nc.add_bias(nc.matmul(h, params[f"{prefix}/mlp/W2"]), params[f"{prefix}/mlp/b2"])


def _pma_output(mh, params, prefix):
    q = nc.layer_norm(nc.add_bias(mh, params[f"{prefix}/psi"]),
                      params[f"{prefix}/ln1/g"], params[f"{prefix}/ln1/b"])
    return nc.layer_norm(nc.add(q, _pma_mlp(q, params, prefix)),
                         params[f"{prefix}/ln2/g"], params[f"{prefix}/ln2/b"])


def pma_pool(y, params, prefix, heads):
    """Pool one set of row vectors into a single vector; empty set -> zeros."""
    psi = params[f"{prefix}/psi"]
    dim = psi.shape[1]
    if y is None or y.shape[0] == 0:
        return nc.Tensor(np.zeros((1, dim)))
    if not isinstance(y, nc.Tensor):
        y = nc.Tensor(np.atleast_2d(y))
    dm = dim // heads
    parts = []
    for j in range(heads):
        psi_j = nc.slice_cols(psi, j * dm, (j + 1) * dm)
        k = nc.matmul(y, params[f"{prefix}/Wk{j}"])
        att = nc.softmax_rows(nc.matmul(psi_j, nc.transpose(k)))
        parts.append(nc.matmul(att, nc.matmul(y, params[f"{prefix}/Wv{j}"])))
    return _pma_output(nc.concat(parts, axis=1), params, prefix)


def pma_pool_branches(branches, params, prefix, heads):
    """Pool, for every row i at once, the set {branch[i] : branch in branches}."""
    psi = params[f"{prefix}/psi"]
    dm = psi.shape[1] // heads
    parts = []
    for j in range(heads):
        psi_t = nc.transpose(nc.slice_cols(psi, j * dm, (j + 1) * dm))
        scores = [nc.matmul(nc.matmul(b, params[f"{prefix}/Wk{j}"]), psi_t)
                  for b in branches]
        w = nc.softmax_rows(nc.concat(scores, axis=1))
        head = None
        for c, b in enumerate(branches):
            term = nc.mul_cols(nc.matmul(b, params[f"{prefix}/Wv{j}"]),
                               nc.slice_cols(w, c, c + 1))
            head = term if head is None else nc.add(head, term)
        parts.append(head)
    return _pma_output(nc.concat(parts, axis=1), params, prefix)


def pma_pool_masked(y, mask, params, prefix, heads):
    """Pool, for every row of `mask` at once, the set of y-rows it selects.

    Scores depend only on the element, so softmax within each set is one
    sparse aggregation of exp-scores.  Rows selecting nothing come out zero.
    """
    psi = params[f"{prefix}/psi"]
    dm = psi.shape[1] // heads
    parts = []
    for j in range(heads):
        psi_t = nc.transpose(nc.slice_cols(psi, j * dm, (j + 1) * dm))
        s = nc.matmul(nc.matmul(y, params[f"{prefix}/Wk{j}"]), psi_t)
        # constant global shift keeps exp in range without changing any softmax
        s = nc.add(s, nc.Tensor(np.full(s.shape, -float(s.data.max()))))
        e = nc.exp(s)
        num = nc.spmm(mask, nc.mul_cols(nc.matmul(y, params[f"{prefix}/Wv{j}"]), e))
        parts.append(nc.div_safe_cols(num, nc.spmm(mask, e)))
    out = _pma_output(nc.concat(parts, axis=1), params, prefix)
    nonempty = (np.asarray(mask.sum(axis=1)) > 0).astype(float)
    return nc.mul_cols(out, nc.Tensor(nonempty))


# -- node prompt ---------------------------------------------------------------

def init_node_prompt_params(feature_dims, config: TuneConfig, seed):
    """Token banks per class (target type) and per non-target type, plus the
    pooler that merges the per-class combinations."""
    p = {}
    dt = feature_dims[TARGET_TYPE]
    # Token banks start near zero so the prompted features begin close to the
    # raw ones; the banks move away from zero as tuning proceeds.
    for cls in CLASSES:
        tok = nc.init_params((config.tokens, dt), "xavier-uniform",
                             derive_seed(seed, "tok", cls))
        p[f"tok/class/{cls}"] = nc.Tensor(0.01 * tok.data, requires_grad=True)
    for t in NODE_TYPES:
        if t == TARGET_TYPE:
            continue
        tok = nc.init_params((config.tokens, feature_dims[t]), "xavier-uniform",
                             derive_seed(seed, "tok", t))
        p[f"tok/type/{t}"] = nc.Tensor(0.01 * tok.data, requires_grad=True)
    p.update(init_pma_params(dt, config.heads, derive_seed(seed, "npma"), "npma"))
    # Zero output gain makes the pooled correction vanish at initialisation,
    # so tuning starts from the unprompted encoder and learns the residual.
    p["npma/ln2/g"] = nc.Tensor(np.zeros((1, dt)), requires_grad=True)
    return p


def attention_combine(x, tokens):
    """Softmax over tanh(f_k . x) across tokens; returns the weighted token sum.

    Batched: x is (n, d) and the result is (n, d), one combination per row.
    """
    if tokens.shape[0] == 0:
        raise ValueError("empty token bank")
    w = nc.softmax_rows(nc.tanh(nc.matmul(x, nc.transpose(tokens))))
    return nc.matmul(w, tokens)


def apply_node_prompt(features, params, config: TuneConfig):
    """Additive feature prompts: per-class token pools merged by PMA for the
    target type, a single attention combination for every other type."""
    out = {}
    for t in NODE_TYPES:
        x = features[t] if isinstance(features[t], nc.Tensor) else nc.Tensor(features[t])
        if t == TARGET_TYPE:
            branches = [attention_combine(x, params[f"tok/class/{cls}"])
                        for cls in CLASSES]
            pooled = pma_pool_branches(branches, params, "npma", config.heads)
            out[t] = nc.add(x, pooled)
        else:
            key = f"tok/type/{t}"
            if key not in params:
                raise ValueError(f"missing token bank for node type {t!r}")
            out[t] = nc.add(x, attention_combine(x, params[key]))
    return out


# -- structure prompt ----------------------------------------------------------

def init_structure_prompt_params(dim, config: TuneConfig, seed):
    p = init_pma_params(dim, config.heads, derive_seed(seed, "spma"), "spma")
    # As with the node prompt, the pooled structure token starts at zero so
    # the mixed embedding begins as the plain projection of Z.
    p["spma/ln2/g"] = nc.Tensor(np.zeros((1, dim)), requires_grad=True)
    for name, shape, scheme in (("W", (dim, dim), "xavier-uniform"),
                                ("b", (1, dim), "zeros"),
                                ("q", (dim, 1), "xavier-uniform")):
        p[f"sm/att/{name}"] = nc.init_params(shape, scheme, derive_seed(seed, "sm", name))
    return p


def structure_prompt(z, mp_masks, params, config: TuneConfig):
    """Pooled meta-path neighborhoods fused across meta-paths.

    mp_masks: meta-path name -> boolean user-user CSR (no self-loops).  Users
    isolated on a path contribute a zero branch there; users isolated on all
    paths end up with an all-zero structure token.
    """
    branches = [pma_pool_masked(z, mp_masks[p], params, "spma", config.heads)
                for p in sorted(mp_masks)]
    fused, _ = semantic_attention(branches, params, "sm/att")
    return fused


# -- prototypes and the tuning objective ----------------------------------------

def init_prototypes(z, labels):
    """Class-mean initialization: row 0 = participant mean, row 1 = benign mean.

    z: (n, d) embeddings of the labeled nodes; labels: matching class names.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = list(labels)
    if len(labels) != z.shape[0]:
        raise ValueError("labels must match embedding rows")
    rows = []
    for cls in CLASSES:
        members = [i for i, c in enumerate(labels) if c == cls]
        if not members:
            raise ValueError(f"no labeled nodes of class {cls!r}")
        rows.append(z[members].mean(axis=0))
    return nc.Tensor(np.stack(rows), requires_grad=True)


def orthogonality_loss(c):
    """|| C C^T - I ||_F^2 — zero exactly when prototype rows are orthonormal."""
    gram = nc.matmul(c, nc.transpose(c))
    eye = nc.Tensor(np.eye(c.shape[0]))
    return nc.frobenius_sq(nc.add(gram, nc.neg(eye)))


def class_indices(labels):
    return np.array([CLASSES.index(c) for c in labels], dtype=int)


def tuning_loss(z_prime, c_proj, c_raw, label_idx, temperature, lam):
    """Prototype-similarity log-softmax classification plus the orthogonality
    penalty on the raw prototype tokens."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    n = z_prime.shape[0]
    sim = nc.cosine_matrix(z_prime, c_proj)
    probs = nc.softmax_rows(nc.scale(sim, 1.0 / temperature))
    picked = nc.take_pairs(probs, list(range(n)), list(label_idx))
    ce = nc.neg(nc.mean_all(nc.log(picked)))
    if lam == 0.0:
        return ce
    return nc.add(ce, nc.scale(orthogonality_loss(c_raw), lam))


def predict(z_prime, c):
    """Cosine-nearest prototype per row; exact tie goes to the minority class."""
    z = z_prime.data if isinstance(z_prime, nc.Tensor) else np.asarray(z_prime, float)
    cd = c.data if isinstance(c, nc.Tensor) else np.asarray(c, float)
    norms = np.linalg.norm(z, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm embedding: cosine similarity undefined")
    sim = (z / norms[:, None]) @ (cd / np.linalg.norm(cd, axis=1)[:, None]).T
    # argmax with ties resolved toward row 0 (participant)
    return [CLASSES[0] if sim[i, 0] >= sim[i, 1] else CLASSES[1]
            for i in range(z.shape[0])]


# -- projection and the tuning loop ----------------------------------------------

def init_projection_params(dim, seed):
    # Near-identity initialisation: tanh is close to linear on small inputs,
    # so 10 * tanh(0.1 * x) ~ x and tuning starts from the raw embedding
    # geometry instead of a random distortion of it.  Small seeded noise on
    # the weights breaks symmetry between coordinates.
    n1 = nc.init_params((dim, dim), "xavier-uniform", derive_seed(seed, "proj", 1))
    n2 = nc.init_params((dim, dim), "xavier-uniform", derive_seed(seed, "proj", 2))
    eye = np.eye(dim)
    return {
        "proj/W1": nc.Tensor(0.1 * eye + 0.01 * n1.data, requires_grad=True),
        "proj/b1": nc.init_params((1, dim), "zeros", 0),
        "proj/W2": nc.Tensor(10.0 * eye + 0.01 * n2.data, requires_grad=True),
        "proj/b2": nc.init_params((1, dim), "zeros", 0),
    }


def project(x, params):
    h = nc.tanh(nc.add_bias(nc.matmul(x, params["proj/W1"]), params["proj/b1"]))
    return nc.add_bias(nc.matmul(h, params["proj/W2"]), params["proj/b2"])


def mixed_embeddings(z, s, prompt_params, config: TuneConfig):
    """Final node embeddings: projected Z with the structure token mixed in."""
    if config.mix == "project-then-mix":
        return nc.add(project(z, prompt_params),
                      nc.scale(project(s, prompt_params), config.delta))
    return project(nc.add(z, nc.scale(s, config.delta)), prompt_params)


# -- prompt tuning -------------------------------------------------------------


class TuneError(RuntimeError):
    pass


def init_prompt_params(feature_dims, dim, config: TuneConfig, seed,
                       node_prompt=True, head="prototype"):
    """All trainable prompt-tuning tensors except the prototypes (which need
    embeddings to initialize; see init_prototypes)."""
    p = {}
    if node_prompt:
        p.update(init_node_prompt_params(feature_dims, config, derive_seed(seed, "node")))
    if config.delta > 0:
        p.update(init_structure_prompt_params(dim, config, derive_seed(seed, "struct")))
    p.update(init_projection_params(dim, derive_seed(seed, "projmlp")))
    if head == "linear":
        p["head/W"] = nc.init_params((dim, len(CLASSES)), "xavier-uniform",
                                     derive_seed(seed, "head"))
        p["head/b"] = nc.init_params((1, len(CLASSES)), "zeros", 0)
    elif head != "prototype":
        raise ValueError(f"unknown head {head!r}")
    return p


def _linear_loss(z_prime, params, label_idx, temperature):
    logits = nc.add_bias(nc.matmul(z_prime, params["head/W"]), params["head/b"])
    probs = nc.softmax_rows(nc.scale(logits, 1.0 / temperature))
    picked = nc.take_pairs(probs, list(range(z_prime.shape[0])), list(label_idx))
    return nc.neg(nc.mean_all(nc.log(picked)))


def _linear_predict(z_prime, params):
    logits = z_prime.data @ params["head/W"].data + params["head/b"].data
    return [CLASSES[0] if logits[i, 0] >= logits[i, 1] else CLASSES[1]
            for i in range(logits.shape[0])]


def run_prompt_tune(inputs, mp_masks, features, enc_params, enc_config,
                    train_idx, train_labels, val_idx, val_labels,
                    config: TuneConfig, node_prompt=True, head="prototype",
                    use_projection=True):
    """Train the prompt parameters against the frozen encoder.

    inputs/mp_masks/features describe the (augmented) graph; train_idx /
    val_idx index user rows.  Per-epoch validation Macro-F1 drives model
    selection; the best-validation state is restored before returning
    (params, trace).
    """
    from .encoder import encode
    from .evalkit import macro_f1

    train_idx = list(train_idx)
    label_idx = class_indices(train_labels)
    params = init_prompt_params({t: features[t].shape[1] for t in NODE_TYPES},
                                enc_config.dim, config, config.seed,
                                node_prompt=node_prompt, head=head)

    def embeddings():
        feats = apply_node_prompt(features, params, config) if node_prompt else features
        z_mp, _ = encode(inputs, feats, enc_params, enc_config, training=False)
        return z_mp

    z0 = embeddings()
    if head == "prototype":
        params["proto/C"] = init_prototypes(z0.data[train_idx],
                                            train_labels)
    static_z = None if node_prompt else nc.Tensor(z0.data)  # encoder output is fixed

    opt = nc.Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    trace, best = [], None
    for epoch in range(config.epochs + 1):   # final pass evaluates the last step
        z = static_z if static_z is not None else embeddings()
        if config.delta > 0:
            z_prime = mixed_embeddings(z, structure_prompt(z, mp_masks, params, config),
                                       params, config)
        else:
            z_prime = project(z, params) if use_projection else z
        z_train = nc.gather_rows(z_prime, train_idx)
        if head == "prototype":
            c_proj = project(params["proto/C"], params) if use_projection \
                else params["proto/C"]
            loss = tuning_loss(z_train, c_proj, params["proto/C"], label_idx,
                               config.temperature, config.lam)
            val_pred = predict(z_prime.data[list(val_idx)], c_proj)
        else:
            loss = _linear_loss(z_train, params, label_idx, config.temperature)
            val_pred = _linear_predict(nc.Tensor(z_prime.data[list(val_idx)]), params)
        value = float(loss.data[0, 0])
        if not np.isfinite(value):
            raise TuneError(f"non-finite loss at epoch {epoch}")
        val_f1 = macro_f1(list(val_labels), val_pred) if len(val_idx) else 0.0
        trace.append({"epoch": epoch, "loss": value, "val_macro_f1": val_f1})
        if best is None or val_f1 > best[0]:
            best = (val_f1, epoch, {k: v.data.copy() for k, v in params.items()})
        if epoch == config.epochs:
            break
        opt.zero_grad()
        nc.backward(loss)
        opt.step()
    for k, v in best[2].items():
        params[k].data[:] = v
    return params, trace


def evaluate_prompt_state(params, inputs, mp_masks, features, enc_params,
                          enc_config, idx, config: TuneConfig,
                          node_prompt=True, head="prototype", use_projection=True):
    """Predictions for the user rows in idx under a tuned prompt state."""
    from .encoder import encode

    feats = apply_node_prompt(features, params, config) if node_prompt else features
    z, _ = encode(inputs, feats, enc_params, enc_config, training=False)
    if config.delta > 0:
        z_prime = mixed_embeddings(z, structure_prompt(z, mp_masks, params, config),
                                   params, config)
    else:
        z_prime = project(z, params) if use_projection else z
    rows = z_prime.data[list(idx)]
    if head == "prototype":
        c_proj = project(params["proto/C"], params) if use_projection \
            else params["proto/C"]
        return predict(rows, c_proj)
    return _linear_predict(nc.Tensor(rows), params)


def save_prompt_state(path, params, encoder_hash, meta=None):
    full = dict(meta or {})
    full["encoder_hash"] = encoder_hash
    nc.save_checkpoint(path, {k: v.data for k, v in params.items()}, full)


def load_prompt_state(path, expected_encoder_hash):
    meta, arrays = nc.load_checkpoint(path)
    if meta.get("encoder_hash") != expected_encoder_hash:
        raise ValueError("prompt state was tuned against a different encoder "
                         f"(hash {meta.get('encoder_hash')!r})")
    return meta, {k: nc.Tensor(v, requires_grad=True) for k, v in arrays.items()}
