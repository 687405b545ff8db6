"""Cross-view contrastive pre-training of the dual-view encoder.

Full-batch: each epoch encodes both views of every user node and pulls the
two embeddings of the same node together against all cross pairs with a
temperature-scaled contrastive loss.  Pre-training always runs on the
original graph, never on the augmented one.
"""

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .encoder import EncoderConfig, EncoderInputs, encode
from .utils import derive_seed


class PretrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 500
    lr: float = 5e-3
    weight_decay: float = 1e-6
    temperature: float = 0.5
    log_softmax: bool = True   # False: raw negative softmax ratio (no log)
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def contrastive_loss(z_mp, z_sc, temperature, log_softmax=True):
    """Temperature-scaled contrastive loss over cosine similarities.

    delta[i, j] = cosine(z_mp[i], z_sc[j]); the positive pair is the diagonal.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if z_mp.shape != z_sc.shape:
        raise ValueError(f"view shape mismatch {z_mp.shape} vs {z_sc.shape}")
    n = z_mp.shape[0]
    sim = nc.cosine_matrix(z_mp, z_sc)          # raises on zero-norm rows
    probs = nc.softmax_rows(nc.scale(sim, 1.0 / temperature))
    diag = nc.take_pairs(probs, list(range(n)), list(range(n)))
    if log_softmax:
        return nc.neg(nc.mean_all(nc.log(diag)))
    return nc.neg(nc.mean_all(diag))


def run_pretrain(inputs: EncoderInputs, features: dict, params: dict,
                 enc_config: EncoderConfig, config: PretrainConfig):
    """Train encoder params in place; returns (params, loss trace list)."""
    opt = nc.Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    trace = []
    for epoch in range(config.epochs):
        key = derive_seed(config.seed, "pretrain-drop", epoch)
        z_mp, z_sc = encode(inputs, features, params, enc_config,
                            training=True, drop_key=key)
        loss = contrastive_loss(z_mp, z_sc, config.temperature, config.log_softmax)
        value = float(loss.data[0, 0])
        if not np.isfinite(value):
            raise PretrainError(f"non-finite loss at epoch {epoch}")
        trace.append(value)
        opt.zero_grad()
        nc.backward(loss)
        opt.step()
    return params, trace


def embed_users(inputs: EncoderInputs, features: dict, params: dict,
                enc_config: EncoderConfig) -> np.ndarray:
    """Eval-mode meta-path-view embeddings Z used by every downstream stage."""
    z_mp, _ = encode(inputs, features, params, enc_config, training=False)
    return z_mp.data.copy()


def save_trace(trace, path):
    with open(path, "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{v!r}\n")
