"""Staged pipeline orchestration: synth -> pretrain -> augment -> tune -> eval.

Each stage writes its artifact plus a manifest recording the config hash, the
SHA-256 of every input and output, and the stage seed.  Downstream stages
refuse to run when an upstream artifact is missing (ordering error) or no
longer matches its manifest (stale-hash error), so every report is traceable
to exact bytes.  All randomness flows from one root seed expanded per stage.
"""

import json
import os

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from . import evalkit, synthgen
from . import numcore as nc
from .augment import (HashingTextEmbedder, augment_graph, embed_graph_features,
                      load_augmented, save_augmented)
from .encoder import EncoderConfig, build_encoder_inputs, init_encoder_params
from .hetgraph import (META_PATHS, NODE_TYPES, HeteroGraph, load_graph,
                       metapath_adjacency, save_graph, stratified_split)
from .llmclient import HttpLlmClient, MockLlmClient, ResponseCache
from .pretrain import PretrainConfig, embed_users, run_pretrain, save_trace
from .promptkit import (TuneConfig, class_indices, evaluate_prompt_state,
                        load_prompt_state, run_prompt_tune, save_prompt_state)
from .utils import derive_seed, file_sha256, stable_hash


class PipelineError(RuntimeError):
    pass


class OrderingError(PipelineError):
    """A required upstream stage has not produced its artifact yet."""


class StaleInputError(PipelineError):
    """An input artifact changed since the manifest that produced it."""


# -- config ---------------------------------------------------------------------

# per-split hyperparameter presets (label fraction -> model/tune settings)
SPLIT_PRESETS = {
    0.1: dict(dim=256, layers=3, normalize="layer", lr=1e-3, weight_decay=1e-4,
              dropout=0.1, heads=4, tokens=10, delta=5e-2, lam=1e-3),
    0.2: dict(dim=512, layers=2, normalize="layer", lr=1e-3, weight_decay=1e-5,
              dropout=0.5, heads=1, tokens=15, delta=5e-2, lam=1e-3),
    0.4: dict(dim=512, layers=3, normalize="layer", lr=1e-4, weight_decay=1e-5,
              dropout=0.5, heads=1, tokens=10, delta=5e-2, lam=1e-3),
}


class SynthSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    n_users: int = 200
    minority_fraction: float = 0.119
    homophily: float = 0.8
    contamination: float = 0.15
    stealth: float = 0.0
    tweets_per_user: tuple = (1, 4)
    follows_per_user: int = 3
    engagements_per_user: int = 2


class ModelSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dim: int = 256
    layers: int = 3
    normalize: str = "layer"
    dropout: float = 0.1
    heads: int = 4
    attn_dim: int = 64


class PretrainSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    epochs: int = 500
    lr: float = 1e-3
    weight_decay: float = 1e-4
    temperature: float = 0.5
    log_softmax: bool = True


class AugmentSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mock_llm: bool = False
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "LLM_API_KEY"


class TuneSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-4
    temperature: float = 0.5
    delta: float = 5e-2
    lam: float = 1e-3
    tokens: int = 10
    mix: str = "project-then-mix"


class SplitSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    train_frac: float = 0.1
    val_frac: float = 0.1

    @field_validator("train_frac", "val_frac")
    @classmethod
    def _frac_range(cls, v):
        if not 0 < v < 1:
            raise ValueError("split fractions must be in (0, 1)")
        return v


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    seed: int = 0
    variants: list = Field(default_factory=lambda: list(evalkit.ABLATION_VARIANTS))
    synth: SynthSection = Field(default_factory=SynthSection)
    model: ModelSection = Field(default_factory=ModelSection)
    pretrain: PretrainSection = Field(default_factory=PretrainSection)
    augment: AugmentSection = Field(default_factory=AugmentSection)
    tune: TuneSection = Field(default_factory=TuneSection)
    split: SplitSection = Field(default_factory=SplitSection)

    def apply_split_preset(self, train_frac):
        """Table-derived defaults for the 10%/20%/40% label settings."""
        preset = SPLIT_PRESETS.get(round(float(train_frac), 2))
        if preset is None:
            raise ValueError(f"no preset for split {train_frac}; "
                             f"choose one of {sorted(SPLIT_PRESETS)}")
        cfg = self.model_copy(deep=True)
        cfg.split.train_frac = train_frac
        cfg.model.dim = preset["dim"]
        cfg.model.layers = preset["layers"]
        cfg.model.normalize = preset["normalize"]
        cfg.model.dropout = preset["dropout"]
        cfg.model.heads = preset["heads"]
        cfg.pretrain.lr = preset["lr"]
        cfg.pretrain.weight_decay = preset["weight_decay"]
        cfg.tune.lr = preset["lr"]
        cfg.tune.weight_decay = preset["weight_decay"]
        cfg.tune.tokens = preset["tokens"]
        cfg.tune.delta = preset["delta"]
        cfg.tune.lam = preset["lam"]
        return cfg


def load_config(path=None, overrides=None):
    data = {}
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    cfg = RunConfig.model_validate(data)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if key:
            setattr(getattr(cfg, section), key, value)
        else:
            setattr(cfg, section, value)
    return RunConfig.model_validate(cfg.model_dump())


def encoder_config(cfg: RunConfig) -> EncoderConfig:
    return EncoderConfig(dim=cfg.model.dim, layers=cfg.model.layers,
                         dropout=cfg.model.dropout, attn_dim=cfg.model.attn_dim,
                         normalize=cfg.model.normalize)


def tune_config(cfg: RunConfig, seed=None, **kw) -> TuneConfig:
    t = cfg.tune
    base = dict(epochs=t.epochs, lr=t.lr, weight_decay=t.weight_decay,
                temperature=t.temperature, delta=t.delta, lam=t.lam,
                tokens=t.tokens, heads=cfg.model.heads, mix=t.mix,
                seed=derive_seed(cfg.seed, "tune") if seed is None else seed)
    base.update(kw)
    return TuneConfig(**base)


# -- manifests --------------------------------------------------------------------

ARTIFACTS = {
    "synth": ("graph.jsonl", "labels.json"),
    "pretrain": ("encoder.ckpt", "pretrain_trace.csv"),
    "augment": ("augmented.jsonl", "provenance.json"),
    "tune": ("prompt.ckpt", "tune_trace.csv"),
    "eval": ("report.csv",),
}

STAGE_INPUTS = {
    "pretrain": ("synth",),
    "augment": ("synth",),
    "tune": ("synth", "pretrain", "augment"),
    "eval": ("synth", "pretrain", "augment", "tune"),
}


def _manifest_path(out_dir, stage):
    return os.path.join(out_dir, f"{stage}.manifest.json")


def _write_manifest(out_dir, stage, config_hash, seed, inputs):
    manifest = {
        "stage": stage,
        "config_hash": config_hash,
        "seed": seed,
        "inputs": inputs,
        "outputs": {name: file_sha256(os.path.join(out_dir, name))
                    for name in ARTIFACTS[stage]},
    }
    with open(_manifest_path(out_dir, stage), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _require_stage(out_dir, stage):
    """Verify the stage ran and its artifacts still match its manifest."""
    path = _manifest_path(out_dir, stage)
    if not os.path.exists(path):
        raise OrderingError(f"stage {stage!r} has not run yet in {out_dir}; "
                            "run it before its dependents")
    with open(path) as fh:
        manifest = json.load(fh)
    hashes = {}
    for name, recorded in manifest["outputs"].items():
        full = os.path.join(out_dir, name)
        if not os.path.exists(full):
            raise OrderingError(f"artifact {name} from stage {stage!r} is missing")
        actual = file_sha256(full)
        if actual != recorded:
            raise StaleInputError(
                f"artifact {name} changed since stage {stage!r} ran "
                f"(expected {recorded[:12]}, found {actual[:12]}); re-run {stage!r}")
        hashes[name] = actual
    return manifest, hashes


# -- stages ------------------------------------------------------------------------

def stage_synth(cfg: RunConfig, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    scfg = synthgen.SynthConfig(n_users=cfg.synth.n_users,
                                minority_fraction=cfg.synth.minority_fraction,
                                homophily=cfg.synth.homophily,
                                contamination=cfg.synth.contamination,
                                stealth=cfg.synth.stealth,
                                tweets_per_user=tuple(cfg.synth.tweets_per_user),
                                follows_per_user=cfg.synth.follows_per_user,
                                engagements_per_user=cfg.synth.engagements_per_user,
                                seed=derive_seed(cfg.seed, "synth"))
    g, labels = synthgen.generate(scfg)
    save_graph(g, os.path.join(out_dir, "graph.jsonl"))
    with open(os.path.join(out_dir, "labels.json"), "w") as fh:
        json.dump(labels, fh, indent=2, sort_keys=True)
    return _write_manifest(out_dir, "synth", stable_hash(cfg.synth.model_dump()),
                           scfg.seed, {})


def _load_graph_stage(out_dir):
    _, hashes = _require_stage(out_dir, "synth")
    return load_graph(os.path.join(out_dir, "graph.jsonl")), hashes


def stage_pretrain(cfg: RunConfig, out_dir):
    g, in_hashes = _load_graph_stage(out_dir)
    seed = derive_seed(cfg.seed, "pretrain")
    inputs = build_encoder_inputs(g)
    feats = embed_graph_features(g, HashingTextEmbedder())
    enc_cfg = encoder_config(cfg)
    params = init_encoder_params({t: feats[t].shape[1] for t in NODE_TYPES},
                                 enc_cfg, seed)
    pcfg = PretrainConfig(epochs=cfg.pretrain.epochs, lr=cfg.pretrain.lr,
                          weight_decay=cfg.pretrain.weight_decay,
                          temperature=cfg.pretrain.temperature,
                          log_softmax=cfg.pretrain.log_softmax, seed=seed)
    params, trace = run_pretrain(inputs, feats, params, enc_cfg, pcfg)
    nc.save_checkpoint(os.path.join(out_dir, "encoder.ckpt"),
                       {k: v.data for k, v in params.items()},
                       {"config_hash": stable_hash(cfg.model.model_dump())})
    save_trace(trace, os.path.join(out_dir, "pretrain_trace.csv"))
    return _write_manifest(
        out_dir, "pretrain",
        stable_hash({"model": cfg.model.model_dump(),
                     "pretrain": cfg.pretrain.model_dump()}),
        seed, in_hashes)


def make_llm_client(cfg: RunConfig):
    if cfg.augment.mock_llm:
        return MockLlmClient()
    return HttpLlmClient(cfg.augment.endpoint, cfg.augment.model,
                         api_key_env=cfg.augment.api_key_env)


def stage_augment(cfg: RunConfig, out_dir):
    g, in_hashes = _load_graph_stage(out_dir)
    seed = derive_seed(cfg.seed, "split")
    split = stratified_split(g, cfg.split.train_frac, cfg.split.val_frac, seed)
    client = make_llm_client(cfg)
    cache = ResponseCache(os.path.join(out_dir, "cache.jsonl"))
    aug = augment_graph(g, split, client, HashingTextEmbedder(), cache)
    save_augmented(aug, os.path.join(out_dir, "augmented.jsonl"),
                   os.path.join(out_dir, "provenance.json"))
    return _write_manifest(
        out_dir, "augment",
        stable_hash({"augment": cfg.augment.model_dump(),
                     "split": cfg.split.model_dump()}),
        seed, in_hashes)


def _split_indices(g, g_prime, split):
    """Row indices into g_prime's user ordering for train (original + the
    synthetic nodes, which are labeled) / val / test user sets of g."""
    users = sorted(g_prime.ids_by_type["user"])
    synth = [u for u in users if u not in g.node_type]
    tr_ids = sorted(split.train) + synth
    tr = [users.index(u) for u in tr_ids]
    va = [users.index(u) for u in sorted(split.val)]
    te = [users.index(u) for u in sorted(split.test)]
    tr_lab = [g_prime.labels[u] for u in tr_ids]
    va_lab = [g_prime.labels[users[i]] for i in va]
    te_lab = [g_prime.labels[users[i]] for i in te]
    return (tr, tr_lab), (va, va_lab), (te, te_lab)


class Bundle:
    """Everything the tune/eval stages need, loaded and verified once."""

    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.g, _ = _load_graph_stage(out_dir)
        _, self.pre_hashes = _require_stage(out_dir, "pretrain")
        _, self.aug_hashes = _require_stage(out_dir, "augment")
        meta, arrays = nc.load_checkpoint(os.path.join(out_dir, "encoder.ckpt"))
        model_hash = stable_hash(cfg.model.model_dump())
        if meta.get("config_hash") != model_hash:
            raise StaleInputError("encoder checkpoint was trained under a "
                                  "different model config; re-run pretrain")
        self.enc_params = {k: nc.Tensor(v, requires_grad=True)
                           for k, v in arrays.items()}
        self.encoder_hash = self.pre_hashes["encoder.ckpt"]
        self.enc_cfg = encoder_config(cfg)
        aug = load_augmented(self.g, os.path.join(out_dir, "augmented.jsonl"),
                             os.path.join(out_dir, "provenance.json"))
        self.g_prime = aug.graph
        self.embedder = HashingTextEmbedder()
        self.split = stratified_split(self.g, cfg.split.train_frac,
                                      cfg.split.val_frac, derive_seed(cfg.seed, "split"))
        self._prepared = {}

    def prepared(self, graph_key):
        """(inputs, mp_masks, feats, (train, val, test)) for 'base' or 'aug'."""
        if graph_key not in self._prepared:
            g = self.g if graph_key == "base" else self.g_prime
            inputs = build_encoder_inputs(g)
            masks = {p: metapath_adjacency(g, p) for p in META_PATHS}
            feats = embed_graph_features(g, self.embedder)
            splits = _split_indices(self.g, g, self.split)
            self._prepared[graph_key] = (inputs, masks, feats, splits)
        return self._prepared[graph_key]


VARIANT_SETTINGS = {
    # graph, node_prompt, head, zero_delta, use_projection
    "full": ("aug", True, "prototype", False, True),
    "a1": ("aug", False, "linear", True, False),
    "a2": ("aug", True, "linear", False, True),
    "a3": ("aug", False, "prototype", False, True),
    "a4": ("aug", True, "prototype", True, True),
    "no_aug": ("base", True, "prototype", False, True),
}


def _linear_baseline(bundle: Bundle, cfg: RunConfig, seed):
    """Supervised reference: shared MLP projection + linear head trained on raw
    user features alone (no encoder, no prompts, no augmentation)."""
    from .promptkit import _linear_loss, _linear_predict

    feats = embed_graph_features(bundle.g, bundle.embedder)["user"]
    (tr, tr_lab), (va, va_lab), (te, te_lab) = _split_indices(bundle.g, bundle.g,
                                                              bundle.split)
    d_in, d = feats.shape[1], cfg.model.dim
    params = {
        "W1": nc.init_params((d_in, d), "xavier-uniform", derive_seed(seed, "lb", 1)),
        "b1": nc.init_params((1, d), "zeros", 0),
        "head/W": nc.init_params((d, 2), "xavier-uniform", derive_seed(seed, "lb", 2)),
        "head/b": nc.init_params((1, 2), "zeros", 0),
    }
    x = nc.Tensor(feats)
    label_idx = class_indices(tr_lab)
    opt = nc.Adam(params, lr=cfg.tune.lr, weight_decay=cfg.tune.weight_decay)
    best = None
    for epoch in range(cfg.tune.epochs + 1):
        h = nc.tanh(nc.add_bias(nc.matmul(x, params["W1"]), params["b1"]))
        loss = _linear_loss(nc.gather_rows(h, tr), params, label_idx,
                            cfg.tune.temperature)
        va_pred = _linear_predict(nc.gather_rows(h, va), params)
        f1 = evalkit.macro_f1(va_lab, va_pred) if va else 0.0
        if best is None or f1 > best[0]:
            best = (f1, {k: v.data.copy() for k, v in params.items()})
        if epoch == cfg.tune.epochs:
            break
        opt.zero_grad()
        nc.backward(loss)
        opt.step()
    for k, v in best[1].items():
        params[k].data[:] = v
    h = nc.tanh(nc.add_bias(nc.matmul(x, params["W1"]), params["b1"]))
    return te_lab, _linear_predict(nc.gather_rows(h, te), params)


def run_variant(variant, bundle: Bundle, cfg: RunConfig, seed):
    """Tune one pipeline variant and score it on the test split."""
    if variant == "linear_baseline":
        te_lab, pred = _linear_baseline(bundle, cfg, derive_seed(seed, variant))
    else:
        graph_key, node_prompt, head, zero_delta, use_proj = VARIANT_SETTINGS[variant]
        inputs, masks, feats, ((tr, tr_lab), (va, va_lab), (te, te_lab)) = \
            bundle.prepared(graph_key)
        tcfg = tune_config(cfg, seed=derive_seed(seed, variant),
                           **({"delta": 0.0} if zero_delta else {}))
        params, _ = run_prompt_tune(inputs, masks, feats, bundle.enc_params,
                                    bundle.enc_cfg, tr, tr_lab, va, va_lab, tcfg,
                                    node_prompt=node_prompt, head=head,
                                    use_projection=use_proj)
        pred = evaluate_prompt_state(params, inputs, masks, feats,
                                     bundle.enc_params, bundle.enc_cfg, te, tcfg,
                                     node_prompt=node_prompt, head=head,
                                     use_projection=use_proj)
    return evalkit.metrics_row(variant, seed, cfg.split.train_frac, te_lab, pred)


def stage_tune(cfg: RunConfig, out_dir):
    bundle = Bundle(cfg, out_dir)
    inputs, masks, feats, ((tr, tr_lab), (va, va_lab), _) = bundle.prepared("aug")
    tcfg = tune_config(cfg)
    params, trace = run_prompt_tune(inputs, masks, feats, bundle.enc_params,
                                    bundle.enc_cfg, tr, tr_lab, va, va_lab, tcfg)
    save_prompt_state(os.path.join(out_dir, "prompt.ckpt"), params,
                      bundle.encoder_hash, {"head": "prototype"})
    with open(os.path.join(out_dir, "tune_trace.csv"), "w") as fh:
        fh.write("epoch,loss,val_macro_f1\n")
        for row in trace:
            fh.write(f"{row['epoch']},{row['loss']!r},{row['val_macro_f1']!r}\n")
    in_hashes = dict(bundle.pre_hashes)
    in_hashes.update(bundle.aug_hashes)
    return _write_manifest(
        out_dir, "tune",
        stable_hash({"model": cfg.model.model_dump(), "tune": cfg.tune.model_dump()}),
        derive_seed(cfg.seed, "tune"), in_hashes)


def stage_eval(cfg: RunConfig, out_dir):
    bundle = Bundle(cfg, out_dir)
    _, tune_hashes = _require_stage(out_dir, "tune")
    # the tuned prompt state must match the encoder that is on disk now
    _, params = load_prompt_state(os.path.join(out_dir, "prompt.ckpt"),
                                  bundle.encoder_hash)
    inputs, masks, feats, (_, _, (te, te_lab)) = bundle.prepared("aug")
    tcfg = tune_config(cfg)
    pred = evaluate_prompt_state(params, inputs, masks, feats, bundle.enc_params,
                                 bundle.enc_cfg, te, tcfg)
    rows = [evalkit.metrics_row("tuned", cfg.seed, cfg.split.train_frac,
                                te_lab, pred)]
    for variant in cfg.variants:
        if variant not in evalkit.ABLATION_VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        rows.append(run_variant(variant, bundle, cfg, cfg.seed))
    evalkit.write_report(rows, os.path.join(out_dir, "report.csv"))
    in_hashes = dict(bundle.pre_hashes)
    in_hashes.update(bundle.aug_hashes)
    in_hashes.update(tune_hashes)
    return _write_manifest(out_dir, "eval", stable_hash(cfg.model_dump()),
                           cfg.seed, in_hashes)


STAGES = {
    "synth": stage_synth,
    "pretrain": stage_pretrain,
    "augment": stage_augment,
    "tune": stage_tune,
    "eval": stage_eval,
}

STAGE_ORDER = ("synth", "pretrain", "augment", "tune", "eval")


def run_pipeline(cfg: RunConfig, out_dir):
    return [STAGES[s](cfg, out_dir) for s in STAGE_ORDER]
