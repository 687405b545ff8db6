"""Classification metrics for imbalanced binary labels, plus the ablation
harness and its CSV report format."""

import csv

from .hetgraph import CLASSES

MINORITY, MAJORITY = CLASSES  # participant, benign

ABLATION_VARIANTS = ("full", "a1", "a2", "a3", "a4", "no_aug", "linear_baseline")

REPORT_FIELDS = ("variant", "seed", "split", "macro_f1", "gmean",
                 "minority_f1", "majority_f1")


def confusion(y_true, y_pred, positive):
    """(TP, FP, FN, TN) treating `positive` as the positive class."""
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if not y_true:
        raise ValueError("empty label vectors")
    tp = fp = fn = tn = 0
    for t, p in zip(y_true, y_pred):
        if p == positive:
            tp, fp = (tp + 1, fp) if t == positive else (tp, fp + 1)
        else:
            fn, tn = (fn + 1, tn) if t == positive else (fn, tn + 1)
    return tp, fp, fn, tn


def _f1(tp, fp, fn):
    # zero-division convention: empty precision/recall count as 0
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def per_class_f1(y_true, y_pred):
    out = {}
    for cls in CLASSES:
        tp, fp, fn, _ = confusion(y_true, y_pred, cls)
        out[cls] = 100.0 * _f1(tp, fp, fn)
    return out


def macro_f1(y_true, y_pred):
    f1s = per_class_f1(y_true, y_pred)
    return sum(f1s.values()) / len(f1s)


def gmean(y_true, y_pred):
    """sqrt(sensitivity x specificity) x 100; sensitivity = minority recall."""
    tp, fp, fn, tn = confusion(y_true, y_pred, MINORITY)
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    return 100.0 * (sens * spec) ** 0.5


def metrics_row(variant, seed, split, y_true, y_pred):
    f1s = per_class_f1(y_true, y_pred)
    return {
        "variant": variant,
        "seed": seed,
        "split": split,
        "macro_f1": macro_f1(y_true, y_pred),
        "gmean": gmean(y_true, y_pred),
        "minority_f1": f1s[MINORITY],
        "majority_f1": f1s[MAJORITY],
    }


def write_report(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in REPORT_FIELDS})


def read_report(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    return f"{v:.4f}" if isinstance(v, float) else v


def run_ablation(variant, bundle, config, seed):
    """One metrics row for a named pipeline variant (see pipeline module).

    Variant semantics: a1 = no prompts (frozen embeddings + linear head),
    a2 = linear head instead of prototypes, a3 = no node prompt, a4 = no
    structure prompt, no_aug = tune on the original graph, linear_baseline =
    supervised projection + linear head without pre-training prompts.
    """
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {ABLATION_VARIANTS}")
    from . import pipeline

    return pipeline.run_variant(variant, bundle, config, seed)
