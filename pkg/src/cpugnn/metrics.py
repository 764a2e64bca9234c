import warnings

import numpy as np


def confusion_counts(y_true, y_pred, n_classes: int):
    """Per-class (tp, fp, fn) arrays."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    tp = np.bincount(y_true[y_true == y_pred], minlength=n_classes)
    fp = np.bincount(y_pred, minlength=n_classes) - tp
    fn = np.bincount(y_true, minlength=n_classes) - tp
    return tp, fp, fn


def f1_scores(y_true, y_pred, n_classes: int) -> tuple[float, float]:
    """(macro F1, micro F1).

    A class absent from both truth and prediction scores F1 = 0 in the macro
    average; a warning names it.
    """
    tp, fp, fn = confusion_counts(y_true, y_pred, n_classes)
    denom = 2 * tp + fp + fn
    per_class = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    absent = np.flatnonzero(denom == 0)
    if len(absent):
        warnings.warn(f"classes {absent.tolist()} absent from truth and prediction; counted as F1 = 0",
                      stacklevel=2)
    macro = float(per_class.mean())
    total = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = float(2 * tp.sum() / total) if total else 0.0
    return macro, micro


def predict(logits) -> np.ndarray:
    # argmax already breaks ties toward the lowest index
    return np.argmax(np.asarray(logits), axis=1)
