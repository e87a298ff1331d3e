"""Input checks shared by the estimators and transformers."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils.validation import check_array

from .errors import LengthMismatch, ShapeMismatch


def check_signals(X, n_leads: Optional[int] = 8, n_samples: Optional[int] = 5000,
                  dtype=np.float32) -> np.ndarray:
    """Validate a ``[records, leads, samples]`` array and return it as ``dtype``.

    ``None`` for ``n_leads`` or ``n_samples`` skips that dimension check.
    """
    X = check_array(X, allow_nd=True, dtype=dtype, ensure_2d=False)
    if X.ndim != 3:
        raise ShapeMismatch(f"expected a 3-D [records, leads, samples] array, got {X.ndim}-D")
    if n_leads is not None and X.shape[1] != n_leads:
        raise ShapeMismatch(f"expected {n_leads} leads, got {X.shape[1]}")
    if n_samples is not None and X.shape[2] != n_samples:
        raise ShapeMismatch(f"expected {n_samples} samples per lead, got {X.shape[2]}")
    return X


def check_targets(y, n: int, integer: bool = False) -> np.ndarray:
    y = np.asarray(y).ravel()
    if y.size != n:
        raise LengthMismatch(f"{n} signals but {y.size} targets")
    if integer:
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("class labels must be integers")
        return y.astype(np.int64)
    y = y.astype(np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("regression targets must be finite")
    return y
