from __future__ import annotations

import numpy as np
import numpy.typing as npt

from app.errors import LabelRangeError
from app.kernels.tensor import Tensor, expect_shape


def softmax_cross_entropy(
    logits: Tensor, labels: npt.ArrayLike
) -> tuple[float, Tensor]:
    """Mean cross-entropy of softmax(logits) and its gradient (softmax - onehot) / N."""
    expect_shape("logits", logits, (None, None))
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.intp)
    expect_shape("labels", labels, (n,))
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelRangeError(f"Labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean())

    grad = np.exp(log_probs)
    grad[rows, labels] -= 1
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


__all__ = ["softmax_cross_entropy"]
