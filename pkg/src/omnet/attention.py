"""Cross-task guided attention (CSCI + CompSeg) and the SE baseline.

Guidance probabilities always arrive detached: they are plain numpy arrays
(or tensors without a gradient path), so no gradient ever flows from one
task's loss into the head that produced its guidance.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

TUMOR_CLASSES = (2, 3, 4)
CORE_CLASSES = (3, 4)


def category_marginals(probs, class_set: Sequence[int]) -> tuple[Tensor, Tensor]:
    """Split 5-class probabilities into in-category / out-of-category marginals.

    Returns ``(P_t, P_n)``, each with a trailing singleton channel axis.
    """
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=T.DTYPE)
    c = p.shape[-1]
    members = sorted(set(int(k) for k in class_set))
    if not members or len(members) >= c or members[0] < 0 or members[-1] >= c:
        raise ValueError(f"class_set must be a non-empty proper subset of 0..{c - 1}, got {class_set}")
    others = [k for k in range(c) if k not in members]
    p_t = p[..., members].sum(axis=-1, keepdims=True)
    p_n = p[..., others].sum(axis=-1, keepdims=True)
    return Tensor(p_t), Tensor(p_n)


def csci(features: Tensor, p_t, p_n) -> tuple[Tensor, Tensor]:
    """Category-specific channel importance vectors ``(m_t, m_n)``.

    ``m_t[i]`` is the ``P_t``-weighted sum of channel ``i`` divided by the same
    sum over all channels. Batched features give ``[N, C]`` vectors.
    """
    p_t = p_t if isinstance(p_t, Tensor) else Tensor(p_t)
    p_n = p_n if isinstance(p_n, Tensor) else Tensor(p_n)
    if features.shape[:-1] != p_t.shape[:-1] or p_t.shape != p_n.shape or p_t.shape[-1] != 1:
        raise ShapeError(f"csci: features {features.shape} vs guidance {p_t.shape}/{p_n.shape}")
    p_t, p_n = T.stop_grad(p_t), T.stop_grad(p_n)
    ch = features.shape[-1]
    lead = (features.shape[0],) if features.ndim == 5 else ()
    n_vox = int(np.prod(features.shape[len(lead):-1]))
    flat_f = T.transpose_last(T.reshape(features, lead + (n_vox, ch)))

    def importance(p):
        weighted = T.matmul(flat_f, T.reshape(p, lead + (n_vox, 1)))
        return T.l1_normalize(T.reshape(weighted, lead + (ch,)))

    return importance(p_t), importance(p_n)


def _pointwise(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return T.conv3d(x, weight, bias)


def compseg(features: Tensor, m_t: Tensor, m_n: Tensor, p_t, p_n, params: dict) -> Tensor:
    """Two recalibrated 1x1x1 classifiers merged by the guidance marginals.

    ``params`` holds ``tumor_w/tumor_b``, ``normal_w/normal_b`` (F -> C) and
    ``merge_w/merge_b`` (C -> C), all 1x1x1 kernels.
    """
    p_t = T.stop_grad(p_t if isinstance(p_t, Tensor) else Tensor(p_t))
    p_n = T.stop_grad(p_n if isinstance(p_n, Tensor) else Tensor(p_n))
    for key in ("tumor_w", "normal_w"):
        if params[key].shape[3] != features.shape[-1]:
            raise ShapeError(f"compseg: {key} {params[key].shape} vs features {features.shape}")
    u_t = T.scale_channels(features, m_t)
    u_n = T.scale_channels(features, m_n)
    s_t = _pointwise(u_t, params["tumor_w"], params["tumor_b"])
    s_n = _pointwise(u_n, params["normal_w"], params["normal_b"])
    merged = T.add(T.mul(s_t, p_t), T.mul(s_n, p_n))
    return _pointwise(merged, params["merge_w"], params["merge_b"])


def cga_forward(features: Tensor, chain: Sequence) -> Tensor:
    """Run a guidance chain of heads over the same features.

    ``chain`` lists heads from the first guidance producer to the target head.
    Every head except the target runs without gradient recording, and its
    softmax output becomes the (detached) guidance for the next head.
    """
    if not chain:
        raise ValueError("empty guidance chain")
    guidance = None
    for head in chain[:-1]:
        with T.no_grad():
            logits = head(features, guidance)
            guidance = T.softmax_channels(logits).data
    return chain[-1](features, guidance)


def se_block(features: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Squeeze-and-excitation recalibration.

    Pool each channel to its mean, pass through a relu bottleneck and a sigmoid
    expansion, then scale the channels by the resulting gates.
    """
    pooled = T.mean_spatial(features)
    squeeze = pooled if pooled.ndim == 2 else T.reshape(pooled, (1, pooled.shape[0]))
    hidden = T.relu(T.add(T.matmul(squeeze, w1), b1))
    gates = T.sigmoid(T.add(T.matmul(hidden, w2), b2))
    if pooled.ndim == 1:
        gates = T.reshape(gates, (gates.shape[-1],))
    return T.scale_channels(features, gates)
