"""Loss functions shared by the encoder re-training and the attention head."""

import numpy as np

from llmpia import autodiff as ad
from llmpia.errors import BatchTooSmall, DimensionMismatch, ZeroNormVector


def info_nce(anchors, positives, tau: float) -> ad.Tensor:
    """In-batch contrastive loss over cosine similarities divided by ``tau``.

    Row i treats ``positives[i]`` as its positive and every other
    ``positives[j]`` as a negative; the result is the mean of
    -log(exp(s_ii) / sum_j exp(s_ij)).
    """
    anchors, positives = ad.as_tensor(anchors), ad.as_tensor(positives)
    if anchors.shape != positives.shape or anchors.ndim != 2:
        raise DimensionMismatch(f"anchor {anchors.shape} vs positive {positives.shape}")
    if anchors.shape[0] < 2:
        raise BatchTooSmall("contrastive loss needs at least two pairs")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    for t in (anchors, positives):
        if np.any(np.linalg.norm(t.value, axis=1) == 0.0):
            raise ZeroNormVector("contrastive loss got a zero-norm vector")
    sims = ad.l2_normalize(anchors) @ ad.transpose(ad.l2_normalize(positives), (1, 0))
    return ad.nll_of_targets(sims * (1.0 / tau), np.arange(anchors.shape[0]))
