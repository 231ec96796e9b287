"""Similarity and probability core: sparse top-k pooling, linear alignment
of local features, temperature softmax.

All functions here are pure and operate on immutable numpy inputs; the
differentiable training path reuses the same selection kernels through the
autodiff primitives, so training and inference agree on tie-breaks.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .encoder import encode_classes
from .errors import ConfigError


@dataclass
class AlignmentMap:
    """Trainable d x d linear map over local features, identity at init."""

    theta: np.ndarray

    @classmethod
    def identity(cls, d):
        return cls(theta=np.eye(d, dtype=np.float64))

    def validate(self):
        if self.theta.ndim != 2 or self.theta.shape[0] != self.theta.shape[1]:
            raise ConfigError(f"alignment map must be square, got {self.theta.shape}")
        if not np.isfinite(self.theta).all():
            raise ConfigError("alignment map entries must be finite")


@dataclass
class ScaleSchedule:
    """Per-local-prompt sparsity levels k_j = k1 + (j-1) * delta_k."""

    k1: int
    delta_k: int
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ConfigError("scale schedule needs n >= 0 local prompts")
        if self.n > 0 and self.k1 < 1:
            raise ConfigError("first scale k1 must be >= 1")
        if self.delta_k < 0:
            raise ConfigError("scale expansion delta_k must be >= 0")

    @property
    def scales(self):
        return [self.k1 + j * self.delta_k for j in range(self.n)]

    def validate_for(self, L):
        for j, k in enumerate(self.scales):
            if k > L:
                raise ConfigError(
                    f"local prompt {j} has scale k_{j + 1}={k} exceeding L={L} local features"
                )


@dataclass
class Temperature:
    tau: float = 0.01  # CLIP's converged logit scale 1/100

    def __post_init__(self):
        if not (self.tau > 0):
            raise ConfigError(f"temperature must be positive, got {self.tau}")


def topk_mask(z_l, t_c, k):
    """0/1 indicator of the k rows of z_l most similar to t_c.

    Ties at the k-th rank go to the lowest row index.
    """
    L = z_l.shape[0]
    if not 1 <= k <= L:
        raise ValueError(f"k={k} out of range [1, {L}]")
    sims = np.asarray(z_l, dtype=np.float64) @ np.asarray(t_c, dtype=np.float64)
    mask = _kernels.topk_block_mask(sims.reshape(1, L, 1), k)
    return mask[0, :, 0].astype(np.int64)


def topk_similarity(z_l, t_c, k):
    """Mean of the k largest row similarities <z_l[i], t_c>."""
    L = z_l.shape[0]
    if not 1 <= k <= L:
        raise ValueError(f"k={k} out of range [1, {L}]")
    sims = np.asarray(z_l, dtype=np.float64) @ np.asarray(t_c, dtype=np.float64)
    mask = _kernels.topk_block_mask(sims.reshape(1, L, 1), k)[0, :, 0]
    return float((mask * sims).sum() / k)


def align_locals(alignment, z_l):
    """Apply the linear map row-wise: row i -> theta @ z_l[i]. No renormalization;
    the map's learned magnitude is part of the similarity."""
    theta = alignment.theta if isinstance(alignment, AlignmentMap) else np.asarray(alignment)
    z_l = np.asarray(z_l, dtype=np.float64)
    if z_l.ndim != 2 or theta.shape[1] != z_l.shape[1]:
        raise ValueError(
            f"cannot align locals of shape {z_l.shape} with map of shape {theta.shape}"
        )
    return z_l @ theta.T.astype(np.float64)


def class_probabilities(similarities, tau):
    """Temperature softmax with max subtraction; strictly positive, sums to 1."""
    if isinstance(tau, Temperature):
        tau = tau.tau
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    s = np.asarray(similarities, dtype=np.float64) / tau
    e = np.exp(s - s.max())
    return e / e.sum()


def local_class_probability(model, z_l, j):
    """Class probabilities from local prompt j at its scale k_j: encode each
    class, align the locals, pool top-k_j similarities, softmax at tau."""
    k = model.scales.scales[j]
    L = z_l.shape[0]
    if k > L:
        raise ConfigError(f"local prompt {j} has scale k_{j + 1}={k} exceeding L={L}")
    text = encode_classes(
        model.encoder, model.prompts.local_prompts[j], model.class_tokens(model.num_classes)
    )  # (C, d)
    table = align_locals(model.alignment, z_l) @ text.T  # (L, C)
    mask = _kernels.topk_block_mask(table[None, :, :], k)[0]
    return class_probabilities((mask * table).sum(axis=0) / k, model.tau)
