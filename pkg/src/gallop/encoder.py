"""Learnable prompt embeddings and the frozen toy text encoder.

The encoder maps a token sequence [prompt tokens; class tokens] to a unit
vector in feature space: positional softmax-weighted mean, a seeded Gaussian
linear map, tanh, a second seeded linear map, then L2 normalization. It is a
frozen, differentiable stand-in implementing the same interface a real
vision-language text tower would; the full gradient path prompt -> class
embedding -> loss runs through it.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError

PROMPT_INIT_STD = 0.02
CLASS_TOKEN_STD = 1.0
# Spread of the seeded positional scores. Kept small so the softmax weights
# stay near-uniform: a draw that crushes the class-token weight would leave
# the per-class encodings unsteerable.
POSITION_SCORE_STD = 0.2
_MAX_POSITIONS = 64
_CLASS_TOKEN_STREAM = 0xC1A55


@dataclass
class PromptSet:
    """m global and n local prompts, each V token embeddings wide."""

    global_prompts: np.ndarray  # (m, V, d')
    local_prompts: np.ndarray  # (n, V, d')

    @property
    def m(self):
        return self.global_prompts.shape[0]

    @property
    def n(self):
        return self.local_prompts.shape[0]

    @property
    def V(self):
        return self.global_prompts.shape[1]

    @property
    def d_prime(self):
        return self.global_prompts.shape[2]

    def validate(self):
        if self.m + self.n < 1:
            raise ConfigError("prompt set needs at least one prompt (global or local)")
        if self.V < 1 or self.d_prime < 1:
            raise ConfigError("prompts need V >= 1 tokens of width d' >= 1")
        if self.local_prompts.shape[1:] != self.global_prompts.shape[1:]:
            raise ConfigError("global and local prompts must share (V, d')")
        if not (
            np.isfinite(self.global_prompts).all() and np.isfinite(self.local_prompts).all()
        ):
            raise ConfigError("prompt entries must be finite")


def init_prompts(seed, m, n, V, d_prime):
    """Fresh prompt set, entries i.i.d. N(0, 0.02^2) from the seed."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((m, V, d_prime)) * PROMPT_INIT_STD
    l = rng.standard_normal((n, V, d_prime)) * PROMPT_INIT_STD
    prompts = PromptSet(global_prompts=g, local_prompts=l)
    prompts.validate()
    return prompts


@dataclass
class ToyTextEncoder:
    """Frozen seeded two-layer map from token sequences to unit vectors.

    Same seed, same encoder: all weights derive from one RNG stream. Inputs
    whose pre-normalization image has norm < 1e-8 (e.g. an all-zero sequence
    through tanh) map to the first standard basis vector.
    """

    seed: int
    d_prime: int
    d: int
    pos_scores: np.ndarray = field(repr=False, default=None)
    w1: np.ndarray = field(repr=False, default=None)
    w2: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.d_prime < 1 or self.d < 1:
            raise ConfigError("encoder dims must be >= 1")
        rng = np.random.default_rng(self.seed)
        self.pos_scores = rng.standard_normal(_MAX_POSITIONS) * POSITION_SCORE_STD
        self.w1 = rng.standard_normal((self.d, self.d_prime)) / np.sqrt(self.d_prime)
        self.w2 = rng.standard_normal((self.d, self.d)) / np.sqrt(self.d)

    @property
    def identifier(self):
        return f"toy-text-encoder/seed={self.seed}/d_prime={self.d_prime}/d={self.d}"

    def position_weights(self, length):
        if length < 1:
            raise ConfigError("token sequence must be non-empty")
        if length > _MAX_POSITIONS:
            raise ConfigError(f"sequence length {length} exceeds {_MAX_POSITIONS} positions")
        scores = self.pos_scores[:length]
        e = np.exp(scores - scores.max())
        return e / e.sum()


def make_toy_encoder(seed, d_prime, d):
    return ToyTextEncoder(seed=seed, d_prime=d_prime, d=d)


def toy_class_tokens(encoder, num_classes):
    """One frozen seeded Gaussian token per class, (C, 1, d')."""
    rng = np.random.default_rng([encoder.seed, _CLASS_TOKEN_STREAM])
    return rng.standard_normal((num_classes, 1, encoder.d_prime)) * CLASS_TOKEN_STD


def encode_t(encoder, prompt, class_tokens=None):
    """Differentiable encode: Tensor prompt (V, d') -> unit Tensor (d,).

    ``class_tokens`` is a frozen (C_c, d') array appended after the prompt
    tokens; None or empty encodes the prompt alone (used by the diversity
    term).
    """
    prompt = prompt if isinstance(prompt, ad.Tensor) else ad.constant(prompt)
    V, d_prime = prompt.data.shape
    if d_prime != encoder.d_prime:
        raise ValueError(
            f"prompt token width {d_prime} does not match encoder width {encoder.d_prime}"
        )
    n_class = 0 if class_tokens is None else len(class_tokens)
    w = encoder.position_weights(V + n_class)
    x = ad.matmul(ad.constant(w[:V]), prompt)
    if n_class:
        tokens = np.asarray(class_tokens, dtype=np.float64)
        if tokens.shape[1] != encoder.d_prime:
            raise ValueError(
                f"class token width {tokens.shape[1]} does not match encoder width "
                f"{encoder.d_prime}"
            )
        x = ad.add(x, ad.constant(w[V:] @ tokens))
    h = ad.tanh(ad.matmul(ad.constant(encoder.w1), x))
    return ad.normalize_vec(ad.matmul(ad.constant(encoder.w2), h))


def encode(encoder, prompt, class_tokens=None):
    """Encode a numpy prompt to a unit numpy vector (no gradient recording)."""
    return encode_t(encoder, ad.constant(np.asarray(prompt, dtype=np.float64)),
                    class_tokens).data


def encode_classes_t(encoder, prompt, class_tokens):
    """Encode one prompt against every class at once: Tensor (C, d).

    Requires a uniform token count per class (true for the toy one-token
    classes); the per-class sequences share position weights, so the class
    part reduces to a constant per-row shift.
    """
    prompt = prompt if isinstance(prompt, ad.Tensor) else ad.constant(prompt)
    V = prompt.data.shape[0]
    tokens = np.asarray(class_tokens, dtype=np.float64)  # (C, C_c, d')
    n_class = tokens.shape[1]
    w = encoder.position_weights(V + n_class)
    base = ad.matmul(ad.constant(w[:V]), prompt)  # (d',)
    shifts = np.einsum("t,ctk->ck", w[V:], tokens)  # (C, d')
    x = ad.add(ad.constant(shifts), base)
    h = ad.tanh(ad.matmul(x, ad.constant(encoder.w1.T)))
    return ad.normalize_rows(ad.matmul(h, ad.constant(encoder.w2.T)))


def encode_classes(encoder, prompt, class_tokens):
    return encode_classes_t(encoder, ad.constant(prompt), class_tokens).data
