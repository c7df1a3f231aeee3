"""Masked self-attention encoder producing per-token hidden vectors.

The graph mask decides which tokens may attend to which; everything else
is a small post-norm transformer stack in float64. The last position is
always the summary token, whose hidden vector stands in for the whole
sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckError
from .graphs import MaskMatrix, SUMMARY_TOKEN
from .tables import normalize
from .tensor import (
    Tensor,
    add,
    layer_norm,
    masked_softmax,
    matmul,
    new_param,
    pick_row,
    relu,
    reshape,
    scale,
    take_rows,
    transpose,
)

OOV_TOKEN = "[OOV]"


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    dim: int = 64
    heads: int = 4
    ff_dim: int = 128
    max_positions: int = 512
    embed_norm: bool = False

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise CheckError("E_SCHEMA", f"dim {self.dim} not divisible by heads {self.heads}")

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "dim": self.dim,
            "heads": self.heads,
            "ff_dim": self.ff_dim,
            "max_positions": self.max_positions,
            "embed_norm": self.embed_norm,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        return EncoderConfig(**d)


def token_key(token: str) -> str:
    """Vocabulary key: bracketed specials stay verbatim, everything else
    is matched in normalized form."""
    if token.startswith("[") and token.endswith("]"):
        return token
    return normalize(token) or token


def build_vocab(token_sequences) -> dict[str, int]:
    """Deterministic vocabulary over every token seen; id 0 is reserved
    for out-of-vocabulary tokens."""
    keys = {token_key(t) for seq in token_sequences for t in seq}
    keys.discard(OOV_TOKEN)
    keys.discard(SUMMARY_TOKEN)
    ordered = [OOV_TOKEN, SUMMARY_TOKEN] + sorted(keys)
    return {k: i for i, k in enumerate(ordered)}


def encode_tokens(tokens, vocab: dict[str, int]) -> np.ndarray:
    return np.array([vocab.get(token_key(t), 0) for t in tokens], dtype=np.intp)


def init_encoder_params(cfg: EncoderConfig, vocab_size: int,
                        rng: np.random.Generator,
                        store: dict[str, Tensor] | None = None) -> dict[str, Tensor]:
    """Seeded parameter creation: uniform embeddings, fan-in scaled
    projections, identity layer norms."""
    if store is None:
        store = {}
    d, ff = cfg.dim, cfg.ff_dim
    new_param(store, "embed.tokens", rng.uniform(-0.05, 0.05, size=(vocab_size, d)))
    new_param(store, "embed.positions", rng.uniform(-0.05, 0.05, size=(cfg.max_positions, d)))
    if cfg.embed_norm:
        new_param(store, "embed.norm.gain", np.ones(d))
        new_param(store, "embed.norm.bias", np.zeros(d))
    for i in range(cfg.layers):
        p = f"layer{i}"
        for name in ("wq", "wk", "wv", "wo"):
            new_param(store, f"{p}.attn.{name}", rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d)))
        for name in ("bq", "bk", "bv", "bo"):
            new_param(store, f"{p}.attn.{name}", np.zeros(d))
        new_param(store, f"{p}.norm1.gain", np.ones(d))
        new_param(store, f"{p}.norm1.bias", np.zeros(d))
        new_param(store, f"{p}.ff.w1", rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, ff)))
        new_param(store, f"{p}.ff.b1", np.zeros(ff))
        new_param(store, f"{p}.ff.w2", rng.normal(0.0, 1.0 / math.sqrt(ff), size=(ff, d)))
        new_param(store, f"{p}.ff.b2", np.zeros(d))
        new_param(store, f"{p}.norm2.gain", np.ones(d))
        new_param(store, f"{p}.norm2.bias", np.zeros(d))
    return store


def _mask_array(mask) -> np.ndarray:
    return mask.g if isinstance(mask, MaskMatrix) else np.asarray(mask)


def masked_self_attention(
    x: Tensor,
    mask,
    store: dict[str, Tensor],
    prefix: str,
    heads: int,
    return_weights: bool = False,
):
    """Multi-head attention where token i may only read tokens j with
    G[i][j] == 1; masked pairs get exactly zero weight."""
    g = _mask_array(mask)
    t, d = x.shape
    if g.shape != (t, t):
        raise CheckError("E_MASK_SHAPE", f"mask {g.shape} does not fit {t} tokens")
    if np.any(np.diagonal(g) == 0):
        raise CheckError("E_MASK_SHAPE", "mask diagonal must be ones")
    dh = d // heads
    q = add(matmul(x, store[f"{prefix}.wq"]), store[f"{prefix}.bq"])
    k = add(matmul(x, store[f"{prefix}.wk"]), store[f"{prefix}.bk"])
    v = add(matmul(x, store[f"{prefix}.wv"]), store[f"{prefix}.bv"])
    qh = transpose(reshape(q, (t, heads, dh)), (1, 0, 2))
    kh = transpose(reshape(k, (t, heads, dh)), (1, 0, 2))
    vh = transpose(reshape(v, (t, heads, dh)), (1, 0, 2))
    scores = scale(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
    weights = masked_softmax(scores, g)
    ctx = matmul(weights, vh)
    merged = reshape(transpose(ctx, (1, 0, 2)), (t, d))
    out = add(matmul(merged, store[f"{prefix}.wo"]), store[f"{prefix}.bo"])
    if return_weights:
        return out, weights
    return out


def encoder_forward(
    token_ids: np.ndarray,
    mask,
    store: dict[str, Tensor],
    cfg: EncoderConfig,
) -> tuple[Tensor, Tensor]:
    """Hidden vectors for every token plus the summary vector h_T."""
    t = len(token_ids)
    if t == 0:
        raise CheckError("E_EMPTY", "no tokens to encode")
    if t > cfg.max_positions:
        raise CheckError("E_TOO_LONG", f"{t} tokens exceeds max {cfg.max_positions}",
                         tokens=t, max=cfg.max_positions)
    g = _mask_array(mask)
    if g.shape != (t, t):
        raise CheckError("E_MASK_SHAPE", f"mask {g.shape} does not fit {t} tokens")
    x = add(take_rows(store["embed.tokens"], token_ids),
            take_rows(store["embed.positions"], np.arange(t)))
    if cfg.embed_norm:
        x = layer_norm(x, store["embed.norm.gain"], store["embed.norm.bias"])
    for i in range(cfg.layers):
        p = f"layer{i}"
        attn = masked_self_attention(x, g, store, f"{p}.attn", cfg.heads)
        x = layer_norm(add(x, attn), store[f"{p}.norm1.gain"], store[f"{p}.norm1.bias"])
        h1 = relu(add(matmul(x, store[f"{p}.ff.w1"]), store[f"{p}.ff.b1"]))
        h2 = add(matmul(h1, store[f"{p}.ff.w2"]), store[f"{p}.ff.b2"])
        x = layer_norm(add(x, h2), store[f"{p}.norm2.gain"], store[f"{p}.norm2.bias"])
    h_last = pick_row(x, t - 1)
    return x, h_last
