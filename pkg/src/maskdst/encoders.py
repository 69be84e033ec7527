"""Turn-level trainable encoder, the frozen slot/value catalog encoder,
and sinusoidal positional encoding.

The turn encoder is a small from-scratch transformer; the catalog encoder
is a separately-initialized copy of the same architecture whose weights
never receive gradients, giving fixed metric targets for the distance head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Ontology, TokenSequence, Vocabulary, tokenize_catalog_entry


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    d: int = 32
    heads: int = 4
    encoder_layers: int = 2
    ff: int = 64
    max_turn_tokens: int = 64
    use_positional: bool = True
    learned_positions: bool = False

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ConfigError(f"model dim {self.d} not divisible by {self.heads} heads")


# -- positional encoding -------------------------------------------------

def positional_encoding(t: int, d: int) -> np.ndarray:
    """Sinusoidal position vector: sin at even indices, cos at odd."""
    pe = np.zeros(d)
    i = np.arange(0, d, 2)
    angle = t / np.power(10000.0, i / d)
    pe[0::2] = np.sin(angle)
    pe[1::2] = np.cos(angle)[: len(pe[1::2])]
    return pe


def positional_matrix(positions, d: int) -> np.ndarray:
    return np.stack([positional_encoding(p, d) for p in positions])


# -- parameter initialization -------------------------------------------

def init_linear(params, name, fan_in, fan_out, rng, bias=True):
    params[f"{name}.w"] = ad.parameter(rng.normal(0.0, fan_in ** -0.5, (fan_in, fan_out)))
    if bias:
        params[f"{name}.b"] = ad.parameter(np.zeros(fan_out))


def init_mha(params, prefix, d, rng):
    for proj in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{proj}"] = ad.parameter(rng.normal(0.0, d ** -0.5, (d, d)))


def init_block(params, prefix, d, ff, rng):
    init_mha(params, f"{prefix}.attn", d, rng)
    params[f"{prefix}.ln1.g"] = ad.parameter(np.ones(d))
    params[f"{prefix}.ln1.b"] = ad.parameter(np.zeros(d))
    init_linear(params, f"{prefix}.ff1", d, ff, rng)
    init_linear(params, f"{prefix}.ff2", ff, d, rng)
    params[f"{prefix}.ln2.g"] = ad.parameter(np.ones(d))
    params[f"{prefix}.ln2.b"] = ad.parameter(np.zeros(d))


def init_encoder(params, prefix, cfg: EncoderConfig, vocab_size: int, rng):
    params[f"{prefix}.embed"] = ad.parameter(rng.normal(0.0, 1.0, (vocab_size, cfg.d)))
    if cfg.learned_positions:
        params[f"{prefix}.pos"] = ad.parameter(
            rng.normal(0.0, 1.0, (cfg.max_turn_tokens, cfg.d))
        )
    for layer in range(cfg.encoder_layers):
        init_block(params, f"{prefix}.l{layer}", cfg.d, cfg.ff, rng)


# -- attention / transformer blocks -------------------------------------

def multi_head_attention(params, prefix, query: Tensor, keys: Tensor,
                         heads: int, mask: Optional[np.ndarray] = None) -> Tensor:
    """Scaled dot-product multi-head attention; query [Lq x d], keys [Lk x d].

    `mask` is a {0, -inf} array broadcastable to the [Lq x Lk] score matrix.
    """
    lq, d = query.shape
    lk = keys.shape[0]
    dh = d // heads
    q = ad.transpose(ad.reshape(query @ params[f"{prefix}.wq"], (lq, heads, dh)), (1, 0, 2))
    k = ad.transpose(ad.reshape(keys @ params[f"{prefix}.wk"], (lk, heads, dh)), (1, 0, 2))
    v = ad.transpose(ad.reshape(keys @ params[f"{prefix}.wv"], (lk, heads, dh)), (1, 0, 2))
    scores = (q @ ad.transpose(k, (0, 2, 1))) * (dh ** -0.5)
    if mask is None:
        mask = np.zeros(lk)
    weights = ad.masked_softmax(scores, mask)
    out = weights @ v  # h x Lq x dh
    out = ad.reshape(ad.transpose(out, (1, 0, 2)), (lq, d))
    return out @ params[f"{prefix}.wo"]


def encoder_block(params, prefix, x: Tensor, heads: int,
                  mask: Optional[np.ndarray] = None) -> Tensor:
    attn = multi_head_attention(params, f"{prefix}.attn", x, x, heads, mask)
    x = ad.layer_norm(x + attn, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    h = ad.relu(x @ params[f"{prefix}.ff1.w"] + params[f"{prefix}.ff1.b"])
    h = h @ params[f"{prefix}.ff2.w"] + params[f"{prefix}.ff2.b"]
    return ad.layer_norm(x + h, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])


# -- turn encoding -------------------------------------------------------

@dataclass
class TurnEncoding:
    token_states: Tensor  # [L x d]
    pooled: Tensor        # [d], the [CLS] position
    pad_mask: np.ndarray  # [L] over {0, -inf}, -inf at [PAD] keys


def encode_turn(tokens: TokenSequence, params, prefix, cfg: EncoderConfig,
                vocab: Vocabulary) -> TurnEncoding:
    ids = np.asarray(tokens.ids, dtype=np.int64)
    x = ad.embedding(params[f"{prefix}.embed"], ids)
    if cfg.use_positional:
        if cfg.learned_positions:
            x = x + ad.embedding(params[f"{prefix}.pos"], np.arange(len(ids)))
        else:
            x = x + ad.constant(positional_matrix(range(len(ids)), cfg.d))
    pad_mask = np.where(ids == vocab.pad_id, ad.NEG_INF, 0.0)
    for layer in range(cfg.encoder_layers):
        x = encoder_block(params, f"{prefix}.l{layer}", x, cfg.heads, pad_mask)
    return TurnEncoding(token_states=x, pooled=x[0], pad_mask=pad_mask)


# -- frozen slot/value catalog ------------------------------------------

@dataclass
class SlotCatalog:
    slot_vecs: dict    # slot -> np.ndarray [d]
    value_mats: dict   # slot -> np.ndarray [|v_s| x d], rows in ontology order


def encode_catalog(ontology: Ontology, frozen_params, prefix, cfg: EncoderConfig,
                   vocab: Vocabulary) -> SlotCatalog:
    """Encode every slot name and candidate value with the frozen encoder.

    Outputs are plain arrays: nothing here participates in any gradient
    graph, which is the stop-gradient contract for the frozen encoder.
    """
    def pooled(text):
        seq = tokenize_catalog_entry(text, vocab)
        return encode_turn(seq, frozen_params, prefix, cfg, vocab).pooled.data.copy()

    slot_vecs = {}
    value_mats = {}
    for slot in ontology.slot_names:
        slot_vecs[slot] = pooled(slot)
        value_mats[slot] = np.stack([pooled(v) for v in ontology.values_of(slot)])
    return SlotCatalog(slot_vecs=slot_vecs, value_mats=value_mats)
