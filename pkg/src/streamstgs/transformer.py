"""Auxiliary transformer: global-motion teacher, never used at render time.

Two post-norm self-attention encoder layers (model dim 64, 2 heads,
feed-forward width 64, tanh activations) plus a final tanh linear layer.
Attention runs over the timestamp axis for a batch of Gaussians; time and
position encodings are concatenated to the temporal feature and linearly
projected into the model dimension. Gradients flow through gamma(X) into
the canonical positions; timestamps are constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .core import TIME_ENCODING_BANDS, positional_encode_array

MODEL_DIM = 64
HEADS = 2
HEAD_DIM = MODEL_DIM // HEADS
FF_DIM = 64
LAYERS = 2
POSITION_BANDS = 4  # gamma(X) frequency bands
LN_EPS = 1e-5


def _layer_names(i: int) -> list:
    p = f"layer{i}."
    return [p + n for n in (
        "qkv_w", "qkv_b", "out_w", "out_b", "ln1_g", "ln1_b",
        "ff1_w", "ff1_b", "ff2_w", "ff2_b", "ln2_g", "ln2_b")]


@dataclass
class TransformerAux:
    """Weights plus the scene bounding box used to normalize gamma(X)."""

    time_bands: int = TIME_ENCODING_BANDS
    position_bands: int = POSITION_BANDS
    bbox_lo: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bbox_hi: np.ndarray = field(default_factory=lambda: np.ones(3))
    params: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return MODEL_DIM + 2 * self.time_bands + 2 * 3 * self.position_bands

    @classmethod
    def create(cls, bbox_lo=None, bbox_hi=None, rng: np.random.Generator | None = None,
               time_bands: int = TIME_ENCODING_BANDS, position_bands: int = POSITION_BANDS):
        rng = rng or np.random.default_rng(0)
        aux = cls(time_bands, position_bands,
                  np.zeros(3) if bbox_lo is None else np.asarray(bbox_lo, dtype=np.float64),
                  np.ones(3) if bbox_hi is None else np.asarray(bbox_hi, dtype=np.float64))
        d = MODEL_DIM

        def lin(fan_in, fan_out):
            return rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)

        p = {"in_w": lin(aux.input_dim, d), "in_b": np.zeros(d),
             "final_w": lin(d, d), "final_b": np.zeros(d)}
        for i in range(LAYERS):
            pre = f"layer{i}."
            p[pre + "qkv_w"] = lin(d, 3 * d)
            p[pre + "qkv_b"] = np.zeros(3 * d)
            p[pre + "out_w"] = lin(d, d)
            p[pre + "out_b"] = np.zeros(d)
            p[pre + "ln1_g"] = np.ones(d)
            p[pre + "ln1_b"] = np.zeros(d)
            p[pre + "ff1_w"] = lin(d, FF_DIM)
            p[pre + "ff1_b"] = np.zeros(FF_DIM)
            p[pre + "ff2_w"] = lin(FF_DIM, d)
            p[pre + "ff2_b"] = np.zeros(d)
            p[pre + "ln2_g"] = np.ones(d)
            p[pre + "ln2_b"] = np.zeros(d)
        aux.params = p
        return aux

    def param_names(self) -> list:
        names = ["in_w", "in_b", "final_w", "final_b"]
        for i in range(LAYERS):
            names.extend(_layer_names(i))
        return names

    def zero_weights(self) -> None:
        for k in self.params:
            self.params[k] = np.zeros_like(ad.val(self.params[k]))


def _layernorm(x, gamma, beta):
    mu = ad.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.mean(ad.square(xc), axis=-1, keepdims=True)
    return (xc / ad.sqrt(var + LN_EPS)) * gamma + beta


def _attention(x, p, pre):
    b, t, d = ad.val(x).shape
    qkv = x @ p[pre + "qkv_w"] + p[pre + "qkv_b"]  # (B, T, 3D)
    qkv = ad.reshape(qkv, (b, t, 3, HEADS, HEAD_DIM))
    qkv = ad.swapaxes(ad.swapaxes(qkv, 1, 2), 2, 3)  # (B, 3, H, T, hd)
    q = ad.getitem(qkv, (slice(None), 0))
    k = ad.getitem(qkv, (slice(None), 1))
    v = ad.getitem(qkv, (slice(None), 2))
    scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(HEAD_DIM))  # (B, H, T, T)
    ctx = ad.softmax(scores, axis=-1) @ v  # (B, H, T, hd)
    ctx = ad.reshape(ad.swapaxes(ctx, 1, 2), (b, t, d))
    return ctx @ p[pre + "out_w"] + p[pre + "out_b"]


def transformer_forward(aux: TransformerAux, temporal_features, timestamps, positions):
    """f' = F(f, gamma(t), gamma(X)); attention runs along the time axis.

    ``temporal_features``: (B, T, 64) or (N, 64) (treated as T = 1).
    ``timestamps``: scalar or (T,) values in [0, 1].
    ``positions``: (B, 3) world positions (detached for encoding).
    Returns the same shape as the input features, bounded in (-1, 1).
    """
    f = temporal_features
    squeeze = ad.val(f).ndim == 2
    if squeeze:
        n = ad.val(f).shape[0]
        f = ad.reshape(f, (n, 1, MODEL_DIM))
    b, t, _ = ad.val(f).shape

    ts = np.atleast_1d(np.asarray(timestamps, dtype=np.float64))
    if ts.shape[0] != t:
        raise ValueError(f"{ts.shape[0]} timestamps for sequence length {t}")
    if not np.all(np.isfinite(ts)):
        raise ValueError("non-finite timestamps")
    t_enc = positional_encode_array(ts[:, None], aux.time_bands)  # (T, 2*bands)
    t_enc = np.broadcast_to(t_enc, (b, t, t_enc.shape[-1]))

    span = np.where(aux.bbox_hi - aux.bbox_lo < 1e-12, 1.0, aux.bbox_hi - aux.bbox_lo)
    x_enc = positional_encode_array((positions - aux.bbox_lo) / span, aux.position_bands)
    x_enc = ad.reshape(x_enc, (b, 1, ad.val(x_enc).shape[-1]))  # broadcast over time
    ones_t = np.ones((1, t, 1))
    x_enc = x_enc * ones_t

    p = aux.params
    x = ad.concatenate([f, t_enc, x_enc], axis=2) @ p["in_w"] + p["in_b"]
    for i in range(LAYERS):
        pre = f"layer{i}."
        x = _layernorm(x + _attention(x, p, pre), p[pre + "ln1_g"], p[pre + "ln1_b"])
        ff = ad.tanh(x @ p[pre + "ff1_w"] + p[pre + "ff1_b"]) @ p[pre + "ff2_w"] + p[pre + "ff2_b"]
        x = _layernorm(x + ff, p[pre + "ln2_g"], p[pre + "ln2_b"])
    out = ad.tanh(x @ p["final_w"] + p["final_b"])
    if squeeze:
        out = ad.reshape(out, (b, MODEL_DIM))
    return out
