"""Pre-norm transformer encoder blocks with optional parallel bottleneck adapters.

Blocks accept a single sequence ``(L, d)`` or a batch ``(B, L, d)``.  The
attention mask is boolean ``(L, L)`` (True = may attend); it is applied
additively before the softmax with a -1e9 bias, which underflows to exact
zeros after exponentiation, so masked positions contribute nothing, bit
for bit.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .params import ParamStore

MASK_BIAS = -1e9


class AttentionParams:
    """Frozen per-layer attention weights plus the pre-attention LayerNorm."""

    def __init__(self, ln_gamma, ln_beta, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o,
                 heads: int):
        self.ln_gamma = ln_gamma
        self.ln_beta = ln_beta
        self.w_q, self.b_q = w_q, b_q
        self.w_k, self.b_k = w_k, b_k
        self.w_v, self.b_v = w_v, b_v
        self.w_o, self.b_o = w_o, b_o
        self.heads = heads
        self.width = w_q.data.shape[0]
        if self.width % heads != 0:
            raise DimensionError(f"width {self.width} not divisible by {heads} heads")

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d: int, heads: int, rng,
               frozen=True):
        def weight(name):
            t = Tensor(rng.stream(f"{prefix}.{name}").normal(0.0, 0.02, size=(d, d)))
            return store.register(f"{prefix}.{name}", t, frozen=frozen)

        def bias(name):
            return store.register(f"{prefix}.{name}", Tensor(np.zeros(d)), frozen=frozen)

        ln_gamma = store.register(f"{prefix}.ln_gamma", Tensor(np.ones(d)), frozen=frozen)
        ln_beta = store.register(f"{prefix}.ln_beta", Tensor(np.zeros(d)), frozen=frozen)
        return cls(ln_gamma, ln_beta,
                   weight("w_q"), bias("b_q"), weight("w_k"), bias("b_k"),
                   weight("w_v"), bias("b_v"), weight("w_o"), bias("b_o"),
                   heads=heads)


class MlpParams:
    """Frozen per-layer MLP weights plus the pre-MLP LayerNorm."""

    def __init__(self, ln_gamma, ln_beta, w1, b1, w2, b2, activation="quick_gelu"):
        self.ln_gamma = ln_gamma
        self.ln_beta = ln_beta
        self.w1, self.b1 = w1, b1
        self.w2, self.b2 = w2, b2
        self.activation = activation

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d: int, hidden: int, rng,
               activation="quick_gelu", frozen=True):
        w1 = store.register(
            f"{prefix}.w1",
            Tensor(rng.stream(f"{prefix}.w1").normal(0.0, 0.02, size=(d, hidden))),
            frozen=frozen)
        b1 = store.register(f"{prefix}.b1", Tensor(np.zeros(hidden)), frozen=frozen)
        w2 = store.register(
            f"{prefix}.w2",
            Tensor(rng.stream(f"{prefix}.w2").normal(0.0, 0.02, size=(hidden, d))),
            frozen=frozen)
        b2 = store.register(f"{prefix}.b2", Tensor(np.zeros(d)), frozen=frozen)
        ln_gamma = store.register(f"{prefix}.ln_gamma", Tensor(np.ones(d)), frozen=frozen)
        ln_beta = store.register(f"{prefix}.ln_beta", Tensor(np.zeros(d)), frozen=frozen)
        return cls(ln_gamma, ln_beta, w1, b1, w2, b2, activation=activation)


class AdapterParams:
    """Trainable bottleneck adapter: down-projection, ReLU, up-projection.

    Runs in parallel to the MLP on its own LayerNorm and is scaled by a
    per-branch constant ``s``.  The up-projection starts at zero so a fresh
    adapter is an exact identity.
    """

    def __init__(self, ln_gamma, ln_beta, w_down, b_down, w_up, b_up, s: float):
        self.ln_gamma = ln_gamma
        self.ln_beta = ln_beta
        self.w_down, self.b_down = w_down, b_down
        self.w_up, self.b_up = w_up, b_up
        self.s = float(s)
        d, r = w_down.data.shape
        if r >= d:
            raise DimensionError(f"adapter bottleneck r={r} must be < width d={d}")

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d: int, r: int, s: float, rng):
        bound = math.sqrt(6.0 / d)  # Kaiming-uniform for the ReLU fan-in
        w_down = store.register(
            f"{prefix}.w_down",
            Tensor(rng.stream(f"{prefix}.w_down").uniform(-bound, bound, size=(d, r))),
            frozen=False)
        b_down = store.register(f"{prefix}.b_down", Tensor(np.zeros(r)), frozen=False)
        w_up = store.register(f"{prefix}.w_up", Tensor(np.zeros((r, d))), frozen=False)
        b_up = store.register(f"{prefix}.b_up", Tensor(np.zeros(d)), frozen=False)
        ln_gamma = store.register(f"{prefix}.ln_gamma", Tensor(np.ones(d)), frozen=False)
        ln_beta = store.register(f"{prefix}.ln_beta", Tensor(np.zeros(d)), frozen=False)
        return cls(ln_gamma, ln_beta, w_down, b_down, w_up, b_up, s=s)


def mask_bias_tensor(mask: np.ndarray) -> Tensor:
    """Boolean (L, L) mask -> additive bias constant (0 where allowed)."""
    return Tensor(np.where(mask, 0.0, MASK_BIAS))


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def full_mask(length: int) -> np.ndarray:
    return np.ones((length, length), dtype=bool)


def mhsa_block(x: Tensor, params: AttentionParams, mask_bias: Tensor) -> Tensor:
    """Pre-norm residual multi-head self-attention: x + Attn(LN(x))."""
    squeeze = x.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    B, L, d = x.shape
    h = params.heads
    dh = d // h
    if mask_bias.shape != (L, L):
        raise DimensionError(
            f"attention mask shape {mask_bias.shape} does not match length {L}")

    xn = ad.layer_norm(x, params.ln_gamma, params.ln_beta)

    def heads_of(w, b):
        proj = ad.add(ad.matmul(xn, w), b)
        return ad.transpose(ad.reshape(proj, (B, L, h, dh)), (0, 2, 1, 3))

    q = heads_of(params.w_q, params.b_q)
    k = heads_of(params.w_k, params.b_k)
    v = heads_of(params.w_v, params.b_v)

    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    scores = ad.add(scores, mask_bias)
    attn = ad.softmax(scores, axis=-1)
    mixed = ad.matmul(attn, v)
    merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (B, L, d))
    out = ad.add(x, ad.add(ad.matmul(merged, params.w_o), params.b_o))
    if squeeze:
        out = ad.reshape(out, (L, d))
    return out


def _activation(name: str):
    if name == "quick_gelu":
        return ad.quick_gelu
    if name == "gelu":
        return ad.gelu
    if name == "relu":
        return ad.relu
    raise DimensionError(f"unknown activation: {name}")


def adapted_mlp_block(x: Tensor, mlp: MlpParams, adapter: AdapterParams | None) -> Tensor:
    """x + MLP(LN(x)) plus, when an adapter is present, the parallel branch
    s * (ReLU(LN_adapter(x) @ W_down + b_down) @ W_up + b_up)."""
    act = _activation(mlp.activation)
    xn = ad.layer_norm(x, mlp.ln_gamma, mlp.ln_beta)
    hidden = act(ad.add(ad.matmul(xn, mlp.w1), mlp.b1))
    out = ad.add(x, ad.add(ad.matmul(hidden, mlp.w2), mlp.b2))
    if adapter is not None:
        an = ad.layer_norm(x, adapter.ln_gamma, adapter.ln_beta)
        down = ad.relu(ad.add(ad.matmul(an, adapter.w_down), adapter.b_down))
        up = ad.add(ad.matmul(down, adapter.w_up), adapter.b_up)
        out = ad.add(out, ad.scale(up, adapter.s))
    return out


def encoder_layer(x: Tensor, attn: AttentionParams, mlp: MlpParams,
                  adapter: AdapterParams | None, mask_bias: Tensor) -> Tensor:
    """One full pre-norm encoder layer; sequence length is preserved."""
    return adapted_mlp_block(mhsa_block(x, attn, mask_bias), mlp, adapter)
