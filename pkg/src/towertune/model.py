"""Full dual-encoder assembly: frozen two-tower backbone, prompt bank,
adapters, joint projection, and exact parameter accounting.

The backbone (embeddings, attention, MLPs, final norms, projections) is
frozen; only prompt-bank and adapter tensors train.  ``parameter_plan``
enumerates every tensor's (name, shape, frozen) without allocating data, so
counting a full-scale configuration is instant; construction follows the
same plan order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import (AdapterParams, AttentionParams, MlpParams, causal_mask,
                      encoder_layer, full_mask, mask_bias_tensor)
from .errors import ConfigError, DimensionError, InputError, VocabularyError
from .params import ParamStore
from .prompts import TEXT, VISION, PromptBank, PromptVariant
from .rng import SplitRng
from .tokenizer import BOS_ID, EOS_ID

MLP_WIDTH_FACTOR = 4


@dataclass
class ModelConfig:
    d_text: int = 512
    d_vision: int = 768
    layers: int = 12
    heads_text: int = 8
    heads_vision: int = 12
    vocab_size: int = 49408
    max_text_len: int = 77
    image_h: int = 224
    image_w: int = 224
    patch_size: int = 16
    d_joint: int = 512
    prompt_length: int = 4
    prompt_depth: int = 12
    s_text: float = 4.0
    s_vision: float = 0.1
    adapter_r: int = 64
    use_bpt: bool = True
    use_upt: bool = False
    use_dat: bool = True
    mlp_activation: str = "quick_gelu"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.use_bpt and self.use_upt:
            raise ConfigError("at most one of use_bpt/use_upt may be set")
        if self.prompt_depth > self.layers:
            raise ConfigError(
                f"prompt depth {self.prompt_depth} exceeds {self.layers} layers")
        if self.image_h % self.patch_size or self.image_w % self.patch_size:
            raise ConfigError(
                f"image {self.image_h}x{self.image_w} not divisible by patch "
                f"{self.patch_size}")
        if self.d_text % self.heads_text or self.d_vision % self.heads_vision:
            raise ConfigError("encoder width must be divisible by head count")
        if self.use_dat and self.adapter_r >= min(self.d_text, self.d_vision):
            raise ConfigError(
                f"adapter bottleneck {self.adapter_r} must be below both widths")

    @property
    def n_patches(self) -> int:
        return (self.image_h // self.patch_size) * (self.image_w // self.patch_size)

    @property
    def variant(self) -> PromptVariant:
        if self.use_bpt:
            return PromptVariant.BPT
        if self.use_upt:
            return PromptVariant.UPT
        return PromptVariant.NONE

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


def desk_config(**overrides) -> ModelConfig:
    """Desk-scale reference architecture: small enough to verify in seconds."""
    base = dict(
        d_text=64, d_vision=64, layers=4, heads_text=4, heads_vision=4,
        vocab_size=64, max_text_len=16, image_h=32, image_w=16, patch_size=8,
        d_joint=32, prompt_length=4, prompt_depth=4, s_text=4.0, s_vision=0.1,
        adapter_r=8, use_bpt=True, use_upt=False, use_dat=True, seed=0,
    )
    base.update(overrides)
    return ModelConfig(**base)


def clip_b16_config(**overrides) -> ModelConfig:
    """Configuration shaped like the standard B/16 two-tower backbone."""
    base = dict(
        d_text=512, d_vision=768, layers=12, heads_text=8, heads_vision=12,
        vocab_size=49408, max_text_len=77, image_h=224, image_w=224,
        patch_size=16, d_joint=512, prompt_length=4, prompt_depth=12,
        s_text=4.0, s_vision=0.1, adapter_r=64,
        use_bpt=True, use_upt=False, use_dat=True, seed=0,
    )
    base.update(overrides)
    return ModelConfig(**base)


# -- parameter accounting -----------------------------------------------------


def parameter_plan(cfg: ModelConfig):
    """Yield (name, shape, frozen) for every tensor, in registration order."""

    def attn(prefix, d):
        yield f"{prefix}.ln_gamma", (d,), True
        yield f"{prefix}.ln_beta", (d,), True
        for w in ("q", "k", "v", "o"):
            yield f"{prefix}.w_{w}", (d, d), True
            yield f"{prefix}.b_{w}", (d,), True

    def mlp(prefix, d):
        hidden = MLP_WIDTH_FACTOR * d
        yield f"{prefix}.w1", (d, hidden), True
        yield f"{prefix}.b1", (hidden,), True
        yield f"{prefix}.w2", (hidden, d), True
        yield f"{prefix}.b2", (d,), True
        yield f"{prefix}.ln_gamma", (d,), True
        yield f"{prefix}.ln_beta", (d,), True

    yield "text.token_embedding", (cfg.vocab_size, cfg.d_text), True
    yield "text.pos_embedding", (cfg.max_text_len, cfg.d_text), True
    for i in range(cfg.layers):
        yield from attn(f"text.layers.{i}.attn", cfg.d_text)
        yield from mlp(f"text.layers.{i}.mlp", cfg.d_text)
    yield "text.ln_final.gamma", (cfg.d_text,), True
    yield "text.ln_final.beta", (cfg.d_text,), True
    yield "text.projection", (cfg.d_text, cfg.d_joint), True

    patch_dim = cfg.patch_size * cfg.patch_size * 3
    yield "vision.patch_embedding", (patch_dim, cfg.d_vision), True
    yield "vision.cls_token", (1, cfg.d_vision), True
    yield "vision.pos_embedding", (1 + cfg.n_patches, cfg.d_vision), True
    for i in range(cfg.layers):
        yield from attn(f"vision.layers.{i}.attn", cfg.d_vision)
        yield from mlp(f"vision.layers.{i}.mlp", cfg.d_vision)
    yield "vision.ln_post.gamma", (cfg.d_vision,), True
    yield "vision.ln_post.beta", (cfg.d_vision,), True
    yield "vision.projection", (cfg.d_vision, cfg.d_joint), True

    if cfg.use_dat:
        for branch, d in ((TEXT, cfg.d_text), (VISION, cfg.d_vision)):
            for i in range(cfg.layers):
                prefix = f"adapters.{branch}.{i}"
                yield f"{prefix}.w_down", (d, cfg.adapter_r), False
                yield f"{prefix}.b_down", (cfg.adapter_r,), False
                yield f"{prefix}.w_up", (cfg.adapter_r, d), False
                yield f"{prefix}.b_up", (d,), False
                yield f"{prefix}.ln_gamma", (d,), False
                yield f"{prefix}.ln_beta", (d,), False

    if cfg.variant is not PromptVariant.NONE and cfg.prompt_depth > 0 \
            and cfg.prompt_length > 0:
        for i in range(cfg.prompt_depth):
            yield f"prompts.text.{i}", (cfg.prompt_length, cfg.d_text), False
            yield f"couple.t2v.{i}.weight", (cfg.d_text, cfg.d_vision), False
            yield f"couple.t2v.{i}.bias", (cfg.d_vision,), False
            if cfg.variant is PromptVariant.BPT:
                yield f"prompts.vision.{i}", (cfg.prompt_length, cfg.d_vision), False
                yield f"couple.v2t.{i}.weight", (cfg.d_vision, cfg.d_text), False
                yield f"couple.v2t.{i}.bias", (cfg.d_text,), False


def count_params(cfg: ModelConfig) -> dict:
    """Element counts per partition from the parameter plan (no allocation)."""
    frozen = trainable = 0
    for _, shape, is_frozen in parameter_plan(cfg):
        n = int(np.prod(shape))
        if is_frozen:
            frozen += n
        else:
            trainable += n
    total = frozen + trainable
    return {
        "frozen": frozen,
        "trainable": trainable,
        "total": total,
        "ratio": trainable / total if total else 0.0,
    }


def closed_form_trainable(cfg: ModelConfig) -> int:
    """Algebraic trainable count; must equal the plan enumeration exactly."""
    dt, dv = cfg.d_text, cfg.d_vision
    c, j, r = cfg.prompt_length, cfg.prompt_depth, cfg.adapter_r
    total = 0
    if cfg.variant is PromptVariant.BPT and j > 0 and c > 0:
        total += j * (c * dt + c * dv)
        total += j * ((dt + 1) * dv + (dv + 1) * dt)
    elif cfg.variant is PromptVariant.UPT and j > 0 and c > 0:
        total += j * c * dt
        total += j * (dt + 1) * dv
    if cfg.use_dat:
        total += cfg.layers * ((dt + 1) * r + (r + 1) * dt + 2 * dt
                               + (dv + 1) * r + (r + 1) * dv + 2 * dv)
    return total


# -- the model ---------------------------------------------------------------


@dataclass
class Encoded:
    """One branch's encoder output: final token states and the unit-norm
    joint-space feature."""

    tokens: Tensor
    feature: Tensor


class DualEncoder:
    """Frozen text/image towers with prompt injection and adapters wired in.

    ``phrase_token_ids`` seeds the layer-0 text prompt from the frozen token
    embedding (first C entries, last one repeated if the phrase is short).
    """

    def __init__(self, cfg: ModelConfig, phrase_token_ids=None):
        self.cfg = cfg
        self.store = ParamStore()
        rng = SplitRng(cfg.seed)
        self._masks: dict[tuple[int, bool], Tensor] = {}

        def normal(name, shape, frozen=True):
            t = Tensor(rng.stream(name).normal(0.0, 0.02, size=shape))
            return self.store.register(name, t, frozen=frozen)

        cfg_hidden_t = MLP_WIDTH_FACTOR * cfg.d_text
        cfg_hidden_v = MLP_WIDTH_FACTOR * cfg.d_vision

        self.token_embedding = normal("text.token_embedding",
                                      (cfg.vocab_size, cfg.d_text))
        self.text_pos = normal("text.pos_embedding", (cfg.max_text_len, cfg.d_text))
        self.text_attn = []
        self.text_mlp = []
        for i in range(cfg.layers):
            self.text_attn.append(AttentionParams.create(
                self.store, f"text.layers.{i}.attn", cfg.d_text,
                cfg.heads_text, rng))
            self.text_mlp.append(MlpParams.create(
                self.store, f"text.layers.{i}.mlp", cfg.d_text, cfg_hidden_t,
                rng, activation=cfg.mlp_activation))
        self.text_ln_gamma = self.store.register(
            "text.ln_final.gamma", Tensor(np.ones(cfg.d_text)), frozen=True)
        self.text_ln_beta = self.store.register(
            "text.ln_final.beta", Tensor(np.zeros(cfg.d_text)), frozen=True)
        self.text_proj = normal("text.projection", (cfg.d_text, cfg.d_joint))

        patch_dim = cfg.patch_size * cfg.patch_size * 3
        self.patch_embedding = normal("vision.patch_embedding",
                                      (patch_dim, cfg.d_vision))
        self.cls_token = normal("vision.cls_token", (1, cfg.d_vision))
        self.vision_pos = normal("vision.pos_embedding",
                                 (1 + cfg.n_patches, cfg.d_vision))
        self.vision_attn = []
        self.vision_mlp = []
        for i in range(cfg.layers):
            self.vision_attn.append(AttentionParams.create(
                self.store, f"vision.layers.{i}.attn", cfg.d_vision,
                cfg.heads_vision, rng))
            self.vision_mlp.append(MlpParams.create(
                self.store, f"vision.layers.{i}.mlp", cfg.d_vision, cfg_hidden_v,
                rng, activation=cfg.mlp_activation))
        self.vision_ln_gamma = self.store.register(
            "vision.ln_post.gamma", Tensor(np.ones(cfg.d_vision)), frozen=True)
        self.vision_ln_beta = self.store.register(
            "vision.ln_post.beta", Tensor(np.zeros(cfg.d_vision)), frozen=True)
        self.vision_proj = normal("vision.projection", (cfg.d_vision, cfg.d_joint))

        self.text_adapters: list[AdapterParams | None]
        self.vision_adapters: list[AdapterParams | None]
        if cfg.use_dat:
            self.text_adapters = [
                AdapterParams.create(self.store, f"adapters.text.{i}",
                                     cfg.d_text, cfg.adapter_r, cfg.s_text, rng)
                for i in range(cfg.layers)]
            self.vision_adapters = [
                AdapterParams.create(self.store, f"adapters.vision.{i}",
                                     cfg.d_vision, cfg.adapter_r, cfg.s_vision, rng)
                for i in range(cfg.layers)]
        else:
            self.text_adapters = [None] * cfg.layers
            self.vision_adapters = [None] * cfg.layers

        layer0 = None
        if phrase_token_ids is not None and cfg.variant is not PromptVariant.NONE \
                and cfg.prompt_length > 0 and cfg.prompt_depth > 0:
            layer0 = self._phrase_init(phrase_token_ids)
        self.bank = PromptBank.create(
            self.store, cfg.variant, cfg.prompt_length, cfg.prompt_depth,
            cfg.d_text, cfg.d_vision, rng, text_layer0_init=layer0)

    def _phrase_init(self, token_ids) -> np.ndarray:
        ids = [int(t) for t in token_ids]
        if not ids:
            raise InputError("phrase for prompt initialization is empty")
        rows = [self.token_embedding.data[i] for i in ids[:self.cfg.prompt_length]]
        while len(rows) < self.cfg.prompt_length:
            rows.append(rows[-1])
        return np.stack(rows)

    def _mask(self, length: int, causal: bool) -> Tensor:
        key = (length, causal)
        if key not in self._masks:
            mask = causal_mask(length) if causal else full_mask(length)
            self._masks[key] = mask_bias_tensor(mask)
        return self._masks[key]

    # -- encoding ------------------------------------------------------------

    def encode_text(self, token_ids) -> Encoded:
        """Embed, prompt, run the causal tower, read the EOS state, project."""
        ids = np.asarray(token_ids, dtype=np.int64)
        squeezed = ids.ndim == 1
        if squeezed:
            ids = ids[None, :]
        if ids.shape[1] > self.cfg.max_text_len:
            raise InputError(
                f"sequence length {ids.shape[1]} exceeds {self.cfg.max_text_len}")
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise VocabularyError(
                f"token id outside vocabulary of size {self.cfg.vocab_size}")
        if not (ids == BOS_ID).any(axis=1).all():
            raise InputError("token sequence is missing BOS")
        if not (ids == EOS_ID).any(axis=1).all():
            raise InputError("token sequence is missing EOS")

        pos = narrowed_pos = self.text_pos
        if ids.shape[1] != self.cfg.max_text_len:
            narrowed_pos = ad.narrow(pos, 0, 0, ids.shape[1])
        x = ad.add(ad.embedding_lookup(self.token_embedding, ids), narrowed_pos)
        x = self.bank.build_input(x, TEXT)
        mask = self._mask(x.shape[1], causal=True)
        for i in range(self.cfg.layers):
            if i > 0:
                x = self.bank.reinject(x, i, TEXT)
            x = encoder_layer(x, self.text_attn[i], self.text_mlp[i],
                              self.text_adapters[i], mask)
        x = ad.layer_norm(x, self.text_ln_gamma, self.text_ln_beta)
        eos = ad.reshape(ad.narrow(x, 1, x.shape[1] - 1, 1), (x.shape[0], -1))
        feature = ad.l2_normalize(ad.matmul(eos, self.text_proj))
        if squeezed:
            x = ad.reshape(x, x.shape[1:])
            feature = ad.reshape(feature, (self.cfg.d_joint,))
        return Encoded(tokens=x, feature=feature)

    def _patchify(self, images: np.ndarray) -> np.ndarray:
        p = self.cfg.patch_size
        b, h, w, _ = images.shape
        gh, gw = h // p, w // p
        patches = images.reshape(b, gh, p, gw, p, 3)
        patches = patches.transpose(0, 1, 3, 2, 4, 5)
        return patches.reshape(b, gh * gw, p * p * 3)

    def encode_image(self, images) -> Encoded:
        """Patchify, embed, prompt, run the full-attention tower, read CLS."""
        arr = np.asarray(images, dtype=np.float64)
        squeezed = arr.ndim == 3
        if squeezed:
            arr = arr[None, ...]
        expected = (self.cfg.image_h, self.cfg.image_w, 3)
        if arr.shape[1:] != expected:
            raise DimensionError(
                f"image shape {arr.shape[1:]} does not match {expected}")
        b = arr.shape[0]
        x = ad.matmul(Tensor(self._patchify(arr)), self.patch_embedding)
        cls = ad.expand_batch(self.cls_token, b)
        x = ad.concat([cls, x], axis=1)
        x = ad.add(x, self.vision_pos)
        x = self.bank.build_input(x, VISION)
        mask = self._mask(x.shape[1], causal=False)
        for i in range(self.cfg.layers):
            if i > 0:
                x = self.bank.reinject(x, i, VISION)
            x = encoder_layer(x, self.vision_attn[i], self.vision_mlp[i],
                              self.vision_adapters[i], mask)
        x = ad.layer_norm(x, self.vision_ln_gamma, self.vision_ln_beta)
        cls_row = self.bank.prompt_rows(VISION)
        pooled = ad.reshape(ad.narrow(x, 1, cls_row, 1), (b, -1))
        feature = ad.l2_normalize(ad.matmul(pooled, self.vision_proj))
        if squeezed:
            x = ad.reshape(x, x.shape[1:])
            feature = ad.reshape(feature, (self.cfg.d_joint,))
        return Encoded(tokens=x, feature=feature)


def similarity_matrix(image_features: Tensor, text_features: Tensor) -> Tensor:
    """Cosine similarities, entry (i, j) = <image_i, text_j>; features must
    already be unit-normalized."""
    return ad.matmul(image_features, ad.transpose(text_features))
