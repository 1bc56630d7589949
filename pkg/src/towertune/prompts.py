"""Per-layer learnable prompts for both branches and their cross-branch coupling.

Sequence layout: prompt rows sit at the head of every sequence, ordered
[own-branch prompts, coupled prompts, content rows].  Coupled prompts are
never stored parameters; they are recomputed from the opposite branch's
learnable prompts through that layer's affine coupling map, so gradients
flow across modalities.

Three variants:
  NONE  - no prompts anywhere (zero-shot backbone).
  UPT   - learnable text prompts only; the vision branch receives their
          text-to-vision projection and has no prompts of its own.
  BPT   - learnable prompts in both branches plus coupling maps in both
          directions.
"""

from __future__ import annotations

import enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, VariantError
from .params import ParamStore


class PromptVariant(enum.Enum):
    NONE = "none"
    UPT = "upt"
    BPT = "bpt"


TEXT = "text"
VISION = "vision"


class PromptBank:
    def __init__(self, variant: PromptVariant, length: int, depth: int,
                 d_text: int, d_vision: int):
        self.variant = variant
        self.length = length
        self.depth = depth
        self.d_text = d_text
        self.d_vision = d_vision
        self.text_prompts: list[Tensor] = []
        self.vision_prompts: list[Tensor] = []
        self.couple_t2v: list[tuple[Tensor, Tensor]] = []
        self.couple_v2t: list[tuple[Tensor, Tensor]] = []

    @classmethod
    def create(cls, store: ParamStore, variant: PromptVariant, length: int,
               depth: int, d_text: int, d_vision: int, rng,
               text_layer0_init: np.ndarray | None = None) -> "PromptBank":
        """Allocate and register all prompt tensors for the variant.

        ``text_layer0_init`` seeds the layer-0 text prompt (rows taken from
        the frozen embedding of a fixed phrase); later layers and the vision
        side draw from a 0.02-std normal.
        """
        bank = cls(variant, length, depth, d_text, d_vision)
        if variant is PromptVariant.NONE or depth == 0 or length == 0:
            return bank

        def normal(name, shape):
            return Tensor(rng.stream(name).normal(0.0, 0.02, size=shape))

        for i in range(depth):
            name = f"prompts.text.{i}"
            if i == 0 and text_layer0_init is not None:
                if text_layer0_init.shape != (length, d_text):
                    raise DimensionError(
                        f"layer-0 text prompt init shape {text_layer0_init.shape} "
                        f"!= ({length}, {d_text})")
                t = Tensor(text_layer0_init.copy())
            else:
                t = normal(name, (length, d_text))
            bank.text_prompts.append(store.register(name, t, frozen=False))

            w = f"couple.t2v.{i}.weight"
            b = f"couple.t2v.{i}.bias"
            bank.couple_t2v.append((
                store.register(w, normal(w, (d_text, d_vision)), frozen=False),
                store.register(b, Tensor(np.zeros(d_vision)), frozen=False),
            ))

            if variant is PromptVariant.BPT:
                name = f"prompts.vision.{i}"
                bank.vision_prompts.append(
                    store.register(name, normal(name, (length, d_vision)), frozen=False))
                w = f"couple.v2t.{i}.weight"
                b = f"couple.v2t.{i}.bias"
                bank.couple_v2t.append((
                    store.register(w, normal(w, (d_vision, d_text)), frozen=False),
                    store.register(b, Tensor(np.zeros(d_text)), frozen=False),
                ))
        return bank

    @property
    def active(self) -> bool:
        return self.variant is not PromptVariant.NONE and self.depth > 0 \
            and self.length > 0

    def prompt_rows(self, branch: str) -> int:
        """Number of prompt rows at the head of the branch's sequences."""
        if not self.active:
            return 0
        if self.variant is PromptVariant.BPT:
            return 2 * self.length
        # UPT: own prompts on the text side, coupled-only on the vision side
        return self.length

    def couple(self, i: int, direction: str) -> Tensor:
        """Affine map of the layer-i source-branch prompt into the target width."""
        if direction == "t2v":
            if i >= len(self.couple_t2v):
                raise VariantError(f"t2v coupling not allocated at layer {i}")
            w, b = self.couple_t2v[i]
            return ad.add(ad.matmul(self.text_prompts[i], w), b)
        if direction == "v2t":
            if self.variant is not PromptVariant.BPT or i >= len(self.couple_v2t):
                raise VariantError(
                    f"v2t coupling not allocated under variant {self.variant.value}")
            w, b = self.couple_v2t[i]
            return ad.add(ad.matmul(self.vision_prompts[i], w), b)
        raise VariantError(f"unknown coupling direction: {direction}")

    def _block(self, i: int, branch: str) -> Tensor:
        """[own prompts, coupled prompts] for layer i of one branch."""
        if branch == TEXT:
            if self.variant is PromptVariant.BPT:
                return ad.concat([self.text_prompts[i], self.couple(i, "v2t")], axis=0)
            return self.text_prompts[i]
        if branch == VISION:
            if self.variant is PromptVariant.BPT:
                return ad.concat([self.vision_prompts[i], self.couple(i, "t2v")], axis=0)
            return self.couple(i, "t2v")
        raise VariantError(f"unknown branch: {branch}")

    def build_input(self, content: Tensor, branch: str) -> Tensor:
        """Prepend the layer-0 prompt block to the embedded content rows."""
        if not self.active:
            return content
        block = self._block(0, branch)
        width = self.d_text if branch == TEXT else self.d_vision
        if content.shape[-1] != width:
            raise DimensionError(
                f"{branch} content width {content.shape[-1]} != prompt width {width}")
        if content.ndim == 3:
            block = ad.expand_batch(block, content.shape[0])
            return ad.concat([block, content], axis=1)
        return ad.concat([block, content], axis=0)

    def reinject(self, layer_out: Tensor, layer_index: int, branch: str) -> Tensor:
        """Replace the leading prompt rows with layer-``layer_index`` prompts.

        Past the prompt depth (``layer_index >= depth``) the sequence passes
        through untouched; content rows are never modified.
        """
        if not self.active or layer_index >= self.depth:
            return layer_out
        rows = self.prompt_rows(branch)
        block = self._block(layer_index, branch)
        axis = layer_out.ndim - 2
        content = ad.narrow(layer_out, axis, rows, layer_out.shape[axis] - rows)
        if layer_out.ndim == 3:
            block = ad.expand_batch(block, layer_out.shape[0])
        return ad.concat([block, content], axis=axis)


def build_text_input(content: Tensor, bank: PromptBank) -> Tensor:
    return bank.build_input(content, TEXT)


def build_vision_input(content: Tensor, bank: PromptBank) -> Tensor:
    return bank.build_input(content, VISION)
