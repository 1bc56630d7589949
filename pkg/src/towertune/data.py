"""Procedural person-attribute dataset.

Each identity is a unique (shirt color, pants color, accessory) triple.
Images are flat color regions on a patch-aligned grid — accessory swatch in
the top-right corner, shirt across the middle band, pants along the bottom —
plus white noise, so image content is exactly recoverable from the manifest's
render seed.  Captions are templated sentences naming all three attributes.

Manifest records are one JSON line per (image, caption) pair; no pixel data
is ever stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError, InputError
from .rng import SplitRng
from .tokenizer import Tokenizer

SHIRT_COLORS = {
    "red": (0.90, 0.10, 0.10),
    "blue": (0.10, 0.20, 0.90),
    "green": (0.10, 0.80, 0.20),
    "yellow": (0.95, 0.90, 0.10),
    "white": (0.95, 0.95, 0.95),
    "black": (0.05, 0.05, 0.05),
    "purple": (0.60, 0.15, 0.80),
    "orange": (0.95, 0.55, 0.10),
}
PANTS_COLORS = SHIRT_COLORS
ACCESSORIES = {
    "backpack": (0.55, 0.30, 0.10),
    "hat": (0.95, 0.10, 0.85),
    "umbrella": (0.10, 0.85, 0.90),
    "handbag": (0.55, 0.55, 0.05),
    "scarf": (0.95, 0.50, 0.55),
}
BACKGROUND = (0.5, 0.5, 0.5)

CAPTION_TEMPLATES = (
    "a pedestrian wearing a {shirt} shirt and {pants} pants with a {accessory}",
    "a person in a {shirt} shirt and {pants} pants carrying a {accessory}",
    "photo of a person with a {accessory} in a {shirt} shirt and {pants} pants",
    "a person or pedestrian wearing a {shirt} shirt and {pants} pants with a {accessory}",
)

PROMPT_PHRASE = "a photo of a person or a pedestrian"

IMAGE_H, IMAGE_W = 32, 16
_CORNER = (slice(0, 8), slice(8, 16))      # accessory swatch
_SHIRT = (slice(8, 24), slice(0, 16))      # middle band
_PANTS = (slice(24, 32), slice(0, 16))     # bottom band


def vocabulary_words():
    words = set(PROMPT_PHRASE.split())
    for template in CAPTION_TEMPLATES:
        words.update(
            template.format(shirt="x", pants="x", accessory="x").split())
    words.discard("x")
    words.update(SHIRT_COLORS)
    words.update(ACCESSORIES)
    return sorted(words)


def build_tokenizer(max_len: int = 16) -> Tokenizer:
    return Tokenizer(vocabulary_words(), max_len=max_len)


@dataclass(frozen=True)
class SampleRecord:
    identity: int
    image_index: int
    split: str
    render_seed: int
    caption: str
    attributes: tuple  # (shirt, pants, accessory)

    def to_json(self) -> str:
        return json.dumps({
            "identity": self.identity,
            "image_index": self.image_index,
            "split": self.split,
            "render_seed": self.render_seed,
            "caption": self.caption,
            "attributes": list(self.attributes),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SampleRecord":
        d = json.loads(line)
        return cls(d["identity"], d["image_index"], d["split"],
                   d["render_seed"], d["caption"], tuple(d["attributes"]))


def render_image(attributes, render_seed: int, noise_std: float = 0.1) -> np.ndarray:
    """Rebuild the image for a manifest record.

    Noise is additive and unclipped, which keeps region means unbiased
    estimators of the attribute colors.
    """
    shirt, pants, accessory = attributes
    img = np.empty((IMAGE_H, IMAGE_W, 3), dtype=np.float64)
    img[:, :] = BACKGROUND
    img[_CORNER] = ACCESSORIES[accessory]
    img[_SHIRT] = SHIRT_COLORS[shirt]
    img[_PANTS] = PANTS_COLORS[pants]
    if noise_std > 0:
        rng = np.random.Generator(np.random.PCG64(render_seed))
        img += rng.normal(0.0, noise_std, size=img.shape)
    return img


def parse_caption_attributes(caption: str) -> tuple:
    """Recover the (shirt, pants, accessory) triple from caption text."""
    words = caption.split()
    shirt = pants = accessory = None
    for i, word in enumerate(words):
        nxt = words[i + 1] if i + 1 < len(words) else None
        if nxt == "shirt" and word in SHIRT_COLORS:
            shirt = word
        elif nxt == "pants" and word in PANTS_COLORS:
            pants = word
        elif word in ACCESSORIES:
            accessory = word
    if None in (shirt, pants, accessory):
        raise InputError(f"caption does not name all attributes: {caption!r}")
    return shirt, pants, accessory


@dataclass
class Dataset:
    records: list
    n_identities: int
    images_per_id: int
    captions_per_image: int
    noise_std: float
    seed: int

    @property
    def n_images(self) -> int:
        return self.n_identities * self.images_per_id

    @property
    def n_captions(self) -> int:
        return self.n_images * self.captions_per_image

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def write_manifest(self, path) -> None:
        with open(path, "w") as f:
            for r in self.records:
                f.write(r.to_json() + "\n")

    @classmethod
    def read_manifest(cls, path, n_identities, images_per_id,
                      captions_per_image, noise_std, seed) -> "Dataset":
        with open(path) as f:
            records = [SampleRecord.from_json(line) for line in f
                       if line.strip()]
        return cls(records, n_identities, images_per_id, captions_per_image,
                   noise_std, seed)


def generate_dataset(n_identities: int, images_per_id: int,
                     captions_per_image: int, seed: int,
                     splits=None, noise_std: float = 0.1) -> Dataset:
    """Deterministically draw identities and emit every sample record.

    Identities get pairwise-distinct (shirt, pants) outfits — the two large
    image regions always suffice to separate them — with the accessory drawn
    freely as a redundant cue, so the triples stay unique as well.

    ``splits`` maps split name -> images per identity and must sum to
    ``images_per_id``; the default reserves the last image of each identity
    for the test split.
    """
    capacity = len(SHIRT_COLORS) * len(PANTS_COLORS)
    if n_identities > capacity:
        raise CapacityError(
            f"{n_identities} identities requested but only {capacity} "
            f"distinct outfits exist")
    if captions_per_image > len(CAPTION_TEMPLATES):
        raise ConfigError(
            f"{captions_per_image} captions per image exceeds the "
            f"{len(CAPTION_TEMPLATES)} available templates")
    if splits is None:
        if images_per_id < 2:
            raise ConfigError("need at least 2 images per identity to split")
        splits = {"train": images_per_id - 1, "test": 1}
    if sum(splits.values()) != images_per_id:
        raise ConfigError(
            f"split sizes {splits} do not sum to images_per_id={images_per_id}")

    rng = SplitRng(seed)
    outfits = [(s, p) for s in sorted(SHIRT_COLORS)
               for p in sorted(PANTS_COLORS)]
    id_rng = rng.stream("identities")
    chosen = id_rng.choice(len(outfits), size=n_identities, replace=False)
    accessory_names = sorted(ACCESSORIES)
    accessory_picks = id_rng.choice(len(accessory_names), size=n_identities)
    triples = [outfits[int(c)] + (accessory_names[int(a)],)
               for c, a in zip(chosen, accessory_picks)]

    split_of = []
    for name, count in splits.items():
        split_of += [name] * count

    records = []
    caption_rng = rng.stream("captions")
    for identity in range(n_identities):
        attributes = triples[identity]
        for image_index in range(images_per_id):
            render_seed = int(rng.stream(
                f"render.{identity}.{image_index}").integers(0, 2**63 - 1))
            templates = caption_rng.choice(len(CAPTION_TEMPLATES),
                                           size=captions_per_image,
                                           replace=False)
            for t in templates:
                caption = CAPTION_TEMPLATES[int(t)].format(
                    shirt=attributes[0], pants=attributes[1],
                    accessory=attributes[2])
                records.append(SampleRecord(
                    identity=identity,
                    image_index=image_index,
                    split=split_of[image_index],
                    render_seed=render_seed,
                    caption=caption,
                    attributes=attributes,
                ))
    return Dataset(records, n_identities, images_per_id, captions_per_image,
                   noise_std, seed)


# -- batching -----------------------------------------------------------------


@dataclass
class Batch:
    images: np.ndarray      # (B, H, W, 3)
    token_ids: np.ndarray   # (B, max_len)
    identities: np.ndarray  # (B,)


def materialize(records, tokenizer: Tokenizer, noise_std: float) -> Batch:
    images = np.stack([render_image(r.attributes, r.render_seed, noise_std)
                       for r in records])
    token_ids = np.stack([tokenizer.encode(r.caption) for r in records])
    identities = np.array([r.identity for r in records], dtype=np.int64)
    return Batch(images, token_ids, identities)


def sample_batch(records, batch_size: int, rng, tokenizer: Tokenizer,
                 noise_std: float, sampler: str = "uniform",
                 instances_per_id: int = 4) -> Batch:
    """Draw one batch. ``identity-aware`` picks P = B/K identities and K
    pairs from each, so every contrastive row has K positives."""
    if not records:
        raise InputError("cannot sample from an empty record list")
    if sampler == "uniform":
        idx = rng.choice(len(records), size=batch_size,
                         replace=batch_size > len(records))
        picked = [records[int(i)] for i in idx]
    elif sampler == "identity-aware":
        k = instances_per_id
        if batch_size % k:
            raise ConfigError(
                f"batch size {batch_size} not divisible by {k} instances per "
                f"identity")
        by_id: dict[int, list] = {}
        for r in records:
            by_id.setdefault(r.identity, []).append(r)
        eligible = sorted(i for i, rs in by_id.items() if len(rs) >= k)
        p = batch_size // k
        if p > len(eligible):
            raise ConfigError(
                f"need {p} identities with >= {k} samples, have {len(eligible)}")
        ids = rng.choice(len(eligible), size=p, replace=False)
        picked = []
        for i in ids:
            pool = by_id[eligible[int(i)]]
            take = rng.choice(len(pool), size=k, replace=False)
            picked += [pool[int(j)] for j in take]
    else:
        raise ConfigError(f"unknown sampler {sampler!r}")
    return materialize(picked, tokenizer, noise_std)
