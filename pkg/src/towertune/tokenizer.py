"""Whitespace word tokenizer over a closed vocabulary.

Output frame: ``[BOS, word ids..., PAD fill..., EOS]`` with EOS pinned to the
final slot, so the global text feature can always be read at a fixed
position.  Round trip holds for any in-vocabulary text: encode(decode(ids))
returns ids unchanged.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, VocabularyError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
RESERVED = ("<pad>", "<bos>", "<eos>")


class Tokenizer:
    def __init__(self, words, max_len: int = 16):
        if max_len < 3:
            raise InputError(f"max_len {max_len} leaves no room for content")
        self.max_len = max_len
        self.word_to_id: dict[str, int] = {}
        self.id_to_word: dict[int, str] = {}
        for i, word in enumerate(sorted(set(words))):
            if word in RESERVED:
                raise VocabularyError(f"word {word!r} collides with a reserved token")
            self.word_to_id[word] = len(RESERVED) + i
            self.id_to_word[len(RESERVED) + i] = word

    @property
    def vocab_size(self) -> int:
        return len(RESERVED) + len(self.word_to_id)

    def content_ids(self, text: str) -> list[int]:
        """Word ids only — no BOS/EOS/PAD framing."""
        ids = []
        for word in text.lower().split():
            if word not in self.word_to_id:
                raise VocabularyError(f"word {word!r} not in vocabulary")
            ids.append(self.word_to_id[word])
        return ids

    def encode(self, text: str) -> np.ndarray:
        ids = self.content_ids(text)
        if len(ids) + 2 > self.max_len:
            raise InputError(
                f"caption of {len(ids)} words exceeds max length {self.max_len}")
        frame = np.full(self.max_len, PAD_ID, dtype=np.int64)
        frame[0] = BOS_ID
        frame[1:1 + len(ids)] = ids
        frame[-1] = EOS_ID
        return frame

    def decode(self, ids) -> str:
        words = []
        for i in np.asarray(ids).ravel():
            i = int(i)
            if i in (PAD_ID, BOS_ID, EOS_ID):
                continue
            if i not in self.id_to_word:
                raise VocabularyError(f"token id {i} not in vocabulary")
            words.append(self.id_to_word[i])
        return " ".join(words)
