"""Named parameter registry with a frozen/trainable partition."""

from __future__ import annotations

from .autodiff import Tensor
from .errors import IntegrityError


class ParamStore:
    """Ordered map name -> (Tensor, frozen flag).

    The frozen partition is the backbone; the trainable partition is
    everything the optimizer may touch.  Registration order is preserved,
    so iteration is deterministic.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._frozen: dict[str, bool] = {}

    def register(self, name: str, tensor: Tensor, frozen: bool) -> Tensor:
        if name in self._tensors:
            raise IntegrityError(f"duplicate parameter name: {name}")
        tensor.requires_grad = not frozen
        self._tensors[name] = tensor
        self._frozen[name] = bool(frozen)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def is_frozen(self, name: str) -> bool:
        return self._frozen[name]

    def items(self):
        for name, tensor in self._tensors.items():
            yield name, tensor, self._frozen[name]

    def trainable_items(self):
        for name, tensor, frozen in self.items():
            if not frozen:
                yield name, tensor

    def frozen_items(self):
        for name, tensor, frozen in self.items():
            if frozen:
                yield name, tensor

    def zero_grad(self):
        for _, tensor in self.trainable_items():
            tensor.grad = None

    def counts(self) -> dict:
        frozen = sum(t.data.size for _, t in self.frozen_items())
        trainable = sum(t.data.size for _, t in self.trainable_items())
        total = frozen + trainable
        return {
            "frozen": int(frozen),
            "trainable": int(trainable),
            "total": int(total),
            "ratio": trainable / total if total else 0.0,
        }
