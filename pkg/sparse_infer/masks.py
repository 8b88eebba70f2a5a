"""
Slice masks: which latent rows (hence decoded K x K slices) are exactly zero.
"""
from dataclasses import dataclass
from typing import Dict

import numpy as np

from reparam.latents import LatentTensor


@dataclass
class SliceMask:
    name: str
    mask: np.ndarray
    c_out: int
    c_in: int

    @property
    def zero_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def nonzero_count(self) -> int:
        return self.mask.size - self.zero_count

    @property
    def sparsity(self) -> float:
        return self.zero_count / self.mask.size if self.mask.size else 0.0

    def grid(self) -> np.ndarray:
        """(C_out, C_in) view: True where slice (o, i) is zero"""
        return self.mask.reshape(self.c_out, self.c_in)


def slice_mask(latent: LatentTensor) -> SliceMask:
    c_out, c_in = latent.shape[0], latent.shape[1]
    return SliceMask(latent.name, np.all(latent.rounded == 0, axis=1), c_out, c_in)


def masks_for(latents: Dict[str, LatentTensor]) -> Dict[str, SliceMask]:
    return {name: slice_mask(lt) for name, lt in latents.items()}
