"""
Reparameterized view of a network: per-layer latents plus per-group decoders.
"""
import logging
from typing import Callable, Dict, List, Optional

import numpy as np

from nn_core.network import Network
from reparam.groups import ParameterGroup, partition_model
from reparam.init import init_latents, layer_fan
from reparam.latents import DecoderTransform, LatentTensor, decode, ste_backward

logger = logging.getLogger(__name__)

LATENT_SUFFIX = ".latent"
PSI_SUFFIX = ".psi"


class ReparamModel:
    def __init__(self, network: Network, groups: List[ParameterGroup], latents: Dict[str, LatentTensor]):
        self.network = network
        self.groups = groups
        self.latents = latents
        self._group_of = {name: g for g in groups for name in g.members}

    @classmethod
    def initialize(
        cls,
        network: Network,
        b_min: float,
        rng: np.random.Generator,
        density_factory: Optional[Callable[[int], object]] = None,
    ) -> "ReparamModel":
        """
        Partition the network and draw variance-matched latents and decoders.

        Args:
            network: Network whose compressible weights become decoded views
            b_min: Smallest surrogate half-width
            rng: Initialization generator
            density_factory: Optional callable l -> density attached to each group
        """
        groups = partition_model(network)
        latents: Dict[str, LatentTensor] = {}
        for group in groups:
            fans, shapes = {}, {}
            for name in group.members:
                layer = network.layer(name)
                fans[name] = layer_fan(layer)
                shape = layer.params["weight"].shape
                shapes[name] = (layer.c_out * layer.c_in, group.l)
                latents[name] = LatentTensor.zeros(name, shape, network.dtype)
            surrogates, psi = init_latents(group, fans, shapes, b_min, rng, network.dtype)
            for name, s in surrogates.items():
                latents[name].surrogate = s
            group.decoder = DecoderTransform(psi)
            group.fans = fans
            if density_factory is not None:
                group.density = density_factory(group.l)
        model = cls(network, groups, latents)
        model.decode_into()
        logger.info(f"Reparameterized {len(latents)} layers into {len(groups)} groups "
                    f"({', '.join(f'{g.name}:l={g.l}' for g in groups)})")
        return model

    def group_of(self, layer_name: str) -> ParameterGroup:
        return self._group_of[layer_name]

    def group_latents(self, group: ParameterGroup) -> List[LatentTensor]:
        return [self.latents[name] for name in group.members]

    def group_surrogates(self, group: ParameterGroup) -> np.ndarray:
        """All member surrogates stacked into one (rows, l) matrix"""
        return np.concatenate([lt.surrogate for lt in self.group_latents(group)], axis=0)

    def decode_into(self, network: Optional[Network] = None) -> None:
        """Write decoded weights into the network's layers"""
        network = network or self.network
        for group in self.groups:
            for name in group.members:
                w = decode(self.latents[name], group.decoder)
                network.layer(name).params["weight"] = w.astype(network.dtype, copy=False)
        network.touch()

    def backprop(self, grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """
        Map decoded-weight gradients onto latents and decoders.

        Args:
            grads: Network gradients keyed "<layer>.weight" (others are ignored)

        Returns:
            Gradients keyed by trainable() names; decoder gradients are summed
            over every member of the group
        """
        out: Dict[str, np.ndarray] = {}
        for group in self.groups:
            g_psi = np.zeros_like(group.decoder.psi)
            for name in group.members:
                gw = grads.get(f"{name}.weight")
                if gw is None:
                    continue
                g_hat, g_p = ste_backward(gw, group.decoder, self.latents[name])
                out[name + LATENT_SUFFIX] = g_hat
                g_psi += g_p
            out[group.name + PSI_SUFFIX] = g_psi
        return out

    def trainable(self) -> Dict[str, np.ndarray]:
        """Surrogates, decoders and raw network parameters, as live arrays"""
        params: Dict[str, np.ndarray] = {}
        for name, lt in self.latents.items():
            params[name + LATENT_SUFFIX] = lt.surrogate
        for group in self.groups:
            params[group.name + PSI_SUFFIX] = group.decoder.psi
        params.update(self.network.raw_parameters())
        return params

    def astype(self, dtype) -> "ReparamModel":
        for lt in self.latents.values():
            lt.surrogate = lt.surrogate.astype(dtype)
        for group in self.groups:
            group.decoder = DecoderTransform(group.decoder.psi.astype(dtype))
        self.network.astype(dtype)
        self.decode_into()
        return self
