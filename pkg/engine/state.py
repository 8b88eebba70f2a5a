"""
Live model state and its bridges to the .lnx container and to checkpoints.
"""
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from codec.container import CompressedModel, GroupRecord, TensorRecord
from codec.range_coder import decode_tensor, encode_tensor
from entropy_model.density import FactorizedDensity
from entropy_model.pmf import PmfTable, build_pmf_table
from nn_core.model_zoo import ModelZoo
from nn_core.network import Network
from reparam.groups import partition_model
from reparam.latents import DecoderTransform, LatentTensor
from reparam.model import ReparamModel
from utils.errors import CodecError

logger = logging.getLogger(__name__)


@dataclass
class ModelState:
    network: Network
    reparam: ReparamModel
    # frozen PMF tables by group name; filled on first pack
    tables: Dict[str, PmfTable] = field(default_factory=dict)

    def raw_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Uncompressed parameters and buffers in network order"""
        raw: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for leaf in self.network.leaves():
            for k, v in leaf.params.items():
                if k != "weight":
                    raw[leaf.key(k)] = v
            for k, v in leaf.buffers.items():
                raw[leaf.key(k)] = v
        return raw


def build_tables(state: ModelState) -> Dict[str, PmfTable]:
    """Tables for every group, reusing frozen ones"""
    tables = {}
    for group in state.reparam.groups:
        if group.name in state.tables:
            tables[group.name] = state.tables[group.name]
            continue
        if group.density is None:
            raise CodecError(f"group {group.name} has neither a frozen table nor a density")
        symbols = np.concatenate([lt.rounded for lt in state.reparam.group_latents(group)], axis=0)
        tables[group.name] = build_pmf_table(group.density, symbols)
    return tables


def pack_state(state: ModelState, freeze: bool = True) -> CompressedModel:
    """
    Encode a live model into a CompressedModel.

    Args:
        state: Model to encode
        freeze: Keep the tables built here so later packs are byte-identical
    """
    tables = build_tables(state)
    if freeze:
        state.tables.update(tables)
    model = CompressedModel(descriptor=dict(state.network.descriptor or {}))
    for gi, group in enumerate(state.reparam.groups):
        table = tables[group.name]
        model.groups.append(GroupRecord(group.name, group.l, group.decoder.psi.astype(np.float32), table))
        for name in group.members:
            lt = state.reparam.latents[name]
            model.tensors.append(TensorRecord(name, gi, tuple(lt.shape), encode_tensor(lt.rounded, table)))
    for key, arr in state.raw_arrays().items():
        model.raw[key] = np.asarray(arr, dtype=np.float32)
    return model


def unpack_state(model: CompressedModel) -> ModelState:
    """
    Rebuild a network from a CompressedModel; latents come back as integers
    and the file's tables stay frozen on the returned state.
    """
    network = ModelZoo.from_descriptor(model.descriptor)
    groups = partition_model(network)
    by_name = {g.name: g for g in groups}
    tables: Dict[str, PmfTable] = {}
    for record in model.groups:
        group = by_name.get(record.name)
        if group is None or group.l != record.l:
            raise CodecError(f"group {record.name} (l={record.l}) does not match the architecture")
        group.decoder = DecoderTransform(record.psi.copy())
        tables[record.name] = record.table
    if set(tables) != set(by_name):
        raise CodecError(f"file groups {sorted(tables)} do not match architecture groups {sorted(by_name)}")

    latents: Dict[str, LatentTensor] = {}
    for t in model.tensors:
        record = model.groups[t.group]
        template = LatentTensor.zeros(t.name, t.shape, network.dtype)
        symbols = decode_tensor(t.payload, record.table, (template.rows, template.l))
        template.surrogate = symbols.astype(network.dtype)
        latents[t.name] = template
    missing = [name for g in groups for name in g.members if name not in latents]
    if missing:
        raise CodecError(f"file lacks latents for layers: {', '.join(missing)}")

    for key, arr in model.raw.items():
        network.set_array(key, arr.copy())
    reparam = ReparamModel(network, groups, latents)
    reparam.decode_into()
    return ModelState(network, reparam, tables)


def decoded_arrays(state: ModelState) -> Dict[str, np.ndarray]:
    """Dense decoded weights plus raw parameters, keyed like Network.parameters()"""
    state.reparam.decode_into()
    arrays = {f"{name}.weight": state.network.layer(name).params["weight"] for name in state.reparam.latents}
    arrays.update(state.raw_arrays())
    return arrays


def checkpoint_arrays(state: ModelState, epoch: int = 0, step: int = 0) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {
        "meta/descriptor": np.array(json.dumps(state.network.descriptor or {}, sort_keys=True)),
        "meta/epoch": np.array(epoch),
        "meta/step": np.array(step),
    }
    for name, lt in state.reparam.latents.items():
        arrays[f"latent/{name}"] = lt.surrogate
    for group in state.reparam.groups:
        arrays[f"psi/{group.name}"] = group.decoder.psi
        if group.density is not None:
            for k, v in group.density.params.items():
                arrays[f"density/{group.name}/{k}"] = v
    for key, arr in state.raw_arrays().items():
        arrays[f"raw/{key}"] = arr
    return arrays


def _density_from_arrays(group_name: str, l: int, arrays: Dict[str, np.ndarray]) -> Optional[FactorizedDensity]:
    prefix = f"density/{group_name}/"
    params = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    if not params:
        return None
    layers = sum(1 for k in params if k.startswith("matrix"))
    filters = tuple(int(params[f"matrix{k}"].shape[1]) for k in range(layers - 1))
    density = FactorizedDensity(l, filters)
    density.load_state(params)
    return density


def state_from_checkpoint(arrays: Dict[str, np.ndarray]) -> ModelState:
    """Rebuild a live state (latents, decoders, densities, raw values) from checkpoint arrays"""
    descriptor = json.loads(str(arrays["meta/descriptor"]))
    network = ModelZoo.from_descriptor(descriptor)
    groups = partition_model(network)
    latents = {}
    for group in groups:
        group.decoder = DecoderTransform(np.array(arrays[f"psi/{group.name}"], dtype=network.dtype))
        group.density = _density_from_arrays(group.name, group.l, arrays)
        for name in group.members:
            lt = LatentTensor.zeros(name, network.layer(name).params["weight"].shape, network.dtype)
            lt.surrogate = np.array(arrays[f"latent/{name}"], dtype=network.dtype)
            latents[name] = lt
    for key, arr in arrays.items():
        if key.startswith("raw/"):
            network.set_array(key[len("raw/"):], np.array(arr))
    reparam = ReparamModel(network, groups, latents)
    reparam.decode_into()
    return ModelState(network, reparam)
