"""Versioned model checkpoints.

A checkpoint is a single ``.npz`` container holding

- ``meta``: a JSON document with the format version, the network structure
  (layer specs), dropout RNG states, optimizer scalars and any caller metadata;
- ``param_NNN`` arrays: every trainable parameter, flat order matching
  ``network.params()``;
- ``state_<i>_<name>`` arrays: non-trainable layer state (running statistics);
- ``opt_m_NNN`` / ``opt_v_NNN`` arrays when an optimizer is saved.

Loading rebuilds the network from the stored specs, restores all arrays and
RNG states, and returns ``(network, optimizer_or_None, meta_dict)``.
"""

import json

import numpy as np

from .layers import Dropout
from .network import RepetitionNetwork
from .optim import Adam

FORMAT_VERSION = 1


def save_checkpoint(path, network, optimizer=None, extra_meta=None):
    arrays = {}
    for i, p in enumerate(network.params()):
        arrays[f"param_{i:04d}"] = p.value
    stateful = []
    idx = 0
    for layer in network._iter_layers():
        state = layer.state_arrays()
        if state:
            for name, arr in state.items():
                arrays[f"state_{idx}_{name}"] = arr
            stateful.append(idx)
        idx += 1
    rng_states = [
        json.dumps(l.rng_state()) for l in network.dropout_layers()
    ]
    meta = {
        "format_version": FORMAT_VERSION,
        "dtype": str(network.params()[0].value.dtype) if network.params() else "float64",
        "network": network.spec(),
        "dropout_rng_states": rng_states,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": extra_meta or {},
    }
    if optimizer is not None:
        for i, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
            arrays[f"opt_m_{i:04d}"] = m
            arrays[f"opt_v_{i:04d}"] = v
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["format_version"] != FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format version {meta['format_version']}"
            )
        dtype = np.dtype(meta["dtype"])
        network = RepetitionNetwork.from_spec(meta["network"], dtype=dtype)
        for i, p in enumerate(network.params()):
            p.value[...] = data[f"param_{i:04d}"]
        idx = 0
        for layer in network._iter_layers():
            state = layer.state_arrays()
            if state:
                layer.load_state_arrays(
                    {name: data[f"state_{idx}_{name}"] for name in state}
                )
            idx += 1
        for layer, state_json in zip(network.dropout_layers(), meta["dropout_rng_states"]):
            layer.set_rng_state(json.loads(state_json))
        optimizer = None
        if meta["optimizer"] is not None:
            optimizer = Adam(network.params())
            optimizer.load_state_dict(meta["optimizer"])
            for i in range(len(optimizer.params)):
                optimizer.m[i][...] = data[f"opt_m_{i:04d}"]
                optimizer.v[i][...] = data[f"opt_v_{i:04d}"]
    return network, optimizer, meta["extra"]
