"""Versioned JSON checkpoints for agent pairs.

Parameters are stored as decimal arrays; Python's float repr round-trips
exactly, so a reloaded checkpoint reproduces forward outputs bit for bit
within one implementation.
"""

import json

import numpy as np

from . import nnkit as nn
from .errors import CheckpointError
from .tasks import AgentPair, Network

FORMAT_VERSION = 1

_KINDS = {
    "linear": nn.Linear,
    "leaky_relu": nn.LeakyRelu,
    "layer_norm": nn.LayerNorm,
    "softmax": nn.Softmax,
}


def spec_to_json(spec: nn.NetworkSpec) -> list:
    out = []
    for layer in spec.layers:
        if isinstance(layer, nn.Linear):
            out.append({"kind": "linear", "in": layer.in_dim, "out": layer.out_dim})
        elif isinstance(layer, nn.LeakyRelu):
            out.append({"kind": "leaky_relu", "slope": layer.slope})
        elif isinstance(layer, nn.LayerNorm):
            out.append({"kind": "layer_norm", "dim": layer.dim, "eps": layer.eps})
        else:
            out.append({"kind": "softmax"})
    return out


def spec_from_json(data: list) -> nn.NetworkSpec:
    layers = []
    for entry in data:
        kind = entry.get("kind")
        if kind == "linear":
            layers.append(nn.Linear(entry["in"], entry["out"]))
        elif kind == "leaky_relu":
            layers.append(nn.LeakyRelu(entry["slope"]))
        elif kind == "layer_norm":
            layers.append(nn.LayerNorm(entry["dim"], entry["eps"]))
        elif kind == "softmax":
            layers.append(nn.Softmax())
        else:
            raise CheckpointError(f"unknown layer kind {kind!r}")
    return nn.NetworkSpec(tuple(layers))


def _network_to_json(net: Network) -> dict:
    return {
        "spec": spec_to_json(net.spec),
        "params": {str(k): v.tolist() for k, v in net.params.items()},
    }


def _network_from_json(data: dict) -> Network:
    spec = spec_from_json(data["spec"])
    params = {int(k): np.array(v, dtype=np.float64) for k, v in data["params"].items()}
    return Network(spec, params)


def save_checkpoint(path, agents: AgentPair, task: dict, step: int, seed: int, digest: str):
    payload = {
        "format_version": FORMAT_VERSION,
        "task": task,
        "step": step,
        "seed": seed,
        "config_digest": digest,
        "message_count": agents.message_count,
        "defended_label": agents.defended_label,
        "prover_trunk": _network_to_json(agents.prover_trunk),
        "prover_head": _network_to_json(agents.prover_head),
        "verifier": _network_to_json(agents.verifier),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    """Returns (agents, meta). Raises CheckpointError; never half-loads."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {version!r} needs migration; this build reads {FORMAT_VERSION}"
        )
    try:
        agents = AgentPair(
            prover_trunk=_network_from_json(payload["prover_trunk"]),
            prover_head=_network_from_json(payload["prover_head"]),
            verifier=_network_from_json(payload["verifier"]),
            message_count=payload["message_count"],
            defended_label=payload["defended_label"],
        )
        meta = {
            "task": payload["task"],
            "step": payload["step"],
            "seed": payload["seed"],
            "config_digest": payload["config_digest"],
        }
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"malformed checkpoint {path}: {err}") from err
    return agents, meta
