"""Run configuration: JSON schema validation and object construction.

Unknown fields are rejected everywhere; validation failures raise
``ConfigError`` with one message per offending field so the CLI can print
field-level diagnostics and exit with code 2 before any compute starts.
"""

import hashlib
import json

import jsonschema

from .data import DataConfig, gen_synthetic, load_dataset
from .lossopt import PruneConfig
from .mask import AnnealSchedule
from .netgraph import NetworkSpec, dense, gcn_block, total_prunable

_LAYER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["gcn_block", "dense"]},
        "heads": {"type": "integer", "minimum": 1},
        "channels": {"type": "integer", "minimum": 1},
        "out_dim": {"type": "integer", "minimum": 1},
        "activation": {"enum": ["relu", "identity", "softmax_logits"]},
    },
}

_GENERATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "classes": {"type": "integer", "minimum": 2},
        "sequences_per_class": {"type": "integer", "minimum": 2},
        "joints": {"type": "integer", "minimum": 2},
        "frames": {"type": "integer", "minimum": 1},
        "chunks": {"type": "integer", "minimum": 1},
        "noise_sigma": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "topology": {"enum": ["chain", "star", "knn"]},
        "knn_k": {"type": "integer", "minimum": 1},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["network", "prune", "data"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["layers"],
            "properties": {
                "layers": {"type": "array", "minItems": 2, "items": _LAYER_SCHEMA},
                "freeze_attention": {"type": "boolean"},
            },
        },
        "prune": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 100},
                "target_kept": {"type": "number", "minimum": 0},
                "budget_weight": {"type": "number", "minimum": 0},
                "access_weight": {"type": "number", "minimum": 0},
                "tc_enabled": {"type": "boolean"},
                "anneal": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "t0": {"type": "number", "exclusiveMinimum": 0},
                        "decay": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "t_min": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "binarize_threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "epochs": {"type": "integer", "minimum": 1},
                "warmup_epochs": {"type": "integer", "minimum": 0},
                "ramp_epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "lr0": {"type": "number", "exclusiveMinimum": 0},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "ste_slope": {"type": "number", "exclusiveMinimum": 0},
                "clip_norm": {"type": "number", "exclusiveMinimum": 0},
                "crisp_budget": {"type": "boolean"},
                "gated_budget": {"type": "boolean"},
                "budget_deadband": {"type": "number", "minimum": 0},
                "topo_refresh": {"enum": ["step", "epoch"]},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "generate": _GENERATE_SCHEMA,
                "file": {"type": "string"},
            },
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


def validate_config(config):
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(config), key=lambda e: list(e.path)):
        where = "/".join(str(p) for p in err.path) or "<root>"
        errors.append(f"{where}: {err.message}")
    data = config.get("data", {})
    if isinstance(data, dict) and ("generate" in data) == ("file" in data):
        errors.append("data: exactly one of 'generate' or 'file' is required")
    for i, layer in enumerate(config.get("network", {}).get("layers", []) or []):
        if not isinstance(layer, dict):
            continue
        if layer.get("kind") == "gcn_block":
            if i != 0:
                errors.append(f"network/layers/{i}: gcn_block must be the first layer")
            for key in ("heads", "channels"):
                if key not in layer:
                    errors.append(f"network/layers/{i}: gcn_block requires '{key}'")
            if "out_dim" in layer:
                errors.append(
                    f"network/layers/{i}: gcn_block derives out_dim from nodes*channels"
                )
        elif layer.get("kind") == "dense":
            if "out_dim" not in layer:
                errors.append(f"network/layers/{i}: dense requires 'out_dim'")
    if errors:
        raise ConfigError(errors)


def load_config(path):
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    validate_config(config)
    return config


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def build_dataset(config):
    data = config["data"]
    if "file" in data:
        return load_dataset(data["file"])
    gen = dict(data["generate"])
    gen.setdefault("seed", config.get("seed", 0))
    return gen_synthetic(DataConfig(**gen))


def build_spec(config, dataset):
    net = config["network"]
    channels_in = dataset.signal_channels
    layers = []
    width = None
    entries = net["layers"]
    for i, entry in enumerate(entries):
        terminal = i == len(entries) - 1
        activation = entry.get("activation", "softmax_logits" if terminal else "relu")
        if entry["kind"] == "gcn_block":
            layers.append(
                gcn_block(channels_in, entry["heads"], dataset.joints,
                          entry["channels"], activation)
            )
        else:
            in_dim = width if width is not None else channels_in * dataset.joints
            layers.append(dense(in_dim, entry["out_dim"], activation))
        width = layers[-1].out_dim
    if width != dataset.classes:
        raise ConfigError(
            f"network/layers: terminal out_dim {width} does not match "
            f"{dataset.classes} dataset classes"
        )
    try:
        return NetworkSpec(tuple(layers), freeze_attention=net.get("freeze_attention", False))
    except ValueError as err:
        raise ConfigError(f"network: {err}") from err


def target_from_rate(rate_percent, total):
    return float(round((1.0 - rate_percent / 100.0) * total))


def build_prune_config(config, spec, rate_override=None, tc_override=None):
    prune = dict(config.get("prune", {}))
    anneal = AnnealSchedule(**prune.pop("anneal", {}))
    rate = prune.pop("rate", None)
    if rate_override is not None:
        rate = rate_override
    target = prune.pop("target_kept", None)
    if rate is not None:
        if target is not None:
            raise ConfigError("prune: give either 'rate' or 'target_kept', not both")
        target = target_from_rate(rate, total_prunable(spec))
    if tc_override is not None:
        prune["tc_enabled"] = tc_override
    try:
        return PruneConfig(target_kept=target, anneal=anneal, **prune)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"prune: {err}") from err
