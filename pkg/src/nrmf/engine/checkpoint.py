"""Checkpoints: manifest.json plus one NRMF binary blob per parameter."""

import json
import math
from pathlib import Path
from typing import Any

from nrmf.engine.layers import Conv2d, Flatten, Layer, Linear, MaxPool2, ReLU
from nrmf.engine.network import Network
from nrmf.errors import KernelFormatError, NrmfError
from nrmf.kernel_io import read_kernel, write_kernel

MANIFEST_JSON = "manifest.json"
PARAMS_DIR = "params"
FORMAT_NAME = "nrmf-checkpoint"
FORMAT_VERSION = 1


def _blob_name(layer_name: str, key: str) -> str:
    safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in layer_name)
    return f"{PARAMS_DIR}/{safe}.{key}.nrmf"


def _conv_entry(root: Path, conv: Conv2d, provenance: dict | None = None) -> dict[str, Any]:
    entry: dict[str, Any] = {
        "name": conv.name,
        "kind": conv.kind,
        "kernel_shape": list(conv.kernel.shape),
        "stride": conv.stride,
        "pad": conv.pad,
        "params": {},
    }
    for key, value in conv.params().items():
        rel = _blob_name(conv.name, key)
        write_kernel(root / rel, value)
        entry["params"][key] = rel
    if provenance:
        entry["provenance"] = provenance
    return entry


def _layer_entries(root: Path, layer: Layer) -> list[dict[str, Any]]:
    from nrmf.compressor import FactorizedConv

    if isinstance(layer, FactorizedConv):
        return [
            _conv_entry(root, stage, layer.provenance(stage_name))
            for stage_name, stage in layer.stages()
        ]
    if isinstance(layer, Conv2d):
        return [_conv_entry(root, layer)]
    entry: dict[str, Any] = {"name": layer.name, "kind": layer.kind, "params": {}}
    if isinstance(layer, Linear):
        entry["weight_shape"] = list(layer.weight.shape)
        for key, value in layer.params().items():
            rel = _blob_name(layer.name, key)
            write_kernel(root / rel, value)
            entry["params"][key] = rel
    return [entry]


def save_network(net: Network, root: Path) -> Path:
    """Write net under root (created if needed). Returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    layers = []
    for layer in net.layers:
        layers.extend(_layer_entries(root, layer))
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "layers": layers,
    }
    path = root / MANIFEST_JSON
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _load_param(root: Path, entry: dict, key: str, shape: tuple[int, ...]):
    rel = entry["params"].get(key)
    if rel is None:
        return None
    value = read_kernel(root / rel)
    if value.size != math.prod(shape):
        raise KernelFormatError(f"{entry['name']}.{key}: blob has {value.size} values, expected shape {shape}")
    return value.reshape(shape)


def _conv_from_entry(root: Path, entry: dict) -> Conv2d:
    shape = tuple(entry["kernel_shape"])
    kernel = _load_param(root, entry, "kernel", shape)
    bias = _load_param(root, entry, "bias", (shape[3],))
    return Conv2d(entry["name"], kernel, bias, stride=entry.get("stride", 1), pad=entry.get("pad", 0))


def _simple_layer(root: Path, entry: dict) -> Layer:
    kind = entry["kind"]
    if kind == "relu":
        return ReLU(entry["name"])
    if kind == "maxpool2":
        return MaxPool2(entry["name"])
    if kind == "flatten":
        return Flatten(entry["name"])
    if kind == "linear":
        shape = tuple(entry["weight_shape"])
        weight = _load_param(root, entry, "weight", shape)
        bias = _load_param(root, entry, "bias", (shape[1],))
        return Linear(entry["name"], weight, bias)
    raise KernelFormatError(f"unknown layer kind {kind!r} in manifest")


def load_manifest(root: Path) -> dict:
    path = Path(root) / MANIFEST_JSON
    if not path.exists():
        raise KernelFormatError(f"no checkpoint manifest at {path}")
    try:
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
    except (json.JSONDecodeError, OSError) as e:
        raise KernelFormatError(f"unreadable manifest {path}: {e}") from e
    if manifest.get("format") != FORMAT_NAME:
        raise KernelFormatError(f"{path} is not an nrmf checkpoint")
    return manifest


def load_network(root: Path) -> Network:
    """Rebuild a network; conv stages sharing a provenance source regroup into one FactorizedConv."""
    root = Path(root)
    manifest = load_manifest(root)
    try:
        return _build_network(root, manifest)
    except NrmfError:
        raise
    except KeyError as e:
        raise KernelFormatError(f"{root / MANIFEST_JSON}: manifest entry missing {e.args[0]!r}") from e
    except (AttributeError, TypeError, ValueError) as e:
        raise KernelFormatError(f"{root / MANIFEST_JSON}: malformed manifest entry: {e}") from e


def _build_network(root: Path, manifest: dict) -> Network:
    from nrmf.compressor import FactorizedConv

    layers: list[Layer] = []
    pending: list[tuple[dict, Conv2d]] = []

    def flush():
        if not pending:
            return
        if len(pending) != 3:
            raise KernelFormatError(f"factorized layer {pending[0][0]['source_layer']!r} needs three stages")
        prov = pending[0][0]
        layers.append(
            FactorizedConv(
                prov["source_layer"],
                first=pending[0][1],
                mid=pending[1][1],
                last=pending[2][1],
                method=prov.get("method", ""),
            )
        )
        pending.clear()

    for entry in manifest["layers"]:
        prov = entry.get("provenance")
        if prov is not None:
            if pending and pending[0][0]["source_layer"] != prov["source_layer"]:
                flush()
            pending.append((prov, _conv_from_entry(root, entry)))
            continue
        flush()
        if entry["kind"] == "conv2d":
            layers.append(_conv_from_entry(root, entry))
        else:
            layers.append(_simple_layer(root, entry))
    flush()
    return Network(layers, tuple(manifest["input_shape"]), manifest["num_classes"])
