import json

import numpy as np
import pytest

from nrmf.compressor import FactorizedConv, compress_network
from nrmf.engine.checkpoint import MANIFEST_JSON, load_manifest, load_network, save_network
from nrmf.errors import KernelFormatError
from nrmf.kernel_io import write_kernel


def test_round_trip_preserves_logits(tmp_path, toy_net, toy_data):
    x, _ = toy_data
    save_network(toy_net, tmp_path / "ckpt")
    loaded = load_network(tmp_path / "ckpt")
    assert [layer.name for layer in loaded.layers] == [layer.name for layer in toy_net.layers]
    np.testing.assert_array_equal(loaded.logits(x), toy_net.logits(x))
    assert loaded.layer("conv1").pad == 1


def test_factorized_layers_regroup(tmp_path, toy_net, toy_data):
    x, _ = toy_data
    compressed, _ = compress_network(toy_net, {"conv1": (1, 2), "conv2": (2, 3)}, method="NRMF")
    save_network(compressed, tmp_path / "ckpt")
    manifest = load_manifest(tmp_path / "ckpt")
    stages = [entry for entry in manifest["layers"] if "provenance" in entry]
    assert [e["provenance"]["stage"] for e in stages] == ["first", "mid", "last"] * 2
    assert stages[4]["provenance"] == {"source_layer": "conv2", "stage": "mid", "ranks": [2, 3], "method": "NRMF"}

    loaded = load_network(tmp_path / "ckpt")
    layer = loaded.layer("conv2")
    assert isinstance(layer, FactorizedConv)
    assert layer.ranks == (2, 3) and layer.method == "NRMF"
    np.testing.assert_array_equal(loaded.logits(x), compressed.logits(x))


def test_saving_is_byte_stable(tmp_path, toy_net):
    save_network(toy_net, tmp_path / "a")
    save_network(toy_net, tmp_path / "b")
    for path in sorted((tmp_path / "a").rglob("*")):
        if path.is_file():
            other = tmp_path / "b" / path.relative_to(tmp_path / "a")
            assert path.read_bytes() == other.read_bytes()


def test_missing_manifest(tmp_path):
    with pytest.raises(KernelFormatError):
        load_network(tmp_path)


def test_foreign_manifest(tmp_path):
    (tmp_path / MANIFEST_JSON).write_text(json.dumps({"format": "other"}), encoding="utf-8")
    with pytest.raises(KernelFormatError):
        load_manifest(tmp_path)


def test_blob_with_wrong_size(tmp_path, toy_net):
    save_network(toy_net, tmp_path)
    manifest = load_manifest(tmp_path)
    rel = manifest["layers"][0]["params"]["kernel"]
    write_kernel(tmp_path / rel, np.zeros((3, 3, 2, 2)))
    with pytest.raises(KernelFormatError):
        load_network(tmp_path)


@pytest.mark.parametrize("key", ["kernel_shape", "kind", "params"])
def test_manifest_entry_missing_a_field(tmp_path, toy_net, key):
    save_network(toy_net, tmp_path)
    path = tmp_path / MANIFEST_JSON
    manifest = json.loads(path.read_text(encoding="utf-8"))
    del manifest["layers"][0][key]
    path.write_text(json.dumps(manifest), encoding="utf-8")
    with pytest.raises(KernelFormatError, match=key):
        load_network(tmp_path)
