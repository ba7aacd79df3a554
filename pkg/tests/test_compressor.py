import logging

import numpy as np
import pytest

from nrmf.compressor import (
    SOURCE_SWAP,
    CompressionReport,
    FactorizedConv,
    ReportRow,
    compress_network,
    count_params,
    factorize_layer,
    format_count,
    format_with_ratio,
    rank_swap,
)
from nrmf.engine.layers import Conv2d
from nrmf.errors import MissingRankError, RankError, UnknownLayerError
from nrmf.rank_selection import METHOD_VBMF, RankPair

# ResNet18 layer compressions: (D, S, T, R3, R4, dense, compressed, display).
RESNET18_ROWS = [
    ("conv1 VBMF", 3, 256, 256, 168, 176, 589_824, 354_176, "354.18K (×1.67)"),
    ("conv1 NRMF", 3, 256, 256, 144, 141, 589_824, 255_696, "255.70K (×2.31)"),
    ("conv2 VBMF", 3, 256, 512, 194, 275, 1_179_648, 670_614, "670.61K (×1.76)"),
    ("conv2 NRMF", 3, 256, 512, 222, 299, 1_179_648, 807_322, "807.32K (×1.46)"),
    ("conv3 VBMF", 3, 512, 512, 332, 328, 2_359_296, 1_317_984, "1.32M (×1.79)"),
    ("conv3 NRMF", 3, 512, 512, 292, 212, 2_359_296, 815_184, "815.18K (×2.89)"),
    ("conv4 VBMF", 3, 512, 512, 348, 342, 2_359_296, 1_424_424, "1.42M (×1.66)"),
    ("conv4 NRMF", 3, 512, 512, 160, 69, 2_359_296, 216_608, "216.61K (×10.89)"),
    ("conv5 VBMF", 3, 512, 512, 382, 392, 2_359_296, 1_743_984, "1.74M (×1.35)"),
    ("conv5 NRMF", 3, 512, 512, 31, 39, 2_359_296, 46_721, "46.72K (×50.50)"),
]


@pytest.mark.parametrize("label,d,s,t,r3,r4,dense,compressed,display", RESNET18_ROWS)
def test_resnet18_parameter_counts(label, d, s, t, r3, r4, dense, compressed, display):
    assert count_params((d, s, t)) == dense
    assert count_params((d, s, t, r3, r4)) == compressed
    assert format_with_ratio(dense, compressed) == display


def test_manual_last_two_layer_ranks():
    assert count_params((3, 512, 512, 30, 6)) == 20_052
    assert count_params((3, 512, 512, 6, 31)) == 20_618


def test_format_count():
    assert format_count(589_824) == "589.82K"
    assert format_count(1_179_648) == "1.18M"
    assert format_count(2_359_296) == "2.36M"
    assert format_count(512) == "512"


def test_count_params_of_layers(rng):
    conv = Conv2d("c", rng.normal(size=(3, 3, 4, 6)), np.zeros(6))
    assert count_params(conv) == 216
    assert count_params(conv, include_bias=True) == 222
    f = factorize_layer(conv, (2, 3))
    assert count_params(f) == 4 * 2 + 9 * 2 * 3 + 3 * 6
    assert count_params(f, include_bias=True) == count_params(f) + 6
    assert f.param_count() == count_params(f, include_bias=True)


def _random_case(rng):
    d = int(rng.choice([1, 3, 5]))
    s, t = (int(v) for v in rng.integers(1, 6, size=2))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    size = int(rng.integers(d, d + 4))
    conv = Conv2d("c", rng.normal(size=(d, d, s, t)), rng.normal(size=t), stride=stride, pad=pad)
    x = rng.normal(size=(2, size, size + 1, s))
    return conv, x


def test_full_rank_factorization_is_equivalent(rng):
    for _ in range(100):
        conv, x = _random_case(rng)
        _, _, s, t = conv.kernel.shape
        f = factorize_layer(conv, (s, t))
        dense, _ = conv.forward(x)
        factored, _ = f.forward(x)
        assert factored.shape == dense.shape
        assert np.linalg.norm(factored - dense) <= 1e-8 * max(np.linalg.norm(dense), 1e-300)


def test_truncated_factorization_applies_reconstructed_kernel(rng):
    conv = Conv2d("c", rng.normal(size=(3, 3, 5, 6)), rng.normal(size=6), pad=1)
    x = rng.normal(size=(2, 6, 6, 5))
    f = factorize_layer(conv, (2, 3))
    expected = Conv2d("r", f.dense_kernel(), conv.bias, pad=1).forward(x)[0]
    np.testing.assert_allclose(f.forward(x)[0], expected, atol=1e-10)
    assert f.ranks == (2, 3)
    assert f.dims == (3, 5, 6)
    assert f.factors().is_orthonormal()


def test_factorized_stage_layout(rng):
    conv = Conv2d("conv3", rng.normal(size=(3, 3, 4, 5)), np.arange(5.0), stride=2, pad=1)
    f = factorize_layer(conv, RankPair("conv3", 4, 5, 2, 3, 0.0, 0.0, 0.9, 0.9, METHOD_VBMF))
    assert f.method == METHOD_VBMF
    assert f.first.kernel.shape == (1, 1, 4, 2) and f.first.bias is None
    assert f.mid.kernel.shape == (3, 3, 2, 3) and (f.mid.stride, f.mid.pad) == (2, 1)
    assert f.last.kernel.shape == (1, 1, 3, 5)
    np.testing.assert_array_equal(f.last.bias, np.arange(5.0))
    assert f.provenance("mid") == {"source_layer": "conv3", "stage": "mid", "ranks": [2, 3], "method": "VBMF"}


def test_factorize_rejects_bad_ranks(rng):
    conv = Conv2d("c", rng.normal(size=(3, 3, 4, 5)))
    for ranks in [(0, 2), (5, 2), (2, 0), (2, 6)]:
        with pytest.raises(RankError):
            factorize_layer(conv, ranks)


def test_rank_swap_growth_pads_zeros(rng):
    conv = Conv2d("c", rng.normal(size=(3, 3, 5, 6)), rng.normal(size=6), pad=1)
    f = factorize_layer(conv, (2, 3))
    grown = rank_swap(f, (4, 5))
    assert grown.ranks == (4, 5)
    np.testing.assert_array_equal(grown.first.kernel[..., 2:], 0.0)
    np.testing.assert_array_equal(grown.mid.kernel[:, :, 2:, :], 0.0)
    np.testing.assert_array_equal(grown.mid.kernel[:, :, :, 3:], 0.0)
    np.testing.assert_array_equal(grown.last.kernel[:, :, 3:, :], 0.0)
    x = rng.normal(size=(1, 5, 5, 5))
    np.testing.assert_allclose(grown.forward(x)[0], f.forward(x)[0], atol=1e-12)


def test_rank_swap_shrink_drops_trailing_channels(rng):
    conv = Conv2d("c", rng.normal(size=(3, 3, 5, 6)))
    f = factorize_layer(conv, (4, 5))
    small = rank_swap(f, (2, 3))
    np.testing.assert_array_equal(small.first.kernel, f.first.kernel[..., :2])
    np.testing.assert_array_equal(small.mid.kernel, f.mid.kernel[:, :, :2, :3])
    np.testing.assert_array_equal(small.last.kernel, f.last.kernel[:, :, :3, :])
    assert f.ranks == (4, 5)


def test_rank_swap_mixed_directions(rng):
    f = factorize_layer(Conv2d("c", rng.normal(size=(3, 3, 5, 6))), (4, 2))
    swapped = rank_swap(f, (1, 6))
    assert swapped.mid.kernel.shape == (3, 3, 1, 6)
    np.testing.assert_array_equal(swapped.mid.kernel[:, :, :, :2], f.mid.kernel[:, :, :1, :])
    with pytest.raises(RankError):
        rank_swap(f, (6, 1))


def test_compress_network_leaves_source_untouched(toy_net):
    before = {name: layer.params()["kernel"].copy() for name, layer in [("conv1", toy_net.layer("conv1")), ("conv2", toy_net.layer("conv2"))]}
    compressed, report = compress_network(toy_net, {"conv1": (1, 2), "conv2": (2, 2)}, method="NRMF")
    for name, kernel in before.items():
        np.testing.assert_array_equal(toy_net.layer(name).kernel, kernel)
        assert isinstance(toy_net.layer(name), Conv2d)
        assert isinstance(compressed.layer(name), FactorizedConv)
    assert isinstance(compressed.layer("proj"), Conv2d)
    assert [row.layer for row in report.rows] == ["conv1", "conv2"]
    assert report.total_original == sum(r.original for r in report.rows) == 54 + 108
    assert report.total_compressed == count_params((3, 2, 3, 1, 2)) + count_params((3, 3, 4, 2, 2))
    assert report.network_params_before == toy_net.param_count()
    assert report.network_params_after == compressed.param_count()
    assert compressed.layer("conv2").method == "NRMF"


def test_compress_network_table_errors(toy_net):
    with pytest.raises(UnknownLayerError):
        compress_network(toy_net, {"conv1": (1, 1), "conv2": (1, 1), "conv9": (1, 1)})
    with pytest.raises(MissingRankError):
        compress_network(toy_net, {"conv2": (1, 1)})
    partial, report = compress_network(toy_net, {"conv2": (1, 1)}, partial=True)
    assert isinstance(partial.layer("conv1"), Conv2d)
    assert [row.layer for row in report.rows] == ["conv2"]


def test_compress_network_swap(toy_net, toy_data):
    x, _ = toy_data
    fresh, _ = compress_network(toy_net, {"conv1": (2, 3), "conv2": (3, 4)})
    swapped, report = compress_network(fresh, {"conv1": (1, 1), "conv2": (2, 2)}, SOURCE_SWAP, method="VBMF")
    assert swapped.layer("conv1").ranks == (1, 1)
    assert swapped.layer("conv2").method == "VBMF"
    assert fresh.layer("conv1").ranks == (2, 3)
    assert len(report.rows) == 2
    assert swapped.logits(x).shape == (24, 3)
    with pytest.raises(ValueError):
        compress_network(toy_net, {}, source="refit")


def test_report_ratio():
    report = CompressionReport(rows=[ReportRow("a", 3, 4, 4, 2, 2, 144, 52), ReportRow("b", 3, 4, 4, 1, 1, 144, 17)])
    assert report.total_original == 288
    assert report.total_compressed == 69
    assert report.ratio == pytest.approx(288 / 69)
    assert report.rows[0].ratio == pytest.approx(144 / 52)


def _random_factorized(r, d: int, s: int, t: int, r3: int, r4: int) -> FactorizedConv:
    return FactorizedConv(
        "conv",
        Conv2d("conv.first", r.normal(size=(1, 1, s, r3))),
        Conv2d("conv.mid", r.normal(size=(d, d, r3, r4)), pad=1),
        Conv2d("conv.last", r.normal(size=(1, 1, r4, t)), r.normal(size=t)),
    )


def test_rank_swap_stage_shapes(rng):
    f = _random_factorized(rng, 3, 128, 256, 128, 256)
    swapped = rank_swap(f, (110, 90))
    assert swapped.first.kernel.shape == (1, 1, 128, 110)
    assert swapped.mid.kernel.shape == (3, 3, 110, 90)
    assert swapped.last.kernel.shape == (1, 1, 90, 256)
    assert swapped.dims == (3, 128, 256)
    assert swapped.mid.pad == 1
    np.testing.assert_array_equal(swapped.mid.kernel, f.mid.kernel[:, :, :110, :90])


def test_rank_swap_pad_then_truncate_is_exact(rng):
    f = _random_factorized(rng, 3, 8, 10, 3, 4)
    back = rank_swap(rank_swap(f, (8, 10)), (3, 4))
    for (_, a), (_, b) in zip(f.stages(), back.stages()):
        np.testing.assert_array_equal(a.kernel, b.kernel)
    np.testing.assert_array_equal(back.last.bias, f.last.bias)


def test_compression_ratio_falls_as_ranks_grow():
    dense = count_params((3, 256, 256))
    ratios = np.array([[dense / count_params((3, 256, 256, r3, r4)) for r4 in range(16, 257, 16)] for r3 in range(16, 257, 16)])
    assert np.all(np.diff(ratios, axis=0) < 0)
    assert np.all(np.diff(ratios, axis=1) < 0)


def test_swap_on_dense_network_is_a_rank_error(toy_net):
    with pytest.raises(RankError):
        compress_network(toy_net, {"conv1": (1, 2)}, SOURCE_SWAP)


def test_non_candidate_entries_are_logged_and_ignored(toy_net, caplog):
    with caplog.at_level(logging.WARNING, logger="nrmf.compressor"):
        compressed, report = compress_network(toy_net, {"conv1": (2, 2), "conv2": (2, 3), "proj": (1, 1)})
    assert "proj: not a fresh candidate" in caplog.text
    assert [row.layer for row in report.rows] == ["conv1", "conv2"]
    np.testing.assert_array_equal(compressed.layer("proj").kernel, toy_net.layer("proj").kernel)
