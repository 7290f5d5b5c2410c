"""Instance normalization, patching, embedding, and layout conversion."""

import numpy as np
import pytest

from dema import tensor as T
from dema.embedding import (PatchEncoder, TIME_MAJOR, TokenGrid,
                            VARIATE_MAJOR, embed_patches, patch_count,
                            patchify, revin_denormalize, revin_normalize,
                            to_time_major, to_variate_major)
from dema.errors import ConfigError


def test_revin_fixed_point(rng):
    x = rng.standard_normal((3, 96))
    x = (x - x.mean(axis=-1, keepdims=True)) / x.std(axis=-1, keepdims=True)
    normalized, _ = revin_normalize(x)
    assert np.max(np.abs(normalized - x)) <= 1e-9


def test_revin_roundtrip(rng):
    x = rng.standard_normal((4, 64)) * 3.0 + 7.0
    normalized, stats = revin_normalize(x)
    back = revin_denormalize(normalized, stats)
    assert np.max(np.abs(back - x)) <= 1e-9


def test_revin_constant_variate():
    x = np.full((1, 32), 5.0)
    normalized, stats = revin_normalize(x)
    np.testing.assert_array_equal(normalized, 0.0)
    assert stats.std[0] >= 1e-5


def test_revin_denormalize_tensor_path(rng):
    x = rng.standard_normal((2, 48))
    normalized, stats = revin_normalize(x)
    back = revin_denormalize(T.Tensor(normalized), stats)
    assert isinstance(back, T.Tensor)
    assert np.max(np.abs(back.data - x)) <= 1e-9


def test_patch_count_whole_window():
    assert patch_count(10, 10, 1) == 1


def test_patch_count_forced_padding():
    assert patch_count(9, 8, 8) == 2


def test_patch_count_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        patch_count(10, 0, 1)
    with pytest.raises(ConfigError):
        patch_count(4, 8, 8)


def test_patchify_replicates_right_edge():
    x = np.arange(9.0)[None, :]
    patches = patchify(x, 8, 8)
    assert patches.shape == (1, 2, 8)
    np.testing.assert_array_equal(patches[0, 0], np.arange(8.0))
    np.testing.assert_array_equal(patches[0, 1], [8.0] * 8)


def test_patchify_exact_cover(rng):
    x = rng.standard_normal((2, 32))
    patches = patchify(x, 8, 8)
    assert patches.shape == (2, 4, 8)
    np.testing.assert_array_equal(patches.reshape(2, 32), x)


def test_embed_zero_patches_zero_bias():
    enc = PatchEncoder.init(8, 16, np.random.default_rng(0))
    grid = embed_patches(np.zeros((2, 4, 8)), enc, 8, 8)
    np.testing.assert_array_equal(grid.tokens.data, 0.0)


def test_embed_shape_and_determinism(rng):
    enc = PatchEncoder.init(8, 16, np.random.default_rng(1))
    patches = rng.standard_normal((3, 5, 8))
    g1 = embed_patches(patches, enc, 8, 8)
    g2 = embed_patches(patches, enc, 8, 8)
    assert g1.layout == TIME_MAJOR
    assert g1.tokens.shape == (3, 5, 16)
    np.testing.assert_array_equal(g1.tokens.data, g2.tokens.data)
    # identical patches give identical embeddings
    same = np.broadcast_to(patches[0, 0], (1, 2, 8))
    g3 = embed_patches(same, enc, 8, 8)
    np.testing.assert_array_equal(g3.tokens.data[0, 0], g3.tokens.data[0, 1])


def test_layout_roundtrip_bit_identical(rng):
    grid = TokenGrid(TIME_MAJOR, T.Tensor(rng.standard_normal((3, 5, 4))), 8, 8)
    back = to_time_major(to_variate_major(grid))
    np.testing.assert_array_equal(back.tokens.data, grid.tokens.data)


def test_layout_index_law(rng):
    tokens = rng.standard_normal((3, 5, 4))
    grid = TokenGrid(TIME_MAJOR, T.Tensor(tokens), 8, 8)
    vm = to_variate_major(grid)
    assert vm.layout == VARIATE_MAJOR
    for n in range(3):
        for l in range(5):
            np.testing.assert_array_equal(vm.tokens.data[l, n], tokens[n, l])


def test_layout_degenerate_single_variate(rng):
    tokens = rng.standard_normal((1, 5, 4))
    vm = to_variate_major(TokenGrid(TIME_MAJOR, T.Tensor(tokens), 8, 8))
    np.testing.assert_array_equal(vm.tokens.data, np.swapaxes(tokens, 0, 1))
    assert vm.n_variates == 1 and vm.n_tokens == 5


def test_layout_noop_when_already_there(rng):
    grid = TokenGrid(TIME_MAJOR, T.Tensor(rng.standard_normal((2, 3, 4))), 8, 8)
    assert to_time_major(grid) is grid
