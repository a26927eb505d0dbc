import numpy as np
import pytest

from picr.encoder import Encoder, PatchEmbed, PatchMerging, preprocess_depth
from picr.errors import ShapeError
from picr.tensor import Tensor


def small_encoder(seed=0, dim=16, window=4):
    return Encoder(np.random.default_rng(seed), dim, (1, 2, 4, 8), window)


class TestPreprocessDepth:
    def test_affine_normalisation(self, rng):
        d = rng.uniform(500, 1500, size=(1, 6, 5))
        d[0, 0, 0], d[0, 1, 1] = 500, 1500
        out = preprocess_depth(d).data
        assert out.shape == (3, 6, 5)
        np.testing.assert_allclose(out[0], (d[0] - 500) / 1000, rtol=1e-6)
        assert out.min() == 0 and out.max() == 1

    def test_constant_map_is_half(self):
        np.testing.assert_array_equal(preprocess_depth(np.full((1, 4, 4), 7.0)).data, 0.5)

    def test_channels_identical(self, rng):
        out = preprocess_depth(rng.random((2, 1, 4, 4))).data
        assert out.shape == (2, 3, 4, 4)
        np.testing.assert_array_equal(out[:, 0], out[:, 1])
        np.testing.assert_array_equal(out[:, 1], out[:, 2])

    def test_per_sample_ranges(self, rng):
        d = np.stack([rng.random((1, 4, 4)), 100 + 50 * rng.random((1, 4, 4))])
        out = preprocess_depth(d).data
        for b in range(2):
            assert out[b].min() == 0 and out[b].max() == 1

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            preprocess_depth(np.zeros((3, 4, 4)))


class TestPatchLayers:
    def test_patch_embed_grid(self, rng):
        out = PatchEmbed(rng, 3, 8)(Tensor(rng.random((2, 3, 16, 12)).astype(np.float32)))
        assert out.shape == (2, 4, 3, 8)

    def test_patch_embed_is_a_stride4_conv(self, rng):
        pe = PatchEmbed(rng, 3, 4).astype(np.float64)
        pe.norm.weight.data[:] = 1
        x = rng.random((1, 3, 8, 8))
        out = pe.proj(Tensor(x.reshape(1, 3, 2, 4, 2, 4).transpose(0, 2, 4, 1, 3, 5).reshape(1, 2, 2, 48))).data
        # patch (1, 0) covers rows 4..7, cols 0..3, flattened channel-major
        patch = x[0, :, 4:8, 0:4].reshape(-1)
        np.testing.assert_allclose(out[0, 1, 0], patch @ pe.proj.weight.data + pe.proj.bias.data)

    def test_patch_merging_halves_grid(self, rng):
        out = PatchMerging(rng, 8)(Tensor(rng.random((1, 4, 6, 8)).astype(np.float32)))
        assert out.shape == (1, 2, 3, 16)

    def test_patch_merging_odd_grid(self, rng):
        with pytest.raises(ShapeError):
            PatchMerging(rng, 8)(Tensor(np.zeros((1, 3, 4, 8))))


class TestEncoder:
    def test_toy_pyramid_shapes(self, rng):
        enc = small_encoder()
        levels = enc(Tensor(rng.random((1, 3, 64, 64)).astype(np.float32)))
        assert [f.shape for f in levels] == [(1, 16, 16, 16), (1, 8, 8, 32), (1, 4, 4, 64), (1, 2, 2, 128)]

    @pytest.mark.parametrize("size", [64, 128, 224])
    def test_pyramid_contract_for_grid_sizes(self, size, rng):
        enc = Encoder(np.random.default_rng(0), 8, (1, 1, 1, 1), 7)
        levels = enc(Tensor(rng.random((1, 3, size, size)).astype(np.float32)))
        assert [f.shape[1] for f in levels] == [size // 4, size // 8, size // 16, size // 32]
        assert [f.shape[3] for f in levels] == [8, 16, 32, 64]

    def test_identical_inputs_identical_streams(self, rng):
        enc = small_encoder()
        x = Tensor(rng.random((2, 3, 32, 32)).astype(np.float32))
        pr, pd = enc.encode_pair(x, x)
        for a, b in zip(pr.levels, pd.levels):
            np.testing.assert_array_equal(a.data, b.data)

    def test_batch_permutation(self, rng):
        enc = small_encoder()
        x = rng.random((3, 3, 32, 32)).astype(np.float32)
        full = enc(Tensor(x))
        perm = enc(Tensor(x[[2, 0, 1]]))
        for a, b in zip(full, perm):
            np.testing.assert_allclose(b.data, a.data[[2, 0, 1]], atol=1e-6)

    def test_per_sample_matches_batched(self, rng):
        enc = small_encoder()
        x = rng.random((2, 3, 32, 32)).astype(np.float32)
        batched = enc(Tensor(x))[0].data
        single = enc(Tensor(x[1:2]))[0].data
        np.testing.assert_allclose(batched[1:2], single, atol=1e-6)

    def test_size_must_be_multiple_of_32(self, rng):
        with pytest.raises(ShapeError):
            small_encoder()(Tensor(np.zeros((1, 3, 48, 48), np.float32)))

    def test_sharing_is_structural(self, rng):
        enc = small_encoder()
        n_params = enc.num_parameters()
        rgb = Tensor(rng.random((1, 3, 32, 32)).astype(np.float32))
        dep = Tensor(rng.random((1, 3, 32, 32)).astype(np.float32))
        r0, d0 = enc.encode_pair(rgb, dep)
        enc.stages[0].blocks[0].mlp.fc2.bias.data += 0.5
        r1, d1 = enc.encode_pair(rgb, dep)
        assert enc.num_parameters() == n_params
        assert not np.allclose(r0[0].data, r1[0].data)
        assert not np.allclose(d0[0].data, d1[0].data)

    def test_pair_shape_mismatch(self, rng):
        enc = small_encoder()
        with pytest.raises(ShapeError):
            enc.encode_pair(Tensor(np.zeros((1, 3, 32, 32))), Tensor(np.zeros((1, 3, 64, 64))))
