"""Architecture-level guarantees: mask gating, composition, reproducibility."""

import numpy as np
import pytest
import torch

from maskrestore.masks import (
    GridSpec,
    downsample_mask_nearest,
    make_checkerboard_pair,
    sample_random_mask,
)
from maskrestore.model import (
    ArchConfig,
    MaskAttention,
    RestorationNet,
    build_model,
    compose,
)

SIZES = [8, 16, 32]
CELLS = [4, 8]


class TestArchConfig:
    def test_defaults(self):
        arch = ArchConfig()
        assert arch.resolution == 64
        assert arch.channels == (32, 64, 128, 256)

    def test_round_trip(self):
        arch = ArchConfig(resolution=32, channels=(8, 12, 16, 20), negative_slope=0.2)
        again = ArchConfig.from_dict(arch.to_dict())
        assert again == arch

    def test_dict_is_json_friendly(self):
        import json

        blob = json.dumps(ArchConfig().to_dict(), sort_keys=True)
        assert ArchConfig.from_dict(json.loads(blob)) == ArchConfig()

    @pytest.mark.parametrize("resolution", [0, 7, 12, -8])
    def test_bad_resolution(self, resolution):
        with pytest.raises(ValueError):
            ArchConfig(resolution=resolution)

    @pytest.mark.parametrize("channels", [(32, 64, 128), (32, 64, 128, 0), (1, 2, 3, 4, 5)])
    def test_bad_channels(self, channels):
        with pytest.raises(ValueError):
            ArchConfig(channels=channels)


class TestMaskAttention:
    @pytest.mark.parametrize("size", SIZES)
    @pytest.mark.parametrize("cell", CELLS)
    def test_identity_on_hidden_cells(self, size, cell):
        """Output equals the input feature map wherever the mask is zero."""
        if cell >= size:
            pytest.skip("degenerate single-cell grid")
        torch.manual_seed(size * 10 + cell)
        block = MaskAttention(channels=6)
        feat = torch.randn(2, 6, size, size)
        grid = GridSpec(cell, size, size)
        # checkerboard guarantees both hidden and visible cells exist
        mask = make_checkerboard_pair(grid)[0][None, None]
        mask = mask.expand(2, 1, size, size)
        out = block(feat, mask)
        hidden = mask[:, 0] == 0
        assert hidden.any() and (~hidden).any()
        assert torch.equal(out.permute(0, 2, 3, 1)[hidden], feat.permute(0, 2, 3, 1)[hidden])
        # and it must actually do something on the visible side
        assert not torch.equal(out.permute(0, 2, 3, 1)[~hidden], feat.permute(0, 2, 3, 1)[~hidden])

    def test_identity_survives_downsampling(self):
        """Gating still holds for masks shrunk to feature resolution."""
        torch.manual_seed(0)
        block = MaskAttention(channels=4)
        grid = GridSpec(8, 32, 32)
        full = sample_random_mask(grid, 0.5, rng=np.random.default_rng(9))[None, None]
        small = downsample_mask_nearest(full, 8, 8)
        feat = torch.randn(1, 4, 8, 8)
        out = block(feat, small)
        hidden = small[:, 0] == 0
        assert torch.equal(out.permute(0, 2, 3, 1)[hidden], feat.permute(0, 2, 3, 1)[hidden])

    def test_all_zero_mask_is_full_identity(self):
        torch.manual_seed(1)
        block = MaskAttention(channels=3)
        feat = torch.randn(1, 3, 16, 16)
        out = block(feat, torch.zeros(1, 1, 16, 16))
        assert torch.equal(out, feat)

    def test_spatial_mismatch_rejected(self):
        block = MaskAttention(channels=3)
        with pytest.raises(ValueError):
            block(torch.zeros(1, 3, 16, 16), torch.zeros(1, 1, 8, 8))


class TestCompose:
    @pytest.mark.parametrize("size", SIZES)
    @pytest.mark.parametrize("cell", CELLS)
    def test_exact_selection(self, size, cell):
        """Visible pixels come from the image, hidden ones from the restoration."""
        if cell > size:
            pytest.skip("cell larger than map")
        torch.manual_seed(size + cell)
        image = torch.rand(3, size, size)
        restored = torch.rand(3, size, size)
        grid = GridSpec(cell, size, size)
        for seed in range(6):
            mask = sample_random_mask(grid, 0.5, rng=np.random.default_rng(seed))
            out = compose(image, restored, mask[None])
            visible = mask == 1
            assert torch.equal(out[:, visible], image[:, visible])
            assert torch.equal(out[:, ~visible], restored[:, ~visible])

    @pytest.mark.parametrize("size", SIZES)
    def test_identities(self, size):
        torch.manual_seed(size)
        image = torch.rand(2, 3, size, size)
        restored = torch.rand(2, 3, size, size)
        assert torch.equal(compose(image, restored, torch.ones(2, 1, size, size)), image)
        assert torch.equal(compose(image, restored, torch.zeros(2, 1, size, size)), restored)

    def test_checkerboard_pair_covers_image(self):
        """Composing with both halves of a checkerboard reassembles the image."""
        torch.manual_seed(7)
        image = torch.rand(3, 16, 16)
        restored = torch.rand(3, 16, 16)
        ma, mb = make_checkerboard_pair(GridSpec(4, 16, 16))
        out_a = compose(image, restored, ma[None])
        out_b = compose(image, restored, mb[None])
        # every pixel is visible in exactly one of the two composites
        taken = (out_a == image).all(dim=0) | (out_b == image).all(dim=0)
        assert taken.all()

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            compose(torch.zeros(3, 8, 8), torch.zeros(3, 8, 4), torch.ones(1, 8, 8))
        with pytest.raises(ValueError):
            compose(torch.zeros(3, 8, 8), torch.zeros(3, 8, 8), torch.ones(1, 4, 4))


class TestRestorationNet:
    def test_output_shapes_and_ranges(self):
        model = build_model(ArchConfig(resolution=32, channels=(8, 12, 16, 20)), seed=0)
        model.eval()
        torch.manual_seed(0)
        image = torch.rand(2, 3, 32, 32)
        grid = GridSpec(8, 32, 32)
        mask = sample_random_mask(grid, 0.5, rng=np.random.default_rng(0))[None, None]
        mask = mask.expand(2, 1, 32, 32)
        with torch.no_grad():
            restored, mask_pred = model(image * mask, mask)
        assert restored.shape == (2, 3, 32, 32)
        assert mask_pred.shape == (2, 1, 32, 32)
        for out in (restored, mask_pred):
            assert torch.isfinite(out).all()
            assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_same_seed_same_weights(self):
        a = build_model(seed=3)
        b = build_model(seed=3)
        for (name, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(pa, pb), name

    def test_different_seed_different_weights(self):
        a = build_model(seed=3)
        b = build_model(seed=4)
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.state_dict().values(), b.state_dict().values())
        )

    def test_build_does_not_disturb_global_rng(self):
        torch.manual_seed(123)
        before = torch.rand(4)
        torch.manual_seed(123)
        build_model(seed=99)
        after = torch.rand(4)
        assert torch.equal(before, after)

    def test_forward_is_deterministic(self):
        model = build_model(ArchConfig(resolution=16, channels=(4, 6, 8, 10)), seed=1)
        model.eval()
        torch.manual_seed(5)
        image = torch.rand(1, 3, 16, 16)
        mask = sample_random_mask(GridSpec(4, 16, 16), 0.5, rng=np.random.default_rng(1))
        mask = mask[None, None]
        with torch.no_grad():
            r1, m1 = model(image * mask, mask)
            r2, m2 = model(image * mask, mask)
        assert torch.equal(r1, r2) and torch.equal(m1, m2)

    def test_parameter_count_default(self):
        n = sum(p.numel() for p in build_model().parameters())
        assert 1_000_000 < n < 10_000_000

    def test_wrong_resolution_rejected(self):
        model = build_model(ArchConfig(resolution=32, channels=(4, 6, 8, 10)))
        with pytest.raises(ValueError):
            model(torch.zeros(1, 3, 64, 64), torch.ones(1, 1, 64, 64))

    def test_unbatched_input_rejected(self):
        model = build_model(ArchConfig(resolution=32, channels=(4, 6, 8, 10)))
        with pytest.raises(ValueError):
            model(torch.zeros(3, 32, 32), torch.ones(1, 32, 32))

    def test_bad_mask_shape_rejected(self):
        model = build_model(ArchConfig(resolution=32, channels=(4, 6, 8, 10)))
        with pytest.raises(ValueError):
            model(torch.zeros(1, 3, 32, 32), torch.ones(1, 3, 32, 32))

    def test_hidden_pixels_are_filled_in(self):
        """A trained-from-noise net still outputs nonzero values in hidden cells."""
        model = build_model(ArchConfig(resolution=32, channels=(8, 12, 16, 20)), seed=2)
        model.eval()
        torch.manual_seed(2)
        image = torch.rand(1, 3, 32, 32)
        mask = sample_random_mask(GridSpec(8, 32, 32), 0.5, rng=np.random.default_rng(4))
        mask = mask[None, None]
        with torch.no_grad():
            restored, _ = model(image * mask, mask)
        hidden = mask[0, 0] == 0
        assert float(restored[0, :, hidden].abs().sum()) > 0.0
