import numpy as np
import pytest
import torch

from hrlab.errors import ConfigError, InvalidParameterError
from hrlab.geometry import RigidParams, rigid_to_flow, warp
from hrlab.metrics import reprojection_error
from hrlab.synthdata import (
    RigidRanges,
    TransformSpec,
    invert_field,
    load_pair,
    load_sources,
    make_pair,
    pseudo_modality,
    random_source_image,
    sample_elastic,
    sample_rigid,
    save_pair,
)


def source(seed=0, H=48, W=48):
    return random_source_image(H, W, np.random.default_rng(seed))


class TestSampleRigid:
    def test_zero_ranges_give_identity(self):
        p = sample_rigid(np.random.default_rng(0), RigidRanges(0.0, 0.0, 0.0))
        assert p.rotation.item() == 0.0
        assert p.scale.item() == 1.0
        assert p.ty.item() == 0.0 and p.tx.item() == 0.0

    def test_default_rotation_bound_matches_twenty_degrees(self):
        assert RigidRanges().rot_max == pytest.approx(0.349, abs=5e-4)

    def test_statistics_within_bounds_and_centered(self):
        rng = np.random.default_rng(1)
        ranges = RigidRanges()
        rots, scales, tys = [], [], []
        for _ in range(10_000):
            p = sample_rigid(rng, ranges)
            rots.append(p.rotation.item())
            scales.append(p.scale.item())
            tys.append(p.ty.item())
        rots, scales, tys = np.array(rots), np.array(scales), np.array(tys)
        assert rots.min() >= -ranges.rot_max and rots.max() <= ranges.rot_max
        assert scales.min() >= 1 - ranges.scale_max and scales.max() <= 1 + ranges.scale_max
        assert tys.min() >= -ranges.trans_max and tys.max() <= ranges.trans_max
        # uniform mean within 3 sigma of the range center
        for vals, center, halfwidth in ((rots, 0.0, ranges.rot_max), (scales, 1.0, ranges.scale_max), (tys, 0.0, ranges.trans_max)):
            se = (2 * halfwidth / np.sqrt(12)) / np.sqrt(len(vals))
            assert abs(vals.mean() - center) <= 3 * se


class TestSampleElastic:
    def test_alpha_zero_is_zero_field(self):
        f = sample_elastic(0.0, 5.0, 16, 16, np.random.default_rng(0))
        assert f.abs().max().item() == 0.0

    def test_bounded_by_alpha(self):
        f = sample_elastic(35.0, 3.0, 64, 64, np.random.default_rng(1))
        assert f.abs().max().item() <= 35.0
        assert f.shape == (2, 64, 64)

    def test_smoothness_grows_with_sigma(self):
        # lag-1 spatial autocorrelation increases with the smoothing radius
        def lag1_corr(sigma):
            f = sample_elastic(1.0, sigma, 128, 128, np.random.default_rng(2)).numpy()[0]
            a = f[:, :-1].ravel() - f.mean()
            b = f[:, 1:].ravel() - f.mean()
            return float((a * b).sum() / np.sqrt((a**2).sum() * (b**2).sum()))

        assert lag1_corr(35.0) > lag1_corr(2.0) > 0.0

    def test_invalid_sigma(self):
        with pytest.raises(InvalidParameterError):
            sample_elastic(10.0, 0.0, 8, 8, np.random.default_rng(0))


class TestPseudoModality:
    def test_invert_constant(self):
        img = torch.full((1, 8, 8), 0.3)
        out = pseudo_modality(img, "invert")
        assert torch.allclose(out, torch.full((1, 8, 8), 0.7), atol=1e-6)

    def test_gradient_magnitude_on_ramp(self):
        ramp = torch.linspace(0, 1, 16).repeat(16, 1)[None]
        out = pseudo_modality(ramp, "gradient_magnitude")
        slope = 1.0 / 15.0
        assert torch.allclose(out, torch.full((1, 16, 16), slope), atol=1e-6)

    def test_speckle_preserves_edge_positions(self):
        img = torch.zeros(1, 16, 16)
        img[:, :, 8:] = 1.0
        out = pseudo_modality(img, "speckle", seed=3)
        profile = out[0].mean(dim=0)
        jump = torch.argmax(profile[1:] - profile[:-1]).item()
        assert jump == 7  # step between columns 7 and 8, exactly as in the input
        assert not torch.allclose(out, img)

    def test_gamma_blur_keeps_edge_centered(self):
        img = torch.zeros(1, 17, 17)
        img[:, :, 9:] = 1.0
        out = pseudo_modality(img, "gamma_blur")
        diff = (out[0, 8, 1:] - out[0, 8, :-1]).numpy()
        assert int(np.argmax(diff)) == 8  # steepest transition still between cols 8 and 9

    def test_deterministic(self):
        img = source(5)
        a = pseudo_modality(img, "speckle", seed=11)
        b = pseudo_modality(img, "speckle", seed=11)
        assert torch.equal(a, b)

    def test_range_stays_unit_interval(self):
        img = source(6)
        for kind in ("invert", "gamma_blur", "gradient_magnitude", "speckle"):
            out = pseudo_modality(img, kind, seed=1)
            assert out.min().item() >= 0.0 and out.max().item() <= 1.0

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            pseudo_modality(source(0), "sepia")


class TestInvertField:
    def test_rigid_field_inverse_matches_analytic(self):
        p = RigidParams(rotation=0.15, scale=1.05, ty=0.04, tx=-0.03)
        H = W = 48
        fwd = rigid_to_flow(p, H, W)
        inv = invert_field(fwd)
        # analytic inverse of the similarity transform
        s_inv = 1.0 / 1.05
        rot_inv = -0.15
        cos, sin = np.cos(rot_inv), np.sin(rot_inv)
        ty_pix, tx_pix = 0.04 * H, -0.03 * W
        ity = -s_inv * (sin * tx_pix + cos * ty_pix) / H
        itx = -s_inv * (cos * tx_pix - sin * ty_pix) / W
        p_inv = RigidParams(rotation=rot_inv, scale=s_inv, ty=ity, tx=itx)
        ref = rigid_to_flow(p_inv, H, W)
        # compare away from the border where the fixed point iteration resamples cleanly
        err = (inv - ref).abs()[:, 8:-8, 8:-8].max().item()
        assert err < 0.05


class TestMakePair:
    def test_identity_spec_gives_aligned_pair(self):
        spec = TransformSpec(rigid=RigidParams.identity(), elastic_alpha=0.0, elastic_sigma=5.0, seed=0)
        pair = make_pair(source(0), spec)
        assert reprojection_error(pair.gt_field, torch.zeros_like(pair.gt_field)).item() == 0.0
        assert torch.allclose(pair.moving, source(0), atol=1e-6)

    def test_rigid_only_field_is_exact(self):
        p = RigidParams(rotation=0.1, scale=1.02, ty=0.02, tx=0.03)
        spec = TransformSpec(rigid=p, elastic_alpha=0.0, elastic_sigma=5.0, seed=1)
        pair = make_pair(source(1), spec)
        assert torch.allclose(pair.gt_field, rigid_to_flow(p, 48, 48), atol=1e-6)

    def test_registered_image_consistency(self):
        p = RigidParams(rotation=0.12, scale=0.97, ty=-0.03, tx=0.05)
        spec = TransformSpec(rigid=p, elastic_alpha=8.0, elastic_sigma=6.0, seed=2)
        pair = make_pair(source(2), spec)
        rewarp = warp(pair.moving, pair.gt_field)
        assert (rewarp - pair.gt_registered_image).abs().max().item() <= 2e-2
        # and the registered image approximately recovers the source geometry
        assert (pair.gt_registered_image - source(2)).abs().mean().item() <= 2e-2

    def test_determinism(self):
        p = RigidParams(rotation=-0.08, scale=1.04, ty=0.01, tx=-0.04)
        spec = TransformSpec(rigid=p, elastic_alpha=6.0, elastic_sigma=5.0, seed=7)
        a = make_pair(source(3), spec, kind="speckle")
        b = make_pair(source(3), spec, kind="speckle")
        assert torch.equal(a.fixed, b.fixed)
        assert torch.equal(a.moving, b.moving)
        assert torch.equal(a.gt_field, b.gt_field)

    def test_gt_field_finite_and_elastic_bounded(self):
        p = RigidParams(rotation=0.1, scale=1.0, ty=0.0, tx=0.0)
        spec = TransformSpec(rigid=p, elastic_alpha=4.0, elastic_sigma=5.0, seed=4)
        pair = make_pair(source(4), spec)
        assert torch.isfinite(pair.gt_field).all()
        elastic = pair.gt_field - rigid_to_flow(p, 48, 48)
        assert elastic.abs().max().item() <= 4.0 + 1e-5

    def test_modality_tags_differ(self):
        spec = TransformSpec(rigid=RigidParams.identity(), elastic_alpha=0.0, elastic_sigma=5.0)
        pair = make_pair(source(5), spec)
        assert pair.modality_tags[0] != pair.modality_tags[1]


class TestIngestionAndCache:
    def test_load_sources_with_manifest(self, tmp_path):
        from PIL import Image

        for i, name in enumerate(["a.png", "b.png", "c.png"]):
            arr = (np.random.default_rng(i).uniform(0, 1, (20, 20)) * 255).astype(np.uint8)
            Image.fromarray(arr).save(tmp_path / name)
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("a.png\nc.png\n")
        imgs = load_sources(tmp_path, manifest, size=16)
        assert len(imgs) == 2
        assert imgs[0].shape == (1, 16, 16)
        assert imgs[0].min().item() >= 0.0 and imgs[0].max().item() <= 1.0

    def test_load_sources_without_manifest(self, tmp_path):
        from PIL import Image

        Image.fromarray(np.zeros((8, 8), dtype=np.uint8)).save(tmp_path / "z.png")
        imgs = load_sources(tmp_path)
        assert len(imgs) == 1

    def test_empty_dir_raises(self, tmp_path):
        with pytest.raises(ConfigError):
            load_sources(tmp_path)

    def test_pair_cache_round_trip(self, tmp_path):
        p = RigidParams(rotation=0.05, scale=1.01, ty=0.02, tx=-0.01)
        spec = TransformSpec(rigid=p, elastic_alpha=3.0, elastic_sigma=5.0, seed=9)
        pair = make_pair(source(9), spec)
        save_pair(tmp_path / "pair0", pair)
        back = load_pair(tmp_path / "pair0")
        assert torch.equal(back.gt_field, pair.gt_field)
        assert torch.allclose(back.gt_rigid.as_vector(), pair.gt_rigid.as_vector())
        assert (back.fixed - pair.fixed).abs().max().item() <= 1 / 255.0 + 1e-6
        assert (back.moving - pair.moving).abs().max().item() <= 1 / 255.0 + 1e-6
