import numpy as np
import pytest

from facediff import conditioning as cond
from facediff import toygen as tg
from facediff.autodiff import Tensor, check_gradients
from facediff.params import ParamStore

CFG = cond.CondConfig()


def _attr_encoder(cfg=CFG, seed=0):
    store = ParamStore()
    return cond.AttributeEncoder(cfg, store, np.random.default_rng(seed)), store


def _vis_encoder(cfg=CFG, seed=0):
    store = ParamStore()
    return cond.VisualEncoder(cfg, store, np.random.default_rng(seed)), store


class TestQuantize:
    def test_extreme_levels(self):
        assert cond.quantize(np.array([0.0]))[0] == 0
        assert cond.quantize(np.array([1.0]))[0] == 255

    def test_extreme_codes_differ(self):
        codes = cond._sinusoid_table(np.array([0.0, 255.0]), CFG.d_cond)
        assert np.linalg.norm(codes[0] - codes[1]) > 0


class TestAttributeEncoder:
    def test_token_count_at_wide_config(self):
        cfg = cond.CondConfig(n_attr=21)
        enc, _ = _attr_encoder(cfg)
        out = enc.encode(np.full((1, 21), 0.5), np.zeros((1, 21), dtype=bool))
        assert out.shape == (1, 21, cfg.d_cond)

    def test_masked_slots_ignore_values(self):
        enc, _ = _attr_encoder()
        mask = np.ones((1, CFG.n_attr), dtype=bool)
        a = enc.encode(np.zeros((1, CFG.n_attr)), mask)
        b = enc.encode(np.random.default_rng(1).random((1, CFG.n_attr)), mask)
        np.testing.assert_array_equal(a.data, b.data)

    def test_partial_mask_changes_only_nothing_unmasked(self):
        enc, _ = _attr_encoder()
        mask = np.zeros((1, CFG.n_attr), dtype=bool)
        mask[0, 3] = True
        v1 = np.full((1, CFG.n_attr), 0.25)
        v2 = v1.copy()
        v2[0, 3] = 0.75   # masked slot, must not matter
        a = enc.encode(v1, mask)
        b = enc.encode(v2, mask)
        np.testing.assert_array_equal(a.data, b.data)

    def test_wrong_width_rejected(self):
        enc, _ = _attr_encoder()
        with pytest.raises(ValueError):
            enc.encode(np.zeros((1, CFG.n_attr + 1)),
                       np.zeros((1, CFG.n_attr + 1), dtype=bool))

    def test_gradients_flow(self):
        cfg = cond.CondConfig(n_attr=3, d_cond=8)
        store = ParamStore(dtype=np.float64)
        enc = cond.AttributeEncoder(cfg, store, np.random.default_rng(2))
        mask = np.array([[False, True, False]])
        vals = np.array([[0.2, 0.0, 0.9]])
        check_gradients(lambda: enc.encode(vals, mask).sum(), store.all())


class TestVisualEncoder:
    def test_token_grid_shape(self):
        enc, _ = _vis_encoder()
        out = enc.encode(np.zeros((1, 4, 64, 64)))
        assert out.shape == (1, CFG.n_vis_tokens, CFG.d_cond)
        assert CFG.n_vis_tokens == 64

    def test_fully_invalid_is_content_independent(self):
        enc, _ = _vis_encoder()
        rng = np.random.default_rng(3)
        s = CFG.image_size
        invalid = np.zeros((s, s), dtype=bool)
        a = cond.VisualCondition(rgb=rng.random((3, s, s)), seg=rng.integers(0, 6, (s, s)),
                                 rgb_valid=invalid, seg_valid=invalid)
        b = cond.VisualCondition(rgb=rng.random((3, s, s)), seg=rng.integers(0, 6, (s, s)),
                                 rgb_valid=invalid, seg_valid=invalid)
        np.testing.assert_array_equal(enc.encode_condition(a).data,
                                      enc.encode_condition(b).data)

    def test_invalid_region_content_invariance(self):
        enc, _ = _vis_encoder()
        rng = np.random.default_rng(4)
        s = CFG.image_size
        valid = np.ones((s, s), dtype=bool)
        valid[:20, :20] = False
        rgb = rng.random((3, s, s)).astype(np.float32)
        seg = rng.integers(0, 6, (s, s))
        rgb2 = rgb.copy()
        rgb2[:, :20, :20] = 0.123
        seg2 = seg.copy()
        seg2[:20, :20] = 5
        a = cond.VisualCondition(rgb=rgb, seg=seg, rgb_valid=valid, seg_valid=valid)
        b = cond.VisualCondition(rgb=rgb2, seg=seg2, rgb_valid=valid, seg_valid=valid)
        np.testing.assert_array_equal(enc.encode_condition(a).data,
                                      enc.encode_condition(b).data)

    def test_resolution_mismatch_rejected(self):
        enc, _ = _vis_encoder()
        with pytest.raises(ValueError):
            enc.encode(np.zeros((1, 4, 32, 32)))

    def test_gradients_flow(self):
        cfg = cond.CondConfig(d_cond=8, image_size=8)
        store = ParamStore(dtype=np.float64)
        enc = cond.VisualEncoder(cfg, store, np.random.default_rng(5))
        raster = np.random.default_rng(6).random((1, 4, 8, 8))
        check_gradients(lambda: enc.encode(raster).sum(), store.all(), rel_tol=1e-3)


class TestRaster:
    def test_invalid_pixels_are_fill_value(self):
        s = 8
        valid = np.zeros((s, s), dtype=bool)
        valid[0, 0] = True
        v = cond.VisualCondition(rgb=np.full((3, s, s), 0.5), seg=np.full((s, s), 2),
                                 rgb_valid=valid, seg_valid=valid)
        r = cond.visual_raster(v)
        assert r[0, 0, 0] == pytest.approx(0.5)
        assert r[3, 0, 0] == pytest.approx(2 / (tg.SEG_CLASSES - 1))
        assert (r[:, 1:, :] == cond.MASK_V).all()

    def test_mismatched_rasters_rejected(self):
        with pytest.raises(ValueError):
            cond.VisualCondition(rgb=np.zeros((3, 8, 8)), seg=np.zeros((4, 4)),
                                 rgb_valid=np.ones((8, 8), dtype=bool),
                                 seg_valid=np.ones((8, 8), dtype=bool))


class TestMasking:
    def setup_method(self):
        self.record = tg.generate_record(0, tg.ToyGenConfig(), seed=21)
        self.policy = cond.MaskingPolicy()

    def test_attr_blanket_rate(self):
        rng = np.random.default_rng(7)
        n = 10_000
        hits = 0
        for _ in range(n):
            attr, _ = cond.apply_masking(self.record, self.policy, rng)
            hits += attr.mask.all()
        assert abs(hits / n - 0.90) <= 0.02

    def test_joint_rate_is_product(self):
        # class-drop off so invalid pixels witness exactly the modality draws
        policy = cond.MaskingPolicy(p_class_drop=0.0)
        rng = np.random.default_rng(8)
        n = 10_000
        joint = 0
        for _ in range(n):
            attr, vis = cond.apply_masking(self.record, policy, rng)
            joint += (attr.mask.all() and (~vis.rgb_valid).any()
                      and (~vis.seg_valid).any())
        assert abs(joint / n - 0.9 ** 3) <= 0.01

    def test_zero_policy_is_identity(self):
        rng = np.random.default_rng(9)
        policy = cond.MaskingPolicy(p_modality_mask=0.0, p_class_drop=0.0)
        attr, vis = cond.apply_masking(self.record, policy, rng)
        assert not attr.mask.any()
        assert vis.rgb_valid.all() and vis.seg_valid.all()
        np.testing.assert_array_equal(vis.rgb, self.record.image)
        np.testing.assert_array_equal(vis.seg, self.record.seg)

    def test_class_drop_removes_every_pixel_of_class(self):
        rng = np.random.default_rng(10)
        policy = cond.MaskingPolicy(p_modality_mask=1.0, p_class_drop=1.0)
        _, vis = cond.apply_masking(self.record, policy, rng)
        # some class present in seg must be wholly invalid in both rasters
        fully_dropped = [c for c in np.unique(self.record.seg)
                         if not vis.rgb_valid[self.record.seg == c].any()
                         and not vis.seg_valid[self.record.seg == c].any()]
        assert fully_dropped

    def test_brush_masks_independent_between_rasters(self):
        rng = np.random.default_rng(11)
        policy = cond.MaskingPolicy(p_modality_mask=1.0, p_class_drop=0.0)
        differing = 0
        for _ in range(20):
            _, vis = cond.apply_masking(self.record, policy, rng)
            if not np.array_equal(vis.rgb_valid, vis.seg_valid):
                differing += 1
        assert differing > 10

    def test_channel_drop_blanks_each_raster_independently(self):
        rng = np.random.default_rng(31)
        policy = cond.MaskingPolicy(p_modality_mask=0.0, p_class_drop=0.0,
                                    p_channel_drop=1.0)
        _, vis = cond.apply_masking(self.record, policy, rng)
        assert not vis.rgb_valid.any() and not vis.seg_valid.any()
        policy = cond.MaskingPolicy(p_modality_mask=0.0, p_class_drop=0.0,
                                    p_channel_drop=0.5)
        states = set()
        for _ in range(200):
            _, vis = cond.apply_masking(self.record, policy, rng)
            states.add((vis.rgb_valid.any(), vis.seg_valid.any()))
        assert states == {(True, True), (True, False),
                          (False, True), (False, False)}

    def test_class_keep_restricts_to_one_class_region(self):
        rng = np.random.default_rng(32)
        policy = cond.MaskingPolicy(p_modality_mask=0.0, p_class_drop=0.0,
                                    p_class_keep=1.0)
        _, vis = cond.apply_masking(self.record, policy, rng)
        np.testing.assert_array_equal(vis.rgb_valid, vis.seg_valid)
        classes = np.unique(self.record.seg[vis.seg_valid])
        assert classes.size == 1
        assert vis.seg_valid.sum() == (self.record.seg == classes[0]).sum()

    def test_class_keep_weights_bias_selection(self):
        rng = np.random.default_rng(33)
        weights = tuple(1.0 if c == tg.SEG_HAIR else 0.0
                        for c in range(cond.SEG_CLASSES))
        policy = cond.MaskingPolicy(p_modality_mask=0.0, p_class_drop=0.0,
                                    p_class_keep=1.0, class_keep_weights=weights)
        _, vis = cond.apply_masking(self.record, policy, rng)
        np.testing.assert_array_equal(vis.seg_valid,
                                      self.record.seg == tg.SEG_HAIR)

    def test_invalid_probability_rejected(self):
        with pytest.raises(ValueError):
            cond.MaskingPolicy(p_modality_mask=1.5)


class TestNullCondition:
    def test_everything_masked(self):
        attr, vis = cond.make_null(CFG)
        assert attr.mask.all()
        assert not vis.rgb_valid.any() and not vis.seg_valid.any()

    def test_null_visual_encodes_like_any_fully_masked(self):
        enc, _ = _vis_encoder()
        _, null_vis = cond.make_null(CFG)
        s = CFG.image_size
        rng = np.random.default_rng(12)
        other = cond.VisualCondition(rgb=rng.random((3, s, s)),
                                     seg=rng.integers(0, 6, (s, s)),
                                     rgb_valid=np.zeros((s, s), dtype=bool),
                                     seg_valid=np.zeros((s, s), dtype=bool))
        np.testing.assert_array_equal(enc.encode_condition(null_vis).data,
                                      enc.encode_condition(other).data)

    def test_condition_drop_rate(self):
        rng = np.random.default_rng(13)
        record = tg.generate_record(1, tg.ToyGenConfig(), seed=21)
        policy = cond.MaskingPolicy()
        base_attr = cond.AttributeCondition(values=record.attrs,
                                            mask=np.zeros(record.attrs.size, dtype=bool))
        base_vis = cond.VisualCondition(rgb=record.image, seg=record.seg,
                                        rgb_valid=np.ones(record.seg.shape, dtype=bool),
                                        seg_valid=np.ones(record.seg.shape, dtype=bool))
        n = 10_000
        a_drop = v_drop = 0
        for _ in range(n):
            attr, vis = cond.condition_drop(base_attr, base_vis, CFG, policy, rng)
            a_drop += attr.mask.all()
            v_drop += not vis.rgb_valid.any()
        assert abs(a_drop / n - 0.20) <= 0.02
        assert abs(v_drop / n - 0.20) <= 0.02


class TestAssemble:
    def test_inference_is_exact_concatenation(self):
        rng = np.random.default_rng(14)
        a = Tensor(rng.random((1, 8, 16)))
        v = Tensor(rng.random((1, 64, 16)))
        out = cond.assemble_condition(a, v, 0.1, inference=True)
        assert out.shape == (1, 72, 16)
        np.testing.assert_array_equal(out.data[:, :8], a.data)
        np.testing.assert_array_equal(out.data[:, 8:], v.data)

    def test_token_counts_add_at_wide_scale(self):
        rng = np.random.default_rng(15)
        a = Tensor(rng.random((1, 21, 16)))
        v = Tensor(rng.random((1, 64, 16)))
        out = cond.assemble_condition(a, v, 0.0, inference=True)
        assert out.shape[1] == 85

    def test_full_dropout_zeroes_everything(self):
        rng = np.random.default_rng(16)
        a = Tensor(np.ones((1, 8, 16)))
        v = Tensor(np.ones((1, 64, 16)))
        out = cond.assemble_condition(a, v, 1.0, rng=np.random.default_rng(0))
        assert (out.data == 0).all()

    def test_training_requires_rng(self):
        a = Tensor(np.ones((1, 8, 16)))
        v = Tensor(np.ones((1, 64, 16)))
        with pytest.raises(ValueError):
            cond.assemble_condition(a, v, 0.1)

    def test_width_mismatch_rejected(self):
        a = Tensor(np.ones((1, 8, 16)))
        v = Tensor(np.ones((1, 64, 8)))
        with pytest.raises(ValueError):
            cond.assemble_condition(a, v, 0.1, inference=True)
