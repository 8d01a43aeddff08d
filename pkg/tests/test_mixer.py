import numpy as np
import pytest

from core.clipstore import Clip, Origin
from core.errors import EmptySelectionError, LabelAlignmentError, NoSourceInstancesError, ShapeMismatchError
from core.geometry import Box, coverage, rasterize, resize_box_half
from core.mixer import (
    MixConfig,
    PseudoLabel,
    aim_mix,
    apply_downscale_rule,
    build_mask,
    downscale_clip,
    mix_clips,
    mix_labels,
    select_instances,
)
from tests.factories import make_clip, make_sample


def _anns(boxes, labels=None, origin=Origin.SOURCE_PRIMARY):
    return list(make_sample(boxes, labels, clip=make_clip(H=100, W=100, T=2, value=0), origin=origin).annotations)


class TestSelectInstances:
    def test_single(self, rng):
        anns = _anns([(0, 0, 5, 5)])
        assert select_instances(anns, rng) == anns

    def test_half_rounded_up(self, rng):
        anns = _anns([(i, 0, i + 5, 5) for i in range(4)])
        assert len(select_instances(anns, rng)) == 2
        anns = _anns([(i, 0, i + 5, 5) for i in range(5)])
        chosen = select_instances(anns, rng)
        assert len(chosen) == 3
        assert len({a.instance_id for a in chosen}) == 3

    def test_preserves_order(self, rng):
        anns = _anns([(i, 0, i + 5, 5) for i in range(9)])
        ids = [a.instance_id for a in select_instances(anns, rng)]
        assert ids == sorted(ids)

    def test_deterministic(self):
        anns = _anns([(i, 0, i + 5, 5) for i in range(7)])
        a = select_instances(anns, np.random.default_rng(3))
        b = select_instances(anns, np.random.default_rng(3))
        assert a == b

    def test_empty(self, rng):
        with pytest.raises(EmptySelectionError):
            select_instances([], rng)


class TestBuildMask:
    def test_no_boxes(self):
        assert build_mask([], 0.2, 3, 10, 10).sum() == 0

    def test_full_frame(self):
        assert build_mask([Box(0, 0, 10, 8)], 0.2, 3, 8, 10).all()

    def test_expanded_popcount(self):
        mask = build_mask([Box(40, 40, 60, 60)], 0.2, 4, 100, 100)
        assert mask.shape == (4, 100, 100)
        assert [int(mask[t].sum()) for t in range(4)] == [576] * 4


class TestDownscale:
    def test_triggered_above_half(self):
        source = make_sample([(0, 0, 60, 100)], clip=make_clip(T=2, H=100, W=100, value=80))
        selected = list(source.annotations)
        mask = build_mask([a.box for a in selected], 0.0, 2, 100, 100)
        assert int(mask[1].sum()) == 6000
        new_source, new_selected, new_mask, applied = apply_downscale_rule(source, selected, mask, MixConfig(expand_factor=0.0))
        assert applied
        assert new_selected[0].box == resize_box_half(Box(0, 0, 60, 100), 100, 100)
        assert np.array_equal(new_mask[0], rasterize([new_selected[0].box], 100, 100))

    def test_pass_through_below_half(self):
        source = make_sample([(0, 0, 10, 10)], clip=make_clip(T=2, H=100, W=100, value=80))
        selected = list(source.annotations)
        mask = build_mask([a.box for a in selected], 0.0, 2, 100, 100)
        out_source, out_selected, out_mask, applied = apply_downscale_rule(source, selected, mask, MixConfig(expand_factor=0.0))
        assert not applied
        assert out_source is source
        assert out_selected == selected
        assert out_mask is mask

    def test_disabled(self):
        source = make_sample([(0, 0, 100, 100)], clip=make_clip(T=2, H=100, W=100, value=80))
        mask = build_mask(source.boxes, 0.0, 2, 100, 100)
        *_, applied = apply_downscale_rule(source, list(source.annotations), mask, MixConfig(enable_resize=False))
        assert not applied

    def test_unselected_boxes_transformed(self):
        source = make_sample([(0, 0, 80, 80), (84, 84, 100, 100)], clip=make_clip(T=2, H=100, W=100, value=10))
        selected = [source.annotations[0]]
        mask = build_mask([selected[0].box], 0.0, 2, 100, 100)
        new_source, *_ = apply_downscale_rule(source, selected, mask, MixConfig(expand_factor=0.0))
        assert new_source.annotations[1].box == resize_box_half(Box(84, 84, 100, 100), 100, 100)

    def test_constant_clip_interior_and_border(self):
        out = downscale_clip(make_clip(T=2, H=100, W=100, value=80)).data
        assert np.all(out[:, 25:75, 25:75, :] == 80)
        assert out.sum() == 80 * 2 * 50 * 50 * 3
        assert np.all(out[:, :25] == 0) and np.all(out[:, 75:] == 0)

    def test_paste_region_matches_resized_frame_box(self):
        for H, W in ((100, 100), (37, 51), (8, 9)):
            out = downscale_clip(make_clip(T=1, H=H, W=W, C=1, value=200)).data[0, :, :, 0]
            region = rasterize([resize_box_half(Box(0, 0, W, H), W, H)], W, H)
            assert np.array_equal(out > 0, region.astype(bool))

    def test_mean_pooling_values(self):
        data = np.zeros((1, 2, 2, 1), dtype=np.uint8)
        data[0, :, :, 0] = [[10, 20], [30, 41]]
        out = downscale_clip(Clip(data, 0)).data
        assert out[0, 1, 1, 0] == 25


class TestMixClips:
    def test_mask_zero_is_target(self):
        xs, xt = make_clip(seed=1), make_clip(seed=2)
        mixed = mix_clips(xs, xt, np.zeros((4, 32, 32), dtype=np.uint8))
        assert mixed.same_bytes(xt)

    def test_mask_one_is_source(self):
        xs, xt = make_clip(seed=1), make_clip(seed=2)
        mixed = mix_clips(xs, xt, np.ones((4, 32, 32), dtype=np.uint8))
        assert np.array_equal(mixed.data, xs.data)

    def test_voxel_selection(self, rng):
        for trial in range(1000):
            T, H, W, C = (int(v) for v in rng.integers(1, 6, size=4))
            C = 1 if C < 3 else 3
            xs = Clip(rng.integers(0, 256, size=(T, H, W, C), dtype=np.uint8))
            xt = Clip(rng.integers(0, 256, size=(T, H, W, C), dtype=np.uint8))
            mask = rng.integers(0, 2, size=(T, H, W), dtype=np.uint8)
            mixed = mix_clips(xs, xt, mask).data.astype(np.int64)
            m = mask[..., np.newaxis].astype(np.int64)
            expected = m * xs.data.astype(np.int64) + (1 - m) * xt.data.astype(np.int64)
            assert np.array_equal(mixed, expected)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mix_clips(make_clip(H=8), make_clip(H=9), np.zeros((4, 8, 32), dtype=np.uint8))
        with pytest.raises(ShapeMismatchError):
            mix_clips(make_clip(), make_clip(), np.zeros((4, 8, 8), dtype=np.uint8))


class TestMixLabels:
    def test_worked_example(self):
        cfg = MixConfig(expand_factor=0.2, discard_threshold=0.4)
        source = _anns([(10, 10, 30, 30)], [2])
        targets = _anns([(12, 12, 28, 28), (60, 60, 80, 80)], [5, 5], origin=Origin.TARGET)
        pseudo = [PseudoLabel(1, 0.7), PseudoLabel(0, 0.95)]
        pasted = build_pasted(source, cfg)
        annotations, conf, discarded, discarded_conf = mix_labels(source, targets, pseudo, pasted, cfg)

        assert [(a.box.as_tuple(), a.class_id, a.origin) for a in annotations] == [
            ((10, 10, 30, 30), 2, Origin.SOURCE_PRIMARY),
            ((60, 60, 80, 80), 0, Origin.TARGET),
        ]
        assert conf == [0.95]
        assert len(discarded) == 1 and discarded[0].class_id == 1
        assert discarded_conf == [0.7]

    def test_boundary_kept_at_threshold(self):
        cfg = MixConfig(expand_factor=0.0, discard_threshold=0.4)
        targets = _anns([(0, 0, 10, 10)], origin=Origin.TARGET)
        pasted = [Box(0, 0, 4, 10)]
        assert coverage(targets[0].box, pasted) == pytest.approx(0.4)
        annotations, conf, discarded, _ = mix_labels([], targets, [PseudoLabel(3, 0.5)], pasted, cfg)
        assert len(annotations) == 1 and not discarded

    def test_just_above_threshold_discarded(self):
        cfg = MixConfig(expand_factor=0.0, discard_threshold=0.4)
        targets = _anns([(0, 0, 10, 10)], origin=Origin.TARGET)
        _, _, discarded, _ = mix_labels([], targets, [PseudoLabel(3, 0.5)], [Box(0, 0, 5, 10)], cfg)
        assert len(discarded) == 1

    def test_misaligned_pseudo(self):
        with pytest.raises(LabelAlignmentError):
            mix_labels([], _anns([(0, 0, 5, 5)]), [], [], MixConfig())

    def test_threshold_monotonic(self, rng):
        targets = _anns([(x, y, x + 20, y + 20) for x in range(0, 80, 20) for y in range(0, 80, 20)], origin=Origin.TARGET)
        pseudo = [PseudoLabel(0, 0.5)] * len(targets)
        pasted = [Box(10, 10, 55, 45), Box(50, 60, 70, 90)]
        kept = [
            len(mix_labels([], targets, pseudo, pasted, MixConfig(discard_threshold=t))[1])
            for t in (1.0, 0.8, 0.5, 0.4, 0.2, 0.0)
        ]
        assert kept == sorted(kept, reverse=True)


def build_pasted(source, cfg):
    from core.mixer import expanded_boxes

    return expanded_boxes([a.box for a in source], cfg.expand_factor, 100, 100)


class TestAimMix:
    def _pair(self, source_boxes, target_boxes, H=100, W=100):
        source = make_sample(source_boxes, [1] * len(source_boxes), clip=make_clip(T=2, H=H, W=W, value=200), sample_id="src")
        target = make_sample(
            target_boxes, [0] * len(target_boxes), clip=make_clip(T=2, H=H, W=W, value=50),
            sample_id="tgt", origin=Origin.TARGET,
        )
        return source, target

    def test_full_frame_instance_downscaled(self, rng):
        source, target = self._pair([(0, 0, 100, 100)], [])
        mixed = aim_mix(source, target, [], rng)
        assert mixed.downscaled
        key = mixed.clip.key_frame[:, :, 0]
        assert np.all(key[0, :] == 50) and np.all(key[:, 0] == 50)
        assert np.all(key[50, 50] == 200)
        assert mixed.sample_id == "src+tgt"

    def test_no_discard_possible(self, rng):
        cfg = MixConfig(expand_factor=0.0, discard_threshold=1.0)
        source, target = self._pair([(0, 0, 10, 10)], [(50, 50, 70, 70), (80, 10, 95, 30)])
        pseudo = [PseudoLabel(2, 0.9), PseudoLabel(1, 0.3)]
        mixed = aim_mix(source, target, pseudo, rng, cfg)
        assert len(mixed.annotations) == 3
        assert mixed.discarded_count == 0
        assert [a.class_id for a in mixed.target_annotations] == [2, 1]
        assert mixed.confidences == (0.9, 0.3)

    def test_invariants(self, rng):
        cfg = MixConfig()
        for trial in range(50):
            boxes = [(int(x), int(y), int(x) + 20, int(y) + 20) for x, y in rng.integers(0, 80, size=(3, 2))]
            targets = [(int(x), int(y), int(x) + 15, int(y) + 15) for x, y in rng.integers(0, 85, size=(4, 2))]
            source, target = self._pair(boxes, targets)
            pseudo = [PseudoLabel(int(k), float(c)) for k, c in zip(rng.integers(0, 3, 4), rng.random(4))]
            mixed = aim_mix(source, target, pseudo, rng, cfg)

            assert len(mixed.confidences) == len(mixed.target_annotations)
            assert len(mixed.annotations) + mixed.discarded_count == 2 + 4
            for ann in mixed.annotations:
                assert ann.box.within(100, 100)
            for ann in mixed.target_annotations:
                assert coverage(ann.box, mixed.pasted_boxes) <= cfg.discard_threshold
            for ann in mixed.source_annotations:
                assert ann.class_id == 1

    def test_deterministic(self):
        source, target = self._pair([(5, 5, 30, 30), (40, 40, 60, 60), (70, 10, 90, 30)], [(10, 10, 30, 30)])
        a = aim_mix(source, target, [PseudoLabel(0, 0.9)], np.random.default_rng(8))
        b = aim_mix(source, target, [PseudoLabel(0, 0.9)], np.random.default_rng(8))
        assert a.clip.same_bytes(b.clip)
        assert a.annotations == b.annotations

    def test_source_without_instances(self, rng):
        source, target = self._pair([], [(10, 10, 30, 30)])
        with pytest.raises(NoSourceInstancesError):
            aim_mix(source, target, [PseudoLabel(0, 0.9)], rng)
