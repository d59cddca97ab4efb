import itertools
import random

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from stimdetect.errors import DegenerateCrop
from stimdetect.prefetch import (
    BoundingBox,
    ChildClassifier,
    CropPlan,
    apply_crops,
    classify_child,
    load_child_classifier,
    prefetch_chunk,
    save_child_classifier,
    select_crop_regions,
)
from stimdetect.preprocess import VideoChunk
from stimdetect.synthetic import BlobPersonDetector, blob_chunk


@pytest.fixture(scope="module")
def small_classifier():
    torch.manual_seed(0)
    return ChildClassifier("resnet18", input_size=64).eval()


def box(w, h, p=0.5, x=0.0, y=0.0):
    return BoundingBox(x, y, w, h, 1.0, p)


def test_box_validation():
    with pytest.raises(DegenerateCrop):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 5, 5, child_prob=1.5)


def test_pixel_bounds_clamp():
    assert BoundingBox(-5, 90, 20, 30).pixel_bounds(100, 100) == (0, 90, 15, 100)
    assert BoundingBox(10.2, 10.7, 5.1, 5.0).pixel_bounds(100, 100) == (10, 10, 16, 16)


def test_highest_child_prob_wins():
    plan = select_crop_regions([[box(10, 10, 0.7), box(5, 5, 0.9)]] + [[box(8, 8, 0.5)]] * 39)
    assert plan.per_frame_region[0].child_prob == 0.9
    assert len(plan) == 40


def test_empty_frame_reuses_largest_box():
    dets = [[box(50, 80)], []] + [[box(60, 90)]] + [[box(50, 80)]] * 37
    plan = select_crop_regions(dets)
    r = plan.per_frame_region[1]
    assert (r.w, r.h) == (60, 90)
    assert plan.detected[1] is False and plan.detected[0] is True


def test_all_empty_gives_full_frame():
    plan = select_crop_regions([[] for _ in range(40)], (100, 100))
    assert all(r.pixel_bounds(100, 100) == (0, 0, 100, 100) for r in plan.per_frame_region)
    assert not any(plan.detected)


def test_ties_prefer_area_then_position():
    a, b = box(10, 10, 0.8, x=5), box(20, 20, 0.8, x=50)
    assert select_crop_regions([[a, b]]).per_frame_region[0] is b
    c, d = box(10, 10, 0.8, x=50), box(10, 10, 0.8, x=5)
    assert select_crop_regions([[c, d]]).per_frame_region[0] is d


boxes = st.builds(
    BoundingBox,
    st.integers(0, 90).map(float), st.integers(0, 90).map(float),
    st.integers(1, 60).map(float), st.integers(1, 60).map(float),
    st.floats(0, 1), st.sampled_from([0.1, 0.5, 0.5, 0.9]),
)


@given(st.lists(st.lists(boxes, max_size=4), min_size=40, max_size=40), st.randoms())
def test_selection_permutation_invariant(dets, rnd):
    shuffled = [rnd.sample(d, len(d)) for d in dets]
    assert select_crop_regions(dets) == select_crop_regions(shuffled)


@given(st.lists(st.lists(boxes, max_size=3), min_size=40, max_size=40))
def test_fallback_never_full_frame_when_something_detected(dets):
    plan = select_crop_regions(dets)
    full = BoundingBox.full_frame(100, 100)
    if any(dets):
        for r, detected in zip(plan.per_frame_region, plan.detected):
            assert detected or r != full or any(full in d for d in dets)
            assert r in list(itertools.chain.from_iterable(dets))


def test_apply_full_frame_is_identity():
    data = np.random.default_rng(0).random((40, 3, 100, 100), dtype=np.float32)
    chunk = VideoChunk(data, 0)
    out = apply_crops(chunk, select_crop_regions([[] for _ in range(40)]))
    assert out.data.shape == (40, 3, 100, 100)
    np.testing.assert_allclose(out.data, data, atol=1e-6)


def test_apply_crops_resizes_region():
    data = np.zeros((40, 3, 100, 100), np.float32)
    data[:, :, 20:40, 30:50] = 1.0
    plan = CropPlan([BoundingBox(30, 20, 20, 20)] * 40, [True] * 40)
    out = apply_crops(VideoChunk(data, 0), plan)
    assert out.data.shape == (40, 3, 100, 100)
    assert out.data.min() > 0.99


def test_degenerate_crop():
    plan = CropPlan([BoundingBox(99.5, 10, 1, 1)] * 40, [True] * 40)
    with pytest.raises(DegenerateCrop):
        apply_crops(VideoChunk(np.zeros((40, 3, 100, 100), np.float32), 0), plan)
    with pytest.raises(ValueError):
        apply_crops(VideoChunk(np.zeros((40, 3, 100, 100), np.float32), 0), CropPlan([BoundingBox(0, 0, 5, 5)] * 3))


def test_classify_child_range(small_classifier):
    rng = np.random.default_rng(0)
    for shape in [(10, 7, 3), (100, 100, 3), (3, 50, 3)]:
        p = classify_child(rng.random(shape, dtype=np.float32), small_classifier)
        assert 0.0 <= p <= 1.0
    with pytest.raises(DegenerateCrop):
        classify_child(np.zeros((0, 5, 3), np.float32), small_classifier)


def test_classifier_parts(small_classifier):
    learnable = sum(p.numel() for p in small_classifier.parameters() if p.requires_grad)
    head = sum(p.numel() for p in small_classifier.head.parameters())
    assert learnable == head
    assert not small_classifier.backbone.net.training


def test_classifier_checkpoint_round_trip(tmp_path, small_classifier):
    save_child_classifier(small_classifier, tmp_path / "c.pt", {"note": 1})
    loaded, meta = load_child_classifier(tmp_path / "c.pt")
    assert meta == {"note": 1}
    x = torch.rand(2, 3, 64, 64)
    with torch.no_grad():
        torch.testing.assert_close(loaded(x), small_classifier(x))


def test_prefetch_chunk_tracks_blob(small_classifier):
    rng = np.random.default_rng(3)
    chunk = VideoChunk(blob_chunk(True, rng), 0)
    cropped, plan = prefetch_chunk(chunk, BlobPersonDetector(), small_classifier)
    assert cropped.data.shape == (40, 3, 100, 100)
    assert all(plan.detected)
    # The blob fills a large share of every cropped frame.
    assert (cropped.data.mean(axis=1) > 0.5).mean() > 0.3
    no_cls, _ = prefetch_chunk(chunk, BlobPersonDetector(), None)
    assert no_cls.data.shape == (40, 3, 100, 100)
