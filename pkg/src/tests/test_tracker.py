from collections import deque

import numpy as np
import pytest
import torch

from errors import InsufficientDataError, ConfigurationError
from datasets.sequence import BoundingBox, FrameRecord, Sequence, Modality
from models.marmot import state_dict_checksum
from tracking.sample_generator import SampleGenerator
from tracking.tracker import (TrackerOptions, TrackerState, BBRegressor, init_first_frame, online_update,
                              track_frame, run_sequence, extract_features, score_features, train_on_features)
from utils.trackmetric import iou

GT = BoundingBox(24, 20, 16, 16)
FAST = dict(n_samples=64, n_pos_init=50, n_neg_init=150, init_iterations=60, lr_init=1e-2, n_pos_update=10,
            n_neg_update=30, update_iterations=5, n_bbreg=60)


def target_image(box=GT, size=64):
    image = np.full((size, size, 3), 0.45, dtype=np.float32)
    yy, xx = np.mgrid[0:int(box.h), 0:int(box.w)]
    checker = (((xx // 4) + (yy // 4)) % 2).astype(np.float32)
    patch = np.stack([checker, 1 - checker, checker * 0.5], axis=-1)
    image[int(box.y):int(box.y + box.h), int(box.x):int(box.x + box.w)] = patch
    return image


def static_sequence(length=4, modalities=None):
    modalities = modalities or ["RGB"] * length
    image = target_image()
    frames = [FrameRecord(image=image, modality=Modality(m), gt=GT) for m in modalities]
    return Sequence(id="static", frames=frames)


@pytest.fixture
def options():
    return TrackerOptions(**FAST)


def test_options_validation():
    with pytest.raises(ConfigurationError):
        TrackerOptions(n_samples=3, top_k=5)
    with pytest.raises(ConfigurationError):
        TrackerOptions(short_capacity=0)


def test_init_state(small_net, options):
    state = init_first_frame(small_net, target_image(), GT, options, seed=0)
    assert state.current == GT
    assert state.frame_index == 0
    assert state.regressor is not None
    assert len(state.short_memory) == 1 and len(state.long_memory) == 1


def test_init_separates_target(small_net, options):
    image = target_image()
    init_first_frame(small_net, image, GT, options, seed=0)
    rng = np.random.default_rng(99)
    pos = SampleGenerator("gaussian", (64, 64), 0.1, 1.3)(GT, 50, (0.7, 1.), rng=rng)
    neg = SampleGenerator("uniform", (64, 64), 1., 1.6)(GT, 50, (0., 0.3), rng=rng)
    scores = score_features(small_net, extract_features(small_net, image, np.concatenate([pos, neg]), options))
    labels = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    accuracy = ((scores.numpy() > 0) == labels).mean()
    assert accuracy >= 0.9


def test_init_too_small_for_negatives(small_net, options):
    image = np.full((16, 16, 3), 0.5, dtype=np.float32)
    with pytest.raises(InsufficientDataError):
        init_first_frame(small_net, image, BoundingBox(0, 0, 16, 16), options, seed=0)


def test_online_update_keeps_backbone(small_net, options):
    image = target_image()
    state = init_first_frame(small_net, image, GT, options, seed=0)
    backbone = state_dict_checksum(small_net.backbone)
    branches = state_dict_checksum(small_net.marmot.branch_rgb)
    head = state_dict_checksum(small_net.head_final)
    assert online_update(state, small_net, "short", options) is not None
    assert online_update(state, small_net, "long", options) is not None
    assert state_dict_checksum(small_net.backbone) == backbone
    assert state_dict_checksum(small_net.marmot.branch_rgb) == branches
    assert state_dict_checksum(small_net.head_final) != head


def test_online_update_empty_memory(small_net, options):
    state = TrackerState(current=GT, image_size=(64, 64), short_memory=deque(maxlen=2), long_memory=deque(maxlen=2))
    with pytest.warns(UserWarning):
        assert online_update(state, small_net, "short", options) is None
    with pytest.raises(ConfigurationError):
        online_update(state, small_net, "medium", options)


def test_memory_fifo(small_net):
    options = TrackerOptions(**dict(FAST, short_capacity=2, long_capacity=3))
    image = target_image()
    state = init_first_frame(small_net, image, GT, options, seed=0)
    for i in range(5):
        state.short_memory.append((torch.full((1, 1), float(i)), torch.zeros(1, 1)))
    assert len(state.short_memory) == 2
    assert [p.item() for p, _ in state.short_memory] == [3., 4.]


@pytest.mark.parametrize("seed", range(10))
def test_update_loss_decreases(small_net, seed):
    torch.manual_seed(seed)
    options = TrackerOptions(batch_pos=32, batch_neg=96, momentum=0.9)
    pos = torch.randn(20, 96, 5, 5) + 0.5
    neg = torch.randn(40, 96, 5, 5) - 0.5
    losses = train_on_features(small_net, pos, neg, 10, 1e-3, options, np.random.default_rng(seed))
    assert losses[-1] <= losses[0]


def test_track_static_target(small_net, options):
    image = target_image()
    state = init_first_frame(small_net, image, GT, options, seed=0)
    state, box, record = track_frame(state, small_net, image, options)
    assert iou(box, GT) >= 0.5
    assert record["frame"] == 1
    assert 0 <= box.x and box.x + box.w <= 64 + 1e-9


def test_failure_expands_search(small_net, options):
    image = target_image()
    state = init_first_frame(small_net, image, GT, options, seed=0)
    strict = TrackerOptions(**dict(FAST, threshold=1e9))
    state, _, record = track_frame(state, small_net, image, strict)
    assert record["success"] is False
    assert record["update"] == "short"
    assert state.trans == pytest.approx(strict.trans * strict.failure_factor)


def test_run_sequence(small_net, options):
    sequence = static_sequence(length=12, modalities=["RGB"] * 6 + ["NIR"] * 6)
    before = state_dict_checksum(small_net)
    boxes, log = run_sequence(small_net, sequence, options, seed=0)
    assert len(boxes) == 12 and len(log) == 12
    assert boxes[0] == GT
    assert log.loc[0, "update"] == "init"
    assert (log["sequence"] == "static").all()
    assert log.attrs["fps"] > 0
    assert log.loc[10, "update"] in ("short", "long")
    assert state_dict_checksum(small_net) == before
    for box in boxes:
        assert box.x >= 0 and box.y >= 0 and box.x + box.w <= 64 + 1e-9 and box.y + box.h <= 64 + 1e-9


def test_backbone_frozen_across_sequence(small_net, options):
    image = target_image()
    state = init_first_frame(small_net, image, GT, options, seed=0)
    backbone = state_dict_checksum(small_net.backbone)
    for _ in range(11):
        state, _, _ = track_frame(state, small_net, image, options)
    assert state_dict_checksum(small_net.backbone) == backbone


def test_run_sequence_deterministic(small_net, options):
    sequence = static_sequence(length=5)
    a, _ = run_sequence(small_net, sequence, options, seed=3)
    b, _ = run_sequence(small_net, sequence, options, seed=3)
    assert a == b


def test_identity_substitution_runs_unmodified(baseline_net, options):
    boxes, log = run_sequence(baseline_net, static_sequence(length=3), options, seed=0)
    assert len(boxes) == 3


def test_regressor_recovers_shift():
    rng = np.random.default_rng(0)
    target = np.array([10., 10., 20., 20.])
    boxes = np.stack([target + np.r_[rng.uniform(-3, 3, 2), 0, 0] for _ in range(100)])
    features = boxes[:, :2] - target[:2]
    regressor = BBRegressor(alpha=1e-6).fit(features, boxes, target)
    refined = regressor.predict(features, boxes)
    np.testing.assert_allclose(refined, np.tile(target, (100, 1)), atol=1e-3)
