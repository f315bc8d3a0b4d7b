import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import ConfigurationError, StructuralError
from datasets.sequence import BoundingBox, Modality, AttributeTag, load_sequences, modality_switch_count, \
    switch_histogram
from datasets.synthetic import (Challenge, DualModalitySequence, Discarded, ToySequenceConfig, TargetDescriptor,
                                MotionDescriptor, convert_dual, challenge_onsets, generate_toy_sequence,
                                render_dual_sequence, toy_benchmark_configs, generate_toy_benchmark, save_benchmark,
                                manifest_hash, MAX_SWITCHES)


def dual(challenges, id="dual", size=8):
    length = len(challenges)
    frames_a = [np.full((size, size, 3), 0.8, dtype=np.float32)] * length
    frames_b = [np.full((size, size, 3), 0.2, dtype=np.float32)] * length
    gt = [BoundingBox(1, 1, 3, 3)] * length
    return DualModalitySequence(id=id, frames_a=frames_a, frames_b=frames_b, gt=gt, challenges=challenges)


def switch_positions(sequence):
    m = sequence.modalities
    return [i for i in range(1, len(m)) if m[i] != m[i - 1]]


def test_dual_lengths_must_agree():
    with pytest.raises(StructuralError):
        DualModalitySequence(id="x", frames_a=[np.zeros((4, 4, 3))] * 3, frames_b=[np.zeros((4, 4, 3))] * 2,
                             gt=[BoundingBox(0, 0, 1, 1)] * 3, challenges=[set()] * 3)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_no_challenges_injects_one_segment(seed):
    result = convert_dual(dual([set()] * 100), seed=seed)
    assert not isinstance(result, Discarded)
    positions = switch_positions(result)
    assert len(positions) in (1, 2)
    segment_end = positions[1] if len(positions) == 2 else 100
    assert 25 <= segment_end - positions[0] <= 50
    assert result.modalities[0] is Modality.RGB


def test_injection_deterministic():
    a = convert_dual(dual([set()] * 60), seed=7)
    b = convert_dual(dual([set()] * 60), seed=7)
    assert a.modalities == b.modalities


def test_six_onsets_discarded():
    challenges = [set() for _ in range(40)]
    for onset in [3, 9, 15, 21, 27, 33]:
        challenges[onset].add(Challenge.TC)
    result = convert_dual(dual(challenges))
    assert isinstance(result, Discarded)
    assert result.switches == 6


def test_iv_at_first_frame_starts_nir():
    challenges = [set() for _ in range(30)]
    challenges[0].add(Challenge.IV)
    challenges[1].add(Challenge.IV)
    challenges[10].add(Challenge.TC)
    result = convert_dual(dual(challenges))
    assert result.modalities[0] is Modality.NIR
    assert switch_positions(result) == [10]


def test_switches_at_onsets():
    challenges = [set() for _ in range(30)]
    for i in [5, 6, 7, 20]:
        challenges[i].add(Challenge.IV)
    assert challenge_onsets(challenges) == [5, 20]
    result = convert_dual(dual(challenges))
    assert switch_positions(result) == [5, 20]
    # frames come from the matching stream
    assert result.frames[0].image[0, 0, 0] == pytest.approx(0.8)
    assert result.frames[5].image[0, 0, 0] == pytest.approx(0.2)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=8, max_value=120), st.integers(min_value=0, max_value=2 ** 20),
       st.floats(min_value=0., max_value=0.3))
def test_conversion_conformance(length, seed, rate):
    rng = np.random.default_rng(seed)
    challenges = list()
    for i in range(length):
        flags = set()
        if rng.random() < rate:
            flags.add(Challenge.IV if rng.random() < 0.5 else Challenge.TC)
        challenges.append(flags)
    no_onsets = len([i for i in challenge_onsets(challenges) if i >= 1]) == 0

    result = convert_dual(dual(challenges), seed=seed)
    if isinstance(result, Discarded):
        assert result.switches > MAX_SWITCHES or no_onsets
        return

    positions = switch_positions(result)
    assert 1 <= len(positions) <= MAX_SWITCHES
    assert (result.modalities[0] is Modality.NIR) == (Challenge.IV in challenges[0])
    if no_onsets:
        end = positions[1] if len(positions) == 2 else length
        assert len(positions) in (1, 2)
        assert 0.25 * length <= end - positions[0] <= 0.5 * length
    else:
        onsets = [i for i in challenge_onsets(challenges) if i >= 1]
        assert positions == onsets


@pytest.mark.parametrize("kwargs", [
    dict(switch_schedule=(5, 5)),
    dict(switch_schedule=(0,)),
    dict(switch_schedule=(12,)),
    dict(switch_schedule=(), ma_frames=(3,)),
    dict(switch_schedule=(6,), ma_frames=(2,)),
    dict(target=TargetDescriptor(width=60., height=10.)),
])
def test_invalid_toy_configs(kwargs):
    with pytest.raises(ConfigurationError):
        ToySequenceConfig(length=12, image_size=48, **kwargs)


def test_switch_schedule_applied():
    cfg = ToySequenceConfig(length=100, image_size=48, target=TargetDescriptor(width=10., height=10.),
                            switch_schedule=(50,), seed=1)
    sequence = generate_toy_sequence(cfg)
    assert modality_switch_count(sequence) == 1
    assert sequence.modalities[49] is Modality.RGB
    assert sequence.modalities[50] is Modality.NIR


def test_toy_deterministic(toy_config):
    a = generate_toy_sequence(toy_config)
    b = generate_toy_sequence(toy_config)
    for fa, fb in zip(a.frames, b.frames):
        np.testing.assert_array_equal(fa.image, fb.image)
    assert a.boxes == b.boxes


def test_toy_boxes_stay_inside(toy_config):
    cfg = ToySequenceConfig(length=200, image_size=48, target=toy_config.target,
                            motion=MotionDescriptor(velocity=(4., -3.), noise=1.), seed=5)
    for box in generate_toy_sequence(cfg).boxes:
        assert box.x >= 0 and box.y >= 0
        assert box.x + box.w <= 48 + 1e-9 and box.y + box.h <= 48 + 1e-9


def test_ma_frames_boosted():
    base = dict(length=20, image_size=48, target=TargetDescriptor(width=10., height=10.), switch_schedule=(5,),
                seed=2)
    plain = generate_toy_sequence(ToySequenceConfig(**base))
    boosted = generate_toy_sequence(ToySequenceConfig(ma_frames=(5, 6), **base))
    assert AttributeTag.MA in boosted.attributes
    assert boosted.frames[6].image.mean() > plain.frames[6].image.mean()
    np.testing.assert_array_equal(boosted.frames[8].image, plain.frames[8].image)


def test_appearance_gap():
    gaps = list()
    for seed in range(5):
        cfg = ToySequenceConfig(length=4, image_size=48, target=TargetDescriptor(width=10., height=10.), seed=seed)
        scene = render_dual_sequence(cfg, challenge_runs=(0, 0), iv_first_frame=0.)
        gaps.append(np.abs(scene.frames_a[0] - scene.frames_b[0]).mean())
        assert scene.gt[0] == generate_toy_sequence(cfg).boxes[0]
    assert np.mean(gaps) > 0.1


def test_benchmark_configs():
    train, test = toy_benchmark_configs(40, 20, master_seed=0)
    ids = [c.id for c in train + test]
    assert len(ids) == 60
    assert len(set(ids)) == 60
    assert all(80 <= c.length <= 300 for c in train + test)
    assert all(1 <= len(c.switch_schedule) <= 3 for c in train + test)
    counts = np.bincount([len(c.switch_schedule) for c in train + test])
    assert counts.argmax() == 1
    again, _ = toy_benchmark_configs(40, 20, master_seed=0)
    assert [c.to_dict() for c in again] == [c.to_dict() for c in train]


def test_benchmark_needs_sequences():
    with pytest.raises(ConfigurationError):
        toy_benchmark_configs(0, 3, master_seed=0)


def test_small_benchmark_in_memory():
    train, test = generate_toy_benchmark(2, 1, master_seed=3, image_size=48, length_range=(10, 20))
    assert len(train) == 2 and len(test) == 1
    assert all(modality_switch_count(s) >= 1 for s in train + test)


def test_save_benchmark(tmp_path):
    train, test = toy_benchmark_configs(2, 1, master_seed=1, image_size=48, length_range=(10, 16))
    duals = [ToySequenceConfig(length=12, image_size=48, target=TargetDescriptor(width=10., height=10.), seed=4,
                               id="dual_0000")]
    root = str(tmp_path / "benchmark")
    manifest = save_benchmark(root, train, test, duals, master_seed=1)

    loaded = load_sequences(os.path.join(root, "train"))
    assert [s.id for s in loaded] == [c.id for c in train]
    assert len(manifest["converted"]) + len(manifest["discarded"]) == 1
    with open(os.path.join(root, "manifest.json")) as f:
        assert json.load(f) == json.loads(json.dumps(manifest))
    assert sum(switch_histogram(loaded).values()) == len(loaded)

    with pytest.raises(ConfigurationError):
        save_benchmark(root, train, test, master_seed=1)
    again = save_benchmark(root, train, test, duals, master_seed=1, force=True)
    assert manifest_hash(again) == manifest_hash(manifest)
