import os
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import StructuralError, ValidationError, ParseError, InsufficientDataError, FrozenBoxWarning
from datasets.sequence import (BoundingBox, Modality, AttributeTag, load_sequence, save_sequence, write_results,
                               read_results, modality_switch_count, switch_histogram, switch_bin, split_dataset,
                               dataset_statistics, attribute_distribution, derive_attributes, write_image)
from tests.conftest import make_sequence


def write_sequence_dir(root, n_images=3, gt_lines=None, modality_lines=None, visible_lines=None, size=20):
    os.makedirs(os.path.join(root, "img"))
    for i in range(n_images):
        write_image(os.path.join(root, "img", "{:06d}.png".format(i + 1)), np.full((size, size, 3), 0.5))
    gt_lines = gt_lines if gt_lines is not None else ["2,3,5,6"] * n_images
    modality_lines = modality_lines if modality_lines is not None else ["RGB"] * n_images
    with open(os.path.join(root, "groundtruth.txt"), "w") as f:
        f.write("\n".join(gt_lines) + "\n")
    with open(os.path.join(root, "modality.txt"), "w") as f:
        f.write("\n".join(modality_lines) + "\n")
    if visible_lines is not None:
        with open(os.path.join(root, "visible.txt"), "w") as f:
            f.write("\n".join(visible_lines) + "\n")
    return root


@pytest.mark.parametrize("values", [(0, 0, 0, 1), (0, 0, 1, -1), (float("nan"), 0, 1, 1), (0, float("inf"), 1, 1)])
def test_invalid_boxes(values):
    with pytest.raises(ValidationError):
        BoundingBox(*values)


def test_modality_order_and_tags():
    assert Modality.RGB < Modality.NIR
    assert sorted([Modality.NIR, Modality.RGB]) == [Modality.RGB, Modality.NIR]
    assert len(list(Modality)) == 2
    assert len(list(AttributeTag)) == 11


def test_load_three_frames(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq_a"), modality_lines=["RGB", "NIR", "NIR"])
    sequence = load_sequence(root)
    assert len(sequence) == 3
    assert sequence.id == "seq_a"
    assert sequence.modalities == [Modality.RGB, Modality.NIR, Modality.NIR]
    assert sequence.boxes[0] == BoundingBox(2, 3, 5, 6)
    assert sequence.image_size == (20, 20)


def test_load_mismatched_lengths(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq"), modality_lines=["RGB", "RGB"])
    with pytest.raises(StructuralError):
        load_sequence(root)


def test_load_frames_of_different_size(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq"), size=32)
    write_image(os.path.join(root, "img", "000002.png"), np.full((48, 64, 3), 0.5))
    with pytest.raises(StructuralError) as e:
        load_sequence(root)
    assert "64x48" in str(e.value)


def test_load_blank_line_inside_groundtruth(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq"), gt_lines=["2,3,5,6", "", "2,3,5,6"])
    with pytest.raises(ParseError) as e:
        load_sequence(root)
    assert e.value.line == 2


def test_load_ignores_trailing_blank_lines(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq"), gt_lines=["2,3,5,6"] * 3 + ["", ""],
                              modality_lines=["RGB", "NIR", "RGB", ""])
    assert len(load_sequence(root)) == 3


def test_load_unknown_modality(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq"), modality_lines=["RGB", "THERMAL", "RGB"])
    with pytest.raises(ParseError) as e:
        load_sequence(root)
    assert e.value.line == 2


def test_load_non_positive_box(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq"), gt_lines=["2,3,5,6", "2,3,0,6", "2,3,5,6"])
    with pytest.raises(ValidationError):
        load_sequence(root)


def test_load_clips_to_image(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq"), gt_lines=["-2,3,5,6", "15,15,10,10", "2,3,5,6"])
    sequence = load_sequence(root)
    assert sequence.boxes[0] == BoundingBox(0, 3, 3, 6)
    assert sequence.boxes[1] == BoundingBox(15, 15, 5, 5)


def test_frozen_box_accepted(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq"), visible_lines=["1", "0", "1"])
    with warnings.catch_warnings():
        warnings.simplefilter("error", FrozenBoxWarning)
        sequence = load_sequence(root)
    assert [f.visible for f in sequence.frames] == [True, False, True]


def test_frozen_box_moved_warns(tmp_path):
    root = write_sequence_dir(str(tmp_path / "seq"), gt_lines=["2,3,5,6", "4,3,5,6", "2,3,5,6"],
                              visible_lines=["1", "0", "1"])
    with pytest.warns(FrozenBoxWarning):
        load_sequence(root)


def test_save_load_reproduces_boxes_and_labels(tmp_path, toy_sequence):
    root = save_sequence(toy_sequence, str(tmp_path / toy_sequence.id))
    loaded = load_sequence(root)
    assert loaded.id == toy_sequence.id
    assert loaded.modalities == toy_sequence.modalities
    assert loaded.boxes == toy_sequence.boxes
    assert loaded.attributes == toy_sequence.attributes


@pytest.mark.parametrize("modalities,expected", [
    (["RGB", "RGB", "NIR", "NIR", "RGB"], 2),
    (["RGB"] * 6, 0),
    (["NIR"], 0),
    (["RGB", "NIR", "RGB", "NIR"], 3),
])
def test_modality_switch_count(modalities, expected):
    assert modality_switch_count(make_sequence(modalities=modalities)) == expected


def test_switch_count_ignores_pixels():
    a = make_sequence(modalities=["RGB", "NIR", "NIR"])
    frames = [f.__class__(image=np.zeros_like(f.image), modality=f.modality, gt=f.gt) for f in a.frames]
    b = a.__class__(id="b", frames=frames)
    assert modality_switch_count(a) == modality_switch_count(b)


def test_switch_histogram():
    def with_switches(n):
        return make_sequence(id=str(n), modalities=["RGB" if i % 2 == 0 else "NIR" for i in range(n + 1)])
    sequences = [with_switches(n) for n in [1, 1, 2, 3, 4]] + [with_switches(0)]
    assert switch_histogram(sequences) == dict(once=2, twice=1, three=1, more=1)
    assert switch_bin(0) == "none"
    assert switch_bin(7) == "more"


def test_split_counts():
    ids = ["seq{:03d}".format(i) for i in range(654)]
    train, test = split_dataset(ids, seed=4)
    assert len(test) == 218
    assert len(train) == 436


def test_split_deterministic():
    ids = ["s{}".format(i) for i in range(30)]
    assert split_dataset(ids, 1) == split_dataset(list(reversed(ids)), 1)


def test_split_too_small():
    with pytest.raises(InsufficientDataError):
        split_dataset(["a", "b"], 0)


@given(st.sets(st.text(alphabet="abcdefgh0123456789", min_size=1, max_size=6), min_size=3, max_size=30),
       st.integers(min_value=0, max_value=2 ** 16))
def test_split_is_partition(ids, seed):
    train, test = split_dataset(sorted(ids), seed)
    assert set(train) | set(test) == ids
    assert len(set(train) & set(test)) == 0
    assert len(test) == int(round(len(ids) / 3))


def test_results_file_format(tmp_path):
    path = str(tmp_path / "r.txt")
    write_results(path, [BoundingBox(10, 20, 30, 40)])
    with open(path) as f:
        assert f.read() == "10,20,30,40\n"
    assert read_results(path) == [BoundingBox(10, 20, 30, 40)]


def test_results_parse_error(tmp_path):
    path = tmp_path / "r.txt"
    path.write_text("a,b,c,d\n")
    with pytest.raises(ParseError) as e:
        read_results(str(path))
    assert e.value.line == 1


def test_write_empty_results(tmp_path):
    with pytest.raises(ValidationError):
        write_results(str(tmp_path / "r.txt"), [])


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 16))
def test_results_precision(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    boxes = np.concatenate([rng.uniform(-500, 500, size=(1000, 2)), rng.uniform(1e-3, 500, size=(1000, 2))], axis=1)
    path = str(tmp_path_factory.mktemp("results") / "r.txt")
    write_results(path, boxes)
    back = np.stack([b.as_array() for b in read_results(path)])
    assert np.abs(back - boxes).max() < 1e-6


def test_statistics_and_attributes():
    sequences = [make_sequence("a", ["RGB", "NIR"], attributes={AttributeTag.MA}),
                 make_sequence("b", ["NIR"] * 3, attributes={AttributeTag.MA, AttributeTag.FM})]
    stats = dataset_statistics(sequences)
    assert stats["sequences"] == 2
    assert stats["frames"] == 5
    assert stats["rgb_frames"] == 1
    assert stats["nir_frames"] == 4
    assert stats["switches"] == 1
    distribution = attribute_distribution(sequences)
    assert distribution["MA"] == 2
    assert distribution["FM"] == 1
    assert list(distribution.index) == [t.value for t in AttributeTag]


def test_derive_attributes():
    still = [BoundingBox(10, 10, 10, 10)] * 3
    assert derive_attributes(still, (50, 50)) == set()
    grows = still + [BoundingBox(5, 5, 30, 30)]
    assert AttributeTag.SV in derive_attributes(grows, (50, 50))
    jumps = still + [BoundingBox(35, 35, 10, 10)]
    assert AttributeTag.FM in derive_attributes(jumps, (50, 50))
    stretched = still + [BoundingBox(10, 10, 25, 5)]
    assert AttributeTag.ARC in derive_attributes(stretched, (50, 50))
    assert AttributeTag.MA in derive_attributes(still, (50, 50), ma_frames=(1,))
