import os
import glob
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd
from PIL import Image

from errors import StructuralError, ValidationError, ParseError, InsufficientDataError, FrozenBoxWarning

IMAGE_FOLDER = "img"
IMAGE_PATTERN = "{:06d}.png"
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
GROUNDTRUTH_FILE = "groundtruth.txt"
MODALITY_FILE = "modality.txt"
ATTRIBUTES_FILE = "attributes.txt"
VISIBLE_FILE = "visible.txt"

SWITCH_BINS = ["once", "twice", "three", "more"]
EDGE_TOLERANCE = 1e-9


class Modality(Enum):
    RGB = "RGB"
    NIR = "NIR"

    @property
    def order(self):
        return 0 if self is Modality.RGB else 1

    def __lt__(self, other):
        if not isinstance(other, Modality):
            return NotImplemented
        return self.order < other.order

    def other(self):
        return Modality.NIR if self is Modality.RGB else Modality.RGB

    @classmethod
    def parse(cls, token, line=None, path=None):
        token = token.strip()
        try:
            return cls(token)
        except ValueError:
            raise ParseError(f"unknown modality token '{token}' (expected RGB or NIR)", line=line, path=path)


class AttributeTag(Enum):
    SV = "SV"    # scale variation
    BC = "BC"    # background clutter
    ARC = "ARC"  # aspect ratio change
    SO = "SO"    # similar object
    FM = "FM"    # fast motion
    IPR = "IPR"  # in-plane rotation
    OV = "OV"    # out-of-view
    PO = "PO"    # partial occlusion
    MA = "MA"    # modality adaptation
    FO = "FO"    # full occlusion
    MB = "MB"    # motion blur

    @classmethod
    def parse(cls, token, line=None, path=None):
        token = token.strip()
        try:
            return cls(token)
        except ValueError:
            raise ParseError(f"unknown attribute tag '{token}'", line=line, path=path)


ATTRIBUTE_ORDER = list(AttributeTag)


@dataclass(frozen=True)
class BoundingBox:
    """axis aligned box in continuous pixel coordinates, top-left origin"""
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(float(v)) for v in values):
            raise ValidationError(f"bounding box fields must be finite, got {values}")
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"bounding box needs w > 0 and h > 0, got w={self.w}, h={self.h}")
        # normalize numpy scalars to plain floats
        for name, v in zip("xywh", values):
            object.__setattr__(self, name, float(v))

    @classmethod
    def from_array(cls, array):
        x, y, w, h = [float(v) for v in array]
        return cls(x, y, w, h)

    def as_array(self):
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @property
    def center(self):
        return self.x + self.w / 2, self.y + self.h / 2

    @property
    def area(self):
        return self.w * self.h

    def clip(self, width, height):
        """clips to [0,width]x[0,height]. raises ValidationError if nothing is left"""
        if self.x >= 0 and self.y >= 0 and self.x + self.w <= width + EDGE_TOLERANCE \
                and self.y + self.h <= height + EDGE_TOLERANCE:
            return self
        x1 = min(max(self.x, 0.), width)
        y1 = min(max(self.y, 0.), height)
        x2 = min(max(self.x + self.w, 0.), width)
        y2 = min(max(self.y + self.h, 0.), height)
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class FrameRecord:
    image: object  # path to an image file or an HxWx3 float array in [0,1]
    modality: Modality
    gt: BoundingBox
    visible: bool = True

    def load_image(self):
        if isinstance(self.image, np.ndarray):
            return self.image.astype(np.float32, copy=False)
        return read_image(self.image)

    @property
    def size(self):
        """(width, height) without decoding the pixels"""
        if isinstance(self.image, np.ndarray):
            return self.image.shape[1], self.image.shape[0]
        with Image.open(self.image) as img:
            return img.size


@dataclass(frozen=True)
class Sequence:
    id: str
    frames: tuple
    attributes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "attributes", frozenset(self.attributes))
        if len(self.frames) < 1:
            raise StructuralError(f"sequence {self.id} has no frames")
        sizes = {f.image.shape[:2] for f in self.frames if isinstance(f.image, np.ndarray)}
        if len(sizes) > 1:
            raise StructuralError(f"frames of sequence {self.id} differ in image size: {sorted(sizes)}")

    def __len__(self):
        return len(self.frames)

    @property
    def modalities(self):
        return [f.modality for f in self.frames]

    @property
    def boxes(self):
        return [f.gt for f in self.frames]

    @property
    def image_size(self):
        return self.frames[0].size

    def gt_array(self):
        return np.stack([f.gt.as_array() for f in self.frames])

    def __str__(self):
        return "Sequence {}: {} frames, {} switches, attributes [{}]".format(
            self.id, len(self), modality_switch_count(self),
            ",".join(a.value for a in sorted(self.attributes, key=ATTRIBUTE_ORDER.index)))


def read_image(path):
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.


def write_image(path, array):
    array = np.clip(np.asarray(array) * 255. + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(array).save(path)


def format_number(value):
    """shortest dot-decimal representation that reads back to the same float"""
    return np.format_float_positional(float(value), trim="-")


def _read_lines(path):
    """lines without their terminators; trailing blank lines are dropped"""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\r\n") for line in f]
    while len(lines) > 0 and lines[-1].strip() == "":
        lines.pop()
    return lines


def parse_box_line(line, lineno, path=None):
    parts = line.replace("\t", ",").split(",")
    if len(parts) != 4:
        raise ParseError(f"expected 4 comma separated values 'x,y,w,h', got '{line}'", line=lineno, path=path)
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise ParseError(f"could not parse '{line}' as numbers", line=lineno, path=path)
    try:
        return BoundingBox(*values)
    except ValidationError as e:
        raise ValidationError(f"{path} line {lineno}: {e}")


def load_sequence(root_path, sequence_id=None):
    """
    reads a sequence directory:
        img/%06d.png (or .jpg), groundtruth.txt, modality.txt,
        optional attributes.txt (comma separated tags) and visible.txt (0/1 per line)
    """
    if not os.path.isdir(root_path):
        raise StructuralError(f"sequence directory {root_path} does not exist")

    sequence_id = sequence_id if sequence_id is not None else os.path.basename(os.path.normpath(root_path))
    images = sorted(p for p in glob.glob(os.path.join(root_path, IMAGE_FOLDER, "*"))
                    if p.lower().endswith(IMAGE_EXTENSIONS))

    gt_path = os.path.join(root_path, GROUNDTRUTH_FILE)
    modality_path = os.path.join(root_path, MODALITY_FILE)
    for required in [gt_path, modality_path]:
        if not os.path.exists(required):
            raise StructuralError(f"missing {required}")

    gt_lines = _read_lines(gt_path)
    modality_lines = _read_lines(modality_path)

    visible_path = os.path.join(root_path, VISIBLE_FILE)
    visible_lines = _read_lines(visible_path) if os.path.exists(visible_path) else None

    counts = dict(images=len(images), groundtruth=len(gt_lines), modality=len(modality_lines))
    if visible_lines is not None:
        counts["visible"] = len(visible_lines)
    if len(set(counts.values())) != 1:
        raise StructuralError(f"sequence {sequence_id}: per-frame files disagree in length {counts}")
    if len(images) == 0:
        raise StructuralError(f"sequence {sequence_id} in {root_path} has no frames")

    sizes = dict()
    for image in images:
        with Image.open(image) as img:
            sizes.setdefault(img.size, image)
    if len(sizes) > 1:
        raise StructuralError(f"frames of sequence {sequence_id} differ in image size: "
                              + ", ".join(f"{w}x{h} ({os.path.basename(p)})" for (w, h), p in sizes.items()))
    (width, height), = sizes

    attributes = set()
    attributes_path = os.path.join(root_path, ATTRIBUTES_FILE)
    if os.path.exists(attributes_path):
        for lineno, line in enumerate(_read_lines(attributes_path), start=1):
            attributes.update(AttributeTag.parse(t, line=lineno, path=attributes_path)
                              for t in line.split(",") if t.strip() != "")

    frames = list()
    last_visible = None
    for i, (image, gt_line, modality_line) in enumerate(zip(images, gt_lines, modality_lines)):
        lineno = i + 1
        box = parse_box_line(gt_line, lineno, gt_path).clip(width, height)
        modality = Modality.parse(modality_line, line=lineno, path=modality_path)

        visible = True
        if visible_lines is not None:
            token = visible_lines[i].strip()
            if token not in ("0", "1"):
                raise ParseError(f"visibility flag must be 0 or 1, got '{token}'", line=lineno, path=visible_path)
            visible = token == "1"

        if not visible and last_visible is not None and box != last_visible:
            warnings.warn(f"sequence {sequence_id} frame {lineno}: invisible target but box {box} differs "
                          f"from last visible box {last_visible}", FrozenBoxWarning)
        if visible:
            last_visible = box

        frames.append(FrameRecord(image=image, modality=modality, gt=box, visible=visible))

    return Sequence(id=sequence_id, frames=frames, attributes=attributes)


def save_sequence(sequence, root_path):
    """writes a sequence in the layout load_sequence reads. returns root_path"""
    os.makedirs(os.path.join(root_path, IMAGE_FOLDER), exist_ok=True)

    for i, frame in enumerate(sequence.frames):
        target = os.path.join(root_path, IMAGE_FOLDER, IMAGE_PATTERN.format(i + 1))
        write_image(target, frame.load_image())

    write_results(os.path.join(root_path, GROUNDTRUTH_FILE), sequence.boxes)
    with open(os.path.join(root_path, MODALITY_FILE), "w", encoding="utf-8") as f:
        f.writelines(m.value + "\n" for m in sequence.modalities)
    with open(os.path.join(root_path, VISIBLE_FILE), "w", encoding="utf-8") as f:
        f.writelines(("1" if frame.visible else "0") + "\n" for frame in sequence.frames)
    with open(os.path.join(root_path, ATTRIBUTES_FILE), "w", encoding="utf-8") as f:
        tags = sorted(sequence.attributes, key=ATTRIBUTE_ORDER.index)
        f.write(",".join(t.value for t in tags) + "\n")

    return root_path


def load_sequences(root):
    """loads every sequence directory below root, ordered by id"""
    if not os.path.isdir(root):
        raise StructuralError(f"dataset directory {root} does not exist")
    names = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    sequences = [load_sequence(os.path.join(root, name)) for name in names]
    print("loaded {} sequences from {}".format(len(sequences), root))
    return sequences


def write_results(path, boxes):
    boxes = list(boxes)
    if len(boxes) == 0:
        raise ValidationError("refusing to write an empty results file")
    dirname = os.path.dirname(path)
    if dirname != "":
        os.makedirs(dirname, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for box in boxes:
            if not isinstance(box, BoundingBox):
                box = BoundingBox.from_array(box)
            f.write(",".join(format_number(v) for v in (box.x, box.y, box.w, box.h)) + "\n")


def read_results(path):
    if not os.path.exists(path):
        raise StructuralError(f"results file {path} does not exist")
    lines = _read_lines(path)
    return [parse_box_line(line, lineno, path) for lineno, line in enumerate(lines, start=1)]


def modality_switch_count(sequence):
    modalities = sequence.modalities if isinstance(sequence, Sequence) else list(sequence)
    return sum(1 for previous, current in zip(modalities[:-1], modalities[1:]) if previous != current)


def switch_bin(count):
    if count <= 0:
        return "none"
    if count > 3:
        return "more"
    return SWITCH_BINS[count - 1]


def switch_histogram(sequences):
    """number of sequences per switch-count bin. sequences without switches are not binned"""
    histogram = dict((b, 0) for b in SWITCH_BINS)
    for sequence in sequences:
        b = switch_bin(modality_switch_count(sequence))
        if b in histogram:
            histogram[b] += 1
    return histogram


def split_dataset(sequences, seed):
    """
    random 1:2 test:train holdout split. deterministic in (ids, seed)
    accepts Sequence objects or plain ids.
    """
    items = list(sequences)
    if len(items) < 3:
        raise InsufficientDataError(f"need at least 3 sequences to split 1:2, got {len(items)}")

    def key(item):
        return item.id if isinstance(item, Sequence) else str(item)

    ids = [key(item) for item in items]
    if len(set(ids)) != len(ids):
        raise ValidationError("sequence ids must be unique to split a dataset")

    items = sorted(items, key=key)
    permutation = np.random.default_rng(seed).permutation(len(items))
    n_test = int(round(len(items) / 3))

    test = [items[i] for i in sorted(permutation[:n_test])]
    train = [items[i] for i in sorted(permutation[n_test:])]
    return train, test


def dataset_statistics(sequences):
    lengths = np.array([len(s) for s in sequences])
    modalities = [m for s in sequences for m in s.modalities]
    return pd.Series(dict(
        sequences=len(sequences),
        frames=int(lengths.sum()),
        average_length=float(lengths.mean()) if len(lengths) > 0 else 0.,
        min_length=int(lengths.min()) if len(lengths) > 0 else 0,
        max_length=int(lengths.max()) if len(lengths) > 0 else 0,
        rgb_frames=sum(1 for m in modalities if m is Modality.RGB),
        nir_frames=sum(1 for m in modalities if m is Modality.NIR),
        switches=sum(modality_switch_count(s) for s in sequences),
    ))


def attribute_distribution(sequences):
    counts = [sum(1 for s in sequences if tag in s.attributes) for tag in ATTRIBUTE_ORDER]
    return pd.Series(counts, index=[t.value for t in ATTRIBUTE_ORDER], name="sequences")


def derive_attributes(boxes, image_size, ma_frames=()):
    """attribute tags measurable from the ground truth alone (SV, ARC, FM, OV) plus MA"""
    boxes = np.stack([b.as_array() if isinstance(b, BoundingBox) else np.asarray(b, dtype=float) for b in boxes])
    width, height = image_size
    tags = set()

    first = boxes[0]
    scale_ratio = np.sqrt(boxes[:, 2] * boxes[:, 3] / (first[2] * first[3]))
    if ((scale_ratio < 0.5) | (scale_ratio > 2)).any():
        tags.add(AttributeTag.SV)

    aspect_ratio = (boxes[:, 2] / boxes[:, 3]) / (first[2] / first[3])
    if ((aspect_ratio < 0.5) | (aspect_ratio > 2)).any():
        tags.add(AttributeTag.ARC)

    centers = boxes[:, :2] + boxes[:, 2:] / 2
    motion = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    size = np.sqrt(boxes[1:, 2] * boxes[1:, 3])
    if (motion > size).any():
        tags.add(AttributeTag.FM)

    outside = (boxes[:, 0] >= width) | (boxes[:, 1] >= height) | \
              (boxes[:, 0] + boxes[:, 2] <= 0) | (boxes[:, 1] + boxes[:, 3] <= 0)
    if outside.any():
        tags.add(AttributeTag.OV)

    if len(ma_frames) > 0:
        tags.add(AttributeTag.MA)

    return tags
