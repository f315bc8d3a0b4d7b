import os
import json
import math
import shutil
import hashlib
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np
import tqdm

from errors import ConfigurationError, StructuralError
from datasets.sequence import (BoundingBox, FrameRecord, Sequence, Modality, AttributeTag,
                               modality_switch_count, derive_attributes, save_sequence)

"""
Cross-modal sequence construction:
 - convert_dual selects one stream per frame from co-registered two-stream sequences
 - generate_toy_sequence / generate_toy_benchmark render procedural RGB/NIR scenes
"""

MAX_SWITCHES = 5
SEGMENT_FRACTION = (0.25, 0.5)

LUMINANCE = np.array([0.299, 0.587, 0.114], dtype=np.float32)
NIR_GAMMA = 0.6
NIR_NOISE = 0.02
MA_BOOST = 0.5

TEXTURES = ["checker", "stripes", "rings"]


class Challenge(Enum):
    IV = "IV"  # illumination variation
    TC = "TC"  # thermal crossover


@dataclass(frozen=True)
class DualModalitySequence:
    id: str
    frames_a: tuple      # RGB stream
    frames_b: tuple      # second modality, co-registered with frames_a
    gt: tuple            # boxes shared by both streams
    challenges: tuple    # per frame frozenset of Challenge

    def __post_init__(self):
        for name in ["frames_a", "frames_b", "gt", "challenges"]:
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "challenges", tuple(frozenset(c) for c in self.challenges))
        lengths = dict(frames_a=len(self.frames_a), frames_b=len(self.frames_b),
                       gt=len(self.gt), challenges=len(self.challenges))
        if len(set(lengths.values())) != 1:
            raise StructuralError(f"dual-modality sequence {self.id} streams differ in length {lengths}")
        if lengths["gt"] == 0:
            raise StructuralError(f"dual-modality sequence {self.id} is empty")

    def __len__(self):
        return len(self.gt)


@dataclass(frozen=True)
class Discarded:
    id: str
    switches: int
    reason: str


@dataclass(frozen=True)
class TargetDescriptor:
    width: float = 20.
    height: float = 20.
    color_a: tuple = (0.9, 0.2, 0.1)
    color_b: tuple = (0.1, 0.3, 0.9)
    texture: str = "checker"
    cell: int = 4


@dataclass(frozen=True)
class MotionDescriptor:
    velocity: tuple = (1.5, 0.8)
    noise: float = 0.5
    scale_drift: float = 0.


@dataclass(frozen=True)
class ToySequenceConfig:
    length: int = 100
    image_size: int = 96
    target: TargetDescriptor = field(default_factory=TargetDescriptor)
    motion: MotionDescriptor = field(default_factory=MotionDescriptor)
    switch_schedule: tuple = ()
    ma_frames: tuple = ()
    start_modality: str = "RGB"
    seed: int = 0
    id: str = "toy"

    def __post_init__(self):
        object.__setattr__(self, "switch_schedule", tuple(int(i) for i in self.switch_schedule))
        object.__setattr__(self, "ma_frames", tuple(int(i) for i in self.ma_frames))
        if isinstance(self.target, dict):
            object.__setattr__(self, "target", TargetDescriptor(**self.target))
        if isinstance(self.motion, dict):
            object.__setattr__(self, "motion", MotionDescriptor(**self.motion))
        self.validate()

    def validate(self):
        if self.length < 1:
            raise ConfigurationError(f"{self.id}: length must be >= 1, got {self.length}")
        schedule = self.switch_schedule
        if any(b <= a for a, b in zip(schedule[:-1], schedule[1:])):
            raise ConfigurationError(f"{self.id}: switch indices must be strictly increasing, got {schedule}")
        if any(i < 1 or i >= self.length for i in schedule):
            raise ConfigurationError(f"{self.id}: switch indices must lie in [1, {self.length}), got {schedule}")
        if len(self.ma_frames) > 0:
            if len(schedule) == 0 or min(self.ma_frames) < schedule[0]:
                raise ConfigurationError(f"{self.id}: MA frames must lie at or after a switch index")
            if max(self.ma_frames) >= self.length:
                raise ConfigurationError(f"{self.id}: MA frame beyond sequence length")
        if self.target.width >= self.image_size or self.target.height >= self.image_size:
            raise ConfigurationError(f"{self.id}: target does not fit into a {self.image_size}px image")
        Modality(self.start_modality)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def modality_schedule(length, start, switch_schedule):
    modality = Modality(start) if not isinstance(start, Modality) else start
    switches = set(switch_schedule)
    modalities = list()
    for i in range(length):
        if i in switches:
            modality = modality.other()
        modalities.append(modality)
    return modalities


def challenge_onsets(challenges):
    """first frame of every maximal run of frames flagged with any challenge"""
    flagged = [len(c) > 0 for c in challenges]
    return [i for i, f in enumerate(flagged) if f and (i == 0 or not flagged[i - 1])]


def convert_dual(sequence, seed=0):
    """
    selects one stream per frame of a co-registered two-stream sequence:
    start in RGB unless the first frame has illumination variation, switch at every
    challenge onset, discard sequences with more than 5 switches and inject a switched
    segment of 1/4 to 1/2 of the length into sequences without any switch
    """
    length = len(sequence)
    start = Modality.NIR if Challenge.IV in sequence.challenges[0] else Modality.RGB
    switch_points = [i for i in challenge_onsets(sequence.challenges) if i >= 1]

    if len(switch_points) > MAX_SWITCHES:
        return Discarded(sequence.id, len(switch_points), f"more than {MAX_SWITCHES} modality switches")

    if len(switch_points) == 0:
        rng = np.random.default_rng(seed)
        low, high = math.ceil(length * SEGMENT_FRACTION[0]), math.floor(length * SEGMENT_FRACTION[1])
        if length < 2 or low > high:
            return Discarded(sequence.id, 0, "too short to inject a switched segment")
        segment = int(np.clip(round(rng.uniform(*SEGMENT_FRACTION) * length), low, high))
        segment = min(segment, length - 1)
        first = int(rng.integers(1, length - segment + 1))
        switch_points = [first] if first + segment >= length else [first, first + segment]

    modalities = modality_schedule(length, start, switch_points)
    switches = modality_switch_count(modalities)
    if switches > MAX_SWITCHES:
        return Discarded(sequence.id, switches, f"more than {MAX_SWITCHES} modality switches")

    frames = [FrameRecord(image=a if m is Modality.RGB else b, modality=m, gt=box)
              for a, b, box, m in zip(sequence.frames_a, sequence.frames_b, sequence.gt, modalities)]
    attributes = derive_attributes(sequence.gt, _size_of(sequence.frames_a[0]))
    return Sequence(id=sequence.id, frames=frames, attributes=attributes)


def _size_of(image):
    if isinstance(image, np.ndarray):
        return image.shape[1], image.shape[0]
    return FrameRecord(image=image, modality=Modality.RGB, gt=BoundingBox(0, 0, 1, 1)).size


def render_background(size, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    base = rng.uniform(0.1, 0.9, size=(2, 3)).astype(np.float32)
    image = base[0] * (1 - xx[..., None]) + base[1] * xx[..., None]
    image = image * (0.7 + 0.3 * yy[..., None])

    for _ in range(rng.integers(4, 9)):
        color = rng.uniform(0, 1, size=3).astype(np.float32)
        x0, y0 = rng.integers(0, size, size=2)
        w, h = rng.integers(size // 10, size // 3, size=2)
        if rng.random() < 0.5:
            image[y0:y0 + h, x0:x0 + w] = color
        else:
            mask = ((xx * size - x0) / max(w, 1)) ** 2 + ((yy * size - y0) / max(h, 1)) ** 2 < 1
            image[mask] = color
    return np.clip(image, 0, 1)


def render_texture(target, width, height):
    yy, xx = np.mgrid[0:height, 0:width]
    cell = max(int(target.cell), 1)
    if target.texture == "checker":
        pattern = ((xx // cell) + (yy // cell)) % 2
    elif target.texture == "stripes":
        pattern = (xx // cell) % 2
    elif target.texture == "rings":
        r = np.sqrt((xx - width / 2) ** 2 + (yy - height / 2) ** 2)
        pattern = (r // cell).astype(int) % 2
    else:
        raise ConfigurationError(f"unknown texture {target.texture}. choose from {TEXTURES}")
    a = np.array(target.color_a, dtype=np.float32)
    b = np.array(target.color_b, dtype=np.float32)
    return np.where(pattern[..., None] == 0, a, b).astype(np.float32)


def simulate_trajectory(cfg, rng):
    """target boxes for every frame. motion is reflected at the image borders"""
    size = cfg.image_size
    w, h = float(cfg.target.width), float(cfg.target.height)
    w0, h0 = w, h
    x = rng.uniform(0, size - w)
    y = rng.uniform(0, size - h)
    vx, vy = [float(v) for v in cfg.motion.velocity]

    boxes = list()
    for i in range(cfg.length):
        if i > 0:
            if cfg.motion.scale_drift > 0:
                factor = math.exp(rng.normal(0, cfg.motion.scale_drift))
                w = float(np.clip(w * factor, 0.5 * w0, min(2 * w0, size - 1)))
                h = float(np.clip(h * factor, 0.5 * h0, min(2 * h0, size - 1)))
            x += vx + rng.normal(0, cfg.motion.noise)
            y += vy + rng.normal(0, cfg.motion.noise)
            if x < 0:
                x, vx = -x, -vx
            if x + w > size:
                x, vx = 2 * (size - w) - x, -vx
            if y < 0:
                y, vy = -y, -vy
            if y + h > size:
                y, vy = 2 * (size - h) - y, -vy
            x = float(np.clip(x, 0, size - w))
            y = float(np.clip(y, 0, size - h))
        boxes.append(BoundingBox(x, y, w, h))
    return boxes


def render_scene(background, texture, box):
    image = background.copy()
    x0, y0 = int(round(box.x)), int(round(box.y))
    x1, y1 = int(round(box.x + box.w)), int(round(box.y + box.h))
    height, width = image.shape[:2]
    x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, width), min(y1, height)
    if x1 > x0 and y1 > y0:
        patch = texture[:y1 - y0, :x1 - x0]
        image[y0:y0 + patch.shape[0], x0:x0 + patch.shape[1]] = patch
    return image


def to_nir(rgb, rng):
    """luminance collapse, gamma remap and sensor noise"""
    luminance = (rgb * LUMINANCE).sum(-1)
    nir = luminance ** NIR_GAMMA + rng.normal(0, NIR_NOISE, size=luminance.shape)
    return np.repeat(np.clip(nir, 0, 1)[..., None], 3, axis=-1).astype(np.float32)


def modality_adaptation(image):
    return np.clip(image + MA_BOOST, 0, 1).astype(np.float32)


def generate_toy_sequence(cfg):
    rng = np.random.default_rng(cfg.seed)
    background = render_background(cfg.image_size, rng)
    boxes = simulate_trajectory(cfg, rng)
    max_w = int(math.ceil(max(b.w for b in boxes))) + 1
    max_h = int(math.ceil(max(b.h for b in boxes))) + 1
    texture = render_texture(cfg.target, max_w, max_h)

    modalities = modality_schedule(cfg.length, cfg.start_modality, cfg.switch_schedule)
    ma_frames = set(cfg.ma_frames)

    frames = list()
    for i, (box, modality) in enumerate(zip(boxes, modalities)):
        image = render_scene(background, texture, box)
        if modality is Modality.NIR:
            image = to_nir(image, rng)
        if i in ma_frames:
            image = modality_adaptation(image)
        frames.append(FrameRecord(image=image.astype(np.float32), modality=modality, gt=box))

    attributes = derive_attributes(boxes, (cfg.image_size, cfg.image_size), ma_frames=cfg.ma_frames)
    return Sequence(id=cfg.id, frames=frames, attributes=attributes)


def render_dual_sequence(cfg, challenge_runs=(0, 4), run_length=(3, 15), iv_first_frame=0.1, seed=None):
    """co-registered RGB and second-modality renderings of one toy scene with random IV/TC runs"""
    rng = np.random.default_rng(cfg.seed)
    background = render_background(cfg.image_size, rng)
    boxes = simulate_trajectory(cfg, rng)
    texture = render_texture(cfg.target, int(math.ceil(max(b.w for b in boxes))) + 1,
                             int(math.ceil(max(b.h for b in boxes))) + 1)

    frames_a, frames_b = list(), list()
    for box in boxes:
        image = render_scene(background, texture, box)
        frames_a.append(image.astype(np.float32))
        frames_b.append(to_nir(image, rng))

    challenge_rng = np.random.default_rng(cfg.seed if seed is None else seed)
    challenges = [set() for _ in range(cfg.length)]
    for _ in range(challenge_rng.integers(challenge_runs[0], challenge_runs[1] + 1)):
        start = int(challenge_rng.integers(0, cfg.length))
        duration = int(challenge_rng.integers(run_length[0], run_length[1] + 1))
        kind = Challenge.IV if challenge_rng.random() < 0.5 else Challenge.TC
        for i in range(start, min(start + duration, cfg.length)):
            challenges[i].add(kind)
    if challenge_rng.random() < iv_first_frame:
        challenges[0].add(Challenge.IV)

    return DualModalitySequence(id=cfg.id, frames_a=frames_a, frames_b=frames_b, gt=boxes, challenges=challenges)


def sample_toy_config(rng, id, image_size=96, length_range=(80, 300), switch_weights=(0.6, 0.3, 0.1),
                      ma_probability=0.15):
    length = int(rng.integers(length_range[0], length_range[1] + 1))
    n_switches = int(rng.choice(np.arange(1, len(switch_weights) + 1), p=np.array(switch_weights) / sum(switch_weights)))
    margin = max(1, min(10, length // 10))
    candidates = np.arange(margin, length - margin)
    n_switches = min(n_switches, len(candidates))
    switch_schedule = tuple(sorted(int(i) for i in rng.choice(candidates, n_switches, replace=False)))

    ma_frames = ()
    if rng.random() < ma_probability and len(switch_schedule) > 0:
        first = switch_schedule[0]
        ma_frames = tuple(range(first, min(first + int(rng.integers(3, 9)), length)))

    side = image_size / 96.
    target = TargetDescriptor(
        width=float(np.round(rng.uniform(12, 28) * side, 1)),
        height=float(np.round(rng.uniform(12, 28) * side, 1)),
        color_a=tuple(float(c) for c in np.round(rng.uniform(0, 1, size=3), 3)),
        color_b=tuple(float(c) for c in np.round(rng.uniform(0, 1, size=3), 3)),
        texture=str(rng.choice(TEXTURES)),
        cell=int(rng.integers(2, 6)))

    angle = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(0.5, 2.5) * side
    motion = MotionDescriptor(
        velocity=(float(np.round(speed * np.cos(angle), 3)), float(np.round(speed * np.sin(angle), 3))),
        noise=float(np.round(rng.uniform(0.2, 0.8) * side, 3)),
        scale_drift=float(np.round(rng.uniform(0., 0.01), 4)))

    return ToySequenceConfig(length=length, image_size=image_size, target=target, motion=motion,
                             switch_schedule=switch_schedule, ma_frames=ma_frames,
                             start_modality="RGB" if rng.random() < 0.75 else "NIR",
                             seed=int(rng.integers(0, 2 ** 31 - 1)), id=id)


def toy_benchmark_configs(n_train, n_test, master_seed, **kwargs):
    if n_train < 1 or n_test < 1:
        raise ConfigurationError(f"benchmark needs at least one train and one test sequence, got {n_train}/{n_test}")
    rng = np.random.default_rng(master_seed)
    train = [sample_toy_config(rng, "toy_train_{:04d}".format(i), **kwargs) for i in range(n_train)]
    test = [sample_toy_config(rng, "toy_test_{:04d}".format(i), **kwargs) for i in range(n_test)]
    return train, test


def generate_toy_benchmark(n_train, n_test, master_seed, **kwargs):
    train_configs, test_configs = toy_benchmark_configs(n_train, n_test, master_seed, **kwargs)
    train = [generate_toy_sequence(cfg) for cfg in tqdm.tqdm(train_configs, desc="rendering train", leave=False)]
    test = [generate_toy_sequence(cfg) for cfg in tqdm.tqdm(test_configs, desc="rendering test", leave=False)]
    return train, test


def manifest_hash(manifest):
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode("utf-8")).hexdigest()


def save_benchmark(root, train_configs, test_configs, dual_configs=(), master_seed=None, force=False, extra=None):
    """
    renders every config straight to disk (one sequence in memory at a time)
    and writes manifest.json. returns the manifest
    """
    if os.path.exists(root) and len(os.listdir(root)) > 0:
        if not force:
            raise ConfigurationError(f"{root} exists. use --force to regenerate")
        shutil.rmtree(root)
    os.makedirs(root, exist_ok=True)

    manifest = dict(master_seed=master_seed, train=list(), test=list(), converted=list(), discarded=list())
    if extra is not None:
        manifest.update(extra)

    for split, configs in [("train", train_configs), ("test", test_configs)]:
        for cfg in tqdm.tqdm(configs, desc=f"writing {split}", leave=False):
            sequence = generate_toy_sequence(cfg)
            save_sequence(sequence, os.path.join(root, split, cfg.id))
            manifest[split].append(dict(id=cfg.id, seed=cfg.seed, config=cfg.to_dict(),
                                        switches=modality_switch_count(sequence)))

    for cfg in tqdm.tqdm(dual_configs, desc="converting dual", leave=False):
        result = convert_dual(render_dual_sequence(cfg), seed=cfg.seed)
        if isinstance(result, Discarded):
            manifest["discarded"].append(asdict(result))
            continue
        save_sequence(result, os.path.join(root, "converted", cfg.id))
        manifest["converted"].append(dict(id=cfg.id, seed=cfg.seed, config=cfg.to_dict(),
                                          switches=modality_switch_count(result)))

    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
    print("wrote benchmark manifest to {} (sha256 {})".format(os.path.join(root, "manifest.json"),
                                                              manifest_hash(manifest)[:12]))
    return manifest
