from dataclasses import dataclass

import numpy as np
import torch
import torch.utils.data

from errors import ConfigurationError, InsufficientDataError, StructuralError
from datasets.sequence import Modality, BoundingBox, read_image
from tracking.sample_generator import SampleGenerator, crop_patches, CROP_SIZE, CROP_PADDING

DATA_FILTERS = ["all", "rgb_only", "nir_only", "mixed"]


@dataclass(frozen=True)
class FrameSample:
    sequence_id: str
    frame_index: int
    image: object
    gt: BoundingBox
    modality: Modality

    def load_image(self):
        if isinstance(self.image, np.ndarray):
            return self.image.astype(np.float32, copy=False)
        return read_image(self.image)


@dataclass
class TrainBatch:
    patches: torch.Tensor     # (n, 3, crop, crop)
    labels: torch.Tensor      # (n,) 1 target, 0 background
    modalities: list          # (n,) Modality of the frame each patch was cut from

    def __post_init__(self):
        if not (len(self.patches) == len(self.labels) == len(self.modalities)):
            raise StructuralError(f"batch fields differ in length: {len(self.patches)} patches, "
                                  f"{len(self.labels)} labels, {len(self.modalities)} modalities")

    def __len__(self):
        return len(self.labels)


def frame_samples(sequences):
    return [FrameSample(s.id, i, f.image, f.gt, f.modality) for s in sequences for i, f in enumerate(s.frames)]


def split_by_modality(dataset):
    """partitions every frame of every sequence by its modality label"""
    samples = frame_samples(dataset)
    rgb = [s for s in samples if s.modality is Modality.RGB]
    nir = [s for s in samples if s.modality is Modality.NIR]
    return rgb, nir


class FramePatchDataset(torch.utils.data.Dataset):
    """
    every item is one training batch: positives (IoU >= 0.7 with the gt) and negatives (IoU <= 0.3)
    cropped from a handful of frames. item i is a pure function of (seed, i)
    """

    def __init__(self, rgb_samples, nir_samples, data_filter="all", iterations=100, n_frames=8, n_pos=32, n_neg=96,
                 crop_size=CROP_SIZE, padding=CROP_PADDING, seed=0, partition="train"):
        if data_filter not in DATA_FILTERS:
            raise ConfigurationError(f"unknown data filter {data_filter}. choose from {DATA_FILTERS}")
        if iterations < 1:
            raise ConfigurationError(f"iterations must be >= 1, got {iterations}")

        self.data_filter = data_filter
        self.iterations = iterations
        self.n_frames = n_frames
        self.n_pos = n_pos
        self.n_neg = n_neg
        self.crop_size = crop_size
        self.padding = padding
        self.seed = seed
        self.partition = partition

        if data_filter in ["rgb_only", "mixed"] and len(rgb_samples) == 0:
            raise InsufficientDataError("no RGB frames to train the RGB branch (branch_rgb)")
        if data_filter in ["nir_only", "mixed"] and len(nir_samples) == 0:
            raise InsufficientDataError("no NIR frames to train the NIR branch (branch_nir)")

        if data_filter == "all":
            self.pools = [list(rgb_samples) + list(nir_samples)]
        elif data_filter == "rgb_only":
            self.pools = [list(rgb_samples)]
        elif data_filter == "nir_only":
            self.pools = [list(nir_samples)]
        else:
            self.pools = [list(rgb_samples), list(nir_samples)]

        if sum(len(p) for p in self.pools) == 0:
            raise InsufficientDataError("no frames to sample training patches from")

    def __str__(self):
        return "FramePatchDataset {} ({}): {} iterations over {} frames".format(
            self.partition, self.data_filter, self.iterations, sum(len(p) for p in self.pools))

    def __len__(self):
        return self.iterations

    def draw_frames(self, rng):
        if len(self.pools) == 1:
            pool = self.pools[0]
            return [pool[i] for i in rng.integers(0, len(pool), size=self.n_frames)]
        # mixed: balanced halves, so both modalities are present in every batch
        half = max(self.n_frames // 2, 1)
        rgb, nir = self.pools
        return [rgb[i] for i in rng.integers(0, len(rgb), size=half)] + \
               [nir[i] for i in rng.integers(0, len(nir), size=self.n_frames - half)]

    def __getitem__(self, idx):
        rng = np.random.default_rng([int(s) for s in np.atleast_1d(self.seed)] + [idx])
        frames = self.draw_frames(rng)

        per_frame_pos = np.full(len(frames), self.n_pos // len(frames))
        per_frame_pos[:self.n_pos % len(frames)] += 1
        per_frame_neg = np.full(len(frames), self.n_neg // len(frames))
        per_frame_neg[:self.n_neg % len(frames)] += 1

        patches, labels, modalities = list(), list(), list()
        for frame, n_pos, n_neg in zip(frames, per_frame_pos, per_frame_neg):
            image = frame.load_image()
            size = (image.shape[1], image.shape[0])
            gt = frame.gt.as_array()
            pos = SampleGenerator("gaussian", size, 0.1, 1.3)(gt, int(n_pos), (0.7, 1.), rng=rng)
            neg = np.concatenate([
                SampleGenerator("uniform", size, 1., 1.6)(gt, int(n_neg) - int(n_neg) // 2, (0., 0.3), rng=rng),
                SampleGenerator("whole", size)(gt, int(n_neg) // 2, (0., 0.3), rng=rng)])
            boxes = np.concatenate([pos, neg])
            if len(boxes) == 0:
                continue
            patches.append(crop_patches(image, boxes, self.crop_size, self.padding))
            labels.append(torch.cat([torch.ones(len(pos), dtype=torch.long), torch.zeros(len(neg), dtype=torch.long)]))
            modalities += [frame.modality] * len(boxes)

        if len(patches) == 0:
            raise InsufficientDataError(f"batch {idx}: no patches could be sampled from {len(frames)} frames")
        return TrainBatch(torch.cat(patches), torch.cat(labels), modalities)


def batch_loader(dataset, workers=0):
    """items are whole batches already"""
    return torch.utils.data.DataLoader(dataset, batch_size=None, shuffle=False, num_workers=workers)
