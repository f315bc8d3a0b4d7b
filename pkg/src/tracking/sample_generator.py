from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from errors import NumericError, ConfigurationError
from datasets.sequence import BoundingBox

MIN_SIZE = 4.
CROP_SIZE = 75
CROP_PADDING = 1.14
KINDS = ["gaussian", "uniform", "whole"]


def overlap_ratio(boxes, reference):
    """IoU of every row of boxes (n, 4) with one reference box (4,). x, y, w, h"""
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    reference = np.asarray(reference, dtype=np.float64)
    left = np.maximum(boxes[:, 0], reference[0])
    top = np.maximum(boxes[:, 1], reference[1])
    right = np.minimum(boxes[:, 0] + boxes[:, 2], reference[0] + reference[2])
    bottom = np.minimum(boxes[:, 1] + boxes[:, 3], reference[1] + reference[3])
    intersection = np.clip(right - left, 0, None) * np.clip(bottom - top, 0, None)
    union = boxes[:, 2] * boxes[:, 3] + reference[2] * reference[3] - intersection
    return np.where(union > 0, intersection / np.where(union > 0, union, 1), 0.)


def clip_boxes(boxes, image_size):
    """keeps w, h within [MIN_SIZE, image size] and the box inside the image"""
    width, height = image_size
    boxes = np.array(boxes, dtype=np.float64)
    boxes[:, 2] = np.clip(boxes[:, 2], min(MIN_SIZE, width), width)
    boxes[:, 3] = np.clip(boxes[:, 3], min(MIN_SIZE, height), height)
    boxes[:, 0] = np.clip(boxes[:, 0], 0, width - boxes[:, 2])
    boxes[:, 1] = np.clip(boxes[:, 1], 0, height - boxes[:, 3])
    return boxes


@dataclass
class CandidateSet:
    boxes: np.ndarray            # (n, 4) x, y, w, h
    scores: np.ndarray = None    # (n,)

    def __post_init__(self):
        self.boxes = np.atleast_2d(np.asarray(self.boxes, dtype=np.float64))
        if len(self.boxes) == 0:
            raise ConfigurationError("candidate set is empty")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64)
            if self.scores.shape != (len(self.boxes),):
                raise ConfigurationError(f"{len(self.boxes)} candidates but scores of shape {self.scores.shape}")
            if not np.isfinite(self.scores).all():
                raise NumericError(f"non-finite candidate scores at {np.flatnonzero(~np.isfinite(self.scores)).tolist()}")

    def __len__(self):
        return len(self.boxes)

    def with_scores(self, scores):
        return CandidateSet(self.boxes, scores)

    def top(self, k=5):
        """indices of the k best scored candidates, best first"""
        k = min(k, len(self))
        return np.argsort(-self.scores, kind="stable")[:k]


def sample_candidates(prev, n, spread, image_size, seed=None, rng=None):
    """
    n boxes drawn around prev: center offset ~ N(0, (sigma_xy * mean(w, h))^2),
    log scale ~ N(0, sigma_scale^2); clipped to the image
    """
    if n < 1:
        raise ConfigurationError(f"need at least one candidate, got {n}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    prev = prev.as_array() if isinstance(prev, BoundingBox) else np.asarray(prev, dtype=np.float64)
    sigma_xy, sigma_scale = spread

    cx, cy = prev[0] + prev[2] / 2, prev[1] + prev[3] / 2
    size = np.mean(prev[2:])
    offsets = sigma_xy * size * rng.standard_normal((n, 2))
    scales = np.exp(sigma_scale * rng.standard_normal(n))

    w = prev[2] * scales
    h = prev[3] * scales
    boxes = np.stack([cx + offsets[:, 0] - w / 2, cy + offsets[:, 1] - h / 2, w, h], axis=1)
    if sigma_xy == 0 and sigma_scale == 0:
        boxes = np.repeat(prev[None], n, axis=0)
    return CandidateSet(clip_boxes(boxes, image_size) if image_size is not None else boxes)


class SampleGenerator():
    """
    gaussian: around the box (tracking candidates, positives)
    uniform: uniformly shifted and scaled around the box (negatives, regressor samples)
    whole: anywhere in the image (negatives)
    optional IoU-range rejection keeps only boxes whose overlap with the reference lies in [low, high]
    """

    def __init__(self, kind, image_size, trans=1., scale=1., aspect=None, max_rounds=20):
        if kind not in KINDS:
            raise ConfigurationError(f"unknown sample generator kind {kind}. choose from {KINDS}")
        self.kind = kind
        self.image_size = tuple(image_size)
        self.trans = trans
        self.scale = scale
        self.aspect = aspect
        self.max_rounds = max_rounds

    def _draw(self, box, n, rng):
        width, height = self.image_size
        cx, cy = box[0] + box[2] / 2, box[1] + box[3] / 2
        w, h = np.full(n, box[2]), np.full(n, box[3])

        if self.aspect is not None:
            ratio = self.aspect ** rng.uniform(-1, 1, size=n)
            w, h = w * ratio, h / ratio

        if self.kind == "gaussian":
            size = np.mean(box[2:])
            cx = cx + self.trans * size * rng.standard_normal(n)
            cy = cy + self.trans * size * rng.standard_normal(n)
            factor = np.exp(np.log(self.scale) * rng.standard_normal(n)) if self.scale > 1 else np.ones(n)
        elif self.kind == "uniform":
            size = np.mean(box[2:])
            cx = cx + self.trans * size * rng.uniform(-1, 1, size=n)
            cy = cy + self.trans * size * rng.uniform(-1, 1, size=n)
            factor = self.scale ** rng.uniform(-1, 1, size=n)
        else:
            factor = self.scale ** rng.uniform(-1, 1, size=n)
            half_w = np.minimum(w * factor, width) / 2
            half_h = np.minimum(h * factor, height) / 2
            cx = half_w + (width - 2 * half_w) * rng.random(n)
            cy = half_h + (height - 2 * half_h) * rng.random(n)

        w, h = w * factor, h * factor
        return clip_boxes(np.stack([cx - w / 2, cy - h / 2, w, h], axis=1), self.image_size)

    def __call__(self, box, n, overlap_range=None, rng=None, seed=None):
        rng = rng if rng is not None else np.random.default_rng(seed)
        box = box.as_array() if isinstance(box, BoundingBox) else np.asarray(box, dtype=np.float64)
        if overlap_range is None:
            return self._draw(box, n, rng)

        low, high = overlap_range
        kept = list()
        remaining = n
        for _ in range(self.max_rounds):
            samples = self._draw(box, max(remaining * 2, 16), rng)
            iou = overlap_ratio(samples, box)
            samples = samples[(iou >= low) & (iou <= high)]
            kept.append(samples[:remaining])
            remaining -= len(kept[-1])
            if remaining <= 0:
                break
        return np.concatenate(kept, axis=0) if len(kept) > 0 else np.zeros((0, 4))


def is_degenerate(box, min_size=1.):
    box = box.as_array() if isinstance(box, BoundingBox) else np.asarray(box, dtype=np.float64)
    return not np.isfinite(box).all() or box[2] < min_size or box[3] < min_size


def crop_patches(image, boxes, crop_size=CROP_SIZE, padding=CROP_PADDING):
    """
    crops every box (padded by `padding` around its center) out of an HxWx3 image in [0, 1]
    and resizes it to crop_size x crop_size with bilinear sampling. returns (n, 3, crop, crop)
    centered at zero; area outside the image reads as 0
    """
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    assert boxes.shape[1] == 4, "boxes must be (n, 4) x, y, w, h"
    if isinstance(image, np.ndarray):
        image = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
    height, width = image.shape[:2]
    source = (image.permute(2, 0, 1) - 0.5)[None]

    cx = boxes[:, 0] + boxes[:, 2] / 2
    cy = boxes[:, 1] + boxes[:, 3] / 2
    theta = np.zeros((len(boxes), 2, 3))
    theta[:, 0, 0] = boxes[:, 2] * padding / width
    theta[:, 0, 2] = 2 * cx / width - 1
    theta[:, 1, 1] = boxes[:, 3] * padding / height
    theta[:, 1, 2] = 2 * cy / height - 1
    theta = torch.from_numpy(theta).to(source.dtype)

    grid = F.affine_grid(theta, size=(len(boxes), 3, crop_size, crop_size), align_corners=False)
    return F.grid_sample(source.expand(len(boxes), -1, -1, -1), grid, mode="bilinear",
                         padding_mode="zeros", align_corners=False)
