import copy
import time
import warnings
from collections import deque
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from sklearn.linear_model import Ridge

from errors import InsufficientDataError, ConfigurationError
from datasets.sequence import BoundingBox
from tracking.sample_generator import (SampleGenerator, CandidateSet, sample_candidates, crop_patches,
                                       is_degenerate, clip_boxes)

"""
online tracking loop around a TrackNet: first-frame training, candidate scoring,
short/long term online updates of the head and the ensemble layer, and box regression
"""


@dataclass
class TrackerOptions:
    n_samples: int = 256
    top_k: int = 5
    threshold: float = 0.
    long_interval: int = 10
    trans: float = 0.3
    scale_sigma: float = 0.05
    failure_factor: float = 2.
    max_resample: int = 3

    n_pos_init: int = 100
    n_neg_init: int = 400
    pos_overlap: tuple = (0.7, 1.)
    neg_overlap: tuple = (0., 0.3)
    init_iterations: int = 30
    lr_init: float = 1e-3

    n_pos_update: int = 30
    n_neg_update: int = 100
    short_capacity: int = 20
    long_capacity: int = 100
    update_iterations: int = 10
    lr_update: float = 1e-3

    batch_pos: int = 32
    batch_neg: int = 96
    momentum: float = 0.9
    weight_decay: float = 5e-4

    n_bbreg: int = 200
    bbreg_overlap: tuple = (0.6, 1.)
    ridge_alpha: float = 1.0
    use_bbreg: bool = True

    crop_size: int = 75
    crop_padding: float = 1.14

    def __post_init__(self):
        for name in ["pos_overlap", "neg_overlap", "bbreg_overlap"]:
            setattr(self, name, tuple(getattr(self, name)))
        if self.n_samples < self.top_k or self.top_k < 1:
            raise ConfigurationError(f"need n_samples >= top_k >= 1, got {self.n_samples} and {self.top_k}")
        if self.short_capacity < 1 or self.long_capacity < 1:
            raise ConfigurationError("memory capacities must be positive")

    def to_dict(self):
        return asdict(self)


class BBRegressor():
    """ridge regression from embeddings to box deltas (dx/w, dy/h, log w ratio, log h ratio)"""

    def __init__(self, alpha=1.0):
        self.model = Ridge(alpha=alpha)
        self.fitted = False

    @staticmethod
    def deltas(boxes, target):
        boxes = np.atleast_2d(boxes)
        target = np.asarray(target, dtype=np.float64)
        centers = boxes[:, :2] + boxes[:, 2:] / 2
        target_center = target[:2] + target[2:] / 2
        return np.concatenate([(target_center - centers) / boxes[:, 2:],
                               np.log(target[2:] / boxes[:, 2:])], axis=1)

    def fit(self, features, boxes, target):
        if len(boxes) == 0:
            raise InsufficientDataError("no samples to fit the box regressor")
        self.model.fit(np.asarray(features, dtype=np.float64), self.deltas(boxes, target))
        self.fitted = True
        return self

    def predict(self, features, boxes):
        boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
        deltas = self.model.predict(np.asarray(features, dtype=np.float64))
        centers = boxes[:, :2] + boxes[:, 2:] / 2 + deltas[:, :2] * boxes[:, 2:]
        sizes = boxes[:, 2:] * np.exp(np.clip(deltas[:, 2:], -1, 1))
        return np.concatenate([centers - sizes / 2, sizes], axis=1)


@dataclass
class TrackerState:
    current: BoundingBox
    image_size: tuple
    short_memory: deque          # per frame (positive features, negative features)
    long_memory: deque           # per frame positive features
    frame_index: int = 0
    regressor: BBRegressor = None
    trans: float = 0.3
    rng: np.random.Generator = field(default_factory=np.random.default_rng)


@torch.no_grad()
def extract_features(net, image, boxes, options, chunk=256):
    """backbone features at the insertion point for every box"""
    features = list()
    for i in range(0, len(boxes), chunk):
        patches = crop_patches(image, boxes[i:i + chunk], options.crop_size, options.crop_padding)
        features.append(net.features(patches))
    return torch.cat(features, dim=0)


@torch.no_grad()
def embed_features(net, features, chunk=256):
    return torch.cat([net.forward_from_insertion(features[i:i + chunk]) for i in range(0, len(features), chunk)])


@torch.no_grad()
def score_features(net, features, chunk=256):
    return torch.cat([net.target_score(net.forward_features(features[i:i + chunk]))
                      for i in range(0, len(features), chunk)])


def online_parameters(net):
    groups = net.parameter_groups()
    return groups["head_hidden"] + groups["head_final"] + groups["ensemble"]


def train_on_features(net, pos, neg, iterations, lr, options, rng):
    """
    cross-entropy fine tuning of the head and the ensemble layer on stored insertion-point features.
    the network stays in eval mode, so dropout is off and normalization statistics are fixed
    """
    net.eval()
    optimizer = torch.optim.SGD(online_parameters(net), lr=lr, momentum=options.momentum,
                                weight_decay=options.weight_decay)
    losses = list()
    for _ in range(iterations):
        pos_idx = rng.choice(len(pos), size=min(options.batch_pos, len(pos)), replace=False)
        neg_idx = rng.choice(len(neg), size=min(options.batch_neg, len(neg)), replace=False)
        inputs = torch.cat([pos[torch.from_numpy(pos_idx)], neg[torch.from_numpy(neg_idx)]], dim=0)
        labels = torch.cat([torch.ones(len(pos_idx), dtype=torch.long), torch.zeros(len(neg_idx), dtype=torch.long)])

        optimizer.zero_grad()
        loss = F.cross_entropy(net.forward_features(inputs), labels)
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    return losses


def collect_samples(net, image, box, state, options):
    size = state.image_size
    pos = SampleGenerator("gaussian", size, 0.1, 1.3)(box, options.n_pos_update, options.pos_overlap, rng=state.rng)
    neg = SampleGenerator("uniform", size, 1.5, 1.2)(box, options.n_neg_update, options.neg_overlap, rng=state.rng)
    if len(pos) == 0 or len(neg) == 0:
        return False
    pos_features = extract_features(net, image, pos, options)
    neg_features = extract_features(net, image, neg, options)
    state.short_memory.append((pos_features, neg_features))
    state.long_memory.append(pos_features)
    return True


def init_first_frame(net, image, gt, options=None, seed=0):
    options = options if options is not None else TrackerOptions()
    rng = np.random.default_rng(seed)
    height, width = image.shape[:2]
    size = (width, height)
    gt = gt.clip(width, height)
    target = gt.as_array()

    pos = SampleGenerator("gaussian", size, 0.1, 1.3)(target, options.n_pos_init, options.pos_overlap, rng=rng)
    neg = np.concatenate([
        SampleGenerator("uniform", size, 1., 1.6)(target, options.n_neg_init // 2, options.neg_overlap, rng=rng),
        SampleGenerator("whole", size)(target, options.n_neg_init - options.n_neg_init // 2, options.neg_overlap,
                                       rng=rng)])
    if len(neg) == 0:
        raise InsufficientDataError(f"a {width}x{height} image is too small to sample negatives around {gt}")
    if len(pos) == 0:
        raise InsufficientDataError(f"could not sample positives around {gt}")

    net.eval()
    pos_features = extract_features(net, image, pos, options)
    neg_features = extract_features(net, image, neg, options)
    train_on_features(net, pos_features, neg_features, options.init_iterations, options.lr_init, options, rng)

    regressor = None
    if options.use_bbreg:
        bbreg = SampleGenerator("uniform", size, 0.3, 1.5, aspect=1.1)(target, options.n_bbreg,
                                                                         options.bbreg_overlap, rng=rng)
        if len(bbreg) > 0:
            embeddings = embed_features(net, extract_features(net, image, bbreg, options)).numpy()
            regressor = BBRegressor(options.ridge_alpha).fit(embeddings, bbreg, target)

    state = TrackerState(current=gt, image_size=size,
                         short_memory=deque(maxlen=options.short_capacity),
                         long_memory=deque(maxlen=options.long_capacity),
                         frame_index=0, regressor=regressor, trans=options.trans, rng=rng)

    update_neg = SampleGenerator("uniform", size, 1.5, 1.2)(target, options.n_neg_update, options.neg_overlap, rng=rng)
    state.short_memory.append((pos_features[:options.n_pos_update],
                               extract_features(net, image, update_neg, options) if len(update_neg) > 0
                               else neg_features[:options.n_neg_update]))
    state.long_memory.append(pos_features[:options.n_pos_update])
    return state


def online_update(state, net, which, options=None):
    """fine tunes head and ensemble on the short or long term memory. returns the losses or None"""
    options = options if options is not None else TrackerOptions()
    if which == "short":
        pos = [p for p, _ in state.short_memory]
    elif which == "long":
        pos = list(state.long_memory)
    else:
        raise ConfigurationError(f"unknown update kind {which}. choose short or long")
    neg = [n for _, n in state.short_memory]

    if len(pos) == 0 or len(neg) == 0:
        warnings.warn(f"frame {state.frame_index}: {which} term memory is empty, skipping update")
        return None
    return train_on_features(net, torch.cat(pos), torch.cat(neg), options.update_iterations, options.lr_update,
                             options, state.rng)


def draw_candidates(state, options):
    spread = (state.trans, options.scale_sigma)
    for _ in range(options.max_resample + 1):
        candidates = sample_candidates(state.current, options.n_samples, spread, state.image_size, rng=state.rng)
        valid = np.array([not is_degenerate(b) for b in candidates.boxes])
        if valid.sum() >= options.top_k:
            return CandidateSet(candidates.boxes[valid])
        spread = (spread[0] * 2, spread[1] * 2)
    raise InsufficientDataError(f"frame {state.frame_index}: no valid candidates around {state.current}")


def track_frame(state, net, image, options=None):
    """returns (state, predicted box, frame record)"""
    options = options if options is not None else TrackerOptions()
    start = time.perf_counter()
    state.frame_index += 1
    net.eval()

    candidates = draw_candidates(state, options)
    features = extract_features(net, image, candidates.boxes, options)
    candidates = candidates.with_scores(score_features(net, features).numpy())

    top = candidates.top(options.top_k)
    score = float(candidates.scores[top].mean())
    target = candidates.boxes[top].mean(axis=0)
    success = score > options.threshold

    state.trans = options.trans if success else options.trans * options.failure_factor

    result = target
    if success and state.regressor is not None:
        embeddings = embed_features(net, features[torch.from_numpy(top)]).numpy()
        result = state.regressor.predict(embeddings, candidates.boxes[top]).mean(axis=0)

    target = clip_boxes(target[None], state.image_size)[0]
    result = clip_boxes(result[None], state.image_size)[0]
    state.current = BoundingBox.from_array(target)

    if success:
        collect_samples(net, image, target, state, options)

    update = None
    if not success:
        if online_update(state, net, "short", options) is not None:
            update = "short"
    elif state.frame_index % options.long_interval == 0:
        if online_update(state, net, "long", options) is not None:
            update = "long"

    record = dict(frame=state.frame_index, score=score, success=bool(success), update=update,
                  x=float(result[0]), y=float(result[1]), w=float(result[2]), h=float(result[3]),
                  elapsed=time.perf_counter() - start)
    return state, BoundingBox.from_array(result), record


def run_sequence(net, sequence, options=None, seed=0):
    """
    tracks a sequence from its first-frame ground truth on a fresh copy of net.
    returns the boxes and a per-frame log (DataFrame, attrs["fps"] holds the speed)
    """
    options = options if options is not None else TrackerOptions()
    torch.manual_seed(seed)
    net = copy.deepcopy(net)

    start = time.perf_counter()
    first = sequence.frames[0]
    image = first.load_image()
    state = init_first_frame(net, image, first.gt, options, seed=seed)

    boxes = [state.current]
    records = [dict(frame=0, score=np.nan, success=True, update="init", x=state.current.x, y=state.current.y,
                    w=state.current.w, h=state.current.h, elapsed=time.perf_counter() - start)]
    for frame in sequence.frames[1:]:
        state, box, record = track_frame(state, net, frame.load_image(), options)
        boxes.append(box)
        records.append(record)

    total = time.perf_counter() - start
    log = pd.DataFrame(records)
    log.insert(0, "sequence", sequence.id)
    log.attrs["fps"] = len(sequence) / total if total > 0 else float("inf")
    return boxes, log
