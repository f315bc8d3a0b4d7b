from dataclasses import dataclass, field, asdict

import numpy as np

from errors import ValidationError, StructuralError, MissingResultsError, ConfigurationError
from datasets.sequence import BoundingBox, ATTRIBUTE_ORDER, SWITCH_BINS, switch_bin, modality_switch_count

SCHEMA_VERSION = 1
REFERENCE_SIZE = 100.
SCORE_NAMES = ["pr", "npr", "sr1", "sr2"]


def _as_array(boxes):
    if isinstance(boxes, BoundingBox):
        return boxes.as_array()[None]
    boxes = [b.as_array() if isinstance(b, BoundingBox) else np.asarray(b, dtype=np.float64) for b in boxes]
    return np.atleast_2d(np.stack(boxes))


def iou_array(pred, gt):
    """row-wise intersection over union of (n, 4) x, y, w, h arrays"""
    left = np.maximum(pred[:, 0], gt[:, 0])
    top = np.maximum(pred[:, 1], gt[:, 1])
    right = np.minimum(pred[:, 0] + pred[:, 2], gt[:, 0] + gt[:, 2])
    bottom = np.minimum(pred[:, 1] + pred[:, 3], gt[:, 1] + gt[:, 3])
    intersection = np.clip(right - left, 0, None) * np.clip(bottom - top, 0, None)
    union = pred[:, 2] * pred[:, 3] + gt[:, 2] * gt[:, 3] - intersection
    return np.clip(intersection / union, 0., 1.)


def center_error_array(pred, gt):
    delta = (pred[:, :2] + pred[:, 2:] / 2) - (gt[:, :2] + gt[:, 2:] / 2)
    return np.sqrt((delta ** 2).sum(1))


def norm_center_error_array(pred, gt):
    if (gt[:, 2:] <= 0).any():
        raise ValidationError("normalized center error needs ground truth with positive w and h")
    delta = ((pred[:, :2] + pred[:, 2:] / 2) - (gt[:, :2] + gt[:, 2:] / 2)) / gt[:, 2:]
    return REFERENCE_SIZE * np.sqrt((delta ** 2).sum(1))


def iou(a, b):
    return float(iou_array(_as_array(a), _as_array(b))[0])


def center_error(a, b):
    return float(center_error_array(_as_array(a), _as_array(b))[0])


def norm_center_error(pred, gt):
    """center error in units of the gt box, scaled to a 100 pixel reference box"""
    return float(norm_center_error_array(_as_array(pred), _as_array(gt))[0])


@dataclass(frozen=True)
class EvalConfig:
    pr_threshold: float = 20.
    npr_threshold: float = 0.2
    sr_threshold: float = 0.5
    distance_grid: tuple = tuple(np.arange(51, dtype=np.float64).tolist())
    norm_grid: tuple = tuple((np.arange(51) / 100).tolist())
    overlap_grid: tuple = tuple((np.arange(51) / 50).tolist())

    def __post_init__(self):
        for name in ["distance_grid", "norm_grid", "overlap_grid"]:
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        for threshold, grid in [("pr_threshold", "distance_grid"), ("npr_threshold", "norm_grid"),
                                ("sr_threshold", "overlap_grid")]:
            if not np.isclose(getattr(self, grid), getattr(self, threshold), rtol=0, atol=1e-12).any():
                raise ConfigurationError(f"{threshold}={getattr(self, threshold)} does not lie on {grid}")

    def to_dict(self):
        d = asdict(self)
        for name in ["distance_grid", "norm_grid", "overlap_grid"]:
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def precision_curve(errors, grid):
    errors = np.asarray(errors)
    return np.array([(errors <= t).mean() if len(errors) > 0 else 0. for t in grid])


def success_curve(overlaps, grid):
    """fraction of frames with overlap >= t; frames without any overlap never count as successes"""
    overlaps = np.asarray(overlaps)
    return np.array([((overlaps >= t) & (overlaps > 0)).mean() if len(overlaps) > 0 else 0. for t in grid])


def area_under_curve(curve, grid):
    grid = np.asarray(grid)
    curve = np.asarray(curve)
    span = grid[-1] - grid[0]
    return float(((curve[1:] + curve[:-1]) / 2 * np.diff(grid)).sum() / span) if span > 0 else float(curve[0])


def scores(overlaps, errors, norm_errors, cfg):
    overlaps, errors, norm_errors = np.asarray(overlaps), np.asarray(errors), np.asarray(norm_errors)
    if len(overlaps) == 0:
        return dict(pr=0., npr=0., sr1=0., sr2=0., frames=0)
    return dict(
        pr=float((errors <= cfg.pr_threshold).mean()),
        npr=float((norm_errors / REFERENCE_SIZE <= cfg.npr_threshold).mean()),
        sr1=float(((overlaps >= cfg.sr_threshold) & (overlaps > 0)).mean()),
        sr2=area_under_curve(success_curve(overlaps, cfg.overlap_grid), cfg.overlap_grid),
        frames=int(len(overlaps)),
    )


@dataclass
class EvalReport:
    pr: float
    npr: float
    sr1: float
    sr2: float
    precision_curve: tuple
    norm_precision_curve: tuple
    success_curve: tuple
    per_attribute: dict = field(default_factory=dict)
    per_switch_bin: dict = field(default_factory=dict)
    per_sequence: dict = field(default_factory=dict)
    frames: int = 0
    sequences: int = 0
    fps: float = None
    config: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        for name in ["precision_curve", "norm_precision_curve", "success_curve"]:
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        if isinstance(self.config, dict):
            self.config = EvalConfig.from_dict(self.config)
        for name in SCORE_NAMES:
            value = getattr(self, name)
            if not 0. <= value <= 1.:
                raise ValidationError(f"score {name}={value} outside [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["config"] = self.config.to_dict()
        for name in ["precision_curve", "norm_precision_curve", "success_curve"]:
            d[name] = list(d[name])
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValidationError(f"report schema version {version} is not supported (expected {SCHEMA_VERSION})")
        return cls(**d)

    def summary(self):
        return dict((name, getattr(self, name)) for name in SCORE_NAMES)


def sequence_errors(pred, sequence):
    gt = sequence.gt_array()
    pred = _as_array(pred)
    if len(pred) != len(gt):
        raise StructuralError(f"sequence {sequence.id}: {len(pred)} predicted boxes for {len(gt)} frames")
    return iou_array(pred, gt), center_error_array(pred, gt), norm_center_error_array(pred, gt)


def _pooled(errors, ids, cfg):
    assert all(i in errors for i in ids)
    if len(ids) == 0:
        return None
    overlaps = np.concatenate([errors[i][0] for i in ids])
    center = np.concatenate([errors[i][1] for i in ids])
    norm = np.concatenate([errors[i][2] for i in ids])
    result = scores(overlaps, center, norm, cfg)
    result["sequences"] = len(ids)
    return result


def evaluate(results, dataset, cfg=None, fps=None):
    """
    pools every frame of every sequence. results maps sequence id -> predicted boxes.
    per-attribute and per-switch-bin scores pool the frames of the matching sequences
    """
    cfg = cfg if cfg is not None else EvalConfig()
    if len(dataset) == 0:
        raise StructuralError("nothing to evaluate: empty dataset")

    errors = dict()
    for sequence in dataset:
        if sequence.id not in results:
            raise MissingResultsError(f"no results for sequence {sequence.id}")
        errors[sequence.id] = sequence_errors(results[sequence.id], sequence)

    ids = [s.id for s in dataset]
    overlaps = np.concatenate([errors[i][0] for i in ids])
    center = np.concatenate([errors[i][1] for i in ids])
    norm = np.concatenate([errors[i][2] for i in ids])
    overall = scores(overlaps, center, norm, cfg)

    per_attribute = dict()
    for tag in ATTRIBUTE_ORDER:
        pooled = _pooled(errors, [s.id for s in dataset if tag in s.attributes], cfg)
        if pooled is not None:
            per_attribute[tag.value] = pooled

    per_switch_bin = dict()
    for b in SWITCH_BINS:
        pooled = _pooled(errors, [s.id for s in dataset if switch_bin(modality_switch_count(s)) == b], cfg)
        if pooled is not None:
            per_switch_bin[b] = pooled

    per_sequence = dict((i, _pooled(errors, [i], cfg)) for i in ids)

    return EvalReport(
        pr=overall["pr"], npr=overall["npr"], sr1=overall["sr1"], sr2=overall["sr2"],
        precision_curve=precision_curve(center, cfg.distance_grid),
        norm_precision_curve=precision_curve(norm / REFERENCE_SIZE, cfg.norm_grid),
        success_curve=success_curve(overlaps, cfg.overlap_grid),
        per_attribute=per_attribute, per_switch_bin=per_switch_bin, per_sequence=per_sequence,
        frames=overall["frames"], sequences=len(ids), fps=fps, config=cfg)
