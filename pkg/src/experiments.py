import copy
import os
from argparse import Namespace

import yaml

from errors import ConfigurationError
from models.TrackNet import classification_spec, regression_spec, BackboneSpec
from tracking.tracker import TrackerOptions
from utils.trainer import TrainingConfig
from utils.trackmetric import EvalConfig

WORKSPACE_VARIABLE = "CMOT_WORKSPACE"

defaults = Namespace(
    seed=0,
)

toy_benchmark = Namespace(
    benchmark="benchmark",
    n_train=40,
    n_test=20,
    n_dual=20,
    image_size=96,
    sequence_length=[80, 300],
    master_seed=0,
)

classification_backbone = Namespace(
    backbone="classification",
    insertion_point=3,
)

regression_backbone = Namespace(
    backbone="regression",
    insertion_point=3,
)

three_stage = Namespace(
    stages="three",
    use_marmot=True,
    base_lr=1e-3,
    stage1_iterations=300,
    stage2_lr=1e-4,
    stage2_iterations=1000,
    stage3_iterations=300,
    n_frames=8,
    n_pos=32,
    n_neg=96,
)

one_stage = Namespace(**dict(vars(three_stage), stages="one"))

baseline = Namespace(**dict(vars(three_stage), use_marmot=False))

tracking = Namespace(
    split="test",
    tracker=dict(
        n_samples=256,
        top_k=5,
        threshold=0.,
        long_interval=10,
        trans=0.3,
        scale_sigma=0.05,
        crop_size=75,
        crop_padding=1.14,
    ),
)

evaluation = Namespace(
    evaluation=dict(
        pr_threshold=20.,
        npr_threshold=0.2,
        sr_threshold=0.5,
    ),
)

EXPERIMENTS = ["toy_three_stage", "toy_one_stage", "toy_baseline", "toy_regression_three_stage"]


def experiments(args):

    if args.experiment == "toy_three_stage":
        return merge([defaults, toy_benchmark, classification_backbone, three_stage, tracking, evaluation, args])
    elif args.experiment == "toy_one_stage":
        return merge([defaults, toy_benchmark, classification_backbone, one_stage, tracking, evaluation, args])
    elif args.experiment == "toy_baseline":
        return merge([defaults, toy_benchmark, classification_backbone, baseline, tracking, evaluation, args])
    elif args.experiment == "toy_regression_three_stage":
        return merge([defaults, toy_benchmark, regression_backbone, three_stage, tracking, evaluation, args])
    else:
        raise ConfigurationError(f"unknown experiment {args.experiment}. choose from {EXPERIMENTS}")


def merge(namespaces):
    merged = dict()

    for n in namespaces:
        d = n.__dict__
        for k, v in d.items():
            if v is None and k in merged:
                continue  # unset command line flags keep the preset value
            if isinstance(v, dict) and isinstance(merged.get(k), dict):
                v = dict(merged[k], **v)
            merged[k] = copy.deepcopy(v)

    return Namespace(**merged)


def load_config(path):
    """a YAML mapping of preset fields"""
    if path is None:
        return Namespace()
    if not os.path.exists(path):
        raise ConfigurationError(f"config file {path} does not exist")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"could not parse {path}: {e}")
    if data is None:
        return Namespace()
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must hold a mapping, got {type(data).__name__}")
    return Namespace(**data)


def apply_overrides(args, overrides):
    """key=value pairs; values are parsed as YAML, dotted keys address nested mappings"""
    d = vars(args)
    for override in overrides or []:
        if "=" not in override:
            raise ConfigurationError(f"override '{override}' is not of the form key=value")
        key, value = override.split("=", 1)
        value = yaml.safe_load(value)
        target = d
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(target.get(part), dict):
                target[part] = dict()
            target = target[part]
        target[parts[-1]] = value
    return args


def resolve(args):
    """preset, then config file, then --set overrides"""
    config = load_config(getattr(args, "config", None))
    overrides = getattr(args, "set", None)
    args = experiments(merge([config, args]))
    return apply_overrides(args, overrides)


def workspace(args):
    root = getattr(args, "workspace", None) or os.environ.get(WORKSPACE_VARIABLE) or "."
    return os.path.abspath(root)


def in_workspace(args, path):
    return path if os.path.isabs(path) else os.path.join(workspace(args), path)


def write_config(args, directory, filename="config.yaml"):
    os.makedirs(directory, exist_ok=True)
    d = dict((k, v) for k, v in vars(args).items() if k not in ["func", "set", "config"])
    path = os.path.join(directory, filename)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(d, f, sort_keys=True, default_flow_style=False)
    return path


def build_spec(args):
    if args.backbone == "classification":
        spec = classification_spec(args.insertion_point)
    elif args.backbone == "regression":
        spec = regression_spec()
    else:
        raise ConfigurationError(f"unknown backbone {args.backbone}. choose classification or regression")
    spec.validate()
    return spec


def training_config(args):
    return TrainingConfig(base_lr=args.base_lr, stage1_iterations=args.stage1_iterations, stage2_lr=args.stage2_lr,
                          stage2_iterations=args.stage2_iterations, stage3_iterations=args.stage3_iterations,
                          n_frames=args.n_frames, n_pos=args.n_pos, n_neg=args.n_neg, seed=args.seed,
                          workers=getattr(args, "workers", 0))


def tracker_options(args):
    try:
        return TrackerOptions(**args.tracker)
    except TypeError as e:
        raise ConfigurationError(f"invalid tracker options: {e}")


def eval_config(args):
    try:
        return EvalConfig(**args.evaluation)
    except TypeError as e:
        raise ConfigurationError(f"invalid evaluation options: {e}")
