import contextlib
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from errors import ConfigurationError
from datasets.sequence import Modality
from models.ClassificationModel import ClassificationModel
from models.marmot import MArMOT, IdentityBlock, read_checkpoint

"""
classification-style tracking network:
    backbone[1..k] -> modality-aware block -> backbone[k+1..] -> two fully connected head layers
the block is inserted after layer k (insertion_point). changing the insertion point changes wiring only
"""

PARAMETER_GROUPS = ["backbone", "branch_rgb", "branch_nir", "ensemble", "head_hidden", "head_final"]
GROUP_ALIASES = dict(
    head=["head_hidden", "head_final"],
    marmot=["branch_rgb", "branch_nir", "ensemble"],
)


@dataclass(frozen=True)
class ConvLayerSpec:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    pool: bool = False


@dataclass(frozen=True)
class BackboneSpec:
    layers: tuple
    insertion_point: int
    extra_insertion_points: tuple = ()
    in_channels: int = 3
    crop_size: int = 75
    head_hidden: int = 256
    dropout: float = 0.5

    def __post_init__(self):
        layers = tuple(l if isinstance(l, ConvLayerSpec) else ConvLayerSpec(**l) for l in self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "extra_insertion_points", tuple(int(p) for p in self.extra_insertion_points))

    @property
    def insertion_points(self):
        return (self.insertion_point,) + self.extra_insertion_points

    def channels_at(self, point):
        return self.layers[point - 1].out_channels

    def validate(self):
        n = len(self.layers)
        if n == 0:
            raise ConfigurationError("backbone spec has no layers")
        for point in self.insertion_points:
            if point < 1 or point > n:
                raise ConfigurationError(f"insertion point {point} outside [1, {n}] for a {n}-layer backbone")
            if self.channels_at(point) % 2 != 0:
                raise ConfigurationError(f"insertion point {point} has an odd channel count {self.channels_at(point)}")
        if any(p <= self.insertion_point for p in self.extra_insertion_points):
            raise ConfigurationError("extra insertion points must lie after the primary insertion point")
        if len(set(self.insertion_points)) != len(self.insertion_points):
            raise ConfigurationError(f"duplicate insertion points {self.insertion_points}")

    def to_dict(self):
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        d["extra_insertion_points"] = list(self.extra_insertion_points)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Conv2D_BatchNorm_Relu_Pool(nn.Module):
    def __init__(self, input_dim, spec):
        super(Conv2D_BatchNorm_Relu_Pool, self).__init__()

        modules = [
            nn.Conv2d(input_dim, spec.out_channels, spec.kernel, stride=spec.stride, padding=spec.padding),
            nn.BatchNorm2d(spec.out_channels),
            nn.ReLU(),
        ]
        if spec.pool:
            modules.append(nn.MaxPool2d(kernel_size=3, stride=2))
        self.block = nn.Sequential(*modules)

    def forward(self, X):
        return self.block(X)


class Flatten(nn.Module):
    def forward(self, input):
        return input.reshape(input.size(0), -1)


class TrackNet(ClassificationModel):

    def __init__(self, spec, use_marmot=True):
        super(TrackNet, self).__init__()
        spec.validate()
        self.spec = spec
        self.use_marmot = use_marmot

        layers = list()
        input_dim = spec.in_channels
        for layer in spec.layers:
            layers.append(Conv2D_BatchNorm_Relu_Pool(input_dim, layer))
            input_dim = layer.out_channels
        self.backbone = nn.ModuleList(layers)

        block = MArMOT if use_marmot else IdentityBlock
        self.marmot = block(spec.channels_at(spec.insertion_point))
        self.extra_marmot = nn.ModuleDict({str(p): block(spec.channels_at(p)) for p in spec.extra_insertion_points})

        self._bypass = False
        self._route = None

        self.flatten = Flatten()
        self.feature_dim = self._infer_feature_dim()
        self.head_hidden = nn.Sequential(nn.Linear(self.feature_dim, spec.head_hidden), nn.ReLU(),
                                         nn.Dropout(p=spec.dropout))
        self.head_final = nn.Linear(spec.head_hidden, 2)

    @torch.no_grad()
    def _infer_feature_dim(self):
        was_training = self.training
        self.eval()
        x = torch.zeros(1, self.spec.in_channels, self.spec.crop_size, self.spec.crop_size)
        for layer in self.backbone:
            x = layer(x)
        self.train(was_training)
        if x.shape[2] < 1 or x.shape[3] < 1:
            raise ConfigurationError(f"backbone reduces a {self.spec.crop_size}px crop to nothing")
        return int(x[0].numel())

    def blocks(self):
        return [self.marmot] + [self.extra_marmot[str(p)] for p in self.spec.extra_insertion_points]

    def _apply_block(self, block, x):
        if self._bypass:
            return x
        if self._route is not None:
            return block.forward_branch(x, self._route)
        return block(x)

    def features(self, x):
        """backbone output at the primary insertion point, before the block"""
        for layer in self.backbone[:self.spec.insertion_point]:
            x = layer(x)
        return x

    def forward_from_insertion(self, f):
        """block and everything after it, returning the flattened head input"""
        x = self._apply_block(self.marmot, f)
        for i in range(self.spec.insertion_point, len(self.backbone)):
            x = self.backbone[i](x)
            if str(i + 1) in self.extra_marmot:
                x = self._apply_block(self.extra_marmot[str(i + 1)], x)
        return self.flatten(x)

    def head(self, e):
        return self.head_final(self.head_hidden(e))

    def embed(self, x):
        return self.forward_from_insertion(self.features(x))

    def forward(self, x):
        return self.head(self.embed(x))

    def forward_features(self, f):
        """logits from features stored at the insertion point (online updates)"""
        return self.head(self.forward_from_insertion(f))

    @contextlib.contextmanager
    def bypass_marmot(self):
        previous = self._bypass
        self._bypass = True
        try:
            yield self
        finally:
            self._bypass = previous

    @contextlib.contextmanager
    def route_branch(self, modality):
        previous = self._route
        self._route = Modality(modality) if not isinstance(modality, Modality) else modality
        try:
            yield self
        finally:
            self._route = previous

    def group_modules(self, name):
        if name in GROUP_ALIASES:
            return [m for alias in GROUP_ALIASES[name] for m in self.group_modules(alias)]
        if name == "backbone":
            return [self.backbone]
        if name in ["branch_rgb", "branch_nir", "ensemble"]:
            return [getattr(b, name) for b in self.blocks() if isinstance(b, MArMOT)]
        if name == "head_hidden":
            return [self.head_hidden]
        if name == "head_final":
            return [self.head_final]
        raise ConfigurationError(f"unknown parameter group {name}. choose from {PARAMETER_GROUPS + list(GROUP_ALIASES)}")

    def parameter_groups(self):
        return {name: [p for m in self.group_modules(name) for p in m.parameters()] for name in PARAMETER_GROUPS}

    def checkpoint_meta(self):
        return dict(spec=self.spec.to_dict(), use_marmot=self.use_marmot)

    @classmethod
    def from_checkpoint(cls, path):
        _, meta = read_checkpoint(path)
        if "spec" not in meta:
            raise ConfigurationError(f"checkpoint {path} carries no backbone spec")
        net = cls(BackboneSpec.from_dict(meta["spec"]), use_marmot=meta.get("use_marmot", True))
        net.load(path)
        return net


def build_network(spec, channels_at_insertion=None, use_marmot=True):
    spec.validate()
    actual = spec.channels_at(spec.insertion_point)
    if channels_at_insertion is not None and channels_at_insertion != actual:
        raise ConfigurationError(f"spec has {actual} channels at insertion point {spec.insertion_point}, "
                                 f"expected {channels_at_insertion}")
    return TrackNet(spec, use_marmot=use_marmot)


def classification_spec(insertion_point=3):
    """three conv layers, 96 x 5 x 5 at layer 3 for a 75px crop"""
    return BackboneSpec(layers=(
        ConvLayerSpec(32, 7, stride=2, pool=True),
        ConvLayerSpec(64, 5, stride=2),
        ConvLayerSpec(96, 3, stride=1),
    ), insertion_point=insertion_point)


def regression_spec():
    """four-block backbone with blocks after the third and the fourth layer"""
    return BackboneSpec(layers=(
        ConvLayerSpec(32, 7, stride=2, pool=True),
        ConvLayerSpec(64, 5, stride=1, padding=2),
        ConvLayerSpec(96, 3, stride=1, padding=1),
        ConvLayerSpec(128, 3, stride=2, padding=1),
    ), insertion_point=3, extra_insertion_points=(4,))
