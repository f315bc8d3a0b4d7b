import io
import hashlib
import json
import zipfile

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import ShapeError, CheckpointMismatchError, StructuralError
from datasets.sequence import Modality

"""
Modality-aware block: two modality specific branches whose outputs are fused
by a per-channel softmax weighting (the ensemble layer). Shape preserving,
so it can be inserted after any backbone layer with an even channel count.
"""

CHECKPOINT_DATE = (1980, 1, 1, 0, 0, 0)
CHECKPOINT_META = "meta.json"


def conv_bn(in_channels, out_channels, kernel_size, dilation=1, padding=0):
    conv = nn.Conv2d(in_channels, out_channels, kernel_size, padding=padding, dilation=dilation, bias=False)
    nn.init.kaiming_normal_(conv.weight, mode="fan_in", nonlinearity="relu")
    return conv, nn.BatchNorm2d(out_channels, eps=1e-5, momentum=0.1)


class ModalityAwareBranch(nn.Module):
    """
    x -> 1x1 entry conv -> two flows with half the channels each:
        1x1 -> 3x3 (dilation 1)  and  1x1 -> 3x3 (dilation 2)
    the concatenated flows are added to the block input.
    every conv is followed by batch norm and relu
    """

    def __init__(self, channels):
        super(ModalityAwareBranch, self).__init__()
        if channels < 2 or channels % 2 != 0:
            raise ShapeError(f"modality-aware branch needs an even channel count, got {channels}")
        self.channels = channels
        half = channels // 2

        self.entry_1x1, self.entry_1x1_bn = conv_bn(channels, channels, 1)
        self.reduce_a, self.reduce_a_bn = conv_bn(channels, half, 1)
        self.reduce_b, self.reduce_b_bn = conv_bn(channels, half, 1)
        self.spatial_a, self.spatial_a_bn = conv_bn(half, half, 3, dilation=1, padding=1)
        self.spatial_b, self.spatial_b_bn = conv_bn(half, half, 3, dilation=2, padding=2)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"branch expects (N, {self.channels}, H, W) input, got {tuple(x.shape)}")
        u = F.relu(self.entry_1x1_bn(self.entry_1x1(x)))
        a = F.relu(self.spatial_a_bn(self.spatial_a(F.relu(self.reduce_a_bn(self.reduce_a(u))))))
        b = F.relu(self.spatial_b_bn(self.spatial_b(F.relu(self.reduce_b_bn(self.reduce_b(u))))))
        return x + torch.cat([a, b], dim=1)


class EnsembleLayer(nn.Module):
    """
    selective fusion of two feature maps. global average pooling of the sum,
    a shared bottleneck and one head per branch produce per-channel logits
    that are normalized with a softmax across the two branches
    """

    def __init__(self, channels, reduction=16, floor=32):
        super(EnsembleLayer, self).__init__()
        self.channels = channels
        self.hidden = max(channels // reduction, floor)

        self.reduce_fc = nn.Linear(channels, self.hidden)
        self.head_rgb = nn.Linear(self.hidden, channels)
        self.head_nir = nn.Linear(self.hidden, channels)
        for layer in [self.reduce_fc, self.head_rgb, self.head_nir]:
            nn.init.kaiming_uniform_(layer.weight, a=5 ** 0.5)
            nn.init.zeros_(layer.bias)

    def weights(self, f_rgb, f_nir):
        """per sample and channel weights (a, b) with a + b = 1, each of shape (N, C)"""
        s = (f_rgb + f_nir).mean(dim=(2, 3))
        z = F.relu(self.reduce_fc(s))
        logits = torch.stack([self.head_rgb(z), self.head_nir(z)], dim=0)
        a, b = torch.softmax(logits, dim=0)
        return a, b

    def forward(self, f_rgb, f_nir):
        if f_rgb.shape != f_nir.shape:
            raise ShapeError(f"ensemble inputs differ in shape: {tuple(f_rgb.shape)} vs {tuple(f_nir.shape)}")
        if f_rgb.dim() != 4 or f_rgb.shape[1] != self.channels:
            raise ShapeError(f"ensemble expects (N, {self.channels}, H, W) inputs, got {tuple(f_rgb.shape)}")
        a, _ = self.weights(f_rgb, f_nir)
        # a*f_rgb + (1-a)*f_nir, written so that f_rgb == f_nir returns f_rgb exactly
        return f_nir + a[:, :, None, None] * (f_rgb - f_nir)


class MArMOT(nn.Module):

    def __init__(self, channels, reduction=16, floor=32):
        super(MArMOT, self).__init__()
        self.channels = channels
        self.branch_rgb = ModalityAwareBranch(channels)
        self.branch_nir = ModalityAwareBranch(channels)
        self.ensemble = EnsembleLayer(channels, reduction=reduction, floor=floor)

    def forward(self, x):
        # both branches see the same single-modality input
        return self.ensemble(self.branch_rgb(x), self.branch_nir(x))

    def forward_branch(self, x, modality):
        """training-time routing: only the branch matching the sample modality is evaluated"""
        modality = Modality(modality) if not isinstance(modality, Modality) else modality
        branch = self.branch_rgb if modality is Modality.RGB else self.branch_nir
        return branch(x)


class IdentityBlock(nn.Module):
    """identity substitution for the block; the baseline network"""

    def __init__(self, channels=None):
        super(IdentityBlock, self).__init__()
        self.channels = channels

    def forward(self, x):
        return x

    def forward_branch(self, x, modality):
        return x


def branch_forward(x, branch, mode="eval"):
    branch.train(mode == "train")
    return branch(x)


def ensemble_forward(f_rgb, f_nir, ensemble):
    return ensemble(f_rgb, f_nir)


def marmot_forward(x, block, mode="eval"):
    block.train(mode == "train")
    return block(x)


def parameter_count(module):
    return sum(p.numel() for p in module.parameters())


def state_dict_checksum(module_or_state):
    """sha256 over names and raw bytes of all tensors, for bit-exact freeze audits"""
    state = module_or_state.state_dict() if isinstance(module_or_state, nn.Module) else module_or_state
    digest = hashlib.sha256()
    for name in sorted(state.keys()):
        digest.update(name.encode("utf-8"))
        digest.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def write_checkpoint(path, state, meta=None):
    """
    keyed float32 little-endian checkpoint: a zip with one .npy member per
    parameter name (the npy header carries the shape) and a meta.json member.
    member timestamps are fixed, so equal parameters give equal files
    """
    if isinstance(state, nn.Module):
        state = state.state_dict()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name in sorted(state.keys()):
            value = state[name]
            if isinstance(value, torch.Tensor):
                value = value.detach().cpu().numpy()
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, np.asarray(value, dtype="<f4"), allow_pickle=False)
            archive.writestr(zipfile.ZipInfo(name + ".npy", date_time=CHECKPOINT_DATE), buffer.getvalue())
        meta = dict() if meta is None else meta
        archive.writestr(zipfile.ZipInfo(CHECKPOINT_META, date_time=CHECKPOINT_DATE),
                         json.dumps(meta, sort_keys=True, indent=2))
    return path


def read_checkpoint(path):
    """returns (dict name -> float32 array, meta dict)"""
    state = dict()
    meta = dict()
    try:
        with zipfile.ZipFile(path, "r") as archive:
            for member in archive.namelist():
                if member == CHECKPOINT_META:
                    meta = json.loads(archive.read(member).decode("utf-8"))
                elif member.endswith(".npy"):
                    state[member[:-len(".npy")]] = np.lib.format.read_array(io.BytesIO(archive.read(member)),
                                                                            allow_pickle=False)
    except (zipfile.BadZipFile, FileNotFoundError) as e:
        raise StructuralError(f"could not read checkpoint {path}: {e}")
    return state, meta


def load_checkpoint_into(module, path, ignore_prefixes=()):
    """
    loads a checkpoint into module. key or shape disagreement raises CheckpointMismatchError.
    checkpoint keys starting with one of ignore_prefixes are skipped
    """
    state, meta = read_checkpoint(path)
    state = dict((k, v) for k, v in state.items() if not k.startswith(tuple(ignore_prefixes)))
    target = module.state_dict()

    missing = sorted(set(target.keys()) - set(state.keys()))
    unexpected = sorted(set(state.keys()) - set(target.keys()))
    if len(missing) > 0 or len(unexpected) > 0:
        raise CheckpointMismatchError(f"checkpoint {path} does not match the network. "
                                      f"missing: {missing[:5]}, unexpected: {unexpected[:5]}")
    for name, value in target.items():
        if tuple(value.shape) != tuple(state[name].shape):
            raise CheckpointMismatchError(f"checkpoint {path}: {name} has shape {tuple(state[name].shape)}, "
                                          f"network expects {tuple(value.shape)}")

    module.load_state_dict({name: torch.from_numpy(np.array(state[name])).to(target[name].dtype)
                            for name in target.keys()})
    return meta
