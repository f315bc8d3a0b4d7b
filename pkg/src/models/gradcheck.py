import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from errors import GradientCheckFailure, ConfigurationError
from models.marmot import ModalityAwareBranch, EnsembleLayer, MArMOT

"""
finite difference verification of the block's backward pass.
loss = sum of outputs, double precision, eval-mode batch norm with randomized running statistics
"""

STEP = 1e-5
DENOMINATOR_FLOOR = 1e-4

OPERATIONS = ["branch", "ensemble", "marmot"]


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOMINATOR_FLOOR)


def _randomize_normalization(module, rng):
    for m in module.modules():
        if isinstance(m, nn.BatchNorm2d):
            c = m.num_features
            m.running_mean.copy_(torch.from_numpy(rng.normal(0, 0.1, size=c)))
            m.running_var.copy_(torch.from_numpy(rng.uniform(0.5, 1.5, size=c)))
            m.weight.data.copy_(torch.from_numpy(rng.uniform(0.5, 1.5, size=c)))
            m.bias.data.copy_(torch.from_numpy(rng.normal(0, 0.1, size=c)))


def build_operation(op, channels, seed, zero_weights=False):
    """returns (module in double precision and eval mode, number of inputs)"""
    torch.manual_seed(seed)
    if op == "branch":
        module = ModalityAwareBranch(channels)
        n_inputs = 1
    elif op == "ensemble":
        module = EnsembleLayer(channels)
        n_inputs = 2
    elif op == "marmot":
        module = MArMOT(channels)
        n_inputs = 1
    else:
        raise ConfigurationError(f"unknown operation {op}. choose from {OPERATIONS}")

    module = module.double().eval()
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        _randomize_normalization(module, rng)
        if zero_weights:
            # conv and linear weights plus normalization scales; shifts stay random
            for name, p in module.named_parameters():
                if name.endswith("weight"):
                    p.zero_()
    return module, n_inputs


def _loss(module, inputs):
    return module(*inputs).sum()


def _numeric_gradient(module, inputs, tensor):
    flat = tensor.data.view(-1)
    gradient = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + STEP
            plus = _loss(module, inputs).item()
            flat[i] = original - STEP
            minus = _loss(module, inputs).item()
            flat[i] = original
            gradient[i] = (plus - minus) / (2 * STEP)
    return gradient.view_as(tensor).numpy()


def gradient_report(op, shape, seed=0, zero_weights=False):
    """
    per tensor (every parameter and every input) maximum relative error between
    autograd gradients and central finite differences
    """
    n, c, h, w = shape
    module, n_inputs = build_operation(op, c, seed, zero_weights=zero_weights)

    generator = torch.Generator().manual_seed(seed)
    inputs = [torch.randn(n, c, h, w, generator=generator, dtype=torch.float64, requires_grad=True)
              for _ in range(n_inputs)]

    module.zero_grad()
    _loss(module, inputs).backward()

    tensors = [(f"input_{i}", x) for i, x in enumerate(inputs)] + list(module.named_parameters())

    rows = list()
    for name, tensor in tensors:
        if tensor.grad is None:
            analytic = np.zeros(tuple(tensor.shape))
        else:
            analytic = tensor.grad.detach().numpy().copy()
        if not np.isfinite(analytic).all():
            raise GradientCheckFailure(f"non-finite gradient in {name}", parameter=name)
        numeric = _numeric_gradient(module, inputs, tensor)
        errors = relative_error(analytic, numeric)
        rows.append(dict(tensor=name, numel=int(tensor.numel()),
                         max_relative_error=float(errors.max()) if errors.size > 0 else 0.,
                         max_abs_gradient=float(np.abs(analytic).max()) if analytic.size > 0 else 0.))

    return pd.DataFrame(rows).set_index("tensor")


def gradient_check(op, shape=(1, 4, 2, 2), seed=0, zero_weights=False):
    report = gradient_report(op, shape, seed=seed, zero_weights=zero_weights)
    return float(report["max_relative_error"].max())
