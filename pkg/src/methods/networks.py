"""
Functional layers over a flat parameter vector.

Weights live in a ParamVector; a network is a layout plus an apply function
that slices the flat tensor, so the same code evaluates, trains and is
differentiated by the diff engine.
"""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from src.methods.diff_engine import DTYPE, ParamLayout, ParamVector

Activation = Callable[[torch.Tensor], torch.Tensor]

ACTIVATIONS = {
    "relu": torch.relu,
    "sigmoid": torch.sigmoid,
    "tanh": torch.tanh,
    "identity": lambda x: x,
}


def mlp_shapes(prefix: str, widths: Sequence[int]) -> List[Tuple[str, Tuple[int, ...]]]:
    """Blocks '<prefix>.<i>.weight' (out, in) and '<prefix>.<i>.bias' (out,) for consecutive widths."""
    shapes = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        shapes.append((f"{prefix}.{i}.weight", (fan_out, fan_in)))
        shapes.append((f"{prefix}.{i}.bias", (fan_out,)))
    return shapes


def conv_shapes(prefix: str, channels: Sequence[int], kernel: int = 3) -> List[Tuple[str, Tuple[int, ...]]]:
    shapes = []
    for i, (c_in, c_out) in enumerate(zip(channels[:-1], channels[1:])):
        shapes.append((f"{prefix}.{i}.weight", (c_out, c_in, kernel, kernel)))
        shapes.append((f"{prefix}.{i}.bias", (c_out,)))
    return shapes


def init_uniform(layout: ParamLayout, rng: np.random.Generator, zero: bool = False) -> ParamVector:
    """Uniform in +-1/sqrt(fan_in) per layer; fan_in read from the weight shape."""
    values = np.zeros(layout.size)
    if not zero:
        fan_in_of = {}
        for block in layout.blocks:
            if block.name.endswith(".weight"):
                fan_in_of[block.name[: -len(".weight")]] = int(np.prod(block.shape[1:]))
        for block in layout.blocks:
            stem = block.name.rsplit(".", 1)[0]
            bound = 1.0 / np.sqrt(fan_in_of.get(stem, 1))
            values[block.offset:block.offset + block.length] = rng.uniform(-bound, bound, block.length)
    return ParamVector(torch.from_numpy(values), layout)


def mlp_apply(
    flat: torch.Tensor,
    layout: ParamLayout,
    prefix: str,
    n_layers: int,
    x: torch.Tensor,
    hidden: Activation,
    output: Optional[Activation] = None,
) -> torch.Tensor:
    """Affine layers with `hidden` between them and `output` (if any) after the last."""
    h = x
    for i in range(n_layers):
        h = F.linear(h, layout.view(flat, f"{prefix}.{i}.weight"), layout.view(flat, f"{prefix}.{i}.bias"))
        if i < n_layers - 1:
            h = hidden(h)
    return output(h) if output is not None else h


def conv_apply(
    flat: torch.Tensor,
    layout: ParamLayout,
    prefix: str,
    index: int,
    x: torch.Tensor,
    stride: int = 1,
) -> torch.Tensor:
    weight = layout.view(flat, f"{prefix}.{index}.weight")
    bias = layout.view(flat, f"{prefix}.{index}.bias")
    return F.conv2d(x, weight, bias, stride=stride, padding=weight.shape[-1] // 2)


def as_tensor(values: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values), dtype=DTYPE)
