"""
Reverse-mode differentiation over flat parameter vectors.

A program is any pure callable `prog(flat, aux) -> scalar tensor` built from
torch primitives. All evaluation is in float64; the finite-difference oracle
and `grad_check` verify the reverse-mode gradients.

ReLU convention: the subgradient at exactly 0 is 0 (torch's choice).
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.utils.errors import NumericalError
from src.utils.field_io import read_param_file, write_param_file

DTYPE = torch.float64
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

DiffProgram = Callable[[torch.Tensor, Any], torch.Tensor]


@dataclass(frozen=True)
class ParamBlock:
    name: str
    offset: int
    shape: Tuple[int, ...]

    @property
    def length(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


@dataclass(frozen=True)
class ParamLayout:
    """Shape table of a flat vector: named, non-overlapping, contiguous blocks."""

    blocks: Tuple[ParamBlock, ...]

    @classmethod
    def from_shapes(cls, shapes: Sequence[Tuple[str, Tuple[int, ...]]]) -> "ParamLayout":
        blocks = []
        offset = 0
        names = set()
        for name, shape in shapes:
            if name in names:
                raise ValueError(f"[ERROR] Duplicate parameter block '{name}'")
            names.add(name)
            block = ParamBlock(name=name, offset=offset, shape=tuple(int(d) for d in shape))
            blocks.append(block)
            offset += block.length
        return cls(tuple(blocks))

    @property
    def size(self) -> int:
        return sum(b.length for b in self.blocks)

    def __getitem__(self, name: str) -> ParamBlock:
        for block in self.blocks:
            if block.name == name:
                return block
        raise KeyError(f"[ERROR] Unknown parameter block '{name}'")

    def names(self) -> List[str]:
        return [b.name for b in self.blocks]

    def view(self, flat: torch.Tensor, name: str) -> torch.Tensor:
        block = self[name]
        return flat[block.offset:block.offset + block.length].view(block.shape)


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: torch.Tensor
    layout: ParamLayout

    def __post_init__(self):
        values = torch.as_tensor(self.values, dtype=DTYPE).detach().reshape(-1).clone()
        if values.numel() != self.layout.size:
            raise ValueError(
                f"[ERROR] Parameter vector has {values.numel()} entries, layout needs {self.layout.size}"
            )
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.layout.size

    def block(self, name: str) -> torch.Tensor:
        return self.layout.view(self.values, name)

    def with_values(self, values: torch.Tensor) -> "ParamVector":
        return ParamVector(values, self.layout)

    def numpy(self) -> np.ndarray:
        return self.values.numpy().copy()

    def save(self, path: str, meta: Optional[Dict[str, Dict[str, str]]] = None) -> None:
        records = [(b.name, b.offset, b.length, b.shape) for b in self.layout.blocks]
        write_param_file(path, records, self.values.numpy(), meta)

    @classmethod
    def load(cls, path: str) -> Tuple["ParamVector", Dict[str, Dict[str, str]]]:
        records, values, meta = read_param_file(path)
        layout = ParamLayout(tuple(ParamBlock(name, offset, shape) for name, offset, _, shape in records))
        return cls(torch.from_numpy(values), layout), meta


def _check_finite(value: torch.Tensor, what: str, prog: DiffProgram) -> None:
    if not torch.all(torch.isfinite(value)):
        name = getattr(prog, "__name__", type(prog).__name__)
        raise NumericalError(f"[ERROR] Non-finite {what} while evaluating program '{name}'")


def evaluate(prog: DiffProgram, params: ParamVector, aux: Any = None) -> float:
    with torch.no_grad():
        value = prog(params.values, aux)
    _check_finite(value, "value", prog)
    return float(value)


def value_and_grad(prog: DiffProgram, params: ParamVector, aux: Any = None) -> Tuple[float, ParamVector]:
    """
    Evaluate a scalar program and its exact reverse-mode gradient.

    Returns:
        (value, gradient) with the gradient shaped like params
    """
    flat = params.values.clone().requires_grad_(True)
    value = prog(flat, aux)
    if value.numel() != 1:
        raise NumericalError(f"[ERROR] Program must return a scalar, got shape {tuple(value.shape)}")
    _check_finite(value, "value", prog)
    (grad,) = torch.autograd.grad(value, flat, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(flat)
    _check_finite(grad, "gradient", prog)
    return float(value.detach()), params.with_values(grad.detach())


def finite_diff_grad(
    prog: DiffProgram, params: ParamVector, aux: Any = None, h: float = 1e-6
) -> ParamVector:
    """Central differences with step h * max(1, |p_i|), two program evaluations per component."""
    if h <= 0:
        raise ValueError(f"[ERROR] Finite-difference step must be > 0, got {h}")
    base = params.values
    grad = torch.zeros_like(base)
    with torch.no_grad():
        for i in range(base.numel()):
            step = h * max(1.0, abs(float(base[i])))
            plus = base.clone()
            plus[i] += step
            minus = base.clone()
            minus[i] -= step
            grad[i] = (prog(plus, aux) - prog(minus, aux)) / (2.0 * step)
    return params.with_values(grad)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    worst_index: int
    passed: bool


def compare_gradients(analytic: np.ndarray, numeric: np.ndarray, tol: float, floor: float = 1e-12) -> GradCheckReport:
    """Relative error |a - b| / max(|a|, |b|, floor), worst component reported."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    max_rel = float(rel[worst]) if rel.size else 0.0
    return GradCheckReport(max_rel_err=max_rel, worst_index=worst, passed=max_rel <= tol)


def grad_check(
    prog: DiffProgram,
    params: ParamVector,
    aux: Any = None,
    tol: float = 1e-4,
    h: float = 1e-6,
    floor: float = 1e-12,
) -> GradCheckReport:
    _, analytic = value_and_grad(prog, params, aux)
    numeric = finite_diff_grad(prog, params, aux, h)
    return compare_gradients(analytic.numpy(), numeric.numpy(), tol, floor)


# ---------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------

def make_optimizer(name: str, param_groups: Iterable[Dict[str, Any]], lr: float, maximize: bool = False) -> torch.optim.Optimizer:
    """
    Plain SGD or Adam over torch leaves.

    SGD: theta <- theta - lr * g (or + for maximize). Adam uses beta1 = 0.9,
    beta2 = 0.999, eps = 1e-8.
    """
    groups = list(param_groups)
    if name == "sgd":
        return torch.optim.SGD(groups, lr=lr, momentum=0.0, maximize=maximize)
    if name == "adam":
        return torch.optim.Adam(groups, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS, maximize=maximize)
    raise ValueError(f"[ERROR] Unknown optimizer '{name}'")


def make_scheduler(
    optimizer: torch.optim.Optimizer, schedule: str, max_lr: float, total_steps: int
) -> Optional[torch.optim.lr_scheduler.LRScheduler]:
    if schedule == "constant":
        return None
    if schedule == "one-cycle":
        return torch.optim.lr_scheduler.OneCycleLR(optimizer, max_lr=max_lr, total_steps=max(total_steps, 2))
    raise ValueError(f"[ERROR] Unknown learning-rate schedule '{schedule}'")


def seeded_torch_generator(rng: np.random.Generator) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(rng.integers(0, 2 ** 63 - 1)))
    return gen
