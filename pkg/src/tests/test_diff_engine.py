import numpy as np
import pytest
import torch

from src.methods.diff_engine import (
    ParamLayout, ParamVector, compare_gradients, evaluate, finite_diff_grad, grad_check,
    make_optimizer, make_scheduler, value_and_grad,
)
from src.methods.networks import init_uniform, mlp_apply, mlp_shapes
from src.utils.errors import NumericalError


def _quadratic(flat, aux):
    return 0.5 * torch.sum(aux * flat ** 2)


def test_layout_blocks_are_contiguous():
    layout = ParamLayout.from_shapes([("w", (2, 3)), ("b", (2,)), ("s", ())])
    assert layout.size == 9
    assert layout["b"].offset == 6
    assert layout["s"].length == 1
    assert layout.names() == ["w", "b", "s"]
    with pytest.raises(ValueError):
        ParamLayout.from_shapes([("w", (1,)), ("w", (2,))])


def test_param_vector_views_and_size_check():
    layout = ParamLayout.from_shapes([("w", (2, 2)), ("b", (2,))])
    params = ParamVector(torch.arange(6.0), layout)
    assert params.block("w").tolist() == [[0.0, 1.0], [2.0, 3.0]]
    assert params.values.dtype == torch.float64
    with pytest.raises(ValueError):
        ParamVector(torch.zeros(5), layout)


def test_param_vector_save_load(tmp_path):
    layout = ParamLayout.from_shapes([("w", (3, 2)), ("b", (3,))])
    params = init_uniform(layout, np.random.default_rng(0))
    path = str(tmp_path / "p.params")
    params.save(path, meta={"model": {"kind": "test"}})
    loaded, meta = ParamVector.load(path)
    assert loaded.layout == layout
    assert torch.equal(loaded.values, params.values)
    assert meta["model"]["kind"] == "test"


def test_value_and_grad_quadratic():
    layout = ParamLayout.from_shapes([("x", (3,))])
    params = ParamVector(torch.tensor([1.0, -2.0, 0.5]), layout)
    aux = torch.tensor([1.0, 2.0, 4.0], dtype=torch.float64)
    value, grad = value_and_grad(_quadratic, params, aux)
    assert value == pytest.approx(0.5 * (1.0 + 8.0 + 1.0))
    assert grad.values.tolist() == pytest.approx([1.0, -4.0, 2.0])
    assert evaluate(_quadratic, params, aux) == pytest.approx(value)


def test_value_and_grad_rejects_non_finite():
    layout = ParamLayout.from_shapes([("x", (1,))])
    params = ParamVector(torch.tensor([0.0]), layout)

    def log_program(flat, aux):
        return torch.log(flat).sum()

    with pytest.raises(NumericalError) as excinfo:
        value_and_grad(log_program, params)
    assert "log_program" in str(excinfo.value)


def test_finite_differences_match_quadratic():
    layout = ParamLayout.from_shapes([("x", (2,))])
    params = ParamVector(torch.tensor([3.0, -1.0]), layout)
    aux = torch.tensor([2.0, 5.0], dtype=torch.float64)
    numeric = finite_diff_grad(_quadratic, params, aux)
    np.testing.assert_allclose(numeric.numpy(), [6.0, -5.0], rtol=1e-8)


def test_compare_gradients_floor():
    report = compare_gradients(np.array([1.0, 0.0]), np.array([1.0, 1e-14]), tol=1e-4, floor=1e-12)
    assert report.passed
    report = compare_gradients(np.array([1.0, 2.0]), np.array([1.0, 2.1]), tol=1e-4)
    assert not report.passed
    assert report.worst_index == 1


def test_grad_check_on_small_mlp():
    layout = ParamLayout.from_shapes(mlp_shapes("net", [4, 5, 3]))
    params = init_uniform(layout, np.random.default_rng(1))
    x = torch.as_tensor(np.random.default_rng(2).standard_normal((6, 4)), dtype=torch.float64)

    def mlp_loss(flat, aux):
        return torch.sum(mlp_apply(flat, layout, "net", 2, aux, torch.tanh) ** 2)

    assert grad_check(mlp_loss, params, x, tol=1e-4, floor=1e-6).passed


def test_sgd_step_is_plain_gradient_step():
    x = torch.tensor([1.0, 2.0], dtype=torch.float64, requires_grad=True)
    opt = make_optimizer("sgd", [{"params": [x]}], lr=0.1)
    x.grad = torch.tensor([1.0, -1.0], dtype=torch.float64)
    opt.step()
    assert x.detach().tolist() == pytest.approx([0.9, 2.1])

    y = torch.tensor([0.0], dtype=torch.float64, requires_grad=True)
    ascent = make_optimizer("sgd", [{"params": [y]}], lr=0.5, maximize=True)
    y.grad = torch.tensor([2.0], dtype=torch.float64)
    ascent.step()
    assert y.item() == pytest.approx(1.0)


def test_adam_first_step_moves_by_learning_rate():
    x = torch.tensor([0.0], dtype=torch.float64, requires_grad=True)
    opt = make_optimizer("adam", [{"params": [x]}], lr=0.01)
    x.grad = torch.tensor([5.0], dtype=torch.float64)
    opt.step()
    assert x.item() == pytest.approx(-0.01, rel=1e-6)


def test_unknown_optimizer_and_schedule():
    x = torch.zeros(1, requires_grad=True)
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", [{"params": [x]}], lr=0.1)
    opt = make_optimizer("adam", [{"params": [x]}], lr=0.1)
    assert make_scheduler(opt, "constant", 0.1, 10) is None
    with pytest.raises(ValueError):
        make_scheduler(opt, "cosine", 0.1, 10)


def test_one_cycle_peaks_at_max_lr():
    x = torch.zeros(1, requires_grad=True)
    opt = make_optimizer("adam", [{"params": [x]}], lr=1e-3)
    scheduler = make_scheduler(opt, "one-cycle", 1e-3, 100)
    rates = []
    for _ in range(99):
        rates.append(opt.param_groups[0]["lr"])
        opt.step()
        scheduler.step()
    assert max(rates) == pytest.approx(1e-3, rel=1e-2)
    assert rates[0] < 1e-4
