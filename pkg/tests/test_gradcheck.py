import torch

from pudm.gradcheck import TOLERANCE, directional, rel_error, run_suite


def test_directional_on_known_function():
    x = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64, requires_grad=True)
    v = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
    res = directional(lambda: (x ** 3).sum(), x, torch.Generator().manual_seed(0), direction=v)
    assert abs(res.analytic - 3.0) < 1e-12
    assert abs(res.numeric - 3.0) < 1e-8 and res.passed


class WrongSquare(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * 2.2 * x


def test_wrong_backward_is_detected():
    x = torch.tensor([0.3, 1.1, -0.7], dtype=torch.float64, requires_grad=True)
    res = directional(lambda: WrongSquare.apply(x).sum(), x, torch.Generator().manual_seed(1))
    assert not res.passed and res.rel_error > 0.05


def test_rel_error_floor():
    assert rel_error(0.0, 0.0) == 0.0
    assert rel_error(0.0, 1e-9, floor=1e-3) < TOLERANCE
    assert rel_error(1.0, 1.1) > 0.09


def test_suite_covers_every_operation_and_passes():
    results = run_suite()
    names = {r.name.split(".")[0].split(":")[0] for r in results}
    for op in ("attention_pool", "set_abstraction", "feature_propagation", "cross_attend", "transfer_bidirectional", "total_loss"):
        assert any(op in n for n in names), op
    assert all(r.passed for r in results), [r for r in results if not r.passed]
