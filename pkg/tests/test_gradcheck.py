import numpy as np
import pytest

from picr import gradcheck as gc
from picr import tensor as T
from picr.tensor import Tensor


class TestMachinery:
    def test_rel_error(self):
        assert gc.rel_error(1.0, 1.0) == 0.0
        assert gc.rel_error(1.1, 1.0) == pytest.approx(0.1)
        assert gc.rel_error(1e-9, 0.0) == pytest.approx(0.1)

    def test_passes_a_correct_gradient(self):
        x = Tensor(np.array([0.3, -0.7, 1.2]), requires_grad=True)
        [row] = gc.check_tensors(lambda: T.sum(x * x), {"x": x})
        assert row.passed and row.max_rel_err < 1e-8

    def test_detects_a_wrong_gradient(self):
        # x * stop_gradient(x): the loss is x^2 but the tape only sees half the gradient
        x = Tensor(np.array([0.3, -0.7, 1.2]), requires_grad=True)
        [row] = gc.check_tensors(lambda: T.sum(x * Tensor(x.data.copy())), {"x": x})
        assert not row.passed
        assert row.max_rel_err == pytest.approx(0.5, rel=1e-6)

    def test_kink_is_replayed(self):
        # relu at a point within h of zero: the replayed pattern keeps both sides on one piece
        x = Tensor(np.array([5e-4, -0.5]), requires_grad=True)
        [row] = gc.check_tensors(lambda: T.sum(T.relu(x) * 3.0), {"x": x})
        assert row.passed and row.crossed >= 1

    def test_groups(self):
        a = Tensor(np.ones(3), requires_grad=True)
        b = Tensor(np.ones(2), requires_grad=True)
        rows = gc.check_tensors(lambda: T.sum(a * a) + T.sum(b), {"p.a": a, "p.b": b}, group_of=lambda n: "p")
        assert [r.group for r in rows] == ["p"] and rows[0].probes == 5

    def test_table(self):
        text = gc.format_table([gc.GradRow("conv2d", 1e-6, 5), gc.GradRow("x", 2e-3, 5)])
        assert "conv2d" in text and "FAIL" in text and "PASS" in text

    def test_full_group_names(self):
        assert gc._group("encoder.stages.0.blocks.1.qkv.weight") == "encoder.stages.0"
        assert gc._group("cnnr.pred.weight") == "cnnr.pred"


@pytest.mark.parametrize("name", gc.OP_NAMES)
def test_op(name):
    rows = gc.check_op(name)
    assert all(r.passed for r in rows), gc.format_table(rows)


@pytest.mark.parametrize("name", gc.MODULE_NAMES)
def test_module(name):
    rows = gc.check_module(name)
    assert all(r.passed for r in rows), gc.format_table(rows)


def test_op_catalogue_covers_the_primitives():
    need = {"matmul", "softmax", "conv2d", "layernorm", "upsample2x_nearest", "relu", "sigmoid", "add", "mul",
            "concat", "maxpool2x", "avgpool_global", "resize_bilinear", "reshape_transpose"}
    assert need <= set(gc.OP_NAMES)


def test_module_catalogue():
    assert {"encoder_stage", "cmpi", "decoder_stage", "cnnr", "bce_loss", "ssim_loss", "iou_loss"} <= set(gc.MODULE_NAMES)
