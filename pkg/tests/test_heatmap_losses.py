import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import argmax_scan, gaussian_scan, sum_sq_loops

from hmtnet.errors import ContractError, NumericFault
from hmtnet.gradcheck import gradient_check
from hmtnet.heatmap import decode_argmax, labels_to_heatmaps, patch_to_grid, render, save_heatmap_image
from hmtnet.losses import (
    LossWeights,
    feature_heatmap_loss,
    hmt_heatmap_loss,
    regression_loss,
    total_loss,
    weight_penalty,
)
from hmtnet.tensor import Parameter, Tensor


def test_render_values():
    h = render((10.0, 7.0), sigma=1.5)
    assert h.shape == (24, 24) and h[7, 10] == 1.0
    assert h[7, 10 + 1] == pytest.approx(math.exp(-1 / (2 * 1.5**2)))
    h2 = render((10.0, 7.0), sigma=2.0)
    assert h2[7, 12] == pytest.approx(math.exp(-0.5))
    np.testing.assert_array_equal(h[7, 10 - 3:10], h[7, 11:14][::-1])
    np.testing.assert_allclose(render((3.3, 17.8)), gaussian_scan(3.3, 17.8, 1.5, 24), atol=1e-15)
    with pytest.raises(ValueError):
        render((1, 1), sigma=0)


def test_decode_argmax():
    assert decode_argmax(render((5.0, 9.0))) == (5, 9)
    assert decode_argmax(np.zeros((24, 24))) == (0, 0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        u, v = rng.uniform(0, 23, 2)
        h = render((u, v))
        assert decode_argmax(h) == argmax_scan(h) == (round(u), round(v))


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 23), st.floats(0, 23))
def test_decode_within_half_diagonal(u, v):
    du, dv = decode_argmax(render((u, v)))
    assert math.hypot(du - u, dv - v) <= 0.5 * math.sqrt(2) + 1e-12
    assert render((u, v)).max() <= 1.0


def test_patch_to_grid():
    np.testing.assert_array_equal(patch_to_grid([-1, -1]), [0, 0])
    np.testing.assert_array_equal(patch_to_grid([0, 0]), [11.5, 11.5])
    np.testing.assert_array_equal(patch_to_grid([1, 1]), [23, 23])


def test_labels_to_heatmaps_ignores_depth():
    lab = np.array([0.2, -0.4, 0.9, -1.0, 1.0, -0.3])
    a = labels_to_heatmaps(lab, 2)
    lab[2::3] = 0.0
    np.testing.assert_array_equal(a, labels_to_heatmaps(lab, 2))
    assert decode_argmax(a[1]) == (0, 23)


def test_save_heatmap_image(tmp_path):
    from PIL import Image

    save_heatmap_image(render((4.0, 6.0)), tmp_path / "h.png")
    with Image.open(tmp_path / "h.png") as img:
        arr = np.asarray(img)
    assert arr.shape == (24, 24) and arr[6, 4] == 255


# -- losses ---------------------------------------------------------------------------


def test_heatmap_loss_examples():
    z = np.zeros((1, 2, 24, 24))
    assert feature_heatmap_loss(Tensor(z), z).item() == 0.0
    d = z.copy()
    d[0, 1, 3, 4] = 1.0
    assert hmt_heatmap_loss(Tensor(d), z).item() == 1.0
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((3, 4, 24, 24)), rng.standard_normal((3, 4, 24, 24))
    assert feature_heatmap_loss(Tensor(a), b).item() == pytest.approx(sum_sq_loops(a, b), rel=1e-12)
    assert hmt_heatmap_loss(Tensor(a), b).item() == feature_heatmap_loss(Tensor(a), b).item()
    with pytest.raises(ContractError):
        feature_heatmap_loss(Tensor(a), b[:, :3])


def test_regression_loss_examples():
    gt = np.zeros((1, 6))
    assert regression_loss(Tensor(gt), gt).item() == 0.0
    assert regression_loss(Tensor(np.array([[1.0, 2.0, 2.0, 0, 0, 0]])), gt).item() == 9.0
    assert regression_loss(Tensor(np.array([[3.0, 0.0, 4.0, 0, 0, 0]])), gt).item() == 25.0
    batch = np.array([[1.0, 2.0, 2.0, 0, 0, 0], [3.0, 0.0, 4.0, 0, 0, 0]])
    assert regression_loss(Tensor(batch), np.zeros((2, 6))).item() == 17.0
    with pytest.raises(ContractError):
        regression_loss(Tensor(gt), np.zeros((1, 9)))


def test_weight_penalty():
    rng = np.random.default_rng(2)
    params = [Parameter(rng.standard_normal((3, 4)), "a.kernel"), Parameter(rng.standard_normal(5), "a.weight"),
              Parameter(rng.standard_normal(3), "a.bias", regularize=False)]
    flat = 0.0
    for p in params[:2]:
        for v in p.data.reshape(-1):
            flat += v * v
    assert abs(weight_penalty(params).item() - 0.5 * flat) < 1e-12
    assert weight_penalty([Parameter(np.array([3.0]), "w")]).item() == 4.5
    assert weight_penalty([Parameter(np.zeros(4), "w")]).item() == 0.0


def test_total_loss_worked_example():
    parts = total_loss(2.0, 1.0, 2.0, 10.0, LossWeights())
    assert abs(parts.total.item() - 10.07) < 1e-12
    assert total_loss(0.0, 0.0, 0.0, 0.0).total.item() == 0.0
    w = Parameter(np.array([3.0]), "w")
    assert total_loss(0.0, 0.0, 0.0, weight_penalty([w])).total.item() == 4.5


def test_total_is_linear_in_each_weight():
    base = total_loss(2.0, 3.0, 5.0, 7.0, LossWeights(lambda_r=0.05)).total.item()
    doubled = total_loss(2.0, 3.0, 5.0, 7.0, LossWeights(lambda_r=0.10)).total.item()
    others = 0.005 * 2 + 0.005 * 5 + 7.0
    assert abs((doubled - others) - 2 * (base - others)) < 1e-12


def test_total_loss_rejects_non_finite_and_negative_weights():
    with pytest.raises(NumericFault):
        total_loss(float("nan"), 0.0, 0.0, 0.0)
    with pytest.raises(ContractError):
        LossWeights(lambda_f=-1.0)


def test_total_loss_gradient():
    rng = np.random.default_rng(3)
    est_f = Tensor(rng.standard_normal((1, 2, 24, 24)), requires_grad=True)
    est_h = Tensor(rng.standard_normal((1, 2, 24, 24)), requires_grad=True)
    est_j = Tensor(rng.standard_normal((1, 6)), requires_grad=True)
    w = Parameter(rng.standard_normal(4), "w")
    gt_h, gt_j = rng.standard_normal((1, 2, 24, 24)), rng.standard_normal((1, 6))

    def loss(f, h, j, w):
        return total_loss(feature_heatmap_loss(f, gt_h), regression_loss(j, gt_j),
                          hmt_heatmap_loss(h, gt_h), weight_penalty([w])).total

    assert gradient_check(loss, [est_f, est_h, est_j, w], max_coords=60) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_loss_terms_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 3, 24, 24)), rng.standard_normal((2, 3, 24, 24))
    assert feature_heatmap_loss(Tensor(a), b).item() >= 0
    assert regression_loss(Tensor(a[:, 0, 0]), b[:, 0, 0]).item() >= 0
