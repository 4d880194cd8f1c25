import numpy as np
import pytest

from helpers import random_image
from photostyle.errors import OptimizationError
from photostyle.features import ExtractorSpec, LayerSpec, LayerWeights
from photostyle.losses import LossBreakdown, ObjectiveConfig, total_loss, build_objective_state
from photostyle.matting import build_matting_laplacian, matting_penalty
from photostyle.optimize import (
    OptimizerParams,
    lambda_sweep,
    minimize,
    noise_image,
    two_stage_transfer,
)
from photostyle.segmentation import all_ones_stack

SPEC = ExtractorSpec(
    layers=(
        LayerSpec("conv1_1", 4, 1),
        LayerSpec("conv2_1", 6, 2),
        LayerSpec("conv3_1", 8, 4),
    )
)
WEIGHTS = LayerWeights(content={"conv2_1": 1.0}, style={"conv1_1": 0.5, "conv3_1": 0.5})


def _quadratic(target):
    def objective(x):
        diff = x - target
        value = float(np.sum(diff * diff))
        return LossBreakdown(weighted_total=value), 2.0 * diff

    return objective


def test_quadratic_converges():
    rng = np.random.default_rng(0)
    target = rng.normal(size=(4, 4, 3))
    init = rng.normal(size=(4, 4, 3))
    result = minimize(_quadratic(target), init, OptimizerParams(max_iters=50))
    assert np.max(np.abs(result.image - target)) < 1e-6
    assert result.termination in ("converged", "max_iters")
    assert len(result.trace) <= 51


def test_zero_gradient_returns_immediately():
    def objective(x):
        return LossBreakdown(weighted_total=1.0), np.zeros_like(x)

    init = np.full((2, 2, 3), 0.25)
    result = minimize(objective, init, OptimizerParams())
    assert result.termination == "converged"
    assert len(result.trace) == 1
    np.testing.assert_array_equal(result.image, init)


def test_nonfinite_loss_raises_with_iteration():
    def objective(x):
        return LossBreakdown(weighted_total=float("nan")), np.zeros_like(x)

    with pytest.raises(OptimizationError) as err:
        minimize(objective, np.zeros((2, 2, 3)), OptimizerParams())
    assert err.value.iteration == 0


def test_line_search_failure_terminates_gracefully():
    # constant loss with a lying gradient: no step can satisfy Armijo
    def objective(x):
        return LossBreakdown(weighted_total=1.0), np.ones_like(x)

    result = minimize(objective, np.zeros((2, 2, 3)), OptimizerParams(max_iters=5))
    assert result.termination == "line_search_failure"
    assert len(result.trace) == 1
    np.testing.assert_array_equal(result.image, np.zeros((2, 2, 3)))


def test_lbfgs_trace_monotone_on_transfer_objective():
    rng = np.random.default_rng(1)
    img = random_image(rng, 16, 16)
    style = random_image(rng, 16, 16)
    config = ObjectiveConfig(weights=WEIGHTS, gamma=100.0, lam=10.0)
    state = build_objective_state(img, style, None, config, SPEC)
    init = noise_image(img.shape, 3)
    result = minimize(
        lambda x: total_loss(state, x), init, OptimizerParams(max_iters=64)
    )
    totals = [bd.weighted_total for bd in result.trace]
    assert totals[-1] < totals[0]
    diffs = np.diff(totals)
    assert np.all(diffs <= 1e-10)


def test_minimize_deterministic():
    rng = np.random.default_rng(2)
    img = random_image(rng, 12, 12)
    style = random_image(rng, 12, 12)
    config = ObjectiveConfig(weights=WEIGHTS, lam=5.0)
    state = build_objective_state(img, style, None, config, SPEC)
    init = noise_image(img.shape, 7)
    p = OptimizerParams(max_iters=20)
    a = minimize(lambda x: total_loss(state, x), init, p)
    b = minimize(lambda x: total_loss(state, x), init, p)
    np.testing.assert_array_equal(a.image, b.image)
    assert [x.weighted_total for x in a.trace] == [x.weighted_total for x in b.trace]


def test_adam_decreases_quadratic():
    rng = np.random.default_rng(3)
    target = rng.normal(size=(3, 3, 3))
    init = target + 0.5
    result = minimize(
        _quadratic(target), init, OptimizerParams(method="adam", max_iters=300, step_size=0.05)
    )
    assert result.trace[-1].weighted_total < result.trace[0].weighted_total * 0.01


def test_callback_sees_every_iteration():
    seen = []

    def cb(it, img, bd):
        seen.append(it)

    rng = np.random.default_rng(4)
    target = rng.normal(size=(2, 2, 3))
    result = minimize(
        _quadratic(target), target + 1.0, OptimizerParams(max_iters=10), callback=cb
    )
    assert seen[0] == 0
    assert len(seen) == len(result.trace)


def test_params_validation():
    with pytest.raises(ValueError):
        OptimizerParams(method="sgd")
    with pytest.raises(ValueError):
        OptimizerParams(max_iters=0)
    with pytest.raises(ValueError):
        OptimizerParams(tol=0.0)


def test_two_stage_lambda_zero_warm_start_improves():
    rng = np.random.default_rng(5)
    img = random_image(rng, 12, 12)
    style = random_image(rng, 12, 12)
    config = ObjectiveConfig(weights=WEIGHTS, lam=0.0)
    result = two_stage_transfer(
        img, style, None, config, SPEC, OptimizerParams(max_iters=30, seed=1)
    )
    assert (
        result.stage2.final.weighted_total
        <= result.stage1.final.weighted_total + 1e-10
    )


def test_two_stage_same_style_keeps_content():
    rng = np.random.default_rng(6)
    img = random_image(rng, 16, 16)
    masks = (all_ones_stack(16, 16), all_ones_stack(16, 16))
    config = ObjectiveConfig(weights=WEIGHTS, gamma=100.0, lam=100.0)
    result = two_stage_transfer(
        img, img, masks, config, SPEC, OptimizerParams(max_iters=80, seed=2)
    )
    c1 = result.stage1.final.content_total
    c2 = result.stage2.final.content_total
    assert c2 <= 1.1 * c1


def test_two_stage_deterministic():
    rng = np.random.default_rng(7)
    img = random_image(rng, 12, 12)
    style = random_image(rng, 12, 12)
    config = ObjectiveConfig(weights=WEIGHTS, lam=50.0)
    p = OptimizerParams(max_iters=15, seed=9)
    a = two_stage_transfer(img, style, None, config, SPEC, p)
    b = two_stage_transfer(img, style, None, config, SPEC, p)
    np.testing.assert_array_equal(a.stage1.image, b.stage1.image)
    np.testing.assert_array_equal(a.stage2.image, b.stage2.image)


def test_two_stage_full_objective_descends():
    rng = np.random.default_rng(8)
    img = random_image(rng, 16, 16)
    style = random_image(rng, 16, 16)
    config = ObjectiveConfig(weights=WEIGHTS, gamma=100.0, lam=1e4)
    result = two_stage_transfer(
        img, style, None, config, SPEC, OptimizerParams(max_iters=64, seed=3)
    )
    trace2 = [bd.weighted_total for bd in result.stage2.trace]
    assert trace2[-1] < trace2[0]
    # stage 2 reduces the photorealism penalty of the stage-1 image
    lap = build_matting_laplacian(img, config.matting_params())
    assert matting_penalty(lap, result.stage2.image) < matting_penalty(
        lap, result.stage1.image
    )


def test_lambda_sweep_shares_stage1():
    rng = np.random.default_rng(9)
    img = random_image(rng, 12, 12)
    style = random_image(rng, 12, 12)
    config = ObjectiveConfig(weights=WEIGHTS, lam=10.0)
    stage1, results = lambda_sweep(
        img, style, None, config, SPEC, OptimizerParams(max_iters=20, seed=4), [1.0, 100.0]
    )
    assert [lam for lam, _ in results] == [1.0, 100.0]
    assert all(isinstance(r.trace[0], LossBreakdown) for _, r in results)
    for _, r in results:
        assert r.final.weighted_total <= r.trace[0].weighted_total + 1e-10
