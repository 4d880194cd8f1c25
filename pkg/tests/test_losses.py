import numpy as np
import pytest

from helpers import central_difference, random_image, rel_error
from photostyle.errors import LabelError
from photostyle.features import (
    ExtractorSpec,
    FeatureMap,
    LayerSpec,
    LayerWeights,
)
from photostyle.losses import (
    LossBreakdown,
    ObjectiveConfig,
    augmented_style_loss,
    build_objective_state,
    content_loss,
    gram,
    style_loss,
    total_loss,
    write_trace_csv,
)
from photostyle.matting import build_matting_laplacian, matting_gradient, matting_penalty
from photostyle.segmentation import LabelMaskStack, all_ones_stack, build_mask_stack

SPEC = ExtractorSpec(
    layers=(
        LayerSpec("conv1_1", 4, 1),
        LayerSpec("conv2_1", 6, 2),
        LayerSpec("conv3_1", 8, 4),
    )
)


def _fm(matrix, h, w, name="m"):
    matrix = np.asarray(matrix, dtype=np.float64)
    return FeatureMap(name, matrix.shape[0], h, w, matrix)


def test_gram_identity_rows():
    np.testing.assert_array_equal(
        gram(np.eye(2)), np.eye(2)
    )


def test_gram_single_filter():
    row = np.array([[1.0, 2.0, 2.0]])
    np.testing.assert_allclose(gram(row), [[9.0]])


def test_gram_matches_double_loop():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(3, 5))
    expected = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            expected[i, j] = sum(f[i, k] * f[j, k] for k in range(5))
    assert np.max(np.abs(gram(f) - expected)) < 1e-12


def test_gram_symmetric_psd():
    rng = np.random.default_rng(1)
    g = gram(rng.normal(size=(6, 10)))
    assert np.max(np.abs(g - g.T)) < 1e-10
    assert np.linalg.eigvalsh(g).min() >= -1e-8


def test_content_loss_identical_is_zero():
    rng = np.random.default_rng(2)
    f = _fm(rng.normal(size=(4, 6)), 2, 3)
    value, grad = content_loss(f, f)
    assert value == 0.0
    assert np.all(grad == 0.0)


def test_content_loss_scalar_case():
    f_out = _fm([[3.0]], 1, 1)
    f_in = _fm([[1.0]], 1, 1)
    value, grad = content_loss(f_out, f_in)
    assert value == pytest.approx(2.0, abs=0)
    np.testing.assert_allclose(grad, [[2.0]])


def test_content_loss_matches_finite_differences():
    rng = np.random.default_rng(3)
    ref = _fm(rng.normal(size=(4, 6)), 2, 3)
    out = rng.normal(size=(4, 6))
    _, analytic = content_loss(_fm(out, 2, 3), ref)

    def f(x):
        return content_loss(_fm(x, 2, 3), ref)[0]

    assert rel_error(analytic, central_difference(f, out)) < 1e-6


def test_content_loss_shape_mismatch():
    with pytest.raises(ValueError):
        content_loss(_fm(np.zeros((2, 2)), 1, 2), _fm(np.zeros((2, 4)), 2, 2))


def test_style_loss_identical_is_zero():
    g = gram(np.random.default_rng(4).normal(size=(3, 7)))
    value, grad = style_loss(g, g, 3)
    assert value == 0.0
    assert np.all(grad == 0.0)


def test_style_loss_scalar_case():
    value, grad = style_loss(np.array([[4.0]]), np.array([[2.0]]), 1)
    assert value == pytest.approx(2.0, abs=0)
    np.testing.assert_allclose(grad, [[2.0]])


def test_style_loss_chain_matches_finite_differences():
    rng = np.random.default_rng(5)
    f_style = rng.normal(size=(3, 8))
    g_ref = gram(f_style)
    out = rng.normal(size=(3, 8))
    ones_out = all_ones_stack(2, 4)
    ones_style = all_ones_stack(2, 4)
    _, analytic = augmented_style_loss(
        _fm(out, 2, 4), _fm(f_style, 2, 4), ones_out, ones_style
    )

    def f(x):
        return style_loss(gram(x), g_ref, 3)[0]

    assert rel_error(analytic, central_difference(f, out)) < 1e-5


def test_augmented_reduces_to_plain_style_with_ones_mask():
    rng = np.random.default_rng(6)
    f_out = rng.normal(size=(5, 12))
    f_style = rng.normal(size=(5, 12))
    value, grad = augmented_style_loss(
        _fm(f_out, 3, 4), _fm(f_style, 3, 4), all_ones_stack(3, 4), all_ones_stack(3, 4)
    )
    plain_value, plain_g_grad = style_loss(gram(f_out), gram(f_style), 5)
    assert abs(value - plain_value) <= 1e-12
    expected_grad = 2.0 * plain_g_grad @ f_out
    assert np.max(np.abs(grad - expected_grad)) <= 1e-12


def test_augmented_empty_class_in_both_skipped():
    rng = np.random.default_rng(7)
    f_out = rng.normal(size=(3, 4))
    f_style = rng.normal(size=(3, 4))
    labels = np.zeros((2, 2), dtype=int)
    masks = build_mask_stack(labels, [0, 1])  # class 1 empty in both
    v2, g2 = augmented_style_loss(_fm(f_out, 2, 2), _fm(f_style, 2, 2), masks, masks)
    only = build_mask_stack(labels, [0])
    v1, g1 = augmented_style_loss(_fm(f_out, 2, 2), _fm(f_style, 2, 2), only, only)
    assert v1 == v2
    np.testing.assert_array_equal(g1, g2)


def test_augmented_two_class_fd_and_bruteforce():
    rng = np.random.default_rng(8)
    f_out = rng.normal(size=(3, 12))
    f_style = rng.normal(size=(3, 12))
    labels_out = rng.integers(0, 2, size=(3, 4))
    labels_style = rng.integers(0, 2, size=(3, 4))
    masks_out = build_mask_stack(labels_out, [0, 1])
    masks_style = build_mask_stack(labels_style, [0, 1])
    value, analytic = augmented_style_loss(
        _fm(f_out, 3, 4), _fm(f_style, 3, 4), masks_out, masks_style
    )

    # independent per-class recomputation with explicit loops
    expected = 0.0
    mo = masks_out.channels.reshape(2, -1)
    ms = masks_style.channels.reshape(2, -1)
    for c in range(2):
        a = f_out * mo[c]
        b = f_style * ms[c]
        ga = np.array([[np.dot(a[i], a[j]) for j in range(3)] for i in range(3)])
        gb = np.array([[np.dot(b[i], b[j]) for j in range(3)] for i in range(3)])
        nsq = 9.0 * max(mo[c].mean(), 1e-8) * max(ms[c].mean(), 1e-8)
        expected += float(np.sum((ga - gb) ** 2)) / (2.0 * nsq)
    assert value == pytest.approx(expected, rel=1e-12)

    def f(x):
        return augmented_style_loss(
            _fm(x, 3, 4), _fm(f_style, 3, 4), masks_out, masks_style
        )[0]

    assert rel_error(analytic, central_difference(f, f_out)) < 1e-5


def test_augmented_plain_norm_mode():
    rng = np.random.default_rng(9)
    f_out = rng.normal(size=(2, 4))
    f_style = rng.normal(size=(2, 4))
    labels = np.array([[0, 0], [0, 1]])
    masks = build_mask_stack(labels, [0, 1])
    value, _ = augmented_style_loss(
        _fm(f_out, 2, 2), _fm(f_style, 2, 2), masks, masks, mode="plain"
    )
    mo = masks.channels.reshape(2, -1)
    expected = 0.0
    for c in range(2):
        a = f_out * mo[c]
        b = f_style * mo[c]
        expected += float(np.sum((gram(a) - gram(b)) ** 2)) / (2.0 * 4.0)
    assert value == pytest.approx(expected, rel=1e-12)


def test_augmented_class_list_mismatch():
    f = _fm(np.zeros((2, 4)), 2, 2)
    a = all_ones_stack(2, 2, class_id=0)
    b = all_ones_stack(2, 2, class_id=1)
    with pytest.raises(LabelError):
        augmented_style_loss(f, f, a, b)


def test_augmented_spatial_mismatch():
    f = _fm(np.zeros((2, 4)), 2, 2)
    with pytest.raises(ValueError):
        augmented_style_loss(f, f, all_ones_stack(3, 3), all_ones_stack(2, 2))


def _default_config(**kw):
    weights = kw.pop(
        "weights",
        LayerWeights(content={"conv2_1": 1.0}, style={"conv1_1": 0.5, "conv3_1": 0.5}),
    )
    return ObjectiveConfig(weights=weights, **kw)


def test_total_loss_zero_lambda_with_matching_content():
    rng = np.random.default_rng(10)
    img = random_image(rng, 8, 8)
    style = random_image(rng, 8, 8)
    config = _default_config(lam=0.0)
    state = build_objective_state(img, style, None, config, SPEC)
    breakdown, _ = total_loss(state, img)
    assert breakdown.content_total == 0.0
    assert breakdown.matting_term == 0.0
    assert breakdown.weighted_total == pytest.approx(
        config.gamma * breakdown.style_total, rel=0, abs=0
    )


def test_total_loss_isolates_matting_term():
    # with gamma = 0 and output = input, only the photorealism term is live
    rng = np.random.default_rng(11)
    img = random_image(rng, 8, 8)
    style = random_image(rng, 8, 8)
    config = _default_config(gamma=0.0, lam=3.0)
    state = build_objective_state(img, style, None, config, SPEC)
    breakdown, grad = total_loss(state, img)
    lap = build_matting_laplacian(img, config.matting_params())
    assert breakdown.weighted_total == pytest.approx(
        3.0 * matting_penalty(lap, img), rel=0, abs=0
    )
    np.testing.assert_array_equal(grad, 3.0 * matting_gradient(lap, img))


def test_total_loss_full_objective_fd():
    rng = np.random.default_rng(12)
    img = random_image(rng, 8, 8)
    style = random_image(rng, 10, 9)
    labels_in = rng.integers(0, 2, size=(8, 8))
    labels_style = rng.integers(0, 2, size=(10, 9))
    masks = (
        build_mask_stack(labels_in, [0, 1]),
        build_mask_stack(labels_style, [0, 1]),
    )
    config = _default_config(lam=10.0)
    state = build_objective_state(img, style, masks, config, SPEC)
    out = random_image(rng, 8, 8)
    breakdown, analytic = total_loss(state, out)
    assert breakdown.weighted_total > 0

    def f(x):
        return total_loss(state, x)[0].weighted_total

    assert rel_error(analytic, central_difference(f, out)) < 1e-4


def test_breakdown_reconstruction_identity():
    rng = np.random.default_rng(13)
    img = random_image(rng, 8, 8)
    style = random_image(rng, 8, 8)
    config = _default_config(lam=2.0)
    state = build_objective_state(img, style, None, config, SPEC)
    breakdown, _ = total_loss(state, random_image(rng, 8, 8))
    rebuilt = (
        sum(
            config.weights.content[l] * v
            for l, v in breakdown.content_per_layer.items()
        )
        + config.gamma
        * sum(config.weights.style[l] * v for l, v in breakdown.style_per_layer.items())
        + config.lam * breakdown.matting_term
    )
    assert abs(breakdown.weighted_total - rebuilt) < 1e-10
    assert breakdown.content_total >= 0
    assert breakdown.style_total >= 0
    assert breakdown.matting_term >= -1e-8


def test_objective_state_validations():
    rng = np.random.default_rng(14)
    img = random_image(rng, 8, 8)
    style = random_image(rng, 8, 8)
    config = _default_config()
    # class present in input but absent in style
    masks = (
        build_mask_stack(np.ones((8, 8), dtype=int), [0, 1]),
        build_mask_stack(np.zeros((8, 8), dtype=int), [0, 1]),
    )
    with pytest.raises(LabelError, match="empty in the"):
        build_objective_state(img, style, masks, config, SPEC)
    # mask size mismatch
    bad = (
        build_mask_stack(np.zeros((4, 4), dtype=int), [0]),
        build_mask_stack(np.zeros((8, 8), dtype=int), [0]),
    )
    with pytest.raises(LabelError, match="input masks"):
        build_objective_state(img, style, bad, config, SPEC)


def test_total_loss_output_shape_check():
    rng = np.random.default_rng(15)
    state = build_objective_state(
        random_image(rng, 8, 8), random_image(rng, 8, 8), None, _default_config(), SPEC
    )
    with pytest.raises(ValueError):
        total_loss(state, random_image(rng, 9, 8))


def test_objective_config_validation():
    weights = LayerWeights(content={"a": 1.0}, style={"b": 1.0})
    with pytest.raises(ValueError):
        ObjectiveConfig(weights=weights, gamma=-1.0)
    with pytest.raises(ValueError):
        ObjectiveConfig(weights=weights, lam=-0.5)
    with pytest.raises(ValueError):
        ObjectiveConfig(weights=weights, style_norm="other")


def test_trace_csv_format(tmp_path):
    rows = [
        LossBreakdown(
            content_total=1.25,
            style_total=2.5,
            matting_term=0.125,
            gamma=100.0,
            lam=1e4,
            weighted_total=1.25 + 250.0 + 1250.0,
        )
    ]
    path = tmp_path / "trace.csv"
    write_trace_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,content,style,matting,total"
    fields = lines[1].split(",")
    assert fields[0] == "0"
    assert float(fields[1]) == 1.25
    assert float(fields[4]) == rows[0].weighted_total
