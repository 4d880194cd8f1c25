"""Objective terms: content loss, Gram style loss, the segmentation-
augmented style loss, the photorealism penalty hookup, and the combined
total with analytic pixel gradients.

Shapes follow the feature convention: a layer's features are an
(n_filters, D) matrix with D = height*width, its Gram matrix is the
(n_filters, n_filters) product F F^T, and mask channels are flattened
row-major to length D so they align with feature columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import LabelError
from .features import (
    ExtractorSpec,
    FeatureMap,
    LayerWeights,
    extract_features,
    extract_features_with_vjp,
    feature_spatial_size,
)
from .image import require_image
from .matting import (
    MattingParams,
    SparseSym,
    build_matting_laplacian,
    matting_gradient,
    matting_penalty,
)
from .segmentation import LabelMaskStack, all_ones_stack, downsample_mask

# Floor for mask-weighted class normalization, keeping tiny classes from
# blowing up the per-class term.
_MASS_FLOOR = 1e-8

STYLE_NORM_MODES = ("mask-weighted", "plain")


@dataclass(frozen=True)
class ObjectiveConfig:
    """All objective weights and hyperparameters of a run."""

    weights: LayerWeights
    gamma: float = 1e2
    lam: float = 1e4
    matting_eps: float = 1e-5
    window_radius: int = 1
    style_norm: str = "mask-weighted"

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lambda must be >= 0")
        if self.style_norm not in STYLE_NORM_MODES:
            raise ValueError(f"style_norm must be one of {STYLE_NORM_MODES}")

    def matting_params(self) -> MattingParams:
        return MattingParams(eps=self.matting_eps, window_radius=self.window_radius)


@dataclass
class LossBreakdown:
    """Per-term values of one objective evaluation.

    content_per_layer and style_per_layer hold raw (unweighted) layer
    terms; content_total and style_total fold in the per-layer weights;
    weighted_total = content_total + gamma*style_total + lam*matting_term.
    """

    content_per_layer: dict[str, float] = field(default_factory=dict)
    style_per_layer: dict[str, float] = field(default_factory=dict)
    matting_term: float = 0.0
    content_total: float = 0.0
    style_total: float = 0.0
    gamma: float = 0.0
    lam: float = 0.0
    weighted_total: float = 0.0

    def to_dict(self) -> dict:
        return {
            "content_per_layer": dict(self.content_per_layer),
            "style_per_layer": dict(self.style_per_layer),
            "content": self.content_total,
            "style": self.style_total,
            "matting": self.matting_term,
            "total": self.weighted_total,
        }


def write_trace_csv(path, trace: Sequence[LossBreakdown]) -> None:
    """Loss trace as CSV with 17-significant-digit values."""
    with open(path, "w") as fh:
        fh.write("iteration,content,style,matting,total\n")
        for i, row in enumerate(trace):
            fh.write(
                f"{i},{row.content_total:.17g},{row.style_total:.17g},"
                f"{row.matting_term:.17g},{row.weighted_total:.17g}\n"
            )


def gram(features) -> np.ndarray:
    """Gram matrix F F^T of a feature matrix (or FeatureMap)."""
    matrix = features.matrix if isinstance(features, FeatureMap) else np.asarray(features)
    return matrix @ matrix.T


def content_loss(f_out: FeatureMap, f_ref: FeatureMap):
    """Mean-squared feature distance with the 1/(2 N D) normalization.

    Returns (value, gradient w.r.t. f_out's matrix).
    """
    if f_out.matrix.shape != f_ref.matrix.shape:
        raise ValueError(
            f"feature shapes differ: {f_out.matrix.shape} vs {f_ref.matrix.shape}"
        )
    n, d = f_out.matrix.shape
    diff = f_out.matrix - f_ref.matrix
    value = float(np.sum(diff * diff)) / (2.0 * n * d)
    return value, diff / (n * d)


def style_loss(g_out: np.ndarray, g_ref: np.ndarray, n_filters: int):
    """Gram-space style distance with the 1/(2 N^2) normalization.

    Returns (value, gradient w.r.t. g_out); the chain rule through the
    Gram product is applied by augmented_style_loss.
    """
    g_out = np.asarray(g_out, dtype=np.float64)
    g_ref = np.asarray(g_ref, dtype=np.float64)
    if g_out.shape != g_ref.shape:
        raise ValueError(f"Gram shapes differ: {g_out.shape} vs {g_ref.shape}")
    diff = g_out - g_ref
    nsq = float(n_filters) ** 2
    value = float(np.sum(diff * diff)) / (2.0 * nsq)
    return value, diff / nsq


def masked_feature_matrix(matrix: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Scale feature columns by a flattened mask channel."""
    return matrix * mask[None, :]


def _class_norm_squares(
    n_filters: int, means_out: np.ndarray, means_style: np.ndarray, mode: str
) -> np.ndarray:
    nsq = float(n_filters) ** 2
    if mode == "plain":
        return np.full(means_out.shape, nsq)
    return (
        nsq
        * np.maximum(means_out, _MASS_FLOOR)
        * np.maximum(means_style, _MASS_FLOOR)
    )


def _flat_masks(stack: LabelMaskStack) -> np.ndarray:
    return stack.channels.reshape(stack.channels.shape[0], -1)


def _augmented_core(
    out_matrix: np.ndarray,
    out_masks: np.ndarray,
    target_grams: Sequence[np.ndarray | None],
    norm_squares: np.ndarray,
):
    """Masked per-class Gram loss against precomputed targets.

    target_grams entries set to None mark classes empty in both images,
    which contribute nothing. Returns (value, gradient on out_matrix).
    """
    value = 0.0
    grad = np.zeros_like(out_matrix)
    for c, target in enumerate(target_grams):
        if target is None:
            continue
        mask = out_masks[c]
        masked = masked_feature_matrix(out_matrix, mask)
        diff = masked @ masked.T - target
        nsq = norm_squares[c]
        value += float(np.sum(diff * diff)) / (2.0 * nsq)
        grad += (2.0 / nsq) * masked_feature_matrix(diff @ masked, mask)
    return value, grad


def augmented_style_loss(
    f_out: FeatureMap,
    f_style: FeatureMap,
    masks_out: LabelMaskStack,
    masks_style: LabelMaskStack,
    mode: str = "mask-weighted",
):
    """Segmentation-augmented style loss.

    Features of each image are column-masked by that image's class
    channels, per-class Gram matrices are compared, and class terms are
    summed. With one all-ones channel this reduces exactly to style_loss
    on the unmasked Gram matrices. Returns (value, gradient on f_out's
    matrix).
    """
    if masks_out.classes != masks_style.classes:
        raise LabelError(
            f"class lists differ: {masks_out.classes} vs {masks_style.classes}"
        )
    if f_out.n_filters != f_style.n_filters:
        raise ValueError(
            f"filter counts differ: {f_out.n_filters} vs {f_style.n_filters}"
        )
    if (masks_out.height, masks_out.width) != (f_out.height, f_out.width):
        raise ValueError(
            f"output masks {masks_out.height}x{masks_out.width} do not match "
            f"feature maps {f_out.height}x{f_out.width}"
        )
    if (masks_style.height, masks_style.width) != (f_style.height, f_style.width):
        raise ValueError(
            f"style masks {masks_style.height}x{masks_style.width} do not match "
            f"feature maps {f_style.height}x{f_style.width}"
        )
    out_masks = _flat_masks(masks_out)
    style_masks = _flat_masks(masks_style)
    means_out = out_masks.mean(axis=1)
    means_style = style_masks.mean(axis=1)
    targets = []
    for c in range(len(masks_out.classes)):
        if means_out[c] == 0.0 and means_style[c] == 0.0:
            targets.append(None)
            continue
        masked = masked_feature_matrix(f_style.matrix, style_masks[c])
        targets.append(masked @ masked.T)
    norms = _class_norm_squares(f_out.n_filters, means_out, means_style, mode)
    return _augmented_core(f_out.matrix, out_masks, targets, norms)


# ---------------------------------------------------------------------------
# full objective


@dataclass
class _LayerStyleTargets:
    target_grams: list
    norm_squares: np.ndarray
    out_masks: np.ndarray  # (C, D) masks for the output side


@dataclass
class ObjectiveState:
    """Everything constant across evaluations of one optimization stage."""

    spec: ExtractorSpec
    weights: LayerWeights
    gamma: float
    lam: float
    image_shape: tuple[int, int]
    content_targets: dict[str, FeatureMap]
    style_targets: dict[str, _LayerStyleTargets]
    laplacian: SparseSym | None

    def content_layers(self) -> list[str]:
        return [l for l, a in self.weights.content.items() if a > 0]

    def style_layers(self) -> list[str]:
        return [l for l, b in self.weights.style.items() if b > 0]

    def without_matting(self) -> "ObjectiveState":
        return replace(self, lam=0.0)


def _ordered_unique(spec: ExtractorSpec, names) -> list[str]:
    wanted = set(names)
    return [n for n in spec.layer_names() if n in wanted]


def build_objective_state(
    input_image: np.ndarray,
    style_image: np.ndarray,
    masks: tuple[LabelMaskStack, LabelMaskStack] | None,
    config: ObjectiveConfig,
    spec: ExtractorSpec,
) -> ObjectiveState:
    """Precompute targets: input features, per-class style Grams, masks
    downsampled to every layer's grid, and the input's Matting Laplacian."""
    input_image = require_image(input_image, "input")
    style_image = require_image(style_image, "style")
    in_h, in_w, _ = input_image.shape
    st_h, st_w, _ = style_image.shape

    if masks is None:
        mask_in = all_ones_stack(in_h, in_w)
        mask_style = all_ones_stack(st_h, st_w)
    else:
        mask_in, mask_style = masks
        if (mask_in.height, mask_in.width) != (in_h, in_w):
            raise LabelError("input masks do not match the input image size")
        if (mask_style.height, mask_style.width) != (st_h, st_w):
            raise LabelError("style masks do not match the style image size")
        if mask_in.classes != mask_style.classes:
            raise LabelError("input and style mask stacks list different classes")
        means_in = mask_in.channel_means()
        means_style = mask_style.channel_means()
        bad = [
            mask_in.classes[c]
            for c in range(len(mask_in.classes))
            if means_in[c] > 0.0 and means_style[c] == 0.0
        ]
        if bad:
            raise LabelError(
                f"classes {bad} are present in the input but empty in the "
                f"style image; remap orphan labels first"
            )
        keep = [
            c
            for c in range(len(mask_in.classes))
            if means_in[c] > 0.0 or means_style[c] > 0.0
        ]
        classes = tuple(mask_in.classes[c] for c in keep)
        mask_in = LabelMaskStack(mask_in.channels[keep], classes)
        mask_style = LabelMaskStack(mask_style.channels[keep], classes)

    content_layers = _ordered_unique(
        spec, [l for l, a in config.weights.content.items() if a > 0]
    )
    style_layers = _ordered_unique(
        spec, [l for l, b in config.weights.style.items() if b > 0]
    )
    down_by_name = {layer.name: layer.downsample for layer in spec.layers}

    content_targets = {
        fm.layer_name: fm
        for fm in extract_features(input_image, spec, content_layers)
    }

    style_maps = extract_features(style_image, spec, style_layers)
    style_targets: dict[str, _LayerStyleTargets] = {}
    for fm in style_maps:
        ds = down_by_name[fm.layer_name]
        style_stack = downsample_mask(mask_style, fm.height, fm.width)
        out_h, out_w = feature_spatial_size((in_h, in_w), ds)
        out_stack = downsample_mask(mask_in, out_h, out_w)
        style_flat = _flat_masks(style_stack)
        out_flat = _flat_masks(out_stack)
        means_style = style_flat.mean(axis=1)
        means_out = out_flat.mean(axis=1)
        targets = []
        for c in range(len(out_stack.classes)):
            if means_out[c] == 0.0 and means_style[c] == 0.0:
                targets.append(None)
                continue
            masked = masked_feature_matrix(fm.matrix, style_flat[c])
            targets.append(masked @ masked.T)
        norms = _class_norm_squares(
            fm.n_filters, means_out, means_style, config.style_norm
        )
        style_targets[fm.layer_name] = _LayerStyleTargets(targets, norms, out_flat)

    laplacian = None
    if config.lam > 0:
        laplacian = build_matting_laplacian(input_image, config.matting_params())

    return ObjectiveState(
        spec=spec,
        weights=config.weights,
        gamma=config.gamma,
        lam=config.lam,
        image_shape=(in_h, in_w),
        content_targets=content_targets,
        style_targets=style_targets,
        laplacian=laplacian,
    )


def total_loss(state: ObjectiveState, output: np.ndarray):
    """Evaluate the combined objective at an output image.

    Returns (LossBreakdown, pixel gradient): per-layer feature gradients
    are accumulated in spec layer order and backpropagated through the
    extractor in one pass, then the weighted photorealism gradient is
    added.
    """
    output = require_image(output, "output")
    if output.shape[:2] != state.image_shape:
        raise ValueError(
            f"output {output.shape[:2]} does not match input {state.image_shape}"
        )
    content_layers = state.content_layers()
    style_layers = state.style_layers()
    needed = _ordered_unique(state.spec, content_layers + style_layers)
    maps, vjp = extract_features_with_vjp(output, state.spec, needed)
    by_name = {fm.layer_name: fm for fm in maps}

    breakdown = LossBreakdown(gamma=state.gamma, lam=state.lam)
    upstream: dict[str, np.ndarray] = {}

    for name in needed:
        fm = by_name[name]
        acc = np.zeros_like(fm.matrix)
        alpha = state.weights.content.get(name, 0.0)
        if alpha > 0:
            value, grad = content_loss(fm, state.content_targets[name])
            breakdown.content_per_layer[name] = value
            breakdown.content_total += alpha * value
            acc += alpha * grad
        beta = state.weights.style.get(name, 0.0)
        if beta > 0:
            targets = state.style_targets[name]
            value, grad = _augmented_core(
                fm.matrix, targets.out_masks, targets.target_grams, targets.norm_squares
            )
            breakdown.style_per_layer[name] = value
            breakdown.style_total += beta * value
            acc += (state.gamma * beta) * grad
        upstream[name] = acc

    pixel_grad = vjp(upstream)

    if state.lam > 0 and state.laplacian is not None:
        breakdown.matting_term = matting_penalty(state.laplacian, output)
        pixel_grad = pixel_grad + state.lam * matting_gradient(state.laplacian, output)

    breakdown.weighted_total = (
        breakdown.content_total
        + state.gamma * breakdown.style_total
        + state.lam * breakdown.matting_term
    )
    return breakdown, pixel_grad
