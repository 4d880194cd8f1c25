"""Semantic label handling: mask stacks, class merging, orphan remapping,
and per-layer mask downsampling.

Label images arrive as PNGs (indexed or plain RGB) with a JSON sidecar
mapping "#RRGGBB" colors to label names; everything downstream works on
integer label ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import LabelError
from .image import decode_png


@dataclass
class LabelMaskStack:
    """C mask channels of shape (H, W) plus the channel -> class mapping.

    Binary stacks partition the image exactly; downsampled stacks are soft
    but per-pixel channel sums stay 1 within 1e-6.
    """

    channels: np.ndarray  # (C, H, W) float64
    classes: tuple[int, ...]

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 3 or self.channels.shape[0] != len(self.classes):
            raise ValueError(
                f"stack shape {self.channels.shape} does not match "
                f"{len(self.classes)} classes"
            )

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    def channel_means(self) -> np.ndarray:
        return self.channels.mean(axis=(1, 2))


@dataclass
class MergeTable:
    """Fine label id -> merged class id, with names for error messages."""

    mapping: dict[int, int]
    names: dict[int, str] = field(default_factory=dict)

    def name(self, label: int) -> str:
        return self.names.get(label, str(label))


# Default class synonyms, by name; the run config may extend or replace it.
DEFAULT_MERGE_NAMES: dict[str, str] = {
    "lake": "water",
    "river": "water",
    "ocean": "water",
    "sea": "water",
    "waterfall": "water",
    "grass": "vegetation",
    "tree": "vegetation",
    "plant": "vegetation",
    "flower": "vegetation",
    "field": "vegetation",
    "road": "ground",
    "earth": "ground",
    "sand": "ground",
    "sidewalk": "ground",
    "mountain": "ground",
    "rock": "ground",
    "house": "building",
    "skyscraper": "building",
    "tower": "building",
    "bridge": "building",
    "clouds": "sky",
}


def build_mask_stack(labels: np.ndarray, classes: Sequence[int]) -> LabelMaskStack:
    """One binary channel per class; channels partition the image."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label image must be 2-D, got shape {labels.shape}")
    classes = tuple(int(c) for c in classes)
    known = set(classes)
    present = np.unique(labels)
    for lab in present:
        if int(lab) not in known:
            ys, xs = np.nonzero(labels == lab)
            raise LabelError(
                f"label {int(lab)} at pixel ({int(ys[0])}, {int(xs[0])}) "
                f"is not in the class list"
            )
    channels = np.stack([(labels == c).astype(np.float64) for c in classes])
    return LabelMaskStack(channels, classes)


def merge_labels(labels: np.ndarray, table: MergeTable) -> np.ndarray:
    """Apply the merge mapping pixelwise; idempotent because merged ids map
    to themselves."""
    labels = np.asarray(labels)
    out = np.empty_like(labels)
    for lab in np.unique(labels):
        target = table.mapping.get(int(lab))
        if target is None:
            raise LabelError(f"label {table.name(int(lab))} has no merge entry")
        out[labels == lab] = target
    return out


def remap_orphans(
    input_labels: np.ndarray,
    style_labels: np.ndarray,
    preferences: Mapping[int, Sequence[int]],
    names: Mapping[int, str] | None = None,
) -> np.ndarray:
    """Replace input labels absent from the style image by the first
    preferred label that is present; the result's label set is a subset of
    the style's."""
    names = names or {}
    style_present = {int(v) for v in np.unique(style_labels)}
    out = np.asarray(input_labels).copy()
    for lab in np.unique(input_labels):
        lab = int(lab)
        if lab in style_present:
            continue
        replacement = next(
            (int(p) for p in preferences.get(lab, ()) if int(p) in style_present),
            None,
        )
        if replacement is None:
            raise LabelError(
                f"orphan label {names.get(lab, lab)} has no preferred "
                f"replacement present in the style image"
            )
        out[np.asarray(input_labels) == lab] = replacement
    return out


def _axis_boundaries(source: int, target: int) -> np.ndarray:
    return (np.arange(target + 1) * source) // target


def downsample_mask(stack: LabelMaskStack, target_h: int, target_w: int) -> LabelMaskStack:
    """Area-average pooling of every channel onto a target grid.

    Each target cell averages the source pixels in its preimage under the
    floor-partition of rows and columns, so each source pixel contributes
    to exactly one cell and per-pixel channel sums are preserved.
    """
    if target_h <= 0 or target_w <= 0:
        raise ValueError(f"target size {target_h}x{target_w} must be positive")
    if target_h > stack.height or target_w > stack.width:
        raise ValueError(
            f"target {target_h}x{target_w} exceeds source {stack.height}x{stack.width}"
        )
    rb = _axis_boundaries(stack.height, target_h)
    cb = _axis_boundaries(stack.width, target_w)
    areas = np.outer(np.diff(rb), np.diff(cb)).astype(np.float64)
    pooled = np.add.reduceat(stack.channels, rb[:-1], axis=1)
    pooled = np.add.reduceat(pooled, cb[:-1], axis=2)
    return LabelMaskStack(pooled / areas, stack.classes)


def all_ones_stack(height: int, width: int, class_id: int = 0) -> LabelMaskStack:
    """Single-channel stack covering everything (the unsegmented case)."""
    return LabelMaskStack(np.ones((1, height, width)), (class_id,))


# ---------------------------------------------------------------------------
# label-image ingestion (PNG + JSON color sidecar)


def read_color_table(sidecar_path) -> dict[tuple[int, int, int], str]:
    """Parse a {"#RRGGBB": "label"} sidecar into an RGB-tuple -> name map."""
    with open(sidecar_path) as fh:
        raw = json.load(fh)
    table = {}
    for key, name in raw.items():
        text = key.lstrip("#")
        if len(text) != 6:
            raise LabelError(f"bad color key {key!r} in {sidecar_path}")
        try:
            rgb = tuple(int(text[i : i + 2], 16) for i in (0, 2, 4))
        except ValueError:
            raise LabelError(f"bad color key {key!r} in {sidecar_path}") from None
        table[rgb] = str(name)
    if not table:
        raise LabelError(f"empty color table in {sidecar_path}")
    return table


def load_label_image(
    png_path, color_to_name: Mapping[tuple[int, int, int], str],
    name_to_id: Mapping[str, int],
) -> np.ndarray:
    """Decode a label PNG (RGB, RGBA or palette) into an id image."""
    with open(png_path, "rb") as fh:
        pixels, bit_depth = decode_png(fh.read(), allow_palette=True)
    if bit_depth != 8:
        raise LabelError(f"{png_path}: label PNGs must be 8-bit")
    rgb = pixels[:, :, :3]
    height, width, _ = rgb.shape
    flat = rgb.reshape(-1, 3)
    codes = (
        flat[:, 0].astype(np.int64) << 16
    ) | (flat[:, 1].astype(np.int64) << 8) | flat[:, 2].astype(np.int64)
    out = np.empty(height * width, dtype=np.int64)
    lookup = {}
    for (r, g, b), name in color_to_name.items():
        if name not in name_to_id:
            raise LabelError(f"label {name!r} missing from the label table")
        lookup[(r << 16) | (g << 8) | b] = name_to_id[name]
    unique_codes = np.unique(codes)
    for code in unique_codes:
        code = int(code)
        if code not in lookup:
            pixel = int(np.flatnonzero(codes == code)[0])
            raise LabelError(
                f"{png_path}: color #{code:06X} at pixel "
                f"({pixel // width}, {pixel % width}) is not in the sidecar"
            )
    for code, label in lookup.items():
        out[codes == code] = label
    return out.reshape(height, width)
