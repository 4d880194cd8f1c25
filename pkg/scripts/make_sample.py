"""Regenerate the bundled 64x64 sample pair (images, labels, sidecars).

The scene is synthetic but structured: a gradient sky, a textured
building with a window grid, and vegetation below, in two palettes
(daylight input, sunset style) with different geometry so class
proportions differ between the two images.

Usage: python scripts/make_sample.py [out_dir]
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from photostyle.image import save_png  # noqa: E402

INPUT_COLORS = {"#87CEEB": "sky", "#808080": "building", "#228B22": "grass"}
STYLE_COLORS = {"#FF8C00": "sky", "#404040": "building", "#9ACD32": "field"}


def _regions(height, width, horizon, rect):
    yy, xx = np.mgrid[0:height, 0:width]
    building = (
        (yy >= rect[0]) & (yy < rect[1]) & (xx >= rect[2]) & (xx < rect[3])
    )
    sky = (yy < horizon) & ~building
    ground = ~sky & ~building
    return sky, building, ground


def make_input_scene(height=64, width=64, seed=42):
    rng = np.random.default_rng(seed)
    sky, building, ground = _regions(height, width, 24, (16, 44, 20, 44))
    yy, xx = np.mgrid[0:height, 0:width]
    img = np.zeros((height, width, 3))
    t = yy / max(height - 1, 1)
    img[..., 0] = 0.45 + 0.25 * t
    img[..., 1] = 0.65 + 0.15 * t
    img[..., 2] = 0.92
    base = np.where((yy % 6 < 2) & (xx % 5 < 2), 0.2, 0.55)
    for c, v in enumerate((1.0, 0.97, 0.9)):
        img[..., c] = np.where(building, base * v, img[..., c])
    grass = np.stack(
        [0.18 + 0.05 * np.sin(xx / 3.0), 0.45 + 0.08 * np.sin(yy / 2.0), 0.15 * np.ones_like(t)],
        axis=-1,
    )
    img = np.where(ground[..., None], grass, img)
    img += rng.normal(scale=0.015, size=img.shape)
    return np.clip(img, 0.0, 1.0), (sky, building, ground)


def make_style_scene(height=64, width=64, seed=43):
    rng = np.random.default_rng(seed)
    sky, building, ground = _regions(height, width, 36, (22, 52, 8, 30))
    yy, xx = np.mgrid[0:height, 0:width]
    img = np.zeros((height, width, 3))
    t = yy / max(height - 1, 1)
    img[..., 0] = 0.95 - 0.35 * t
    img[..., 1] = 0.45 - 0.25 * t
    img[..., 2] = 0.30 - 0.10 * t
    lit = (yy % 6 < 2) & (xx % 5 < 2)
    for c, v in enumerate((0.95, 0.75, 0.25)):
        img[..., c] = np.where(building, np.where(lit, v, 0.12), img[..., c])
    field = np.stack(
        [0.35 + 0.05 * np.sin(xx / 4.0), 0.22 + 0.04 * np.sin(yy / 3.0), 0.10 * np.ones_like(t)],
        axis=-1,
    )
    img = np.where(ground[..., None], field, img)
    img += rng.normal(scale=0.015, size=img.shape)
    return np.clip(img, 0.0, 1.0), (sky, building, ground)


def _label_image(masks, colors):
    sky, building, ground = masks
    height, width = sky.shape
    img = np.zeros((height, width, 3))
    order = [sky, building, ground]
    for mask, color in zip(order, colors):
        rgb = [int(color[i : i + 2], 16) / 255.0 for i in (1, 3, 5)]
        img[mask] = rgb
    return img


def main(out_dir="sample"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    input_img, input_masks = make_input_scene()
    style_img, style_masks = make_style_scene()
    save_png(input_img, out / "input.png")
    save_png(style_img, out / "style.png")
    save_png(_label_image(input_masks, list(INPUT_COLORS)), out / "input_labels.png")
    save_png(_label_image(style_masks, list(STYLE_COLORS)), out / "style_labels.png")
    (out / "input_labels.json").write_text(json.dumps(INPUT_COLORS, indent=2) + "\n")
    (out / "style_labels.json").write_text(json.dumps(STYLE_COLORS, indent=2) + "\n")
    print(f"wrote sample assets to {out}/")


if __name__ == "__main__":
    main(*sys.argv[1:])
