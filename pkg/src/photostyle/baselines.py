"""Global color-transfer baseline: match per-channel statistics in the
decorrelated lalphabeta space (log-LMS based)."""

from __future__ import annotations

import numpy as np

from .image import require_image

# RGB -> LMS from the standard statistics-transfer formulation; the return
# trip uses the numerically exact inverse rather than the published
# rounded matrix so that a no-op transfer reproduces the input.
_RGB_TO_LMS = np.array(
    [
        [0.3811, 0.5783, 0.0402],
        [0.1967, 0.7244, 0.0782],
        [0.0241, 0.1288, 0.8444],
    ]
)
_LMS_TO_RGB = np.linalg.inv(_RGB_TO_LMS)

_LOG_FLOOR = 1e-6  # guards log10 of zero LMS responses

_LAB_SCALE = np.diag([1.0 / np.sqrt(3.0), 1.0 / np.sqrt(6.0), 1.0 / np.sqrt(2.0)])
_LAB_MIX = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, -2.0], [1.0, -1.0, 0.0]])
_LOGLMS_TO_LAB = _LAB_SCALE @ _LAB_MIX
_LAB_TO_LOGLMS = np.linalg.inv(_LOGLMS_TO_LAB)

_ZERO_STD = 1e-12


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """Decorrelated lalphabeta coordinates of an RGB image."""
    image = require_image(image)
    lms = image @ _RGB_TO_LMS.T
    log_lms = np.log10(np.maximum(lms, _LOG_FLOOR))
    return log_lms @ _LOGLMS_TO_LAB.T


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    log_lms = np.asarray(lab, dtype=np.float64) @ _LAB_TO_LOGLMS.T
    lms = np.power(10.0, log_lms)
    return lms @ _LMS_TO_RGB.T


def lab_statistics(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population standard deviation in lalphabeta."""
    lab = rgb_to_lab(image)
    return lab.mean(axis=(0, 1)), lab.std(axis=(0, 1))


def reinhard_transfer(input_image: np.ndarray, style_image: np.ndarray) -> np.ndarray:
    """Shift and scale the input's lalphabeta channels to the style's
    statistics and convert back to RGB.

    The result is not clamped (values can leave [0, 1]; PNG saving clamps).
    Channels with zero variance pass through a mean shift only.
    """
    input_image = require_image(input_image, "input")
    style_image = require_image(style_image, "style")
    lab = rgb_to_lab(input_image)
    mean_in = lab.mean(axis=(0, 1))
    std_in = lab.std(axis=(0, 1))
    mean_style, std_style = lab_statistics(style_image)
    out = np.empty_like(lab)
    for c in range(3):
        centered = lab[:, :, c] - mean_in[c]
        if std_in[c] > _ZERO_STD:
            centered = centered * (std_style[c] / std_in[c])
        out[:, :, c] = centered + mean_style[c]
    return lab_to_rgb(out)
