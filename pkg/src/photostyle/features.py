"""Per-layer feature extraction and the patch-correspondence diagnostic.

The default extractor is a small deterministic CNN seeded from the run
config: stacked 3x3 stride-1 zero-padded convolutions with max(0, .)
nonlinearities and average-pool downsampling between stages. It stands
behind the same interface as externally computed features (FEAT1 files),
so genuine pre-trained activations can be dropped in for the loss terms
that do not need gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ExtractorError, FeatureFileError
from .image import image_to_planes, require_image

FEAT1_MAGIC = b"FEAT1\x00"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    filters: int
    downsample: int


# Mirrors the usual conv1_1..conv5_1 style taps plus the conv4_2 content tap.
DEFAULT_LAYERS: tuple[LayerSpec, ...] = (
    LayerSpec("conv1_1", 8, 1),
    LayerSpec("conv2_1", 16, 2),
    LayerSpec("conv3_1", 32, 4),
    LayerSpec("conv4_1", 64, 8),
    LayerSpec("conv4_2", 64, 8),
    LayerSpec("conv5_1", 64, 8),
)

DEFAULT_CONTENT_LAYER = "conv4_2"
DEFAULT_STYLE_LAYERS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1")
DEFAULT_CORRESPONDENCE_LAYER = "conv3_1"


@dataclass(frozen=True)
class ExtractorSpec:
    """kind is either "seeded-cnn" (deterministic random weights from seed)
    or "file" (precomputed FEAT1 features at path)."""

    kind: str = "seeded-cnn"
    seed: int = 0
    layers: tuple[LayerSpec, ...] = DEFAULT_LAYERS
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("seeded-cnn", "file"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        prev = 1
        for layer in self.layers:
            if layer.downsample < 1:
                raise ValueError(f"downsample factor of {layer.name} must be >= 1")
            if layer.downsample % prev or layer.downsample < prev:
                raise ValueError(
                    f"downsample factors must be non-decreasing multiples; "
                    f"{layer.name} has {layer.downsample} after {prev}"
                )
            prev = layer.downsample
        if self.kind == "file" and self.path is None:
            raise ValueError("file extractor requires a path")

    def layer_names(self) -> tuple[str, ...]:
        return tuple(layer.name for layer in self.layers)


@dataclass
class FeatureMap:
    """One layer's activations as an (n_filters, height*width) matrix."""

    layer_name: str
    n_filters: int
    height: int
    width: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (self.n_filters, self.height * self.width):
            raise ValueError(
                f"feature matrix for {self.layer_name} has shape "
                f"{self.matrix.shape}, expected "
                f"({self.n_filters}, {self.height * self.width})"
            )

    @property
    def spatial_size(self) -> int:
        return self.height * self.width


@dataclass
class LayerWeights:
    """Content weights alpha and style weights beta, both by layer name."""

    content: dict[str, float] = field(default_factory=dict)
    style: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for kind, table in (("content", self.content), ("style", self.style)):
            if any(v < 0 for v in table.values()):
                raise ValueError(f"{kind} weights must be >= 0")
            if not any(v > 0 for v in table.values()):
                raise ValueError(f"at least one {kind} weight must be positive")


# ---------------------------------------------------------------------------
# seeded CNN


_WEIGHT_CACHE: dict[ExtractorSpec, list[np.ndarray]] = {}


def _glorot_uniform(rng, filters, in_channels):
    fan_in = in_channels * 9
    fan_out = filters * 9
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(filters, in_channels, 3, 3))


def _layer_filters(spec: ExtractorSpec) -> list[np.ndarray]:
    cached = _WEIGHT_CACHE.get(spec)
    if cached is None:
        rng = np.random.default_rng(spec.seed)
        cached = []
        in_channels = 3
        for layer in spec.layers:
            cached.append(_glorot_uniform(rng, layer.filters, in_channels))
            in_channels = layer.filters
        _WEIGHT_CACHE[spec] = cached
    return cached


def _conv3x3(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))
    return np.einsum("fcij,chwij->fhw", w, windows, optimize=True)


def _conv3x3_input_grad(w: np.ndarray, dout: np.ndarray) -> np.ndarray:
    _, h, wd = dout.shape
    in_channels = w.shape[1]
    dpad = np.zeros((in_channels, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dpad[:, i : i + h, j : j + wd] += np.einsum(
                "fhw,fc->chw", dout, w[:, :, i, j], optimize=True
            )
    return dpad[:, 1 : 1 + h, 1 : 1 + wd]


def _avg_pool(x: np.ndarray, k: int) -> np.ndarray:
    c, h, w = x.shape
    th, tw = h // k, w // k
    if th == 0 or tw == 0:
        raise ExtractorError(f"image too small to downsample {h}x{w} by {k}")
    cropped = x[:, : th * k, : tw * k]
    return cropped.reshape(c, th, k, tw, k).mean(axis=(2, 4))


def _avg_pool_input_grad(shape: tuple[int, int, int], k: int, dout: np.ndarray) -> np.ndarray:
    c, h, w = shape
    th, tw = h // k, w // k
    dx = np.zeros(shape)
    spread = np.repeat(np.repeat(dout / (k * k), k, axis=1), k, axis=2)
    dx[:, : th * k, : tw * k] = spread
    return dx


def _forward_seeded(image: np.ndarray, spec: ExtractorSpec):
    """Run the CNN, returning all tap activations plus saved intermediates."""
    filters = _layer_filters(spec)
    x = image_to_planes(image)
    saved = []
    taps = {}
    current_ds = 1
    for layer, w in zip(spec.layers, filters):
        pool = layer.downsample // current_ds
        pre_pool_shape = x.shape
        if pool > 1:
            x = _avg_pool(x, pool)
        pre = _conv3x3(x, w)
        out = np.maximum(pre, 0.0)
        saved.append(
            {
                "pool": pool,
                "pre_pool_shape": pre_pool_shape,
                "conv_input": x,
                "relu_mask": pre > 0.0,
                "weights": w,
            }
        )
        taps[layer.name] = out
        x = out
        current_ds = layer.downsample
    return taps, saved


def _to_feature_map(name: str, act: np.ndarray) -> FeatureMap:
    f, h, w = act.shape
    return FeatureMap(name, f, h, w, act.reshape(f, h * w).copy())


def _check_layers(spec: ExtractorSpec, layers) -> None:
    known = set(spec.layer_names())
    for name in layers:
        if name not in known:
            raise ExtractorError(f"unknown layer {name!r}")


def extract_features(image: np.ndarray, spec: ExtractorSpec, layers) -> list[FeatureMap]:
    """Feature maps of the requested layers, in the requested order."""
    layers = list(layers)
    if spec.kind == "file":
        by_name = {fm.layer_name: fm for fm in load_feature_file(spec.path)}
        missing = [name for name in layers if name not in by_name]
        if missing:
            raise ExtractorError(
                f"feature file {spec.path} is missing layers {missing}"
            )
        return [by_name[name] for name in layers]
    _check_layers(spec, layers)
    image = require_image(image)
    taps, _ = _forward_seeded(image, spec)
    return [_to_feature_map(name, taps[name]) for name in layers]


def extract_features_with_vjp(image: np.ndarray, spec: ExtractorSpec, layers):
    """Like extract_features, plus a vector-Jacobian-product closure.

    The closure takes upstream gradients keyed by layer name (each shaped
    like that layer's feature matrix) and returns the gradient with respect
    to the image pixels, shape (H, W, 3).
    """
    if spec.kind == "file":
        raise ExtractorError("file-backed features do not provide gradients")
    layers = list(layers)
    _check_layers(spec, layers)
    image = require_image(image)
    taps, saved = _forward_seeded(image, spec)
    maps = [_to_feature_map(name, taps[name]) for name in layers]
    requested = set(layers)
    shapes = {name: taps[name].shape for name in taps}

    def vjp(upstream: dict[str, np.ndarray]) -> np.ndarray:
        unknown = set(upstream) - requested
        if unknown:
            raise ExtractorError(f"gradients supplied for unrequested layers {sorted(unknown)}")
        dx = None
        for layer, rec in zip(reversed(spec.layers), reversed(saved)):
            if dx is None:
                dx = np.zeros(shapes[layer.name])
            if layer.name in upstream:
                dx = dx + np.asarray(upstream[layer.name], dtype=np.float64).reshape(
                    shapes[layer.name]
                )
            dpre = dx * rec["relu_mask"]
            dconv_in = _conv3x3_input_grad(rec["weights"], dpre)
            if rec["pool"] > 1:
                dx = _avg_pool_input_grad(rec["pre_pool_shape"], rec["pool"], dconv_in)
            else:
                dx = dconv_in
        return np.moveaxis(dx, 0, 2).copy()

    return maps, vjp


def feature_spatial_size(image_shape: tuple[int, int], downsample: int) -> tuple[int, int]:
    """Predicted (height, width) of a layer's maps: floor division."""
    return image_shape[0] // downsample, image_shape[1] // downsample


# ---------------------------------------------------------------------------
# FEAT1 binary feature files


def write_feature_file(path, maps: list[FeatureMap]) -> None:
    with open(path, "wb") as fh:
        fh.write(FEAT1_MAGIC)
        fh.write(struct.pack("<I", len(maps)))
        for fm in maps:
            name = fm.layer_name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<III", fm.n_filters, fm.height, fm.width))
            fh.write(fm.matrix.astype("<f4").tobytes())


def load_feature_file(path) -> list[FeatureMap]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(FEAT1_MAGIC)] != FEAT1_MAGIC:
        raise FeatureFileError(f"{path}: bad magic (not a FEAT1 file)")
    pos = len(FEAT1_MAGIC)
    if pos + 4 > len(data):
        raise FeatureFileError(f"{path}: truncated layer count")
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if count == 0:
        raise FeatureFileError(f"{path}: no layers")
    maps = []
    for index in range(count):
        label = f"layer {index}"
        if pos + 2 > len(data):
            raise FeatureFileError(f"{path}: truncated name length for {label}")
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + name_len > len(data):
            raise FeatureFileError(f"{path}: truncated name for {label}")
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        label = f"layer {name!r}"
        if pos + 12 > len(data):
            raise FeatureFileError(f"{path}: truncated header for {label}")
        n_filters, height, width = struct.unpack_from("<III", data, pos)
        pos += 12
        if n_filters == 0 or height == 0 or width == 0:
            raise FeatureFileError(f"{path}: zero dimension in {label}")
        nbytes = n_filters * height * width * 4
        if pos + nbytes > len(data):
            raise FeatureFileError(f"{path}: truncated values for {label}")
        values = np.frombuffer(data, dtype="<f4", count=n_filters * height * width, offset=pos)
        pos += nbytes
        maps.append(
            FeatureMap(
                name,
                n_filters,
                height,
                width,
                values.astype(np.float64).reshape(n_filters, height * width),
            )
        )
    return maps


# ---------------------------------------------------------------------------
# patch correspondence (nearest style patch per output patch)


def _patch_matrix(fm: FeatureMap, patch: int) -> np.ndarray:
    """All patch vectors, row-major over top-left positions."""
    volume = fm.matrix.reshape(fm.n_filters, fm.height, fm.width)
    windows = sliding_window_view(volume, (patch, patch), axis=(1, 2))
    # (F, ph, pw, p, p) -> (ph, pw, F, p, p) -> (ph*pw, F*p*p)
    ordered = np.moveaxis(windows, 0, 2)
    ph, pw = ordered.shape[0], ordered.shape[1]
    return np.ascontiguousarray(ordered).reshape(ph * pw, -1), ph, pw


def patch_correspondence(
    out_feats: FeatureMap, style_feats: FeatureMap, patch: int = 3
) -> np.ndarray:
    """Color-coded nearest-style-patch map.

    Each output patch location gets, at its top-left pixel, the color
    (0, Y/height, X/width) of the L2-nearest style patch across all
    feature channels; ties resolve to the smallest (Y, X). Pixels that are
    not a patch top-left stay black.
    """
    if out_feats.n_filters != style_feats.n_filters:
        raise ValueError(
            f"filter counts differ: {out_feats.n_filters} vs {style_feats.n_filters}"
        )
    if patch > min(
        out_feats.height, out_feats.width, style_feats.height, style_feats.width
    ):
        raise ValueError(f"patch size {patch} exceeds a feature-map extent")
    queries, qh, qw = _patch_matrix(out_feats, patch)
    candidates, ch, cw = _patch_matrix(style_feats, patch)
    result = np.zeros((out_feats.height, out_feats.width, 3))
    for qi in range(queries.shape[0]):
        diffs = candidates - queries[qi]
        best = int(np.argmin(np.einsum("pd,pd->p", diffs, diffs)))
        sy, sx = divmod(best, cw)
        y, x = divmod(qi, qw)
        result[y, x, 1] = sy / style_feats.height
        result[y, x, 2] = sx / style_feats.width
    return result
