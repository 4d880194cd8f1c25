"""Matting Laplacian of the input image and the photorealism penalty.

The Laplacian entry for pixels i, j follows the closed-form matting
construction: summed over every window k containing both pixels,

    L_ij = sum_k  delta_ij - (1/|w|) * (1 + (I_i - mu_k)^T
               (Sigma_k + eps/|w| * E3)^(-1) (I_j - mu_k))

with per-window mean mu_k and biased 3x3 color covariance Sigma_k.
Windows are fully interior squares of side (2*radius + 1); border pixels
participate only through windows entirely inside the image. The penalty
is the quadratic form of each output channel against this matrix; its
gradient is 2 * L * v per channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import flatten_channel, require_image


@dataclass(frozen=True)
class MattingParams:
    """eps is the covariance regularizer, window_radius=1 means 3x3 windows."""

    eps: float = 1e-5
    window_radius: int = 1

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.window_radius < 1:
            raise ValueError(f"window_radius must be >= 1, got {self.window_radius}")


@dataclass(frozen=True)
class SparseSym:
    """Symmetric sparse matrix in compressed-row form.

    Column indices are sorted within each row and duplicate coordinates are
    merged at build time, so the representation of a given matrix is unique
    and bit-reproducible.
    """

    n: int
    row_offsets: np.ndarray  # int64, length n + 1
    col_indices: np.ndarray  # int64, length nnz
    values: np.ndarray  # float64, length nnz

    @property
    def nnz(self) -> int:
        return int(self.col_indices.size)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"vector of length {v.size} against matrix of size {self.n}")
        prod = self.values * v[self.col_indices]
        out = np.zeros(self.n)
        counts = np.diff(self.row_offsets)
        nonempty = counts > 0
        if prod.size:
            out[nonempty] = np.add.reduceat(prod, self.row_offsets[:-1][nonempty])
        return out

    def quadratic_form(self, v: np.ndarray) -> float:
        return float(np.dot(np.asarray(v, dtype=np.float64), self.matvec(v)))

    def row_sums(self) -> np.ndarray:
        return self.matvec(np.ones(self.n))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), np.diff(self.row_offsets))
        dense[rows, self.col_indices] = self.values
        return dense

    def save_triplets(self, path) -> None:
        """Debug dump: header "n nnz", then row-major "row col value" lines."""
        with open(path, "w") as fh:
            fh.write(f"{self.n} {self.nnz}\n")
            rows = np.repeat(np.arange(self.n), np.diff(self.row_offsets))
            for r, c, v in zip(rows, self.col_indices, self.values):
                fh.write(f"{r} {c} {v:.17g}\n")


def _coo_to_csr(n: int, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> SparseSym:
    """Sort by (row, col), merge duplicates by summation in that fixed order."""
    order = np.lexsort((cols, rows))
    r, c, v = rows[order], cols[order], vals[order]
    first = np.ones(r.size, dtype=bool)
    first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    starts = np.flatnonzero(first)
    merged = np.add.reduceat(v, starts)
    ur, uc = r[starts], c[starts]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(ur, minlength=n), out=offsets[1:])
    return SparseSym(
        n=n,
        row_offsets=offsets,
        col_indices=uc.astype(np.int64),
        values=merged.astype(np.float64),
    )


def _inv3x3(mats: np.ndarray) -> np.ndarray:
    """Batched closed-form (adjugate) inverse of (K, 3, 3) matrices."""
    a, b, c = mats[:, 0, 0], mats[:, 0, 1], mats[:, 0, 2]
    d, e, f = mats[:, 1, 0], mats[:, 1, 1], mats[:, 1, 2]
    g, h, i = mats[:, 2, 0], mats[:, 2, 1], mats[:, 2, 2]
    ca = e * i - f * h
    cb = c * h - b * i
    cc = b * f - c * e
    cd = f * g - d * i
    ce = a * i - c * g
    cf = c * d - a * f
    cg = d * h - e * g
    ch = b * g - a * h
    ci = a * e - b * d
    det = a * ca + b * cd + c * cg
    inv = np.empty_like(mats)
    inv[:, 0, 0], inv[:, 0, 1], inv[:, 0, 2] = ca, cb, cc
    inv[:, 1, 0], inv[:, 1, 1], inv[:, 1, 2] = cd, ce, cf
    inv[:, 2, 0], inv[:, 2, 1], inv[:, 2, 2] = cg, ch, ci
    inv /= det[:, None, None]
    return inv


def _check_window_fit(height: int, width: int, radius: int) -> None:
    side = 2 * radius + 1
    if height < side or width < side:
        raise ValueError(
            f"image {height}x{width} too small for window radius {radius} "
            f"(needs at least {side} pixels per side)"
        )


def build_matting_laplacian(
    image: np.ndarray, params: MattingParams = MattingParams()
) -> SparseSym:
    """Assemble the Matting Laplacian of an image as a SparseSym.

    Vectorized over windows: per-window color statistics feed the
    closed-form entry formula, and all (pixel, pixel) contributions are
    merged into CSR in a deterministic (row, col) order.
    """
    image = require_image(image)
    height, width, _ = image.shape
    _check_window_fit(height, width, params.window_radius)
    n = height * width
    side = 2 * params.window_radius + 1
    m = side * side

    idx = np.arange(n).reshape(height, width)
    win_idx = sliding_window_view(idx, (side, side)).reshape(-1, m)
    flat = image.reshape(n, 3)
    win_pix = flat[win_idx]  # (K, m, 3)

    mu = win_pix.mean(axis=1, keepdims=True)  # (K, 1, 3)
    cov = (
        np.einsum("kpi,kpj->kij", win_pix, win_pix) / m
        - np.einsum("kpi,kpj->kij", mu, mu)
    )
    reg = cov + (params.eps / m) * np.eye(3)
    inv = _inv3x3(reg)

    centered = win_pix - mu
    proj = np.einsum("kpi,kij->kpj", centered, inv)
    quad = np.einsum("kpj,kqj->kpq", proj, centered)  # (K, m, m)
    vals = np.eye(m) - (1.0 + quad) / m

    rows = np.broadcast_to(win_idx[:, :, None], quad.shape).reshape(-1)
    cols = np.broadcast_to(win_idx[:, None, :], quad.shape).reshape(-1)
    return _coo_to_csr(n, rows, cols, vals.reshape(-1))


def dense_oracle_laplacian(
    image: np.ndarray, params: MattingParams = MattingParams()
) -> np.ndarray:
    """Brute-force dense Laplacian for tiny images (N <= 400).

    Independent of the sparse path: explicit per-window loops and
    numpy.linalg.inv instead of strided batching and the adjugate formula.
    """
    image = require_image(image)
    height, width, _ = image.shape
    n = height * width
    if n > 400:
        raise ValueError(f"dense oracle limited to N <= 400 pixels, got {n}")
    _check_window_fit(height, width, params.window_radius)
    r = params.window_radius
    m = (2 * r + 1) ** 2
    flat = image.reshape(n, 3)
    dense = np.zeros((n, n))
    for cy in range(r, height - r):
        for cx in range(r, width - r):
            idx = [
                y * width + x
                for y in range(cy - r, cy + r + 1)
                for x in range(cx - r, cx + r + 1)
            ]
            pix = flat[idx]
            mu = pix.mean(axis=0)
            cov = pix.T @ pix / m - np.outer(mu, mu)
            inv = np.linalg.inv(cov + (params.eps / m) * np.eye(3))
            centered = pix - mu
            block = np.eye(m) - (1.0 + centered @ inv @ centered.T) / m
            dense[np.ix_(idx, idx)] += block
    return dense


def matting_penalty(laplacian: SparseSym, output: np.ndarray) -> float:
    """Photorealism penalty: sum over channels of V_c^T L V_c."""
    output = require_image(output, "output")
    if laplacian.n != output.shape[0] * output.shape[1]:
        raise ValueError(
            f"Laplacian size {laplacian.n} does not match image "
            f"{output.shape[0]}x{output.shape[1]}"
        )
    return sum(
        laplacian.quadratic_form(flatten_channel(output, c)) for c in range(3)
    )


def matting_gradient(laplacian: SparseSym, output: np.ndarray) -> np.ndarray:
    """Gradient of the penalty w.r.t. the output image: 2 L V_c per channel."""
    output = require_image(output, "output")
    height, width, _ = output.shape
    if laplacian.n != height * width:
        raise ValueError(
            f"Laplacian size {laplacian.n} does not match image {height}x{width}"
        )
    grad = np.empty_like(output)
    for c in range(3):
        grad[:, :, c] = (2.0 * laplacian.matvec(flatten_channel(output, c))).reshape(
            height, width
        )
    return grad
