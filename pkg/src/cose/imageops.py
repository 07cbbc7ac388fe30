"""Low-level image kernels shared by the autodiff engine, the transform
suite and the saliency methods: separable Gaussian blur (with its exact
adjoint), box smoothing, bilinear resizing and affine warping with
validity tracking.

All functions are pure and operate on plain numpy arrays.  Spatial axes
are rows then columns; images may carry trailing channel axes.
"""

from __future__ import annotations

import math

import numpy as np


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps covering +/- 3 sigma (float64)."""
    if sigma <= 0:
        return np.ones(1)
    radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _reflect_indices(n: int, radius: int) -> np.ndarray:
    # mirror without repeating the edge sample (numpy pad mode "reflect")
    idx = np.arange(-radius, n + radius)
    idx = np.abs(idx)
    over = idx > n - 1
    idx[over] = 2 * (n - 1) - idx[over]
    return idx


def _convolve1d_reflect(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(kernel) - 1) // 2
    if radius == 0:
        return x * kernel[0]
    if x.shape[axis] < radius + 1:
        raise ValueError(f"axis {axis} too short ({x.shape[axis]}) for kernel radius {radius}")
    pad = [(0, 0)] * x.ndim
    pad[axis] = (radius, radius)
    xp = np.pad(x, pad, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(xp, len(kernel), axis=axis)
    return win @ kernel.astype(x.dtype, copy=False)


def _convolve1d_reflect_adjoint(g: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Exact adjoint of :func:`_convolve1d_reflect` along one axis."""
    radius = (len(kernel) - 1) // 2
    if radius == 0:
        return g * kernel[0]
    n = g.shape[axis]
    gm = np.moveaxis(g, axis, 0)
    out = np.zeros_like(gm)
    idx = _reflect_indices(n, radius)
    kern = kernel.astype(g.dtype, copy=False)
    for k in range(len(kernel)):
        # forward read x_pad[i + k] = x[idx[i + k]]; adjoint scatters back
        np.add.at(out, idx[k : k + n], kern[k] * gm)
    return np.moveaxis(out, 0, axis)


def gaussian_blur(x: np.ndarray, sigma: float, spatial_axes=(0, 1)) -> np.ndarray:
    """Separable Gaussian blur with reflect padding.

    Constant inputs are reproduced exactly (the kernel is normalized and
    borders are mirrored, never zero-filled).
    """
    if sigma <= 0:
        return x.copy()
    kernel = gaussian_kernel1d(sigma)
    out = x
    for axis in spatial_axes:
        out = _convolve1d_reflect(out, kernel, axis)
    return out.astype(x.dtype, copy=False)


def gaussian_blur_adjoint(g: np.ndarray, sigma: float, spatial_axes=(0, 1)) -> np.ndarray:
    """Adjoint of :func:`gaussian_blur`; used for the blur gradient."""
    if sigma <= 0:
        return g.copy()
    kernel = gaussian_kernel1d(sigma)
    out = g
    for axis in reversed(spatial_axes):
        out = _convolve1d_reflect_adjoint(out, kernel, axis)
    return out.astype(g.dtype, copy=False)


def box_blur3(x: np.ndarray, spatial_axes=(0, 1)) -> np.ndarray:
    """3x3 box smoothing with reflect padding (kernel weight 1/9)."""
    kernel = np.full(3, 1.0 / 3.0)
    out = x
    for axis in spatial_axes:
        out = _convolve1d_reflect(out, kernel, axis)
    return out.astype(x.dtype, copy=False)


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (H, W) or (H, W, C) with bilinear sampling.

    Pixel centers follow the half-pixel convention, so resizing to the
    same shape is the identity.
    """
    h, w = x.shape[0], x.shape[1]
    if (out_h, out_w) == (h, w):
        return x.copy()
    rows = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    wr = (rows - r0).astype(np.float64)
    wc = (cols - c0).astype(np.float64)

    if x.ndim == 2:
        wr_ = wr[:, None]
        wc_ = wc[None, :]
    else:
        wr_ = wr[:, None, None]
        wc_ = wc[None, :, None]
    top = x[r0][:, c0] * (1 - wc_) + x[r0][:, c1] * wc_
    bot = x[r1][:, c0] * (1 - wc_) + x[r1][:, c1] * wc_
    out = top * (1 - wr_) + bot * wr_
    return out.astype(x.dtype, copy=False)


def rotation_matrix(degrees: float, shape: tuple[int, int]) -> np.ndarray:
    """2x3 matrix mapping pixel (row, col) to its rotated position about
    the image center; positive angles rotate content counter-clockwise."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(degrees)
    cos_t, sin_t = math.cos(th), math.sin(th)
    # (row, col) frame: row grows downward, so CCW content rotation is
    # [[cos, sin], [-sin, cos]] acting on (row - cy, col - cx)
    m = np.array(
        [
            [cos_t, sin_t, cy - cos_t * cy - sin_t * cx],
            [-sin_t, cos_t, cx + sin_t * cy - cos_t * cx],
        ],
        dtype=np.float64,
    )
    return m


def invert_affine(m: np.ndarray) -> np.ndarray:
    a = m[:, :2]
    b = m[:, 2]
    ai = np.linalg.inv(a)
    return np.concatenate([ai, (-ai @ b)[:, None]], axis=1)


def warp_affine(src: np.ndarray, matrix: np.ndarray, fill=0.0):
    """Sample ``src`` at ``matrix @ (row, col, 1)`` per output pixel with
    bilinear interpolation.

    Returns (out, valid) where ``valid`` marks output pixels whose source
    location (all four bilinear neighbors) lies inside the frame; invalid
    pixels receive ``fill`` (scalar or per-channel).
    """
    h, w = src.shape[0], src.shape[1]
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sr = matrix[0, 0] * rows + matrix[0, 1] * cols + matrix[0, 2]
    sc = matrix[1, 0] * rows + matrix[1, 1] * cols + matrix[1, 2]
    valid = (sr >= 0.0) & (sr <= h - 1.0) & (sc >= 0.0) & (sc <= w - 1.0)

    sr = np.clip(sr, 0.0, h - 1.0)
    sc = np.clip(sc, 0.0, w - 1.0)
    r0 = np.floor(sr).astype(np.intp)
    c0 = np.floor(sc).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    wr = sr - r0
    wc = sc - c0
    if src.ndim == 3:
        wr = wr[..., None]
        wc = wc[..., None]
    x = src.astype(np.float64, copy=False)
    top = x[r0, c0] * (1 - wc) + x[r0, c1] * wc
    bot = x[r1, c0] * (1 - wc) + x[r1, c1] * wc
    out = top * (1 - wr) + bot * wr

    fill_arr = np.asarray(fill, dtype=np.float64)
    if src.ndim == 3:
        out = np.where(valid[..., None], out, fill_arr)
    else:
        out = np.where(valid, out, fill_arr)
    return out.astype(src.dtype, copy=False), valid
